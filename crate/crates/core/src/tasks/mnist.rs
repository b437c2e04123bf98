use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Batch, Episode, TaskMeta};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Loss;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

const GZIP_PREFIX: [u8; 2] = [0x1f, 0x8b];

/// Images as raw bytes, row-major `[n, rows, cols]`.
#[derive(Clone, Debug)]
pub struct MnistDataset {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    by_class: Vec<Vec<usize>>,
    pub synthetic: bool,
}

/// Meta-train pool (train file) and meta-test pool (test file).
#[derive(Clone, Debug)]
pub struct MnistSplit {
    pub train: MnistDataset,
    pub test: MnistDataset,
}

impl MnistDataset {
    pub fn new(images: Vec<u8>, labels: Vec<u8>, rows: usize, cols: usize, synthetic: bool) -> Result<Self> {
        if images.len() != labels.len() * rows * cols {
            return Err(Error::Consistency(format!(
                "{} image bytes for {} labels of {rows}x{cols}",
                images.len(),
                labels.len()
            )));
        }
        let mut by_class = vec![Vec::new(); 10];
        for (i, &l) in labels.iter().enumerate() {
            if l > 9 {
                return Err(Error::Format(format!("label {l} at index {i} is not a digit")));
            }
            by_class[l as usize].push(i);
        }
        Ok(Self { images, labels, rows, cols, by_class, synthetic })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn class_indices(&self, digit: u8) -> &[usize] {
        &self.by_class[digit as usize]
    }

    /// Image `i` scaled to [0, 1].
    pub fn image(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let p = self.pixels();
        self.images[i * p..(i + 1) * p].iter().map(|&b| b as f64 / 255.0)
    }

    /// Generated stand-in: one prototype of three Gaussian blobs per digit, plus
    /// pixel noise and a jitter of up to two pixels.
    pub fn synthetic(seed: u64, per_class: usize) -> Self {
        const SIDE: usize = 28;
        let mut proto_rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_d161_75);
        let prototypes: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                let blobs: Vec<(f64, f64, f64)> = (0..3)
                    .map(|_| (proto_rng.gen_range(6.0..22.0), proto_rng.gen_range(6.0..22.0), proto_rng.gen_range(2.0..4.0)))
                    .collect();
                (0..SIDE * SIDE)
                    .map(|p| {
                        let (r, c) = ((p / SIDE) as f64, (p % SIDE) as f64);
                        let v: f64 = blobs
                            .iter()
                            .map(|&(br, bc, s)| (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * s * s)).exp())
                            .sum();
                        v.min(1.0)
                    })
                    .collect()
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.2).expect("valid std");
        let mut images = Vec::with_capacity(10 * per_class * SIDE * SIDE);
        let mut labels = Vec::with_capacity(10 * per_class);
        for _ in 0..per_class {
            for (digit, proto) in prototypes.iter().enumerate() {
                let dr = rng.gen_range(-2i64..=2);
                let dc = rng.gen_range(-2i64..=2);
                for p in 0..SIDE * SIDE {
                    let r = (p / SIDE) as i64 - dr;
                    let c = (p % SIDE) as i64 - dc;
                    let base = if (0..SIDE as i64).contains(&r) && (0..SIDE as i64).contains(&c) {
                        proto[r as usize * SIDE + c as usize]
                    } else {
                        0.0
                    };
                    let v = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
                    images.push((v * 255.0).round() as u8);
                }
                labels.push(digit as u8);
            }
        }
        Self::new(images, labels, SIDE, SIDE, true).expect("consistent synthetic data")
    }
}

fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&GZIP_PREFIX) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated header at byte {at}")))
}

/// Returns `(pixels, n, rows, cols)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize, usize)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Format(format!(
            "image body has {} bytes, header promises {n}x{rows}x{cols}",
            body.len()
        )));
    }
    Ok((body.to_vec(), n, rows, cols))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("label body has {} bytes, header promises {n}", body.len())));
    }
    Ok(body.to_vec())
}

/// Reads an image/label IDX pair; either file may be gzip-compressed.
pub fn load_mnist_idx(image_path: &Path, label_path: &Path) -> Result<MnistDataset> {
    let images = maybe_gunzip(fs::read(image_path)?)?;
    let labels = maybe_gunzip(fs::read(label_path)?)?;
    let (pixels, n, rows, cols) = parse_idx_images(&images)?;
    let labels = parse_idx_labels(&labels)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!("{n} images but {} labels", labels.len())));
    }
    MnistDataset::new(pixels, labels, rows, cols, false)
}

fn find(dir: &Path, stem: &str) -> Option<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")].into_iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

/// Loads the standard four files from `dir`, accepting `.gz` variants.
pub fn load_mnist_dir(dir: &Path) -> Result<MnistSplit> {
    let pair = |img: &str, lbl: &str| -> Result<MnistDataset> {
        let missing = |s: &str| {
            Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{s} not found in {}", dir.display())))
        };
        let i = find(dir, img).ok_or_else(|| missing(img))?;
        let l = find(dir, lbl).ok_or_else(|| missing(lbl))?;
        load_mnist_idx(&i, &l)
    };
    Ok(MnistSplit {
        train: pair("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        test: pair("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    })
}

/// Episode for digits `[d0, d1]` carrying labels 0 and 1. Images are chosen per
/// digit independent of the label assignment, so swapping the pair yields the
/// same inputs with flipped labels.
pub fn build_mnist_episode(ds: &MnistDataset, rng: &mut impl Rng, digits: [u8; 2], k_query: usize) -> Result<Episode> {
    if digits[0] == digits[1] || digits.iter().any(|&d| d > 9) {
        return Err(Error::Contract(format!("digit pair {digits:?} must be two distinct digits")));
    }
    let mut ordered = digits;
    ordered.sort_unstable();
    let mut picks = Vec::with_capacity(2);
    for d in ordered {
        let pool = ds.class_indices(d);
        if pool.len() < 1 + k_query {
            return Err(Error::Sampling(format!("digit {d} has {} images, need {}", pool.len(), 1 + k_query)));
        }
        picks.push(pool.choose_multiple(rng, 1 + k_query).copied().collect::<Vec<_>>());
    }
    let label_of = |d: u8| if d == digits[0] { 0.0 } else { 1.0 };
    let p = ds.pixels();
    let batch = |range: std::ops::Range<usize>| -> Result<Batch> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for j in range.clone() {
            for (d, idx) in ordered.iter().zip(&picks) {
                x.extend(ds.image(idx[j]));
                y.push(label_of(*d));
            }
        }
        Ok(Batch { x: Tensor::new(vec![y.len(), p], x)?, y: Tensor::vector(y) })
    };
    let support = batch(0..1)?;
    let query = batch(1..1 + k_query)?;
    Ok(Episode { support, query, meta: TaskMeta::Mnist { digits }, sign: 1.0, loss: Loss::Ce })
}

/// Two distinct digits in random label order; 1 support and `k_query` query images per class.
pub fn sample_mnist_episode(ds: &MnistDataset, rng: &mut impl Rng, k_query: usize) -> Result<Episode> {
    let eligible: Vec<u8> = (0..10u8).filter(|&d| ds.class_indices(d).len() > k_query).collect();
    if eligible.len() < 2 {
        return Err(Error::Sampling(format!("fewer than 2 digits with {} images", 1 + k_query)));
    }
    let chosen: Vec<u8> = eligible.choose_multiple(rng, 2).copied().collect();
    let mut digits = [chosen[0], chosen[1]];
    if rng.gen_bool(0.5) {
        digits.swap(0, 1);
    }
    build_mnist_episode(ds, rng, digits, k_query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(n: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(body);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(LABEL_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn parses_tiny_idx() {
        let bytes = idx_images(2, 2, 2, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let (px, n, r, c) = parse_idx_images(&bytes).unwrap();
        assert_eq!((n, r, c), (2, 2, 2));
        assert_eq!(px, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(parse_idx_labels(&idx_labels(&[3, 9])).unwrap(), vec![3, 9]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = idx_images(1, 2, 2, &[0; 4]);
        bytes[3] = 0x01;
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format(_))));
        let short = idx_images(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_idx_images(&short), Err(Error::Format(_))));
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::Format(_))));
    }

    #[test]
    fn count_mismatch_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("i");
        let lbl = dir.path().join("l");
        fs::write(&img, idx_images(2, 1, 1, &[0, 255])).unwrap();
        fs::write(&lbl, idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(load_mnist_idx(&img, &lbl), Err(Error::Consistency(_))));
    }

    #[test]
    fn gzip_input_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let gz = |bytes: &[u8]| {
            let mut e = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
            e.write_all(bytes).unwrap();
            e.finish().unwrap()
        };
        let img = dir.path().join("i.gz");
        let lbl = dir.path().join("l");
        fs::write(&img, gz(&idx_images(2, 1, 2, &[0, 255, 51, 102]))).unwrap();
        fs::write(&lbl, idx_labels(&[4, 7])).unwrap();
        let ds = load_mnist_idx(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image(1).collect::<Vec<_>>(), vec![0.2, 0.4]);
        assert!(!ds.synthetic);
    }

    #[test]
    fn episode_shapes_and_label_swap() {
        let ds = MnistDataset::synthetic(1, 8);
        let ep = build_mnist_episode(&ds, &mut ChaCha8Rng::seed_from_u64(2), [3, 8], 5).unwrap();
        assert_eq!(ep.support.x.shape(), &[2, 784]);
        assert_eq!(ep.query.x.shape(), &[10, 784]);
        assert!(ep.support.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let swapped = build_mnist_episode(&ds, &mut ChaCha8Rng::seed_from_u64(2), [8, 3], 5).unwrap();
        assert_eq!(swapped.query.x, ep.query.x);
        for (a, b) in swapped.query.y.data().iter().zip(ep.query.y.data()) {
            assert_eq!(*a, 1.0 - b);
        }
    }

    #[test]
    fn sampler_needs_enough_images() {
        let ds = MnistDataset::synthetic(1, 3);
        assert!(matches!(sample_mnist_episode(&ds, &mut ChaCha8Rng::seed_from_u64(0), 5), Err(Error::Sampling(_))));
        let ep = sample_mnist_episode(&ds, &mut ChaCha8Rng::seed_from_u64(0), 2).unwrap();
        let TaskMeta::Mnist { digits } = ep.meta else { panic!() };
        assert_ne!(digits[0], digits[1]);
    }
}
