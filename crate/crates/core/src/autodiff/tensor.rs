use serde::{Deserialize, Serialize};

use crate::error::{structural, Error, Result};

/// Dense row-major array of `f64` values.
///
/// A `Tensor` is a plain value: it carries no autodiff state and is `Send + Sync`,
/// so parameter snapshots can be shared freely between worker threads. Values that
/// participate in differentiation live on a [`Tape`](super::Tape) as [`Var`](super::Var)s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Trailing-dimension broadcast of two shapes; size-1 dimensions expand.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return structural(format!("cannot broadcast {a:?} with {b:?}")),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (zero along broadcast dimensions).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Calls `f(out_index, src_index)` for every element of `out`, where `src_index`
/// is the flat position of the broadcast source element.
fn for_each_broadcast(src: &[usize], out: &[usize], mut f: impl FnMut(usize, usize)) {
    let bs = broadcast_strides(src, out);
    let n = numel(out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let mut src_pos = 0usize;
    for o in 0..n {
        f(o, src_pos);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src_pos += bs[d];
            if idx[d] < out[d] {
                break;
            }
            src_pos -= bs[d] * idx[d];
            idx[d] = 0;
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return structural(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                numel(&shape),
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; numel(shape)] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => structural(format!("item() on tensor of shape {:?}", self.shape)),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return structural(format!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        Ok(Self { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub(crate) fn zip_broadcast(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Self { shape: self.shape.clone(), data });
        }
        if other.len() == 1 && other.rank() <= self.rank() {
            let b = other.data[0];
            return Ok(self.map(|a| f(a, b)));
        }
        if self.len() == 1 && self.rank() <= other.rank() {
            let a = self.data[0];
            return Ok(other.map(|b| f(a, b)));
        }
        let out = broadcast_shape(&self.shape, &other.shape)?;
        let mut data = vec![0.0; numel(&out)];
        let mut a_idx = vec![0usize; data.len()];
        for_each_broadcast(&self.shape, &out, |o, s| a_idx[o] = s);
        for_each_broadcast(&other.shape, &out, |o, s| {
            data[o] = f(self.data[a_idx[o]], other.data[s]);
        });
        Ok(Self { shape: out, data })
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let out = broadcast_shape(&self.shape, shape)?;
        if out != shape {
            return structural(format!("cannot broadcast {:?} to {:?}", self.shape, shape));
        }
        let mut data = vec![0.0; numel(shape)];
        for_each_broadcast(&self.shape, shape, |o, s| data[o] = self.data[s]);
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Sums over broadcast dimensions so the result has `shape`; the inverse of
    /// [`Tensor::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        if broadcast_shape(shape, &self.shape)? != self.shape {
            return structural(format!("cannot sum {:?} down to {:?}", self.shape, shape));
        }
        let mut data = vec![0.0; numel(shape)];
        for_each_broadcast(shape, &self.shape, |o, s| data[s] += self.data[o]);
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = match self.shape.as_slice() {
            [m, k] => (*m, *k),
            _ => return structural(format!("matmul lhs must be 2-D, got {:?}", self.shape)),
        };
        let (k2, n) = match other.shape.as_slice() {
            [k2, n] => (*k2, *n),
            _ => return structural(format!("matmul rhs must be 2-D, got {:?}", other.shape)),
        };
        if k != k2 {
            return structural(format!("matmul inner dims differ: {:?} x {:?}", self.shape, other.shape));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { shape: vec![m, n], data: out })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = match self.shape.as_slice() {
            [m, n] => (*m, *n),
            _ => return structural(format!("transpose needs a 2-D tensor, got {:?}", self.shape)),
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self { shape: vec![n, m], data: out })
    }

    pub fn sum_all(&self) -> Self {
        Self::scalar(self.data.iter().sum())
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return structural(format!("axis {axis} out of range for {:?}", self.shape));
        }
        let mut keep = self.shape.clone();
        keep[axis] = 1;
        let summed = self.sum_to(&keep)?;
        let mut out = self.shape.clone();
        out.remove(axis);
        summed.reshape(&out)
    }

    /// Row-wise `log Σ exp` of a 2-D tensor, shifted by the row max for stability.
    pub fn logsumexp_rows(&self) -> Result<Self> {
        let (m, n) = match self.shape.as_slice() {
            [m, n] if *n > 0 => (*m, *n),
            _ => return structural(format!("logsumexp_rows needs [m, n>0], got {:?}", self.shape)),
        };
        let data = (0..m)
            .map(|i| {
                let row = &self.data[i * n..(i + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
            })
            .collect();
        Ok(Self { shape: vec![m], data })
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Structural("concat of zero tensors".into()))?;
        if first.rank() == 0 {
            return structural("concat needs tensors of rank >= 1");
        }
        let trailing = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() == 0 || &p.shape[1..] != trailing {
                return structural(format!("concat trailing dims differ: {:?} vs {:?}", first.shape, p.shape));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(trailing);
        Ok(Self { shape, data })
    }

    /// Gathers rows (entries along axis 0).
    pub fn index_select(&self, indices: &[usize]) -> Result<Self> {
        if self.rank() == 0 {
            return structural("index_select on a rank-0 tensor");
        }
        let rows = self.shape[0];
        let width = self.len() / rows.max(1);
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= rows {
                return structural(format!("index {i} out of range for {rows} rows"));
            }
            data.extend_from_slice(&self.data[i * width..(i + 1) * width]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Self { shape, data })
    }

    /// Adds row `k` of `self` into row `indices[k]` of a zero tensor with `rows` rows.
    pub fn scatter_rows(&self, indices: &[usize], rows: usize) -> Result<Self> {
        if self.rank() == 0 || self.shape[0] != indices.len() {
            return structural(format!("scatter_rows: {} indices for shape {:?}", indices.len(), self.shape));
        }
        let width = if indices.is_empty() { numel(&self.shape[1..]) } else { self.len() / indices.len() };
        let mut data = vec![0.0; rows * width];
        for (k, &i) in indices.iter().enumerate() {
            if i >= rows {
                return structural(format!("index {i} out of range for {rows} rows"));
            }
            for j in 0..width {
                data[i * width + j] += self.data[k * width + j];
            }
        }
        let mut shape = self.shape.clone();
        shape[0] = rows;
        Ok(Self { shape, data })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape(&[2, 1], &[1, 4]).unwrap(), vec![2, 4]);
        assert_eq!(broadcast_shape(&[], &[5]).unwrap(), vec![5]);
        assert!(broadcast_shape(&[2, 3], &[2]).is_err());
    }

    #[test]
    fn broadcast_and_sum_to_are_adjoint_shapes() {
        let col = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let wide = col.broadcast_to(&[2, 3]).unwrap();
        assert_eq!(wide.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let back = wide.sum_to(&[2, 1]).unwrap();
        assert_eq!(back.data(), &[3.0, 6.0]);
        let row = wide.sum_to(&[3]).unwrap();
        assert_eq!(row.data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn general_broadcast_product() {
        let a = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = a.zip_broadcast(&b, |x, y| x * y).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[10.0, 20.0, 30.0, 20.0, 40.0, 60.0]);
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&v).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(a.transpose().unwrap().data(), &[1.0, 3.0, 2.0, 4.0]);
        assert!(a.matmul(&Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn stable_scalar_helpers() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn scatter_inverts_select() {
        let t = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let picked = t.index_select(&[2, 0, 2]).unwrap();
        assert_eq!(picked.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let back = picked.scatter_rows(&[2, 0, 2], 3).unwrap();
        assert_eq!(back.data(), &[1.0, 2.0, 0.0, 0.0, 10.0, 12.0]);
    }
}
