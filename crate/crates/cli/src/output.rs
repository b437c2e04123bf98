use std::fs;
use std::path::Path;

use serde::Serialize;
use wormhole_core::meta_trainer::EpochRecord;

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes one CSV row per record, with a header derived from `T`'s fields.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Columns of `curves.csv`; eval fields are empty on epochs without an evaluation.
#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_error: Option<f64>,
    pub c_mean: f64,
    pub c_min: f64,
    pub c_max: f64,
}

impl From<&EpochRecord> for CurveRow {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            train_loss: r.train_loss,
            eval_loss: r.eval_loss,
            eval_error: r.eval_error,
            c_mean: r.c_mean,
            c_min: r.c_min,
            c_max: r.c_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let rows = vec![
            CurveRow { epoch: 0, train_loss: 0.1 + 0.2, eval_loss: None, eval_error: None, c_mean: -1e-300, c_min: -2.5, c_max: 1.0 / 3.0 },
            CurveRow { epoch: 1, train_loss: 5e-324, eval_loss: Some(0.7), eval_error: Some(0.25), c_mean: 0.0, c_min: 0.0, c_max: 0.0 },
        ];
        write_csv(&path, &rows).unwrap();
        let first = fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("epoch,train_loss,eval_loss,eval_error,c_mean,c_min,c_max\n"));
        let back: Vec<CurveRow> = csv::Reader::from_path(&path).unwrap().deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(back, rows);
        write_csv(&path, &back).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), first);
    }
}
