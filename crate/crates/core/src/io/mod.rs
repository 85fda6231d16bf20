//! On-disk formats: tensor bundles, run configuration files, model checkpoints
//! and report text.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::ExperimentReport;

pub mod basis;
pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod dataset;

pub use basis::{read_basis, write_basis};
pub use bundle::{decode_tensor, encode_tensor, read_tensor, write_tensor, BundleHeader, Dtype};
pub use checkpoint::{decode_model, encode_model, load_model, save_model};
pub use config::{KvFile, RunConfig, SynthConfig};
pub use dataset::{read_dataset, write_dataset};

/// Real number as text with 17 significant digits; infinities render as `inf`.
pub fn fmt_real(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_real(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

/// Writes `report.csv`, `report.txt`, `predictions.csv` and `stages.csv` into `dir`.
pub fn write_report(dir: &Path, r: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in [
        ("report.csv", r.to_csv()),
        ("report.txt", r.to_text()),
        ("predictions.csv", r.predictions_csv()),
        ("stages.csv", r.stage_log()),
    ] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
