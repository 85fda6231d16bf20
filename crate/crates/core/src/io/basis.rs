//! A fitted mode-2 basis on disk: `manifest.txt` plus f64 bundles for the
//! basis matrix (row-major), the centring mean and the spectrum.

use std::fs;
use std::path::Path;

use super::bundle::{read_tensor, write_tensor, Dtype};
use super::config::KvFile;
use super::fmt_real;
use crate::error::{Error, Result};
use crate::mpca::ModeBasis;
use crate::tensor::{Matrix, Tensor3};

fn flat(v: &[f64]) -> Result<Tensor3> {
    Tensor3::from_vec((1, 1, v.len()), v.to_vec())
}

pub fn write_basis(dir: &Path, b: &ModeBasis) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = format!(
        "format = ugwt-basis\ni2 = {}\np2 = {}\nq_percent = {}\nretained_fraction = {}\nfingerprint = {:016x}\n",
        b.i2(),
        b.p2(),
        fmt_real(b.q_percent),
        fmt_real(b.retained_fraction),
        b.fingerprint()
    );
    let mp = dir.join("manifest.txt");
    fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
    write_tensor(&dir.join("basis.ugwt"), &flat(b.basis.as_slice())?, Dtype::F64)?;
    write_tensor(&dir.join("mean.ugwt"), &flat(&b.mean)?, Dtype::F64)?;
    write_tensor(&dir.join("spectrum.ugwt"), &flat(&b.spectrum)?, Dtype::F64)
}

pub fn read_basis(dir: &Path) -> Result<ModeBasis> {
    let mut kv = KvFile::read(&dir.join("manifest.txt"))?;
    if kv.required("format")? != "ugwt-basis" {
        return Err(Error::Format(format!("{} is not a basis directory", dir.display())));
    }
    let i2 = kv.usize_or("i2", 0)?;
    let p2 = kv.usize_or("p2", 0)?;
    let q_percent = kv.f64_required("q_percent")?;
    let retained_fraction = kv.f64_required("retained_fraction")?;
    let fingerprint = kv.required("fingerprint")?;
    kv.finish()?;
    let basis = Matrix::from_vec(i2, p2, read_tensor(&dir.join("basis.ugwt"))?.into_vec())
        .map_err(|e| Error::Format(e.to_string()))?;
    let mean = read_tensor(&dir.join("mean.ugwt"))?.into_vec();
    let spectrum = read_tensor(&dir.join("spectrum.ugwt"))?.into_vec();
    if mean.len() != i2 || spectrum.len() < p2 {
        return Err(Error::Format("basis files disagree with the manifest".into()));
    }
    let b = ModeBasis {
        basis,
        spectrum,
        mean,
        retained_fraction,
        q_percent,
    };
    if format!("{:016x}", b.fingerprint()) != fingerprint {
        return Err(Error::Format("basis fingerprint mismatch".into()));
    }
    Ok(b)
}
