//! A dataset on disk is a directory holding `manifest.txt`, `images.ugwt` and
//! `labels.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::bundle::{read_tensor, write_tensor, Dtype};
use super::config::KvFile;
use super::{fmt_real, parse_real};
use crate::error::{Error, Result};
use crate::pipeline::{DomainDataset, Stage};
use crate::signal::Network;

pub const MANIFEST: &str = "manifest.txt";
pub const IMAGES: &str = "images.ugwt";
pub const LABELS: &str = "labels.csv";

pub fn labels_csv(ds: &DomainDataset) -> String {
    let mut out = String::from("index,group,x_mm,y_mm\n");
    for (k, ((x, y), g)) in ds.labels.iter().zip(&ds.groups).enumerate() {
        let _ = writeln!(out, "{k},{g},{},{}", fmt_real(*x), fmt_real(*y));
    }
    out
}

fn parse_labels(text: &str) -> Result<(Vec<(f64, f64)>, Vec<u32>)> {
    let mut lines = text.lines();
    if lines.next() != Some("index,group,x_mm,y_mm") {
        return Err(Error::Format("labels.csv header missing".into()));
    }
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (k, line) in lines.filter(|l| !l.is_empty()).enumerate() {
        let bad = || Error::Format(format!("bad labels row `{line}`"));
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 4 || c[0].parse::<usize>().ok() != Some(k) {
            return Err(bad());
        }
        groups.push(c[1].parse().map_err(|_| bad())?);
        labels.push((parse_real(c[2]).ok_or_else(bad)?, parse_real(c[3]).ok_or_else(bad)?));
    }
    Ok((labels, groups))
}

pub fn write_dataset(dir: &Path, ds: &DomainDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (i1, i2, i3) = ds.images.dims();
    let manifest = format!(
        "format = ugwt-dataset\nmaterial = {}\nnetwork = {}\nstage = {}\ncount = {i3}\nrows = {i1}\ncols = {i2}\n",
        ds.material,
        ds.network.as_str(),
        ds.stage.as_str()
    );
    let put = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    put(MANIFEST, manifest)?;
    put(LABELS, labels_csv(ds))?;
    write_tensor(&dir.join(IMAGES), &ds.images, Dtype::F32)
}

pub fn read_dataset(dir: &Path) -> Result<DomainDataset> {
    let mp = dir.join(MANIFEST);
    let mut kv = KvFile::parse(&fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?)?;
    if kv.required("format")? != "ugwt-dataset" {
        return Err(Error::Format(format!("{} is not a dataset manifest", mp.display())));
    }
    let material = kv.required("material")?;
    let network = Network::parse(&kv.required("network")?)?;
    let stage = Stage::parse(&kv.required("stage")?)?;
    let dims = (kv.usize_or("rows", 0)?, kv.usize_or("cols", 0)?, kv.usize_or("count", 0)?);
    kv.finish()?;
    let images = read_tensor(&dir.join(IMAGES))?;
    if images.dims() != dims {
        return Err(Error::Format(format!(
            "manifest says {dims:?} but images are {:?}",
            images.dims()
        )));
    }
    let lp = dir.join(LABELS);
    let (labels, groups) = parse_labels(&fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?)?;
    DomainDataset::new(images, labels, groups, &material, network, stage)
}
