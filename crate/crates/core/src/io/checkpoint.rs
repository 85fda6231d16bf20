//! Model checkpoints: `UGWC`, u16 version, u32 manifest length, the UTF-8
//! manifest (one `layer`, one `frozen` and any number of `epoch` lines), then per
//! layer the weight, bias, running mean and running variance arrays, each as a
//! u32 length followed by little-endian f64 values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{fmt_real, parse_real};
use crate::error::{Error, Result};
use crate::nn::{EpochRecord, LayerParams, LayerSpec, ModelSpec, TrainedModel};

pub const MAGIC: &[u8; 4] = b"UGWC";
pub const VERSION: u16 = 1;

pub fn encode_model(m: &TrainedModel) -> Vec<u8> {
    let mut manifest = String::new();
    for l in &m.spec.layers {
        let _ = writeln!(manifest, "layer {}", l.encode());
    }
    let bits: String = m.frozen.iter().map(|&f| if f { '1' } else { '0' }).collect();
    let _ = writeln!(manifest, "frozen {bits}");
    for h in &m.history {
        let _ = writeln!(
            manifest,
            "epoch {} {} {} {}",
            h.epoch,
            fmt_real(h.lr),
            fmt_real(h.train_loss),
            fmt_real(h.val_loss)
        );
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for p in &m.params {
        for arr in [&p.weight, &p.bias, &p.running_mean, &p.running_var] {
            out.extend_from_slice(&(arr.len() as u32).to_le_bytes());
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too long".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a UGWC checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let manifest = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let mut layers = Vec::new();
    let mut frozen = None;
    let mut history = Vec::new();
    for line in manifest.lines() {
        let bad = || Error::Format(format!("bad manifest line `{line}`"));
        let (tag, rest) = line.split_once(' ').ok_or_else(bad)?;
        match tag {
            "layer" => layers.push(LayerSpec::decode(rest)?),
            "frozen" => frozen = Some(rest.chars().map(|c| c == '1').collect::<Vec<bool>>()),
            "epoch" => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 4 {
                    return Err(bad());
                }
                history.push(EpochRecord {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    lr: parse_real(f[1]).ok_or_else(bad)?,
                    train_loss: parse_real(f[2]).ok_or_else(bad)?,
                    val_loss: parse_real(f[3]).ok_or_else(bad)?,
                });
            }
            _ => return Err(bad()),
        }
    }
    let spec = ModelSpec::new(layers)?;
    let mut params = Vec::with_capacity(spec.layers.len());
    for _ in 0..spec.layers.len() {
        params.push(LayerParams {
            weight: r.f64s()?,
            bias: r.f64s()?,
            running_mean: r.f64s()?,
            running_var: r.f64s()?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let frozen = frozen.ok_or_else(|| Error::Format("manifest lacks a frozen line".into()))?;
    let mut m = TrainedModel::from_parts(spec, params, frozen).map_err(|e| match e {
        Error::Shape(msg) => Error::Format(msg),
        other => other,
    })?;
    m.history = history;
    Ok(m)
}

pub fn save_model(path: &Path, m: &TrainedModel) -> Result<()> {
    fs::write(path, encode_model(m)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
