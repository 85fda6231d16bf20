//! Binary tensor files: `UGWT`, u16 version, u8 dtype, u8 ndims, ndims x u32 dims,
//! then the slice-major payload, all little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const MAGIC: &[u8; 4] = b"UGWT";
pub const VERSION: u16 = 1;

/// Element encoding of the payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            _ => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleHeader {
    pub version: u16,
    pub dtype: Dtype,
    pub dims: Vec<u32>,
}

impl BundleHeader {
    pub fn byte_len(&self) -> usize {
        8 + 4 * self.dims.len()
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product::<usize>() * self.dtype.width()
    }
}

fn header_bytes(h: &BundleHeader) -> Vec<u8> {
    let mut out = Vec::with_capacity(h.byte_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&h.version.to_le_bytes());
    out.push(h.dtype as u8);
    out.push(h.dims.len() as u8);
    for d in &h.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn parse_header(bytes: &[u8]) -> Result<BundleHeader> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a UGWT bundle (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported bundle version {version}")));
    }
    let dtype = Dtype::from_code(bytes[6])?;
    let ndims = bytes[7] as usize;
    if !(1..=3).contains(&ndims) {
        return Err(Error::Format(format!("bundle has {ndims} dims, expected 1 to 3")));
    }
    if bytes.len() < 8 + 4 * ndims {
        return Err(Error::Format("truncated bundle header".into()));
    }
    let dims = (0..ndims)
        .map(|i| {
            let o = 8 + 4 * i;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
        })
        .collect();
    Ok(BundleHeader { version, dtype, dims })
}

/// Serialises a tensor; `F32` rounds each value to the nearest f32.
pub fn encode_tensor(t: &Tensor3, dtype: Dtype) -> Result<Vec<u8>> {
    let (a, b, c) = t.dims();
    let dims = [a, b, c]
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::shape(format!("dimension {d} exceeds u32"))))
        .collect::<Result<Vec<u32>>>()?;
    let h = BundleHeader {
        version: VERSION,
        dtype,
        dims,
    };
    let mut out = header_bytes(&h);
    out.reserve(h.payload_len());
    match dtype {
        Dtype::F32 => t.as_slice().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        Dtype::F64 => t.as_slice().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

/// Fewer than 3 dims are padded with leading ones.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor3> {
    let h = parse_header(bytes)?;
    let body = &bytes[h.byte_len()..];
    if body.len() != h.payload_len() {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {}",
            body.len(),
            h.payload_len()
        )));
    }
    let data: Vec<f64> = match h.dtype {
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    let mut d = [1usize; 3];
    for (slot, v) in d[3 - h.dims.len()..].iter_mut().zip(&h.dims) {
        *slot = *v as usize;
    }
    Tensor3::from_vec((d[0], d[1], d[2]), data)
}

pub fn write_tensor(path: &Path, t: &Tensor3, dtype: Dtype) -> Result<()> {
    fs::write(path, encode_tensor(t, dtype)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor3> {
    decode_tensor(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
