//! Binary container shared by hierarchy checkpoints and transfer tensors: an
//! 8-byte little-endian header length, a JSON header, then complex entries as
//! little-endian `(re, im)` f64 pairs.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAX_HEADER: u64 = 1 << 30;

pub fn write_container<H: Serialize>(path: &Path, header: &H, data: &[C64]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for z in data {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<C64>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(Error::InvalidState(format!("container header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header = serde_json::from_slice(&json)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::InvalidState(format!("container data of {} bytes is not complex-aligned", bytes.len())));
    }
    let f = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
    let data = bytes.chunks_exact(16).map(|b| C64::new(f(&b[..8]), f(&b[8..]))).collect();
    Ok((header, data))
}
