//! Flat binary parameter checkpoints.
//!
//! Layout: an 8-byte little-endian header length `h`, then `h` bytes of JSON
//! index (`{"tensors":[{"name","shape","offset","len"}]}`, offsets counted in
//! f64 elements from the start of the payload), then the payload as
//! little-endian f64 values. Tensors appear in name order, so identical
//! parameters always produce identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Index {
    tensors: Vec<Entry>,
}

pub fn write_checkpoint<W: Write>(params: &ParamStore, out: W) -> Result<()> {
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        tensors.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
    }
    let header = serde_json::to_vec(&Index { tensors })?;
    let mut out = BufWriter::new(out);
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for (_, t) in params.iter() {
        for &x in t.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Loads every tensor as a tracked parameter with a zeroed gradient.
pub fn read_checkpoint<R: Read>(input: R) -> Result<ParamStore> {
    let mut input = BufReader::new(input);
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let hlen = u64::from_le_bytes(len) as usize;
    if hlen > 1 << 30 {
        return Err(Error::Checkpoint(format!("implausible header length {hlen}")));
    }
    let mut header = vec![0u8; hlen];
    input.read_exact(&mut header)?;
    let index: Index = serde_json::from_slice(&header)?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut params = ParamStore::new();
    for e in index.tensors {
        let end = e.offset.checked_add(e.len).filter(|&end| end <= values.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("tensor `{}` exceeds the payload", e.name)));
        };
        let t = Tensor::new(&e.shape, values[e.offset..end].to_vec())?;
        params.insert(e.name, t.tracked());
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<()> {
    write_checkpoint(params, File::create(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    read_checkpoint(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_values_and_layout() {
        let mut p = ParamStore::new();
        p.insert("b", Tensor::new(&[2, 2], vec![1.0, -0.5, f64::MIN_POSITIVE, 3.25]).unwrap().tracked());
        p.insert("a", Tensor::vector(&[0.1, 0.2, 0.3]).tracked());
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let hlen = u64::from_le_bytes(buf[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[8..8 + hlen]).unwrap();
        assert_eq!(header["tensors"][0]["name"], "a");
        assert_eq!(buf.len(), 8 + hlen + 7 * 8);
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::vector(&[0.1, 0.2, 0.3]).tracked());
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
