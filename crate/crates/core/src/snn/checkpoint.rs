//! Binary checkpoint format.
//!
//! ```text
//! "SDEP" | version: u32 | count: u32
//! repeated count times:
//!   name_len: u32 | name: UTF-8 | rank: u32 | dims: u64 × rank | payload: f64 × Π dims
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use super::model::Model;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDEP";
pub const FORMAT_VERSION: u32 = 1;

/// One parameter record as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn save<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let params = model.params();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.tensor.rank() as u32).to_le_bytes())?;
        for &d in p.tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in p.tensor.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<StoredParam>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Checkpoint(format!("parameter name is not UTF-8: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(StoredParam { name, shape, data });
    }
    Ok(out)
}

/// Overwrites `model`'s parameters from a checkpoint, checking names and shapes.
pub fn load_into<R: Read>(model: &mut Model, r: R) -> Result<()> {
    let stored = read(r)?;
    let names = model.param_names();
    let shapes = model.param_shapes();
    if stored.len() != names.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            stored.len(),
            names.len()
        )));
    }
    for ((s, name), shape) in stored.iter().zip(&names).zip(&shapes) {
        if &s.name != name {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: expected `{name}`, found `{}`",
                s.name
            )));
        }
        if &s.shape != shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?} in the checkpoint but {:?} in the model",
                s.shape, shape
            )));
        }
    }
    for (t, s) in model.params_mut().into_iter().zip(stored) {
        t.data_mut().copy_from_slice(&s.data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::LifConfig;

    #[test]
    fn round_trip_and_header() {
        let m = Model::mlp(&[4], &[3], 2, LifConfig::default(), 1.0, 9).unwrap();
        let mut buf = Vec::new();
        save(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SDEP");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 4);

        let mut other = Model::mlp(&[4], &[3], 2, LifConfig::default(), 1.0, 10).unwrap();
        load_into(&mut other, buf.as_slice()).unwrap();
        assert_eq!(other.flat_params(), m.flat_params());
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let m = Model::mlp(&[4], &[3], 2, LifConfig::default(), 1.0, 9).unwrap();
        let mut buf = Vec::new();
        save(&m, &mut buf).unwrap();
        let mut wrong = Model::mlp(&[4], &[5], 2, LifConfig::default(), 1.0, 9).unwrap();
        let err = load_into(&mut wrong, buf.as_slice()).unwrap_err().to_string();
        assert!(err.contains("layers.0.weight"), "{err}");
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read(&b"NOPE\x01\0\0\0\0\0\0\0"[..]).is_err());
    }
}
