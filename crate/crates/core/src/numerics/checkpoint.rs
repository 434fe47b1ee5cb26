//! Parameter checkpoint file: magic, version, then named float64
//! little-endian records. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layers::ParamSet;
use crate::error::{Result, TrinityError};

const MAGIC: &[u8; 8] = b"TRNPARAM";
const VERSION: u32 = 1;

pub fn save_params(path: &Path, params: &ParamSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.entries() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.value() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

struct Cursor<'a> {
    r: BufReader<File>,
    path: &'a Path,
    offset: u64,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(|_| TrinityError::Format {
            path: self.path.to_path_buf(),
            detail: format!("truncated while reading {what}"),
            offset: self.offset,
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load_params(path: &Path) -> Result<Vec<ParamRecord>> {
    let mut c = Cursor {
        r: BufReader::new(File::open(path)?),
        path,
        offset: 0,
    };
    let magic = c.take(8, "magic")?;
    if magic != MAGIC {
        return Err(TrinityError::Format {
            path: path.to_path_buf(),
            detail: "bad magic, not a parameter checkpoint".into(),
            offset: 0,
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(TrinityError::Format {
            path: path.to_path_buf(),
            detail: format!("unsupported version {version}"),
            offset: 8,
        });
    }
    let count = c.u32("record count")?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = c.u32("name length")? as usize;
        let name = String::from_utf8(c.take(name_len, "name")?).map_err(|_| {
            TrinityError::Format {
                path: path.to_path_buf(),
                detail: "parameter name is not UTF-8".into(),
                offset: c.offset,
            }
        })?;
        let ndim = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u64("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 8, "payload")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(ParamRecord { name, shape, data });
    }
    Ok(records)
}

/// Load a checkpoint into an existing parameter set; names and shapes
/// must match exactly.
pub fn restore_params(path: &Path, params: &ParamSet) -> Result<()> {
    let records = load_params(path)?;
    if records.len() != params.len() {
        return Err(TrinityError::Config(format!(
            "checkpoint has {} parameters, model expects {}",
            records.len(),
            params.len()
        )));
    }
    for rec in records {
        let tensor = params.get(&rec.name).ok_or_else(|| {
            TrinityError::Config(format!("checkpoint parameter {} not in model", rec.name))
        })?;
        if tensor.shape() != rec.shape.as_slice() {
            return Err(TrinityError::Config(format!(
                "checkpoint parameter {} has shape {:?}, model expects {:?}",
                rec.name,
                rec.shape,
                tensor.shape()
            )));
        }
        tensor.set_data(rec.data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let a = Tensor::param(vec![1.5, -2.25, 1e-300, f64::MIN_POSITIVE], &[2, 2]).unwrap();
        let b = Tensor::param(vec![0.1 + 0.2], &[1]).unwrap();
        let mut ps = ParamSet::new();
        ps.register("layer.a", &a);
        ps.register("layer.b", &b);
        save_params(&path, &ps).unwrap();

        let records = load_params(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].name, "layer.a");
        assert_eq!(records[0].shape, vec![2, 2]);
        for (x, y) in records[0].data.iter().zip(a.value().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(records[1].data[0].to_bits(), b.value()[0].to_bits());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        match load_params(&path) {
            Err(TrinityError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ckpt");
        let t = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let mut ps = ParamSet::new();
        ps.register("t", &t);
        save_params(&path, &ps).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 4]).unwrap();
        assert!(matches!(
            load_params(&path),
            Err(TrinityError::Format { .. })
        ));
    }
}
