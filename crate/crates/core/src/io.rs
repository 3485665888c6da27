//! Binary tensor and checkpoint files.
//!
//! All integers and values are little-endian.
//!
//! Raw tensor (`.bttn`):
//!
//! ```text
//! b"BTTN"  u32 ndim  u64 dims[ndim]  f64 values[prod(dims)]   (row-major)
//! ```
//!
//! Checkpoint (`.btck`):
//!
//! ```text
//! b"BTCK"  u32 version  u64 seed
//! u32 len  config as UTF-8 JSON
//! u32 count
//! count × { u32 len  name (UTF-8)  u32 ndim  u64 dims[ndim]  f64 values }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tracker::{JdtModel, ModelConfig};

pub const TENSOR_MAGIC: &[u8; 4] = b"BTTN";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => fmt_err(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let n = read_u32(r, what)? as usize;
    let mut b = vec![0; n];
    read_exact(r, &mut b, what)?;
    String::from_utf8(b).map_err(|_| fmt_err(format!("{what} is not UTF-8")))
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let n = u32::try_from(s.len()).map_err(|_| fmt_err("string too long"))?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_body<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Upper bound on elements accepted from a file header, so a corrupted dims
/// field cannot trigger a huge allocation.
const MAX_ELEMENTS: u64 = 1 << 31;

fn read_body<R: Read>(r: &mut R) -> Result<Tensor> {
    let ndim = read_u32(r, "ndim")? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(fmt_err(format!("unsupported tensor rank {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut n: u64 = 1;
    for _ in 0..ndim {
        let d = read_u64(r, "dims")?;
        n = n.saturating_mul(d);
        dims.push(d as usize);
    }
    if n > MAX_ELEMENTS {
        return Err(fmt_err(format!("tensor with {n} elements is too large")));
    }
    let mut bytes = vec![0; n as usize * 8];
    read_exact(r, &mut bytes, "tensor values")?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(dims, data).map_err(|e| fmt_err(e.to_string()))
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    write_body(w, t)
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(fmt_err("not a raw tensor file (bad magic)"));
    }
    read_body(r)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut r).map_err(|e| match e {
        Error::Format(m) => fmt_err(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Model configuration, the seed it was built with and every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn of(model: &JdtModel, seed: u64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            seed,
            config: model.config.clone(),
            params: model
                .store
                .names()
                .iter()
                .cloned()
                .zip(model.store.tensors().iter().cloned())
                .collect(),
        }
    }

    /// Rebuild the model; parameter names and shapes must match the
    /// architecture the stored config describes.
    pub fn to_model(&self) -> Result<JdtModel> {
        let mut model = JdtModel::new(self.config.clone(), self.seed)?;
        let names = model.store.names();
        if names.len() != self.params.len() {
            return Err(fmt_err(format!(
                "checkpoint has {} tensors, model expects {}",
                self.params.len(),
                names.len()
            )));
        }
        for (expected, (name, _)) in names.iter().zip(&self.params) {
            if expected != name {
                return Err(fmt_err(format!("parameter {name} found where {expected} was expected")));
            }
        }
        model.store.load(self.params.iter().map(|(_, t)| t.clone()).collect())?;
        Ok(model)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let config = serde_json::to_string(&self.config).map_err(|e| fmt_err(e.to_string()))?;
        write_string(w, &config)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            write_string(w, name)?;
            write_body(w, t)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fmt_err("not a checkpoint file (bad magic)"));
        }
        let version = read_u32(r, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt_err(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let seed = read_u64(r, "seed")?;
        let config: ModelConfig = serde_json::from_str(&read_string(r, "config")?)
            .map_err(|e| fmt_err(format!("config: {e}")))?;
        let count = read_u32(r, "tensor count")?;
        let mut params = Vec::new();
        for _ in 0..count {
            let name = read_string(r, "tensor name")?;
            params.push((name, read_body(r)?));
        }
        Ok(Self {
            version,
            seed,
            config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut r).map_err(|e| match e {
            Error::Format(m) => fmt_err(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let t = Tensor::new(vec![2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.5, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 2 * 8 + 6 * 8);
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let t = Tensor::zeros(&[4]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_tensor(&mut buf.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_tensor(&mut &b"XXXX\x01\0\0\0"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn checkpoint_rejects_future_version() {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&99u32.to_le_bytes());
        let err = Checkpoint::read(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version 99"));
    }
}
