//! Binary container for named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"BIPOCKPT"  u32 version  u32 meta_len  meta (UTF-8)
//! u32 count
//! count × { u32 name_len  name  u32 ndim  u64 dims[ndim]  f64 data[numel] }
//! ```
//!
//! The metadata string is opaque here; callers store JSON in it.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"BIPOCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad("truncated file"),
        _ => TensorError::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r, 8)?.try_into().unwrap()))
}

impl Checkpoint {
    pub fn new(meta: impl Into<String>) -> Self {
        Self {
            meta: meta.into(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    /// Adds every parameter of `store`, each name prefixed by `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (_, name, t) in store.iter() {
            self.push(format!("{prefix}{name}"), t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites the parameters of `store` from entries named `prefix + name`.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let key = format!("{prefix}{}", store.name(id));
            let src = self
                .get(&key)
                .ok_or_else(|| bad(format!("missing tensor `{key}`")))?;
            let dst = store.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(bad(format!(
                    "tensor `{key}` has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        w.write_all(self.meta.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut bytes = Vec::with_capacity(8 * t.numel());
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        if read_exact(r, 8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let meta_len = read_u32(r)? as usize;
        let meta = String::from_utf8(read_exact(r, meta_len)?).map_err(|_| bad("metadata is not UTF-8"))?;
        let count = read_u32(r)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = String::from_utf8(read_exact(r, name_len)?).map_err(|_| bad("name is not UTF-8"))?;
            let ndim = read_u32(r)? as usize;
            if ndim > 8 {
                return Err(bad(format!("tensor `{name}` has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = read_exact(r, numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(r#"{"kind":"test"}"#);
        c.push("a", Tensor::vector(vec![1.0, -0.0, f64::MIN_POSITIVE]));
        c.push("b/c", Tensor::zeros(vec![2, 0, 3]));
        c.push("s", Tensor::scalar(std::f64::consts::PI));
        c
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.meta, c.meta);
        for ((n1, t1), (n2, t2)) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (x, y) in t1.data().iter().zip(t2.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncation_and_magic_are_errors() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        for cut in [0, 5, 12, buf.len() - 1] {
            assert!(Checkpoint::read_from(&mut &buf[..cut]).is_err());
        }
        buf[0] = b'X';
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn store_roundtrip() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut c = Checkpoint::new("");
        c.push_store("p/", &store);
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(vec![2])).unwrap();
        c.load_store("p/", &mut other).unwrap();
        assert_eq!(other, store);
        let mut wrong = ParamStore::new();
        wrong.add("w", Tensor::zeros(vec![3])).unwrap();
        assert!(c.load_store("p/", &mut wrong).is_err());
    }
}
