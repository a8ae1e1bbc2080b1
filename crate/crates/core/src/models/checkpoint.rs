//! Named-tensor checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "DPSCKPT1"
//! count   u32
//! entry*  name_len u32, name (UTF-8), dtype u8 (4 = f32, 8 = f64),
//!         trainable u8, ndim u32, dims u64 × ndim, payload (little-endian values)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::ParamTree;
use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

const MAGIC: &[u8; 8] = b"DPSCKPT1";

fn dtype_code(d: DType) -> u8 {
    d.size_of() as u8
}

pub fn write_checkpoint<T: Element>(params: &ParamTree<T>, out: &mut impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(dtype_code(T::DTYPE));
        buf.push(u8::from(p.trainable));
        buf.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut buf);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn fail(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset: at as u64,
            message: message.into(),
        }
    }
}

/// Parses a checkpoint, converting stored values to `T` if the dtype differs.
pub fn read_checkpoint<T: Element>(bytes: &[u8]) -> Result<ParamTree<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(r.fail(0, "not a checkpoint (bad magic)"));
    }
    let count = r.u32("entry count")?;
    let mut params = ParamTree::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| r.fail(at, "parameter name is not UTF-8"))?
            .to_string();
        let at = r.pos;
        let code = r.take(1, "dtype")?[0];
        let width = match code {
            4 | 8 => code as usize,
            _ => return Err(r.fail(at, format!("unknown dtype code {code}"))),
        };
        let trainable = match r.take(1, "trainable flag")?[0] {
            0 => false,
            1 => true,
            f => return Err(r.fail(at + 1, format!("bad trainable flag {f}"))),
        };
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(r.u64("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| r.fail(r.pos, "tensor size overflows"))?;
        let payload = r.take(n, "payload")?;
        let data: Vec<T> = match width {
            8 => payload.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
            _ => payload.chunks_exact(4).map(|c| T::lit(f64::from(f32::read_le(c)))).collect(),
        };
        params.insert(name, Tensor::new(shape, data)?, trainable)?;
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes after the last entry"));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Element>(params: &ParamTree<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(params, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<ParamTree<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamTree {
        let mut p = ParamTree::new();
        p.insert("a.weight", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1 - 0.2), true).unwrap();
        p.insert("b", Tensor::from_fn(&[4], |i| 1.0 / (i as f64 + 1.0)), false).unwrap();
        p
    }

    #[test]
    fn round_trips_bit_exactly() {
        let p = sample();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        let q: ParamTree = read_checkpoint(&bytes).unwrap();
        assert_eq!(q.max_abs_diff(&p).unwrap(), 0.0);
        assert!(!q.get("b").unwrap().trainable);
        let mut again = Vec::new();
        write_checkpoint(&q, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn reads_f32_payloads() {
        let p: ParamTree<f32> = sample().cast();
        let mut bytes = Vec::new();
        write_checkpoint(&p, &mut bytes).unwrap();
        let q: ParamTree<f64> = read_checkpoint(&bytes).unwrap();
        assert_eq!(q.value("b").unwrap().data()[2], f64::from(1.0f32 / 3.0));
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let mut bytes = Vec::new();
        write_checkpoint(&sample(), &mut bytes).unwrap();
        let cut = bytes.len() - 3;
        match read_checkpoint::<f64>(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 8 && (offset as usize) < cut),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_checkpoint::<f64>(b"NOTACKPT"), Err(Error::Format { offset: 0, .. })));
    }
}
