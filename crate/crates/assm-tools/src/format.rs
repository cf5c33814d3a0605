//! Binary tensor and checkpoint serialization.
//!
//! Tensor file layout (little-endian):
//!   magic "ATSM" | version u32 = 1 | dtype u8 (0 = f32, 1 = f64)
//!   | rank u8 | extents u64[rank] | row-major payload
//!
//! A checkpoint shares the magic and version header, followed by a
//! sequence of (name-length u32, UTF-8 name, tensor body) records where
//! the tensor body is everything after the header in the layout above.

use std::io::{Read, Write};
use std::path::Path;

use assm_core::{Dtype, Tensor};

use crate::error::{Result, ToolError};

pub const MAGIC: [u8; 4] = *b"ATSM";
pub const VERSION: u32 = 1;

const MAX_RANK: u8 = 8;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Cursor<'a> {
        Cursor { buf, pos: 0 }
    }

    fn fail<T>(&self, what: impl Into<String>) -> Result<T> {
        Err(ToolError::Format {
            offset: self.pos as u64,
            what: what.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!(
                "truncated while reading {what}: need {n} bytes, have {}",
                self.buf.len() - self.pos
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_header(out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
}

fn read_header(c: &mut Cursor) -> Result<()> {
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        c.pos = 0;
        return c.fail(format!("bad magic {magic:?}, expected {MAGIC:?}"));
    }
    let pos = c.pos;
    let version = c.u32("version")?;
    if version != VERSION {
        c.pos = pos;
        return c.fail(format!("unsupported version {version}, expected {VERSION}"));
    }
    Ok(())
}

fn write_tensor_body(t: &Tensor, out: &mut Vec<u8>) {
    out.push(t.dtype().code());
    out.push(t.shape().len() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    match t.dtype() {
        Dtype::F32 => {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

fn read_tensor_body(c: &mut Cursor) -> Result<Tensor> {
    let code = c.u8("dtype")?;
    let dtype = match Dtype::from_code(code) {
        Some(d) => d,
        None => {
            c.pos -= 1;
            return c.fail(format!("unknown dtype code {code}"));
        }
    };
    let rank = c.u8("rank")?;
    if rank > MAX_RANK {
        c.pos -= 1;
        return c.fail(format!("rank {rank} exceeds the limit of {MAX_RANK}"));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut elems: u64 = 1;
    for i in 0..rank {
        let e = c.u64(&format!("extent {i}"))?;
        elems = elems.saturating_mul(e.max(1));
        if elems > (1 << 32) {
            return c.fail(format!("element count overflows a sane bound at extent {i}"));
        }
        shape.push(e as usize);
    }
    let n: usize = shape.iter().product();
    let data = match dtype {
        Dtype::F32 => {
            let raw = c.take(4 * n, "f32 payload")?;
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect::<Vec<f64>>()
        }
        Dtype::F64 => {
            let raw = c.take(8 * n, "f64 payload")?;
            raw.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect::<Vec<f64>>()
        }
    };
    let t = Tensor::new(&shape, data)
        .map_err(ToolError::Core)?
        .with_dtype(dtype);
    Ok(t)
}

/// Serializes one tensor to the standalone file layout.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out);
    write_tensor_body(t, &mut out);
    out
}

/// Decodes a standalone tensor file, rejecting trailing bytes.
pub fn decode_tensor(buf: &[u8]) -> Result<Tensor> {
    let mut c = Cursor::new(buf);
    read_header(&mut c)?;
    let t = read_tensor_body(&mut c)?;
    if !c.done() {
        return c.fail(format!("{} trailing bytes after the payload", buf.len() - c.pos));
    }
    Ok(t)
}

/// Serializes named tensors as a checkpoint.
pub fn encode_checkpoint<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out);
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_tensor_body(t, &mut out);
    }
    out
}

/// Decodes a checkpoint into its ordered (name, tensor) records.
pub fn decode_checkpoint(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor::new(buf);
    read_header(&mut c)?;
    let mut out = Vec::new();
    while !c.done() {
        let name_len = c.u32("record name length")? as usize;
        if name_len > 4096 {
            c.pos -= 4;
            return c.fail(format!("record name length {name_len} is implausible"));
        }
        let raw = c.take(name_len, "record name")?;
        let name = match std::str::from_utf8(raw) {
            Ok(s) => s.to_string(),
            Err(_) => {
                c.pos -= name_len;
                return c.fail("record name is not valid UTF-8");
            }
        };
        let t = read_tensor_body(&mut c)?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn write_tensor_file(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_tensor(&buf)
}

pub fn write_checkpoint_file<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(entries))?;
    Ok(())
}

pub fn read_checkpoint_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_f64() {
        let t = Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-300, 7.0]).unwrap();
        let buf = encode_tensor(&t);
        let back = decode_tensor(&buf).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
        assert_eq!(back.dtype(), Dtype::F64);
    }

    #[test]
    fn tensor_round_trip_f32_narrows() {
        let t = Tensor::new(&[3], vec![1.5, -0.25, 1024.0])
            .unwrap()
            .with_dtype(Dtype::F32);
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(back.dtype(), Dtype::F32);
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut buf = encode_tensor(&Tensor::zeros(&[2]));
        buf[0] = b'X';
        match decode_tensor(&buf) {
            Err(ToolError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_version_and_dtype_report_their_offsets() {
        let mut buf = encode_tensor(&Tensor::zeros(&[2]));
        buf[4] = 9;
        match decode_tensor(&buf) {
            Err(ToolError::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        let mut buf = encode_tensor(&Tensor::zeros(&[2]));
        buf[8] = 7; // dtype byte
        match decode_tensor(&buf) {
            Err(ToolError::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let buf = encode_tensor(&Tensor::zeros(&[4, 4]));
        assert!(matches!(
            decode_tensor(&buf[..buf.len() - 3]),
            Err(ToolError::Format { .. })
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(decode_tensor(&long), Err(ToolError::Format { .. })));
    }

    #[test]
    fn checkpoint_round_trip_preserves_order_and_names() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[3], vec![-1.0, 0.5, 9.0]).unwrap();
        let buf = encode_checkpoint([("layer.weight", &a), ("layer.bias", &b)]);
        let back = decode_checkpoint(&buf).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "layer.weight");
        assert_eq!(back[0].1.data(), a.data());
        assert_eq!(back[1].0, "layer.bias");
        assert_eq!(back[1].1.shape(), &[3]);
    }

    #[test]
    fn checkpoint_rejects_non_utf8_names() {
        let a = Tensor::zeros(&[1]);
        let mut buf = encode_checkpoint([("ab", &a)]);
        buf[12] = 0xff; // first name byte
        assert!(matches!(
            decode_checkpoint(&buf),
            Err(ToolError::Format { offset: 12, .. })
        ));
    }

    #[test]
    fn empty_checkpoint_is_valid() {
        let buf = encode_checkpoint(std::iter::empty());
        assert!(decode_checkpoint(&buf).unwrap().is_empty());
    }
}
