use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FNAS";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Serializes named `f32` tensors in order.
pub fn encode_checkpoint<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<()> {
    let bytes = encode_checkpoint(entries);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl Cursor<'_> {
    fn err(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            offset: at as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &str) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path: path.to_string(),
    };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(c.err(0, "bad magic, expected FNAS"));
    }
    let at = c.pos;
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(c.err(at, format!("unsupported version {version}")));
    }
    let count = c.u32("entry count")?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let at = c.pos;
        let raw = c.take(len, "name")?.to_vec();
        let name = String::from_utf8(raw).map_err(|_| c.err(at, "name is not UTF-8"))?;
        let at = c.pos;
        let dtype = c.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(c.err(at, format!("unknown dtype tag {dtype}")));
        }
        let rank = c.u8("rank")? as usize;
        let at = c.pos;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dims")? as usize);
        }
        if shape.contains(&0) {
            return Err(c.err(at, format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let payload = c.take(n * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)));
    }
    if c.pos != bytes.len() {
        return Err(c.err(c.pos, "trailing bytes after last entry"));
    }
    Ok(out)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_of_a_single_entry() {
        let t = Tensor::new([2], vec![1.0f32, -2.0]);
        let bytes = encode_checkpoint([("w", &t)]);
        let mut expect = b"FNAS".to_vec();
        expect.extend([1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, b'w', 0, 1, 2, 0, 0, 0]);
        expect.extend(1.0f32.to_le_bytes());
        expect.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
        let back = decode_checkpoint(&bytes, "mem").unwrap();
        assert_eq!(back, vec![("w".to_string(), t)]);
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let t = Tensor::new([3], vec![0.5f32; 3]);
        let bytes = encode_checkpoint([("abc", &t)]);
        match decode_checkpoint(b"NOPE....", "x") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        match decode_checkpoint(&bytes[..bytes.len() - 2], "x") {
            Err(Error::Parse { offset, message, .. }) => {
                assert_eq!(offset as usize, bytes.len() - 12);
                assert!(message.contains("payload"));
            }
            other => panic!("{other:?}"),
        }
    }
}
