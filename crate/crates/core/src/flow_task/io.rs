use std::path::Path;

use super::FlowField;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const FLO_MAGIC: &[u8; 4] = b"PIEH";
const MAX_SIDE: usize = 100_000;

fn parse_err(path: &str, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        offset: offset as u64,
        message: message.into(),
    }
}

/// Middlebury `.flo` bytes: magic, width and height as i32, then
/// interleaved (u, v) f32 pairs row by row, all little-endian.
pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    let (h, w) = (flow.height(), flow.width());
    if h >= MAX_SIDE || w >= MAX_SIDE {
        return Err(Error::Shape(format!("flow {w}x{h} is too large for .flo")));
    }
    if !flow.uv.all_finite() {
        return Err(Error::Divergence("flow has non-finite values".into()));
    }
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for v in flow.uv.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8], path: &str) -> Result<FlowField> {
    if bytes.len() < 4 || &bytes[..4] != FLO_MAGIC {
        return Err(parse_err(path, 0, "bad magic, expected PIEH"));
    }
    if bytes.len() < 12 {
        return Err(parse_err(path, bytes.len(), "truncated header"));
    }
    let dim = |at: usize| i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (w, h) = (dim(4), dim(8));
    for (at, v, what) in [(4, w, "width"), (8, h, "height")] {
        if v <= 0 || v as usize >= MAX_SIDE {
            return Err(parse_err(path, at, format!("{what} {v} out of range")));
        }
    }
    let (w, h) = (w as usize, h as usize);
    let need = 12 + 8 * w * h;
    if bytes.len() < need {
        return Err(parse_err(path, bytes.len(), format!("truncated payload, expected {need} bytes")));
    }
    if bytes.len() > need {
        return Err(parse_err(path, need, "trailing bytes"));
    }
    let uv = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(FlowField::new(Tensor::new([h, w, 2], uv)))
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    std::fs::write(path, encode_flo(flow)?)?;
    Ok(())
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path)?;
    decode_flo(&bytes, &path.display().to_string())
}

/// Binary P6 with [-1, 1] mapped to 0..=255.
pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!("image must be [3, H, W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for p in 0..h * w {
        for c in 0..3 {
            let v = ((d[c * h * w + p].clamp(-1.0, 1.0) + 1.0) * 127.5).round();
            out.push(v as u8);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let name = path.display().to_string();
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(&name, pos, "truncated header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).to_string()));
    }
    if fields[0].1 != "P6" {
        return Err(parse_err(&name, 0, "bad magic, expected P6"));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse()
            .map_err(|_| parse_err(&name, fields[i].0, format!("bad header field {:?}", fields[i].1)))
    };
    let (w, h, max) = (num(1)?, num(2)?, num(3)?);
    if max != 255 || w == 0 || h == 0 {
        return Err(parse_err(&name, fields[1].0, "only non-empty 8-bit images are supported"));
    }
    pos += 1;
    let need = pos + 3 * w * h;
    if bytes.len() != need {
        return Err(parse_err(&name, bytes.len().min(need), format!("expected {need} bytes in total")));
    }
    let px = &bytes[pos..];
    Ok(Tensor::from_fn([3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        px[p * 3 + c] as f32 / 127.5 - 1.0
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_pixel_zero_flow_bytes() {
        let bytes = encode_flo(&FlowField::zeros(1, 1)).unwrap();
        let mut expect = vec![0x50, 0x49, 0x45, 0x48, 1, 0, 0, 0, 1, 0, 0, 0];
        expect.extend([0u8; 8]);
        assert_eq!(bytes, expect);
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
            let f = FlowField::new(Tensor::from_fn([h, w, 2], |_| rng.gen_range(-50.0..50.0)));
            let bytes = encode_flo(&f).unwrap();
            let back = decode_flo(&bytes, "mem").unwrap();
            assert_eq!(encode_flo(&back).unwrap(), bytes);
            assert_eq!(back, f);
        }
    }

    #[test]
    fn malformed_files_report_offsets() {
        let good = encode_flo(&FlowField::zeros(2, 3)).unwrap();
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        let offset = |r: Result<FlowField>| match r {
            Err(Error::Parse { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        assert_eq!(offset(decode_flo(&bad, "a.flo")), 0);
        assert_eq!(offset(decode_flo(&good[..30], "a.flo")), 30);
        let mut neg = good.clone();
        neg[4..8].copy_from_slice(&(-1i32).to_le_bytes());
        assert_eq!(offset(decode_flo(&neg, "a.flo")), 4);
    }

    #[test]
    fn ppm_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        let img = Tensor::from_fn([3, 2, 3], |i| i as f32 / 9.0 - 1.0);
        write_ppm(&p, &img).unwrap();
        let back = read_ppm(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
        write_ppm(&p, &back).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), back);
    }
}
