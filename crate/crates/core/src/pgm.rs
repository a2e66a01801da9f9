//! Binary greymap (P5) images.

use std::path::Path;

use pat_tensor::Tensor;

use crate::error::{Error, Result};

/// Raw greymap samples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Greymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl Greymap {
    /// Samples scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Tensor<f64> {
        let m = f64::from(self.maxval);
        let data = self.pixels.iter().map(|&v| f64::from(v) / m).collect();
        Tensor::new(&[self.height, self.width], data).expect("greymap extents match its pixel count")
    }

    /// Binary mask: 1 where a sample is at least half of `maxval`
    /// (128 of 255).
    pub fn threshold(&self) -> Tensor<f64> {
        let cut = u32::from(self.maxval).div_ceil(2);
        let data = self.pixels.iter().map(|&v| if u32::from(v) >= cut { 1.0 } else { 0.0 }).collect();
        Tensor::new(&[self.height, self.width], data).expect("greymap extents match its pixel count")
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Invalid(format!("PGM: {}", msg.into()))
}

/// Parses a P5 image (8- or 16-bit samples, `#` comments allowed in the
/// header).
pub fn decode(bytes: &[u8]) -> Result<Greymap> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header field out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header not terminated by whitespace"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad(format!("unsupported header {width}×{height}, maxval {maxval}")));
    }
    let wide = maxval > 255;
    let n = width * height;
    let body = &bytes[pos..];
    let need = if wide { 2 * n } else { n };
    if body.len() < need {
        return Err(bad(format!("expected {need} sample bytes, found {}", body.len())));
    }
    let pixels: Vec<u16> = if wide {
        body[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        body[..n].iter().map(|&b| u16::from(b)).collect()
    };
    if pixels.iter().any(|&v| usize::from(v) > maxval) {
        return Err(bad("sample exceeds maxval"));
    }
    Ok(Greymap {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn read_pgm(path: &Path) -> Result<Greymap> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

/// 8-bit encoding of an `[H,W]` (or `[1,H,W]`) image whose values are
/// clamped to `[0, 1]`.
pub fn encode_unit(image: &Tensor<f64>) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [h, w] | [1, h, w] => (*h, *w),
        s => return Err(Error::Invalid(format!("PGM export needs an [H,W] image, got {s:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn write_pgm(path: &Path, image: &Tensor<f64>) -> Result<()> {
    let bytes = encode_unit(image)?;
    std::fs::write(path, bytes).map_err(Error::io(path))
}
