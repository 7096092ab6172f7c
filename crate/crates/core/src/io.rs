//! Netpbm (P5/P6, 8-bit) and PFM (32-bit float) image files.
//!
//! 8-bit encoding is `floor(255·clamp(v, 0, 1) + 0.5)`. PFM files are written
//! little-endian with rows stored bottom-to-top, as the format prescribes.

use std::fs;
use std::path::Path;

use crate::cfa::{BayerMosaic, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded image planes, C×H×W with C = 1 or 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes(pub Tensor);

pub fn encode_u8(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self, what: &'static str) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(what, "truncated header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::format(what, "non-text header"))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &'static str) -> Result<T> {
        let t = self.token(what)?;
        t.parse().map_err(|_| Error::format(what, format!("bad header field `{t}`")))
    }

    /// Consumes the single whitespace byte separating header and raster.
    fn raster(mut self, what: &'static str) -> Result<&'a [u8]> {
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(Error::format(what, "missing raster"));
        }
        self.pos += 1;
        Ok(&self.bytes[self.pos..])
    }
}

/// Decodes P5, P6, Pf or PF bytes into planes with values in [0,1] for
/// 8-bit formats.
pub fn decode(bytes: &[u8]) -> Result<Planes> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.token("image")?;
    match magic {
        "P5" | "P6" => {
            let what = if magic == "P5" { "PGM" } else { "PPM" };
            let channels = if magic == "P5" { 1 } else { 3 };
            let w: usize = c.number(what)?;
            let h: usize = c.number(what)?;
            let maxval: usize = c.number(what)?;
            if maxval == 0 || maxval > 255 {
                return Err(Error::format(what, format!("maxval {maxval} unsupported (8-bit only)")));
            }
            let raster = c.raster(what)?;
            let n = w * h * channels;
            if raster.len() < n {
                return Err(Error::format(what, format!("raster has {} of {n} bytes", raster.len())));
            }
            let scale = maxval as f64;
            Ok(Planes(Tensor::from_fn(&[channels, h, w], |i| {
                f64::from(raster[(i[1] * w + i[2]) * channels + i[0]]) / scale
            })))
        }
        "Pf" | "PF" => {
            let channels = if magic == "Pf" { 1 } else { 3 };
            let w: usize = c.number("PFM")?;
            let h: usize = c.number("PFM")?;
            let scale: f64 = c.number("PFM")?;
            if scale == 0.0 {
                return Err(Error::format("PFM", "scale must be nonzero"));
            }
            let little = scale < 0.0;
            let raster = c.raster("PFM")?;
            let n = w * h * channels;
            if raster.len() < 4 * n {
                return Err(Error::format("PFM", format!("raster has {} of {} bytes", raster.len(), 4 * n)));
            }
            Ok(Planes(Tensor::from_fn(&[channels, h, w], |i| {
                let row = h - 1 - i[1];
                let k = 4 * ((row * w + i[2]) * channels + i[0]);
                let b: [u8; 4] = raster[k..k + 4].try_into().expect("4 bytes");
                f64::from(if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) })
            })))
        }
        other => Err(Error::format("image", format!("unsupported magic `{other}` (expected P5, P6, Pf or PF)"))),
    }
}

/// Encodes C×H×W planes (C = 1 or 3) as 8-bit netpbm.
pub fn encode_netpbm(t: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = dims(t)?;
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(encode_u8(t.at(&[ch, y, x])));
            }
        }
    }
    Ok(out)
}

/// Encodes C×H×W planes (C = 1 or 3) as little-endian PFM.
pub fn encode_pfm(t: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = dims(t)?;
    let magic = if c == 1 { "Pf" } else { "PF" };
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * c * h * w);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(t.at(&[ch, y, x]) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c @ (1 | 3), h, w] => Ok((c, h, w)),
        ref s => Err(Error::contract("write_image", format!("expected 1×H×W or 3×H×W, got {s:?}"))),
    }
}

fn is_pfm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
}

pub fn read_planes(path: &Path) -> Result<Planes> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { what, detail } => Error::Format { what, detail: format!("{}: {detail}", path.display()) },
        other => other,
    })
}

/// Writes PFM for a `.pfm` extension and 8-bit netpbm otherwise.
pub fn write_planes(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = if is_pfm(path) { encode_pfm(t)? } else { encode_netpbm(t)? };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let Planes(t) = read_planes(path)?;
    if t.shape()[0] != 3 {
        return Err(Error::format("image", format!("{}: expected an RGB image", path.display())));
    }
    RgbImage::new(t)
}

pub fn read_mosaic(path: &Path) -> Result<BayerMosaic> {
    let Planes(t) = read_planes(path)?;
    if t.shape()[0] != 1 {
        return Err(Error::format("image", format!("{}: expected a single-channel mosaic", path.display())));
    }
    BayerMosaic::new(t)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    write_planes(path, img.tensor())
}

pub fn write_mosaic(path: &Path, m: &BayerMosaic) -> Result<()> {
    write_planes(path, m.tensor())
}
