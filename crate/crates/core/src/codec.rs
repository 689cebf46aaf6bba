//! Exact space-to-depth frame codec and PPM/PGM image I/O.
//!
//! A `p x p` patch of RGB pixels becomes one latent cell with `3 p^2`
//! channels; channel `c = (dy * p + dx) * 3 + ch`. Latents are stored as
//! token matrices of shape `[h * w, 3 p^2]`, cells in row-major order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_PATCH: usize = 4;

/// RGB frame, row-major `[y][x][ch]`, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "frame {width}x{height}x3 needs {} values, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let pixels = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| to_byte(v)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(r: R) -> Result<Self> {
        let (width, height, bytes) = read_pnm(r, "P6", 3)?;
        let pixels = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Self::new(width, height, pixels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ppm(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_ppm(std::fs::File::open(path)?)
    }
}

/// Boolean pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Tight `[x0, y0, x1, y1]` with exclusive max, `None` when empty.
    pub fn bounding_box(&self) -> Option<[usize; 4]> {
        let mut b: Option<[usize; 4]> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => [x, y, x + 1, y + 1],
                        Some([x0, y0, x1, y1]) => [x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)],
                    });
                }
            }
        }
        b
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Reads a P5 image; pixels at or above half intensity are set.
    pub fn read_pgm<R: Read>(r: R) -> Result<Self> {
        let (width, height, bytes) = read_pnm(r, "P5", 1)?;
        Self::new(width, height, bytes.iter().map(|&b| b >= 128).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pgm(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn read_pnm<R: Read>(r: R, magic: &str, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = BufReader::new(r);
    let mut fields = Vec::new();
    while fields.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("truncated PNM header".into()));
        }
        let line = line.split('#').next().unwrap_or("");
        fields.extend(line.split_whitespace().map(str::to_owned));
    }
    if fields.len() != 4 || fields[0] != magic {
        return Err(Error::Format(format!("expected {magic} header, got {:?}", fields)));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PNM field {s:?}")));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let mut bytes = vec![0u8; width * height * channels];
    r.read_exact(&mut bytes)?;
    Ok((width, height, bytes))
}

/// Latent grid of `h x w` cells with `channels` features each.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    height: usize,
    width: usize,
    tokens: Tensor,
}

impl Latent {
    pub fn from_tokens(height: usize, width: usize, tokens: Tensor) -> Result<Self> {
        let (n, _) = tokens.dims2()?;
        if n != height * width {
            return Err(Error::Shape(format!("latent {height}x{width} needs {} tokens, got {n}", height * width)));
        }
        Ok(Self { height, width, tokens })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn into_tokens(self) -> Tensor {
        self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Codec {
    patch: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Self { patch: DEFAULT_PATCH }
    }
}

impl Codec {
    pub fn new(patch: usize) -> Result<Self> {
        if patch == 0 {
            return Err(Error::Config("patch factor must be positive".into()));
        }
        Ok(Self { patch })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn channels(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn encode(&self, frame: &Frame) -> Result<Latent> {
        let p = self.patch;
        let (fw, fh) = (frame.width(), frame.height());
        if fw % p != 0 || fh % p != 0 || fw == 0 || fh == 0 {
            return Err(Error::Shape(format!("frame {fw}x{fh} not divisible by patch {p}")));
        }
        let (h, w, c) = (fh / p, fw / p, self.channels());
        let mut data = vec![0.0; h * w * c];
        for y in 0..fh {
            for x in 0..fw {
                let cell = (y / p) * w + x / p;
                let base = cell * c + ((y % p) * p + x % p) * 3;
                data[base..base + 3].copy_from_slice(&frame.get(x, y));
            }
        }
        Latent::from_tokens(h, w, Tensor::new(vec![h * w, c], data)?)
    }

    pub fn decode(&self, latent: &Latent) -> Result<Frame> {
        let c = latent.channels();
        if c % 3 != 0 || c != self.channels() {
            return Err(Error::Shape(format!(
                "latent has {c} channels, codec with patch {} expects {}",
                self.patch,
                self.channels()
            )));
        }
        let p = self.patch;
        let (fw, fh) = (latent.width() * p, latent.height() * p);
        let t = latent.tokens().data();
        let mut pixels = vec![0.0; fw * fh * 3];
        for y in 0..fh {
            for x in 0..fw {
                let cell = (y / p) * latent.width() + x / p;
                let base = cell * c + ((y % p) * p + x % p) * 3;
                let o = (y * fw + x) * 3;
                pixels[o..o + 3].copy_from_slice(&t[base..base + 3]);
            }
        }
        Frame::new(fw, fh, pixels)
    }
}

/// Patch factor implied by a channel count, if it is `3 p^2`.
pub fn patch_for_channels(channels: usize) -> Option<usize> {
    if channels == 0 || channels % 3 != 0 {
        return None;
    }
    let q = channels / 3;
    let p = (q as f64).sqrt().round() as usize;
    (p * p == q).then_some(p)
}
