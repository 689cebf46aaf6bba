//! "DTNR v1" binary tensor files.
//!
//! Layout: `b"DTNR"`, version `u8 = 1`, dtype `u8 = 0` (f64), ndim `u8`,
//! one zero pad byte (header is 8 bytes), `ndim` little-endian `u64` dims,
//! then the row-major little-endian payload.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DTNR";
const VERSION: u8 = 1;
const DTYPE_F64: u8 = 0;

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let ndim = u8::try_from(t.ndim()).map_err(|_| Error::Format(format!("too many dimensions: {}", t.ndim())))?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F64, ndim, 0])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("bad DTNR magic".into()));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!("unsupported DTNR version {}", header[4])));
    }
    if header[5] != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported DTNR dtype {}", header[5])));
    }
    let ndim = header[6] as usize;
    let mut shape = Vec::with_capacity(ndim);
    let mut buf = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut buf)?;
        shape.push(u64::from_le_bytes(buf) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Tensor::new(shape, data)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let f = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f64);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..8], &[b'D', b'T', b'N', b'R', 1, 0, 2, 0]);
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..24], &3u64.to_le_bytes());
        assert_eq!(buf.len(), 8 + 16 + 6 * 8);
        assert_eq!(&buf[24 + 8..24 + 16], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"XTNR\x01\x00\x00\x00".to_vec();
        assert!(matches!(read_tensor(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn round_trip_bitwise() {
        let t = Tensor::from_fn(&[3, 1, 2], |i| (i as f64).sin() * 1e-300 + i as f64 / 3.0);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(read_tensor(&buf[..]).unwrap(), t);
    }
}
