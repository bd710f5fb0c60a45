//! PGM/PPM images and the `PTNS` binary tensor container.
//!
//! `PTNS` layout, all integers little-endian: the magic `PTNS`, a `u32` rank,
//! `rank` `u64` dimensions, then the `f64` payload in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ImageU8, Tensor};

const PTNS_MAGIC: &[u8; 4] = b"PTNS";

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.shape().len() + 8 * t.len());
    out.extend_from_slice(PTNS_MAGIC);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses one tensor from the front of `bytes`, returning it and the bytes consumed.
pub fn tensor_from_bytes(bytes: &[u8]) -> Result<(Tensor, usize)> {
    if bytes.len() < 8 {
        return Err(Error::Truncated { expected: 8, found: bytes.len() });
    }
    if &bytes[..4] != PTNS_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {:?}", &bytes[..4])));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if rank > 16 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err(Error::Truncated { expected: header, found: bytes.len() });
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for k in 0..rank {
        let off = 8 + 8 * k;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let d = usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?;
        count = count.checked_mul(d).ok_or_else(|| Error::Format("tensor element count overflows".into()))?;
        shape.push(d);
    }
    let total = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::Format("tensor byte size overflows".into()))?;
    if bytes.len() < total {
        return Err(Error::Truncated { expected: total, found: bytes.len() });
    }
    let data = bytes[header..total].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((Tensor::new(shape, data)?, total))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, tensor_to_bytes(t))?;
    Ok(())
}

/// Reads a file holding exactly one tensor.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let (t, used) = tensor_from_bytes(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", bytes.len() - used)));
    }
    Ok(t)
}

/// Encodes as binary PGM (`P5`) for one channel or PPM (`P6`) for three.
pub fn image_to_bytes(img: &ImageU8) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn image_from_bytes(bytes: &[u8]) -> Result<ImageU8> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported image magic {other:?}"))),
    };
    let width = parse_dim(&next_token(bytes, &mut pos)?)?;
    let height = parse_dim(&next_token(bytes, &mut pos)?)?;
    let maxval = parse_dim(&next_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(Error::Format(format!("only maxval 255 is supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing separator after maxval".into())),
    }
    let need = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::Truncated { expected: need, found: raster.len() });
    }
    ImageU8::new(height, width, channels, raster[..need].to_vec())
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            None => return Err(Error::Format("unexpected end of image header".into())),
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| Error::Format("non-ASCII header".into()))
}

fn parse_dim(tok: &str) -> Result<usize> {
    tok.parse().map_err(|_| Error::Format(format!("bad header number {tok:?}")))
}

pub fn write_image(path: impl AsRef<Path>, img: &ImageU8) -> Result<()> {
    fs::write(path, image_to_bytes(img))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageU8> {
    image_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_bit_exact() {
        let t = Tensor::new(vec![2, 2], vec![1.5, -0.0, 1e-300, -7.25]).unwrap();
        let bytes = tensor_to_bytes(&t);
        let (back, used) = tensor_from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
        assert_eq!(back.shape(), t.shape());
    }

    #[test]
    fn tensor_errors() {
        let t = Tensor::zeros(vec![3]);
        let bytes = tensor_to_bytes(&t);
        assert!(matches!(tensor_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(tensor_from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(tensor_from_bytes(&bytes[..6]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn pgm_and_ppm_round_trip() {
        let g = ImageU8::new(2, 3, 1, vec![0, 1, 2, 3, 4, 255]).unwrap();
        assert_eq!(image_from_bytes(&image_to_bytes(&g)).unwrap(), g);
        let c = ImageU8::new(1, 2, 3, vec![9, 8, 7, 6, 5, 4]).unwrap();
        assert_eq!(image_from_bytes(&image_to_bytes(&c)).unwrap(), c);
    }

    #[test]
    fn p5_header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20]);
        let img = image_from_bytes(&bytes).unwrap();
        assert_eq!((img.channels(), img.width(), img.height()), (1, 2, 1));
        assert_eq!(img.pixels(), &[10, 20]);
    }

    #[test]
    fn image_errors() {
        assert!(image_from_bytes(b"P2\n1 1\n255\n0").is_err());
        assert!(matches!(image_from_bytes(b"P5\n2 2\n255\n\x01"), Err(Error::Truncated { .. })));
        assert!(image_from_bytes(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}
