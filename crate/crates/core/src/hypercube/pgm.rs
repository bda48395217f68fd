//! Binary PGM (P5). 8-bit masks use 255 for foreground; 16-bit images are
//! big-endian per the netpbm convention.

use std::fs;
use std::path::Path;

use super::Mask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn encode_pgm8(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

pub fn encode_pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PgmImage> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("PGM header ended early".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(bytes)?;
    if magic != "P5" {
        return Err(Error::Format(format!("expected P5 PGM, found {magic:?}")));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token(bytes)?;
        t.parse().map_err(|_| Error::Format(format!("bad PGM {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates header and raster
    let body = &bytes[(pos + 1).min(bytes.len())..];
    let n = width * height;
    let samples: Vec<u16> = if maxval < 256 {
        if body.len() < n {
            return Err(Error::Truncated { expected: n, found: body.len() });
        }
        body[..n].iter().map(|&b| b as u16).collect()
    } else {
        if body.len() < 2 * n {
            return Err(Error::Truncated { expected: 2 * n, found: body.len() });
        }
        body[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok(PgmImage { width, height, maxval: maxval as u16, samples })
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let samples: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    fs::write(path, encode_pgm8(mask.width(), mask.height(), &samples))?;
    Ok(())
}

/// Any non-zero sample reads as foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let img = decode_pgm(&fs::read(path)?)?;
    Mask::new(img.height, img.width, img.samples.iter().map(|&s| s != 0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_bytes() {
        let mask = Mask::from_fn(2, 3, |r, c| r == c);
        let samples: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
        let bytes = encode_pgm8(3, 2, &samples);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[255, 0, 0, 0, 255, 0]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.samples, vec![255, 0, 0, 0, 255, 0]);
    }

    #[test]
    fn sixteen_bit_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x02, 0xff, 0xff]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.samples, vec![0x0102, 0xffff]);
        let mut expected = b"P5\n2 1\n65535\n".to_vec();
        expected.extend_from_slice(&[0x01, 0x02, 0xff, 0xff]);
        assert_eq!(encode_pgm16(2, 1, &img.samples), expected);
    }

    #[test]
    fn rejects_ascii_pgm() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
