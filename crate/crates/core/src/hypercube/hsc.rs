//! HSC container, little-endian:
//!
//! ```text
//! "HSC1" | u32 height | u32 width | u32 bands | u8 kind (0 raw_dn, 1 reflectance)
//! bands x f32 wavelengths_nm
//! height*width*bands x f32 payload (BIP)
//! ```

use std::fs;
use std::path::Path;

use super::{CubeKind, HyperCube};
use crate::error::{Error, Result};

pub const HSC_MAGIC: [u8; 4] = *b"HSC1";
const HEADER_LEN: usize = 17;

pub fn encode_cube(cube: &HyperCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (cube.bands() + cube.data().len()));
    out.extend_from_slice(&HSC_MAGIC);
    for v in [cube.height(), cube.width(), cube.bands()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(cube.kind().code());
    for w in cube.wavelengths() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for v in cube.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != HSC_MAGIC {
        return Err(Error::BadMagic { expected: HSC_MAGIC, found: magic });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (height, width, bands) = (u32_at(4) as u64, u32_at(8) as u64, u32_at(12) as u64);
    let kind =
        CubeKind::from_code(bytes[16]).ok_or_else(|| Error::Format(format!("unknown cube kind {}", bytes[16])))?;
    let overflow = Error::DimensionOverflow { height, width, bands };
    let values = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(bands))
        .and_then(|n| n.checked_add(bands))
        .ok_or(overflow)?;
    let expected = values
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or(Error::DimensionOverflow { height, width, bands })?;
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - expected)));
    }
    let floats: Vec<f32> =
        bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let (wavelengths, data) = floats.split_at(bands as usize);
    HyperCube::new(height as usize, width as usize, wavelengths.to_vec(), data.to_vec(), kind)
}

pub fn save_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    // a HyperCube cannot be built with a zero extent, but the format also
    // forbids it so keep the check next to the writer
    if cube.height() == 0 || cube.width() == 0 {
        return Err(Error::ZeroDimension("spatial extent".into()));
    }
    fs::write(path, encode_cube(cube))?;
    Ok(())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    decode_cube(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::even_wavelengths;

    fn header(h: u32, w: u32, b: u32, kind: u8) -> Vec<u8> {
        let mut v = HSC_MAGIC.to_vec();
        for x in [h, w, b] {
            v.extend_from_slice(&x.to_le_bytes());
        }
        v.push(kind);
        v
    }

    #[test]
    fn bad_magic() {
        let mut bytes = header(1, 1, 1, 0);
        bytes[..4].copy_from_slice(b"XXXX");
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_cube(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = header(2, 2, 1, 0);
        bytes.extend_from_slice(&700f32.to_le_bytes());
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_cube(&bytes), Err(Error::Truncated { expected: 37, found: 29 })));
    }

    #[test]
    fn non_finite_payload() {
        let mut bytes = header(1, 1, 1, 0);
        bytes.extend_from_slice(&700f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_cube(&bytes), Err(Error::NonFinite(0))));
    }

    #[test]
    fn dimension_overflow() {
        let bytes = header(u32::MAX, u32::MAX, u32::MAX, 0);
        assert!(matches!(decode_cube(&bytes), Err(Error::DimensionOverflow { .. })));
    }

    #[test]
    fn unknown_kind() {
        let mut bytes = header(1, 1, 1, 7);
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_cube(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn constant_payload_bit_patterns() {
        let cube = HyperCube::constant(3, 2, even_wavelengths(4, 690.0, 840.0), CubeKind::RawDn, 1.0).unwrap();
        let bytes = encode_cube(&cube);
        assert_eq!(bytes.len(), 17 + 4 * (4 + 24));
        let payload = &bytes[17 + 16..];
        assert!(payload.chunks_exact(4).all(|c| c == 1.0f32.to_le_bytes()));
    }

    #[test]
    fn paper_geometry_header() {
        let cube =
            HyperCube::constant(216, 409, even_wavelengths(11, 690.0, 840.0), CubeKind::Reflectance, 0.5).unwrap();
        let back = decode_cube(&encode_cube(&cube)).unwrap();
        assert_eq!((back.height(), back.width(), back.bands()), (216, 409, 11));
    }
}
