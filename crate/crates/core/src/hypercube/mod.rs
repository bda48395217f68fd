//! Cube, mask and spectral-curve data model.
//!
//! Cubes are stored band-interleaved-by-pixel: the flat index of
//! `(row, col, band)` is `((row * width) + col) * bands + band`, so a pixel's
//! whole spectrum is one contiguous slice.

mod hsc;
mod pgm;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hsc::{decode_cube, encode_cube, load_cube, save_cube, HSC_MAGIC};
pub use pgm::{decode_pgm, encode_pgm16, encode_pgm8, load_mask, save_mask, PgmImage};

/// What the cube values mean physically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeKind {
    RawDn,
    Reflectance,
}

impl CubeKind {
    pub fn code(self) -> u8 {
        match self {
            CubeKind::RawDn => 0,
            CubeKind::Reflectance => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CubeKind::RawDn),
            1 => Some(CubeKind::Reflectance),
            _ => None,
        }
    }
}

/// An H x W x B cube of 32-bit samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    wavelengths_nm: Vec<f32>,
    data: Vec<f32>,
    kind: CubeKind,
}

impl HyperCube {
    /// Validates every cube invariant and takes ownership of the buffers.
    pub fn new(height: usize, width: usize, wavelengths_nm: Vec<f32>, data: Vec<f32>, kind: CubeKind) -> Result<Self> {
        let bands = wavelengths_nm.len();
        check_dims(height, width, bands)?;
        let expected = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(bands))
            .ok_or(Error::DimensionOverflow { height: height as u64, width: width as u64, bands: bands as u64 })?;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!("data length {} != {height}x{width}x{bands}", data.len())));
        }
        check_wavelengths(&wavelengths_nm)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if kind == CubeKind::Reflectance {
            if let Some(i) = data.iter().position(|&v| v < 0.0) {
                return Err(Error::InvalidValue(format!("negative reflectance {} at flat index {i}", data[i])));
            }
        }
        Ok(Self { height, width, bands, wavelengths_nm, data, kind })
    }

    /// Builds a cube by evaluating `f(row, col, band)` in storage order.
    pub fn from_fn(
        height: usize,
        width: usize,
        wavelengths_nm: Vec<f32>,
        kind: CubeKind,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let bands = wavelengths_nm.len();
        check_dims(height, width, bands)?;
        let mut data = Vec::with_capacity(height * width * bands);
        for r in 0..height {
            for c in 0..width {
                for b in 0..bands {
                    data.push(f(r, c, b));
                }
            }
        }
        Self::new(height, width, wavelengths_nm, data, kind)
    }

    pub fn constant(height: usize, width: usize, wavelengths_nm: Vec<f32>, kind: CubeKind, value: f32) -> Result<Self> {
        Self::from_fn(height, width, wavelengths_nm, kind, |_, _, _| value)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn wavelengths(&self) -> &[f32] {
        &self.wavelengths_nm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn kind(&self) -> CubeKind {
        self.kind
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        ((row * self.width) + col) * self.bands + band
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[self.index(row, col, band)]
    }

    /// Contiguous spectrum of one pixel. Panics when out of range.
    #[inline]
    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = self.index(row, col, 0);
        &self.data[start..start + self.bands]
    }

    /// Spectrum by flat pixel index (`row * width + col`).
    #[inline]
    pub fn spectrum_at(&self, pixel: usize) -> &[f32] {
        &self.data[pixel * self.bands..(pixel + 1) * self.bands]
    }

    pub fn spectra(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.bands)
    }

    pub fn pixel_spectrum(&self, row: usize, col: usize) -> Result<SpectralCurve> {
        if row >= self.height || col >= self.width {
            return Err(Error::IndexOutOfRange { row, col, height: self.height, width: self.width });
        }
        Ok(SpectralCurve { wavelengths_nm: self.wavelengths_nm.clone(), values: self.spectrum(row, col).to_vec() })
    }

    /// Same geometry, new payload and kind; payload is re-validated.
    pub fn with_data(&self, data: Vec<f32>, kind: CubeKind) -> Result<Self> {
        Self::new(self.height, self.width, self.wavelengths_nm.clone(), data, kind)
    }

    pub fn same_shape(&self, other: &HyperCube) -> bool {
        self.height == other.height && self.width == other.width && self.bands == other.bands
    }

    pub fn check_mask(&self, mask: &Mask) -> Result<()> {
        if mask.height() != self.height || mask.width() != self.width {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs cube {}x{}",
                mask.height(),
                mask.width(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

fn check_dims(height: usize, width: usize, bands: usize) -> Result<()> {
    for (name, v) in [("height", height), ("width", width), ("bands", bands)] {
        if v == 0 {
            return Err(Error::ZeroDimension(name.to_string()));
        }
    }
    Ok(())
}

fn check_wavelengths(w: &[f32]) -> Result<()> {
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!("non-finite wavelength at band {i}")));
    }
    if w.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidValue("wavelengths not strictly increasing".into()));
    }
    Ok(())
}

/// Evenly spaced band centres from `first_nm` to `last_nm` inclusive.
pub fn even_wavelengths(bands: usize, first_nm: f32, last_nm: f32) -> Vec<f32> {
    if bands == 1 {
        return vec![first_nm];
    }
    let step = (last_nm - first_nm) / (bands - 1) as f32;
    (0..bands).map(|i| first_nm + step * i as f32).collect()
}

/// Binary foreground map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch(format!("mask bits {} != {height}x{width}", bits.len())));
        }
        Ok(Self { height, width, bits })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, bits: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// A per-band vector with its wavelength axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCurve {
    pub wavelengths_nm: Vec<f32>,
    pub values: Vec<f32>,
}

impl SpectralCurve {
    pub fn new(wavelengths_nm: Vec<f32>, values: Vec<f32>) -> Result<Self> {
        let curve = Self { wavelengths_nm, values };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if self.wavelengths_nm.len() != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "curve has {} wavelengths but {} values",
                self.wavelengths_nm.len(),
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `wavelength_nm,value` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("wavelength_nm,value\n");
        for (w, v) in self.wavelengths_nm.iter().zip(&self.values) {
            let _ = writeln!(out, "{w},{v}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "wavelength_nm,value" => {}
            other => return Err(Error::Format(format!("bad curve header {other:?}"))),
        }
        let (mut wl, mut vals) = (Vec::new(), Vec::new());
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (a, b) = line.split_once(',').ok_or_else(|| Error::Format(format!("bad curve row {line:?}")))?;
            let parse = |s: &str| s.trim().parse::<f32>().map_err(|e| Error::Format(format!("bad number {s:?}: {e}")));
            wl.push(parse(a)?);
            vals.push(parse(b)?);
        }
        Self::new(wl, vals)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wl(b: usize) -> Vec<f32> {
        even_wavelengths(b, 690.0, 840.0)
    }

    #[test]
    fn paper_band_axis() {
        let w = wl(11);
        assert_eq!(w.len(), 11);
        assert_eq!(w[0], 690.0);
        assert_eq!(w[10], 840.0);
        assert_eq!(w[1], 705.0);
    }

    #[test]
    fn constant_cube_spectrum() {
        let cube = HyperCube::constant(4, 5, wl(11), CubeKind::Reflectance, 0.7).unwrap();
        let s = cube.pixel_spectrum(3, 4).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn band_index_spectrum() {
        let cube = HyperCube::from_fn(3, 3, wl(11), CubeKind::RawDn, |_, _, b| b as f32).unwrap();
        let s = cube.pixel_spectrum(1, 2).unwrap();
        let expected: Vec<f32> = (0..11).map(|b| b as f32).collect();
        assert_eq!(s.values, expected);
    }

    #[test]
    fn spectrum_index_out_of_range() {
        let cube = HyperCube::constant(4, 5, wl(3), CubeKind::RawDn, 0.0).unwrap();
        assert!(matches!(cube.pixel_spectrum(4, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(cube.pixel_spectrum(0, 5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn construction_rejects_bad_cubes() {
        assert!(matches!(HyperCube::new(0, 0, wl(11), vec![], CubeKind::RawDn), Err(Error::ZeroDimension(_))));
        assert!(matches!(
            HyperCube::new(1, 1, vec![700.0, 690.0], vec![0.0, 0.0], CubeKind::RawDn),
            Err(Error::InvalidValue(_))
        ));
        assert!(matches!(HyperCube::new(1, 1, wl(2), vec![0.0, f32::NAN], CubeKind::RawDn), Err(Error::NonFinite(1))));
        assert!(matches!(
            HyperCube::new(1, 1, wl(2), vec![0.0, -0.1], CubeKind::Reflectance),
            Err(Error::InvalidValue(_))
        ));
        // negative raw counts are legal before dark correction
        assert!(HyperCube::new(1, 1, wl(2), vec![0.0, -0.1], CubeKind::RawDn).is_ok());
    }

    #[test]
    fn curve_csv_round_trip() {
        let c = SpectralCurve::new(wl(3), vec![0.25, 0.5, 1.0]).unwrap();
        let text = c.to_csv();
        assert!(text.starts_with("wavelength_nm,value\n"));
        assert_eq!(SpectralCurve::from_csv(&text).unwrap(), c);
    }

    #[test]
    fn mask_iou() {
        let a = Mask::from_fn(2, 2, |r, _| r == 0);
        let b = Mask::from_fn(2, 2, |_, c| c == 0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
    }
}
