//! Spectral analysis: mean curves, spectral angles and 3x3 SAM graph
//! Laplacians.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{encode_pgm16, HyperCube, Mask, SpectralCurve};

/// Per-band mean over the mask's foreground pixels.
pub fn mean_spectral_curve(cube: &HyperCube, mask: &Mask) -> Result<SpectralCurve> {
    cube.check_mask(mask)?;
    let mut sums = vec![0.0f64; cube.bands()];
    let mut n = 0usize;
    for (p, _) in mask.bits().iter().enumerate().filter(|(_, &b)| b) {
        n += 1;
        for (s, &v) in sums.iter_mut().zip(cube.spectrum_at(p)) {
            *s += v as f64;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    SpectralCurve::new(cube.wavelengths().to_vec(), sums.iter().map(|s| (s / n as f64) as f32).collect())
}

/// Spectral angle between two spectra, in `[0, pi]`.
///
/// Equal to `acos(clamp(x.y / (|x||y|), -1, 1))`, evaluated as
/// `atan2(|x ^ y|, x.y)` with the wedge norm from Lagrange's identity
/// `|x ^ y|^2 = sum_{i<j} (x_i y_j - x_j y_i)^2`. That form is exact for
/// identical spectra and well conditioned at small angles, where `acos`
/// loses about half the significant digits.
pub fn sam_angle<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("spectra of length {} and {}", x.len(), y.len())));
    }
    let mut dot = 0.0;
    let (mut xx, mut yy) = (0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a.into(), b.into());
        dot += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(wedge_norm(x, y).atan2(dot))
}

fn wedge_norm<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let (xi, yi) = (x[i].into(), y[i].into());
        for j in i + 1..x.len() {
            let w = xi * y[j].into() - x[j].into() * yi;
            acc += w * w;
        }
    }
    acc.sqrt()
}

/// SAM affinity `cos(theta)` clipped to `[0, 1]`.
pub fn sam_affinity<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    Ok(sam_angle(x, y)?.cos().clamp(0.0, 1.0))
}

/// Graph over a pixel and its in-image foreground 8-neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    /// Centre first, then neighbours in row-major offset order.
    pub pixel_ids: Vec<(usize, usize)>,
    /// Row-major `m x m` matrices.
    pub w: Vec<f64>,
    pub d: Vec<f64>,
    pub l: Vec<f64>,
}

impl LocalGraph {
    pub fn size(&self) -> usize {
        self.pixel_ids.len()
    }

    /// `v^T L v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let m = self.size();
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                acc += v[i] * self.l[i * m + j] * v[j];
            }
        }
        acc
    }
}

const OFFSETS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

fn neighbours(mask: &Mask, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    OFFSETS.iter().filter_map(move |&(dr, dc)| {
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr as usize >= mask.height() || nc as usize >= mask.width() {
            return None;
        }
        let (nr, nc) = (nr as usize, nc as usize);
        mask.get(nr, nc).then_some((nr, nc))
    })
}

/// `L = D - W` over the 3x3 neighbourhood of a foreground pixel, with
/// `W(i, j) = cos(sam_angle)` clipped to `[0, 1]`. Border neighbourhoods
/// shrink instead of padding.
pub fn local_laplacian(cube: &HyperCube, mask: &Mask, r: usize, c: usize) -> Result<LocalGraph> {
    cube.check_mask(mask)?;
    if r >= cube.height() || c >= cube.width() {
        return Err(Error::IndexOutOfRange { row: r, col: c, height: cube.height(), width: cube.width() });
    }
    if !mask.get(r, c) {
        return Err(Error::NotForeground(r, c));
    }
    let mut pixel_ids = vec![(r, c)];
    pixel_ids.extend(neighbours(mask, r, c));
    let m = pixel_ids.len();
    let mut w = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let (a, b) = (pixel_ids[i], pixel_ids[j]);
            let aff = sam_affinity(cube.spectrum(a.0, a.1), cube.spectrum(b.0, b.1))?;
            w[i * m + j] = aff;
            w[j * m + i] = aff;
        }
    }
    let mut d = vec![0.0; m * m];
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        let deg: f64 = w[i * m..(i + 1) * m].iter().sum();
        d[i * m + i] = deg;
        for j in 0..m {
            l[i * m + j] = d[i * m + j] - w[i * m + j];
        }
    }
    Ok(LocalGraph { pixel_ids, w, d, l })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapStatistic {
    /// Mean SAM angle between a pixel and its valid neighbours.
    #[default]
    MeanAngle,
    /// Centre-row sum of the affinity matrix.
    Degree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapNormalization {
    pub min: f64,
    pub max: f64,
    pub valid_pixels: usize,
}

impl ScalarMap {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.valid.get(r, c).then(|| self.values[r * self.width + c])
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(self.valid.bits()).filter(|(_, &v)| v).map(|(&x, _)| x)
    }

    pub fn normalization(&self) -> MapNormalization {
        let (mut min, mut max, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0);
        for v in self.valid_values() {
            min = min.min(v);
            max = max.max(v);
            n += 1;
        }
        if n == 0 {
            (min, max) = (0.0, 0.0);
        }
        MapNormalization { min, max, valid_pixels: n }
    }

    /// 16-bit PGM, min-max scaled over valid pixels; invalid pixels are 0.
    pub fn to_pgm16(&self) -> (Vec<u8>, MapNormalization) {
        let norm = self.normalization();
        let span = norm.max - norm.min;
        let samples: Vec<u16> = self
            .values
            .iter()
            .zip(self.valid.bits())
            .map(|(&v, &ok)| if !ok || span <= 0.0 { 0 } else { (((v - norm.min) / span) * 65535.0).round() as u16 })
            .collect();
        (encode_pgm16(self.width, self.height, &samples), norm)
    }

    /// `row,col,value` for valid pixels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for r in 0..self.height {
            for c in 0..self.width {
                if let Some(v) = self.get(r, c) {
                    let _ = writeln!(out, "{r},{c},{v}");
                }
            }
        }
        out
    }
}

pub fn laplacian_map(cube: &HyperCube, mask: &Mask, statistic: MapStatistic) -> Result<ScalarMap> {
    cube.check_mask(mask)?;
    let (h, w) = (cube.height(), cube.width());
    let cells: Vec<Result<Option<f64>>> = (0..h * w)
        .into_par_iter()
        .map(|p| {
            let (r, c) = (p / w, p % w);
            if !mask.get(r, c) {
                return Ok(None);
            }
            let centre = cube.spectrum(r, c);
            let (mut acc, mut n) = (0.0, 0usize);
            for (nr, nc) in neighbours(mask, r, c) {
                let angle = sam_angle(centre, cube.spectrum(nr, nc))?;
                acc += match statistic {
                    MapStatistic::MeanAngle => angle,
                    MapStatistic::Degree => angle.cos().clamp(0.0, 1.0),
                };
                n += 1;
            }
            Ok(match (n, statistic) {
                (0, _) => None,
                (_, MapStatistic::MeanAngle) => Some(acc / n as f64),
                (_, MapStatistic::Degree) => Some(acc),
            })
        })
        .collect();
    let mut values = vec![0.0; h * w];
    let mut valid = Mask::filled(h, w, false);
    for (p, cell) in cells.into_iter().enumerate() {
        if let Some(v) = cell? {
            values[p] = v;
            valid.set(p / w, p % w, true);
        }
    }
    Ok(ScalarMap { height: h, width: w, values, valid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{even_wavelengths, CubeKind};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn wl(b: usize) -> Vec<f32> {
        even_wavelengths(b, 690.0, 840.0)
    }

    #[test]
    fn angle_examples() {
        let x = [0.3f64, 0.9, 0.2, 0.7];
        assert_eq!(sam_angle(&x, &x).unwrap(), 0.0);
        let e1 = [1.0f64, 0.0, 0.0];
        let e2 = [0.0f64, 1.0, 0.0];
        assert!((sam_angle(&e1, &e2).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((sam_angle(&[1.0f64, 0.0], &[1.0, 1.0]).unwrap() - FRAC_PI_4).abs() < 1e-15);
        assert!(matches!(sam_angle(&[0.0f64, 0.0], &[1.0, 1.0]), Err(Error::ZeroNorm)));
        assert!(sam_angle(&[1.0f64], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn angle_matches_arccos_away_from_zero() {
        let x = [0.2f64, 0.4, 0.1, 0.8, 0.3];
        let y = [0.5f64, 0.1, 0.3, 0.2, 0.6];
        let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        let reference = (dot / (nx * ny)).clamp(-1.0, 1.0).acos();
        assert!((sam_angle(&x, &y).unwrap() - reference).abs() < 1e-12);
    }

    #[test]
    fn mean_curve_cases() {
        let cube = HyperCube::constant(4, 4, wl(5), CubeKind::Reflectance, 0.3).unwrap();
        let mask = Mask::from_fn(4, 4, |r, c| r > c);
        assert!(mean_spectral_curve(&cube, &mask).unwrap().values.iter().all(|&v| v == 0.3));

        let cube =
            HyperCube::from_fn(4, 4, wl(5), CubeKind::Reflectance, |r, c, b| (r * 100 + c * 10 + b) as f32).unwrap();
        let one = Mask::from_fn(4, 4, |r, c| (r, c) == (2, 3));
        assert_eq!(mean_spectral_curve(&cube, &one).unwrap().values, cube.spectrum(2, 3).to_vec());
        assert!(matches!(mean_spectral_curve(&cube, &Mask::filled(4, 4, false)), Err(Error::EmptyMask)));
    }

    #[test]
    fn constant_cube_graph() {
        let cube = HyperCube::constant(5, 5, wl(11), CubeKind::Reflectance, 0.4).unwrap();
        let mask = Mask::filled(5, 5, true);
        let g = local_laplacian(&cube, &mask, 2, 2).unwrap();
        let m = g.size();
        assert_eq!(m, 9);
        for i in 0..m {
            for j in 0..m {
                assert_eq!(g.w[i * m + j], if i == j { 0.0 } else { 1.0 });
            }
        }
        assert_eq!(g.d[0], (m - 1) as f64);
        for i in 0..m {
            let row: f64 = g.l[i * m..(i + 1) * m].iter().sum();
            assert!(row.abs() < 1e-12);
        }
    }

    #[test]
    fn corner_neighbourhood() {
        let cube = HyperCube::constant(5, 5, wl(3), CubeKind::Reflectance, 0.4).unwrap();
        let g = local_laplacian(&cube, &Mask::filled(5, 5, true), 0, 0).unwrap();
        assert_eq!(g.size(), 4);
        assert_eq!(g.pixel_ids, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn background_centre_rejected() {
        let cube = HyperCube::constant(3, 3, wl(3), CubeKind::Reflectance, 0.4).unwrap();
        let mask = Mask::from_fn(3, 3, |r, _| r == 0);
        assert!(matches!(local_laplacian(&cube, &mask, 1, 1), Err(Error::NotForeground(1, 1))));
    }

    #[test]
    fn constant_cube_maps() {
        let cube = HyperCube::constant(4, 6, wl(5), CubeKind::Reflectance, 0.4).unwrap();
        let mask = Mask::from_fn(4, 6, |r, c| !(r == 0 && c == 5));
        let angle = laplacian_map(&cube, &mask, MapStatistic::MeanAngle).unwrap();
        assert!(angle.valid_values().all(|v| v == 0.0));
        let degree = laplacian_map(&cube, &mask, MapStatistic::Degree).unwrap();
        for r in 0..4 {
            for c in 0..6 {
                if mask.get(r, c) {
                    let count = neighbours(&mask, r, c).count();
                    assert_eq!(degree.get(r, c), Some(count as f64));
                } else {
                    assert_eq!(degree.get(r, c), None);
                }
            }
        }
    }

    #[test]
    fn isolated_pixel_is_invalid() {
        let cube = HyperCube::constant(3, 3, wl(3), CubeKind::Reflectance, 0.4).unwrap();
        let mask = Mask::from_fn(3, 3, |r, c| (r, c) == (1, 1));
        let map = laplacian_map(&cube, &mask, MapStatistic::MeanAngle).unwrap();
        assert_eq!(map.valid.count(), 0);
        let (bytes, norm) = map.to_pgm16();
        assert_eq!(norm.valid_pixels, 0);
        assert!(bytes.ends_with(&[0u8; 18]));
    }
}
