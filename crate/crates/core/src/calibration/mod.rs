//! Radiometric calibration: dark subtraction, white-panel detection,
//! white-reference extraction and band-wise normalization.

mod kmeans;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{CubeKind, HyperCube, Mask, SpectralCurve};

pub use kmeans::{kmeans_spectra, KMeansResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationParams {
    pub kmeans_k: usize,
    pub kmeans_iters: usize,
    /// Fraction of the brightest panel pixels dropped as possibly saturated.
    pub saturation_reject_fraction: f64,
    pub reference_pixel_count: usize,
    pub epsilon: f64,
    /// Known reflectance of the white panel; the measured white curve is
    /// divided by it before normalizing so the panel itself maps to this value.
    pub spectralon_reflectance: f64,
    pub seed: u64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            kmeans_k: 4,
            kmeans_iters: 50,
            saturation_reject_fraction: 0.01,
            reference_pixel_count: 1000,
            epsilon: 1e-8,
            spectralon_reflectance: 0.99,
            seed: 0,
        }
    }
}

impl CalibrationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.kmeans_k < 2 {
            return bad(format!("kmeans_k {} < 2", self.kmeans_k));
        }
        if !(0.0..0.5).contains(&self.saturation_reject_fraction) {
            return bad(format!("saturation_reject_fraction {} not in [0, 0.5)", self.saturation_reject_fraction));
        }
        if self.reference_pixel_count == 0 {
            return bad("reference_pixel_count must be >= 1".into());
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon {} must be > 0", self.epsilon));
        }
        if !(self.spectralon_reflectance > 0.0 && self.spectralon_reflectance.is_finite()) {
            return bad(format!("spectralon_reflectance {} must be > 0", self.spectralon_reflectance));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    /// Measured (dark-corrected) mean spectrum of the selected panel pixels.
    pub white_curve: SpectralCurve,
    #[serde(skip)]
    pub spectralon_mask: Mask,
    pub spectralon_pixel_count: usize,
    pub saturated_pixels_dropped: usize,
    pub reference_pixel_count_used: usize,
    pub warnings: Vec<String>,
}

/// `max(0, raw - dark)`; returns the cube and how many samples were clamped.
pub fn dark_correct(raw: &HyperCube, dark: &HyperCube) -> Result<(HyperCube, usize)> {
    if !raw.same_shape(dark) {
        return Err(Error::DimensionMismatch(format!(
            "raw {}x{}x{} vs dark {}x{}x{}",
            raw.height(),
            raw.width(),
            raw.bands(),
            dark.height(),
            dark.width(),
            dark.bands()
        )));
    }
    let mut clamped = 0;
    let data = raw
        .data()
        .iter()
        .zip(dark.data())
        .map(|(&r, &d)| {
            let v = r - d;
            if v < 0.0 {
                clamped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok((raw.with_data(data, CubeKind::RawDn)?, clamped))
}

/// Pixels of the k-means cluster whose centroid has the highest band mean.
pub fn find_spectralon(cube: &HyperCube, params: &CalibrationParams) -> Result<Mask> {
    params.validate()?;
    let km = kmeans_spectra(cube, params.kmeans_k, params.kmeans_iters, params.seed)?;
    let brightness: Vec<f64> = km.centroids.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let sizes = km.cluster_sizes();
    let mut best = None::<usize>;
    for (j, &b) in brightness.iter().enumerate() {
        if sizes[j] == 0 {
            continue;
        }
        if best.is_none_or(|i| b > brightness[i]) {
            best = Some(j);
        }
    }
    let best = best.expect("at least one non-empty cluster") as u32;
    Mask::new(cube.height(), cube.width(), km.labels.iter().map(|&l| l == best).collect())
}

/// Mean spectrum of the brightest panel pixels after dropping the top
/// `saturation_reject_fraction`. Pixels rank by band-mean, descending, ties
/// by (row, col) ascending.
pub fn white_reference(
    cube: &HyperCube,
    spectralon: &Mask,
    params: &CalibrationParams,
) -> Result<(SpectralCurve, CalibrationReport)> {
    params.validate()?;
    cube.check_mask(spectralon)?;
    let mut ranked: Vec<(usize, f64)> = spectralon
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(p, _)| {
            let s = cube.spectrum_at(p);
            (p, s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64)
        })
        .collect();
    if ranked.is_empty() {
        return Err(Error::EmptyMask);
    }
    // stable sort keeps row-major order among ties
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));

    let count = ranked.len();
    // the small slack stops 0.01 * 300 = 3.0000000000000004 from rounding up
    let dropped = ((params.saturation_reject_fraction * count as f64) - 1e-9).ceil().max(0.0) as usize;
    let remaining = count - dropped.min(count);
    if remaining == 0 {
        return Err(Error::EmptyInput(format!("all {count} panel pixels rejected as saturated")));
    }
    let used = remaining.min(params.reference_pixel_count);
    let mut warnings = Vec::new();
    if used < params.reference_pixel_count {
        warnings.push(format!(
            "fewer than reference_pixel_count: {used} panel pixels used, {} requested",
            params.reference_pixel_count
        ));
    }

    let bands = cube.bands();
    let mut sums = vec![0.0f64; bands];
    for &(p, _) in &ranked[dropped..dropped + used] {
        for (s, &v) in sums.iter_mut().zip(cube.spectrum_at(p)) {
            *s += v as f64;
        }
    }
    let values: Vec<f32> = sums.iter().map(|s| (s / used as f64) as f32).collect();
    let curve = SpectralCurve::new(cube.wavelengths().to_vec(), values)?;
    let report = CalibrationReport {
        white_curve: curve.clone(),
        spectralon_mask: spectralon.clone(),
        spectralon_pixel_count: count,
        saturated_pixels_dropped: dropped,
        reference_pixel_count_used: used,
        warnings,
    };
    Ok((curve, report))
}

/// `cube / max(white, epsilon)` band by band. Returns warnings for guarded bands.
pub fn white_correct(cube: &HyperCube, white: &SpectralCurve, epsilon: f64) -> Result<(HyperCube, Vec<String>)> {
    if white.len() != cube.bands() {
        return Err(Error::DimensionMismatch(format!(
            "white curve has {} bands, cube has {}",
            white.len(),
            cube.bands()
        )));
    }
    let mut warnings = Vec::new();
    let divisors: Vec<f64> = white
        .values
        .iter()
        .enumerate()
        .map(|(b, &w)| {
            if (w as f64) < epsilon {
                warnings.push(format!("white reference band {b} is {w}; divided by epsilon"));
            }
            (w as f64).max(epsilon)
        })
        .collect();
    let bands = cube.bands();
    let data: Vec<f32> = cube
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let q = (v as f64 / divisors[i % bands]) as f32;
            // f32 overflow when dividing by a tiny epsilon
            if q.is_finite() {
                q
            } else {
                f32::MAX
            }
        })
        .collect();
    Ok((cube.with_data(data, CubeKind::Reflectance)?, warnings))
}

/// Full chain: dark correction, panel detection, white reference, division.
pub fn calibrate(
    raw: &HyperCube,
    dark: &HyperCube,
    params: &CalibrationParams,
) -> Result<(HyperCube, CalibrationReport)> {
    params.validate()?;
    let (corrected, clamped) = dark_correct(raw, dark)?;
    let spectralon = find_spectralon(&corrected, params)?;
    let (white, mut report) = white_reference(&corrected, &spectralon, params)?;
    if clamped > 0 {
        report.warnings.insert(0, format!("{clamped} samples negative after dark subtraction, clamped to 0"));
    }
    if report.spectralon_pixel_count == corrected.pixel_count() {
        report.warnings.push("degenerate clustering: white-panel cluster covers the whole image".into());
    }
    let scale = params.spectralon_reflectance;
    let full_white = SpectralCurve::new(
        white.wavelengths_nm.clone(),
        white.values.iter().map(|&w| (w as f64 / scale) as f32).collect(),
    )?;
    let (reflectance, guard_warnings) = white_correct(&corrected, &full_white, params.epsilon)?;
    report.warnings.extend(guard_warnings);
    Ok((reflectance, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::even_wavelengths;

    fn cube(h: usize, w: usize, v: f32) -> HyperCube {
        HyperCube::constant(h, w, even_wavelengths(11, 690.0, 840.0), CubeKind::RawDn, v).unwrap()
    }

    #[test]
    fn dark_equal_to_raw() {
        let (out, clamped) = dark_correct(&cube(3, 3, 0.4), &cube(3, 3, 0.4)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(clamped, 0);
    }

    #[test]
    fn dark_subtraction_arithmetic() {
        let (out, _) = dark_correct(&cube(3, 3, 0.5), &cube(3, 3, 0.1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5f32 - 0.1f32));
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-7));
    }

    #[test]
    fn dark_clamps_and_warns() {
        let (out, clamped) = dark_correct(&cube(3, 3, 0.1), &cube(3, 3, 0.5)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(clamped, 9 * 11);
        let (_, report) = calibrate(&cube(3, 3, 0.1), &cube(3, 3, 0.5), &CalibrationParams::default()).unwrap();
        assert!(report.warnings[0].contains("clamped"));
    }

    #[test]
    fn dark_shape_mismatch() {
        assert!(matches!(dark_correct(&cube(3, 3, 0.1), &cube(3, 4, 0.1)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn identical_panel_pixels() {
        let c = cube(40, 50, 0.8);
        let mask = Mask::filled(40, 50, true);
        let (curve, report) = white_reference(&c, &mask, &CalibrationParams::default()).unwrap();
        assert!(curve.values.iter().all(|&v| v == 0.8));
        assert_eq!(report.spectralon_pixel_count, 2000);
        assert_eq!(report.saturated_pixels_dropped, 20);
        assert_eq!(report.reference_pixel_count_used, 1000);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn small_panel_warns() {
        let c = cube(5, 10, 0.8);
        let mask = Mask::filled(5, 10, true);
        let (_, report) = white_reference(&c, &mask, &CalibrationParams::default()).unwrap();
        assert_eq!(report.saturated_pixels_dropped, 1);
        assert_eq!(report.reference_pixel_count_used, 49);
        assert!(report.warnings[0].contains("fewer than reference_pixel_count"));
    }

    #[test]
    fn empty_panel_mask() {
        let c = cube(5, 10, 0.8);
        assert!(matches!(
            white_reference(&c, &Mask::filled(5, 10, false), &CalibrationParams::default()),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn ranking_drops_brightest_first() {
        // 100 pixels with distinct brightness; 1 dropped, top 3 of the rest used
        let c = HyperCube::from_fn(10, 10, vec![700.0, 710.0], CubeKind::RawDn, |r, c, _| (r * 10 + c) as f32).unwrap();
        let params = CalibrationParams { reference_pixel_count: 3, ..Default::default() };
        let (curve, report) = white_reference(&c, &Mask::filled(10, 10, true), &params).unwrap();
        assert_eq!(report.saturated_pixels_dropped, 1);
        assert_eq!(curve.values, vec![97.0, 97.0]);
    }

    #[test]
    fn white_broadcast_gives_unity() {
        let white =
            SpectralCurve::new(even_wavelengths(11, 690.0, 840.0), (0..11).map(|b| 0.3 + 0.05 * b as f32).collect())
                .unwrap();
        let c =
            HyperCube::from_fn(4, 4, white.wavelengths_nm.clone(), CubeKind::RawDn, |_, _, b| white.values[b]).unwrap();
        let (out, warnings) = white_correct(&c, &white, 1e-8).unwrap();
        assert_eq!(out.kind(), CubeKind::Reflectance);
        assert!(out.data().iter().all(|&v| v == 1.0));
        assert!(warnings.is_empty());
    }

    #[test]
    fn zero_white_band_is_guarded() {
        let mut values = vec![0.5f32; 11];
        values[3] = 0.0;
        let white = SpectralCurve::new(even_wavelengths(11, 690.0, 840.0), values).unwrap();
        let (out, warnings) = white_correct(&cube(2, 2, 0.25), &white, 1e-8).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert_eq!(warnings.len(), 1);
        assert!((out.get(0, 0, 3) - 0.25e8).abs() / 0.25e8 < 1e-6);
    }

    #[test]
    fn white_length_mismatch() {
        let white = SpectralCurve::new(vec![700.0], vec![1.0]).unwrap();
        assert!(white_correct(&cube(2, 2, 0.25), &white, 1e-8).is_err());
    }

    #[test]
    fn uniform_cube_is_degenerate() {
        let c = cube(6, 6, 0.5);
        let (_, report) = calibrate(&c, &cube(6, 6, 0.0), &CalibrationParams::default()).unwrap();
        assert_eq!(report.spectralon_pixel_count, 36);
        assert!(report.warnings.iter().any(|w| w.contains("degenerate")));
    }

    #[test]
    fn one_pixel_image_rejects_k2() {
        let c = cube(1, 1, 0.5);
        let params = CalibrationParams { kmeans_k: 2, ..Default::default() };
        assert!(matches!(find_spectralon(&c, &params), Err(Error::TooManyClusters { .. })));
    }

    #[test]
    fn params_validation() {
        let p = CalibrationParams { saturation_reject_fraction: 0.5, ..Default::default() };
        assert!(p.validate().is_err());
        let p = CalibrationParams { kmeans_k: 1, ..Default::default() };
        assert!(p.validate().is_err());
        let p = CalibrationParams { reference_pixel_count: 0, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
