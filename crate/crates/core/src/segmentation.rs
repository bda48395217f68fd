//! Foreground segmentation with a pixel-level linear SVM.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{HyperCube, Mask, SpectralCurve};
use crate::linear::{dot, train_hinge, LinearFit, SgdParams};
use crate::rng::stage_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelLabel {
    Foreground,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelSvmModel {
    pub bands: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained_on: usize,
    pub hyperparams: SgdParams,
}

impl PixelSvmModel {
    pub fn decision(&self, spectrum: &[f32]) -> f64 {
        dot(&self.weights, spectrum) + self.bias
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if model.weights.len() != model.bands {
            return Err(Error::Format("weights length differs from band count".into()));
        }
        Ok(model)
    }
}

/// Trains foreground (+1) against background (-1).
pub fn train_pixel_svm(samples: &[(SpectralCurve, PixelLabel)], params: &SgdParams) -> Result<PixelSvmModel> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no labelled pixels".into()));
    }
    let bands = samples[0].0.len();
    if samples.iter().any(|(c, _)| c.len() != bands) {
        return Err(Error::DimensionMismatch("labelled spectra differ in length".into()));
    }
    let xs: Vec<&[f32]> = samples.iter().map(|(c, _)| c.values.as_slice()).collect();
    let ys: Vec<f64> = samples
        .iter()
        .map(|(_, l)| match l {
            PixelLabel::Foreground => 1.0,
            PixelLabel::Background => -1.0,
        })
        .collect();
    let LinearFit { weights, bias } = train_hinge(&xs, &ys, params)?;
    Ok(PixelSvmModel { bands, weights, bias, trained_on: samples.len(), hyperparams: *params })
}

/// Up to `per_class` foreground and `per_class` background pixels drawn
/// without replacement from an annotated cube.
pub fn sample_labelled_pixels(
    cube: &HyperCube,
    annotation: &Mask,
    per_class: usize,
    seed: u64,
) -> Result<Vec<(SpectralCurve, PixelLabel)>> {
    cube.check_mask(annotation)?;
    let mut rng = stage_rng(seed);
    let (mut fg, mut bg): (Vec<usize>, Vec<usize>) = (0..cube.pixel_count()).partition(|&p| annotation.bits()[p]);
    fg.shuffle(&mut rng);
    bg.shuffle(&mut rng);
    let curve =
        |p: usize| SpectralCurve { wavelengths_nm: cube.wavelengths().to_vec(), values: cube.spectrum_at(p).to_vec() };
    let mut out = Vec::new();
    for (pixels, label) in [(fg, PixelLabel::Foreground), (bg, PixelLabel::Background)] {
        out.extend(pixels.into_iter().take(per_class).map(|p| (curve(p), label)));
    }
    Ok(out)
}

/// `mask(r, c) = w . spectrum(r, c) + b > 0`.
pub fn segment(cube: &HyperCube, model: &PixelSvmModel) -> Result<Mask> {
    if cube.bands() != model.weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} weights, cube has {} bands",
            model.weights.len(),
            cube.bands()
        )));
    }
    let bits: Vec<bool> =
        (0..cube.pixel_count()).into_par_iter().map(|p| model.decision(cube.spectrum_at(p)) > 0.0).collect();
    Mask::new(cube.height(), cube.width(), bits)
}

/// Drops 4-connected foreground components smaller than `min_component_px`.
pub fn mask_clean(mask: &Mask, min_component_px: usize) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let mut out = mask.clone();
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    for start in 0..h * w {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        component.clear();
        while let Some(p) = queue.pop_front() {
            component.push(p);
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if !seen[q] && mask.bits()[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        if component.len() < min_component_px {
            for &p in &component {
                out.set(p / w, p % w, false);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{even_wavelengths, CubeKind};

    fn model(bias: f64) -> PixelSvmModel {
        PixelSvmModel {
            bands: 3,
            weights: vec![0.0; 3],
            bias,
            trained_on: 1,
            hyperparams: SgdParams { lambda: 1.0, epochs: 1, seed: 0 },
        }
    }

    fn cube() -> HyperCube {
        HyperCube::from_fn(4, 5, even_wavelengths(3, 700.0, 800.0), CubeKind::Reflectance, |r, c, b| {
            (r + c + b) as f32 * 0.1
        })
        .unwrap()
    }

    #[test]
    fn constant_classifiers() {
        assert_eq!(segment(&cube(), &model(1.0)).unwrap().count(), 20);
        assert_eq!(segment(&cube(), &model(-1.0)).unwrap().count(), 0);
    }

    #[test]
    fn band_mismatch() {
        let mut m = model(1.0);
        m.weights.push(0.0);
        assert!(segment(&cube(), &m).is_err());
    }

    #[test]
    fn separable_point_masses() {
        let wl = even_wavelengths(11, 690.0, 840.0);
        let samples: Vec<_> = (0..40)
            .map(|i| {
                let (v, l) = if i % 2 == 0 { (1.0, PixelLabel::Foreground) } else { (0.0, PixelLabel::Background) };
                (SpectralCurve { wavelengths_nm: wl.clone(), values: vec![v; 11] }, l)
            })
            .collect();
        let p = SgdParams { lambda: 1e-3, epochs: 10, seed: 1 };
        let m = train_pixel_svm(&samples, &p).unwrap();
        for (c, l) in &samples {
            assert_eq!(m.decision(&c.values) > 0.0, *l == PixelLabel::Foreground);
        }
        assert_eq!(m, train_pixel_svm(&samples, &p).unwrap());
    }

    #[test]
    fn training_input_errors() {
        let p = SgdParams { lambda: 1e-3, epochs: 1, seed: 1 };
        assert!(matches!(train_pixel_svm(&[], &p), Err(Error::EmptyInput(_))));
        let c = SpectralCurve { wavelengths_nm: vec![1.0], values: vec![1.0] };
        assert!(matches!(
            train_pixel_svm(&[(c.clone(), PixelLabel::Foreground), (c, PixelLabel::Foreground)], &p),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn decision_scale_invariance() {
        let c = cube();
        let m = PixelSvmModel { weights: vec![1.0, -2.0, 0.5], bias: 0.05, ..model(0.0) };
        let scaled =
            PixelSvmModel { weights: m.weights.iter().map(|w| w * 3.7).collect(), bias: m.bias * 3.7, ..m.clone() };
        assert_eq!(segment(&c, &m).unwrap(), segment(&c, &scaled).unwrap());
    }

    #[test]
    fn clean_identity_and_blob_removal() {
        let m = Mask::from_fn(6, 6, |r, c| (r * 5 + c * 3) % 4 == 0);
        assert_eq!(mask_clean(&m, 1), m);
        let blob = Mask::from_fn(5, 5, |r, c| r == 2 && (1..4).contains(&c));
        assert_eq!(mask_clean(&blob, 4).count(), 0);
        assert_eq!(mask_clean(&blob, 3), blob);
    }

    #[test]
    fn clean_uses_four_connectivity() {
        // two diagonal pixels are separate components
        let m = Mask::from_fn(3, 3, |r, c| (r, c) == (0, 0) || (r, c) == (1, 1));
        assert_eq!(mask_clean(&m, 2).count(), 0);
    }
}
