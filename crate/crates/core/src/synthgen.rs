//! Deterministic synthetic scenes: a leaf, a white reference panel and a dark
//! background, imaged through a per-band illumination gain with additive
//! dark offset and Gaussian read noise.
//!
//! Leaf reflectance is a red-edge vegetation curve plus a chlorotic mottle:
//!
//! ```text
//! base(l)  = 0.06 + 0.44 * s(l)
//! pale(l)  = 0.25 * (1 - s(l)) - 0.15 * s(l)
//! s(l)     = 1 / (1 + exp(-(l - 720 nm) / 12 nm))
//! leaf     = base(l) + A * t(r, c) * pale(l)
//! ```
//!
//! `t` is value noise in `[0, 1)`: a seeded lattice of uniform values with
//! spacing `L` px, bilinearly interpolated and randomly phase-shifted. The
//! class sets `L = mosaic_scale_px * f(class)` and
//! `A = mosaic_amplitude * g(class)` through [`mosaic_factors`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{even_wavelengths, CubeKind, HyperCube, Mask, SpectralCurve};
use crate::rating::Rating;
use crate::rng::{derive_seed, gaussian, stage_rng, uniform, uniform_int};

pub const SPECTRALON_REFLECTANCE: f32 = 0.99;
pub const BACKGROUND_REFLECTANCE: f32 = 0.05;
pub const REFLECTANCE_CEILING: f32 = 1.2;

const RED_EDGE_NM: f64 = 720.0;
const RED_EDGE_WIDTH_NM: f64 = 12.0;

/// Axis-aligned pixel rectangle, `[row, row + height) x [col, col + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.height > 0 && self.width > 0 && self.row + self.height <= height && self.col + self.width <= width
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.row < o.row + o.height
            && o.row < self.row + self.height
            && self.col < o.col + o.width
            && o.col < self.col + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub rating_class: Rating,
    pub leaf_rect: Rect,
    pub spectralon_rect: Rect,
    /// Per-band multiplicative gain; its wavelength axis becomes the cube's.
    pub illumination: SpectralCurve,
    pub dark_level: f32,
    pub noise_sigma: f32,
    pub mosaic_amplitude: f32,
    pub mosaic_scale_px: f32,
    pub seed: u64,
}

/// Acquisition presets for the two capture settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    /// Flat lamp spectrum, low read noise.
    Indoor,
    /// Sunlight tilted across the band range, higher read noise.
    Outdoor,
}

impl Environment {
    pub fn tag(self) -> &'static str {
        match self {
            Environment::Indoor => "indoor",
            Environment::Outdoor => "outdoor",
        }
    }
}

impl SceneSpec {
    /// 80 x 128 x 11 scene (690-840 nm) with a 52 x 82 leaf and a
    /// 40 x 30 white panel.
    pub fn preset(environment: Environment, rating_class: Rating, seed: u64) -> Self {
        let bands = 11;
        let wavelengths = even_wavelengths(bands, 690.0, 840.0);
        let (gains, noise_sigma): (Vec<f32>, f32) = match environment {
            Environment::Indoor => (vec![1.0; bands], 0.005),
            Environment::Outdoor => ((0..bands).map(|b| 1.1 - 0.25 * b as f32 / (bands - 1) as f32).collect(), 0.01),
        };
        SceneSpec {
            height: 80,
            width: 128,
            bands,
            rating_class,
            leaf_rect: Rect { row: 14, col: 8, height: 52, width: 82 },
            spectralon_rect: Rect { row: 20, col: 96, height: 40, width: 30 },
            illumination: SpectralCurve { wavelengths_nm: wavelengths, values: gains },
            dark_level: 0.02,
            noise_sigma,
            mosaic_amplitude: 0.5,
            mosaic_scale_px: 2.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return bad("scene dimensions must be non-zero".into());
        }
        if !self.leaf_rect.fits_in(self.height, self.width) {
            return bad(format!("leaf_rect {:?} outside image", self.leaf_rect));
        }
        if !self.spectralon_rect.fits_in(self.height, self.width) {
            return bad(format!("spectralon_rect {:?} outside image", self.spectralon_rect));
        }
        if self.leaf_rect.intersects(&self.spectralon_rect) {
            return bad("leaf_rect and spectralon_rect overlap".into());
        }
        self.illumination.validate()?;
        if self.illumination.len() != self.bands {
            return bad(format!("illumination has {} bands, scene has {}", self.illumination.len(), self.bands));
        }
        if self.illumination.values.iter().any(|&g| g <= 0.0) {
            return bad("illumination gains must be positive".into());
        }
        if !(self.dark_level >= 0.0 && self.dark_level.is_finite()) {
            return bad(format!("dark_level {} must be >= 0", self.dark_level));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.mosaic_amplitude) {
            return bad(format!("mosaic_amplitude {} not in [0, 1]", self.mosaic_amplitude));
        }
        if !(self.mosaic_scale_px > 0.0 && self.mosaic_scale_px.is_finite()) {
            return bad(format!("mosaic_scale_px {} must be > 0", self.mosaic_scale_px));
        }
        Ok(())
    }
}

/// `(f, g)`: correlation-length and amplitude multipliers per class.
///
/// Amplitude grows with susceptibility in three tiers and the length scale
/// varies within each tier, so no two classes share either factor.
pub fn mosaic_factors(rating: Rating) -> (f32, f32) {
    match rating.value() {
        1 => (0.80, 0.40),
        2 => (2.75, 0.42),
        5 => (1.40, 0.64),
        6 => (2.90, 0.66),
        7 => (0.85, 0.96),
        8 => (1.45, 0.98),
        9 => (3.00, 1.00),
        _ => unreachable!("rating vocabulary"),
    }
}

fn red_edge(wavelength_nm: f64) -> f64 {
    1.0 / (1.0 + (-(wavelength_nm - RED_EDGE_NM) / RED_EDGE_WIDTH_NM).exp())
}

pub fn vegetation_base(wavelength_nm: f64) -> f64 {
    0.06 + 0.44 * red_edge(wavelength_nm)
}

pub fn chlorosis_signature(wavelength_nm: f64) -> f64 {
    let s = red_edge(wavelength_nm);
    0.25 * (1.0 - s) - 0.15 * s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub reflectance: HyperCube,
    pub mask: Mask,
    pub label: Rating,
    pub white_curve: SpectralCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub raw: HyperCube,
    pub dark: HyperCube,
    pub truth: SceneTruth,
}

/// Bilinear value noise over a seeded lattice.
struct ValueNoise {
    cols: usize,
    lattice: Vec<f64>,
    spacing: f64,
    offset: (f64, f64),
}

impl ValueNoise {
    fn new(height: usize, width: usize, spacing: f64, rng: &mut impl Rng) -> Self {
        let offset = (uniform(rng) * spacing, uniform(rng) * spacing);
        let rows = ((height as f64 + offset.0) / spacing).floor() as usize + 2;
        let cols = ((width as f64 + offset.1) / spacing).floor() as usize + 2;
        let lattice = (0..rows * cols).map(|_| uniform(rng)).collect();
        Self { cols, lattice, spacing, offset }
    }

    fn sample(&self, y: usize, x: usize) -> f64 {
        let gy = (y as f64 + self.offset.0) / self.spacing;
        let gx = (x as f64 + self.offset.1) / self.spacing;
        let (iy, ix) = (gy.floor() as usize, gx.floor() as usize);
        let (fy, fx) = (gy - iy as f64, gx - ix as f64);
        let at = |r: usize, c: usize| self.lattice[r * self.cols + c];
        let top = at(iy, ix) * (1.0 - fx) + at(iy, ix + 1) * fx;
        let bottom = at(iy + 1, ix) * (1.0 - fx) + at(iy + 1, ix + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (h, w, bands) = (spec.height, spec.width, spec.bands);
    let wavelengths = spec.illumination.wavelengths_nm.clone();
    let (f, g) = mosaic_factors(spec.rating_class);
    let spacing = (spec.mosaic_scale_px * f) as f64;
    let amplitude = (spec.mosaic_amplitude * g) as f64;

    let mut texture_rng = stage_rng(derive_seed(spec.seed, &[1]));
    let leaf = spec.leaf_rect;
    let noise_field = ValueNoise::new(leaf.height, leaf.width, spacing, &mut texture_rng);

    let base: Vec<f64> = wavelengths.iter().map(|&l| vegetation_base(l as f64)).collect();
    let pale: Vec<f64> = wavelengths.iter().map(|&l| chlorosis_signature(l as f64)).collect();

    let reflectance = HyperCube::from_fn(h, w, wavelengths.clone(), CubeKind::Reflectance, |r, c, b| {
        if leaf.contains(r, c) {
            let t = noise_field.sample(r - leaf.row, c - leaf.col);
            let v = base[b] + amplitude * t * pale[b];
            (v as f32).clamp(0.0, REFLECTANCE_CEILING)
        } else if spec.spectralon_rect.contains(r, c) {
            SPECTRALON_REFLECTANCE
        } else {
            BACKGROUND_REFLECTANCE
        }
    })?;

    let gains = &spec.illumination.values;
    let sigma = spec.noise_sigma as f64;
    let dark_level = spec.dark_level as f64;
    let mut raw_rng = stage_rng(derive_seed(spec.seed, &[2]));
    let mut dark_rng = stage_rng(derive_seed(spec.seed, &[3]));
    let raw_data: Vec<f32> = reflectance
        .data()
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let gain = gains[i % bands] as f64;
            (rho as f64 * gain + dark_level + sigma * gaussian(&mut raw_rng)) as f32
        })
        .collect();
    let dark_data: Vec<f32> =
        (0..h * w * bands).map(|_| (dark_level + sigma * gaussian(&mut dark_rng)) as f32).collect();
    let raw = HyperCube::new(h, w, wavelengths.clone(), raw_data, CubeKind::RawDn)?;
    let dark = HyperCube::new(h, w, wavelengths, dark_data, CubeKind::RawDn)?;

    let mask = Mask::from_fn(h, w, |r, c| leaf.contains(r, c));
    Ok(Scene {
        spec: spec.clone(),
        raw,
        dark,
        truth: SceneTruth { reflectance, mask, label: spec.rating_class, white_curve: spec.illumination.clone() },
    })
}

/// Per-scene variation applied by [`generate_dataset`].
fn vary_spec(base: &SceneSpec, rating: Rating, seed: u64) -> SceneSpec {
    let mut rng = stage_rng(derive_seed(seed, &[0xA11]));
    let mut spec = base.clone();
    spec.rating_class = rating;
    spec.seed = derive_seed(seed, &[0x5CE]);

    let dr = uniform_int(&mut rng, -3, 3);
    let dc = uniform_int(&mut rng, -3, 3);
    let shifted = |pos: usize, delta: i64, extent: usize, limit: usize| -> usize {
        let max = limit.saturating_sub(extent) as i64;
        (pos as i64 + delta).clamp(0, max) as usize
    };
    let moved = Rect {
        row: shifted(base.leaf_rect.row, dr, base.leaf_rect.height, base.height),
        col: shifted(base.leaf_rect.col, dc, base.leaf_rect.width, base.width),
        ..base.leaf_rect
    };
    if !moved.intersects(&base.spectralon_rect) {
        spec.leaf_rect = moved;
    }

    let gain = 0.9 + 0.2 * uniform(&mut rng);
    let tilt = -0.1 + 0.2 * uniform(&mut rng);
    let n = spec.bands.max(2) - 1;
    for (b, v) in spec.illumination.values.iter_mut().enumerate() {
        let x = 2.0 * b as f64 / n as f64 - 1.0;
        *v = (*v as f64 * gain * (1.0 + tilt * x)) as f32;
    }
    spec
}

/// `per_class` scenes for each of the seven classes, class-major in
/// ascending rating order. Each scene gets leaf-position jitter of up to
/// three pixels and a random illumination gain and tilt.
pub fn generate_dataset(base: &SceneSpec, per_class: usize, seed: u64) -> Result<Vec<Scene>> {
    if per_class == 0 {
        return Err(Error::InvalidParameter("per_class must be >= 1".into()));
    }
    base.validate()?;
    dataset_specs(base, per_class, seed).iter().map(generate_scene).collect()
}

/// The scene specs [`generate_dataset`] renders, in order.
pub fn dataset_specs(base: &SceneSpec, per_class: usize, seed: u64) -> Vec<SceneSpec> {
    Rating::all()
        .flat_map(|rating| {
            (0..per_class).map(move |i| vary_spec(base, rating, derive_seed(seed, &[rating.value() as u64, i as u64])))
        })
        .collect()
}
