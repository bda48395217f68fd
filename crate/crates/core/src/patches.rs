//! Sliding-window patches, augmentation and train/validation/test splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{HyperCube, Mask};
use crate::rating::Rating;
use crate::rng::{derive_seed, stage_rng, uniform, uniform_int};

pub const HPS_MAGIC: [u8; 4] = *b"HPS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub scene_id: u32,
    pub row: u32,
    pub col: u32,
}

/// An `n x n x bands` window stored BIP (row-major, bands contiguous).
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub n: usize,
    pub bands: usize,
    pub data: Vec<f32>,
    pub label: Rating,
    pub origin: PatchOrigin,
    pub augmented: bool,
}

impl Patch {
    /// Flattened feature vector, `n * n * bands` long.
    pub fn features(&self) -> &[f32] {
        &self.data
    }
}

pub fn flatten(patch: &Patch) -> Vec<f32> {
    patch.data.clone()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub n: usize,
    pub bands: usize,
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn empty(n: usize, bands: usize) -> Self {
        Self { n, bands, patches: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<Rating, usize> {
        let mut counts = BTreeMap::new();
        for p in &self.patches {
            *counts.entry(p.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn push(&mut self, patch: Patch) -> Result<()> {
        if patch.n != self.n || patch.bands != self.bands {
            return Err(Error::DimensionMismatch(format!(
                "patch {}x{}x{} in a {}x{}x{} set",
                patch.n, patch.n, patch.bands, self.n, self.n, self.bands
            )));
        }
        if patch.data.len() != patch.n * patch.n * patch.bands {
            return Err(Error::DimensionMismatch("patch payload length".into()));
        }
        self.patches.push(patch);
        Ok(())
    }

    pub fn extend(&mut self, other: PatchSet) -> Result<()> {
        for p in other.patches {
            self.push(p)?;
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let per = self.n * self.n * self.bands;
        let mut out = Vec::with_capacity(16 + self.len() * (14 + 4 * per));
        out.extend_from_slice(&HPS_MAGIC);
        for v in [self.len(), self.n, self.bands] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for p in &self.patches {
            out.push(p.label.value());
            for v in [p.origin.scene_id, p.origin.row, p.origin.col] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(p.augmented as u8);
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated { expected: 16, found: bytes.len() });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != HPS_MAGIC {
            return Err(Error::BadMagic { expected: HPS_MAGIC, found: magic });
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated { expected: 16, found: bytes.len() });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let (count, n, bands) = (u32_at(4) as u64, u32_at(8) as u64, u32_at(12) as u64);
        let overflow = || Error::DimensionOverflow { height: n, width: n, bands };
        let per = n.checked_mul(n).and_then(|x| x.checked_mul(bands)).ok_or_else(overflow)?;
        let record = per.checked_mul(4).and_then(|x| x.checked_add(14)).ok_or_else(overflow)?;
        let expected = record
            .checked_mul(count)
            .and_then(|x| x.checked_add(16))
            .and_then(|x| usize::try_from(x).ok())
            .ok_or_else(overflow)?;
        if bytes.len() != expected {
            if bytes.len() < expected {
                return Err(Error::Truncated { expected, found: bytes.len() });
            }
            return Err(Error::Format("trailing bytes after last patch".into()));
        }
        let (n, bands, per, record) = (n as usize, bands as usize, per as usize, record as usize);
        let mut set = PatchSet::empty(n, bands);
        for i in 0..count as usize {
            let base = 16 + i * record;
            let label = Rating::new(bytes[base] as u32)?;
            let origin = PatchOrigin { scene_id: u32_at(base + 1), row: u32_at(base + 5), col: u32_at(base + 9) };
            let augmented = match bytes[base + 13] {
                0 => false,
                1 => true,
                v => return Err(Error::Format(format!("augmented flag {v}"))),
            };
            let data: Vec<f32> = bytes[base + 14..base + 14 + 4 * per]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(j) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(i * per + j));
            }
            set.patches.push(Patch { n, bands, data, label, origin, augmented });
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

fn copy_window(cube: &HyperCube, row: usize, col: usize, n: usize) -> Vec<f32> {
    let mut data = Vec::with_capacity(n * n * cube.bands());
    for r in row..row + n {
        let start = cube.index(r, col, 0);
        data.extend_from_slice(&cube.data()[start..start + n * cube.bands()]);
    }
    data
}

/// Number of anchors along one axis: `floor((extent - n) / stride) + 1`.
pub fn anchor_count(extent: usize, n: usize, stride: usize) -> usize {
    if n > extent {
        0
    } else {
        (extent - n) / stride + 1
    }
}

/// Windows anchored every `stride` pixels from (0, 0); a window is kept
/// only when all `n * n` of its pixels are foreground.
pub fn extract_patches(
    cube: &HyperCube,
    mask: &Mask,
    label: Rating,
    scene_id: u32,
    n: usize,
    stride: usize,
) -> Result<PatchSet> {
    cube.check_mask(mask)?;
    if n == 0 || stride == 0 {
        return Err(Error::InvalidParameter("patch size and stride must be >= 1".into()));
    }
    if n > cube.height().min(cube.width()) {
        return Err(Error::InvalidParameter(format!(
            "patch size {n} larger than {}x{} image",
            cube.height(),
            cube.width()
        )));
    }
    // summed-area table makes the full-window test O(1)
    let (h, w) = (cube.height(), cube.width());
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            sat[(r + 1) * (w + 1) + c + 1] =
                mask.get(r, c) as u32 + sat[r * (w + 1) + c + 1] + sat[(r + 1) * (w + 1) + c] - sat[r * (w + 1) + c];
        }
    }
    let window_sum = |r: usize, c: usize| {
        sat[(r + n) * (w + 1) + c + n] + sat[r * (w + 1) + c] - sat[r * (w + 1) + c + n] - sat[(r + n) * (w + 1) + c]
    };
    let mut set = PatchSet::empty(n, cube.bands());
    for r in (0..=h - n).step_by(stride) {
        for c in (0..=w - n).step_by(stride) {
            if window_sum(r, c) as usize == n * n {
                set.patches.push(Patch {
                    n,
                    bands: cube.bands(),
                    data: copy_window(cube, r, c, n),
                    label,
                    origin: PatchOrigin { scene_id, row: r as u32, col: c as u32 },
                    augmented: false,
                });
            }
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub max_shift_px: i32,
    pub max_rot_deg: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { max_shift_px: 3, max_rot_deg: 20.0 }
    }
}

/// A translation plus rotation about the (shifted) patch centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub shift_row: i32,
    pub shift_col: i32,
    pub angle_deg: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { shift_row: 0, shift_col: 0, angle_deg: 0.0 };

    /// Integer shifts uniform in `[-max_shift, max_shift]`, angle uniform in
    /// `[-max_rot, max_rot]` degrees.
    pub fn draw(params: &AugmentParams, seed: u64) -> Transform {
        let mut rng = stage_rng(seed);
        let s = params.max_shift_px as i64;
        let shift_row = uniform_int(&mut rng, -s, s) as i32;
        let shift_col = uniform_int(&mut rng, -s, s) as i32;
        let angle_deg = params.max_rot_deg * (2.0 * uniform(&mut rng) - 1.0);
        Transform { shift_row, shift_col, angle_deg }
    }
}

/// Resamples an `n x n` window from the parent image under `t`, nearest
/// neighbour. Each output pixel is inverse-rotated about the shifted window
/// centre. Returns `None` if any source pixel leaves the image or the mask.
pub fn apply_transform(
    cube: &HyperCube,
    mask: &Mask,
    origin: (usize, usize),
    n: usize,
    t: &Transform,
) -> Option<Vec<f32>> {
    let half = (n as f64 - 1.0) / 2.0;
    let centre_r = origin.0 as f64 + t.shift_row as f64 + half;
    let centre_c = origin.1 as f64 + t.shift_col as f64 + half;
    let (sin, cos) = t.angle_deg.to_radians().sin_cos();
    let bands = cube.bands();
    let mut data = Vec::with_capacity(n * n * bands);
    for i in 0..n {
        for j in 0..n {
            let (u, v) = (i as f64 - half, j as f64 - half);
            let sr = (centre_r + u * cos + v * sin).round();
            let sc = (centre_c - u * sin + v * cos).round();
            if sr < 0.0 || sc < 0.0 || sr >= cube.height() as f64 || sc >= cube.width() as f64 {
                return None;
            }
            let (sr, sc) = (sr as usize, sc as usize);
            if !mask.get(sr, sc) {
                return None;
            }
            data.extend_from_slice(cube.spectrum(sr, sc));
        }
    }
    Some(data)
}

/// One seeded augmentation draw of the window at `origin`; `Ok(None)` when
/// the draw is rejected.
#[allow(clippy::too_many_arguments)]
pub fn augment_patch(
    cube: &HyperCube,
    mask: &Mask,
    origin: (usize, usize),
    n: usize,
    label: Rating,
    scene_id: u32,
    params: &AugmentParams,
    seed: u64,
) -> Result<Option<Patch>> {
    cube.check_mask(mask)?;
    if n == 0 || origin.0 + n > cube.height() || origin.1 + n > cube.width() {
        return Err(Error::InvalidParameter(format!(
            "window at {origin:?} of size {n} outside {}x{} image",
            cube.height(),
            cube.width()
        )));
    }
    let t = Transform::draw(params, seed);
    Ok(apply_transform(cube, mask, origin, n, &t).map(|data| Patch {
        n,
        bands: cube.bands(),
        data,
        label,
        origin: PatchOrigin { scene_id, row: origin.0 as u32, col: origin.1 as u32 },
        augmented: true,
    }))
}

/// Seed of draw `draw` for the window at `origin`.
pub fn augmentation_seed(seed: u64, origin: &PatchOrigin, draw: usize) -> u64 {
    derive_seed(seed, &[origin.scene_id as u64, origin.row as u64, origin.col as u64, draw as u64])
}

/// `multiplicity` draws per non-augmented patch; rejected draws are skipped.
/// `scene` resolves a scene id to its cube and mask.
pub fn augment_set<'a>(
    set: &PatchSet,
    mut scene: impl FnMut(u32) -> Option<(&'a HyperCube, &'a Mask)>,
    multiplicity: usize,
    params: &AugmentParams,
    seed: u64,
) -> Result<PatchSet> {
    let mut out = PatchSet::empty(set.n, set.bands);
    for p in set.patches.iter().filter(|p| !p.augmented) {
        let (cube, mask) = scene(p.origin.scene_id)
            .ok_or_else(|| Error::InvalidParameter(format!("no scene with id {}", p.origin.scene_id)))?;
        let origin = (p.origin.row as usize, p.origin.col as usize);
        for draw in 0..multiplicity {
            let s = augmentation_seed(seed, &p.origin, draw);
            if let Some(aug) = augment_patch(cube, mask, origin, set.n, p.label, p.origin.scene_id, params, s)? {
                out.push(aug)?;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: PatchSet,
    pub validation: PatchSet,
    pub test: PatchSet,
}

/// Largest-remainder apportionment of `k` items by `ratios`; every count is
/// the floor or ceiling of its exact share. Leftover units go to the largest
/// fractional parts, earlier splits first on ties.
pub fn split_counts(k: usize, ratios: [u32; 3]) -> [usize; 3] {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let mut counts = [0usize; 3];
    let mut rems = [0u64; 3];
    for i in 0..3 {
        let num = k as u64 * ratios[i] as u64;
        counts[i] = (num / total) as usize;
        rems[i] = num % total;
    }
    let mut left = k - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Seed-shuffled split, per class when `stratified`. Each split keeps the
/// input order.
pub fn split(set: &PatchSet, ratios: [u32; 3], seed: u64, stratified: bool) -> Result<SplitResult> {
    check_split_input(set, ratios)?;
    let mut groups: BTreeMap<Option<Rating>, Vec<usize>> = BTreeMap::new();
    for (i, p) in set.patches.iter().enumerate() {
        groups.entry(stratified.then_some(p.label)).or_default().push(i);
    }
    let mut rng = stage_rng(seed);
    let mut assignment = vec![0u8; set.len()];
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let counts = split_counts(members.len(), ratios);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = if pos < counts[0] {
                0
            } else if pos < counts[0] + counts[1] {
                1
            } else {
                2
            };
        }
    }
    Ok(assemble(set, &assignment))
}

/// Splits whole scenes instead of patches, so overlapping windows of one
/// scene never straddle splits. Scenes are stratified by label.
pub fn split_by_scene(set: &PatchSet, ratios: [u32; 3], seed: u64) -> Result<SplitResult> {
    check_split_input(set, ratios)?;
    let mut scenes: BTreeMap<Rating, Vec<u32>> = BTreeMap::new();
    for p in &set.patches {
        let ids = scenes.entry(p.label).or_default();
        if !ids.contains(&p.origin.scene_id) {
            ids.push(p.origin.scene_id);
        }
    }
    let mut rng = stage_rng(seed);
    let mut scene_split = BTreeMap::new();
    for ids in scenes.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let counts = split_counts(ids.len(), ratios);
        for (pos, &id) in ids.iter().enumerate() {
            let s = if pos < counts[0] {
                0u8
            } else if pos < counts[0] + counts[1] {
                1
            } else {
                2
            };
            scene_split.insert(id, s);
        }
    }
    let assignment: Vec<u8> = set.patches.iter().map(|p| scene_split[&p.origin.scene_id]).collect();
    Ok(assemble(set, &assignment))
}

fn check_split_input(set: &PatchSet, ratios: [u32; 3]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty patch set".into()));
    }
    if ratios.iter().all(|&r| r == 0) {
        return Err(Error::InvalidParameter("split ratios are all zero".into()));
    }
    Ok(())
}

fn assemble(set: &PatchSet, assignment: &[u8]) -> SplitResult {
    let mut parts =
        [PatchSet::empty(set.n, set.bands), PatchSet::empty(set.n, set.bands), PatchSet::empty(set.n, set.bands)];
    for (p, &a) in set.patches.iter().zip(assignment) {
        parts[a as usize].patches.push(p.clone());
    }
    let [train, validation, test] = parts;
    SplitResult { train, validation, test }
}
