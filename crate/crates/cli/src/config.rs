//! JSON run configuration for the all-in-one pipeline.

use std::fmt;
use std::path::PathBuf;

use hyperleaf_core::calibration::CalibrationParams;
use hyperleaf_core::linear::SgdParams;
use hyperleaf_core::patches::AugmentParams;
use hyperleaf_core::resnet::{NetConfig, TrainParams};
use hyperleaf_core::spectral::MapStatistic;
use hyperleaf_core::synthgen::{Environment, SceneSpec};
use hyperleaf_core::{Error, Rating, Result};
use serde::{Deserialize, Serialize};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Calibrate,
    Segment,
    Analyze,
    Patch,
    Svm,
    Resnet,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Generate, Stage::Calibrate, Stage::Segment, Stage::Analyze, Stage::Patch, Stage::Svm, Stage::Resnet];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Calibrate => "calibrate",
            Stage::Segment => "segment",
            Stage::Analyze => "analyze",
            Stage::Patch => "patch",
            Stage::Svm => "svm",
            Stage::Resnet => "resnet",
        }
    }

    /// Sub-stream key mixed into the global seed.
    pub(crate) fn key(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    /// Ground-truth masks of this many scenes per class serve as annotation.
    pub annotated_scenes_per_class: usize,
    pub pixels_per_class: usize,
    pub sgd: SgdParams,
    pub min_component_px: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            annotated_scenes_per_class: 1,
            pixels_per_class: 200,
            sgd: SgdParams { lambda: 1e-4, epochs: 10, seed: 0 },
            min_component_px: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub n: usize,
    pub stride: usize,
    /// Augmentation draws per training patch; 0 disables augmentation.
    pub augment_multiplicity: usize,
    pub augment: AugmentParams,
    pub split_ratios: [u32; 3],
    pub stratified: bool,
    /// Keep all patches of a scene in one split.
    pub split_by_scene: bool,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            n: 19,
            stride: 9,
            augment_multiplicity: 3,
            augment: AugmentParams::default(),
            split_ratios: [6, 2, 2],
            stratified: true,
            split_by_scene: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// One-vs-rest classifier.
    pub sgd: SgdParams,
    /// Also fit the epsilon-SVR regression baseline.
    pub svr: bool,
    pub svr_sgd: SgdParams,
    pub svr_epsilon: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            sgd: SgdParams { lambda: 0.3, epochs: 60, seed: 0 },
            svr: true,
            svr_sgd: SgdParams { lambda: 1e-2, epochs: 60, seed: 0 },
            svr_epsilon: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ResnetConfig {
    /// `input_n` and `input_bands` are taken from the patches.
    pub net: NetConfig,
    pub train: TrainParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub stages: Vec<Stage>,
    pub seed: u64,
    /// Left out of the echoed config.json so outputs do not depend on where
    /// they are written.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub environment: Environment,
    pub scenes_per_class: usize,
    /// Base scene; defaults to the environment preset.
    pub scene: Option<SceneSpec>,
    pub calibration: CalibrationParams,
    pub segmentation: SegmentationConfig,
    pub analysis_statistic: MapStatistic,
    pub patches: PatchConfig,
    pub svm: SvmConfig,
    pub resnet: ResnetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stages: Stage::ALL.to_vec(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            environment: Environment::Indoor,
            scenes_per_class: 6,
            scene: None,
            calibration: CalibrationParams::default(),
            segmentation: SegmentationConfig::default(),
            analysis_statistic: MapStatistic::default(),
            patches: PatchConfig::default(),
            svm: SvmConfig::default(),
            resnet: ResnetConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn base_scene(&self) -> SceneSpec {
        self.scene.clone().unwrap_or_else(|| SceneSpec::preset(self.environment, Rating::from_index(0), self.seed))
    }

    pub fn runs(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.out_dir.as_os_str().is_empty() {
            return bad("out_dir is empty".into());
        }
        if self.scenes_per_class == 0 {
            return bad("scenes_per_class must be >= 1".into());
        }
        self.base_scene().validate()?;
        self.calibration.validate()?;
        let seg = &self.segmentation;
        seg.sgd.validate()?;
        if seg.annotated_scenes_per_class == 0 || seg.annotated_scenes_per_class > self.scenes_per_class {
            return bad(format!("annotated_scenes_per_class must be in 1..={}", self.scenes_per_class));
        }
        if seg.pixels_per_class == 0 {
            return bad("pixels_per_class must be >= 1".into());
        }
        let p = &self.patches;
        if p.n == 0 || p.stride == 0 {
            return bad("patch n and stride must be >= 1".into());
        }
        if p.split_ratios.iter().all(|&r| r == 0) {
            return bad("split ratios are all zero".into());
        }
        self.svm.sgd.validate()?;
        self.svm.svr_sgd.validate()?;
        if self.svm.svr_epsilon.is_nan() || self.svm.svr_epsilon <= 0.0 {
            return bad("svr_epsilon must be > 0".into());
        }
        let net = NetConfig { input_n: p.n, ..self.resnet.net.clone() };
        net.validate()?;
        self.resnet.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_override() {
        let c = RunConfig::from_json(r#"{"stages":["generate"],"patches":{"stride":15}}"#).unwrap();
        assert_eq!(c.stages, vec![Stage::Generate]);
        assert_eq!(c.patches.stride, 15);
        assert_eq!(c.patches.n, 19);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig::default();
        c.patches.stride = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.segmentation.annotated_scenes_per_class = 7;
        assert!(c.validate().is_err());
        assert!(RunConfig::from_json(r#"{"stages":["bogus"]}"#).is_err());
    }
}
