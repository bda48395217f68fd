//! Hyperspectral leaf-image pipeline: radiometric calibration, pixel
//! segmentation, spectral-angle analysis, patch extraction and two
//! mosaic-resilience classifiers (a flat linear SVM and a small residual
//! network), plus a synthetic scene generator to exercise all of it.

pub mod calibration;
pub mod error;
pub mod hypercube;
pub mod linear;
pub mod patches;
pub mod rating;
pub mod resnet;
pub mod rng;
pub mod segmentation;
pub mod spectral;
pub mod svm;
pub mod synthgen;

pub use calibration::{calibrate, CalibrationParams, CalibrationReport};
pub use error::{Error, Result};
pub use hypercube::{CubeKind, HyperCube, Mask, SpectralCurve};
pub use linear::SgdParams;
pub use patches::{Patch, PatchOrigin, PatchSet, SplitResult};
pub use rating::Rating;
pub use resnet::{NetConfig, ResidualNet, TrainParams, TrainReport};
pub use svm::{EvalReport, MulticlassSvmModel, SvrModel};
pub use synthgen::{Environment, Scene, SceneSpec};
