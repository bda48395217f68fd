//! ResNet-lite: a 3×3 stem convolution, a stack of residual blocks, global
//! average pooling and a fully-connected classifier, with a hand-written
//! backward pass.
//!
//! Feature maps are square, HWC, stride 1 with zero padding throughout. A
//! residual block computes
//!
//! ```text
//! y = relu(conv3x3(relu(conv3x3(x))) + skip(x))
//! ```
//!
//! where `skip` is the identity when channel counts agree and a 1×1
//! projection otherwise. There is no batch normalization; instead the net
//! carries a per-band input standardization, `(x - mean) / scale`, fitted
//! on the training split by [`train`] and stored with the weights. With
//! `rectifiers = false` every `relu` becomes the identity, which makes the
//! whole network smooth (used to check gradients without kink noise).
//!
//! Parameter count, with `B` input bands, `S` stem channels, block widths
//! `c_1..c_k` (`c_0 = S`) and `K` classes:
//!
//! ```text
//! 9 B S + S
//!   + sum_i [ 9 c_{i-1} c_i + c_i + 9 c_i c_i + c_i + (c_{i-1} != c_i) (c_{i-1} c_i + c_i) ]
//!   + c_k K + K
//! ```

mod backprop;
pub mod kernels;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patches::PatchSet;
use crate::rating::NUM_CLASSES;
use crate::rng::{gaussian, stage_rng};

pub use backprop::{
    forward, gradient_check, gradient_check_in, loss_and_grad, max_relative_error, relative_error,
    residual_block_forward, softmax, BlockParams, FeatureMap, GradCheckReport,
};
pub use kernels::Scalar;
pub use train::{evaluate_net, predict_net, train, EpochRecord, TrainParams, TrainReport};

pub const HRN_MAGIC: [u8; 4] = *b"HRN1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_n: usize,
    pub input_bands: usize,
    pub stem_channels: usize,
    pub num_blocks: usize,
    /// Output width of each block; empty means every block keeps `stem_channels`.
    pub channels_per_stage: Vec<usize>,
    pub num_classes: usize,
    pub rectifiers: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_n: 19,
            input_bands: 11,
            stem_channels: 16,
            num_blocks: 3,
            channels_per_stage: Vec::new(),
            num_classes: NUM_CLASSES,
            rectifiers: true,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// One block of four channels on 9×9 inputs.
    pub fn tiny(input_bands: usize, seed: u64) -> Self {
        Self { input_n: 9, input_bands, stem_channels: 4, num_blocks: 1, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.input_n == 0 || self.input_bands == 0 || self.stem_channels == 0 {
            return bad("input_n, input_bands and stem_channels must be >= 1".into());
        }
        if self.num_blocks == 0 {
            return bad("num_blocks must be >= 1".into());
        }
        if !self.channels_per_stage.is_empty() && self.channels_per_stage.len() != self.num_blocks {
            return bad(format!(
                "channels_per_stage has {} entries for {} blocks",
                self.channels_per_stage.len(),
                self.num_blocks
            ));
        }
        if self.channels_per_stage.contains(&0) {
            return bad("channel counts must be >= 1".into());
        }
        if self.num_classes != NUM_CLASSES {
            return bad(format!("num_classes must be {NUM_CLASSES}"));
        }
        Ok(())
    }

    pub fn block_widths(&self) -> Vec<usize> {
        if self.channels_per_stage.is_empty() {
            vec![self.stem_channels; self.num_blocks]
        } else {
            self.channels_per_stage.clone()
        }
    }
}

/// Location of one dense or convolutional layer in the parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.kernel * self.kernel * self.cin * self.cout
    }

    fn weights<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.weight_offset..self.weight_offset + self.weight_len()]
    }

    fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.bias_offset..self.bias_offset + self.cout]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerRecord {
    Conv3x3(ConvSpec),
    Conv1x1(ConvSpec),
    Rectifier,
    ResidualAdd,
    GlobalAvgPool,
    FullyConnected(ConvSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockSpec {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub projection: Option<ConvSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plan {
    pub n: usize,
    pub bands: usize,
    pub stem: ConvSpec,
    pub blocks: Vec<BlockSpec>,
    pub fc: ConvSpec,
    pub param_count: usize,
    pub rectifiers: bool,
}

impl Plan {
    fn new(config: &NetConfig) -> Plan {
        let mut offset = 0;
        let mut spec = |kernel, cin, cout| {
            let s = ConvSpec {
                kernel,
                cin,
                cout,
                weight_offset: offset,
                bias_offset: offset + kernel * kernel * cin * cout,
            };
            offset = s.bias_offset + cout;
            s
        };
        let stem = spec(3, config.input_bands, config.stem_channels);
        let mut cin = config.stem_channels;
        let mut blocks = Vec::new();
        for cout in config.block_widths() {
            let conv1 = spec(3, cin, cout);
            let conv2 = spec(3, cout, cout);
            let projection = (cin != cout).then(|| spec(1, cin, cout));
            blocks.push(BlockSpec { conv1, conv2, projection });
            cin = cout;
        }
        let fc = spec(1, cin, config.num_classes);
        Plan {
            n: config.input_n,
            bands: config.input_bands,
            stem,
            blocks,
            fc,
            param_count: offset,
            rectifiers: config.rectifiers,
        }
    }

    fn layers(&self) -> Vec<LayerRecord> {
        let mut out = vec![LayerRecord::Conv3x3(self.stem), LayerRecord::Rectifier];
        for b in &self.blocks {
            out.extend([LayerRecord::Conv3x3(b.conv1), LayerRecord::Rectifier, LayerRecord::Conv3x3(b.conv2)]);
            if let Some(p) = b.projection {
                out.push(LayerRecord::Conv1x1(p));
            }
            out.extend([LayerRecord::ResidualAdd, LayerRecord::Rectifier]);
        }
        out.extend([LayerRecord::GlobalAvgPool, LayerRecord::FullyConnected(self.fc)]);
        out
    }

    fn convs(&self) -> Vec<ConvSpec> {
        let mut out = vec![self.stem];
        for b in &self.blocks {
            out.extend([b.conv1, b.conv2]);
            out.extend(b.projection);
        }
        out
    }

    pub fn input_len(&self) -> usize {
        self.n * self.n * self.bands
    }
}

/// Per-band affine map applied to every input before the stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl InputNorm {
    /// Band means and population standard deviations over every pixel of
    /// the set. A band with deviation below 1e-6 gets scale 1.
    pub fn fit(set: &PatchSet) -> Result<InputNorm> {
        if set.is_empty() {
            return Err(Error::EmptyInput("cannot fit input normalization on no patches".into()));
        }
        let b = set.bands;
        let (mut sum, mut sq) = (vec![0.0f64; b], vec![0.0f64; b]);
        let mut count = 0usize;
        for p in &set.patches {
            for px in p.features().chunks_exact(b) {
                for (i, &v) in px.iter().enumerate() {
                    sum[i] += v as f64;
                    sq[i] += v as f64 * v as f64;
                }
                count += 1;
            }
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd < 1e-6 {
                    1.0
                } else {
                    sd as f32
                }
            })
            .collect();
        Ok(InputNorm { mean: mean.iter().map(|&m| m as f32).collect(), scale })
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let b = self.bands();
        let mut out = x.to_vec();
        for px in out.chunks_exact_mut(b) {
            for ((v, m), s) in px.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    fn validate(&self, bands: usize) -> Result<()> {
        if self.mean.len() != bands || self.scale.len() != bands {
            return Err(Error::DimensionMismatch(format!(
                "input normalization has {}/{} entries for {bands} bands",
                self.mean.len(),
                self.scale.len()
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) || self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidValue("input normalization must be finite with positive scale".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet {
    pub config: NetConfig,
    pub layers: Vec<LayerRecord>,
    pub params: Vec<f32>,
    /// `None` feeds inputs to the stem unchanged.
    pub input_norm: Option<InputNorm>,
    pub(crate) plan: Plan,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    layers: Vec<LayerRecord>,
    param_count: usize,
    #[serde(default)]
    input_norm: Option<InputNorm>,
}

/// Convolution weights ~ N(0, 2 / fan_in), classifier weights
/// ~ N(0, 1 / fan_in), all biases zero.
pub fn init_net(config: &NetConfig) -> Result<ResidualNet> {
    config.validate()?;
    let plan = Plan::new(config);
    let mut params = vec![0.0f32; plan.param_count];
    let mut rng = stage_rng(config.seed);
    let mut fill = |s: &ConvSpec, gain: f64| {
        let scale = (gain / (s.kernel * s.kernel * s.cin) as f64).sqrt();
        for w in &mut params[s.weight_offset..s.weight_offset + s.weight_len()] {
            *w = (gaussian(&mut rng) * scale) as f32;
        }
    };
    for s in plan.convs() {
        fill(&s, 2.0);
    }
    fill(&plan.fc, 1.0);
    Ok(ResidualNet { config: config.clone(), layers: plan.layers(), params, input_norm: None, plan })
}

impl ResidualNet {
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.plan.blocks.len()
    }

    /// Replaces the parameter store; the length must not change.
    pub fn with_params(&self, params: Vec<f32>) -> Result<ResidualNet> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a net of {}",
                params.len(),
                self.params.len()
            )));
        }
        Ok(ResidualNet { params, ..self.clone() })
    }

    pub fn with_input_norm(&self, norm: Option<InputNorm>) -> Result<ResidualNet> {
        if let Some(n) = &norm {
            n.validate(self.config.input_bands)?;
        }
        Ok(ResidualNet { input_norm: norm, ..self.clone() })
    }

    /// Standardized copies of the inputs, or `None` when there is no
    /// normalization to apply.
    pub(crate) fn standardize(&self, batch: &[&[f32]]) -> Option<Vec<Vec<f32>>> {
        self.input_norm.as_ref().map(|n| batch.iter().map(|x| n.apply(x)).collect())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            layers: self.layers.clone(),
            param_count: self.params.len(),
            input_norm: self.input_norm.clone(),
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.params.len());
        out.extend_from_slice(&HRN_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<ResidualNet> {
        if bytes.len() < 8 {
            return Err(Error::Truncated { expected: 8, found: bytes.len() });
        }
        let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if found != HRN_MAGIC {
            return Err(Error::BadMagic { expected: HRN_MAGIC, found });
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = 8 + hlen;
        if bytes.len() < body {
            return Err(Error::Truncated { expected: body, found: bytes.len() });
        }
        let header: Header = serde_json::from_slice(&bytes[8..body])?;
        let mut net = init_net(&header.config)?.with_input_norm(header.input_norm)?;
        if net.layers != header.layers || net.params.len() != header.param_count {
            return Err(Error::Format("layer table does not match the configuration".into()));
        }
        let expected = body + 4 * header.param_count;
        if bytes.len() != expected {
            return Err(Error::Truncated { expected, found: bytes.len() });
        }
        for (p, chunk) in net.params.iter_mut().zip(bytes[body..].chunks_exact(4)) {
            *p = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        if let Some(i) = net.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ResidualNet> {
        ResidualNet::decode(&fs::read(path)?)
    }
}
