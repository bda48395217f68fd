//! Mini-batch SGD with momentum and step learning-rate decay.
//!
//! ```text
//! v <- momentum * v + g
//! p <- p - lr_e * v
//! ```
//!
//! `lr_e` is multiplied by `lr_decay` once the epoch index reaches
//! `ceil(0.6 E)` and again at `ceil(0.85 E)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_traits::Float;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backprop::batch_loss_grad;
use super::{forward, InputNorm, ResidualNet};
use crate::error::{Error, Result};
use crate::patches::{PatchSet, SplitResult};
use crate::rating::Rating;
use crate::rng::{derive_seed, stage_rng};
use crate::svm::{evaluate, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { epochs: 15, batch_size: 32, lr: 0.01, momentum: 0.9, lr_decay: 0.1, seed: 0 }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch_size must be >= 1".into()));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lr) || !finite_nonneg(self.momentum) || !finite_nonneg(self.lr_decay) {
            return Err(Error::InvalidParameter("lr, momentum and lr_decay must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let e = self.epochs as f64;
        let steps = [0.6, 0.85].iter().filter(|&&f| epoch >= (f * e).ceil() as usize).count();
        self.lr * self.lr_decay.powi(steps as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches, before each update.
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// `None` when the validation split is empty.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub final_test_accuracy: Option<f64>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
        for r in &self.epochs {
            let val = r.val_accuracy.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.6},{:.6},{val}", r.epoch, r.train_loss, r.train_accuracy);
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Index of the first maximum.
pub(crate) fn argmax_lowest<T: Float>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_set(net: &ResidualNet, set: &PatchSet) -> Result<()> {
    let c = &net.config;
    if !set.is_empty() && (set.n != c.input_n || set.bands != c.input_bands) {
        return Err(Error::DimensionMismatch(format!(
            "patches are {}x{}x{}, net expects {}x{}x{}",
            set.n, set.n, set.bands, c.input_n, c.input_n, c.input_bands
        )));
    }
    Ok(())
}

pub fn predict_net(net: &ResidualNet, set: &PatchSet) -> Result<Vec<Rating>> {
    check_set(net, set)?;
    let batch: Vec<&[f32]> = set.patches.iter().map(|p| p.features()).collect();
    Ok(forward(net, &batch)?.iter().map(|l| Rating::from_index(argmax_lowest(l))).collect())
}

pub fn evaluate_net(net: &ResidualNet, set: &PatchSet) -> Result<EvalReport> {
    let pred = predict_net(net, set)?;
    let pairs: Vec<(Rating, Rating)> = set.patches.iter().map(|p| p.label).zip(pred).collect();
    evaluate(&pairs)
}

/// Fits the input normalization on the training split first unless the net
/// already carries one.
pub fn train(net: &ResidualNet, split: &SplitResult, params: &TrainParams) -> Result<(ResidualNet, TrainReport)> {
    params.validate()?;
    let data = &split.train;
    if data.is_empty() {
        return Err(Error::EmptyInput("empty training split".into()));
    }
    for set in [&split.train, &split.validation, &split.test] {
        check_set(net, set)?;
    }
    let net = match net.input_norm {
        Some(_) => net.clone(),
        None => net.with_input_norm(Some(InputNorm::fit(data)?))?,
    };
    let norm = net.input_norm.as_ref().expect("set above");
    let inputs: Vec<Vec<f32>> = data.patches.par_iter().map(|x| norm.apply(x.features())).collect();
    let plan = &net.plan;
    let mut p = net.params.clone();
    let mut velocity = vec![0.0f32; p.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        let lr = params.lr_at(epoch) as f32;
        let mu = params.momentum as f32;
        order.shuffle(&mut stage_rng(derive_seed(params.seed, &[epoch as u64])));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(params.batch_size) {
            let batch: Vec<&[f32]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.patches[i].label.index()).collect();
            let r = batch_loss_grad(plan, &p, &batch, &labels);
            loss_sum += r.loss as f64 * chunk.len() as f64;
            correct += r.correct;
            p.par_iter_mut().zip(velocity.par_iter_mut()).zip(r.grad.par_iter()).for_each(|((p, v), &g)| {
                *v = mu * *v + g;
                *p -= lr * *v;
            });
        }
        if let Some(i) = p.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let snapshot = net.with_params(p.clone())?;
        let val_accuracy =
            if split.validation.is_empty() { None } else { Some(evaluate_net(&snapshot, &split.validation)?.accuracy) };
        records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
            val_accuracy,
        });
    }
    let trained = net.with_params(p)?;
    let final_test_accuracy =
        if split.test.is_empty() { None } else { Some(evaluate_net(&trained, &split.test)?.accuracy) };
    Ok((trained, TrainReport { epochs: records, final_test_accuracy }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::{Patch, PatchOrigin};
    use crate::resnet::{init_net, NetConfig};
    use crate::rng::uniform;

    fn random_set(count: usize, n: usize, bands: usize, seed: u64) -> PatchSet {
        let mut rng = stage_rng(seed);
        let mut set = PatchSet::empty(n, bands);
        for i in 0..count {
            set.patches.push(Patch {
                n,
                bands,
                data: (0..n * n * bands).map(|_| uniform(&mut rng) as f32).collect(),
                label: Rating::from_index(i % 7),
                origin: PatchOrigin { scene_id: i as u32, row: 0, col: 0 },
                augmented: false,
            });
        }
        set
    }

    fn only_train(set: PatchSet) -> SplitResult {
        let (n, b) = (set.n, set.bands);
        SplitResult { train: set, validation: PatchSet::empty(n, b), test: PatchSet::empty(n, b) }
    }

    #[test]
    fn schedule() {
        let p = TrainParams { epochs: 20, ..TrainParams::default() };
        assert_eq!(p.lr_at(11), 0.01);
        assert!((p.lr_at(12) - 0.001).abs() < 1e-15);
        assert!((p.lr_at(17) - 0.0001).abs() < 1e-15);
        assert_eq!(TrainParams { epochs: 1, ..p }.lr_at(0), 0.01);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let net = init_net(&NetConfig::tiny(3, 1)).unwrap();
        let split = only_train(random_set(10, 9, 3, 2));
        let p = TrainParams { epochs: 3, lr: 0.0, batch_size: 4, ..TrainParams::default() };
        let (trained, report) = train(&net, &split, &p).unwrap();
        assert_eq!(trained.params, net.params);
        assert_eq!(trained.input_norm, Some(InputNorm::fit(&split.train).unwrap()));
        assert_eq!(report.epochs.len(), 3);
        assert_eq!(report.final_test_accuracy, None);
    }

    #[test]
    fn memorizes_single_patch() {
        let net = init_net(&NetConfig::tiny(3, 4)).unwrap();
        let mut set = random_set(1, 9, 3, 3);
        set.patches[0].label = Rating::new(6).unwrap();
        let split = only_train(set.clone());
        let p = TrainParams { epochs: 200, batch_size: 1, ..TrainParams::default() };
        let (trained, report) = train(&net, &split, &p).unwrap();
        assert_eq!(report.last().unwrap().train_accuracy, 1.0);
        assert_eq!(evaluate_net(&trained, &set).unwrap().accuracy, 1.0);
    }

    #[test]
    fn deterministic_and_csv() {
        let net = init_net(&NetConfig::tiny(3, 1)).unwrap();
        let split = SplitResult {
            train: random_set(14, 9, 3, 5),
            validation: random_set(7, 9, 3, 6),
            test: random_set(7, 9, 3, 7),
        };
        let p = TrainParams { epochs: 2, batch_size: 5, ..TrainParams::default() };
        let a = train(&net, &split, &p).unwrap();
        assert_eq!(a, train(&net, &split, &p).unwrap());
        let csv = a.1.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,train_acc,val_acc");
        assert_eq!(lines.len(), 3);
        for r in &a.1.epochs {
            assert!(r.train_loss >= 0.0);
            assert!((0.0..=1.0).contains(&r.train_accuracy));
        }
    }

    #[test]
    fn empty_split_rejected() {
        let net = init_net(&NetConfig::tiny(3, 1)).unwrap();
        let split = only_train(PatchSet::empty(9, 3));
        assert!(matches!(train(&net, &split, &TrainParams::default()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn untrained_accuracy_near_chance() {
        let set = random_set(140, 9, 3, 9);
        for seed in 0..10 {
            let net = init_net(&NetConfig::tiny(3, seed)).unwrap();
            let rep = evaluate_net(&net, &set).unwrap();
            assert!((0.05..=0.30).contains(&rep.accuracy), "seed {seed}: {}", rep.accuracy);
            let trace: usize = (0..7).map(|i| rep.confusion[i][i]).sum();
            assert_eq!(trace as f64 / rep.n as f64, rep.accuracy);
        }
    }
}
