//! Stochastic sub-gradient training of linear models (Pegasos schedule).
//!
//! Step `t` (counted from 1 across all epochs) uses `eta = 1 / (lambda * t)`:
//!
//! ```text
//! w <- (1 - eta * lambda) * w
//! b <- (1 - eta * lambda) * b
//! w <- w + eta * g * x,   b <- b + eta * g
//! ```
//!
//! with `g = y` when the hinge is active (`y (w.x + b) < 1`) for
//! classification, or `g = sign(y - w.x - b)` outside the epsilon tube for
//! regression, and `g = 0` otherwise. The bias is shrunk like a weight on a
//! constant feature; without that the first steps (`eta = 1 / lambda`) throw
//! it far outside the useful range. Samples are visited in a fresh
//! seed-shuffled order every epoch.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stage_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl SgdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda {} must be > 0", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearFit {
    #[inline]
    pub fn score(&self, x: &[f32]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

#[inline]
pub fn dot(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a * b as f64).sum()
}

#[derive(Clone, Copy)]
enum Loss {
    Hinge,
    EpsilonInsensitive(f64),
}

fn check_rows(xs: &[&[f32]], ys: &[f64]) -> Result<usize> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!("{} samples but {} targets", xs.len(), ys.len())));
    }
    let dim = xs[0].len();
    if let Some(i) = xs.iter().position(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch(format!("sample {i} has {} features, expected {dim}", xs[i].len())));
    }
    Ok(dim)
}

fn run(xs: &[&[f32]], ys: &[f64], params: &SgdParams, loss: Loss) -> Result<LinearFit> {
    params.validate()?;
    let dim = check_rows(xs, ys)?;
    let mut fit = LinearFit { weights: vec![0.0; dim], bias: 0.0 };
    let mut rng = stage_rng(params.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut t = 0u64;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (params.lambda * t as f64);
            let x = xs[i];
            let score = fit.score(x);
            let g = match loss {
                Loss::Hinge => {
                    if ys[i] * score < 1.0 {
                        ys[i]
                    } else {
                        0.0
                    }
                }
                Loss::EpsilonInsensitive(eps) => {
                    let r = ys[i] - score;
                    if r.abs() > eps {
                        r.signum()
                    } else {
                        0.0
                    }
                }
            };
            let shrink = 1.0 - eta * params.lambda;
            let step = eta * g;
            for (w, &v) in fit.weights.iter_mut().zip(x) {
                *w = shrink * *w + step * v as f64;
            }
            fit.bias = shrink * fit.bias + step;
        }
    }
    if fit.weights.iter().any(|w| !w.is_finite()) || !fit.bias.is_finite() {
        return Err(Error::InvalidValue("training diverged to non-finite weights".into()));
    }
    Ok(fit)
}

/// Binary hinge-loss SVM; `ys` must be +1 or -1 with both present.
pub fn train_hinge(xs: &[&[f32]], ys: &[f64], params: &SgdParams) -> Result<LinearFit> {
    let has_pos = ys.iter().any(|&y| y > 0.0);
    let has_neg = ys.iter().any(|&y| y < 0.0);
    if !ys.is_empty() && !(has_pos && has_neg) {
        return Err(Error::SingleClass);
    }
    fit_hinge(xs, ys, params)
}

/// Like [`train_hinge`] but accepts one-sided targets, as a one-vs-rest
/// member whose class is missing from the data sees.
pub fn fit_hinge(xs: &[&[f32]], ys: &[f64], params: &SgdParams) -> Result<LinearFit> {
    if ys.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidValue("hinge targets must be +1 or -1".into()));
    }
    run(xs, ys, params, Loss::Hinge)
}

/// Epsilon-insensitive linear regression.
pub fn train_epsilon_svr(xs: &[&[f32]], ys: &[f64], epsilon_tube: f64, params: &SgdParams) -> Result<LinearFit> {
    if epsilon_tube.is_nan() || epsilon_tube <= 0.0 {
        return Err(Error::InvalidParameter(format!("epsilon_tube {epsilon_tube} must be > 0")));
    }
    run(xs, ys, params, Loss::EpsilonInsensitive(epsilon_tube))
}

/// `lambda/2 |w|^2 + mean(max(0, 1 - y (w.x + b)))`.
pub fn hinge_objective(fit: &LinearFit, xs: &[&[f32]], ys: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * fit.weights.iter().map(|w| w * w).sum::<f64>();
    let hinge: f64 = xs.iter().zip(ys).map(|(x, &y)| (1.0 - y * fit.score(x)).max(0.0)).sum::<f64>() / xs.len() as f64;
    reg + hinge
}
