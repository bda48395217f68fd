//! Linear baselines on flattened patches: one-vs-rest SVC, epsilon-SVR and
//! the shared evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{dot, fit_hinge, train_epsilon_svr, SgdParams};
use crate::patches::PatchSet;
use crate::rating::{Rating, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassSvmModel {
    /// Always the full vocabulary, ascending.
    pub classes: Vec<Rating>,
    pub feature_len: usize,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub hyperparams: SgdParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub feature_len: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epsilon_tube: f64,
    pub hyperparams: SgdParams,
}

fn features(set: &PatchSet) -> Vec<&[f32]> {
    set.patches.iter().map(|p| p.features()).collect()
}

/// Seven one-vs-rest hinge SVMs, each trained like the pixel classifier.
/// Class `k` uses the seed `hyperparams.seed + k`.
pub fn train_svc(train: &PatchSet, params: &SgdParams) -> Result<MulticlassSvmModel> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    if train.class_counts().len() < 2 {
        return Err(Error::SingleClass);
    }
    let xs = features(train);
    let fits: Vec<_> = Rating::all()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|class| {
            let ys: Vec<f64> = train.patches.iter().map(|p| if p.label == class { 1.0 } else { -1.0 }).collect();
            let p = SgdParams { seed: params.seed.wrapping_add(class.index() as u64), ..*params };
            fit_hinge(&xs, &ys, &p)
        })
        .collect::<Result<_>>()?;
    let (weights, biases) = fits.into_iter().map(|f| (f.weights, f.bias)).unzip();
    Ok(MulticlassSvmModel {
        classes: Rating::all().collect(),
        feature_len: xs[0].len(),
        weights,
        biases,
        hyperparams: *params,
    })
}

impl MulticlassSvmModel {
    pub fn scores(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.feature_len {
            return Err(Error::DimensionMismatch(format!("feature length {} != model {}", x.len(), self.feature_len)));
        }
        Ok(self.weights.iter().zip(&self.biases).map(|(w, b)| dot(w, x) + b).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Index of the first maximum, so ties go to the lowest class.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict_svc(model: &MulticlassSvmModel, x: &[f32]) -> Result<Rating> {
    let scores = model.scores(x)?;
    Ok(model.classes[argmax_lowest(&scores)])
}

pub fn train_svr(train: &PatchSet, epsilon_tube: f64, params: &SgdParams) -> Result<SvrModel> {
    if train.is_empty() {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    let xs = features(train);
    let ys: Vec<f64> = train.patches.iter().map(|p| p.label.value() as f64).collect();
    let fit = train_epsilon_svr(&xs, &ys, epsilon_tube, params)?;
    Ok(SvrModel { feature_len: xs[0].len(), weights: fit.weights, bias: fit.bias, epsilon_tube, hyperparams: *params })
}

impl SvrModel {
    pub fn predict(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.feature_len {
            return Err(Error::DimensionMismatch(format!("feature length {} != model {}", x.len(), self.feature_len)));
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Regression output rounded to the nearest rating class.
    pub fn classify(&self, x: &[f32]) -> Result<Rating> {
        Ok(Rating::nearest(self.predict(x)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Rows are true classes, columns predicted, both in vocabulary order.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for classes absent from the ground truth.
    pub per_class_recall: BTreeMap<u8, Option<f64>>,
    pub n: usize,
}

pub fn evaluate(predictions: &[(Rating, Rating)]) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to evaluate".into()));
    }
    let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    for &(t, p) in predictions {
        confusion[t.index()][p.index()] += 1;
    }
    let n = predictions.len();
    let trace: usize = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
    let per_class_recall = Rating::all()
        .map(|r| {
            let row: usize = confusion[r.index()].iter().sum();
            let recall = (row > 0).then(|| confusion[r.index()][r.index()] as f64 / row as f64);
            (r.value(), recall)
        })
        .collect();
    Ok(EvalReport { accuracy: trace as f64 / n as f64, confusion, per_class_recall, n })
}

impl EvalReport {
    /// Header row of predicted classes, one row per true class.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for r in Rating::all() {
            let _ = write!(out, ",{r}");
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{}", Rating::from_index(i));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn evaluate_svc(model: &MulticlassSvmModel, set: &PatchSet) -> Result<EvalReport> {
    let pairs =
        set.patches.iter().map(|p| Ok((p.label, predict_svc(model, p.features())?))).collect::<Result<Vec<_>>>()?;
    evaluate(&pairs)
}

pub fn evaluate_svr(model: &SvrModel, set: &PatchSet) -> Result<EvalReport> {
    let pairs = set.patches.iter().map(|p| Ok((p.label, model.classify(p.features())?))).collect::<Result<Vec<_>>>()?;
    evaluate(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::{Patch, PatchOrigin};

    fn one_hot_patches(per_class: usize) -> PatchSet {
        let mut set = PatchSet::empty(2, 3);
        for (k, r) in Rating::all().enumerate() {
            for i in 0..per_class {
                set.patches.push(Patch {
                    n: 2,
                    bands: 3,
                    data: (0..12).map(|j| if j == k { 1.0 } else { 0.1 }).collect(),
                    label: r,
                    origin: PatchOrigin { scene_id: k as u32, row: i as u32, col: 0 },
                    augmented: false,
                });
            }
        }
        set
    }

    fn zero_model(biases: Vec<f64>) -> MulticlassSvmModel {
        MulticlassSvmModel {
            classes: Rating::all().collect(),
            feature_len: 4,
            weights: vec![vec![0.0; 4]; 7],
            biases,
            hyperparams: SgdParams { lambda: 1.0, epochs: 1, seed: 0 },
        }
    }

    #[test]
    fn bias_only_model_predicts_class_one() {
        let m = zero_model(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(predict_svc(&m, &[0.3; 4]).unwrap().value(), 1);
        // all tied: lowest class
        let m = zero_model(vec![0.0; 7]);
        assert_eq!(predict_svc(&m, &[0.3; 4]).unwrap().value(), 1);
        assert!(predict_svc(&m, &[0.3; 5]).is_err());
    }

    #[test]
    fn scaled_scores_keep_prediction() {
        let mut m = zero_model(vec![0.2, -0.1, 0.4, 0.0, 0.3, -0.5, 0.1]);
        for (k, w) in m.weights.iter_mut().enumerate() {
            w[k % 4] = 0.3 * k as f64 - 0.7;
        }
        let x = [0.9f32, 0.1, 0.4, 0.6];
        let before = predict_svc(&m, &x).unwrap();
        for s in [0.01, 2.0, 1e3] {
            let mut scaled = m.clone();
            scaled.weights.iter_mut().flatten().for_each(|w| *w *= s);
            scaled.biases.iter_mut().for_each(|b| *b *= s);
            assert_eq!(predict_svc(&scaled, &x).unwrap(), before);
        }
    }

    #[test]
    fn separable_constant_classes() {
        let set = one_hot_patches(8);
        let p = SgdParams { lambda: 1e-4, epochs: 200, seed: 2 };
        let m = train_svc(&set, &p).unwrap();
        let report = evaluate_svc(&m, &set).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(m, train_svc(&set, &p).unwrap());
    }

    #[test]
    fn svc_needs_two_classes() {
        let mut set = one_hot_patches(3);
        set.patches.retain(|p| p.label.value() == 5);
        let p = SgdParams { lambda: 1e-3, epochs: 2, seed: 2 };
        assert!(matches!(train_svc(&set, &p), Err(Error::SingleClass)));
    }

    #[test]
    fn svr_constant_target() {
        let mut set = one_hot_patches(10);
        for p in &mut set.patches {
            p.label = Rating::new(5).unwrap();
        }
        let p = SgdParams { lambda: 1e-3, epochs: 200, seed: 1 };
        let m = train_svr(&set, 0.5, &p).unwrap();
        for patch in &set.patches {
            let y = m.predict(patch.features()).unwrap();
            assert!((4.5..=5.5).contains(&y), "prediction {y}");
        }
        assert!(train_svr(&PatchSet::empty(2, 3), 0.5, &p).is_err());
    }

    #[test]
    fn evaluation_cases() {
        let all: Vec<(Rating, Rating)> = Rating::all().map(|r| (r, r)).collect();
        let rep = evaluate(&all).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(rep.confusion[i][j], (i == j) as usize);
            }
        }
        let one = Rating::new(1).unwrap();
        let all_one: Vec<(Rating, Rating)> = Rating::all().map(|r| (r, one)).collect();
        let rep = evaluate(&all_one).unwrap();
        assert_eq!(rep.accuracy, 1.0 / 7.0);
        for (i, row) in rep.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), 1, "row {i}");
        }
        assert!(evaluate(&[]).is_err());
        let csv = rep.confusion_csv();
        assert!(csv.starts_with("true\\predicted,1,2,5,6,7,8,9\n1,1,0"));
    }
}
