//! Forward pass, reverse-mode gradients and the finite-difference check.
//!
//! Everything here is generic over the float type so the same code runs in
//! `f32` for training and in `f64` for gradient verification.

use rayon::prelude::*;

use super::kernels::{conv1x1_backward, conv1x1_forward, conv3x3_backward, conv3x3_forward, Scalar};
use super::{BlockSpec, ConvSpec, Plan, ResidualNet};
use crate::error::{Error, Result};
use crate::rating::Rating;

/// Square HWC feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub n: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(n: usize, channels: usize, data: Vec<f32>) -> Result<FeatureMap> {
        if data.len() != n * n * channels {
            return Err(Error::DimensionMismatch(format!("{} values for a {n}x{n}x{channels} map", data.len())));
        }
        Ok(FeatureMap { n, channels, data })
    }
}

/// Borrowed weights of one residual block.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams<'a> {
    pub cin: usize,
    pub cout: usize,
    pub conv1: (&'a [f32], &'a [f32]),
    pub conv2: (&'a [f32], &'a [f32]),
    pub projection: Option<(&'a [f32], &'a [f32])>,
    pub rectifiers: bool,
}

impl ResidualNet {
    pub fn block_params(&self, i: usize) -> BlockParams<'_> {
        let b = &self.plan.blocks[i];
        let p = &self.params;
        BlockParams {
            cin: b.conv1.cin,
            cout: b.conv1.cout,
            conv1: (b.conv1.weights(p), b.conv1.bias(p)),
            conv2: (b.conv2.weights(p), b.conv2.bias(p)),
            projection: b.projection.map(|s| (s.weights(p), s.bias(p))),
            rectifiers: self.plan.rectifiers,
        }
    }
}

#[inline]
fn relu<T: Scalar>(on: bool, v: &mut [T]) {
    if on {
        for x in v {
            *x = x.max(T::zero());
        }
    }
}

/// Rectifier whose on/off pattern is fixed by `gates` instead of the sign
/// of `v` (`None` means the ordinary rectifier).
#[inline]
fn gate<T: Scalar>(on: bool, gates: Option<&[bool]>, v: &mut [T]) {
    match gates {
        Some(g) if on => v.iter_mut().zip(g).for_each(|(x, &open)| {
            if !open {
                *x = T::zero();
            }
        }),
        _ => relu(on, v),
    }
}

/// Zeroes `g` where the rectifier input `pre` was not positive.
#[inline]
fn relu_back<T: Scalar>(on: bool, pre: &[T], g: &mut [T]) {
    if on {
        for (g, &p) in g.iter_mut().zip(pre) {
            if p <= T::zero() {
                *g = T::zero();
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn block_forward<T: Scalar>(
    x: &[T],
    n: usize,
    cin: usize,
    cout: usize,
    conv1: (&[T], &[T]),
    conv2: (&[T], &[T]),
    projection: Option<(&[T], &[T])>,
    rectifiers: bool,
    gates: Option<(&[bool], &[bool])>,
) -> BlockTrace<T> {
    let mut h1 = vec![T::zero(); n * n * cout];
    conv3x3_forward(x, n, cin, cout, conv1.0, conv1.1, &mut h1);
    let mut r1 = h1.clone();
    gate(rectifiers, gates.map(|g| g.0), &mut r1);
    let mut z = vec![T::zero(); n * n * cout];
    conv3x3_forward(&r1, n, cout, cout, conv2.0, conv2.1, &mut z);
    match projection {
        Some((w, b)) => {
            let mut s = vec![T::zero(); n * n * cout];
            conv1x1_forward(x, cin, cout, w, b, &mut s);
            z.iter_mut().zip(&s).for_each(|(z, &s)| *z = *z + s);
        }
        None => z.iter_mut().zip(x).for_each(|(z, &s)| *z = *z + s),
    }
    let mut out = z.clone();
    gate(rectifiers, gates.map(|g| g.1), &mut out);
    BlockTrace { h1, r1, z, out }
}

/// `relu(F(x) + skip(x))` for one block, outside any network.
pub fn residual_block_forward(x: &FeatureMap, block: &BlockParams<'_>) -> Result<FeatureMap> {
    if x.channels != block.cin || x.data.len() != x.n * x.n * x.channels {
        return Err(Error::DimensionMismatch(format!("block expects {} channels, map has {}", block.cin, x.channels)));
    }
    let (cin, cout) = (block.cin, block.cout);
    let conv_ok = |(w, b): (&[f32], &[f32]), k: usize, ci: usize| w.len() == k * k * ci * cout && b.len() == cout;
    let shapes_ok = conv_ok(block.conv1, 3, cin)
        && conv_ok(block.conv2, 3, cout)
        && match block.projection {
            Some(p) => conv_ok(p, 1, cin),
            None => cin == cout,
        };
    if !shapes_ok {
        return Err(Error::DimensionMismatch("block weights do not match channel counts".into()));
    }
    let t = block_forward(&x.data, x.n, cin, cout, block.conv1, block.conv2, block.projection, block.rectifiers, None);
    FeatureMap::new(x.n, cout, t.out)
}

struct BlockTrace<T> {
    h1: Vec<T>,
    r1: Vec<T>,
    z: Vec<T>,
    out: Vec<T>,
}

struct Trace<T> {
    stem_pre: Vec<T>,
    stem_out: Vec<T>,
    blocks: Vec<BlockTrace<T>>,
    pooled: Vec<T>,
    logits: Vec<T>,
}

fn conv_params<'a, T>(s: &ConvSpec, p: &'a [T]) -> (&'a [T], &'a [T]) {
    (s.weights(p), s.bias(p))
}

fn forward_trace<T: Scalar>(plan: &Plan, p: &[T], x: &[T]) -> Trace<T> {
    forward_gated(plan, p, x, None)
}

/// Forward pass; with `gates` every rectifier follows the given on/off
/// pattern, laid out as [`rectifier_states`] produces it.
fn forward_gated<T: Scalar>(plan: &Plan, p: &[T], x: &[T], gates: Option<&[bool]>) -> Trace<T> {
    let n = plan.n;
    let s = &plan.stem;
    let mut rest = gates;
    let mut take = |len: usize| {
        rest.map(|g| {
            let (head, tail) = g.split_at(len);
            rest = Some(tail);
            head
        })
    };
    let mut stem_pre = vec![T::zero(); n * n * s.cout];
    conv3x3_forward(x, n, s.cin, s.cout, s.weights(p), s.bias(p), &mut stem_pre);
    let mut stem_out = stem_pre.clone();
    gate(plan.rectifiers, take(stem_out.len()), &mut stem_out);
    let mut blocks: Vec<BlockTrace<T>> = Vec::with_capacity(plan.blocks.len());
    for b in &plan.blocks {
        let len = n * n * b.conv1.cout;
        let block_gates = match (take(len), take(len)) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        };
        let input = blocks.last().map_or(&stem_out, |t| &t.out);
        let t = block_forward(
            input,
            n,
            b.conv1.cin,
            b.conv1.cout,
            conv_params(&b.conv1, p),
            conv_params(&b.conv2, p),
            b.projection.as_ref().map(|s| conv_params(s, p)),
            plan.rectifiers,
            block_gates,
        );
        blocks.push(t);
    }
    let last = blocks.last().map_or(&stem_out, |t| &t.out);
    let c = plan.fc.cin;
    let mut pooled = vec![T::zero(); c];
    for px in last.chunks_exact(c) {
        pooled.iter_mut().zip(px).for_each(|(a, &v)| *a = *a + v);
    }
    let inv = T::one() / T::from(n * n).expect("pixel count");
    pooled.iter_mut().for_each(|v| *v = *v * inv);
    let mut logits = vec![T::zero(); plan.fc.cout];
    conv1x1_forward(&pooled, c, plan.fc.cout, plan.fc.weights(p), plan.fc.bias(p), &mut logits);
    Trace { stem_pre, stem_out, blocks, pooled, logits }
}

/// Adds the gradient of `loss_weight * CE(label)` for one sample into `grad`.
fn backward_sample<T: Scalar>(
    plan: &Plan,
    p: &[T],
    x: &[T],
    t: &Trace<T>,
    label: usize,
    loss_weight: T,
    grad: &mut [T],
) {
    let n = plan.n;
    let mut dlogits = softmax(&t.logits);
    dlogits[label] = dlogits[label] - T::one();
    dlogits.iter_mut().for_each(|g| *g = *g * loss_weight);

    let fc = &plan.fc;
    let mut dpooled = vec![T::zero(); fc.cin];
    {
        let (gw, gb) = split_grad(fc, grad);
        conv1x1_backward(&t.pooled, fc.cin, fc.cout, fc.weights(p), &dlogits, &mut dpooled, gw, gb);
    }
    let inv = T::one() / T::from(n * n).expect("pixel count");
    let mut g: Vec<T> = (0..n * n).flat_map(|_| dpooled.iter().map(move |&v| v * inv)).collect();

    for (i, b) in plan.blocks.iter().enumerate().rev() {
        let bt = &t.blocks[i];
        let input = if i == 0 { &t.stem_out } else { &t.blocks[i - 1].out };
        g = backward_block(plan, b, p, input, bt, g, grad);
    }

    relu_back(plan.rectifiers, &t.stem_pre, &mut g);
    let s = &plan.stem;
    let (gw, gb) = split_grad(s, grad);
    conv3x3_backward(x, n, s.cin, s.cout, s.weights(p), &g, None, gw, gb);
}

fn backward_block<T: Scalar>(
    plan: &Plan,
    b: &BlockSpec,
    p: &[T],
    input: &[T],
    t: &BlockTrace<T>,
    mut dz: Vec<T>,
    grad: &mut [T],
) -> Vec<T> {
    let n = plan.n;
    relu_back(plan.rectifiers, &t.z, &mut dz);
    let mut dinput = match b.projection {
        Some(s) => {
            let mut d = vec![T::zero(); input.len()];
            let (gw, gb) = split_grad(&s, grad);
            conv1x1_backward(input, s.cin, s.cout, s.weights(p), &dz, &mut d, gw, gb);
            d
        }
        None => dz.clone(),
    };
    let c2 = &b.conv2;
    let mut dr1 = vec![T::zero(); t.r1.len()];
    {
        let (gw, gb) = split_grad(c2, grad);
        conv3x3_backward(&t.r1, n, c2.cin, c2.cout, c2.weights(p), &dz, Some(&mut dr1), gw, gb);
    }
    relu_back(plan.rectifiers, &t.h1, &mut dr1);
    let c1 = &b.conv1;
    let (gw, gb) = split_grad(c1, grad);
    conv3x3_backward(input, n, c1.cin, c1.cout, c1.weights(p), &dr1, Some(&mut dinput), gw, gb);
    dinput
}

/// Disjoint weight and bias gradient slices; biases directly follow weights.
fn split_grad<'a, T>(s: &ConvSpec, grad: &'a mut [T]) -> (&'a mut [T], &'a mut [T]) {
    let (w, b) = grad[s.weight_offset..s.bias_offset + s.cout].split_at_mut(s.weight_len());
    (w, b)
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> T {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let lse = logits.iter().map(|&l| (l - m).exp()).sum::<T>().ln() + m;
    lse - logits[label]
}

fn check_batch(plan: &Plan, batch: &[&[f32]]) -> Result<()> {
    if let Some(i) = batch.iter().position(|x| x.len() != plan.input_len()) {
        return Err(Error::DimensionMismatch(format!(
            "input {i} has {} values, net expects {}x{}x{}",
            batch[i].len(),
            plan.n,
            plan.n,
            plan.bands
        )));
    }
    Ok(())
}

fn as_refs<'a>(owned: &'a Option<Vec<Vec<f32>>>, batch: &[&'a [f32]]) -> Vec<&'a [f32]> {
    match owned {
        Some(v) => v.iter().map(Vec::as_slice).collect(),
        None => batch.to_vec(),
    }
}

/// Logits for each input, one row per batch item.
pub fn forward(net: &ResidualNet, batch: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
    check_batch(&net.plan, batch)?;
    let owned = net.standardize(batch);
    let batch = as_refs(&owned, batch);
    Ok(batch.par_iter().map(|x| forward_trace(&net.plan, &net.params, x).logits).collect())
}

pub(crate) struct BatchResult<T> {
    pub loss: T,
    pub grad: Vec<T>,
    pub correct: usize,
}

/// Mean cross-entropy and its gradient. Samples run in parallel; their
/// gradients are summed in batch order so the result does not depend on the
/// worker count.
pub(crate) fn batch_loss_grad<T: Scalar>(plan: &Plan, p: &[T], batch: &[&[T]], labels: &[usize]) -> BatchResult<T> {
    let w = T::one() / T::from(batch.len()).expect("batch size");
    let per_sample: Vec<(T, Vec<T>, bool)> = batch
        .par_iter()
        .zip(labels)
        .map(|(x, &label)| {
            let t = forward_trace(plan, p, x);
            let mut g = vec![T::zero(); p.len()];
            backward_sample(plan, p, x, &t, label, w, &mut g);
            let pred = super::train::argmax_lowest(&t.logits);
            (cross_entropy(&t.logits, label), g, pred == label)
        })
        .collect();
    let mut grad = vec![T::zero(); p.len()];
    let mut loss = T::zero();
    let mut correct = 0;
    for (l, g, ok) in per_sample {
        loss = loss + l;
        grad.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b);
        correct += ok as usize;
    }
    BatchResult { loss: loss * w, grad, correct }
}

pub fn loss_and_grad(net: &ResidualNet, batch: &[&[f32]], labels: &[Rating]) -> Result<(f64, Vec<f32>)> {
    check_batch(&net.plan, batch)?;
    if batch.len() != labels.len() || batch.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} inputs with {} labels", batch.len(), labels.len())));
    }
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let owned = net.standardize(batch);
    let r = batch_loss_grad(&net.plan, &net.params, &as_refs(&owned, batch), &idx);
    Ok((r.loss as f64, r.grad))
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(&a, &n)| relative_error(a, n)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    /// Central differences with every rectifier held in its unperturbed
    /// on/off state.
    pub numeric: Vec<f64>,
    /// Plain central differences of the loss.
    pub numeric_raw: Vec<f64>,
    /// True where a probe switched some rectifier, i.e. `[p - h, p + h]`
    /// straddles a kink of the loss.
    pub kinked: Vec<bool>,
    pub max_relative_error: f64,
    pub max_relative_error_raw: f64,
    /// Parameter index where `max_relative_error` occurs.
    pub worst_index: usize,
}

impl GradCheckReport {
    pub fn kinked_count(&self) -> usize {
        self.kinked.iter().filter(|&&k| k).count()
    }

    /// Error of a replacement analytic gradient against the same numeric one.
    pub fn max_relative_error_against(&self, analytic: &[f64]) -> f64 {
        max_relative_error(analytic, &self.numeric)
    }
}

/// On/off state of every rectifier input of one sample.
fn rectifier_states<T: Scalar>(t: &Trace<T>, out: &mut Vec<bool>) {
    let on = |v: &[T], out: &mut Vec<bool>| out.extend(v.iter().map(|&x| x > T::zero()));
    on(&t.stem_pre, out);
    for b in &t.blocks {
        on(&b.h1, out);
        on(&b.z, out);
    }
}

/// Finite-difference check of the reverse-mode gradient, all in arithmetic
/// of type `T`. Every parameter is probed at `p +- h`.
///
/// The loss is piecewise smooth: wherever `[p - h, p + h]` crosses a
/// rectifier kink the plain difference `(f(p + h) - f(p - h)) / 2h` mixes
/// two pieces. `numeric` therefore evaluates `f` with each sample's
/// rectifier pattern frozen at its value at `p`, which is the smooth piece
/// the analytic gradient differentiates. Without rectifiers both estimates
/// coincide.
pub fn gradient_check_in<T: Scalar>(
    net: &ResidualNet,
    batch: &[&[f32]],
    labels: &[Rating],
    step: f64,
) -> Result<GradCheckReport> {
    check_batch(&net.plan, batch)?;
    if batch.len() != labels.len() || batch.is_empty() {
        return Err(Error::DimensionMismatch("batch and labels differ in length".into()));
    }
    let cast = |v: &[f32]| -> Vec<T> { v.iter().map(|&x| T::from(x).expect("finite")).collect() };
    let owned = net.standardize(batch);
    let inputs: Vec<Vec<T>> = as_refs(&owned, batch).iter().map(|x| cast(x)).collect();
    let refs: Vec<&[T]> = inputs.iter().map(|v| v.as_slice()).collect();
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let mut p = cast(&net.params);
    let plan = &net.plan;
    let analytic = batch_loss_grad(plan, &p, &refs, &idx).grad;
    let base: Vec<Vec<bool>> = refs
        .iter()
        .map(|x| {
            let mut s = Vec::new();
            rectifier_states(&forward_trace(plan, &p, x), &mut s);
            s
        })
        .collect();
    let batch_t = T::from(refs.len()).expect("batch size");
    // (pinned loss, free loss, any rectifier switched)
    let probe = |p: &[T]| -> (T, T, bool) {
        let (mut pinned, mut free, mut switched) = (T::zero(), T::zero(), false);
        let mut states = Vec::new();
        for ((x, &l), gates) in refs.iter().zip(&idx).zip(&base) {
            let t = forward_trace(plan, p, x);
            states.clear();
            rectifier_states(&t, &mut states);
            free = free + cross_entropy(&t.logits, l);
            if plan.rectifiers && states != *gates {
                switched = true;
                pinned = pinned + cross_entropy(&forward_gated(plan, p, x, Some(gates)).logits, l);
            } else {
                pinned = pinned + cross_entropy(&t.logits, l);
            }
        }
        (pinned / batch_t, free / batch_t, switched)
    };
    let h = T::from(step).expect("finite step");
    let to64 = |v: T| v.to_f64().expect("finite");
    let mut numeric = Vec::with_capacity(p.len());
    let mut numeric_raw = Vec::with_capacity(p.len());
    let mut kinked = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = probe(&p);
        p[i] = orig - h;
        let down = probe(&p);
        p[i] = orig;
        numeric.push(to64((up.0 - down.0) / (h + h)));
        numeric_raw.push(to64((up.1 - down.1) / (h + h)));
        kinked.push(up.2 || down.2);
    }
    let analytic: Vec<f64> = analytic.into_iter().map(to64).collect();
    let max_relative_error_raw = max_relative_error(&analytic, &numeric_raw);
    let (worst_index, max_relative_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        max_relative_error_raw,
        analytic,
        numeric,
        numeric_raw,
        kinked,
        max_relative_error,
        worst_index,
    })
}

/// [`gradient_check_in`] in double precision.
pub fn gradient_check(net: &ResidualNet, batch: &[&[f32]], labels: &[Rating], step: f64) -> Result<GradCheckReport> {
    gradient_check_in::<f64>(net, batch, labels, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resnet::{init_net, NetConfig};
    use crate::rng::{stage_rng, uniform};

    fn inputs(count: usize, len: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = stage_rng(seed);
        (0..count).map(|_| (0..len).map(|_| uniform(&mut rng) as f32).collect()).collect()
    }

    fn labels(count: usize) -> Vec<Rating> {
        (0..count).map(|i| Rating::from_index(i % 7)).collect()
    }

    #[test]
    fn logits_shape_and_duplicates() {
        let net = init_net(&NetConfig::tiny(3, 1)).unwrap();
        let xs = inputs(2, 9 * 9 * 3, 4);
        let batch = [&xs[0][..], &xs[1][..], &xs[0][..]];
        let out = forward(&net, &batch).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|l| l.len() == 7));
        assert_eq!(out[0], out[2]);
        assert!(forward(&net, &[&xs[0][..10]]).is_err());
    }

    #[test]
    fn uniform_logits_give_ln7() {
        let mut net = init_net(&NetConfig::tiny(3, 1)).unwrap();
        let fc = net.plan.fc;
        net.params[fc.weight_offset..fc.bias_offset + fc.cout].fill(0.0);
        let xs = inputs(3, 9 * 9 * 3, 2);
        let batch: Vec<&[f32]> = xs.iter().map(|v| v.as_slice()).collect();
        let (loss, _) = loss_and_grad(&net, &batch, &labels(3)).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn duplicated_batch_keeps_loss() {
        let net = init_net(&NetConfig::tiny(3, 3)).unwrap();
        let xs = inputs(3, 9 * 9 * 3, 5);
        let once: Vec<&[f32]> = xs.iter().map(|v| v.as_slice()).collect();
        let twice: Vec<&[f32]> = once.iter().chain(&once).copied().collect();
        let l = labels(3);
        let l2: Vec<Rating> = l.iter().chain(&l).copied().collect();
        let (a, ga) = loss_and_grad(&net, &once, &l).unwrap();
        let (b, gb) = loss_and_grad(&net, &twice, &l2).unwrap();
        assert!((a - b).abs() < 1e-6);
        assert!(ga.iter().zip(&gb).all(|(x, y)| (x - y).abs() < 1e-5));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        for logits in [vec![0.0f64; 7], vec![1e3, -1e3, 0.0, 5.0, 5.0, 2.0, -7.0], vec![-50.0; 7]] {
            let s: f64 = softmax(&logits).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    fn zero_branch_block(c: usize) -> (Vec<f32>, Vec<f32>) {
        (vec![0.0; 9 * c * c], vec![0.0; c])
    }

    #[test]
    fn zeroed_branch_is_identity_on_nonnegative_input() {
        let (w, b) = zero_branch_block(5);
        let block =
            BlockParams { cin: 5, cout: 5, conv1: (&w, &b), conv2: (&w, &b), projection: None, rectifiers: true };
        let x = FeatureMap::new(6, 5, inputs(1, 180, 9).remove(0)).unwrap();
        assert_eq!(residual_block_forward(&x, &block).unwrap(), x);
        // negative entries are rectified
        let neg = FeatureMap::new(1, 5, vec![-1.0, 2.0, -0.5, 0.0, 3.0]).unwrap();
        assert_eq!(residual_block_forward(&neg, &block).unwrap().data, vec![0.0, 2.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn zero_input_zero_output() {
        let net = init_net(&NetConfig::tiny(3, 2)).unwrap();
        let x = FeatureMap::new(9, 4, vec![0.0; 9 * 9 * 4]).unwrap();
        assert_eq!(residual_block_forward(&x, &net.block_params(0)).unwrap(), x);
    }

    #[test]
    fn block_shape_checks() {
        let net = init_net(&NetConfig::tiny(3, 2)).unwrap();
        let x = FeatureMap::new(5, 3, vec![0.5; 75]).unwrap();
        assert!(residual_block_forward(&x, &net.block_params(0)).is_err());
        let (w, b) = zero_branch_block(4);
        let mismatched =
            BlockParams { cin: 4, cout: 6, conv1: (&w, &b), conv2: (&w, &b), projection: None, rectifiers: true };
        let x = FeatureMap::new(5, 4, vec![0.5; 100]).unwrap();
        assert!(residual_block_forward(&x, &mismatched).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = init_net(&NetConfig::tiny(11, 7)).unwrap();
        let xs = inputs(4, 9 * 9 * 11, 8);
        let batch: Vec<&[f32]> = xs.iter().map(|v| v.as_slice()).collect();
        let report = gradient_check(&net, &batch, &labels(4), 1e-3).unwrap();
        assert!(report.max_relative_error < 1e-3, "{}", report.max_relative_error);
        let (_, g32) = loss_and_grad(&net, &batch, &labels(4)).unwrap();
        assert!(g32.iter().zip(&report.analytic).all(|(&a, &b)| (a as f64 - b).abs() < 1e-5));
    }

    #[test]
    fn projection_gradients() {
        let config = NetConfig { channels_per_stage: vec![3, 5], num_blocks: 2, ..NetConfig::tiny(2, 11) };
        let net = init_net(&config).unwrap();
        let xs = inputs(3, 9 * 9 * 2, 12);
        let batch: Vec<&[f32]> = xs.iter().map(|v| v.as_slice()).collect();
        let r = gradient_check(&net, &batch, &labels(3), 1e-3).unwrap();
        assert!(r.max_relative_error < 1e-3, "{}", r.max_relative_error);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let net = init_net(&NetConfig { rectifiers: false, ..NetConfig::tiny(11, 7) }).unwrap();
        let xs = inputs(4, 9 * 9 * 11, 8);
        let batch: Vec<&[f32]> = xs.iter().map(|v| v.as_slice()).collect();
        let r = gradient_check(&net, &batch, &labels(4), 1e-3).unwrap();
        assert!(r.max_relative_error < 1e-4, "{}", r.max_relative_error);
        assert_eq!(r.kinked_count(), 0);
        assert_eq!(r.max_relative_error, r.max_relative_error_raw);
        let mut bad = r.analytic.clone();
        let i = (0..bad.len()).max_by(|&a, &b| bad[a].abs().total_cmp(&bad[b].abs())).unwrap();
        bad[i] *= 1.1;
        assert!(r.max_relative_error_against(&bad) > 1e-3);
    }
}
