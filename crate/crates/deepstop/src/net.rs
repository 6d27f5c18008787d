//! Feedforward decision networks.
//!
//! Each network maps a feature vector to a stopping probability. Hidden
//! layers are affine maps followed by batch normalization and a ReLU; the
//! output layer is affine followed by a logistic. Hard decisions threshold
//! the pre-sigmoid activation at zero, so the trained soft rule and the
//! deployed hard rule share all parameters.
//!
//! Training-mode forward passes normalize with batch statistics and return a
//! tape; inference-mode passes use the frozen running statistics. The
//! backward pass differentiates through the batch statistics themselves,
//! not just the centered values.

use crate::rng::Stream;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Keep-fraction for the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.9;
/// Variance floor inside the normalizer.
pub const BN_EPSILON: f64 = 1e-6;

/// Per-layer batch normalization state: learnable scale/shift plus the
/// running moments used at inference time.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

/// Parameters of one decision network.
///
/// `weights[l]` has shape `[out, in]`; the last entry is the `1 x q` output
/// layer, which has no batch normalization. `bn[l]` belongs to hidden layer
/// `l`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NetworkParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub bn: Vec<BatchNorm>,
}

/// Everything the backward pass needs from a training-mode forward pass.
///
/// Consumed by value when computing gradients so a tape cannot be replayed
/// against parameters it no longer describes.
pub struct ForwardTape {
    /// Layer inputs: `inputs[0]` is the feature batch, `inputs[l]` the
    /// post-ReLU activations feeding affine layer `l`.
    inputs: Vec<Array2<f64>>,
    /// Normalized pre-activations per hidden layer.
    xhat: Vec<Array2<f64>>,
    /// Batch means and biased batch variances per hidden layer.
    pub mu: Vec<Array1<f64>>,
    pub var: Vec<Array1<f64>>,
    /// Post-BN, pre-ReLU values (the ReLU gate).
    gated: Vec<Array2<f64>>,
    /// Stopping probabilities, clamped strictly inside (0, 1).
    pub probs: Array1<f64>,
}

/// Gradients (or first/second moment accumulators) with the same shape as
/// the trainable parameters of a network.
#[derive(Clone, Debug)]
pub struct NetGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub gamma: Vec<Array1<f64>>,
    pub beta: Vec<Array1<f64>>,
}

impl NetGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        NetGrads {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            gamma: params.bn.iter().map(|s| Array1::zeros(s.gamma.raw_dim())).collect(),
            beta: params.bn.iter().map(|s| Array1::zeros(s.beta.raw_dim())).collect(),
        }
    }

    /// Mutable flat views over every tensor, in a fixed order shared with
    /// [`NetworkParams::trainable_slices_mut`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for w in &mut self.weights {
            out.push(w.as_slice_mut().expect("contiguous"));
        }
        for b in &mut self.biases {
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        for g in &mut self.gamma {
            out.push(g.as_slice_mut().expect("contiguous"));
        }
        for b in &mut self.beta {
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.gamma.iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.beta.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Numerically stable logistic, clamped to the open unit interval.
pub fn logistic(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn check_finite_batch(x: &ArrayView2<f64>) -> Result<()> {
    for (i, v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature { index: i, value: *v });
        }
    }
    Ok(())
}

impl NetworkParams {
    /// Xavier-uniform initialization; batch-norm scale starts at one, shift
    /// at zero, running moments at (0, 1).
    pub fn init(feature_dim: usize, hidden: &[usize], stream: Stream) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidSpec("network needs at least one feature".into()));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidSpec("hidden widths must be positive".into()));
        }
        let mut dims = vec![feature_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let s = stream.derive(l as u64);
            let w = Array2::from_shape_fn((fan_out, fan_in), |(r, c)| {
                bound * (2.0 * s.uniform(r * fan_in + c) - 1.0)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        let bn = hidden.iter().map(|&q| BatchNorm::identity(q)).collect();
        Ok(NetworkParams { weights, biases, bn })
    }

    pub fn feature_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.bn.iter().map(|s| s.gamma.len()).collect()
    }

    /// Number of affine parameters (weights plus biases across all layers).
    pub fn affine_param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Affine parameters plus the learnable batch-norm scales and shifts.
    pub fn trainable_param_count(&self) -> usize {
        self.affine_param_count() + 2 * self.bn.iter().map(|s| s.gamma.len()).sum::<usize>()
    }

    /// Mutable flat views over the trainable tensors, matching the order of
    /// [`NetGrads::slices_mut`]. Running moments are excluded: they are
    /// updated by exponential smoothing, never by the optimizer.
    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for w in &mut self.weights {
            out.push(w.as_slice_mut().expect("contiguous"));
        }
        for b in &mut self.biases {
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        let mut betas = Vec::new();
        for s in &mut self.bn {
            out.push(s.gamma.as_slice_mut().expect("contiguous"));
            betas.push(s.beta.as_slice_mut().expect("contiguous"));
        }
        out.extend(betas);
        out
    }

    fn check_input(&self, x: &ArrayView2<f64>, min_rows: usize) -> Result<()> {
        if x.ncols() != self.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} features, batch has {}",
                self.feature_dim(),
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyBatch("forward pass on empty batch".into()));
        }
        if x.nrows() < min_rows {
            return Err(Error::BatchTooSmall);
        }
        check_finite_batch(x)
    }

    /// Training-mode forward pass: normalizes with the statistics of this
    /// batch and records a tape. Pure; running moments are untouched until
    /// [`NetworkParams::update_running_stats`] is called with the tape.
    /// Needs at least two rows so the batch variance is meaningful.
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, ForwardTape)> {
        self.check_input(&x, 2)?;
        let k = x.nrows() as f64;
        let n_hidden = self.bn.len();
        let mut inputs = vec![x.to_owned()];
        let mut xhat = Vec::with_capacity(n_hidden);
        let mut mu = Vec::with_capacity(n_hidden);
        let mut var = Vec::with_capacity(n_hidden);
        let mut gated = Vec::with_capacity(n_hidden);
        for l in 0..n_hidden {
            let z = inputs[l].dot(&self.weights[l].t()) + &self.biases[l];
            let m = z.mean_axis(Axis(0)).expect("nonempty batch");
            let centered = &z - &m;
            let v = centered.mapv(|c| c * c).sum_axis(Axis(0)) / k;
            let inv = v.mapv(|w| 1.0 / (w + BN_EPSILON).sqrt());
            let xh = &centered * &inv;
            let y = &xh * &self.bn[l].gamma + &self.bn[l].beta;
            let h = y.mapv(|w| w.max(0.0));
            mu.push(m);
            var.push(v);
            xhat.push(xh);
            gated.push(y);
            inputs.push(h);
        }
        let last = inputs.len() - 1;
        let pre = inputs[last].dot(&self.weights[n_hidden].t()) + &self.biases[n_hidden];
        let probs = pre.index_axis(Axis(1), 0).mapv(logistic);
        let tape = ForwardTape { inputs, xhat, mu, var, gated, probs: probs.clone() };
        Ok((probs, tape))
    }

    /// Inference-mode pre-sigmoid activations, using running statistics.
    pub fn pre_activation_infer(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(&x, 1)?;
        let n_hidden = self.bn.len();
        let mut h = x.to_owned();
        for l in 0..n_hidden {
            let z = h.dot(&self.weights[l].t()) + &self.biases[l];
            let s = &self.bn[l];
            let inv = s.running_var.mapv(|w| 1.0 / (w + BN_EPSILON).sqrt());
            let y = (&z - &s.running_mean) * &inv * &s.gamma + &s.beta;
            h = y.mapv(|w| w.max(0.0));
        }
        let pre = h.dot(&self.weights[n_hidden].t()) + &self.biases[n_hidden];
        Ok(pre.index_axis(Axis(1), 0).to_owned())
    }

    /// Inference-mode stopping probabilities.
    pub fn forward_infer(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.pre_activation_infer(x)?.mapv(logistic))
    }

    /// Hard decisions: stop where the pre-sigmoid activation is >= 0, which
    /// matches soft probability >= 1/2.
    pub fn decide_hard(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        Ok(self.pre_activation_infer(x)?.iter().map(|&p| p >= 0.0).collect())
    }

    /// Fold this tape's batch moments into the running statistics:
    /// `running <- 0.9 running + 0.1 batch`, with the biased batch variance.
    pub fn update_running_stats(&mut self, tape: &ForwardTape) {
        for l in 0..self.bn.len() {
            let s = &mut self.bn[l];
            s.running_mean = &s.running_mean * BN_MOMENTUM + &tape.mu[l] * (1.0 - BN_MOMENTUM);
            s.running_var = &s.running_var * BN_MOMENTUM + &tape.var[l] * (1.0 - BN_MOMENTUM);
        }
    }

    /// Batch-mean training objective: `mean_k [cont_k + (stop_k - cont_k) p_k]`.
    pub fn surrogate_value(probs: &Array1<f64>, stop: &[f64], cont: &[f64]) -> f64 {
        let k = probs.len();
        let mut total = 0.0;
        for i in 0..k {
            total += cont[i] + (stop[i] - cont[i]) * probs[i];
        }
        total / k as f64
    }

    /// Gradient of the surrogate objective with respect to every trainable
    /// tensor. `stop[k]` and `cont[k]` are the rewards for stopping now and
    /// for following the already-trained later rules. Differentiates through
    /// the batch statistics, so duplicated rows leave the gradient of the
    /// mean unchanged.
    pub fn surrogate_gradient(
        &self,
        tape: ForwardTape,
        stop: &[f64],
        cont: &[f64],
    ) -> Result<NetGrads> {
        let k = tape.probs.len();
        if stop.len() != k || cont.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "reward vectors ({}, {}) do not match batch size {k}",
                stop.len(),
                cont.len()
            )));
        }
        let kf = k as f64;
        let n_hidden = self.bn.len();
        let mut grads = NetGrads::zeros_like(self);

        // d(surrogate)/d(pre-sigmoid_k) = (stop_k - cont_k) p_k (1 - p_k) / K.
        let delta = Array1::from_shape_fn(k, |i| {
            (stop[i] - cont[i]) * tape.probs[i] * (1.0 - tape.probs[i]) / kf
        });

        let h_last = &tape.inputs[n_hidden];
        grads.weights[n_hidden] = delta.view().insert_axis(Axis(0)).dot(h_last);
        grads.biases[n_hidden] = Array1::from_elem(1, delta.sum());
        // Upstream gradient flowing into the hidden activations.
        let mut dh = delta.insert_axis(Axis(1)).dot(&self.weights[n_hidden]);

        for l in (0..n_hidden).rev() {
            let mask = tape.gated[l].mapv(|y| if y > 0.0 { 1.0 } else { 0.0 });
            let dy = &dh * &mask;
            grads.gamma[l] = (&dy * &tape.xhat[l]).sum_axis(Axis(0));
            grads.beta[l] = dy.sum_axis(Axis(0));
            let dxhat = &dy * &self.bn[l].gamma;
            let s1 = dxhat.sum_axis(Axis(0));
            let s2 = (&dxhat * &tape.xhat[l]).sum_axis(Axis(0));
            let inv = tape.var[l].mapv(|w| 1.0 / (w + BN_EPSILON).sqrt());
            // Backward through z -> (z - mu_B)/sqrt(var_B + eps), where both
            // batch moments depend on every row.
            let dz = (&(&dxhat * kf) - &s1 - &(&tape.xhat[l] * &s2)) * &inv / kf;
            grads.weights[l] = dz.t().dot(&tape.inputs[l]);
            grads.biases[l] = dz.sum_axis(Axis(0));
            dh = dz.dot(&self.weights[l]);
        }
        Ok(grads)
    }
}

/// A rule that always stops (`stop = true`) or never stops, regardless of
/// the features. Useful as a baseline and in tests.
pub fn constant_rule(feature_dim: usize, stop: bool) -> NetworkParams {
    let pre = if stop { 1.0 } else { -1.0 };
    NetworkParams {
        weights: vec![Array2::zeros((1, feature_dim)), Array2::zeros((1, 1))],
        biases: vec![Array1::zeros(1), Array1::from_elem(1, pre)],
        bn: vec![BatchNorm::identity(1)],
    }
}

/// A rule whose pre-sigmoid activation equals `x[feature] - threshold` when
/// `stop_when_high`, or its negation otherwise, so the hard decision is a
/// one-sided threshold (inclusive at the boundary).
pub fn threshold_rule(
    feature_dim: usize,
    feature: usize,
    threshold: f64,
    stop_when_high: bool,
) -> NetworkParams {
    assert!(feature < feature_dim);
    let mut w1 = Array2::zeros((2, feature_dim));
    w1[[0, feature]] = 1.0;
    w1[[1, feature]] = -1.0;
    let b1 = Array1::from_vec(vec![-threshold, threshold]);
    let sign = if stop_when_high { 1.0 } else { -1.0 };
    let w2 = Array2::from_shape_vec((1, 2), vec![sign, -sign]).expect("shape");
    NetworkParams {
        weights: vec![w1, w2],
        biases: vec![b1, Array1::zeros(1)],
        bn: vec![BatchNorm::identity(2)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use ndarray::array;

    fn random_batch(rows: usize, cols: usize, stream: Stream) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(r, c)| stream.normal(r * cols + c))
    }

    fn flatten(p: &NetworkParams) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &p.weights {
            out.extend(w.iter());
        }
        for b in &p.biases {
            out.extend(b.iter());
        }
        for s in &p.bn {
            out.extend(s.gamma.iter());
        }
        for s in &p.bn {
            out.extend(s.beta.iter());
        }
        out
    }

    fn grads_flat(g: &mut NetGrads) -> Vec<f64> {
        let mut out = Vec::new();
        for s in g.slices_mut() {
            out.extend_from_slice(s);
        }
        out
    }

    fn assign(p: &mut NetworkParams, flat: &[f64]) {
        let mut i = 0;
        for s in p.trainable_slices_mut() {
            s.copy_from_slice(&flat[i..i + s.len()]);
            i += s.len();
        }
        assert_eq!(i, flat.len());
    }

    #[test]
    fn param_count_matches_closed_formula() {
        let d = 7;
        let hidden = [d + 40, d + 40];
        let net = NetworkParams::init(d, &hidden, Stream::new(1)).unwrap();
        let q1 = hidden[0];
        let q2 = hidden[1];
        let expected = 1 + q1 + q2 + d * q1 + q1 * q2 + q2;
        assert_eq!(net.affine_param_count(), expected);
        assert_eq!(net.trainable_param_count(), expected + 2 * (q1 + q2));
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let net = NetworkParams::init(5, &[45, 45], Stream::new(9)).unwrap();
        let again = NetworkParams::init(5, &[45, 45], Stream::new(9)).unwrap();
        assert_eq!(net, again);
        let bound0 = (6.0 / (5 + 45) as f64).sqrt();
        assert!(net.weights[0].iter().all(|w| w.abs() < bound0));
        assert!(net.weights[0].iter().any(|w| w.abs() > 0.5 * bound0));
        let mean: f64 = net.weights[0].iter().sum::<f64>() / net.weights[0].len() as f64;
        assert!(mean.abs() < 0.1 * bound0);
        assert!(net.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn logistic_reference_value() {
        // A single-feature identity network: pre-sigmoid = x.
        let net = threshold_rule(1, 0, 0.0, true);
        let x = array![[3.0f64.ln()]];
        let p = net.forward_infer(x.view()).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-6, "psi(ln 3) = {}", p[0]);
    }

    #[test]
    fn logistic_saturation_stays_in_open_interval() {
        assert!(logistic(500.0) < 1.0);
        assert!(logistic(-500.0) > 0.0);
        assert_eq!(logistic(0.0), 0.5);
    }

    #[test]
    fn hard_decision_matches_half_probability() {
        let net = NetworkParams::init(3, &[8], Stream::new(3)).unwrap();
        let x = random_batch(64, 3, Stream::new(4));
        let probs = net.forward_infer(x.view()).unwrap();
        let hard = net.decide_hard(x.view()).unwrap();
        for i in 0..64 {
            assert_eq!(hard[i], probs[i] >= 0.5);
        }
    }

    #[test]
    fn inference_is_permutation_invariant() {
        let net = NetworkParams::init(4, &[10, 10], Stream::new(5)).unwrap();
        let x = random_batch(32, 4, Stream::new(6));
        let p = net.forward_infer(x.view()).unwrap();
        let mut rev = x.clone();
        for i in 0..32 {
            rev.row_mut(i).assign(&x.row(31 - i));
        }
        let q = net.forward_infer(rev.view()).unwrap();
        for i in 0..32 {
            assert_eq!(p[i], q[31 - i]);
        }
    }

    #[test]
    fn train_mode_is_pure_and_needs_two_rows() {
        let mut net = NetworkParams::init(2, &[6], Stream::new(7)).unwrap();
        let x = random_batch(16, 2, Stream::new(8));
        let before = net.clone();
        let (_, tape) = net.forward_train(x.view()).unwrap();
        assert_eq!(net, before, "forward_train must not mutate parameters");
        net.update_running_stats(&tape);
        assert_ne!(net, before);

        let one = random_batch(1, 2, Stream::new(8));
        assert!(matches!(before.forward_train(one.view()), Err(Error::BatchTooSmall)));
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(before.forward_train(empty.view()), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn non_finite_features_are_rejected_with_index() {
        let net = NetworkParams::init(3, &[4], Stream::new(2)).unwrap();
        let mut x = random_batch(4, 3, Stream::new(11));
        x[[2, 1]] = f64::NAN;
        match net.decide_hard(x.view()) {
            Err(Error::NonFiniteFeature { index, .. }) => assert_eq!(index, 2 * 3 + 1),
            other => panic!("expected NonFiniteFeature, got {other:?}"),
        }
    }

    #[test]
    fn running_stats_converge_to_fixed_batch_moments() {
        let mut net = NetworkParams::init(2, &[5], Stream::new(13)).unwrap();
        let x = random_batch(256, 2, Stream::new(14));
        let mut tape = None;
        for _ in 0..400 {
            let (_, t) = net.forward_train(x.view()).unwrap();
            net.update_running_stats(&t);
            tape = Some(t);
        }
        let t = tape.unwrap();
        for l in 0..1 {
            for j in 0..5 {
                assert!((net.bn[l].running_mean[j] - t.mu[l][j]).abs() < 1e-12);
                assert!((net.bn[l].running_var[j] - t.var[l][j]).abs() < 1e-12);
            }
        }
        // Once running stats equal batch stats, inference and training
        // forward passes agree.
        let (p_train, _) = net.forward_train(x.view()).unwrap();
        let p_infer = net.forward_infer(x.view()).unwrap();
        for i in 0..256 {
            assert!((p_train[i] - p_infer[i]).abs() < 1e-12);
        }
    }

    /// Central-difference check of the full backward pass, batch-statistic
    /// terms included.
    #[test]
    fn gradient_matches_finite_differences() {
        let d = 3;
        let net = NetworkParams::init(d, &[6, 5], Stream::new(21)).unwrap();
        let x = random_batch(24, d, Stream::new(22));
        let s = Stream::new(23);
        let stop: Vec<f64> = (0..24).map(|i| s.normal(i)).collect();
        let cont: Vec<f64> = (24..48).map(|i| s.normal(i)).collect();

        let (_, tape) = net.forward_train(x.view()).unwrap();
        let mut analytic = net.surrogate_gradient(tape, &stop, &cont).unwrap();
        let analytic = grads_flat(&mut analytic);

        let theta = flatten(&net);
        let h = 1e-6;
        let mut worst = 0.0f64;
        let scale = analytic.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        for i in 0..theta.len() {
            let mut plus = net.clone();
            let mut t = theta.clone();
            t[i] += h;
            assign(&mut plus, &t);
            let (p1, _) = plus.forward_train(x.view()).unwrap();
            let f1 = NetworkParams::surrogate_value(&p1, &stop, &cont);

            let mut minus = net.clone();
            t[i] -= 2.0 * h;
            assign(&mut minus, &t);
            let (p2, _) = minus.forward_train(x.view()).unwrap();
            let f2 = NetworkParams::surrogate_value(&p2, &stop, &cont);

            let fd = (f1 - f2) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-3 * scale).max(1e-12);
            worst = worst.max((analytic[i] - fd).abs() / denom);
        }
        assert!(worst < 1e-4, "max relative gradient error {worst}");
    }

    /// Duplicating every row must leave the gradient of the batch mean
    /// unchanged; this fails if the batch-variance terms are dropped.
    #[test]
    fn gradient_invariant_under_row_duplication() {
        let d = 2;
        let net = NetworkParams::init(d, &[5], Stream::new(31)).unwrap();
        let base = random_batch(8, d, Stream::new(32));
        let s = Stream::new(33);
        let stop: Vec<f64> = (0..8).map(|i| s.normal(i)).collect();
        let cont: Vec<f64> = (8..16).map(|i| s.normal(i)).collect();

        let mut big = Array2::zeros((32, d));
        let mut stop4 = Vec::new();
        let mut cont4 = Vec::new();
        for rep in 0..4 {
            for i in 0..8 {
                big.row_mut(rep * 8 + i).assign(&base.row(i));
            }
            stop4.extend_from_slice(&stop);
            cont4.extend_from_slice(&cont);
        }

        let (_, t1) = net.forward_train(base.view()).unwrap();
        let mut g1 = net.surrogate_gradient(t1, &stop, &cont).unwrap();
        let (_, t4) = net.forward_train(big.view()).unwrap();
        let mut g4 = net.surrogate_gradient(t4, &stop4, &cont4).unwrap();
        let (f1, f4) = (grads_flat(&mut g1), grads_flat(&mut g4));
        for i in 0..f1.len() {
            assert!((f1[i] - f4[i]).abs() < 1e-10, "component {i}: {} vs {}", f1[i], f4[i]);
        }
    }

    #[test]
    fn threshold_rule_is_inclusive_at_boundary() {
        let net = threshold_rule(3, 1, 95.0, true);
        let x = array![[0.0, 95.0, 0.0], [0.0, 94.9999, 0.0], [0.0, 96.0, 0.0]];
        let d = net.decide_hard(x.view()).unwrap();
        assert_eq!(d, vec![true, false, true]);
        let low = threshold_rule(3, 1, 95.0, false);
        let d = low.decide_hard(x.view()).unwrap();
        assert_eq!(d, vec![true, true, false]);
    }

    #[test]
    fn constant_rule_ignores_features() {
        let stopper = constant_rule(4, true);
        let x = random_batch(10, 4, Stream::new(41));
        assert!(stopper.decide_hard(x.view()).unwrap().iter().all(|&b| b));
        let goer = constant_rule(4, false);
        assert!(goer.decide_hard(x.view()).unwrap().iter().all(|&b| !b));
    }
}
