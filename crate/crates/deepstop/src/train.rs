//! Backward-induction training of stopping policies.
//!
//! Decision rules are trained one time index at a time, from the last
//! interior date down to the first. While rule `n` is being trained, the
//! already-trained rules at `n+1..N` supply the reward of not stopping, so
//! each gradient step maximizes
//!
//! ```text
//! mean_k [ g(n, x_k) F(x_k) + g(tau_k, x_tau_k) (1 - F(x_k)) ]
//! ```
//!
//! over the batch, where `tau_k` is the first later index at which the
//! trained rules stop path k. Stochastic ascent uses Adam with a staged
//! learning-rate decay. Fresh paths are drawn for every step unless path
//! reuse is requested, in which case one shared batch is sampled up front.

use crate::net::{NetGrads, NetworkParams};
use crate::policy::{Policy, StartRule};
use crate::process::{PathBatch, ProblemSpec};
use crate::rng::{mix, Stream};
use crate::{Error, Result};

const TAG_INIT: u64 = 1;
const TAG_SIM: u64 = 2;
const TAG_POOL: u64 = 3;
const TAG_START: u64 = 4;

/// Hyperparameters for policy training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps_per_net: usize,
    /// Hidden-layer widths; empty means two layers of `raw_dim + 40`.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
    /// Fractions of the step budget at which the learning rate is cut.
    pub decay_points: (f64, f64),
    pub decay_factor: f64,
    /// Simulation budget for deciding the time-zero rule at a
    /// deterministic start.
    pub start_value_paths: usize,
    /// Train every rule on one shared batch instead of resampling.
    pub reuse_paths: bool,
    /// Emit a progress record every this many steps (0 = silent).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            steps_per_net: 200,
            hidden: Vec::new(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
            decay_points: (0.6, 0.85),
            decay_factor: 0.1,
            start_value_paths: 1 << 17,
            reuse_paths: false,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be at least 2".into()));
        }
        if self.steps_per_net == 0 {
            return Err(Error::InvalidConfig("need at least one training step".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon_hat > 0.0) {
            return Err(Error::InvalidConfig("adam epsilon must be positive".into()));
        }
        let (a, b) = self.decay_points;
        if !(0.0 < a && a <= b && b <= 1.0) {
            return Err(Error::InvalidConfig("decay points must satisfy 0 < p1 <= p2 <= 1".into()));
        }
        if !(0.0 < self.decay_factor && self.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig("decay factor must lie in (0, 1]".into()));
        }
        if self.start_value_paths < 2 {
            return Err(Error::InvalidConfig("start value estimate needs at least 2 paths".into()));
        }
        Ok(())
    }

    pub fn resolved_hidden(&self, spec: &ProblemSpec) -> Vec<usize> {
        if self.hidden.is_empty() {
            vec![spec.raw_dim() + 40; 2]
        } else {
            self.hidden.clone()
        }
    }

    /// Stable fingerprint of the hyperparameters, mixed into the policy so
    /// reports can be traced back to their configuration.
    pub fn digest(&self) -> u64 {
        let mut h = 0u64;
        let mut fold = |v: u64| h = mix(h ^ v);
        fold(self.batch_size as u64);
        fold(self.steps_per_net as u64);
        for &q in &self.hidden {
            fold(q as u64);
        }
        fold(self.learning_rate.to_bits());
        fold(self.beta1.to_bits());
        fold(self.beta2.to_bits());
        fold(self.epsilon_hat.to_bits());
        fold(self.decay_points.0.to_bits());
        fold(self.decay_points.1.to_bits());
        fold(self.decay_factor.to_bits());
        fold(self.start_value_paths as u64);
        fold(self.reuse_paths as u64);
        h
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        let frac = step as f64 / total as f64;
        let mut lr = self.learning_rate;
        if frac >= self.decay_points.0 {
            lr *= self.decay_factor;
        }
        if frac >= self.decay_points.1 {
            lr *= self.decay_factor;
        }
        lr
    }
}

/// Adam first/second moment accumulators for one network.
pub struct AdamState {
    m: NetGrads,
    v: NetGrads,
    t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        AdamState { m: NetGrads::zeros_like(params), v: NetGrads::zeros_like(params), t: 0 }
    }

    /// One ascent step: `theta += lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn ascend(
        &mut self,
        params: &mut NetworkParams,
        mut grads: NetGrads,
        lr: f64,
        cfg: &TrainConfig,
    ) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let AdamState { m, v, .. } = self;
        let ps = params.trainable_slices_mut();
        let gs = grads.slices_mut();
        let ms = m.slices_mut();
        let vs = v.slices_mut();
        for (((p, g), mt), vt) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * g[i];
                vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = mt[i] / bc1;
                let v_hat = vt[i] / bc2;
                p[i] += lr * m_hat / (v_hat.sqrt() + cfg.epsilon_hat);
            }
        }
    }
}

/// Summary of one time index's training run.
#[derive(Clone, Copy, Debug)]
pub struct TrainStats {
    pub time_index: usize,
    pub steps: usize,
    pub final_surrogate: f64,
}

/// Signed rewards for stopping at `n` and for continuing under the rules
/// already in `policy`.
fn rewards_for_index(
    spec: &ProblemSpec,
    policy: &Policy,
    batch: &PathBatch,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sign = spec.direction().sign();
    let k = batch.n_paths();
    let stop: Vec<f64> = (0..k).map(|i| sign * batch.reward_of(i, n)).collect();
    let later = policy.stop_indices_from(batch, n + 1)?;
    let cont: Vec<f64> =
        later.iter().enumerate().map(|(i, &m)| sign * batch.reward_of(i, m)).collect();
    Ok((stop, cont))
}

/// Trains the decision rule at time index `n`, writing it into `policy`.
/// The rules at later indices must already be present.
pub fn train_time_index(
    spec: &ProblemSpec,
    policy: &mut Policy,
    n: usize,
    cfg: &TrainConfig,
    stream: Stream,
) -> Result<TrainStats> {
    train_index_inner(spec, policy, n, cfg, stream, None)
}

fn train_index_inner(
    spec: &ProblemSpec,
    policy: &mut Policy,
    n: usize,
    cfg: &TrainConfig,
    stream: Stream,
    pool: Option<&PathBatch>,
) -> Result<TrainStats> {
    cfg.validate()?;
    if n >= spec.n_steps() {
        return Err(Error::InvalidSpec(format!(
            "cannot train a rule at step {n}: the horizon {} always stops",
            spec.n_steps()
        )));
    }
    let hidden = cfg.resolved_hidden(spec);
    let mut net =
        NetworkParams::init(spec.feature_dim(), &hidden, stream.derive(TAG_INIT).derive(n as u64))?;
    let mut adam = AdamState::new(&net);
    let total = cfg.steps_per_net;

    // With a shared pool the continuation targets are fixed for the whole
    // run of this index; compute them once.
    let pooled = match pool {
        Some(batch) => Some(rewards_for_index(spec, policy, batch, n)?),
        None => None,
    };

    let mut last = f64::NAN;
    for t in 0..total {
        let lr = cfg.lr_at(t, total);
        last = match (pool, &pooled) {
            (Some(batch), Some((stop, cont))) => {
                ascend_once(&mut net, &mut adam, batch, n, stop, cont, lr, cfg, t)?
            }
            _ => {
                let fresh = spec.simulate_paths(
                    cfg.batch_size,
                    stream.derive(TAG_SIM).derive(n as u64).derive(t as u64),
                )?;
                let (stop, cont) = rewards_for_index(spec, policy, &fresh, n)?;
                ascend_once(&mut net, &mut adam, &fresh, n, &stop, &cont, lr, cfg, t)?
            }
        };
        if cfg.log_every > 0 && (t % cfg.log_every == 0 || t + 1 == total) {
            log::info!(
                target: "deepstop::train",
                "{{\"time_index\":{n},\"step\":{t},\"surrogate\":{last:.6}}}"
            );
        }
    }

    policy.nets[n] = Some(net);
    Ok(TrainStats { time_index: n, steps: total, final_surrogate: last })
}

/// One forward/backward/update cycle; returns the batch surrogate value.
#[allow(clippy::too_many_arguments)]
fn ascend_once(
    net: &mut NetworkParams,
    adam: &mut AdamState,
    batch: &PathBatch,
    n: usize,
    stop: &[f64],
    cont: &[f64],
    lr: f64,
    cfg: &TrainConfig,
    t: usize,
) -> Result<f64> {
    let (probs, tape) = net.forward_train(batch.features_at(n))?;
    let value = NetworkParams::surrogate_value(&probs, stop, cont);
    if !value.is_finite() {
        return Err(Error::NonFiniteTraining {
            what: "surrogate value".into(),
            time_index: n,
            step: t,
        });
    }
    net.update_running_stats(&tape);
    let grads = net.surrogate_gradient(tape, stop, cont)?;
    if !grads.is_finite() {
        return Err(Error::NonFiniteTraining { what: "gradient".into(), time_index: n, step: t });
    }
    adam.ascend(net, grads, lr, cfg);
    Ok(value)
}

/// Estimates the value of never stopping before step 1, under the trained
/// later rules, by averaging over fresh paths in memory-bounded slices.
fn start_continuation_value(
    spec: &ProblemSpec,
    policy: &Policy,
    total_paths: usize,
    stream: Stream,
) -> Result<f64> {
    const SLICE: usize = 1 << 16;
    let mut done = 0usize;
    let mut sum = 0.0;
    while done < total_paths {
        let take = SLICE.min(total_paths - done);
        let batch = spec.simulate_path_slice(take, done, stream)?;
        let mean = policy.mean_signed_reward_from(&batch, 1)?;
        sum += mean * take as f64;
        done += take;
    }
    Ok(sum / total_paths as f64)
}

/// Trains a full policy by backward induction and resolves the time-zero
/// rule. The stream fully determines the result: same spec, config, and
/// stream give a bit-identical policy.
pub fn train_policy(spec: &ProblemSpec, cfg: &TrainConfig, stream: Stream) -> Result<Policy> {
    cfg.validate()?;
    let n_steps = spec.n_steps();
    let mut policy = Policy::empty(n_steps, spec.feature_dim(), spec.direction());
    policy.config_digest = cfg.digest();
    if n_steps == 0 {
        policy.start_rule = Some(StartRule::Stop);
        return Ok(policy);
    }

    let pool = if cfg.reuse_paths {
        Some(spec.simulate_paths(cfg.batch_size, stream.derive(TAG_POOL))?)
    } else {
        None
    };

    let random_start = spec.deterministic_start().is_none();
    let first_trained = if random_start { 0 } else { 1 };
    for n in (first_trained..n_steps).rev() {
        train_index_inner(spec, &mut policy, n, cfg, stream, pool.as_ref())?;
    }

    if random_start {
        return Ok(policy);
    }
    policy.start_rule = Some(resolve_start_rule(spec, &policy, cfg, stream)?);
    Ok(policy)
}

/// Stop at a deterministic start iff the immediate reward is at least the
/// estimated value of continuing. Contracts that forbid exercising at time
/// zero always continue.
fn resolve_start_rule(
    spec: &ProblemSpec,
    policy: &Policy,
    cfg: &TrainConfig,
    stream: Stream,
) -> Result<StartRule> {
    if !spec.allow_stop_at_zero() {
        return Ok(StartRule::Continue);
    }
    let x0 = spec
        .deterministic_start()
        .ok_or_else(|| Error::InvalidSpec("start rule needs a deterministic start".into()))?;
    let g0 = spec.direction().sign() * spec.reward(0, &x0)?;
    let c0 =
        start_continuation_value(spec, policy, cfg.start_value_paths, stream.derive(TAG_START))?;
    Ok(if g0 >= c0 { StartRule::Stop } else { StartRule::Continue })
}
