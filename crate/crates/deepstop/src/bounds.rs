//! Lower and upper bounds on the stopping value, with confidence intervals.
//!
//! The lower bound is the realized value of the trained policy on fresh
//! paths. The upper bound is dual: along each fresh path a martingale is
//! built from the policy's decisions and estimated continuation values, and
//! the path contributes `max_n (g_n - M_n)`. Using the same continuation
//! estimate in the two increments where it appears makes its noise
//! telescope instead of accumulate, and an unbiased continuation estimate
//! keeps the expectation of the maximum above the true value, so the upper
//! bound stays valid at any inner sample size.
//!
//! Everything here works in the internal maximize orientation; the report
//! assembly at the end swaps the roles of the two bounds for minimizing
//! problems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::Policy;
use crate::process::{Direction, ProblemSpec};
use crate::rng::Stream;
use crate::stats::{two_sided_z, RunningMoments};
use crate::{Error, Result};

const TAG_OUTER: u64 = 1;
const TAG_INNER: u64 = 2;

/// Cap on the number of state cells simulated per lower-bound slice, to
/// keep memory flat while estimating over millions of paths.
const SLICE_CELLS: usize = 2_000_000;

/// Monte Carlo sizes and the confidence level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    /// Fresh paths for the policy-value estimate.
    pub k_lower: usize,
    /// Fresh paths for the dual estimate.
    pub k_upper: usize,
    /// Continuation branches per (path, step) inside the dual.
    pub inner: usize,
    /// Two-sided confidence level: the interval misses with probability at
    /// most `alpha` asymptotically.
    pub alpha: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig { k_lower: 1_000_000, k_upper: 512, inner: 2048, alpha: 0.05 }
    }
}

impl BoundsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_lower < 2 || self.k_upper < 2 {
            return Err(Error::InvalidConfig("bound estimates need at least 2 paths".into()));
        }
        if self.inner == 0 {
            return Err(Error::InvalidConfig("dual needs at least one continuation branch".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Sample mean, sample standard deviation, and size of one bound estimate,
/// in the internal maximize orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundEstimate {
    pub value: f64,
    pub sigma: f64,
    pub count: usize,
}

fn check_policy(spec: &ProblemSpec, policy: &Policy) -> Result<()> {
    if policy.n_steps != spec.n_steps() || policy.feature_dim != spec.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "policy shape ({} steps, {} features) does not match problem ({}, {})",
            policy.n_steps,
            policy.feature_dim,
            spec.n_steps(),
            spec.feature_dim()
        )));
    }
    if policy.direction != spec.direction() {
        return Err(Error::InvalidSpec("policy and problem disagree on direction".into()));
    }
    Ok(())
}

/// Realized signed value of the policy over `count` fresh paths, simulated
/// in memory-bounded slices. Slice boundaries cannot affect the result
/// because every path's randomness is indexed by its global path number.
pub fn estimate_lower(
    spec: &ProblemSpec,
    policy: &Policy,
    count: usize,
    stream: Stream,
) -> Result<BoundEstimate> {
    check_policy(spec, policy)?;
    if count < 2 {
        return Err(Error::InvalidConfig("lower bound needs at least 2 paths".into()));
    }
    let cells = (spec.n_steps() + 1) * spec.feature_dim();
    let slice = (SLICE_CELLS / cells.max(1)).max(64).min(count);
    let sign = spec.direction().sign();

    let n_slices = count.div_ceil(slice);
    let partials: Vec<Result<RunningMoments>> = (0..n_slices)
        .into_par_iter()
        .map(|i| {
            let first = i * slice;
            let take = slice.min(count - first);
            let batch = spec.simulate_path_slice(take, first, stream)?;
            let stops = policy.stop_indices(&batch)?;
            let mut acc = RunningMoments::new();
            for (k, &n) in stops.iter().enumerate() {
                acc.push(sign * batch.reward_of(k, n));
            }
            Ok(acc)
        })
        .collect();

    let mut acc = RunningMoments::new();
    for part in partials {
        acc.merge(&part?);
    }
    Ok(BoundEstimate { value: acc.mean(), sigma: acc.sample_std(), count })
}

/// Dual value of one path: `max_n (g_n - M_n)` where the martingale
/// increment at step n is `f_n g_n + (1 - f_n) C_n - C_{n-1}`.
///
/// `rewards` holds the signed `g_0..=g_N`; `interior_stop[n-1]` is the hard
/// decision at step n for `1 <= n <= N-1` (the horizon always stops);
/// `continuations[n]` is the signed continuation estimate `C_n` for
/// `0 <= n <= N-1`. The same `C_n` enters the increments at `n` and `n+1`.
pub fn path_upper_value(rewards: &[f64], interior_stop: &[bool], continuations: &[f64]) -> f64 {
    let n_steps = rewards.len() - 1;
    debug_assert_eq!(interior_stop.len(), n_steps.saturating_sub(1));
    debug_assert_eq!(continuations.len(), n_steps);
    let mut martingale = 0.0;
    let mut best = rewards[0];
    for n in 1..=n_steps {
        let stop_here = n == n_steps || interior_stop[n - 1];
        let settled = if stop_here { rewards[n] } else { continuations[n] };
        martingale += settled - continuations[n - 1];
        best = best.max(rewards[n] - martingale);
    }
    best
}

/// Dual upper bound over `count` fresh paths with `inner` continuation
/// branches per (path, step).
pub fn estimate_upper(
    spec: &ProblemSpec,
    policy: &Policy,
    count: usize,
    inner: usize,
    stream: Stream,
) -> Result<BoundEstimate> {
    check_policy(spec, policy)?;
    if count < 2 {
        return Err(Error::InvalidConfig("upper bound needs at least 2 paths".into()));
    }
    if inner == 0 {
        return Err(Error::InvalidConfig("dual needs at least one continuation branch".into()));
    }
    let n_steps = spec.n_steps();
    let sign = spec.direction().sign();
    let outer = spec.simulate_paths(count, stream.derive(TAG_OUTER))?;

    // Hard decisions at the interior steps, evaluated batched up front.
    let mut interior = vec![Vec::new(); n_steps.saturating_sub(1)];
    for n in 1..n_steps {
        interior[n - 1] = policy.decisions_at(&outer, n)?;
    }

    let inner_root = stream.derive(TAG_INNER);
    let values: Vec<Result<f64>> = (0..count)
        .into_par_iter()
        .map(|k| {
            let path_stream = inner_root.derive(k as u64);
            let rewards: Vec<f64> = (0..=n_steps).map(|n| sign * outer.reward_of(k, n)).collect();
            let mut continuations = Vec::with_capacity(n_steps);
            for n in 0..n_steps {
                let origin = outer.origin(k, n);
                let branches =
                    spec.simulate_continuations(&origin, inner, path_stream.derive(n as u64))?;
                continuations.push(policy.mean_signed_reward_from(&branches, n + 1)?);
            }
            let stops: Vec<bool> = interior.iter().map(|d| d[k]).collect();
            Ok(path_upper_value(&rewards, &stops, &continuations))
        })
        .collect();

    let mut acc = RunningMoments::new();
    for v in values {
        acc.push(v?);
    }
    Ok(BoundEstimate { value: acc.mean(), sigma: acc.sample_std(), count })
}

/// Two-sided interval around the internal-orientation bounds:
/// `[L - z s_L / sqrt(K_L), U + z s_U / sqrt(K_U)]`.
pub fn confidence_interval(
    lower: &BoundEstimate,
    upper: &BoundEstimate,
    alpha: f64,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig("alpha must lie in (0, 1)".into()));
    }
    let z = two_sided_z(alpha);
    let lo = lower.value - z * lower.sigma / (lower.count as f64).sqrt();
    let hi = upper.value + z * upper.sigma / (upper.count as f64).sqrt();
    Ok((lo, hi))
}

/// Wall-clock seconds attributed to each phase of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub train: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Final bound report in the problem's native orientation.
///
/// For maximizing problems `l_hat` is the policy value and `u_hat` the
/// dual. For minimizing problems the roles swap: the native lower bound is
/// the negated dual (with its sigma and path count), the native upper bound
/// the negated policy value, and the timing columns follow the bounds they
/// describe. `k_l`/`sigma_l` always describe whatever estimate produced
/// `l_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub problem_id: String,
    pub param_1: f64,
    pub l_hat: f64,
    pub sigma_l: f64,
    pub k_l: usize,
    pub t_l: f64,
    pub u_hat: f64,
    pub sigma_u: f64,
    pub k_u: usize,
    pub j: usize,
    pub t_u: f64,
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    /// Family-specific comparison value: exact solve for trees, the
    /// non-callable note value, or a closed form where one exists.
    pub reference: Option<f64>,
}

/// Folds the two internal-orientation estimates into a native-orientation
/// report. Training time is always charged to the native lower-bound column,
/// whichever internal estimate that bound came from.
#[allow(clippy::too_many_arguments)]
pub fn assemble_report(
    problem_id: impl Into<String>,
    param_1: f64,
    direction: Direction,
    lower: &BoundEstimate,
    upper: &BoundEstimate,
    inner: usize,
    alpha: f64,
    timings: Timings,
    reference: Option<f64>,
) -> Result<BoundReport> {
    let (ci_lo, ci_hi) = confidence_interval(lower, upper, alpha)?;
    let report = match direction {
        Direction::Maximize => BoundReport {
            problem_id: problem_id.into(),
            param_1,
            l_hat: lower.value,
            sigma_l: lower.sigma,
            k_l: lower.count,
            t_l: timings.train + timings.lower,
            u_hat: upper.value,
            sigma_u: upper.sigma,
            k_u: upper.count,
            j: inner,
            t_u: timings.upper,
            point_estimate: 0.5 * (lower.value + upper.value),
            ci_low: ci_lo,
            ci_high: ci_hi,
            alpha,
            reference,
        },
        Direction::Minimize => BoundReport {
            problem_id: problem_id.into(),
            param_1,
            l_hat: -upper.value,
            sigma_l: upper.sigma,
            k_l: upper.count,
            t_l: timings.train + timings.upper,
            u_hat: -lower.value,
            sigma_u: lower.sigma,
            k_u: lower.count,
            j: inner,
            t_u: timings.lower,
            point_estimate: -0.5 * (lower.value + upper.value),
            ci_low: -ci_hi,
            ci_high: -ci_lo,
            alpha,
            reference,
        },
    };
    Ok(report)
}
