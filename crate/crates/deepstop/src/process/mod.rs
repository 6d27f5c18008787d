//! Problem families, path simulation, and reward evaluation.
//!
//! A [`ProblemSpec`] bundles the Markovian state dynamics of one stopping
//! problem with its reward function on the decision grid 0..=N. Simulation
//! output is a [`PathBatch`]: per-path feature vectors and rewards for every
//! decision step, plus whatever extra per-path data the family needs to
//! branch continuations off an intermediate state (innovations for fractional
//! Brownian motion, node ids for scenario trees).

pub mod black_scholes;
pub mod fbm;
pub mod mbrc;
pub mod tree;

pub use black_scholes::MaxCallSpec;
pub use fbm::FbmSpec;
pub use mbrc::MbrcSpec;
pub use tree::{DpSolution, OracleTree};

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::rng::Stream;
use crate::{Error, Result};

/// Whether the decision maker maximizes or minimizes the expected reward.
/// Training and bound estimation always maximize internally; minimizing
/// problems are handled by negating rewards on the way in and swapping the
/// bound roles on the way out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

/// Simulated paths over decision steps `start_step..=n_steps`.
///
/// `states[k][s][q]` is feature q of path k at absolute step `start_step + s`;
/// `rewards[k][s]` is the native-direction reward of stopping there.
#[derive(Clone, Debug)]
pub struct PathBatch {
    pub start_step: usize,
    pub n_steps: usize,
    pub states: Array3<f64>,
    pub rewards: Array2<f64>,
    /// Per-path standard-normal innovations, stored by families whose
    /// continuation law needs them (fractional Brownian motion).
    pub innovations: Option<Array2<f64>>,
    /// Per-(path, step) node ids for scenario trees.
    pub nodes: Option<Array2<u32>>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn stored_steps(&self) -> usize {
        self.states.shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.states.shape()[2]
    }

    #[inline]
    fn local(&self, abs_step: usize) -> usize {
        debug_assert!(
            abs_step >= self.start_step && abs_step <= self.n_steps,
            "step {abs_step} outside stored range {}..={}",
            self.start_step,
            self.n_steps
        );
        abs_step - self.start_step
    }

    /// Feature matrix `[n_paths, feature_dim]` at an absolute decision step.
    pub fn features_at(&self, abs_step: usize) -> ArrayView2<'_, f64> {
        self.states.index_axis(Axis(1), self.local(abs_step))
    }

    pub fn rewards_at(&self, abs_step: usize) -> ArrayView1<'_, f64> {
        self.rewards.index_axis(Axis(1), self.local(abs_step))
    }

    pub fn features_of(&self, path: usize, abs_step: usize) -> ArrayView1<'_, f64> {
        let s = self.local(abs_step);
        self.states.slice(ndarray::s![path, s, ..])
    }

    pub fn reward_of(&self, path: usize, abs_step: usize) -> f64 {
        self.rewards[[path, self.local(abs_step)]]
    }

    /// Everything a family needs to branch continuations off path `k` at
    /// absolute step `n`.
    pub fn origin(&self, path: usize, abs_step: usize) -> PathOrigin<'_> {
        PathOrigin {
            step: abs_step,
            features: self.features_of(path, abs_step),
            innovations: self.innovations.as_ref().map(|v| v.row(path)),
            node: self.nodes.as_ref().map(|n| n[[path, self.local(abs_step)]]),
        }
    }

    /// Columnar debug dump: `path,step,feature,value`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path,step,feature,value")?;
        for k in 0..self.n_paths() {
            for s in 0..self.stored_steps() {
                for q in 0..self.feature_dim() {
                    writeln!(w, "{},{},{},{}", k, self.start_step + s, q, self.states[[k, s, q]])?;
                }
            }
        }
        Ok(())
    }
}

/// A point on a simulated path from which continuations can be branched.
#[derive(Clone, Debug)]
pub struct PathOrigin<'a> {
    pub step: usize,
    pub features: ArrayView1<'a, f64>,
    pub innovations: Option<ArrayView1<'a, f64>>,
    pub node: Option<u32>,
}

#[derive(Clone, Debug)]
pub enum Dynamics {
    MaxCall(MaxCallSpec),
    Mbrc(MbrcSpec),
    Fbm(FbmSpec),
    Tree(OracleTree),
}

/// One fully specified stopping problem.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: String,
    pub dynamics: Dynamics,
}

impl ProblemSpec {
    pub fn new(name: impl Into<String>, dynamics: Dynamics) -> Self {
        ProblemSpec { name: name.into(), dynamics }
    }

    /// Number of decision steps after time 0.
    pub fn n_steps(&self) -> usize {
        match &self.dynamics {
            Dynamics::MaxCall(s) => s.n_steps,
            Dynamics::Mbrc(s) => s.n_periods,
            Dynamics::Fbm(s) => s.n_steps,
            Dynamics::Tree(t) => t.n_steps,
        }
    }

    /// Width of the feature vectors fed to the decision networks.
    pub fn feature_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::MaxCall(s) => s.d + 1,
            Dynamics::Mbrc(s) => s.d + 1,
            Dynamics::Fbm(s) => s.n_steps,
            Dynamics::Tree(t) => t.feature_dim_raw + 1,
        }
    }

    /// Dimension of the driving state, used for default network widths.
    pub fn raw_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::MaxCall(s) => s.d,
            Dynamics::Mbrc(s) => s.d,
            Dynamics::Fbm(s) => s.n_steps,
            Dynamics::Tree(t) => t.feature_dim_raw,
        }
    }

    pub fn direction(&self) -> Direction {
        match &self.dynamics {
            Dynamics::Mbrc(_) => Direction::Minimize,
            _ => Direction::Maximize,
        }
    }

    /// False when the contract forbids exercising at time 0 (the callable
    /// note cannot be redeemed before the first coupon date).
    pub fn allow_stop_at_zero(&self) -> bool {
        !matches!(self.dynamics, Dynamics::Mbrc(_))
    }

    /// Feature vector at step 0 when the start is deterministic.
    pub fn deterministic_start(&self) -> Option<Vec<f64>> {
        match &self.dynamics {
            Dynamics::MaxCall(s) => Some(s.start_features()),
            Dynamics::Mbrc(s) => Some(s.start_features()),
            Dynamics::Fbm(s) => Some(vec![0.0; s.n_steps]),
            Dynamics::Tree(t) => t.start_features(),
        }
    }

    /// Native-direction reward of stopping at step `n` in state `features`.
    pub fn reward(&self, n: usize, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "reward expects {} features, got {}",
                self.feature_dim(),
                features.len()
            )));
        }
        if n > self.n_steps() {
            return Err(Error::InvalidSpec(format!(
                "reward step {n} beyond horizon {}",
                self.n_steps()
            )));
        }
        Ok(match &self.dynamics {
            Dynamics::MaxCall(s) => s.reward(n, features),
            Dynamics::Mbrc(s) => s.reward(n, features),
            Dynamics::Fbm(_) => features[0],
            Dynamics::Tree(_) => *features.last().expect("tree features are never empty"),
        })
    }

    /// Simulates `count` fresh paths from time 0.
    pub fn simulate_paths(&self, count: usize, stream: Stream) -> Result<PathBatch> {
        self.simulate_path_slice(count, 0, stream)
    }

    /// Simulates paths with global indices `first..first + count`. Slicing a
    /// batch into chunks this way is bit-identical to one big batch, which is
    /// what makes worker partitioning irrelevant to the output.
    pub fn simulate_path_slice(
        &self,
        count: usize,
        first: usize,
        stream: Stream,
    ) -> Result<PathBatch> {
        if count == 0 {
            return Err(Error::EmptyBatch("path count must be positive".into()));
        }
        match &self.dynamics {
            Dynamics::MaxCall(s) => s.simulate(count, first, stream),
            Dynamics::Mbrc(s) => s.simulate(count, first, stream),
            Dynamics::Fbm(s) => s.simulate(count, first, stream),
            Dynamics::Tree(t) => t.simulate(count, first, stream),
        }
    }

    /// Branches `count` continuations off `origin`, covering decision steps
    /// `origin.step + 1 ..= N`. At `origin.step == N` the batch is empty.
    pub fn simulate_continuations(
        &self,
        origin: &PathOrigin<'_>,
        count: usize,
        stream: Stream,
    ) -> Result<PathBatch> {
        if count == 0 {
            return Err(Error::EmptyBatch("continuation count must be positive".into()));
        }
        if origin.step > self.n_steps() {
            return Err(Error::InvalidSpec(format!(
                "continuation origin step {} beyond horizon {}",
                origin.step,
                self.n_steps()
            )));
        }
        if origin.features.len() != self.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "origin has {} features, spec needs {}",
                origin.features.len(),
                self.feature_dim()
            )));
        }
        match &self.dynamics {
            Dynamics::MaxCall(s) => s.continuations(origin, count, stream),
            Dynamics::Mbrc(s) => s.continuations(origin, count, stream),
            Dynamics::Fbm(s) => s.continuations(origin, count, stream),
            Dynamics::Tree(t) => t.continuations(origin, count, stream),
        }
    }
}

/// Allocates the standard batch layout for a family simulator.
pub(crate) fn empty_batch(
    count: usize,
    start_step: usize,
    n_steps: usize,
    feature_dim: usize,
) -> PathBatch {
    let stored = n_steps + 1 - start_step;
    PathBatch {
        start_step,
        n_steps,
        states: Array3::zeros((count, stored, feature_dim)),
        rewards: Array2::zeros((count, stored)),
        innovations: None,
        nodes: None,
    }
}
