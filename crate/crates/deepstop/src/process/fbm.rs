//! Optimal stopping of fractional Brownian motion.
//!
//! W^H is sampled exactly on the grid t_i = i T / N by a Cholesky factor B of
//! the covariance matrix: W = B v for standard normal innovations v. The state
//! fed to the networks at step n is the reversed history
//! (W_{t_n}, ..., W_{t_1}, 0, ..., 0) padded to length N, and the reward of
//! stopping at n is W_{t_n} itself.
//!
//! Continuations off step n keep the first n innovations of the parent path
//! and draw the remaining N - n fresh, so the continuation law is exactly the
//! conditional law given the observed history. Innovations are therefore
//! stored alongside every full path batch.

use ndarray::Array2;

use super::{empty_batch, PathBatch, PathOrigin};
use crate::linalg::cholesky_factor;
use crate::rng::Stream;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct FbmSpec {
    pub hurst: f64,
    pub n_steps: usize,
    pub horizon: f64,
    chol: Array2<f64>,
}

impl FbmSpec {
    pub fn new(hurst: f64, n_steps: usize, horizon: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst <= 1.0) {
            return Err(Error::InvalidSpec(format!("Hurst parameter {hurst} outside (0, 1]")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidSpec("need at least one decision step".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidSpec("horizon must be positive".into()));
        }
        let n = n_steps;
        let t = |i: usize| (i + 1) as f64 * horizon / n as f64;
        let two_h = 2.0 * hurst;
        let mut cov = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let (ti, tj) = (t(i), t(j));
                cov[[i, j]] = 0.5 * (ti.powf(two_h) + tj.powf(two_h) - (ti - tj).abs().powf(two_h));
            }
        }
        // At H = 1 the covariance is the rank-one matrix t t^T; the factor
        // routine's jitter retry handles the degeneracy.
        let chol = cholesky_factor(&cov)?;
        Ok(FbmSpec { hurst, n_steps, horizon, chol })
    }

    /// Covariance of (W_{t_1}, ..., W_{t_N}), reconstructed from the factor.
    pub fn covariance(&self) -> Array2<f64> {
        self.chol.dot(&self.chol.t())
    }

    pub(crate) fn simulate(&self, count: usize, first: usize, stream: Stream) -> Result<PathBatch> {
        let n = self.n_steps;
        let mut batch = empty_batch(count, 0, n, n);
        let mut innovations = Array2::zeros((count, n));
        let mut v = vec![0.0; n];
        for k in 0..count {
            let s = stream.derive((first + k) as u64);
            s.fill_normal(0, &mut v);
            for (i, &vi) in v.iter().enumerate() {
                innovations[[k, i]] = vi;
            }
            // w_l = sum_{i <= l} B[l, i] v_i, written into the reversed state.
            for l in 1..=n {
                let mut w = 0.0;
                for i in 0..l {
                    w += self.chol[[l - 1, i]] * v[i];
                }
                for step in l..=n {
                    batch.states[[k, step, step - l]] = w;
                }
                batch.rewards[[k, l]] = w;
            }
        }
        batch.innovations = Some(innovations);
        Ok(batch)
    }

    pub(crate) fn continuations(
        &self,
        origin: &PathOrigin<'_>,
        count: usize,
        stream: Stream,
    ) -> Result<PathBatch> {
        let n0 = origin.step;
        let n = self.n_steps;
        let mut batch = empty_batch(count, n0 + 1, n, n);
        if n0 == n {
            return Ok(batch);
        }
        let parent = origin.innovations.as_ref().ok_or_else(|| {
            Error::InvalidSpec(
                "fractional Brownian continuations need the parent innovations".into(),
            )
        })?;
        if parent.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parent innovations, got {}",
                n,
                parent.len()
            )));
        }
        // Contribution of the observed innovations to each future increment.
        let mut base = vec![0.0; n - n0];
        for l in (n0 + 1)..=n {
            let mut s = 0.0;
            for i in 0..n0 {
                s += self.chol[[l - 1, i]] * parent[i];
            }
            base[l - n0 - 1] = s;
        }
        let history = origin.features;
        let mut fresh = vec![0.0; n - n0];
        for j in 0..count {
            let s = stream.derive(j as u64);
            s.fill_normal(0, &mut fresh);
            for m in (n0 + 1)..=n {
                let local = m - n0 - 1;
                let mut w = base[m - n0 - 1];
                for i in n0..m {
                    w += self.chol[[m - 1, i]] * fresh[i - n0];
                }
                // State at m: fresh values down to the origin, then the
                // parent's reversed history, then zero padding.
                batch.states[[j, local, 0]] = w;
                for q in 1..(m - n0) {
                    batch.states[[j, local, q]] = batch.states[[j, local - q, 0]];
                }
                for q in 0..n0 {
                    batch.states[[j, local, m - n0 + q]] = history[q];
                }
                batch.rewards[[j, local]] = w;
            }
        }
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{Dynamics, ProblemSpec};
    use crate::stats::mean_and_sample_std;

    #[test]
    fn covariance_formula_is_reproduced_by_the_factor() {
        let spec = FbmSpec::new(0.3, 8, 1.0).unwrap();
        let cov = spec.covariance();
        let t = |i: usize| (i as f64 + 1.0) / 8.0;
        for i in 0..8 {
            for j in 0..8 {
                let want = 0.5 * (t(i).powf(0.6) + t(j).powf(0.6) - (t(i) - t(j)).abs().powf(0.6));
                assert!((cov[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn standard_brownian_increments_are_independent_when_h_is_half() {
        let spec = FbmSpec::new(0.5, 4, 1.0).unwrap();
        let cov = spec.covariance();
        for i in 0..4 {
            for j in 0..4 {
                let want = 0.25 * (1 + i.min(j)) as f64;
                assert!((cov[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn h_equal_one_is_a_straight_line_through_a_single_gaussian() {
        let spec = FbmSpec::new(1.0, 5, 1.0).unwrap();
        let batch = spec.simulate(512, 0, Stream::new(8)).unwrap();
        for k in 0..512 {
            let w1 = batch.rewards[[k, 1]];
            for l in 2..=5 {
                let wl = batch.rewards[[k, l]];
                assert!(
                    (wl - l as f64 * w1).abs() < 1e-4 * wl.abs().max(1.0),
                    "H=1 paths must be linear in t"
                );
            }
        }
    }

    #[test]
    fn state_layout_is_reversed_history_with_zero_padding() {
        let spec = FbmSpec::new(0.7, 5, 1.0).unwrap();
        let batch = spec.simulate(4, 0, Stream::new(3)).unwrap();
        for k in 0..4 {
            for n in 0..=5 {
                let f = batch.features_of(k, n);
                for q in 0..5 {
                    if q < n {
                        let w = batch.rewards[[k, n - q]];
                        assert_eq!(f[q], w);
                    } else {
                        assert_eq!(f[q], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn terminal_marginal_has_the_right_variance() {
        let spec = FbmSpec::new(0.25, 6, 1.0).unwrap();
        let batch = spec.simulate(100_000, 0, Stream::new(12)).unwrap();
        let terminal: Vec<f64> = (0..batch.n_paths()).map(|k| batch.rewards[[k, 6]]).collect();
        let (mean, std) = mean_and_sample_std(&terminal);
        assert!(mean.abs() < 4.0 * std / (terminal.len() as f64).sqrt());
        // Var W_T = T^{2H} = 1.
        assert!((std - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn continuations_from_zero_match_fresh_paths_in_distribution() {
        // Two-sample Kolmogorov-Smirnov on the first-step marginal.
        let spec = FbmSpec::new(0.5, 4, 1.0).unwrap();
        let problem = ProblemSpec::new("fbm", Dynamics::Fbm(spec.clone()));
        let paths = problem.simulate_paths(100_000, Stream::new(31)).unwrap();
        let fresh: Vec<f64> = (0..paths.n_paths()).map(|k| paths.rewards[[k, 1]]).collect();

        let root = problem.simulate_paths(1, Stream::new(77)).unwrap();
        let origin = root.origin(0, 0);
        let cont = problem.simulate_continuations(&origin, 100_000, Stream::new(32)).unwrap();
        let branched: Vec<f64> =
            (0..cont.n_paths()).map(|j| cont.rewards[[j, 1 - cont.start_step]]).collect();

        let p = crate::testkit::ks_two_sample_p(&fresh, &branched);
        assert!(p > 0.01, "KS p-value {p}");
    }

    #[test]
    fn continuations_condition_on_the_observed_history() {
        // At H = 1 the whole path is t * W_1, so continuations from a state
        // with W_{t_1} = w must continue the same straight line exactly.
        let spec = FbmSpec::new(1.0, 4, 1.0).unwrap();
        let problem = ProblemSpec::new("fbm", Dynamics::Fbm(spec));
        let paths = problem.simulate_paths(3, Stream::new(5)).unwrap();
        for k in 0..3 {
            let origin = paths.origin(k, 2);
            let w2 = paths.rewards[[k, 2]];
            let cont = problem.simulate_continuations(&origin, 5, Stream::new(6)).unwrap();
            for j in 0..5 {
                let w3 = cont.rewards[[j, 0]];
                let w4 = cont.rewards[[j, 1]];
                assert!((w3 - 1.5 * w2).abs() < 2e-4 * w2.abs().max(1.0));
                assert!((w4 - 2.0 * w2).abs() < 2e-4 * w2.abs().max(1.0));
                // History features are copied verbatim.
                let f = cont.features_of(j, 3);
                assert_eq!(f[1], origin.features[0]);
                assert_eq!(f[2], origin.features[1]);
            }
        }
    }

    #[test]
    fn hurst_domain_is_validated() {
        assert!(FbmSpec::new(0.0, 4, 1.0).is_err());
        assert!(FbmSpec::new(1.2, 4, 1.0).is_err());
        assert!(FbmSpec::new(0.5, 0, 1.0).is_err());
    }
}
