//! Bermudan max-call on correlated geometric Brownian motions.
//!
//! Transitions are sampled from the exact log-normal law on the decision grid
//! t_n = n T / N, so there is no discretization bias to tune away. The feature
//! vector at step n is (S^1, ..., S^d, g(n, S)): the asset prices plus the
//! discounted exercise payoff as an explicit last coordinate.

use ndarray::Array2;

use super::{empty_batch, PathBatch, PathOrigin};
use crate::linalg::cholesky_factor;
use crate::rng::Stream;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct MaxCallSpec {
    pub d: usize,
    pub s0: Vec<f64>,
    pub strike: f64,
    pub rate: f64,
    pub dividend: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: f64,
    pub maturity: f64,
    pub n_steps: usize,
    corr_chol: Array2<f64>,
}

impl MaxCallSpec {
    pub fn new(
        s0: Vec<f64>,
        strike: f64,
        rate: f64,
        dividend: Vec<f64>,
        sigma: Vec<f64>,
        rho: f64,
        maturity: f64,
        n_steps: usize,
    ) -> Result<Self> {
        let d = s0.len();
        if d == 0 {
            return Err(Error::InvalidSpec("max-call needs at least one asset".into()));
        }
        if dividend.len() != d || sigma.len() != d {
            return Err(Error::InvalidSpec(
                "dividend and volatility vectors must match the number of assets".into(),
            ));
        }
        if s0.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidSpec("initial prices must be positive".into()));
        }
        if sigma.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidSpec("volatilities must be positive".into()));
        }
        if !(strike > 0.0) {
            return Err(Error::InvalidSpec("strike must be positive".into()));
        }
        if !(maturity > 0.0) {
            return Err(Error::InvalidSpec("maturity must be positive".into()));
        }
        if n_steps == 0 {
            return Err(Error::InvalidSpec("need at least one decision step".into()));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidSpec(format!("correlation {rho} outside [-1, 1]")));
        }
        let corr_chol = cholesky_factor(&corr_matrix(d, rho))?;
        Ok(MaxCallSpec { d, s0, strike, rate, dividend, sigma, rho, maturity, n_steps, corr_chol })
    }

    /// All assets share one initial price, dividend yield, and volatility.
    pub fn symmetric(
        d: usize,
        s0: f64,
        strike: f64,
        rate: f64,
        dividend: f64,
        sigma: f64,
        rho: f64,
        maturity: f64,
        n_steps: usize,
    ) -> Result<Self> {
        Self::new(
            vec![s0; d],
            strike,
            rate,
            vec![dividend; d],
            vec![sigma; d],
            rho,
            maturity,
            n_steps,
        )
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }

    #[inline]
    fn payoff(&self, n: usize, prices: &[f64]) -> f64 {
        let best = prices.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let t = n as f64 * self.dt();
        (-self.rate * t).exp() * (best - self.strike).max(0.0)
    }

    pub fn reward(&self, n: usize, features: &[f64]) -> f64 {
        self.payoff(n, &features[..self.d])
    }

    pub fn start_features(&self) -> Vec<f64> {
        let mut f = self.s0.clone();
        f.push(self.payoff(0, &self.s0));
        f
    }

    /// Advances `prices` by one grid step using the draw counters
    /// `base_counter..base_counter + d` of `stream`.
    #[inline]
    fn advance(
        &self,
        prices: &mut [f64],
        stream: Stream,
        base_counter: usize,
        z: &mut [f64],
        dt: f64,
    ) {
        stream.fill_normal(base_counter, z);
        let sqdt = dt.sqrt();
        for i in 0..self.d {
            let mut eps = 0.0;
            for j in 0..=i {
                eps += self.corr_chol[[i, j]] * z[j];
            }
            let drift = (self.rate - self.dividend[i] - 0.5 * self.sigma[i] * self.sigma[i]) * dt;
            prices[i] *= (drift + self.sigma[i] * sqdt * eps).exp();
        }
    }

    pub(crate) fn simulate(&self, count: usize, first: usize, stream: Stream) -> Result<PathBatch> {
        let n = self.n_steps;
        let f = self.d + 1;
        let mut batch = empty_batch(count, 0, n, f);
        let dt = self.dt();
        let mut z = vec![0.0; self.d];
        for k in 0..count {
            let s = stream.derive((first + k) as u64);
            let mut prices = self.s0.clone();
            self.record(&mut batch, k, 0, &prices);
            for step in 1..=n {
                self.advance(&mut prices, s, (step - 1) * self.d, &mut z, dt);
                self.record(&mut batch, k, step, &prices);
            }
        }
        Ok(batch)
    }

    pub(crate) fn continuations(
        &self,
        origin: &PathOrigin<'_>,
        count: usize,
        stream: Stream,
    ) -> Result<PathBatch> {
        let n0 = origin.step;
        let f = self.d + 1;
        let mut batch = empty_batch(count, n0 + 1, self.n_steps, f);
        if n0 == self.n_steps {
            return Ok(batch);
        }
        let dt = self.dt();
        let start: Vec<f64> = origin.features.iter().take(self.d).cloned().collect();
        let mut z = vec![0.0; self.d];
        for j in 0..count {
            let s = stream.derive(j as u64);
            let mut prices = start.clone();
            for step in (n0 + 1)..=self.n_steps {
                self.advance(&mut prices, s, (step - n0 - 1) * self.d, &mut z, dt);
                self.record(&mut batch, j, step, &prices);
            }
        }
        Ok(batch)
    }

    fn record(&self, batch: &mut PathBatch, k: usize, step: usize, prices: &[f64]) {
        let s = step - batch.start_step;
        for (i, &p) in prices.iter().enumerate() {
            batch.states[[k, s, i]] = p;
        }
        let g = self.payoff(step, prices);
        batch.states[[k, s, self.d]] = g;
        batch.rewards[[k, s]] = g;
    }
}

/// Equicorrelation matrix: ones on the diagonal, `rho` everywhere else.
pub(crate) fn corr_matrix(d: usize, rho: f64) -> Array2<f64> {
    let mut m = Array2::from_elem((d, d), rho);
    for i in 0..d {
        m[[i, i]] = 1.0;
    }
    m
}

/// Standard heterogeneous volatility ladder for asymmetric benchmarks:
/// evenly spaced on [0.08, 0.40] up to five assets, sigma_i = 0.1 + i/(2d)
/// beyond that.
pub fn asymmetric_sigmas(d: usize) -> Vec<f64> {
    assert!(d >= 2, "ladder needs at least two assets");
    if d <= 5 {
        (1..=d).map(|i| 0.08 + 0.32 * (i - 1) as f64 / (d - 1) as f64).collect()
    } else {
        (1..=d).map(|i| 0.1 + i as f64 / (2 * d) as f64).collect()
    }
}
