//! Callable multi barrier reverse convertible on a daily monitoring grid.
//!
//! The note pays a coupon c at each of N period dates, redeems at face F if
//! called, and at maturity converts into the worst-performing asset when the
//! barrier was breached at some daily close and the worst asset finishes at
//! or below the conversion strike. The issuer minimizes the expected
//! discounted payout; redemption is allowed at period dates 1..N-1.
//!
//! State at period n is (S^1, ..., S^d, hit) where hit is the running barrier
//! indicator, monitored at every daily close between period dates. Underlying
//! prices follow correlated geometric Brownian motions with proportional
//! price drops at discrete dividend dates.

use ndarray::Array2;

use super::{empty_batch, PathBatch, PathOrigin};
use crate::linalg::cholesky_factor;
use crate::rng::Stream;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct MbrcSpec {
    pub d: usize,
    pub s0: Vec<f64>,
    pub rate: f64,
    pub sigma: Vec<f64>,
    pub rho: f64,
    pub barrier: f64,
    pub conversion_strike: f64,
    pub face: f64,
    pub coupon: f64,
    pub maturity: f64,
    pub n_periods: usize,
    pub days_per_year: usize,
    /// Proportional price drops (time, size) applied from the dividend date on.
    pub dividends: Vec<(f64, f64)>,
    corr_chol: Array2<f64>,
    days_total: usize,
    days_per_period: usize,
    /// First day index m with u_m >= dividend time, per dividend.
    dividend_days: Vec<usize>,
}

impl MbrcSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        s0: Vec<f64>,
        rate: f64,
        sigma: Vec<f64>,
        rho: f64,
        barrier: f64,
        conversion_strike: f64,
        face: f64,
        coupon: f64,
        maturity: f64,
        n_periods: usize,
        days_per_year: usize,
        dividends: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let d = s0.len();
        if d == 0 {
            return Err(Error::InvalidSpec("need at least one underlying".into()));
        }
        if sigma.len() != d {
            return Err(Error::InvalidSpec(
                "volatility vector must match the number of assets".into(),
            ));
        }
        if s0.iter().any(|&x| !(x > 0.0)) || sigma.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidSpec("prices and volatilities must be positive".into()));
        }
        if !(barrier > 0.0) || !(face > 0.0) || !(conversion_strike > 0.0) {
            return Err(Error::InvalidSpec("barrier, face, and strike must be positive".into()));
        }
        if n_periods < 2 {
            return Err(Error::InvalidSpec("need at least two period dates".into()));
        }
        if !(maturity > 0.0) {
            return Err(Error::InvalidSpec("maturity must be positive".into()));
        }
        let days_f = days_per_year as f64 * maturity;
        let days_total = days_f.round() as usize;
        if days_total == 0 || (days_f - days_total as f64).abs() > 1e-9 {
            return Err(Error::InvalidSpec(
                "maturity must cover a whole number of monitoring days".into(),
            ));
        }
        if !days_total.is_multiple_of(n_periods) {
            return Err(Error::InvalidSpec(format!(
                "{days_total} monitoring days do not divide into {n_periods} equal periods"
            )));
        }
        for &(t, size) in &dividends {
            if !(t > 0.0) || t > maturity || !(0.0..1.0).contains(&size) {
                return Err(Error::InvalidSpec(format!("invalid dividend ({t}, {size})")));
            }
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidSpec(format!("correlation {rho} outside [-1, 1]")));
        }
        let corr_chol = cholesky_factor(&super::black_scholes::corr_matrix(d, rho))?;
        let day_len = maturity / days_total as f64;
        let dividend_days =
            dividends.iter().map(|&(t, _)| (t / day_len - 1e-9).ceil() as usize).collect();
        Ok(MbrcSpec {
            d,
            s0,
            rate,
            sigma,
            rho,
            barrier,
            conversion_strike,
            face,
            coupon,
            maturity,
            n_periods,
            days_per_year,
            dividends,
            corr_chol,
            days_total,
            days_per_period: days_total / n_periods,
            dividend_days,
        })
    }

    #[inline]
    pub fn period_time(&self, n: usize) -> f64 {
        n as f64 * self.maturity / self.n_periods as f64
    }

    fn coupons_through(&self, n: usize) -> f64 {
        (1..=n).map(|m| (-self.rate * self.period_time(m)).exp() * self.coupon).sum()
    }

    /// Redemption value at period n given the feature vector (prices, hit).
    pub fn reward(&self, n: usize, features: &[f64]) -> f64 {
        let hit = features[self.d] != 0.0;
        if n < self.n_periods || !hit {
            return self.coupons_through(n) + (-self.rate * self.period_time(n)).exp() * self.face;
        }
        let worst = features[..self.d].iter().cloned().fold(f64::INFINITY, f64::min);
        let settle = if worst > self.conversion_strike { self.face } else { worst };
        self.coupons_through(self.n_periods) + (-self.rate * self.maturity).exp() * settle
    }

    pub fn start_features(&self) -> Vec<f64> {
        let mut f = self.s0.clone();
        f.push(0.0);
        f
    }

    /// One daily step for all assets. `day` is the absolute monitoring-day
    /// index (drives the dividend schedule); `counter_base` addresses the
    /// stream's draw counters, which restart at zero for continuation legs.
    #[inline]
    fn advance_day(
        &self,
        prices: &mut [f64],
        day: usize,
        counter_base: usize,
        stream: Stream,
        z: &mut [f64],
        hit: &mut bool,
    ) {
        let dt = self.maturity / self.days_total as f64;
        let sqdt = dt.sqrt();
        stream.fill_normal(counter_base, z);
        let mut worst = f64::INFINITY;
        for i in 0..self.d {
            let mut eps = 0.0;
            for j in 0..=i {
                eps += self.corr_chol[[i, j]] * z[j];
            }
            let drift = (self.rate - 0.5 * self.sigma[i] * self.sigma[i]) * dt;
            prices[i] *= (drift + self.sigma[i] * sqdt * eps).exp();
            for (div_idx, &dday) in self.dividend_days.iter().enumerate() {
                if dday == day {
                    prices[i] *= 1.0 - self.dividends[div_idx].1;
                }
            }
            worst = worst.min(prices[i]);
        }
        if worst <= self.barrier {
            *hit = true;
        }
    }

    pub(crate) fn simulate(&self, count: usize, first: usize, stream: Stream) -> Result<PathBatch> {
        let mut batch = empty_batch(count, 0, self.n_periods, self.d + 1);
        let mut z = vec![0.0; self.d];
        for k in 0..count {
            let s = stream.derive((first + k) as u64);
            let mut prices = self.s0.clone();
            let mut hit = false;
            self.record(&mut batch, k, 0, &prices, hit);
            for day in 1..=self.days_total {
                self.advance_day(&mut prices, day, (day - 1) * self.d, s, &mut z, &mut hit);
                if day % self.days_per_period == 0 {
                    self.record(&mut batch, k, day / self.days_per_period, &prices, hit);
                }
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
        let mut batch = empty_batch(count, n0 + 1, self.n_periods, self.d + 1);
        if n0 == self.n_periods {
            return Ok(batch);
        }
        let day0 = n0 * self.days_per_period;
        let start: Vec<f64> = origin.features.iter().take(self.d).cloned().collect();
        let start_hit = origin.features[self.d] != 0.0;
        let mut z = vec![0.0; self.d];
        for j in 0..count {
            let s = stream.derive(j as u64);
            let mut prices = start.clone();
            let mut hit = start_hit;
            for day in (day0 + 1)..=self.days_total {
                // Counters restart at the origin so continuation draws are a
                // pure function of (stream, j, day - day0).
                self.advance_day(&mut prices, day, (day - day0 - 1) * self.d, s, &mut z, &mut hit);
                if day % self.days_per_period == 0 {
                    self.record(&mut batch, j, day / self.days_per_period, &prices, hit);
                }
            }
        }
        Ok(batch)
    }

    fn record(&self, batch: &mut PathBatch, k: usize, period: usize, prices: &[f64], hit: bool) {
        let s = period - batch.start_step;
        for (i, &p) in prices.iter().enumerate() {
            batch.states[[k, s, i]] = p;
        }
        batch.states[[k, s, self.d]] = if hit { 1.0 } else { 0.0 };
        let mut features = prices.to_vec();
        features.push(if hit { 1.0 } else { 0.0 });
        batch.rewards[[k, s]] = self.reward(period, &features);
    }

    /// Plain Monte Carlo value of the never-called note, as a reference.
    /// Returns (mean, sample standard deviation) over `count` paths.
    pub fn non_callable_value(&self, count: usize, stream: Stream) -> Result<(f64, f64)> {
        if count < 2 {
            return Err(Error::EmptyBatch("need at least two paths".into()));
        }
        let coupons = self.coupons_through(self.n_periods);
        let discount = (-self.rate * self.maturity).exp();
        let mut acc = crate::stats::RunningMoments::new();
        let chunk = 65_536;
        let mut done = 0;
        while done < count {
            let take = chunk.min(count - done);
            let batch = self.simulate(take, done, stream)?;
            for k in 0..take {
                let f = batch.features_of(k, self.n_periods);
                let hit = f[self.d] != 0.0;
                let worst = f.iter().take(self.d).cloned().fold(f64::INFINITY, f64::min);
                let settle = if !hit || worst > self.conversion_strike { self.face } else { worst };
                acc.push(coupons + discount * settle);
            }
            done += take;
        }
        Ok((acc.mean(), acc.sample_std()))
    }
}
