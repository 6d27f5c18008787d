//! Python bindings: problem construction, training, and the two bounds.
//!
//! The surface mirrors the Rust API closely; errors arrive as ValueError.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use deepstop::bounds::{self, BoundEstimate};
use deepstop::config::{FileConfig, Profile};
use deepstop::experiment;
use deepstop::policy;
use deepstop::process::black_scholes::MaxCallSpec;
use deepstop::process::fbm::FbmSpec;
use deepstop::process::mbrc::MbrcSpec;
use deepstop::process::tree::OracleTree;
use deepstop::process::{Direction, Dynamics, ProblemSpec};
use deepstop::rng::Stream;
use deepstop::train::{self, TrainConfig};

fn err(e: deepstop::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// One fully specified stopping problem.
#[pyclass]
#[derive(Clone)]
struct Problem {
    spec: ProblemSpec,
}

#[pymethods]
impl Problem {
    /// Bermudan max-call on `d` iid assets with shared parameters.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    fn max_call_symmetric(
        d: usize,
        s0: f64,
        strike: f64,
        rate: f64,
        dividend: f64,
        sigma: f64,
        rho: f64,
        maturity: f64,
        steps: usize,
    ) -> PyResult<Self> {
        let mc = MaxCallSpec::symmetric(d, s0, strike, rate, dividend, sigma, rho, maturity, steps)
            .map_err(err)?;
        Ok(Problem { spec: ProblemSpec::new("maxcall", Dynamics::MaxCall(mc)) })
    }

    /// Callable barrier reverse convertible on a daily monitoring grid.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    fn mbrc(
        d: usize,
        s0: f64,
        rate: f64,
        sigma: f64,
        rho: f64,
        barrier: f64,
        strike: f64,
        face: f64,
        coupon: f64,
        maturity: f64,
        periods: usize,
        dividends: Vec<(f64, f64)>,
    ) -> PyResult<Self> {
        let m = MbrcSpec::new(
            vec![s0; d],
            rate,
            vec![sigma; d],
            rho,
            barrier,
            strike,
            face,
            coupon,
            maturity,
            periods,
            252,
            dividends,
        )
        .map_err(err)?;
        Ok(Problem { spec: ProblemSpec::new("mbrc", Dynamics::Mbrc(m)) })
    }

    /// Fractional Brownian motion observed on an even grid over `[0, horizon]`.
    #[staticmethod]
    fn fbm(hurst: f64, steps: usize, horizon: f64) -> PyResult<Self> {
        let f = FbmSpec::new(hurst, steps, horizon).map_err(err)?;
        Ok(Problem { spec: ProblemSpec::new("fbm", Dynamics::Fbm(f)) })
    }

    /// Non-recombining binomial tree with an exact solver attached.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    fn binomial_tree(
        s0: f64,
        up: f64,
        down: f64,
        p_up: f64,
        rate: f64,
        maturity: f64,
        steps: usize,
        strike: f64,
        put: bool,
    ) -> PyResult<Self> {
        let t = OracleTree::binomial(s0, up, down, p_up, rate, maturity, steps, strike, put)
            .map_err(err)?;
        Ok(Problem { spec: ProblemSpec::new("binomial", Dynamics::Tree(t)) })
    }

    /// Scenario tree from its JSON description.
    #[staticmethod]
    fn tree_from_json(text: &str) -> PyResult<Self> {
        let t = OracleTree::from_json(text).map_err(err)?;
        Ok(Problem { spec: ProblemSpec::new("tree", Dynamics::Tree(t)) })
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.spec.n_steps()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    #[getter]
    fn direction(&self) -> &'static str {
        match self.spec.direction() {
            Direction::Maximize => "maximize",
            Direction::Minimize => "minimize",
        }
    }

    /// Exact dynamic-programming value; only scenario trees support it.
    fn exact_value(&self) -> PyResult<f64> {
        match &self.spec.dynamics {
            Dynamics::Tree(t) => Ok(t.solve_dp().value),
            _ => Err(PyValueError::new_err("exact solve needs a scenario tree")),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(name={:?}, n_steps={}, feature_dim={})",
            self.spec.name,
            self.spec.n_steps(),
            self.spec.feature_dim()
        )
    }
}

/// A trained stopping policy: one decision rule per time index.
#[pyclass]
#[derive(Clone)]
struct Policy {
    inner: policy::Policy,
}

#[pymethods]
impl Policy {
    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.n_steps
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| err(e.into()))?;
        self.inner.save(file).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| err(e.into()))?;
        let inner = policy::Policy::load(file).map_err(err)?;
        Ok(Policy { inner })
    }

    fn __repr__(&self) -> String {
        format!("Policy(n_steps={}, feature_dim={})", self.inner.n_steps, self.inner.feature_dim)
    }
}

/// Trains a policy by backward induction. Optional knobs fall back to the
/// library defaults; `steps` is the per-net gradient-step count.
#[pyfunction]
#[pyo3(signature = (problem, seed, batch_size=None, steps=None, hidden=None, reuse_paths=None))]
fn train_policy(
    problem: &Problem,
    seed: u64,
    batch_size: Option<usize>,
    steps: Option<usize>,
    hidden: Option<Vec<usize>>,
    reuse_paths: Option<bool>,
) -> PyResult<Policy> {
    let mut cfg = TrainConfig::default();
    if let Some(b) = batch_size {
        cfg.batch_size = b;
    }
    if let Some(s) = steps {
        cfg.steps_per_net = s;
    }
    if let Some(h) = hidden {
        cfg.hidden = h;
    }
    if let Some(r) = reuse_paths {
        cfg.reuse_paths = r;
    }
    let inner = train::train_policy(&problem.spec, &cfg, Stream::new(seed)).map_err(err)?;
    Ok(Policy { inner })
}

/// Simulates `count` fresh paths and stops each with the policy: returns
/// a list of (stop_index, native_reward) pairs.
#[pyfunction]
fn sample_stops(
    problem: &Problem,
    policy: &Policy,
    count: usize,
    seed: u64,
) -> PyResult<Vec<(usize, f64)>> {
    let batch = problem.spec.simulate_paths(count, Stream::new(seed)).map_err(err)?;
    let stopped = policy.inner.realize(&batch).map_err(err)?;
    Ok(stopped.into_iter().map(|s| (s.stop_index, s.reward)).collect())
}

/// Policy-value bound from `count` fresh paths: returns (value, sigma).
#[pyfunction]
fn lower_bound(
    problem: &Problem,
    policy: &Policy,
    count: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let e = bounds::estimate_lower(&problem.spec, &policy.inner, count, Stream::new(seed))
        .map_err(err)?;
    Ok((e.value, e.sigma))
}

/// Dual martingale bound from `count` outer paths with `inner` nested
/// continuations each: returns (value, sigma).
#[pyfunction]
fn upper_bound(
    problem: &Problem,
    policy: &Policy,
    count: usize,
    inner: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let e = bounds::estimate_upper(&problem.spec, &policy.inner, count, inner, Stream::new(seed))
        .map_err(err)?;
    Ok((e.value, e.sigma))
}

/// Two-sided interval around the bound pair, in the problem's internal
/// (maximizing) orientation.
#[pyfunction]
fn confidence_interval(
    l_hat: f64,
    sigma_l: f64,
    k_l: usize,
    u_hat: f64,
    sigma_u: f64,
    k_u: usize,
    alpha: f64,
) -> PyResult<(f64, f64)> {
    let lower = BoundEstimate { value: l_hat, sigma: sigma_l, count: k_l };
    let upper = BoundEstimate { value: u_hat, sigma: sigma_u, count: k_u };
    bounds::confidence_interval(&lower, &upper, alpha).map_err(err)
}

/// Runs a TOML config end to end and returns the report rows as CSV text.
#[pyfunction]
#[pyo3(signature = (text, paper_scale=false))]
fn run_config_csv(text: &str, paper_scale: bool) -> PyResult<String> {
    let cfg = FileConfig::parse(text).map_err(err)?;
    let profile = if paper_scale { Profile::Paper } else { Profile::Desk };
    let run = cfg.resolve(profile).map_err(err)?;
    let reports = experiment::run_experiment(&run).map_err(err)?;
    let mut out = Vec::new();
    experiment::emit_csv(&reports, &mut out).map_err(err)?;
    String::from_utf8(out).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn deepstop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(train_policy, m)?)?;
    m.add_function(wrap_pyfunction!(sample_stops, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_interval, m)?)?;
    m.add_function(wrap_pyfunction!(run_config_csv, m)?)?;
    Ok(())
}
