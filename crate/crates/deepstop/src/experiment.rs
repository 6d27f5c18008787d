//! Runs resolved experiment points end to end and serializes the reports.
//!
//! Each point owns a root stream derived from its seed; training, the two
//! bound estimates, and the reference computation branch off that root with
//! fixed tags, so no phase can perturb another's draws.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::bounds::{assemble_report, estimate_lower, estimate_upper, BoundReport, Timings};
use crate::config::{OutputFormat, ResolvedRun, RunPoint};
use crate::process::Dynamics;
use crate::rng::Stream;
use crate::train::train_policy;
use crate::{Error, Result};

const TAG_TRAIN: u64 = 1;
const TAG_LOWER: u64 = 2;
const TAG_UPPER: u64 = 3;
const TAG_REF: u64 = 4;

/// Trains a fresh policy for one point and certifies it with both bounds.
pub fn run_point(point: &RunPoint, zero_timing: bool) -> Result<BoundReport> {
    let root = Stream::new(point.seed);

    let clock = Instant::now();
    let policy = train_policy(&point.spec, &point.train, root.derive(TAG_TRAIN))?;
    let t_train = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let lower = estimate_lower(&point.spec, &policy, point.bounds.k_lower, root.derive(TAG_LOWER))?;
    let t_lower = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let upper = estimate_upper(
        &point.spec,
        &policy,
        point.bounds.k_upper,
        point.bounds.inner,
        root.derive(TAG_UPPER),
    )?;
    let t_upper = clock.elapsed().as_secs_f64();

    let reference = reference_value(point, root.derive(TAG_REF))?;
    let timings = if zero_timing {
        Timings { train: 0.0, lower: 0.0, upper: 0.0 }
    } else {
        Timings { train: t_train, lower: t_lower, upper: t_upper }
    };
    assemble_report(
        point.spec.name.clone(),
        point.param_1,
        point.spec.direction(),
        &lower,
        &upper,
        point.bounds.inner,
        point.bounds.alpha,
        timings,
        reference,
    )
}

/// Comparison value for the report's `extra` column, when one exists:
/// the exact tree solve, the never-called note price, or the closed form
/// at the two Hurst exponents that admit one.
fn reference_value(point: &RunPoint, stream: Stream) -> Result<Option<f64>> {
    match &point.spec.dynamics {
        Dynamics::Tree(t) => Ok(Some(t.solve_dp().value)),
        Dynamics::Mbrc(m) => {
            let (mean, _sd) = m.non_callable_value(point.bounds.k_lower, stream)?;
            Ok(Some(mean))
        }
        Dynamics::Fbm(f) => {
            if (f.hurst - 0.5).abs() < 1e-12 {
                // Independent increments leave nothing to foresee.
                Ok(Some(0.0))
            } else if (f.hurst - 1.0).abs() < 1e-12 {
                // X_t = t Z: wait one step to see the sign of Z, ride
                // winners to the horizon, cut losers at the first date.
                let n = f.n_steps as f64;
                Ok(Some(f.horizon * (1.0 - 1.0 / n) / (2.0 * std::f64::consts::PI).sqrt()))
            } else {
                Ok(None)
            }
        }
        Dynamics::MaxCall(_) => Ok(None),
    }
}

/// Runs every point, failing fast; the error names the offending point.
pub fn run_experiment(run: &ResolvedRun) -> Result<Vec<BoundReport>> {
    let mut reports = Vec::with_capacity(run.points.len());
    for point in &run.points {
        let report = run_point(point, run.zero_timing).map_err(|e| {
            Error::InvalidConfig(format!(
                "point {} (param_1 = {}) failed: {e}",
                point.spec.name, point.param_1
            ))
        })?;
        reports.push(report);
    }
    Ok(reports)
}

/// Runs every point, collecting failures instead of aborting the sweep.
/// Successful rows are still worth emitting; the caller decides the exit
/// status from the failure list.
pub fn run_experiment_collect(run: &ResolvedRun) -> (Vec<BoundReport>, Vec<String>) {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for point in &run.points {
        log::info!("running {} param_1={} seed={:#x}", point.spec.name, point.param_1, point.seed);
        match run_point(point, run.zero_timing) {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(format!(
                "point {} (param_1 = {}) failed: {e}",
                point.spec.name, point.param_1
            )),
        }
    }
    (reports, failures)
}

/// Exact-solve summary for scenario-tree points.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub problem_id: String,
    pub param_1: f64,
    pub value: f64,
    pub stop_nodes: usize,
    pub total_nodes: usize,
}

/// Solves each point's tree exactly; non-tree problems have no oracle.
pub fn run_oracle(run: &ResolvedRun) -> Result<Vec<OracleRow>> {
    run.points
        .iter()
        .map(|point| match &point.spec.dynamics {
            Dynamics::Tree(t) => {
                let dp = t.solve_dp();
                Ok(OracleRow {
                    problem_id: point.spec.name.clone(),
                    param_1: point.param_1,
                    value: dp.value,
                    stop_nodes: dp.stop.iter().filter(|&&s| s).count(),
                    total_nodes: dp.stop.len(),
                })
            }
            _ => Err(Error::InvalidConfig(format!(
                "the exact solver only covers scenario trees; {} is not one",
                point.spec.name
            ))),
        })
        .collect()
}

/// Formats with six significant digits and no trailing zero noise.
/// Magnitudes outside [1e-4, 1e15) switch to scientific notation.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent parses");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);
    let mut out = String::new();
    if x < 0.0 {
        out.push('-');
    }
    if !(-5..15).contains(&exp) {
        out.push_str(&digits[..1]);
        let frac = digits[1..].trim_end_matches('0');
        if !frac.is_empty() {
            out.push('.');
            out.push_str(frac);
        }
        out.push('e');
        out.push_str(&exp.to_string());
    } else if exp >= 5 {
        out.push_str(&digits);
        for _ in 0..(exp - 5) {
            out.push('0');
        }
    } else if exp >= 0 {
        let head = (exp + 1) as usize;
        out.push_str(&digits[..head]);
        let frac = digits[head..].trim_end_matches('0');
        if !frac.is_empty() {
            out.push('.');
            out.push_str(frac);
        }
    } else {
        out.push_str("0.");
        for _ in 0..(-exp - 1) {
            out.push('0');
        }
        out.push_str(digits.trim_end_matches('0'));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const CSV_HEADER: &str =
    "problem_id,param_1,L_hat,t_L,U_hat,t_U,point_estimate,ci_low,ci_high,extra";

/// Table-layout CSV: one header line, one row per report, numbers at six
/// significant digits, `extra` empty when no reference exists.
pub fn emit_csv<W: Write>(reports: &[BoundReport], mut w: W) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no reports to emit".into()));
    }
    writeln!(w, "{CSV_HEADER}")?;
    for r in reports {
        let extra = r.reference.map(fmt_sig6).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.problem_id),
            fmt_sig6(r.param_1),
            fmt_sig6(r.l_hat),
            fmt_sig6(r.t_l),
            fmt_sig6(r.u_hat),
            fmt_sig6(r.t_u),
            fmt_sig6(r.point_estimate),
            fmt_sig6(r.ci_low),
            fmt_sig6(r.ci_high),
            extra,
        )?;
    }
    Ok(())
}

/// Machine-facing emission: the full report structs at full precision, so
/// parsing the file reproduces every field bit for bit.
pub fn emit_json<W: Write>(reports: &[BoundReport], mut w: W) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no reports to emit".into()));
    }
    serde_json::to_writer_pretty(&mut w, reports).map_err(|e| Error::Serde(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

/// Writes to `path`, or to stdout when no path is given.
pub fn emit_reports(
    reports: &[BoundReport],
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<()> {
    let emit = |w: &mut dyn Write| match format {
        OutputFormat::Csv => emit_csv(reports, w),
        OutputFormat::Json => emit_json(reports, w),
    };
    match path {
        Some(p) => {
            let mut file = std::fs::File::create(p)?;
            emit(&mut file)?;
            file.flush()?;
            Ok(())
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            emit(&mut lock)
        }
    }
}
