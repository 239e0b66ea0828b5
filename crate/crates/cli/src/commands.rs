use std::fmt;
use std::io::Write;

use deer::bench::{compare_outputs, gaussian_inputs};
use deer::ode::deer_solve_ode_with;
use deer::problems::{Builtin, LinearDecay, Logistic, VanDerPol};
use deer::pscan::FaultInjection;
use deer::{
    deer_eval_rnn, sequential_deer_fixed_point, sequential_eval_rnn, DeerConfig, DeerError, DeerReport, Dynamics,
    GruCell, GruParams, Interpolation, OdeProblem, Precision, Real, ScanConfig, StateSequence, TimeGrid,
};

use crate::config::RunConfig;

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CmdError {
    /// Bad flags, config or I/O; exit 1.
    Usage(String),
    /// Divergence, non-convergence or a failed check; exit 2.
    Numerical(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => 1,
            CmdError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmdError::Usage(m) | CmdError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<DeerError> for CmdError {
    fn from(e: DeerError) -> Self {
        match e {
            DeerError::Shape { .. } | DeerError::Config(_) => CmdError::Usage(e.to_string()),
            _ => CmdError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Usage(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CmdError {
    fn from(e: csv::Error) -> Self {
        CmdError::Usage(format!("csv error: {e}"))
    }
}

pub fn deer_config<T: Real>(tolerance: Option<f64>, max_iters: usize, chunk_size: usize) -> DeerConfig<T> {
    let mut cfg = DeerConfig::<T>::default().with_max_iters(max_iters).with_scan(ScanConfig::with_chunk_size(chunk_size));
    if let Some(t) = tolerance {
        cfg = cfg.with_tolerance(t);
    }
    cfg
}

/// A solved trajectory with its time column (step index for recurrences).
pub struct Solution {
    pub times: Vec<f64>,
    pub states: StateSequence<f64>,
    pub report: DeerReport,
}

impl Solution {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CmdError> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|k| format!("y_{k}")));
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(self.states.rows()) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn solve_ode<T: Real, D: Dynamics<T>>(dynamics: D, cfg: &RunConfig) -> Result<Solution, CmdError> {
    let grid = TimeGrid::uniform(T::of(cfg.t_start), T::of(cfg.t_end), cfg.steps)?;
    let times = grid.times().iter().map(|t| t.as_f64()).collect();
    let y0 = cfg.y0.iter().map(|&v| T::of(v)).collect();
    let problem = OdeProblem::autonomous(dynamics, y0, grid)?;
    let (y, report, _) =
        deer_solve_ode_with(&problem, cfg.interpolation, &deer_config(cfg.tolerance, cfg.max_iters, cfg.chunk_size))?;
    Ok(Solution { times, states: y.cast(), report })
}

fn solve_gru<T: Real>(cfg: &RunConfig) -> Result<Solution, CmdError> {
    let cell = GruCell::new(GruParams::<T>::random(cfg.state_dim, cfg.input_dim, cfg.seed))?;
    let x = gaussian_inputs::<T>(cfg.steps, cfg.input_dim, cfg.seed.wrapping_add(1));
    let y0: Vec<T> = cfg.y0.iter().map(|&v| T::of(v)).collect();
    let (y, report) = deer_eval_rnn(&cell, &x, &y0, &deer_config(cfg.tolerance, cfg.max_iters, cfg.chunk_size))?;
    let n = cfg.state_dim;
    let mut flat = cfg.y0.clone();
    flat.extend(y.as_slice().iter().map(|v| v.as_f64()));
    let states = StateSequence::from_flat(cfg.steps + 1, n, flat)?;
    Ok(Solution { times: (0..=cfg.steps).map(|i| i as f64).collect(), states, report })
}

pub fn solve<T: Real>(cfg: &RunConfig) -> Result<Solution, CmdError> {
    match cfg.problem {
        Builtin::Logistic => solve_ode::<T, _>(Logistic { rate: T::of(cfg.rate) }, cfg),
        Builtin::VanDerPol => solve_ode::<T, _>(VanDerPol { mu: T::of(cfg.mu) }, cfg),
        Builtin::Linear => solve_ode::<T, _>(LinearDecay { rate: T::of(cfg.rate) }, cfg),
        Builtin::Gru => solve_gru::<T>(cfg),
    }
}

/// One line of the equivalence table.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub max_abs: f64,
    pub threshold: f64,
    pub note: Option<String>,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_abs <= self.threshold
    }
}

/// Equivalence thresholds for (recurrences, ODEs) at each precision.
pub fn check_thresholds(precision: Precision) -> (f64, f64) {
    match precision {
        Precision::F64 => (1e-9, 1e-6),
        Precision::F32 => (2e-6, 1e-3),
    }
}

fn row_from(name: String, threshold: f64, result: Result<f64, DeerError>) -> CheckRow {
    match result {
        Ok(d) => CheckRow { name, max_abs: d, threshold, note: None },
        Err(e) => CheckRow { name, max_abs: f64::INFINITY, threshold, note: Some(e.to_string()) },
    }
}

fn gru_case<T: Real>(n: usize, len: usize, seed: u64, cfg: &DeerConfig<T>) -> Result<f64, DeerError> {
    let cell = GruCell::new(GruParams::<T>::random(n, n, seed))?;
    let x = gaussian_inputs::<T>(len, n, seed.wrapping_add(1));
    let y0 = vec![T::zero(); n];
    let (y, report) = deer_eval_rnn(&cell, &x, &y0, cfg)?;
    if !report.converged {
        return Err(DeerError::Divergence { iteration: report.iterations, reason: "did not converge".into() });
    }
    Ok(compare_outputs(&y, &sequential_eval_rnn(&cell, &x, &y0)?)?.max_abs)
}

fn ode_case<T: Real, D: Dynamics<T>>(
    problem: &OdeProblem<T, D>,
    mode: Interpolation,
    cfg: &DeerConfig<T>,
) -> Result<f64, DeerError> {
    let (y, report, _) = deer_solve_ode_with(problem, mode, cfg)?;
    if !report.converged {
        return Err(DeerError::Divergence { iteration: report.iterations, reason: "did not converge".into() });
    }
    Ok(compare_outputs(&y, &sequential_deer_fixed_point(problem, mode)?)?.max_abs)
}

/// DEER against the sequential oracles on GRU cells and the built-in ODEs.
pub fn check<T: Real>(tolerance: Option<f64>, chunk_size: usize, sign_flip: bool) -> Result<Vec<CheckRow>, CmdError> {
    let mut cfg = deer_config::<T>(tolerance, deer::config::DEFAULT_MAX_ITERS, chunk_size);
    if sign_flip {
        cfg.scan.fault = FaultInjection::SignFlip;
    }
    let (rnn_tol, ode_tol) = check_thresholds(T::PRECISION);
    let mut rows = Vec::new();
    for (n, len, seed) in [(2, 10_000, 0), (8, 10_000, 1), (32, 2_000, 2)] {
        rows.push(row_from(format!("gru n={n} L={len}"), rnn_tol, gru_case::<T>(n, len, seed, &cfg)));
    }
    let grid = |t_end: f64, steps| TimeGrid::uniform(T::zero(), T::of(t_end), steps);
    let logistic = OdeProblem::autonomous(Logistic { rate: T::one() }, vec![T::of(0.1)], grid(5.0, 2000)?)?;
    rows.push(row_from("logistic L=2000 midpoint".into(), ode_tol, ode_case(&logistic, Interpolation::Midpoint, &cfg)));
    let vdp = OdeProblem::autonomous(VanDerPol { mu: T::one() }, vec![T::of(2.0), T::zero()], grid(10.0, 5000)?)?;
    for (mode, label) in [(Interpolation::Midpoint, "midpoint"), (Interpolation::Left, "left")] {
        rows.push(row_from(format!("van-der-pol L=5000 {label}"), ode_tol, ode_case(&vdp, mode, &cfg)));
    }
    Ok(rows)
}

/// Mean and population standard deviation of iteration counts per tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub tolerance: f64,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub struct StudySpec {
    pub problem: Builtin,
    pub tolerances: Vec<f64>,
    pub dims: usize,
    pub len: usize,
    pub runs: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub chunk_size: usize,
}

/// Iteration counts over `runs` seeded instances. GRU runs vary weights and
/// inputs; ODE runs scale the default initial state by `1 + 0.01·s`.
pub fn convergence<T: Real>(spec: &StudySpec) -> Result<Vec<StudyRow>, CmdError> {
    let mut rows = Vec::with_capacity(spec.tolerances.len());
    for &tol in &spec.tolerances {
        let cfg = deer_config::<T>(Some(tol), spec.max_iters, spec.chunk_size);
        let mut counts = Vec::with_capacity(spec.runs);
        for s in 0..spec.runs as u64 {
            let seed = spec.seed.wrapping_add(s);
            let report = match spec.problem {
                Builtin::Gru => {
                    let cell = GruCell::new(GruParams::<T>::random(spec.dims, spec.dims, seed))?;
                    let x = gaussian_inputs::<T>(spec.len, spec.dims, seed.wrapping_mul(1_000_003).wrapping_add(1));
                    deer_eval_rnn(&cell, &x, &vec![T::zero(); spec.dims], &cfg)?.1
                }
                ode => {
                    let mut run = RunConfig::defaults(ode);
                    run.steps = spec.len;
                    run.y0.iter_mut().for_each(|v| *v *= 1.0 + 0.01 * s as f64);
                    run.tolerance = Some(tol);
                    run.max_iters = spec.max_iters;
                    run.chunk_size = spec.chunk_size;
                    solve::<T>(&run)?.report
                }
            };
            counts.push(report.iterations as f64);
        }
        let (mean, std) = mean_std(&counts);
        rows.push(StudyRow { tolerance: tol, mean, std });
    }
    Ok(rows)
}

pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<(), CmdError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tolerance", "iterations_mean", "iterations_std"])?;
    for r in rows {
        w.write_record([format!("{:e}", r.tolerance), r.mean.to_string(), r.std.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
