//! `deer`: solve, verify and benchmark parallel-in-time evaluation.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 numerical failure.

mod commands;
mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use deer::bench::{self, GridSpec};
use deer::problems::Builtin;
use deer::Precision;

use commands::{CmdError, StudySpec};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "deer", version, about = "Parallel-in-time evaluation of recurrences and ODEs")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// Run configuration (key = value text, or JSON)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Convergence tolerance on the max-abs iterate change
    #[arg(long, global = true, value_name = "F")]
    tolerance: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    max_iters: Option<usize>,
    /// Worker threads (falls back to DEER_THREADS, then all cores)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Steps per scan chunk
    #[arg(long, global = true, value_name = "N")]
    chunk_size: Option<usize>,
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
    /// Output file (standard output when absent)
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the problem described by --config and write its trajectory as CSV
    Solve,
    /// Compare DEER against the sequential oracles on the built-in suite
    Check {
        /// Corrupt the scan operator; the suite must then fail
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
    /// Mean iteration counts over seeded runs for each tolerance
    Convergence {
        #[arg(long, default_value = "gru", value_parser = parse_problem)]
        problem: Builtin,
        #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-4,1e-7", value_parser = parse_positive)]
        tolerances: Vec<f64>,
        /// State dimension of the GRU
        #[arg(long, default_value_t = 2)]
        dims: usize,
        /// Sequence length or grid steps
        #[arg(long, default_value_t = 10_000)]
        len: usize,
        #[arg(long, default_value_t = 16)]
        runs: usize,
    },
    /// Time DEER against sequential evaluation over a GRU grid
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        lengths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2")]
        batches: Vec<usize>,
        /// Seeds (defaults to --seed, or 0)
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value_t = 2)]
        warmups: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Cells whose estimated working set exceeds this are skipped
        #[arg(long, default_value_t = 4096, value_name = "MIB")]
        memory_budget_mib: u64,
        /// Also write the records as JSON lines
        #[arg(long, value_name = "PATH")]
        jsonl: Option<PathBuf>,
    },
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse()
}

fn parse_problem(s: &str) -> Result<Builtin, String> {
    s.parse().map_err(|e: deer::DeerError| e.to_string())
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), CmdError> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("DEER_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| CmdError::Usage(format!("DEER_THREADS=`{v}` is not a thread count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CmdError::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CmdError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CmdError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CmdError::Usage(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_solve(g: &GlobalOpts) -> Result<(), CmdError> {
    let path = g.config.as_deref().ok_or_else(|| CmdError::Usage("solve needs --config PATH".into()))?;
    let mut cfg = RunConfig::load(path).map_err(|e| CmdError::Usage(format!("{}: {e}", path.display())))?;
    if let Some(t) = g.tolerance {
        cfg.tolerance = Some(t);
    }
    if let Some(m) = g.max_iters {
        cfg.max_iters = m;
    }
    if let Some(c) = g.chunk_size {
        cfg.chunk_size = c;
    }
    if let Some(p) = g.precision {
        cfg.precision = p;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let out_path = g.out.clone().or_else(|| cfg.output.clone());
    let solution = match cfg.precision {
        Precision::F32 => commands::solve::<f32>(&cfg)?,
        Precision::F64 => commands::solve::<f64>(&cfg)?,
    };
    solution.write_csv(output(out_path.as_deref())?)?;
    let r = &solution.report;
    let line = format!(
        "converged={} iterations={} residual={:e} wall_time_s={:.6}",
        r.converged,
        r.iterations,
        r.final_residual().unwrap_or(f64::NAN),
        r.wall_time
    );
    // keep the CSV alone on standard output when it goes there
    if out_path.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    if r.converged {
        Ok(())
    } else {
        Err(CmdError::Numerical(format!("did not converge within {} iterations", r.iterations)))
    }
}

fn cmd_check(g: &GlobalOpts, sign_flip: bool) -> Result<(), CmdError> {
    let precision = g.precision.unwrap_or(Precision::F64);
    let chunk = g.chunk_size.unwrap_or(deer::pscan::DEFAULT_CHUNK_SIZE);
    let rows = match precision {
        Precision::F32 => commands::check::<f32>(g.tolerance, chunk, sign_flip)?,
        Precision::F64 => commands::check::<f64>(g.tolerance, chunk, sign_flip)?,
    };
    let mut out = output(g.out.as_deref())?;
    writeln!(out, "{:<28} {:>12} {:>10}  result ({precision})", "case", "max_abs_diff", "threshold")?;
    for r in &rows {
        write!(out, "{:<28} {:>12.3e} {:>10.1e}  {}", r.name, r.max_abs, r.threshold, if r.passed() { "PASS" } else { "FAIL" })?;
        match &r.note {
            Some(n) => writeln!(out, " ({n})")?,
            None => writeln!(out)?,
        }
    }
    out.flush()?;
    let failed = rows.iter().filter(|r| !r.passed()).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CmdError::Numerical(format!("{failed} of {} equivalence checks failed", rows.len())))
    }
}

fn cmd_convergence(g: &GlobalOpts, spec: StudySpec) -> Result<(), CmdError> {
    let precision = g.precision.unwrap_or(Precision::F64);
    if spec.runs == 0 || spec.len == 0 || spec.dims == 0 {
        return Err(CmdError::Usage("--runs, --len and --dims must be positive".into()));
    }
    for &t in &spec.tolerances {
        if t < precision.epsilon() {
            eprintln!("warning: tolerance {t:e} is below {precision} machine epsilon; counts may hit max_iters");
        }
    }
    let rows = match precision {
        Precision::F32 => commands::convergence::<f32>(&spec)?,
        Precision::F64 => commands::convergence::<f64>(&spec)?,
    };
    commands::write_study_csv(&rows, output(g.out.as_deref())?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    g: &GlobalOpts,
    lengths: Vec<usize>,
    dims: Vec<usize>,
    batches: Vec<usize>,
    seeds: Option<Vec<u64>>,
    warmups: usize,
    repeats: usize,
    budget_mib: u64,
    jsonl: Option<PathBuf>,
) -> Result<(), CmdError> {
    let spec = GridSpec {
        lengths,
        dims,
        batches,
        seeds: seeds.unwrap_or_else(|| vec![g.seed.unwrap_or(0)]),
        warmups,
        repeats,
        memory_budget_bytes: budget_mib.saturating_mul(1 << 20),
    };
    spec.validate()?;
    let max_iters = g.max_iters.unwrap_or(deer::config::DEFAULT_MAX_ITERS);
    let chunk = g.chunk_size.unwrap_or(deer::pscan::DEFAULT_CHUNK_SIZE);
    let records = match g.precision.unwrap_or(Precision::F64) {
        Precision::F32 => bench::run_grid(&spec, &commands::deer_config::<f32>(g.tolerance, max_iters, chunk))?,
        Precision::F64 => bench::run_grid(&spec, &commands::deer_config::<f64>(g.tolerance, max_iters, chunk))?,
    };
    bench::write_csv(&records, output(g.out.as_deref())?)?;
    if let Some(p) = jsonl {
        bench::write_jsonl(&records, output(Some(&p))?)?;
    }
    for &l in &spec.lengths {
        for &n in &spec.dims {
            if let Some(s) = bench::speedup(&records, l, n) {
                eprintln!("L={l} n={n} speedup {s:.3}");
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CmdError> {
    configure_threads(cli.global.threads)?;
    let g = &cli.global;
    match cli.command {
        Command::Solve => cmd_solve(g),
        Command::Check { inject_sign_flip } => cmd_check(g, inject_sign_flip),
        Command::Convergence { problem, tolerances, dims, len, runs } => cmd_convergence(
            g,
            StudySpec {
                problem,
                tolerances,
                dims,
                len,
                runs,
                seed: g.seed.unwrap_or(0),
                max_iters: g.max_iters.unwrap_or(deer::config::DEFAULT_MAX_ITERS),
                chunk_size: g.chunk_size.unwrap_or(deer::pscan::DEFAULT_CHUNK_SIZE),
            },
        ),
        Command::Bench { lengths, dims, batches, seeds, warmups, repeats, memory_budget_mib, jsonl } => {
            cmd_bench(g, lengths, dims, batches, seeds, warmups, repeats, memory_budget_mib, jsonl)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
