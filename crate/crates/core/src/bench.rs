//! Speed and equivalence grid for untrained GRU cells.
//!
//! Each cell of the grid times the batched DEER evaluation against the
//! batched sequential loop (2 warmups, median of 5) and records the largest
//! output discrepancy. Cells whose `O(n²L)` working set would exceed the
//! memory budget are recorded as skipped instead of being run.

use std::io::{Read, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::DeerConfig;
use crate::error::{DeerError, Result};
use crate::rnn::{deer_eval_rnn_batch, sequential_eval_rnn_batch, GruCell, GruParams};
use crate::scalar::Real;
use crate::types::{InputSequence, StateSequence};

pub const CSV_HEADER: [&str; 8] = ["method", "seq_len", "dims", "batch", "seed", "wall_time_s", "iterations", "max_abs_diff"];

/// Placeholder for values that were not measured.
pub const SKIPPED: &str = "-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Deer,
    Sequential,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Deer => "deer",
            Method::Sequential => "sequential",
        }
    }
}

/// One timed (method, L, n, B, seed) cell. `None` fields are skipped or not
/// applicable (sequential runs have no iteration count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub seq_len: usize,
    pub dims: usize,
    pub batch: usize,
    pub seed: u64,
    pub wall_time_s: Option<f64>,
    pub iterations: Option<usize>,
    pub max_abs_diff: Option<f64>,
}

impl BenchRecord {
    pub fn is_skipped(&self) -> bool {
        self.wall_time_s.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lengths: Vec<usize>,
    pub dims: Vec<usize>,
    pub batches: Vec<usize>,
    pub seeds: Vec<u64>,
    pub warmups: usize,
    pub repeats: usize,
    pub memory_budget_bytes: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lengths: vec![1_000, 10_000, 100_000],
            dims: vec![1, 2, 4, 8],
            batches: vec![2],
            seeds: vec![0],
            warmups: 2,
            repeats: 5,
            memory_budget_bytes: 4 << 30,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("lengths", self.lengths.is_empty()),
            ("dims", self.dims.is_empty()),
            ("batches", self.batches.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(DeerError::Config(format!("benchmark axis `{name}` is empty")));
        }
        if self.lengths.contains(&0) || self.dims.contains(&0) || self.batches.contains(&0) {
            return Err(DeerError::Config("benchmark axes must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(DeerError::Config("at least one timed repeat is required".into()));
        }
        Ok(())
    }
}

/// Working-set estimate for a batched DEER solve: per step the transitions
/// and Jacobians (`2n²`), scan aggregates (`n²`) and a handful of vectors.
pub fn estimate_memory_bytes<T: Real>(seq_len: usize, dims: usize, batch: usize, shifts: usize) -> u64 {
    let per_step = (3 * dims * dims * shifts + 6 * dims) as u64;
    per_step * seq_len as u64 * batch as u64 * std::mem::size_of::<T>() as u64
}

/// Standard normal inputs from a fixed seed.
pub fn gaussian_inputs<T: Real>(len: usize, dim: usize, seed: u64) -> InputSequence<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..len * dim)
        .map(|_| T::of(StandardNormal.sample(&mut rng)))
        .collect();
    InputSequence::from_flat(len, dim, data).expect("finite gaussian samples")
}

/// Elementwise discrepancy summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub max_abs: f64,
    pub mean_abs: f64,
    /// `(step, channel)` of the largest difference.
    pub argmax: Option<(usize, usize)>,
}

pub fn compare_outputs<T: Real>(a: &StateSequence<T>, b: &StateSequence<T>) -> Result<Comparison> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(DeerError::shape(
            "compared sequences",
            format!("{}x{}", a.len(), a.dim()),
            format!("{}x{}", b.len(), b.dim()),
        ));
    }
    let mut max_abs = 0.0;
    let mut sum = 0.0;
    let mut argmax = None;
    for (i, (&x, &y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        let d = (x - y).abs().as_f64();
        sum += d;
        if argmax.is_none() || d > max_abs {
            max_abs = d;
            argmax = Some((i / a.dim(), i % a.dim()));
        }
    }
    let count = a.as_slice().len();
    Ok(Comparison {
        max_abs,
        mean_abs: if count == 0 { 0.0 } else { sum / count as f64 },
        argmax,
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

fn time_median<F: FnMut() -> Result<()>>(warmups: usize, repeats: usize, mut f: F) -> Result<f64> {
    for _ in 0..warmups {
        f()?;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        // keep wall_time strictly positive on coarse clocks
        times.push(start.elapsed().as_secs_f64().max(1e-9));
    }
    Ok(median(times))
}

/// Runs one (L, n, B, seed) cell and returns the DEER and sequential records.
pub fn run_cell<T: Real>(
    seq_len: usize,
    dims: usize,
    batch: usize,
    seed: u64,
    spec: &GridSpec,
    config: &DeerConfig<T>,
) -> Result<[BenchRecord; 2]> {
    let record = |method, wall: Option<f64>, iters: Option<usize>, diff: Option<f64>| BenchRecord {
        method,
        seq_len,
        dims,
        batch,
        seed,
        wall_time_s: wall,
        iterations: iters,
        max_abs_diff: diff,
    };
    if estimate_memory_bytes::<T>(seq_len, dims, batch, 1) > spec.memory_budget_bytes {
        return Ok([record(Method::Deer, None, None, None), record(Method::Sequential, None, None, None)]);
    }
    let cell = GruCell::new(GruParams::<T>::random(dims, dims, seed))?;
    let inputs: Vec<InputSequence<T>> = (0..batch)
        .map(|b| gaussian_inputs(seq_len, dims, seed.wrapping_mul(1_000_003).wrapping_add(b as u64)))
        .collect();
    let y0 = vec![vec![T::zero(); dims]; batch];

    let deer_out = deer_eval_rnn_batch(&cell, &inputs, &y0, config)?;
    if let Some((b, (_, report))) = deer_out.iter().enumerate().find(|(_, (_, r))| !r.converged) {
        return Err(DeerError::Divergence {
            iteration: report.iterations,
            reason: format!("benchmark cell L={seq_len} n={dims} batch element {b} did not converge"),
        });
    }
    let iterations = deer_out.iter().map(|(_, r)| r.iterations).max().unwrap_or(0);
    let seq_out = sequential_eval_rnn_batch(&cell, &inputs, &y0)?;
    let mut diff = 0.0f64;
    for ((d, _), s) in deer_out.iter().zip(&seq_out) {
        diff = diff.max(compare_outputs(d, s)?.max_abs);
    }

    let deer_time = time_median(spec.warmups, spec.repeats, || {
        deer_eval_rnn_batch(&cell, &inputs, &y0, config).map(drop)
    })?;
    let seq_time = time_median(spec.warmups, spec.repeats, || {
        sequential_eval_rnn_batch(&cell, &inputs, &y0).map(drop)
    })?;
    Ok([
        record(Method::Deer, Some(deer_time), Some(iterations), Some(diff)),
        record(Method::Sequential, Some(seq_time), None, Some(0.0)),
    ])
}

/// Every grid cell, strictly one at a time.
pub fn run_grid<T: Real>(spec: &GridSpec, config: &DeerConfig<T>) -> Result<Vec<BenchRecord>> {
    spec.validate()?;
    config.validate()?;
    let mut out = Vec::new();
    for &seq_len in &spec.lengths {
        for &dims in &spec.dims {
            for &batch in &spec.batches {
                for &seed in &spec.seeds {
                    out.extend(run_cell(seq_len, dims, batch, seed, spec, config)?);
                }
            }
        }
    }
    Ok(out)
}

/// Sequential median time divided by DEER median time for a cell.
pub fn speedup(records: &[BenchRecord], seq_len: usize, dims: usize) -> Option<f64> {
    let time = |m: Method| {
        records
            .iter()
            .find(|r| r.method == m && r.seq_len == seq_len && r.dims == dims)
            .and_then(|r| r.wall_time_s)
    };
    Some(time(Method::Sequential)? / time(Method::Deer)?)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt<V>(v: Option<V>, f: impl Fn(V) -> String) -> String {
    v.map(f).unwrap_or_else(|| SKIPPED.to_string())
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| DeerError::Config(format!("writing csv: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.method.as_str().to_string(),
            r.seq_len.to_string(),
            r.dims.to_string(),
            r.batch.to_string(),
            r.seed.to_string(),
            opt(r.wall_time_s, format_f64),
            opt(r.iterations, |i| i.to_string()),
            opt(r.max_abs_diff, format_f64),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| DeerError::Config(format!("writing csv: {e}")))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let bad = |line: usize, what: &str| DeerError::Config(format!("csv line {line}: invalid {what}"));
    let headers = rd.headers().map_err(|e| DeerError::Config(format!("csv header: {e}")))?;
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(DeerError::Config("csv header does not match the benchmark format".into()));
    }
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| DeerError::Config(format!("csv line {line}: {e}")))?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let optional = |k: usize| {
            let s = field(k);
            if s == SKIPPED {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| bad(line, CSV_HEADER[k]))
            }
        };
        let method = match field(0) {
            "deer" => Method::Deer,
            "sequential" => Method::Sequential,
            _ => return Err(bad(line, "method")),
        };
        let int = |k: usize| field(k).parse::<u64>().map_err(|_| bad(line, CSV_HEADER[k]));
        let iterations = match field(6) {
            SKIPPED => None,
            s => Some(s.parse::<usize>().map_err(|_| bad(line, "iterations"))?),
        };
        out.push(BenchRecord {
            method,
            seq_len: int(1)? as usize,
            dims: int(2)? as usize,
            batch: int(3)? as usize,
            seed: int(4)?,
            wall_time_s: optional(5)?,
            iterations,
            max_abs_diff: optional(7)?,
        });
    }
    Ok(out)
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(records: &[BenchRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DeerError::Config(format!("json: {e}")))?;
        writeln!(out, "{line}").map_err(|e| DeerError::Config(format!("writing jsonl: {e}")))?;
    }
    Ok(())
}
