//! Run configuration files.
//!
//! The native format is one `key = value` pair per line. `#` starts a
//! comment, blank lines are ignored and list values are comma separated:
//!
//! ```text
//! problem = van-der-pol
//! mu = 1.0
//! y0 = 2.0, 0.0
//! t_end = 10
//! steps = 5000
//! ```
//!
//! A JSON object with the same keys is accepted as well (detected by a
//! `.json` extension or a leading `{`).

use std::fmt;
use std::path::{Path, PathBuf};

use deer::problems::Builtin;
use deer::{Interpolation, Precision};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: Option<usize>, message: impl Into<String>) -> Self {
        ConfigError { line, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

const MAX_DIM: usize = 1024;
const MAX_ITERS: usize = 1_000_000;

const KEYS: [&str; 16] = [
    "problem",
    "rate",
    "mu",
    "y0",
    "t_start",
    "t_end",
    "steps",
    "state_dim",
    "input_dim",
    "seed",
    "tolerance",
    "max_iters",
    "chunk_size",
    "precision",
    "interpolation",
    "output",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: Builtin,
    /// Growth rate (logistic) or decay rate (linear).
    pub rate: f64,
    pub mu: f64,
    pub y0: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
    /// Grid steps for ODEs, sequence length for the GRU.
    pub steps: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub seed: u64,
    /// `None` picks the precision's default.
    pub tolerance: Option<f64>,
    pub max_iters: usize,
    pub chunk_size: usize,
    pub precision: Precision,
    pub interpolation: Interpolation,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(problem: Builtin) -> Self {
        let y0 = match problem {
            Builtin::Logistic => vec![0.1],
            Builtin::VanDerPol => vec![2.0, 0.0],
            Builtin::Linear => vec![1.0],
            Builtin::Gru => vec![0.0; 4],
        };
        RunConfig {
            problem,
            rate: 1.0,
            mu: 1.0,
            y0,
            t_start: 0.0,
            t_end: if problem == Builtin::VanDerPol { 10.0 } else { 5.0 },
            steps: 1000,
            state_dim: 4,
            input_dim: 4,
            seed: 0,
            tolerance: None,
            max_iters: deer::config::DEFAULT_MAX_ITERS,
            chunk_size: deer::pscan::DEFAULT_CHUNK_SIZE,
            precision: Precision::F64,
            interpolation: Interpolation::Midpoint,
            output: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at(None, format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json)
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, ConfigError> {
        let entries = if json || text.trim_start().starts_with('{') { json_entries(text)? } else { kv_entries(text)? };
        Self::from_entries(&entries)
    }

    fn from_entries(entries: &[Entry]) -> Result<Self, ConfigError> {
        for (i, e) in entries.iter().enumerate() {
            if !KEYS.contains(&e.key.as_str()) {
                return Err(ConfigError::at(e.line, format!("unknown key `{}`", e.key)));
            }
            if let Some(first) = entries[..i].iter().find(|p| p.key == e.key) {
                let prev = first.line.map_or(String::new(), |l| format!(" (first set on line {l})"));
                return Err(ConfigError::at(e.line, format!("duplicate key `{}`{prev}", e.key)));
            }
        }
        let problem_entry = entries
            .iter()
            .find(|e| e.key == "problem")
            .ok_or_else(|| ConfigError::at(None, "missing required key `problem`"))?;
        let problem: Builtin = problem_entry.value.parse().map_err(|e| ConfigError::at(problem_entry.line, format!("{e}")))?;

        let mut cfg = RunConfig::defaults(problem);
        let mut y0_line = None;
        let mut y0_set = false;
        for e in entries {
            let at = |msg: String| ConfigError::at(e.line, msg);
            match e.key.as_str() {
                "problem" => {}
                "rate" => cfg.rate = e.number()?,
                "mu" => cfg.mu = e.number()?,
                "y0" => {
                    cfg.y0 = e.numbers()?;
                    y0_line = e.line;
                    y0_set = true;
                }
                "t_start" => cfg.t_start = e.number()?,
                "t_end" => cfg.t_end = e.number()?,
                "steps" => cfg.steps = e.count()?,
                "state_dim" => cfg.state_dim = e.count()?,
                "input_dim" => cfg.input_dim = e.count()?,
                "seed" => cfg.seed = e.value.parse().map_err(|_| at(format!("`seed` must be a non-negative integer, got `{}`", e.value)))?,
                "tolerance" => {
                    let tol = e.number()?;
                    if tol <= 0.0 {
                        return Err(at(format!("tolerance must be positive, got {tol}")));
                    }
                    cfg.tolerance = Some(tol);
                }
                "max_iters" => {
                    cfg.max_iters = e.count()?;
                    if cfg.max_iters == 0 || cfg.max_iters > MAX_ITERS {
                        return Err(at(format!("max_iters must be in 1..={MAX_ITERS}")));
                    }
                }
                "chunk_size" => {
                    cfg.chunk_size = e.count()?;
                    if cfg.chunk_size == 0 {
                        return Err(at("chunk_size must be at least 1".into()));
                    }
                }
                "precision" => cfg.precision = e.value.parse().map_err(at)?,
                "interpolation" => cfg.interpolation = e.value.parse().map_err(|err| at(format!("{err}")))?,
                "output" => cfg.output = Some(PathBuf::from(&e.value)),
                _ => unreachable!(),
            }
        }
        if problem == Builtin::Gru && !y0_set {
            cfg.y0 = vec![0.0; cfg.state_dim];
        }
        cfg.check_ranges(entries, y0_line)?;
        Ok(cfg)
    }

    fn check_ranges(&self, entries: &[Entry], y0_line: Option<usize>) -> Result<(), ConfigError> {
        let line = |key: &str| entries.iter().find(|e| e.key == key).and_then(|e| e.line);
        if self.steps == 0 {
            return Err(ConfigError::at(line("steps"), "steps must be at least 1"));
        }
        if self.problem == Builtin::Gru {
            if self.state_dim == 0 || self.state_dim > MAX_DIM {
                return Err(ConfigError::at(line("state_dim"), format!("state_dim must be in 1..={MAX_DIM}")));
            }
            if self.input_dim > MAX_DIM {
                return Err(ConfigError::at(line("input_dim"), format!("input_dim must be at most {MAX_DIM}")));
            }
        } else if self.t_end <= self.t_start {
            return Err(ConfigError::at(line("t_end"), "t_end must be greater than t_start"));
        }
        if self.problem == Builtin::VanDerPol && self.mu < 0.0 {
            return Err(ConfigError::at(line("mu"), "mu must be non-negative"));
        }
        let dim = match self.problem {
            Builtin::VanDerPol => 2,
            Builtin::Gru => self.state_dim,
            _ => 1,
        };
        if self.y0.len() != dim {
            return Err(ConfigError::at(
                y0_line,
                format!("y0 has {} values but `{}` has state dimension {dim}", self.y0.len(), self.problem),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: Option<usize>,
}

impl Entry {
    fn number(&self) -> Result<f64, ConfigError> {
        match self.value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(ConfigError::at(self.line, format!("`{}` must be a finite number, got `{}`", self.key, self.value))),
        }
    }

    fn numbers(&self) -> Result<Vec<f64>, ConfigError> {
        self.value
            .split(',')
            .map(|s| match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(ConfigError::at(self.line, format!("`{}` entry `{}` is not a finite number", self.key, s.trim()))),
            })
            .collect()
    }

    fn count(&self) -> Result<usize, ConfigError> {
        self.value
            .parse()
            .map_err(|_| ConfigError::at(self.line, format!("`{}` must be a non-negative integer, got `{}`", self.key, self.value)))
    }
}

fn kv_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::at(Some(i + 1), format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::at(Some(i + 1), "missing key before `=`"));
        }
        out.push(Entry { key: key.to_string(), value: value.trim().to_string(), line: Some(i + 1) });
    }
    Ok(out)
}

fn json_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ConfigError::at(Some(e.line()), format!("invalid JSON: {e}")))?;
    let map = value.as_object().ok_or_else(|| ConfigError::at(Some(1), "expected a JSON object"))?;
    // serde_json keeps no spans, so key lines come from a textual search
    let line_of = |key: &str| {
        let quoted = format!("\"{key}\"");
        text.lines().position(|l| l.contains(&quoted)).map(|p| p + 1)
    };
    map.iter()
        .map(|(k, v)| {
            let value = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Array(items) => {
                    items.iter().map(|x| x.as_str().map_or_else(|| x.to_string(), str::to_string)).collect::<Vec<_>>().join(",")
                }
                other => {
                    return Err(ConfigError::at(line_of(k), format!("`{k}` has unsupported value {other}")));
                }
            };
            Ok(Entry { key: k.clone(), value, line: line_of(k) })
        })
        .collect()
}
