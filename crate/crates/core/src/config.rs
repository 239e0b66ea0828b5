//! Solver configuration and per-solve diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{DeerError, Result};
use crate::pscan::ScanConfig;
use crate::scalar::{Precision, Real};
use crate::types::StateSequence;

/// Starting iterate of the fixed-point loop.
#[derive(Debug, Clone, PartialEq)]
pub enum InitGuess<T> {
    Zeros,
    Sequence(StateSequence<T>),
}

/// How the iterate deviation is compared with the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvergenceMetric {
    /// `max |y⁽ᵏ⁺¹⁾ − y⁽ᵏ⁾| ≤ tol`
    #[default]
    Absolute,
    /// `max |y⁽ᵏ⁺¹⁾ − y⁽ᵏ⁾| ≤ tol · max(1, max |y⁽ᵏ⁺¹⁾|)`
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeerConfig<T> {
    pub tolerance: f64,
    pub max_iters: usize,
    pub init_guess: InitGuess<T>,
    pub precision: Precision,
    pub metric: ConvergenceMetric,
    /// Residual growth (relative to the first residual) treated as divergence.
    pub divergence_factor: f64,
    pub scan: ScanConfig,
}

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 1e6;

impl<T: Real> Default for DeerConfig<T> {
    fn default() -> Self {
        DeerConfig {
            tolerance: T::PRECISION.default_tolerance(),
            max_iters: DEFAULT_MAX_ITERS,
            init_guess: InitGuess::Zeros,
            precision: T::PRECISION,
            metric: ConvergenceMetric::Absolute,
            divergence_factor: DEFAULT_DIVERGENCE_FACTOR,
            scan: ScanConfig::default(),
        }
    }
}

impl<T: Real> DeerConfig<T> {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_init(mut self, init: StateSequence<T>) -> Self {
        self.init_guess = InitGuess::Sequence(init);
        self
    }

    pub fn with_scan(mut self, scan: ScanConfig) -> Self {
        self.scan = scan;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(DeerError::Config(format!(
                "tolerance must be positive and finite, got {}",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(DeerError::Config("max_iters must be at least 1".into()));
        }
        if self.precision != T::PRECISION {
            return Err(DeerError::Config(format!(
                "config precision {} does not match the {} solve",
                self.precision,
                T::PRECISION
            )));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(DeerError::Config(format!(
                "divergence factor must exceed 1, got {}",
                self.divergence_factor
            )));
        }
        self.scan.validate()
    }
}

/// Diagnostics of one fixed-point solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeerReport {
    pub iterations: usize,
    /// Max-abs deviation between successive iterates, one per iteration.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
}

impl DeerReport {
    pub fn final_residual(&self) -> Option<f64> {
        self.residual_history.last().copied()
    }

    /// Whether this residual trace reaches `tolerance` (absolute metric).
    pub fn converges_within(&self, tolerance: f64) -> bool {
        self.residual_history.iter().any(|&r| r <= tolerance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_follow_precision() {
        let c32 = DeerConfig::<f32>::default();
        let c64 = DeerConfig::<f64>::default();
        assert_eq!(c32.tolerance, 1e-4);
        assert_eq!(c64.tolerance, 1e-7);
        assert_eq!(c64.max_iters, 100);
        assert!(c32.validate().is_ok() && c64.validate().is_ok());
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(DeerConfig::<f64>::default().with_tolerance(-1.0).validate().is_err());
        assert!(DeerConfig::<f64>::default().with_tolerance(0.0).validate().is_err());
        assert!(DeerConfig::<f64>::default().with_max_iters(0).validate().is_err());
        let mut c = DeerConfig::<f64>::default();
        c.precision = Precision::F32;
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn loosening_tolerance_keeps_convergence(
            trace in proptest::collection::vec(1e-12f64..1.0, 1..20),
            tol in 1e-12f64..1.0,
            factor in 1.0f64..1e3,
        ) {
            let report = DeerReport {
                iterations: trace.len(),
                converged: trace.iter().any(|&r| r <= tol),
                residual_history: trace,
                wall_time: 0.0,
            };
            if report.converges_within(tol) {
                prop_assert!(report.converges_within(tol * factor));
            }
        }
    }
}
