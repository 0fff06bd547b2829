//! Discretized probability axis shared by the parameter searches.

use thiserror::Error;

use crate::model::ModelError;

/// Default grid resolution of the parameter searches.
pub const DEFAULT_STEP: f64 = 0.01;

/// Costs closer than this are treated as ties.
pub(crate) const COST_TIE_TOL: f64 = 1e-12;
/// Slack allowed when comparing an analytic average AoI with its limit.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("grid step {0} not in (0, 1]")]
    InvalidStep(f64),
    #[error("user {user}: no grid point meets average AoI limit {limit} (best achievable {best_aoi})")]
    Infeasible { user: usize, limit: f64, best_aoi: f64 },
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error("user {user}: chain analysis failed: {reason}")]
    Analysis { user: usize, reason: String },
}

/// Points `0, step, 2 step, ...` up to 1, addressed by integer index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityGrid {
    step: f64,
    last: usize,
}

impl ProbabilityGrid {
    pub fn new(step: f64) -> Result<Self, OptimizeError> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(OptimizeError::InvalidStep(step));
        }
        let ratio = 1.0 / step;
        let last = if (ratio - ratio.round()).abs() < 1e-9 {
            ratio.round() as usize
        } else {
            ratio.floor() as usize
        };
        Ok(Self { step, last })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Index of the largest point.
    pub fn last(&self) -> usize {
        self.last
    }

    pub fn len(&self) -> usize {
        self.last + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, idx: usize) -> f64 {
        (idx as f64 * self.step).min(1.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.last).map(|i| self.value(i))
    }
}
