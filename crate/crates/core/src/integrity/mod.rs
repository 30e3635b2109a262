//! Windowed chi-square fault detection and exclusion, fault-mode risk
//! allocation, and position error bounding.

mod allocation;
mod bounding;
mod detection;
mod fde;

pub use allocation::{
    allocate_integrity_risk, bilateral_quantile, fault_mode_priors, BudgetInputs, FaultMode, IntegrityBudget,
    ModeAllocation,
};
pub use bounding::{
    availability, position_error_bounding, sensitivity_matrix, slopes, summarize, ModeBound, ModeSummary,
    Sensitivity, SlopeAnalysis,
};
pub use detection::{
    chi_square_threshold, min_detectable_noncentrality, noncentral_chi_square_cdf, stack_window_residuals,
    test_statistic, StackedResidual, ThresholdCache,
};
pub use fde::{
    fde, peb_report, window_statistics, ClassStatistic, Exclusion, FdeOutcome, PebReport, SatelliteReadmission,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::SensorClass;
use crate::solver::SolverError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrityError {
    #[error("{what} must lie in (0, 1), got {value}")]
    InvalidProbability { what: &'static str, value: f64 },
    #[error("degrees of freedom must be at least 1")]
    ZeroDof,
    #[error("root finding did not converge")]
    NoConvergence,
    #[error("every fault mode falls below the allocation cutoff")]
    AllModesExcluded,
    #[error("no slope analysis for faulted sensor {0:?}")]
    MissingSlope(SensorClass),
    #[error("weight of residual component {0} is not positive")]
    InvalidWeight(usize),
    #[error("alert limit must be positive")]
    InvalidAlertLimit,
    #[error("empty series")]
    EmptySeries,
    #[error("window length must be at least 1")]
    InvalidWindow,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub(crate) fn check_probability(what: &'static str, value: f64) -> Result<f64, IntegrityError> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(IntegrityError::InvalidProbability { what, value })
    }
}

/// Detection settings. Probabilities are per exposure; with `exposure` set
/// they are read as hourly rates and scaled to that interval (s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Detection window length (epochs).
    pub window: usize,
    pub p_fa: f64,
    pub p_md: f64,
    pub exposure: Option<f64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            window: 10,
            p_fa: 1e-5,
            p_md: 1e-3,
            exposure: None,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), IntegrityError> {
        if self.window == 0 {
            return Err(IntegrityError::InvalidWindow);
        }
        check_probability("P_FA", self.effective_p_fa())?;
        check_probability("P_MD", self.effective_p_md())?;
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.exposure.map_or(1.0, |s| s / 3600.0)
    }

    pub fn effective_p_fa(&self) -> f64 {
        self.p_fa * self.scale()
    }

    pub fn effective_p_md(&self) -> f64 {
        self.p_md * self.scale()
    }
}
