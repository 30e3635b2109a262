//! Epoch loop: estimation, fault detection and exclusion, and error bounds
//! over a scenario.

use nalgebra::{Matrix3, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::SensorClass;
use crate::geom::rotation_from_yaw;
use crate::integrity::{
    allocate_integrity_risk, chi_square_threshold, fde, peb_report, summarize, window_statistics, BudgetInputs,
    ClassStatistic, DetectionConfig, Exclusion, FaultMode, IntegrityBudget, IntegrityError, ModeSummary,
    SatelliteReadmission, ThresholdCache,
};
use crate::preint::preintegrate;
use crate::scenario::{stream_rng, FaultLabels, Scenario, STREAM_INIT};
use crate::solver::{SlidingWindow, SolverError, WindowConfig};
use crate::state::{ErrorVector, ImuState, ERROR_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("epoch {epoch}: {source}")]
    Observability { epoch: u64, source: SolverError },
    #[error("epoch {epoch}: {source}")]
    Integrity { epoch: u64, source: IntegrityError },
    #[error("epoch {epoch}: {source}")]
    Solver { epoch: u64, source: SolverError },
}

/// Estimator and integrity settings of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window: WindowConfig,
    pub detection: DetectionConfig,
    pub budget: BudgetInputs,
    /// Horizontal alert limit (m).
    pub alert_limit: f64,
    pub fde: bool,
    /// Start from the truth perturbed by the prior sigmas instead of the
    /// truth itself.
    pub perturb_initial: bool,
    /// Clean epochs before an excluded satellite is used again.
    pub readmit_after: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            detection: DetectionConfig::default(),
            budget: BudgetInputs::default(),
            alert_limit: 6.0,
            fde: true,
            perturb_initial: true,
            readmit_after: 10,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<IntegrityBudget, PipelineError> {
        let bad = |m: String| PipelineError::Config(m);
        if !(self.alert_limit > 0.0) {
            return Err(bad("alert limit must be positive".into()));
        }
        if self.window.capacity < 2 {
            return Err(bad("window capacity must be at least 2".into()));
        }
        if self.detection.window > self.window.capacity {
            return Err(bad("detection window cannot exceed the estimation window".into()));
        }
        self.detection.validate().map_err(|e| bad(e.to_string()))?;
        allocate_integrity_risk(&self.budget).map_err(|e| bad(e.to_string()))
    }
}

/// Horizontal bound of one mode at one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeRecord {
    pub mode: FaultMode,
    pub horizontal: f64,
    pub available: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub index: u64,
    pub time: f64,
    /// True position in local ENU (m).
    pub truth: Vector3<f64>,
    /// Estimated position in local ENU (m).
    pub estimate: Vector3<f64>,
    /// Horizontal position error (m).
    pub hpe: f64,
    /// Normalized position error squared in the world frame.
    pub nees: f64,
    /// Estimated minus true position in the world frame (m).
    pub error_world: Vector3<f64>,
    /// Marginal position covariance of the estimator in the world frame.
    pub covariance: Option<Matrix3<f64>>,
    pub statistics: [ClassStatistic; 3],
    pub exclusions: Vec<Exclusion>,
    pub continuity_alert: bool,
    pub modes: Vec<ModeRecord>,
    pub faults: FaultLabels,
}

impl EpochRecord {
    pub fn mode(&self, mode: FaultMode) -> Option<&ModeRecord> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub records: Vec<EpochRecord>,
    pub budget: IntegrityBudget,
    pub alert_limit: f64,
}

impl RunResult {
    /// Mean error, mean horizontal bound and availability per allocated mode.
    pub fn summary(&self) -> Vec<(FaultMode, ModeSummary)> {
        let hpe: Vec<f64> = self.records.iter().map(|r| r.hpe).collect();
        FaultMode::ALLOCATED
            .iter()
            .filter(|m| self.budget.allocated.contains_key(m))
            .filter_map(|m| {
                let peb: Vec<f64> = self.records.iter().filter_map(|r| r.mode(*m)).map(|b| b.horizontal).collect();
                summarize(&hpe, &peb, self.alert_limit).ok().map(|s| (*m, s))
            })
            .collect()
    }

    pub fn continuity_alert(&self) -> bool {
        self.records.iter().any(|r| r.continuity_alert)
    }
}

/// Truth perturbed by one draw from the prior.
pub fn perturbed_initial(truth: &ImuState, psi: f64, cfg: &WindowConfig, seed: u64) -> (ImuState, f64) {
    let mut rng = stream_rng(seed, STREAM_INIT);
    let sig = cfg.prior.state_sigmas();
    let mut d = ErrorVector::zeros();
    for i in 0..ERROR_DIM {
        d[i] = Normal::new(0.0, sig[i]).map(|n| n.sample(&mut rng)).unwrap_or(0.0);
    }
    let dpsi = Normal::new(0.0, cfg.prior.yaw).map(|n| n.sample(&mut rng)).unwrap_or(0.0);
    (truth.plus(&d), psi + dpsi)
}

fn enu(p: &Vector3<f64>, psi: f64) -> Vector3<f64> {
    rotation_from_yaw(psi).map(|r| r.rotate(p)).unwrap_or(*p)
}

/// Runs the estimator and integrity monitor over every epoch of `scenario`.
pub fn run_pipeline(scenario: &Scenario, cfg: &PipelineConfig) -> Result<RunResult, PipelineError> {
    let budget = cfg.validate()?;
    let first = scenario
        .epochs
        .first()
        .ok_or_else(|| PipelineError::Config("scenario has no epochs".into()))?;
    let mut wcfg = cfg.window;
    wcfg.imu_noise = scenario.config.imu.noise();
    let psi_true = scenario.yaw_offset();
    let (init, psi0) = if cfg.perturb_initial {
        perturbed_initial(&first.truth, psi_true, &wcfg, scenario.config.seed)
    } else {
        (first.truth, psi_true)
    };
    let mut window = SlidingWindow::new(wcfg, scenario.anchor, scenario.camera, init, psi0);
    let mut cache = ThresholdCache::new();
    let gate = chi_square_threshold(1, cfg.detection.effective_p_fa())
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut readmission = SatelliteReadmission::new(cfg.readmit_after, gate);
    let mut records = Vec::with_capacity(scenario.epochs.len());

    for epoch in &scenario.epochs {
        let at = epoch.index;
        let solver = |source: SolverError| match source {
            SolverError::Singular { .. } | SolverError::NotObservable(_) => {
                PipelineError::Observability { epoch: at, source }
            }
            source => PipelineError::Solver { epoch: at, source },
        };
        let integrity = |source: IntegrityError| match source {
            IntegrityError::Solver(s) => solver(s),
            source => PipelineError::Integrity { epoch: at, source },
        };
        let preint = match window.newest() {
            Some(last) => Some(
                preintegrate(&epoch.imu, last.state.accel_bias, last.state.gyro_bias, wcfg.imu_noise)
                    .map_err(|e| solver(e.into()))?,
            ),
            None => None,
        };
        window.add_keyframe(epoch, preint).map_err(solver)?;
        window.optimize().map_err(solver)?;

        let (statistics, exclusions, continuity_alert) = if cfg.fde {
            readmission.update(&mut window).map_err(integrity)?;
            let out = fde(&mut window, &cfg.detection, &mut cache).map_err(integrity)?;
            (out.last, out.exclusions, out.continuity_alert)
        } else {
            let s = window_statistics(&window, &cfg.detection, &mut cache).map_err(integrity)?;
            (s, Vec::new(), false)
        };
        let report = peb_report(&window, &budget, statistics, exclusions, continuity_alert).map_err(integrity)?;

        let newest = window.newest().ok_or_else(|| solver(SolverError::EmptyWindow))?;
        let estimate = enu(&newest.state.position, window.psi);
        let truth = enu(&epoch.truth.position, psi_true);
        let d = estimate - truth;
        let dw = newest.state.position - epoch.truth.position;
        let covariance = window.position_covariance();
        let nees = covariance
            .and_then(|p: Matrix3<f64>| p.try_inverse())
            .map_or(f64::NAN, |inv| dw.dot(&(inv * dw)));
        let modes = report
            .bounds
            .iter()
            .map(|b| ModeRecord {
                mode: b.mode,
                horizontal: b.horizontal,
                available: b.horizontal <= cfg.alert_limit,
            })
            .collect();
        records.push(EpochRecord {
            index: epoch.index,
            time: epoch.time,
            truth,
            estimate,
            hpe: d.x.hypot(d.y),
            nees,
            error_world: dw,
            covariance,
            statistics: report.statistics,
            exclusions: report.exclusions,
            continuity_alert: report.continuity_alert,
            modes,
            faults: epoch.faults.clone(),
        });
    }
    Ok(RunResult {
        records,
        budget,
        alert_limit: cfg.alert_limit,
    })
}

/// Statistic of a class in a record.
pub fn statistic(record: &EpochRecord, class: SensorClass) -> &ClassStatistic {
    &record.statistics[SensorClass::ALL.iter().position(|c| *c == class).unwrap_or(0)]
}
