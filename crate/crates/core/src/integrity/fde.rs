use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, Matrix3};

use super::allocation::{FaultMode, IntegrityBudget};
use super::bounding::{position_error_bounding, slopes, ModeBound, SlopeAnalysis};
use super::detection::{stack_window_residuals, test_statistic, ThresholdCache};
use super::{DetectionConfig, IntegrityError};
use crate::factors::{pseudorange_residual, Label, SensorClass};
use crate::solver::SlidingWindow;
use crate::state::SatId;

/// Windowed test statistic of one sensor class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassStatistic {
    pub class: SensorClass,
    pub value: f64,
    pub dof: usize,
    /// Infinite when the window holds no residuals of the class.
    pub threshold: f64,
    /// Zero when the window holds no residuals of the class.
    pub lambda_a: f64,
}

impl ClassStatistic {
    pub fn exceeded(&self) -> bool {
        self.value > self.threshold
    }
}

/// Statistics of every sensor class over the last `cfg.window` keyframes,
/// in G, I, V order.
pub fn window_statistics(
    window: &SlidingWindow,
    cfg: &DetectionConfig,
    cache: &mut ThresholdCache,
) -> Result<[ClassStatistic; 3], IntegrityError> {
    let residuals = window.windowed_residuals(cfg.window)?;
    let mut out = SensorClass::ALL.map(|class| ClassStatistic {
        class,
        value: 0.0,
        dof: 0,
        threshold: f64::INFINITY,
        lambda_a: 0.0,
    });
    for s in out.iter_mut() {
        let stacked = stack_window_residuals(&residuals, s.class, cfg.window);
        s.dof = stacked.dof();
        s.value = test_statistic(&stacked.values);
        if s.dof > 0 {
            let (t, l) = cache.get(s.dof, cfg.effective_p_fa(), cfg.effective_p_md())?;
            s.threshold = t;
            s.lambda_a = l;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exclusion {
    Satellite(SatId),
    /// Inertial factor ending at the keyframe.
    Imu(u64),
    /// Visual factors of the keyframe.
    Vision(u64),
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exclusion::Satellite(s) => write!(f, "{s}"),
            Exclusion::Imu(k) => write!(f, "imu@{k}"),
            Exclusion::Vision(k) => write!(f, "vis@{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdeOutcome {
    /// Statistics before any exclusion.
    pub initial: [ClassStatistic; 3],
    /// Statistics after the last re-solve.
    pub last: [ClassStatistic; 3],
    pub exclusions: Vec<Exclusion>,
    /// Every satellite of the newest epoch is excluded.
    pub continuity_alert: bool,
}

impl FdeOutcome {
    pub fn detected(&self, class: SensorClass) -> bool {
        self.initial.iter().any(|s| s.class == class && s.exceeded())
    }
}

const MAX_ROUNDS: usize = 40;

fn gnss_active(window: &SlidingWindow) -> bool {
    window
        .newest()
        .is_some_and(|k| k.gnss_excluded.iter().any(|e| !*e))
}

/// Detects with the windowed statistics and excludes the most suspicious
/// measurement of every class that fails, re-solving until all pass or
/// nothing is left to exclude.
pub fn fde(window: &mut SlidingWindow, cfg: &DetectionConfig, cache: &mut ThresholdCache) -> Result<FdeOutcome, IntegrityError> {
    let initial = window_statistics(window, cfg, cache)?;
    let mut last = initial;
    let mut exclusions = Vec::new();
    let mut continuity_alert = !gnss_active(window);
    for _ in 0..MAX_ROUNDS {
        let failing: Vec<SensorClass> = last.iter().filter(|s| s.exceeded()).map(|s| s.class).collect();
        if failing.is_empty() {
            break;
        }
        let residuals = window.windowed_residuals(cfg.window)?;
        let mut changed = false;
        for class in failing {
            let stacked = stack_window_residuals(&residuals, class, cfg.window);
            match class {
                SensorClass::Gnss => {
                    let mut sums: BTreeMap<SatId, f64> = BTreeMap::new();
                    for ((_, label), v) in stacked.labels.iter().zip(stacked.values.iter()) {
                        if let Label::Satellite(s) = label {
                            *sums.entry(*s).or_default() += v * v;
                        }
                    }
                    if let Some((sat, _)) = sums.into_iter().max_by(|a, b| a.1.total_cmp(&b.1)) {
                        window.exclude_satellite(sat);
                        exclusions.push(Exclusion::Satellite(sat));
                        changed = true;
                    }
                    if !gnss_active(window) {
                        continuity_alert = true;
                    }
                }
                SensorClass::Imu | SensorClass::Vision => {
                    let mut sums: BTreeMap<u64, f64> = BTreeMap::new();
                    for ((epoch, _), v) in stacked.labels.iter().zip(stacked.values.iter()) {
                        *sums.entry(*epoch).or_default() += v * v;
                    }
                    if let Some((epoch, _)) = sums.into_iter().max_by(|a, b| a.1.total_cmp(&b.1)) {
                        let done = if class == SensorClass::Imu {
                            window.exclude_imu(epoch)
                        } else {
                            window.exclude_vision(epoch)
                        };
                        if done {
                            exclusions.push(if class == SensorClass::Imu {
                                Exclusion::Imu(epoch)
                            } else {
                                Exclusion::Vision(epoch)
                            });
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
        window.optimize()?;
        last = window_statistics(window, cfg, cache)?;
    }
    Ok(FdeOutcome {
        initial,
        last,
        exclusions,
        continuity_alert,
    })
}

/// Re-admits an excluded satellite after `required` consecutive epochs whose
/// normalized residual at the current solution passes `gate`.
#[derive(Clone, Debug, PartialEq)]
pub struct SatelliteReadmission {
    pub required: usize,
    pub gate: f64,
    clean: BTreeMap<SatId, usize>,
}

impl SatelliteReadmission {
    pub fn new(required: usize, gate: f64) -> Self {
        Self {
            required,
            gate,
            clean: BTreeMap::new(),
        }
    }

    pub fn update(&mut self, window: &mut SlidingWindow) -> Result<Vec<SatId>, IntegrityError> {
        let Some(k) = window.newest() else { return Ok(Vec::new()) };
        let excluded: Vec<SatId> = window.excluded_satellites.iter().copied().collect();
        self.clean.retain(|s, _| excluded.contains(s));
        let mut back = Vec::new();
        for sat in excluded {
            let Some(o) = k.satellites.iter().find(|o| o.sat == sat) else {
                self.clean.insert(sat, 0);
                continue;
            };
            let r = pseudorange_residual(o, &k.state, window.psi, &window.anchor)
                .map_err(crate::solver::SolverError::from)?
                .residual
                / o.sigma;
            let count = self.clean.entry(sat).or_default();
            if r * r <= self.gate {
                *count += 1;
            } else {
                *count = 0;
            }
            if *count >= self.required {
                back.push(sat);
            }
        }
        for sat in &back {
            window.readmit_satellite(*sat);
            self.clean.remove(sat);
        }
        Ok(back)
    }
}

/// Integrity outputs of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct PebReport {
    pub epoch: u64,
    pub time: f64,
    pub statistics: [ClassStatistic; 3],
    pub exclusions: Vec<Exclusion>,
    pub continuity_alert: bool,
    /// ENU position covariance of the newest keyframe.
    pub covariance: Matrix3<f64>,
    pub bounds: Vec<ModeBound>,
    pub slopes: Vec<SlopeAnalysis>,
}

impl PebReport {
    pub fn bound(&self, mode: FaultMode) -> Option<&ModeBound> {
        self.bounds.iter().find(|b| b.mode == mode)
    }
}

/// Position error bounds of every allocated mode at the newest keyframe.
/// A sensor with no usable measurement at that keyframe contributes no
/// slope.
pub fn peb_report(
    window: &SlidingWindow,
    budget: &IntegrityBudget,
    statistics: [ClassStatistic; 3],
    exclusions: Vec<Exclusion>,
    continuity_alert: bool,
) -> Result<PebReport, IntegrityError> {
    let newest = window.newest().ok_or(crate::solver::SolverError::EmptyWindow)?;
    let cov = window.state_covariance()?;
    let systems = window.sensor_systems()?;
    let mut analyses = Vec::with_capacity(3);
    for (sys, stat) in systems.iter().zip(statistics.iter()) {
        let a = match sys {
            Some(s) => {
                let b: DMatrix<f64> = DMatrix::from_fn(3, 3, |r, c| cov.world_to_enu[(r, c)]) * s.sensitivity();
                slopes(stat.class, &b, &s.weight, stat.lambda_a)?
            }
            None => SlopeAnalysis::inactive(stat.class, 3, stat.lambda_a),
        };
        analyses.push(a);
    }
    let mut bounds = Vec::new();
    for mode in FaultMode::all() {
        if budget.allocated.contains_key(&mode) {
            bounds.push(position_error_bounding(mode, &cov.enu, &analyses, budget)?);
        }
    }
    let order = |m: &FaultMode| FaultMode::ALLOCATED.iter().position(|a| a == m).unwrap_or(usize::MAX);
    bounds.sort_by_key(|b| order(&b.mode));
    Ok(PebReport {
        epoch: newest.id,
        time: newest.time,
        statistics,
        exclusions,
        continuity_alert,
        covariance: cov.enu,
        bounds,
        slopes: analyses,
    })
}
