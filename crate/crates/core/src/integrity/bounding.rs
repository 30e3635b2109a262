use nalgebra::{DMatrix, Matrix3};

use super::allocation::{FaultMode, IntegrityBudget};
use super::IntegrityError;
use crate::factors::SensorClass;

/// `B = (JᵀWJ)⁻¹JᵀW`, mapping residual errors to state errors.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivity {
    pub b: DMatrix<f64>,
    /// Set when `JᵀWJ` was too ill-conditioned to invert and the
    /// pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

pub fn sensitivity_matrix(j: &DMatrix<f64>, w: &DMatrix<f64>) -> Sensitivity {
    let jtw = j.transpose() * w;
    let n = &jtw * j;
    let sv = n.clone().svd(false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    let ill = !(min > 0.0) || max / min > 1e12;
    let inv = if ill {
        n.pseudo_inverse(1e-12 * max.max(1e-300)).unwrap_or_else(|_| DMatrix::zeros(j.ncols(), j.ncols()))
    } else {
        n.try_inverse().unwrap_or_else(|| DMatrix::zeros(j.ncols(), j.ncols()))
    };
    Sensitivity {
        b: inv * jtw,
        pseudo_inverse: ill,
    }
}

/// Characteristic slopes of one sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeAnalysis {
    pub class: SensorClass,
    pub b: DMatrix<f64>,
    /// `|b_qm| / √τ_mm`, one row per state axis.
    pub slopes: DMatrix<f64>,
    /// Largest slope per state axis.
    pub max: Vec<f64>,
    /// Minimum detectable noncentrality of the sensor's test.
    pub lambda_a: f64,
}

impl SlopeAnalysis {
    /// Analysis of a sensor that contributes nothing (all measurements
    /// excluded): zero slopes on `axes` axes.
    pub fn inactive(class: SensorClass, axes: usize, lambda_a: f64) -> Self {
        Self {
            class,
            b: DMatrix::zeros(axes, 0),
            slopes: DMatrix::zeros(axes, 0),
            max: vec![0.0; axes],
            lambda_a,
        }
    }
}

pub fn slopes(class: SensorClass, b: &DMatrix<f64>, tau: &DMatrix<f64>, lambda_a: f64) -> Result<SlopeAnalysis, IntegrityError> {
    let m = b.ncols();
    let mut s = DMatrix::zeros(b.nrows(), m);
    for c in 0..m {
        let t = tau[(c, c)];
        if !(t > 0.0) {
            return Err(IntegrityError::InvalidWeight(c));
        }
        let k = 1.0 / t.sqrt();
        for q in 0..b.nrows() {
            s[(q, c)] = b[(q, c)].abs() * k;
        }
    }
    let max = (0..b.nrows())
        .map(|q| s.row(q).iter().copied().fold(0.0, f64::max))
        .collect();
    Ok(SlopeAnalysis {
        class,
        b: b.clone(),
        slopes: s,
        max,
        lambda_a,
    })
}

/// Per-axis (E, N, U) and horizontal bound of one fault mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeBound {
    pub mode: FaultMode,
    pub axes: [f64; 3],
    pub horizontal: f64,
}

/// `PEB_q = K_md ξ_q + Σ_s max_m Slope_mq,s √λ_a,s` over the faulted sensors
/// of `mode`; `p` is the ENU position covariance and slope rows are E, N, U.
pub fn position_error_bounding(
    mode: FaultMode,
    p: &Matrix3<f64>,
    analyses: &[SlopeAnalysis],
    budget: &IntegrityBudget,
) -> Result<ModeBound, IntegrityError> {
    let k = budget.k_md(mode).ok_or(IntegrityError::AllModesExcluded)?;
    let mut axes = [0.0; 3];
    for (q, a) in axes.iter_mut().enumerate() {
        *a = k * p[(q, q)].max(0.0).sqrt();
    }
    for class in mode.faulted() {
        let s = analyses
            .iter()
            .find(|s| s.class == class)
            .ok_or(IntegrityError::MissingSlope(class))?;
        for (q, a) in axes.iter_mut().enumerate() {
            *a += s.max.get(q).copied().unwrap_or(0.0) * s.lambda_a.sqrt();
        }
    }
    Ok(ModeBound {
        mode,
        axes,
        horizontal: axes[0].hypot(axes[1]),
    })
}

/// Percentage of epochs whose horizontal bound is within `al`.
pub fn availability(pebs: &[f64], al: f64) -> Result<f64, IntegrityError> {
    if !(al > 0.0) {
        return Err(IntegrityError::InvalidAlertLimit);
    }
    if pebs.is_empty() {
        return Err(IntegrityError::EmptySeries);
    }
    let ok = pebs.iter().filter(|p| **p <= al).count();
    Ok(100.0 * ok as f64 / pebs.len() as f64)
}

/// One row of the results table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeSummary {
    pub mean_error: f64,
    pub mean_peb: f64,
    pub availability: f64,
}

pub fn summarize(errors: &[f64], pebs: &[f64], al: f64) -> Result<ModeSummary, IntegrityError> {
    if errors.is_empty() || errors.len() != pebs.len() {
        return Err(IntegrityError::EmptySeries);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ModeSummary {
        mean_error: mean(errors),
        mean_peb: mean(pebs),
        availability: availability(pebs, al)?,
    })
}
