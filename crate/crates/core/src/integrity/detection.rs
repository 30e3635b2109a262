use std::collections::HashMap;

use nalgebra::DVector;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use super::{check_probability, IntegrityError};
use crate::factors::{Label, SensorClass, WhitenedResidual};

/// Whitened residuals of one sensor class concatenated over a window.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedResidual {
    pub class: SensorClass,
    pub values: DVector<f64>,
    /// `(epoch, label)` per component.
    pub labels: Vec<(u64, Label)>,
}

impl StackedResidual {
    pub fn dof(&self) -> usize {
        self.values.len()
    }
}

/// Concatenates the residuals of `class` from the last `m` epochs present in
/// `residuals`, in epoch order.
pub fn stack_window_residuals(residuals: &[WhitenedResidual], class: SensorClass, m: usize) -> StackedResidual {
    let mut epochs: Vec<u64> = residuals.iter().map(|r| r.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let first = epochs.len().saturating_sub(m);
    let keep = &epochs[first..];
    let mut chosen: Vec<&WhitenedResidual> = residuals
        .iter()
        .filter(|r| r.source == class && keep.binary_search(&r.epoch).is_ok())
        .collect();
    chosen.sort_by_key(|r| r.epoch);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for r in chosen {
        values.extend(r.whitened.iter());
        labels.extend(r.labels.iter().map(|l| (r.epoch, *l)));
    }
    StackedResidual {
        class,
        values: DVector::from_vec(values),
        labels,
    }
}

pub fn test_statistic(stacked: &DVector<f64>) -> f64 {
    stacked.norm_squared()
}

/// Central chi-square quantile at `1 − p_fa`.
pub fn chi_square_threshold(dof: usize, p_fa: f64) -> Result<f64, IntegrityError> {
    if dof == 0 {
        return Err(IntegrityError::ZeroDof);
    }
    check_probability("P_FA", p_fa)?;
    let k = dof as f64;
    let tail = |x: f64| gamma_ur(0.5 * k, 0.5 * x);
    let mut hi = k + 10.0 * (2.0 * k).sqrt() + 50.0;
    while tail(hi) > p_fa {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    // bisect on the log tail, which is smooth and monotone
    let target = p_fa.ln();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid).ln() > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(IntegrityError::NoConvergence)
}

/// CDF of the noncentral chi-square distribution as a Poisson mixture of
/// central chi-square CDFs.
pub fn noncentral_chi_square_cdf(x: f64, dof: usize, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof as f64;
    if lambda <= 0.0 {
        return gamma_lr(0.5 * k, 0.5 * x);
    }
    let half = 0.5 * lambda;
    let weight = |j: f64| (-half + j * half.ln() - ln_gamma(j + 1.0)).exp();
    let term = |j: f64| weight(j) * gamma_lr(0.5 * k + j, 0.5 * x);
    let j0 = half.floor();
    let mut sum = term(j0);
    let mut j = j0 + 1.0;
    loop {
        let w = weight(j);
        sum += w * gamma_lr(0.5 * k + j, 0.5 * x);
        if w < 1e-17 && j > half {
            break;
        }
        j += 1.0;
    }
    let mut j = j0 - 1.0;
    while j >= 0.0 {
        let w = weight(j);
        sum += w * gamma_lr(0.5 * k + j, 0.5 * x);
        if w < 1e-17 {
            break;
        }
        j -= 1.0;
    }
    sum.min(1.0)
}

/// Noncentrality at which the windowed test misses detection with
/// probability `p_md`.
pub fn min_detectable_noncentrality(dof: usize, p_fa: f64, p_md: f64) -> Result<f64, IntegrityError> {
    check_probability("P_MD", p_md)?;
    let t = chi_square_threshold(dof, p_fa)?;
    let miss = |lambda: f64| noncentral_chi_square_cdf(t, dof, lambda);
    let mut hi = ((t.sqrt() + 5.0).powi(2)).max(1.0);
    while miss(hi) > p_md {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(IntegrityError::NoConvergence);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if miss(mid) > p_md {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(IntegrityError::NoConvergence)
}

/// Memoized thresholds and minimum detectable noncentralities by dof.
#[derive(Clone, Debug, Default)]
pub struct ThresholdCache {
    entries: HashMap<(usize, u64, u64), (f64, f64)>,
}

impl ThresholdCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// `(threshold, λ_a)` for a window with `dof` components.
    pub fn get(&mut self, dof: usize, p_fa: f64, p_md: f64) -> Result<(f64, f64), IntegrityError> {
        let key = (dof, p_fa.to_bits(), p_md.to_bits());
        if let Some(v) = self.entries.get(&key) {
            return Ok(*v);
        }
        let v = (chi_square_threshold(dof, p_fa)?, min_detectable_noncentrality(dof, p_fa, p_md)?);
        self.entries.insert(key, v);
        Ok(v)
    }
}
