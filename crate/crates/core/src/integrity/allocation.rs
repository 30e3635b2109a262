use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use super::{check_probability, IntegrityError};
use crate::factors::SensorClass;

/// Which sensor classes are faulted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaultMode {
    pub gnss: bool,
    pub imu: bool,
    pub vision: bool,
}

impl FaultMode {
    pub const FAULT_FREE: FaultMode = FaultMode::new(false, false, false);
    pub const GNSS: FaultMode = FaultMode::new(true, false, false);
    pub const IMU: FaultMode = FaultMode::new(false, true, false);
    pub const VISION: FaultMode = FaultMode::new(false, false, true);
    pub const GNSS_IMU: FaultMode = FaultMode::new(true, true, false);
    pub const IMU_VISION: FaultMode = FaultMode::new(false, true, true);

    /// The six modes that receive risk under the default priors, in report
    /// order.
    pub const ALLOCATED: [FaultMode; 6] = [
        FaultMode::FAULT_FREE,
        FaultMode::IMU,
        FaultMode::GNSS,
        FaultMode::VISION,
        FaultMode::GNSS_IMU,
        FaultMode::IMU_VISION,
    ];

    pub const fn new(gnss: bool, imu: bool, vision: bool) -> Self {
        Self { gnss, imu, vision }
    }

    pub fn all() -> [FaultMode; 8] {
        let mut out = [FaultMode::FAULT_FREE; 8];
        for (i, m) in out.iter_mut().enumerate() {
            *m = FaultMode::new(i & 1 != 0, i & 2 != 0, i & 4 != 0);
        }
        out
    }

    pub fn faulted(&self) -> Vec<SensorClass> {
        let mut v = Vec::new();
        if self.gnss {
            v.push(SensorClass::Gnss);
        }
        if self.imu {
            v.push(SensorClass::Imu);
        }
        if self.vision {
            v.push(SensorClass::Vision);
        }
        v
    }

    /// Short tag: `ff`, `G`, `I`, `V`, `GI`, `IV`, ...
    pub fn tag(&self) -> String {
        if *self == FaultMode::FAULT_FREE {
            return "ff".into();
        }
        let mut s = String::new();
        if self.gnss {
            s.push('G');
        }
        if self.imu {
            s.push('I');
        }
        if self.vision {
            s.push('V');
        }
        s
    }

    pub fn from_tag(tag: &str) -> Option<FaultMode> {
        FaultMode::all().into_iter().find(|m| m.tag() == tag)
    }
}

impl fmt::Display for FaultMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Joint prior of every mode from independent per-sensor fault priors.
pub fn fault_mode_priors(p_g: f64, p_i: f64, p_v: f64) -> Result<BTreeMap<FaultMode, f64>, IntegrityError> {
    check_probability("P(G)", p_g)?;
    check_probability("P(I)", p_i)?;
    check_probability("P(V)", p_v)?;
    let f = |faulty: bool, p: f64| if faulty { p } else { 1.0 - p };
    Ok(FaultMode::all()
        .into_iter()
        .map(|m| (m, f(m.gnss, p_g) * f(m.imu, p_i) * f(m.vision, p_v)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetInputs {
    /// Total integrity risk.
    pub p_hmi_total: f64,
    /// Fraction of the total assigned to the horizontal domain.
    pub horizontal_share: f64,
    pub p_gnss: f64,
    pub p_imu: f64,
    pub p_vision: f64,
    /// Modes with a smaller prior receive no allocation.
    pub cutoff: f64,
}

impl Default for BudgetInputs {
    fn default() -> Self {
        Self {
            p_hmi_total: 1e-7,
            horizontal_share: 0.5,
            p_gnss: 1e-5,
            p_imu: 1e-3,
            p_vision: 1e-4,
            cutoff: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeAllocation {
    pub prior: f64,
    /// Allocated integrity risk.
    pub risk: f64,
    /// `P(HMI | mode)`.
    pub conditional: f64,
    pub k_md: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegrityBudget {
    pub total: f64,
    pub horizontal: f64,
    pub vertical: f64,
    pub priors: BTreeMap<FaultMode, f64>,
    pub cutoff: f64,
    pub allocated: BTreeMap<FaultMode, ModeAllocation>,
}

impl IntegrityBudget {
    pub fn k_md(&self, mode: FaultMode) -> Option<f64> {
        self.allocated.get(&mode).map(|a| a.k_md)
    }
}

/// `K` with `P(|z| > K) = p` for a standard normal `z`; 0 when `p ≥ 1`.
pub fn bilateral_quantile(p: f64) -> f64 {
    if p >= 1.0 {
        0.0
    } else {
        std::f64::consts::SQRT_2 * erfc_inv(p)
    }
}

pub fn allocate_integrity_risk(inputs: &BudgetInputs) -> Result<IntegrityBudget, IntegrityError> {
    check_probability("P_HMI", inputs.p_hmi_total)?;
    if !(0.0..=1.0).contains(&inputs.horizontal_share) {
        return Err(IntegrityError::InvalidProbability {
            what: "horizontal share",
            value: inputs.horizontal_share,
        });
    }
    let priors = fault_mode_priors(inputs.p_gnss, inputs.p_imu, inputs.p_vision)?;
    let horizontal = inputs.p_hmi_total * inputs.horizontal_share;
    let kept: Vec<FaultMode> = priors
        .iter()
        .filter(|(_, p)| **p >= inputs.cutoff)
        .map(|(m, _)| *m)
        .collect();
    if kept.is_empty() {
        return Err(IntegrityError::AllModesExcluded);
    }
    let risk = horizontal / kept.len() as f64;
    let allocated = kept
        .into_iter()
        .map(|m| {
            let prior = priors[&m];
            let conditional = risk / prior;
            (
                m,
                ModeAllocation {
                    prior,
                    risk,
                    conditional,
                    k_md: bilateral_quantile(conditional),
                },
            )
        })
        .collect();
    Ok(IntegrityBudget {
        total: inputs.p_hmi_total,
        horizontal,
        vertical: inputs.p_hmi_total - horizontal,
        priors,
        cutoff: inputs.cutoff,
        allocated,
    })
}
