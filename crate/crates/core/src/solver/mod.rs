//! Sliding-window nonlinear least squares over keyframe states, the yaw
//! offset between world and ENU frames, and feature inverse depths.

mod covariance;
mod optimize;
mod window;

pub use covariance::{combine_covariances, normal_inverse, SensorCovariance, SensorSystem};
pub use optimize::{ClassCosts, SolveReport};
pub use window::{ImuLink, Keyframe, MarginalPrior, Observation, SlidingWindow, TrackedFeature};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::FactorError;
use crate::geom::GeomError;
use crate::preint::{ImuNoise, PreintError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("keyframe at {got} s does not follow the last keyframe at {last} s")]
    TimeRegression { last: f64, got: f64 },
    #[error("a pre-integrated IMU segment is required after the first keyframe")]
    MissingPreint,
    #[error("window is empty")]
    EmptyWindow,
    #[error("normal matrix is singular (condition {condition:.3e}); weakest block: {block}")]
    Singular { block: String, condition: f64 },
    #[error("position not observable: {0}")]
    NotObservable(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Preint(#[from] PreintError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

/// Standard deviations of the initial prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSigmas {
    /// m
    pub position: f64,
    /// m/s
    pub velocity: f64,
    /// rad
    pub attitude: f64,
    /// m/s²
    pub accel_bias: f64,
    /// rad/s
    pub gyro_bias: f64,
    /// Receiver clock bias in range units (m).
    pub clock: f64,
    /// Receiver clock drift in range units (m/s).
    pub drift: f64,
    /// Yaw offset (rad).
    pub yaw: f64,
}

impl Default for PriorSigmas {
    fn default() -> Self {
        Self {
            position: 0.5,
            velocity: 0.05,
            attitude: 0.005,
            accel_bias: 0.02,
            gyro_bias: 0.001,
            clock: 1.0,
            drift: 0.1,
            yaw: 0.02,
        }
    }
}

impl PriorSigmas {
    /// Per-dimension sigmas of one keyframe's error state.
    pub fn state_sigmas(&self) -> [f64; crate::state::ERROR_DIM] {
        let mut s = [0.0; crate::state::ERROR_DIM];
        for i in 0..3 {
            s[crate::state::IDX_P + i] = self.position;
            s[crate::state::IDX_V + i] = self.velocity;
            s[crate::state::IDX_TH + i] = self.attitude;
            s[crate::state::IDX_BA + i] = self.accel_bias;
            s[crate::state::IDX_BG + i] = self.gyro_bias;
        }
        for c in 0..crate::state::NUM_CONSTELLATIONS {
            s[crate::state::IDX_CLK + c] = self.clock;
        }
        s[crate::state::IDX_DRIFT] = self.drift;
        s
    }
}

/// Estimator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Maximum number of keyframes.
    pub capacity: usize,
    pub prior: PriorSigmas,
    /// IMU noise model used for pre-integration weighting.
    pub imu_noise: ImuNoise,
    /// Receiver clock random walk (m/√s).
    pub clock_walk: f64,
    /// Receiver clock drift random walk (m/s/√s).
    pub drift_walk: f64,
    /// Acceleration bound used when an IMU factor is replaced by a motion
    /// bridge (m/s²).
    pub bridge_accel: f64,
    /// Angular-rate bound of the motion bridge (rad/s).
    pub bridge_rate: f64,
    /// Bias change, in units of the prior bias sigmas, that triggers
    /// re-integration of a pre-integrated segment.
    pub relinearize: f64,
    pub max_iterations: usize,
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// Minimum ray angle for triangulating a new feature (rad).
    pub min_parallax: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            capacity: 10,
            prior: PriorSigmas::default(),
            imu_noise: ImuNoise::default(),
            clock_walk: 0.1,
            drift_walk: 0.01,
            bridge_accel: 1.0,
            bridge_rate: 0.2,
            relinearize: 0.1,
            max_iterations: 30,
            cost_tolerance: 1e-6,
            step_tolerance: 1e-8,
            initial_damping: 1e-4,
            min_parallax: 1.0f64.to_radians(),
        }
    }
}
