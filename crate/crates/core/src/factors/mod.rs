//! Measurement factors: visual reprojection, pseudorange, and the whitening
//! shared with fault detection.

mod camera;
mod pseudorange;
mod whiten;

pub use camera::{project, project_camera_point, visual_residual, CameraModel, FeatureParam, VisualEval};
pub use pseudorange::{pseudorange_residual, receiver_ecef, PseudorangeEval, SatelliteObservation, PR_JAC_DIM};
pub use whiten::{decorrelate, whiten, Label, SensorClass, WhitenedResidual};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("point behind the camera (depth {0:.3} m)")]
    BehindCamera(f64),
    #[error("invalid camera model: {0}")]
    InvalidCamera(&'static str),
    #[error("sigma must be positive and finite (component {0})")]
    InvalidSigma(usize),
    #[error("residual has {raw} components but {other} {what}")]
    LengthMismatch {
        raw: usize,
        other: usize,
        what: &'static str,
    },
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
}
