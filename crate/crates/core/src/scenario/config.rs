use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::faults::FaultEvent;
use super::trajectory::Profile;
use super::ScenarioError;
use crate::factors::CameraModel;
use crate::geom::{AnchorGeodesy, Rotation};
use crate::preint::ImuNoise;
use crate::state::Constellation;

/// Everything needed to generate a scenario deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Scenario length (s).
    pub duration: f64,
    /// Keyframe, GNSS and camera rate (Hz).
    pub keyframe_rate: f64,
    /// Generate measurements without noise. Sensor sigmas are kept for
    /// weighting.
    pub noiseless: bool,
    pub trajectory: TrajectoryConfig,
    pub imu: ImuSpec,
    pub gnss: GnssConfig,
    pub camera: CameraConfig,
    pub landmarks: LandmarkConfig,
    pub faults: Vec<FaultEvent>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration: 1200.0,
            keyframe_rate: 1.0,
            noiseless: false,
            trajectory: TrajectoryConfig::default(),
            imu: ImuSpec::default(),
            gnss: GnssConfig::default(),
            camera: CameraConfig::default(),
            landmarks: LandmarkConfig::default(),
            faults: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Config(m.to_string()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.keyframe_rate > 0.0) {
            return bad("keyframe_rate must be positive");
        }
        self.imu.validate()?;
        let ratio = self.imu.rate / self.keyframe_rate;
        if ratio < 10.0 {
            return bad("imu rate must be at least 10x the keyframe rate");
        }
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad("imu rate must be an integer multiple of the keyframe rate");
        }
        let frames = self.duration * self.keyframe_rate;
        if (frames - frames.round()).abs() > 1e-9 {
            return bad("duration must span a whole number of keyframes");
        }
        if !(self.gnss.sigma > 0.0) {
            return bad("pseudorange sigma must be positive");
        }
        if !(self.camera.pixel_sigma > 0.0) {
            return bad("pixel sigma must be positive");
        }
        self.camera.model()?;
        self.gnss.anchor()?;
        if self.landmarks.min_offset > self.landmarks.max_offset || self.landmarks.min_height > self.landmarks.max_height {
            return bad("landmark ranges are inverted");
        }
        for f in &self.faults {
            f.validate()?;
        }
        super::faults::check_overlaps(&self.faults)?;
        Ok(())
    }

    /// Number of keyframe epochs, including the one at time 0.
    pub fn epoch_count(&self) -> usize {
        (self.duration * self.keyframe_rate).round() as usize + 1
    }

    pub fn samples_per_epoch(&self) -> usize {
        (self.imu.rate / self.keyframe_rate).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub profile: Profile,
    /// Nominal speed (m/s).
    pub speed: f64,
    /// Circle radius (m).
    pub radius: f64,
    /// Figure-eight half extents along x and y (m).
    pub extent: [f64; 2],
    /// Height of the body above the world origin (m).
    pub height: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Circle,
            speed: 5.0,
            radius: 50.0,
            extent: [60.0, 40.0],
            height: 1.0,
        }
    }
}

/// IMU error model of the simulated sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSpec {
    /// Sample rate (Hz).
    pub rate: f64,
    /// Accelerometer white-noise density (m/s²/√Hz).
    pub accel_density: f64,
    /// Gyroscope white-noise density (rad/s/√Hz).
    pub gyro_density: f64,
    /// Accelerometer bias random walk assumed by the estimator (m/s³/√Hz).
    pub accel_bias_walk: f64,
    /// Gyroscope bias random walk assumed by the estimator (rad/s²/√Hz).
    pub gyro_bias_walk: f64,
    /// Constant accelerometer bias (m/s²).
    pub accel_bias: [f64; 3],
    /// Constant gyroscope bias (rad/s).
    pub gyro_bias: [f64; 3],
}

impl Default for ImuSpec {
    fn default() -> Self {
        let n = ImuNoise::default();
        Self {
            rate: 200.0,
            accel_density: n.accel_density,
            gyro_density: n.gyro_density,
            accel_bias_walk: n.accel_bias_walk,
            gyro_bias_walk: n.gyro_bias_walk,
            accel_bias: [0.04, -0.03, 0.02],
            gyro_bias: [1.0e-3, -6.0e-4, 8.0e-4],
        }
    }
}

impl ImuSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [self.rate, self.accel_density, self.gyro_density, self.accel_bias_walk, self.gyro_bias_walk];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(ScenarioError::Config("IMU rate and noise densities must be positive".into()));
        }
        Ok(())
    }

    pub fn noise(&self) -> ImuNoise {
        ImuNoise {
            accel_density: self.accel_density,
            gyro_density: self.gyro_density,
            accel_bias_walk: self.accel_bias_walk,
            gyro_bias_walk: self.gyro_bias_walk,
        }
    }

    pub fn accel_bias(&self) -> Vector3<f64> {
        Vector3::from(self.accel_bias)
    }

    pub fn gyro_bias(&self) -> Vector3<f64> {
        Vector3::from(self.gyro_bias)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnssConfig {
    pub anchor_latitude_deg: f64,
    pub anchor_longitude_deg: f64,
    pub anchor_height: f64,
    /// True yaw offset between the world and ENU frames (rad).
    pub yaw_offset: f64,
    /// Pseudorange noise (m).
    pub sigma: f64,
    pub elevation_mask_deg: f64,
    pub min_visible: usize,
    pub constellations: Vec<Constellation>,
    pub satellites_per_constellation: usize,
    /// Receiver clock bias at time 0, G/R/E/C (s).
    pub receiver_clock_bias: [f64; 4],
    /// Receiver clock drift (s/s).
    pub receiver_clock_drift: f64,
    /// Satellite clock offsets are drawn uniformly in ±this (s).
    pub satellite_clock_spread: f64,
    pub tropo: f64,
    pub iono: f64,
    pub multipath: f64,
    pub sagnac: f64,
}

impl Default for GnssConfig {
    fn default() -> Self {
        Self {
            anchor_latitude_deg: 22.3,
            anchor_longitude_deg: 114.2,
            anchor_height: 50.0,
            yaw_offset: 0.35,
            sigma: 1.0,
            elevation_mask_deg: 15.0,
            min_visible: 5,
            constellations: Constellation::ALL.to_vec(),
            satellites_per_constellation: 8,
            receiver_clock_bias: [1.0e-4, 1.3e-4, 0.8e-4, 1.1e-4],
            receiver_clock_drift: 1.0e-8,
            satellite_clock_spread: 1.0e-4,
            tropo: 0.0,
            iono: 0.0,
            multipath: 0.0,
            sagnac: 0.0,
        }
    }
}

impl GnssConfig {
    pub fn anchor(&self) -> Result<AnchorGeodesy, ScenarioError> {
        AnchorGeodesy::from_geodetic(
            self.anchor_latitude_deg.to_radians(),
            self.anchor_longitude_deg.to_radians(),
            self.anchor_height,
        )
        .map_err(|e| ScenarioError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Camera axes in the body frame, row-major `R_c^b`.
    pub camera_to_body: [[f64; 3]; 3],
    /// Camera center in the body frame (m).
    pub center_in_body: [f64; 3],
    pub pixel_sigma: f64,
    /// Frames observing fewer features are flagged.
    pub min_features: usize,
    /// Landmarks farther than this are not observed (m).
    pub max_range: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
            // looking to the right of the direction of travel
            camera_to_body: [[-1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]],
            center_in_body: [0.1, -0.05, 0.2],
            pixel_sigma: 1.0,
            min_features: 8,
            max_range: 60.0,
        }
    }
}

impl CameraConfig {
    pub fn model(&self) -> Result<CameraModel, ScenarioError> {
        let m = Matrix3::from_fn(|r, c| self.camera_to_body[r][c]);
        if (m.transpose() * m - Matrix3::identity()).norm() > 1e-9 || m.determinant() < 0.0 {
            return Err(ScenarioError::Config("camera_to_body is not a rotation".into()));
        }
        CameraModel::from_mount(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            (self.width, self.height),
            Rotation::from_matrix(&m),
            Vector3::from(self.center_in_body),
        )
        .map_err(|e| ScenarioError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandmarkConfig {
    pub count: usize,
    /// Lateral distance band from the path (m).
    pub min_offset: f64,
    pub max_offset: f64,
    /// Height band (m).
    pub min_height: f64,
    pub max_height: f64,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            count: 800,
            min_offset: 8.0,
            max_offset: 25.0,
            min_height: -1.0,
            max_height: 8.0,
        }
    }
}
