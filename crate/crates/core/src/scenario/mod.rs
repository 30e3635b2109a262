//! Synthetic ground truth, sensor measurements and fault injection.

pub mod config;
mod dump;
mod faults;
mod gnss;
mod imu;
mod trajectory;
mod vision;

pub use config::{CameraConfig, GnssConfig, ImuSpec, LandmarkConfig, ScenarioConfig, TrajectoryConfig};
pub use dump::{read_dump, write_dump, DUMP_SCHEMA, DUMP_VERSION};
pub use faults::{inject_faults, FaultEvent, FaultLabels, FaultSensor, FaultTarget};
pub use gnss::{elevation, pdop, place_satellites, satellite_at, synthesize_pseudoranges, Satellite};
pub use imu::synthesize_imu;
pub use trajectory::{generate_trajectory, Profile, TruthSample, TruthTrajectory};
pub use vision::{generate_landmarks, synthesize_features, FeatureObservation, FeatureTrack, Landmark};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::{CameraModel, SatelliteObservation};
use crate::geom::AnchorGeodesy;
use crate::preint::ImuSample;
use crate::state::ImuState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("unknown trajectory profile '{0}'")]
    UnknownProfile(String),
    #[error("only {visible} satellites visible, {required} required")]
    TooFewSatellites { visible: usize, required: usize },
    #[error("invalid fault schedule: {0}")]
    Fault(String),
    #[error("scenario dump: {0}")]
    Schema(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub(crate) const STREAM_IMU: u64 = 1;
pub(crate) const STREAM_GNSS: u64 = 2;
pub(crate) const STREAM_VISION: u64 = 3;
pub(crate) const STREAM_LANDMARKS: u64 = 4;
pub(crate) const STREAM_SATELLITES: u64 = 5;
pub(crate) const STREAM_INIT: u64 = 6;

/// Independent random stream per consumer so that changing one sensor's
/// configuration leaves the others' draws untouched.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Measurements of one keyframe epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEpoch {
    pub index: u64,
    /// Time (s).
    pub time: f64,
    pub satellites: Vec<SatelliteObservation>,
    pub features: Vec<FeatureObservation>,
    /// Raw IMU samples from the previous epoch to this one, both inclusive.
    /// The first epoch carries a single sample.
    pub imu: Vec<ImuSample>,
    /// True state, for evaluation only.
    pub truth: ImuState,
    #[serde(default)]
    pub faults: FaultLabels,
}

/// A generated (or replayed) scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub anchor: AnchorGeodesy,
    pub camera: CameraModel,
    /// Epochs with the fault schedule applied.
    pub epochs: Vec<MeasurementEpoch>,
    /// Epochs before fault injection.
    pub clean: Vec<MeasurementEpoch>,
    /// Empty when the scenario was replayed from a dump.
    pub tracks: Vec<FeatureTrack>,
    /// Epoch indices observing fewer than the configured feature floor.
    pub sparse_frames: Vec<usize>,
}

impl Scenario {
    /// Rebuilds a scenario from its config and clean epochs, re-applying the
    /// config's fault schedule.
    pub fn from_clean(config: ScenarioConfig, clean: Vec<MeasurementEpoch>) -> Result<Self, ScenarioError> {
        config.validate()?;
        check_schedule_span(&config)?;
        let anchor = config.gnss.anchor()?;
        let camera = config.camera.model()?;
        let epochs = inject_faults(clean.clone(), &config.faults)?;
        let sparse_frames = clean
            .iter()
            .enumerate()
            .filter(|(_, e)| e.features.len() < config.camera.min_features)
            .map(|(k, _)| k)
            .collect();
        Ok(Self {
            config,
            anchor,
            camera,
            epochs,
            clean,
            tracks: Vec::new(),
            sparse_frames,
        })
    }

    pub fn yaw_offset(&self) -> f64 {
        self.config.gnss.yaw_offset
    }
}

fn check_schedule_span(cfg: &ScenarioConfig) -> Result<(), ScenarioError> {
    for f in &cfg.faults {
        if f.start < 0.0 || f.start >= cfg.duration {
            return Err(ScenarioError::Fault(format!(
                "fault starting at {} s lies outside the scenario",
                f.start
            )));
        }
    }
    Ok(())
}

/// Generates truth, measurements and faults from a config.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    cfg.validate()?;
    check_schedule_span(cfg)?;
    let anchor = cfg.gnss.anchor()?;
    let camera = cfg.camera.model()?;
    let seed = cfg.seed;

    let truth = generate_trajectory(&cfg.trajectory, cfg.duration, cfg.imu.rate)?;
    let mut imu_spec = cfg.imu.clone();
    if cfg.noiseless {
        imu_spec.accel_density = 0.0;
        imu_spec.gyro_density = 0.0;
    }
    let samples = synthesize_imu(&truth, &imu_spec, seed);

    let m = cfg.samples_per_epoch();
    let n = cfg.epoch_count();
    let states: Vec<ImuState> = (0..n)
        .map(|k| {
            let s = &truth.samples[k * m];
            let mut clock_bias = cfg.gnss.receiver_clock_bias;
            for c in clock_bias.iter_mut() {
                *c += cfg.gnss.receiver_clock_drift * s.t;
            }
            ImuState {
                position: s.position,
                velocity: s.velocity,
                attitude: s.attitude,
                accel_bias: cfg.imu.accel_bias(),
                gyro_bias: cfg.imu.gyro_bias(),
                clock_bias,
                clock_drift: cfg.gnss.receiver_clock_drift,
            }
        })
        .collect();

    let sats = place_satellites(&cfg.gnss, &anchor, seed)?;
    let ranges = synthesize_pseudoranges(&states, &sats, &cfg.gnss, &anchor, seed, cfg.noiseless)?;
    let landmarks = generate_landmarks(&states, &cfg.landmarks, seed);
    let (frames, tracks, sparse_frames) = synthesize_features(&states, &landmarks, &camera, &cfg.camera, seed, cfg.noiseless);

    let clean: Vec<MeasurementEpoch> = states
        .iter()
        .zip(ranges)
        .zip(frames)
        .enumerate()
        .map(|(k, ((s, satellites), features))| {
            let imu = if k == 0 {
                samples[..1].to_vec()
            } else {
                samples[(k - 1) * m..=k * m].to_vec()
            };
            MeasurementEpoch {
                index: k as u64,
                time: truth.samples[k * m].t,
                satellites,
                features,
                imu,
                truth: *s,
                faults: FaultLabels::default(),
            }
        })
        .collect();
    let epochs = inject_faults(clean.clone(), &cfg.faults)?;
    Ok(Scenario {
        config: cfg.clone(),
        anchor,
        camera,
        epochs,
        clean,
        tracks,
        sparse_frames,
    })
}
