use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MeasurementEpoch, ScenarioError};
use crate::state::SatId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultSensor {
    Imu,
    Gnss,
    Vision,
}

/// Which measurements of the faulted sensor receive the step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FaultTarget {
    /// All IMU axes, all satellites, or all features.
    #[default]
    All,
    /// One IMU axis (0 = x, 1 = y, 2 = z).
    Axis(usize),
    Satellite(SatId),
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultTarget::All => write!(f, "all"),
            FaultTarget::Axis(a) => write!(f, "{}", ['x', 'y', 'z'][*a]),
            FaultTarget::Satellite(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for FaultTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(FaultTarget::All),
            "x" => Ok(FaultTarget::Axis(0)),
            "y" => Ok(FaultTarget::Axis(1)),
            "z" => Ok(FaultTarget::Axis(2)),
            other => other.parse().map(FaultTarget::Satellite),
        }
    }
}

impl Serialize for FaultTarget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FaultTarget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A step fault active over `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub sensor: FaultSensor,
    pub start: f64,
    pub end: f64,
    /// Accelerometer step per selected axis (m/s²).
    #[serde(default)]
    pub accel: f64,
    /// Gyroscope step per selected axis (rad/s).
    #[serde(default)]
    pub gyro: f64,
    /// Pseudorange step (m).
    #[serde(default)]
    pub range: f64,
    /// Pixel step (u, v) (px).
    #[serde(default)]
    pub pixel: [f64; 2],
    #[serde(default)]
    pub target: FaultTarget,
}

impl FaultEvent {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Fault(m.to_string()));
        if !(self.start.is_finite() && self.end.is_finite() && self.start < self.end) {
            return bad("fault window must satisfy start < end");
        }
        let mags = [self.accel, self.gyro, self.range, self.pixel[0], self.pixel[1]];
        if mags.iter().any(|m| !m.is_finite()) {
            return bad("fault magnitudes must be finite");
        }
        match (self.sensor, self.target) {
            (_, FaultTarget::All) => Ok(()),
            (FaultSensor::Imu, FaultTarget::Axis(a)) if a < 3 => Ok(()),
            (FaultSensor::Gnss, FaultTarget::Satellite(_)) => Ok(()),
            _ => bad("fault target does not match the sensor"),
        }
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

pub(crate) fn check_overlaps(events: &[FaultEvent]) -> Result<(), ScenarioError> {
    for (i, a) in events.iter().enumerate() {
        for b in &events[i + 1..] {
            if a.sensor == b.sensor && a.start < b.end && b.start < a.end {
                return Err(ScenarioError::Fault(format!(
                    "overlapping {:?} faults [{}, {}) and [{}, {})",
                    a.sensor, a.start, a.end, b.start, b.end
                )));
            }
        }
    }
    Ok(())
}

/// Ground-truth fault labels of one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultLabels {
    pub imu: bool,
    pub vision: bool,
    pub gnss: Vec<SatId>,
}

impl FaultLabels {
    pub fn any(&self) -> bool {
        self.imu || self.vision || !self.gnss.is_empty()
    }
}

/// Adds the scheduled steps to the raw measurements and records labels.
/// Truth snapshots are untouched.
pub fn inject_faults(mut epochs: Vec<MeasurementEpoch>, schedule: &[FaultEvent]) -> Result<Vec<MeasurementEpoch>, ScenarioError> {
    for f in schedule {
        f.validate()?;
    }
    check_overlaps(schedule)?;
    for ep in epochs.iter_mut() {
        for f in schedule {
            match f.sensor {
                FaultSensor::Imu => {
                    let axes: Vec<usize> = match f.target {
                        FaultTarget::Axis(a) => vec![a],
                        _ => vec![0, 1, 2],
                    };
                    for s in ep.imu.iter_mut().filter(|s| f.active(s.t)) {
                        for &a in &axes {
                            s.accel[a] += f.accel;
                            s.gyro[a] += f.gyro;
                        }
                        ep.faults.imu = true;
                    }
                }
                FaultSensor::Gnss if f.active(ep.time) => {
                    for o in ep.satellites.iter_mut() {
                        let hit = match f.target {
                            FaultTarget::Satellite(s) => s == o.sat,
                            _ => true,
                        };
                        if hit {
                            o.pseudorange += f.range;
                            ep.faults.gnss.push(o.sat);
                        }
                    }
                }
                FaultSensor::Vision if f.active(ep.time) => {
                    for o in ep.features.iter_mut() {
                        o.pixel.x += f.pixel[0];
                        o.pixel.y += f.pixel[1];
                    }
                    ep.faults.vision = !ep.features.is_empty();
                }
                _ => {}
            }
        }
    }
    Ok(epochs)
}
