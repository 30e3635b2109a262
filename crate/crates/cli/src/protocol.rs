//! Fault scenarios of the evaluation protocol.

use std::fmt;
use std::str::FromStr;

use givint_core::scenario::{FaultEvent, FaultSensor, FaultTarget};
use givint_core::{FaultMode, SatId, ScenarioConfig};

/// Accelerometer step on every axis (m/s²).
pub const IMU_ACCEL_STEP: f64 = 0.15;
/// Gyroscope step on every axis (rad/s).
pub const IMU_GYRO_STEP: f64 = 0.02;
/// Pseudorange step on one satellite (m).
pub const RANGE_STEP: f64 = 15.0;
/// Pixel step on every feature, both axes (px).
pub const PIXEL_STEP: f64 = 5.0;

pub const FAULTED_SATELLITE: &str = "G05";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    FaultFree,
    Imu,
    Gnss,
    Vision,
    GnssImu,
    ImuVision,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::FaultFree,
        Protocol::Imu,
        Protocol::Gnss,
        Protocol::Vision,
        Protocol::GnssImu,
        Protocol::ImuVision,
    ];

    /// Fault mode whose bound is checked against this scenario.
    pub fn mode(self) -> FaultMode {
        match self {
            Protocol::FaultFree => FaultMode::FAULT_FREE,
            Protocol::Imu => FaultMode::IMU,
            Protocol::Gnss => FaultMode::GNSS,
            Protocol::Vision => FaultMode::VISION,
            Protocol::GnssImu => FaultMode::GNSS_IMU,
            Protocol::ImuVision => FaultMode::IMU_VISION,
        }
    }

    /// Step faults of this scenario over `[start, end)`.
    pub fn faults(self, start: f64, end: f64) -> Vec<FaultEvent> {
        let m = self.mode();
        let mut v = Vec::new();
        let event = |sensor| FaultEvent {
            sensor,
            start,
            end,
            accel: 0.0,
            gyro: 0.0,
            range: 0.0,
            pixel: [0.0; 2],
            target: FaultTarget::All,
        };
        if m.imu {
            v.push(FaultEvent {
                accel: IMU_ACCEL_STEP,
                gyro: IMU_GYRO_STEP,
                ..event(FaultSensor::Imu)
            });
        }
        if m.gnss {
            let sat: SatId = FAULTED_SATELLITE.parse().expect("valid satellite id");
            v.push(FaultEvent {
                range: RANGE_STEP,
                target: FaultTarget::Satellite(sat),
                ..event(FaultSensor::Gnss)
            });
        }
        if m.vision {
            v.push(FaultEvent {
                pixel: [PIXEL_STEP; 2],
                ..event(FaultSensor::Vision)
            });
        }
        v
    }

    /// Default scenario of `duration` seconds with this scenario's faults
    /// over `[start, end)`.
    pub fn scenario(self, seed: u64, duration: f64, start: f64, end: f64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            duration,
            faults: self.faults(start, end),
            ..Default::default()
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.mode().tag())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| format!("unknown protocol '{s}'"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_sets_match_modes() {
        assert!(Protocol::FaultFree.faults(1.0, 2.0).is_empty());
        assert_eq!(Protocol::GnssImu.faults(1.0, 2.0).len(), 2);
        let v = Protocol::Vision.faults(3.0, 4.0);
        assert_eq!(v[0].pixel, [5.0, 5.0]);
        assert_eq!((v[0].start, v[0].end), (3.0, 4.0));
        for p in Protocol::ALL {
            assert_eq!(p.to_string().parse::<Protocol>(), Ok(p));
            assert!(p.scenario(1, 30.0, 10.0, 20.0).validate().is_ok());
        }
    }
}
