use rand_distr::{Distribution, StandardNormal};

use super::config::ImuSpec;
use super::trajectory::TruthTrajectory;
use super::{stream_rng, STREAM_IMU};
use crate::preint::ImuSample;

/// Raw IMU samples: truth plus constant bias plus white noise with standard
/// deviation `density·√rate`.
pub fn synthesize_imu(truth: &TruthTrajectory, spec: &ImuSpec, seed: u64) -> Vec<ImuSample> {
    let mut rng = stream_rng(seed, STREAM_IMU);
    let sa = spec.accel_density * truth.rate.sqrt();
    let sg = spec.gyro_density * truth.rate.sqrt();
    let ba = spec.accel_bias();
    let bg = spec.gyro_bias();
    truth
        .samples
        .iter()
        .map(|s| {
            let mut accel = s.accel + ba;
            let mut gyro = s.gyro + bg;
            for k in 0..3 {
                let na: f64 = StandardNormal.sample(&mut rng);
                let ng: f64 = StandardNormal.sample(&mut rng);
                accel[k] += sa * na;
                gyro[k] += sg * ng;
            }
            ImuSample { t: s.t, accel, gyro }
        })
        .collect()
}
