//! Fixtures shared by the benchmarks.

use givint_core::{generate_scenario, ImuNoise, ImuSample, Scenario, ScenarioConfig};
use nalgebra::Vector3;

/// One keyframe interval of IMU samples at 200 Hz.
pub fn imu_segment() -> Vec<ImuSample> {
    (0..=200)
        .map(|i| {
            let t = i as f64 / 200.0;
            ImuSample {
                t,
                accel: Vector3::new(0.5 * (0.7 * t).sin(), 0.3 * (1.3 * t).cos(), 9.81),
                gyro: Vector3::new(0.01, -0.02, 0.1 + 0.03 * (1.1 * t).sin()),
            }
        })
        .collect()
}

pub fn noise() -> ImuNoise {
    ImuNoise::default()
}

/// Default scenario of `duration` seconds.
pub fn scenario(duration: f64) -> Scenario {
    generate_scenario(&ScenarioConfig { duration, ..Default::default() }).expect("default scenario is valid")
}
