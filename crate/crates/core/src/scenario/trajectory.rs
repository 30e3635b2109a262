use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::config::TrajectoryConfig;
use super::ScenarioError;
use crate::geom::{wrap_angle, Rotation};
use crate::state::gravity;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Circle,
    FigureEight,
    Straight,
}

impl FromStr for Profile {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "circle" => Ok(Profile::Circle),
            "figure-eight" => Ok(Profile::FigureEight),
            "straight" => Ok(Profile::Straight),
            other => Err(ScenarioError::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Rotation,
    /// Body angular rate (rad/s).
    pub gyro: Vector3<f64>,
    /// Body specific force (m/s²).
    pub accel: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthTrajectory {
    pub rate: f64,
    pub samples: Vec<TruthSample>,
}

/// Position, velocity, acceleration at time `t`.
fn kinematics(cfg: &TrajectoryConfig, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let h = cfg.height;
    match cfg.profile {
        Profile::Circle => {
            let r = cfg.radius;
            let w = cfg.speed / r;
            let (s, c) = (w * t).sin_cos();
            (
                Vector3::new(r * s, r * (1.0 - c), h),
                Vector3::new(r * w * c, r * w * s, 0.0),
                Vector3::new(-r * w * w * s, r * w * w * c, 0.0),
            )
        }
        Profile::FigureEight => {
            let [a, b] = cfg.extent;
            // arc length of one lap is close to the ellipse-like perimeter
            let lap = std::f64::consts::PI * (1.5 * (a + b) - (a * b).sqrt()) * 1.3;
            let w = 2.0 * std::f64::consts::PI * cfg.speed / lap;
            let (s, c) = (w * t).sin_cos();
            let (s2, c2) = (2.0 * w * t).sin_cos();
            (
                Vector3::new(a * s, 0.5 * b * s2, h),
                Vector3::new(a * w * c, b * w * c2, 0.0),
                Vector3::new(-a * w * w * s, -2.0 * b * w * w * s2, 0.0),
            )
        }
        Profile::Straight => (
            Vector3::new(cfg.speed * t, 0.0, h),
            Vector3::new(cfg.speed, 0.0, 0.0),
            Vector3::zeros(),
        ),
    }
}

fn heading_and_rate(v: &Vector3<f64>, a: &Vector3<f64>) -> (f64, f64) {
    let s2 = v.x * v.x + v.y * v.y;
    if s2 < 1e-12 {
        return (0.0, 0.0);
    }
    (v.y.atan2(v.x), (v.x * a.y - v.y * a.x) / s2)
}

/// Level, heading-aligned analytic motion sampled at `rate`. The body
/// states are propagated from the analytic IMU signals with the same midpoint
/// rule used by pre-integration, so noiseless measurements are exactly
/// consistent with the stored states.
pub fn generate_trajectory(cfg: &TrajectoryConfig, duration: f64, rate: f64) -> Result<TruthTrajectory, ScenarioError> {
    if !(duration > 0.0 && rate > 0.0) {
        return Err(ScenarioError::Config("duration and rate must be positive".into()));
    }
    let n = (duration * rate).round() as usize;
    let g = gravity();
    let signals: Vec<(f64, Vector3<f64>, Vector3<f64>, f64)> = (0..=n)
        .map(|i| {
            let t = i as f64 / rate;
            let (_, v, a) = kinematics(cfg, t);
            let (yaw, yaw_rate) = heading_and_rate(&v, &a);
            let r = Rotation::exp(&Vector3::new(0.0, 0.0, yaw));
            let f = r.inverse().rotate(&(a - g));
            (t, Vector3::new(0.0, 0.0, yaw_rate), f, yaw)
        })
        .collect();

    let (p0, v0, _) = kinematics(cfg, 0.0);
    let mut samples = Vec::with_capacity(n + 1);
    let mut p = p0;
    let mut v = v0;
    let mut q = Rotation::exp(&Vector3::new(0.0, 0.0, wrap_angle(signals[0].3)));
    samples.push(TruthSample {
        t: 0.0,
        position: p,
        velocity: v,
        attitude: q,
        gyro: signals[0].1,
        accel: signals[0].2,
    });
    for w in signals.windows(2) {
        let (t0, g0, f0, _) = w[0];
        let (t1, g1, f1, _) = w[1];
        let dt = t1 - t0;
        let q1 = q.compose(&Rotation::exp(&(0.5 * (g0 + g1) * dt)));
        let a_mid = 0.5 * (q.rotate(&f0) + q1.rotate(&f1)) + g;
        p += v * dt + 0.5 * a_mid * dt * dt;
        v += a_mid * dt;
        q = q1;
        samples.push(TruthSample {
            t: t1,
            position: p,
            velocity: v,
            attitude: q,
            gyro: g1,
            accel: f1,
        });
    }
    Ok(TruthTrajectory { rate, samples })
}
