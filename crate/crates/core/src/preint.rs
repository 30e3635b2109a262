//! IMU pre-integration between consecutive keyframes.
//!
//! The deltas `α` (position), `β` (velocity) and `γ` (rotation) are expressed
//! in the body frame of the first keyframe and integrated with the midpoint
//! rule. Covariance and bias Jacobians are propagated with the exact
//! linearization of the discrete midpoint map, so first-order bias
//! correction agrees with re-integration to second order.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{right_jacobian, right_jacobian_inv, skew, Rotation};
use crate::state::{ImuState, ERROR_DIM, IDX_BA, IDX_BG, IDX_P, IDX_TH, IDX_V, SPEED_OF_LIGHT};

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Vector15 = SMatrix<f64, 15, 1>;
/// Jacobian of the 15-dim residual with respect to both keyframes' error states.
pub type PreintJacobian = SMatrix<f64, 15, { 2 * ERROR_DIM }>;

const A: usize = 0;
const B: usize = 3;
const T: usize = 6;
const BA: usize = 9;
const BG: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreintError {
    #[error("empty IMU segment")]
    Empty,
    #[error("IMU timestamps not monotone at sample {0}")]
    NonMonotone(usize),
}

/// One raw IMU sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Time (s).
    pub t: f64,
    /// Specific force in the body frame (m/s²).
    pub accel: Vector3<f64>,
    /// Angular rate in the body frame (rad/s).
    pub gyro: Vector3<f64>,
}

/// IMU noise model used to propagate the pre-integration covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuNoise {
    /// Accelerometer white-noise density (m/s²/√Hz).
    pub accel_density: f64,
    /// Gyroscope white-noise density (rad/s/√Hz).
    pub gyro_density: f64,
    /// Accelerometer bias random walk (m/s³/√Hz).
    pub accel_bias_walk: f64,
    /// Gyroscope bias random walk (rad/s²/√Hz).
    pub gyro_bias_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            accel_density: 0.08,
            gyro_density: 0.004,
            accel_bias_walk: 4e-5,
            gyro_bias_walk: 2e-6,
        }
    }
}

/// Pre-integrated IMU deltas with covariance and bias Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedImu {
    pub alpha: Vector3<f64>,
    pub beta: Vector3<f64>,
    pub gamma: Rotation,
    pub dt: f64,
    pub lin_accel_bias: Vector3<f64>,
    pub lin_gyro_bias: Vector3<f64>,
    /// Covariance of `(δα, δβ, δθ, δb_a, δb_g)`.
    pub covariance: Matrix15,
    /// Transition of the error state over the whole segment; its bias columns
    /// hold the bias Jacobians.
    pub jacobian: Matrix15,
    pub noise: ImuNoise,
    samples: Vec<ImuSample>,
}

/// Integrates a raw IMU segment. The first and last samples are taken to lie
/// exactly on the bounding keyframes.
pub fn preintegrate(
    samples: &[ImuSample],
    accel_bias: Vector3<f64>,
    gyro_bias: Vector3<f64>,
    noise: ImuNoise,
) -> Result<PreintegratedImu, PreintError> {
    if samples.is_empty() {
        return Err(PreintError::Empty);
    }
    for (i, w) in samples.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(PreintError::NonMonotone(i + 1));
        }
    }
    let mut p = PreintegratedImu {
        alpha: Vector3::zeros(),
        beta: Vector3::zeros(),
        gamma: Rotation::identity(),
        dt: 0.0,
        lin_accel_bias: accel_bias,
        lin_gyro_bias: gyro_bias,
        covariance: Matrix15::zeros(),
        jacobian: Matrix15::identity(),
        noise,
        samples: samples.to_vec(),
    };
    p.integrate();
    Ok(p)
}

impl PreintegratedImu {
    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    fn integrate(&mut self) {
        let ba = self.lin_accel_bias;
        let bg = self.lin_gyro_bias;
        let n = self.noise;
        let mut alpha = Vector3::zeros();
        let mut beta = Vector3::zeros();
        let mut gamma = Rotation::identity();
        let mut cov = Matrix15::zeros();
        let mut jac = Matrix15::identity();
        let mut total = 0.0;

        for w in self.samples.windows(2) {
            let (s0, s1) = (&w[0], &w[1]);
            let dt = s1.t - s0.t;
            let r0 = gamma.matrix();
            let omega = 0.5 * (s0.gyro + s1.gyro) - bg;
            let dphi = omega * dt;
            let delta_rot = Rotation::exp(&dphi);
            let gamma1 = gamma.compose(&delta_rot);
            let r1 = gamma1.matrix();
            let a0 = s0.accel - ba;
            let a1 = s1.accel - ba;
            let a_mid = 0.5 * (r0 * a0 + r1 * a1);

            alpha += beta * dt + 0.5 * a_mid * dt * dt;
            beta += a_mid * dt;

            // linearization of the discrete step
            let jr = right_jacobian(&dphi);
            let th_th = delta_rot.matrix().transpose();
            let th_bg = -jr * dt;
            let th_ng = jr * dt;
            let m1 = -0.5 * r0 * skew(&a0);
            let m2 = -0.5 * r1 * skew(&a1);
            let m_ba = -0.5 * (r0 + r1);
            let r_mid = 0.5 * (r0 + r1);
            let acc_th = m1 + m2 * th_th;
            let acc_bg = m2 * th_bg;
            let acc_ng = m2 * th_ng;
            let h = 0.5 * dt * dt;

            let mut f = Matrix15::identity();
            f.fixed_view_mut::<3, 3>(A, B).copy_from(&(Matrix3::identity() * dt));
            f.fixed_view_mut::<3, 3>(A, T).copy_from(&(acc_th * h));
            f.fixed_view_mut::<3, 3>(A, BA).copy_from(&(m_ba * h));
            f.fixed_view_mut::<3, 3>(A, BG).copy_from(&(acc_bg * h));
            f.fixed_view_mut::<3, 3>(B, T).copy_from(&(acc_th * dt));
            f.fixed_view_mut::<3, 3>(B, BA).copy_from(&(m_ba * dt));
            f.fixed_view_mut::<3, 3>(B, BG).copy_from(&(acc_bg * dt));
            f.fixed_view_mut::<3, 3>(T, T).copy_from(&th_th);
            f.fixed_view_mut::<3, 3>(T, BG).copy_from(&th_bg);

            let mut g = SMatrix::<f64, 15, 6>::zeros();
            g.fixed_view_mut::<3, 3>(A, 0).copy_from(&(r_mid * h));
            g.fixed_view_mut::<3, 3>(A, 3).copy_from(&(acc_ng * h));
            g.fixed_view_mut::<3, 3>(B, 0).copy_from(&(r_mid * dt));
            g.fixed_view_mut::<3, 3>(B, 3).copy_from(&(acc_ng * dt));
            g.fixed_view_mut::<3, 3>(T, 3).copy_from(&th_ng);

            let qa = n.accel_density * n.accel_density / dt;
            let qg = n.gyro_density * n.gyro_density / dt;
            let q = SMatrix::<f64, 6, 6>::from_diagonal(&nalgebra::Vector6::new(qa, qa, qa, qg, qg, qg));

            cov = f * cov * f.transpose() + g * q * g.transpose();
            for i in 0..3 {
                cov[(BA + i, BA + i)] += n.accel_bias_walk * n.accel_bias_walk * dt;
                cov[(BG + i, BG + i)] += n.gyro_bias_walk * n.gyro_bias_walk * dt;
            }
            jac = f * jac;

            gamma = gamma1;
            total += dt;
        }
        // keep exact symmetry
        cov = 0.5 * (cov + cov.transpose());
        self.alpha = alpha;
        self.beta = beta;
        self.gamma = gamma;
        self.covariance = cov;
        self.jacobian = jac;
        self.dt = total;
    }

    /// Re-integrates the stored samples at a new linearization bias.
    pub fn repropagate(&mut self, accel_bias: Vector3<f64>, gyro_bias: Vector3<f64>) {
        self.lin_accel_bias = accel_bias;
        self.lin_gyro_bias = gyro_bias;
        self.integrate();
    }

    pub fn j_alpha_ba(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(A, BA).into_owned()
    }
    pub fn j_alpha_bg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(A, BG).into_owned()
    }
    pub fn j_beta_ba(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(B, BA).into_owned()
    }
    pub fn j_beta_bg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(B, BG).into_owned()
    }
    pub fn j_theta_bg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(T, BG).into_owned()
    }

    /// Deltas corrected to first order for biases differing from the
    /// linearization point.
    pub fn corrected(&self, accel_bias: &Vector3<f64>, gyro_bias: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>, Rotation) {
        let dba = accel_bias - self.lin_accel_bias;
        let dbg = gyro_bias - self.lin_gyro_bias;
        let alpha = self.alpha + self.j_alpha_ba() * dba + self.j_alpha_bg() * dbg;
        let beta = self.beta + self.j_beta_ba() * dba + self.j_beta_bg() * dbg;
        let gamma = self.gamma.compose(&Rotation::exp(&(self.j_theta_bg() * dbg)));
        (alpha, beta, gamma)
    }

    /// Bias offset from the linearization point, scaled by `reference`
    /// sigmas `(σ_ba, σ_bg)`; used for the re-linearization policy.
    pub fn bias_drift(&self, accel_bias: &Vector3<f64>, gyro_bias: &Vector3<f64>, reference: (f64, f64)) -> f64 {
        let a = (accel_bias - self.lin_accel_bias).norm() / reference.0;
        let g = (gyro_bias - self.lin_gyro_bias).norm() / reference.1;
        a.max(g)
    }

    /// Propagates `state` over the segment. Biases are held; receiver clocks
    /// advance with the clock drift.
    pub fn predict(&self, state: &ImuState, gravity: &Vector3<f64>) -> ImuState {
        let (alpha, beta, gamma) = self.corrected(&state.accel_bias, &state.gyro_bias);
        let r = state.attitude.matrix();
        let dt = self.dt;
        let mut out = *state;
        out.position = state.position + state.velocity * dt + 0.5 * gravity * dt * dt + r * alpha;
        out.velocity = state.velocity + gravity * dt + r * beta;
        out.attitude = state.attitude.compose(&gamma);
        for c in out.clock_bias.iter_mut() {
            *c += state.clock_drift * dt;
        }
        out
    }

    /// Composes two consecutive pre-integrations sharing a linearization bias.
    pub fn compose(&self, next: &PreintegratedImu) -> (Vector3<f64>, Vector3<f64>, Rotation) {
        let r = self.gamma.matrix();
        (
            self.alpha + self.beta * next.dt + r * next.alpha,
            self.beta + r * next.beta,
            self.gamma.compose(&next.gamma),
        )
    }
}

/// Pre-integration residual `(δα, δβ, δθ, δb_a, δb_g)` between keyframes
/// `k` and `k+1`.
pub fn preint_residual(p: &PreintegratedImu, state_k: &ImuState, state_k1: &ImuState, gravity: &Vector3<f64>) -> Vector15 {
    let (alpha, beta, gamma) = p.corrected(&state_k.accel_bias, &state_k.gyro_bias);
    let rk_t = state_k.attitude.matrix().transpose();
    let dt = p.dt;
    let dp = state_k1.position - state_k.position - state_k.velocity * dt - 0.5 * gravity * dt * dt;
    let dv = state_k1.velocity - state_k.velocity - gravity * dt;
    let e = gamma
        .inverse()
        .compose(&state_k.attitude.inverse())
        .compose(&state_k1.attitude);
    let mut r = Vector15::zeros();
    r.fixed_rows_mut::<3>(A).copy_from(&(rk_t * dp - alpha));
    r.fixed_rows_mut::<3>(B).copy_from(&(rk_t * dv - beta));
    r.fixed_rows_mut::<3>(T).copy_from(&e.log());
    r.fixed_rows_mut::<3>(BA).copy_from(&(state_k1.accel_bias - state_k.accel_bias));
    r.fixed_rows_mut::<3>(BG).copy_from(&(state_k1.gyro_bias - state_k.gyro_bias));
    r
}

/// Analytic Jacobian of [`preint_residual`] with respect to the error states
/// of keyframe `k` (columns `0..20`) and `k+1` (columns `20..40`).
pub fn preint_jacobian(p: &PreintegratedImu, state_k: &ImuState, state_k1: &ImuState, gravity: &Vector3<f64>) -> PreintJacobian {
    let dt = p.dt;
    let rk = state_k.attitude.matrix();
    let rk_t = rk.transpose();
    let r1 = state_k1.attitude.matrix();
    let dp = state_k1.position - state_k.position - state_k.velocity * dt - 0.5 * gravity * dt * dt;
    let dv = state_k1.velocity - state_k.velocity - gravity * dt;
    let dbg = state_k.gyro_bias - p.lin_gyro_bias;
    let phi_b = p.j_theta_bg() * dbg;
    let (_, _, gamma) = p.corrected(&state_k.accel_bias, &state_k.gyro_bias);
    let e = gamma.inverse().compose(&state_k.attitude.inverse()).compose(&state_k1.attitude);
    let r_th = e.log();
    let jr_inv = right_jacobian_inv(&r_th);

    let o = ERROR_DIM;
    let mut j = PreintJacobian::zeros();
    let mut put = |row: usize, col: usize, m: Matrix3<f64>| {
        j.fixed_view_mut::<3, 3>(row, col).copy_from(&m);
    };
    put(A, IDX_P, -rk_t);
    put(A, IDX_V, -rk_t * dt);
    put(A, IDX_TH, skew(&(rk_t * dp)));
    put(A, IDX_BA, -p.j_alpha_ba());
    put(A, IDX_BG, -p.j_alpha_bg());
    put(A, o + IDX_P, rk_t);

    put(B, IDX_V, -rk_t);
    put(B, IDX_TH, skew(&(rk_t * dv)));
    put(B, IDX_BA, -p.j_beta_ba());
    put(B, IDX_BG, -p.j_beta_bg());
    put(B, o + IDX_V, rk_t);

    put(T, IDX_TH, -jr_inv * r1.transpose() * rk);
    put(T, IDX_BG, -jr_inv * e.matrix().transpose() * right_jacobian(&phi_b) * p.j_theta_bg());
    put(T, o + IDX_TH, jr_inv);

    put(BA, IDX_BA, -Matrix3::identity());
    put(BA, o + IDX_BA, Matrix3::identity());
    put(BG, IDX_BG, -Matrix3::identity());
    put(BG, o + IDX_BG, Matrix3::identity());
    j
}

/// Propagates receiver clock terms across an interval (constant drift).
pub fn propagate_clock(state: &ImuState, dt: f64) -> [f64; 4] {
    let mut c = state.clock_bias;
    for v in c.iter_mut() {
        *v += state.clock_drift * dt;
    }
    c
}

/// Range-unit clock drift (m/s) of a state.
pub fn drift_range_rate(state: &ImuState) -> f64 {
    state.clock_drift * SPEED_OF_LIGHT
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn constant_segment(duration: f64, rate: f64, accel: Vector3<f64>, gyro: Vector3<f64>) -> Vec<ImuSample> {
        let n = (duration * rate).round() as usize;
        (0..=n)
            .map(|i| ImuSample {
                t: i as f64 / rate,
                accel,
                gyro,
            })
            .collect()
    }

    fn wavy_segment(t0: f64, duration: f64, rate: f64) -> Vec<ImuSample> {
        let n = (duration * rate).round() as usize;
        (0..=n)
            .map(|i| {
                let t = t0 + i as f64 / rate;
                ImuSample {
                    t,
                    accel: Vector3::new(0.5 * (0.7 * t).sin(), 0.3 * (1.3 * t).cos(), 9.81 + 0.2 * (0.4 * t).sin()),
                    gyro: Vector3::new(0.05 * (0.9 * t).cos(), -0.04 * (0.5 * t).sin(), 0.1 + 0.03 * (1.1 * t).sin()),
                }
            })
            .collect()
    }

    fn zero() -> Vector3<f64> {
        Vector3::zeros()
    }

    #[test]
    fn empty_and_non_monotone_segments_fail() {
        assert_eq!(preintegrate(&[], zero(), zero(), ImuNoise::default()).unwrap_err(), PreintError::Empty);
        let mut s = constant_segment(1.0, 10.0, zero(), zero());
        s[4].t = s[3].t;
        assert_eq!(
            preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap_err(),
            PreintError::NonMonotone(4)
        );
    }

    #[test]
    fn null_motion() {
        let s = constant_segment(1.0, 200.0, zero(), zero());
        let p = preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap();
        assert!(p.alpha.norm() < 1e-15 && p.beta.norm() < 1e-15);
        assert!(p.gamma.angle() < 1e-15);
        assert!((p.dt - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_acceleration_closed_form() {
        // oracle: β = a·T, α = ½·a·T²
        let s = constant_segment(2.0, 200.0, Vector3::new(1.0, 0.0, 0.0), zero());
        let p = preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap();
        assert!((p.beta - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-9);
        assert!((p.alpha - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn constant_rate_closed_form() {
        // oracle: rotation angle ω·T about z
        let s = constant_segment(3.0, 200.0, zero(), Vector3::new(0.0, 0.0, 0.1));
        let p = preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap();
        assert!((p.gamma.angle() - 0.3).abs() < 1e-9);
        let axis = p.gamma.log().normalize();
        assert!((axis - Vector3::z()).norm() < 1e-9);
    }

    #[test]
    fn dt_matches_sample_span() {
        let s = wavy_segment(3.0, 1.0, 200.0);
        let p = preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap();
        let sum: f64 = s.windows(2).map(|w| w[1].t - w[0].t).sum();
        assert!((p.dt - sum).abs() < 1e-9);
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let s = wavy_segment(0.0, 1.0, 200.0);
        let p = preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap();
        assert_relative_eq!(p.covariance, p.covariance.transpose(), epsilon = 1e-18);
        let eig = p.covariance.symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10);
    }

    #[test]
    fn covariance_trace_grows_with_length() {
        let s = wavy_segment(0.0, 2.0, 200.0);
        let mut last = 0.0;
        for end in [20, 60, 100, 200, 300, 400] {
            let p = preintegrate(&s[..=end], zero(), zero(), ImuNoise::default()).unwrap();
            let tr = p.covariance.trace();
            assert!(tr >= last, "trace shrank at {end}");
            last = tr;
        }
    }

    #[test]
    fn split_and_compose_reproduces_whole() {
        let s = wavy_segment(0.0, 1.0, 200.0);
        let ba = Vector3::new(0.01, -0.02, 0.005);
        let bg = Vector3::new(1e-3, 0.0, -2e-3);
        let whole = preintegrate(&s, ba, bg, ImuNoise::default()).unwrap();
        for split in [1, 37, 100, 199] {
            let a = preintegrate(&s[..=split], ba, bg, ImuNoise::default()).unwrap();
            let b = preintegrate(&s[split..], ba, bg, ImuNoise::default()).unwrap();
            let (alpha, beta, gamma) = a.compose(&b);
            assert!((alpha - whole.alpha).norm() < 1e-9);
            assert!((beta - whole.beta).norm() < 1e-9);
            assert!(gamma.angle_to(&whole.gamma) < 1e-9);
        }
    }

    #[test]
    fn first_order_bias_correction() {
        let s = wavy_segment(0.0, 1.0, 200.0);
        let p = preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap();
        let dba = Vector3::new(6e-4, -5e-4, 4e-4);
        let dbg = Vector3::new(-3e-4, 7e-4, 2e-4);
        let norm2 = dba.norm_squared() + dbg.norm_squared();
        let (alpha, beta, gamma) = p.corrected(&dba, &dbg);
        let re = preintegrate(&s, dba, dbg, ImuNoise::default()).unwrap();
        assert!((alpha - re.alpha).norm() <= 10.0 * norm2);
        assert!((beta - re.beta).norm() <= 10.0 * norm2);
        assert!(gamma.angle_to(&re.gamma) <= 10.0 * norm2);
    }

    fn consistent_pair(p: &PreintegratedImu, g: &Vector3<f64>) -> (ImuState, ImuState) {
        let s0 = ImuState {
            position: Vector3::new(3.0, -2.0, 1.0),
            velocity: Vector3::new(2.0, 1.0, -0.1),
            attitude: Rotation::exp(&Vector3::new(0.05, -0.1, 0.8)),
            accel_bias: p.lin_accel_bias,
            gyro_bias: p.lin_gyro_bias,
            ..Default::default()
        };
        let s1 = p.predict(&s0, g);
        (s0, s1)
    }

    #[test]
    fn residual_vanishes_for_consistent_states() {
        let g = Vector3::new(0.0, 0.0, -9.81);
        let s = wavy_segment(0.0, 1.0, 200.0);
        let p = preintegrate(&s, Vector3::new(0.01, 0.0, 0.0), zero(), ImuNoise::default()).unwrap();
        let (s0, s1) = consistent_pair(&p, &g);
        assert!(preint_residual(&p, &s0, &s1, &g).norm() < 1e-8);
    }

    #[test]
    fn position_perturbation_enters_alpha_block_only() {
        // oracle: δα changes by R_kᵀ·Δp, everything else unchanged
        let g = Vector3::new(0.0, 0.0, -9.81);
        let s = wavy_segment(0.0, 1.0, 200.0);
        let p = preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap();
        let (s0, mut s1) = consistent_pair(&p, &g);
        let base = preint_residual(&p, &s0, &s1, &g);
        let dp = Vector3::new(0.5, 0.0, 0.0);
        s1.position += dp;
        let r = preint_residual(&p, &s0, &s1, &g);
        let expected = s0.attitude.matrix().transpose() * dp;
        let diff = r - base;
        assert!((diff.fixed_rows::<3>(0) - expected).norm() < 1e-9);
        assert!(diff.rows(3, 12).norm() < 1e-9);
    }

    #[test]
    fn bias_residual_block() {
        let g = Vector3::new(0.0, 0.0, -9.81);
        let s = wavy_segment(0.0, 1.0, 200.0);
        let p = preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap();
        let (s0, mut s1) = consistent_pair(&p, &g);
        s1.accel_bias += Vector3::new(0.01, 0.0, 0.0);
        let r = preint_residual(&p, &s0, &s1, &g);
        assert!((r.fixed_rows::<3>(9) - Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn jacobian_bias_blocks_are_identity() {
        let g = Vector3::new(0.0, 0.0, -9.81);
        let s = wavy_segment(0.0, 1.0, 200.0);
        let p = preintegrate(&s, zero(), zero(), ImuNoise::default()).unwrap();
        let (s0, s1) = consistent_pair(&p, &g);
        let j = preint_jacobian(&p, &s0, &s1, &g);
        let o = ERROR_DIM;
        assert_eq!(j.fixed_view::<3, 3>(9, IDX_BA).into_owned(), -Matrix3::identity());
        assert_eq!(j.fixed_view::<3, 3>(9, o + IDX_BA).into_owned(), Matrix3::identity());
        assert_eq!(j.fixed_view::<3, 3>(12, IDX_BG).into_owned(), -Matrix3::identity());
        assert_eq!(j.fixed_view::<3, 3>(12, o + IDX_BG).into_owned(), Matrix3::identity());
        // position of k+1 in the δα block is R_kᵀ, i.e. R_w^{b_k}
        let rkt = s0.attitude.matrix().transpose();
        assert!((j.fixed_view::<3, 3>(0, o + IDX_P) - rkt).norm() < 1e-9);
    }

    fn finite_difference(p: &PreintegratedImu, s0: &ImuState, s1: &ImuState, g: &Vector3<f64>) -> PreintJacobian {
        let h = 1e-6;
        let mut fd = PreintJacobian::zeros();
        for col in 0..2 * ERROR_DIM {
            let mut d = crate::state::ErrorVector::zeros();
            d[col % ERROR_DIM] = h;
            let (plus, minus) = if col < ERROR_DIM {
                (
                    preint_residual(p, &s0.plus(&d), s1, g),
                    preint_residual(p, &s0.plus(&(-d)), s1, g),
                )
            } else {
                (
                    preint_residual(p, s0, &s1.plus(&d), g),
                    preint_residual(p, s0, &s1.plus(&(-d)), g),
                )
            };
            fd.set_column(col, &((plus - minus) / (2.0 * h)));
        }
        fd
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn jacobian_matches_finite_differences(
            perturb in proptest::collection::vec(-0.2f64..0.2, 2 * ERROR_DIM),
            ba in proptest::collection::vec(-0.05f64..0.05, 3),
            bg in proptest::collection::vec(-0.01f64..0.01, 3),
        ) {
            let g = Vector3::new(0.0, 0.0, -9.81);
            let s = wavy_segment(0.0, 1.0, 100.0);
            let p = preintegrate(&s, Vector3::from_column_slice(&ba), Vector3::from_column_slice(&bg), ImuNoise::default()).unwrap();
            let (s0, s1) = consistent_pair(&p, &g);
            let d0 = crate::state::ErrorVector::from_column_slice(&perturb[..ERROR_DIM]);
            let d1 = crate::state::ErrorVector::from_column_slice(&perturb[ERROR_DIM..]);
            let (s0, s1) = (s0.plus(&(d0 * 0.1)), s1.plus(&(d1 * 0.1)));
            let j = preint_jacobian(&p, &s0, &s1, &g);
            let fd = finite_difference(&p, &s0, &s1, &g);
            let scale = fd.abs().max().max(1.0);
            let err = (j - fd).abs().max() / scale;
            prop_assert!(err < 1e-4, "max relative error {err}");
        }
    }
}
