use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{ecef_from_enu, rotation_from_yaw, AnchorGeodesy, GeomError};
use crate::state::{ImuState, SatId, NUM_CONSTELLATIONS, SPEED_OF_LIGHT};

/// Columns of a pseudorange Jacobian row: position (3), receiver clocks in
/// meters (4), yaw offset (1).
pub const PR_JAC_DIM: usize = 3 + NUM_CONSTELLATIONS + 1;

/// One pseudorange observation with the terms of its measurement model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SatelliteObservation {
    pub sat: SatId,
    /// Satellite position in ECEF (m).
    pub position: Vector3<f64>,
    /// Satellite clock offset (s).
    pub clock_offset: f64,
    /// Tropospheric delay (m).
    #[serde(default)]
    pub tropo: f64,
    /// Ionospheric delay (m).
    #[serde(default)]
    pub iono: f64,
    /// Multipath (m); part of the measurement, not of the residual model.
    #[serde(default)]
    pub multipath: f64,
    /// Sagnac correction (m).
    #[serde(default)]
    pub sagnac: f64,
    /// Measured pseudorange (m).
    pub pseudorange: f64,
    /// Noise standard deviation (m).
    pub sigma: f64,
}

impl SatelliteObservation {
    pub fn position_in_band(&self) -> bool {
        let n = self.position.norm();
        (2.0e7..=3.0e7).contains(&n)
    }
}

/// Receiver position in ECEF for a world-frame body position.
pub fn receiver_ecef(p_w: &Vector3<f64>, psi: f64, anchor: &AnchorGeodesy) -> Result<Vector3<f64>, GeomError> {
    let r = ecef_from_enu(anchor).compose(&rotation_from_yaw(psi)?);
    Ok(r.rotate(p_w) + anchor.position_ecef)
}

/// Pseudorange residual with its Jacobian row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudorangeEval {
    /// Predicted minus measured pseudorange (m).
    pub residual: f64,
    /// Derivatives with respect to `[p (3), clock (4, m), ψ]`.
    pub jacobian: SVector<f64, PR_JAC_DIM>,
}

/// Predicted minus measured pseudorange. The clock column for the
/// observation's constellation is 1 because clock errors are carried in
/// range units.
pub fn pseudorange_residual(
    obs: &SatelliteObservation,
    state: &ImuState,
    psi: f64,
    anchor: &AnchorGeodesy,
) -> Result<PseudorangeEval, GeomError> {
    let r_ne = ecef_from_enu(anchor).matrix();
    let r_wn = rotation_from_yaw(psi)?.matrix();
    let r = r_ne * r_wn;
    // difference formed against the anchor first to limit cancellation
    let los = (obs.position - anchor.position_ecef) - r * state.position;
    let range = los.norm();
    let u = los / range;
    let clock = state.clock_range(obs.sat.constellation) - SPEED_OF_LIGHT * obs.clock_offset;
    let residual = range + clock + obs.tropo + obs.iono + obs.sagnac - obs.pseudorange;

    let mut jacobian = SVector::<f64, PR_JAC_DIM>::zeros();
    let jp = -(u.transpose() * r);
    jacobian.fixed_rows_mut::<3>(0).copy_from(&jp.transpose());
    jacobian[3 + obs.sat.constellation.index()] = 1.0;
    let dpsi = r_ne * r_wn * Vector3::z().cross(&state.position);
    jacobian[PR_JAC_DIM - 1] = -u.dot(&dpsi);
    Ok(PseudorangeEval { residual, jacobian })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Constellation, ErrorVector, IDX_CLK};
    use proptest::prelude::*;

    fn anchor() -> AnchorGeodesy {
        AnchorGeodesy::from_geodetic(0.39, 1.99, 50.0).unwrap()
    }

    fn sat(anchor: &AnchorGeodesy, az: f64, el: f64, c: Constellation) -> SatelliteObservation {
        let r_ne = ecef_from_enu(anchor).matrix();
        let dir = r_ne * Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
        // distance that puts the satellite at a MEO radius
        let a = anchor.position_ecef;
        let target: f64 = 26_560_000.0;
        let b = a.dot(&dir);
        let d = -b + (b * b - a.norm_squared() + target * target).sqrt();
        SatelliteObservation {
            sat: SatId::new(c, 3),
            position: a + dir * d,
            clock_offset: 2e-5,
            tropo: 0.0,
            iono: 0.0,
            multipath: 0.0,
            sagnac: 0.0,
            pseudorange: 0.0,
            sigma: 1.0,
        }
    }

    fn truth() -> ImuState {
        ImuState {
            position: Vector3::new(40.0, -12.0, 1.0),
            clock_bias: [1e-4, 2e-4, -5e-5, 3e-5],
            ..Default::default()
        }
    }

    fn noiseless(obs: &mut SatelliteObservation, s: &ImuState, psi: f64, a: &AnchorGeodesy) {
        let p_r = receiver_ecef(&s.position, psi, a).unwrap();
        obs.pseudorange = (obs.position - p_r).norm() + s.clock_range(obs.sat.constellation)
            - SPEED_OF_LIGHT * obs.clock_offset;
    }

    #[test]
    fn truth_residual_vanishes() {
        let a = anchor();
        let s = truth();
        let mut o = sat(&a, 0.7, 0.6, Constellation::Galileo);
        assert!(o.position_in_band());
        noiseless(&mut o, &s, 0.35, &a);
        let e = pseudorange_residual(&o, &s, 0.35, &a).unwrap();
        assert!(e.residual.abs() < 1e-6);
    }

    #[test]
    fn clock_inflation_shifts_residual() {
        // 299792458 · 1e-9 = 0.2998 m
        let a = anchor();
        let mut s = truth();
        let mut o = sat(&a, 0.7, 0.6, Constellation::Gps);
        noiseless(&mut o, &s, 0.35, &a);
        s.clock_bias[0] += 1e-9;
        let e = pseudorange_residual(&o, &s, 0.35, &a).unwrap();
        assert!((e.residual - 0.299_792_458).abs() < 1e-6);
    }

    #[test]
    fn clock_gauge_invariance() {
        let a = anchor();
        let mut s = truth();
        let mut o = sat(&a, 2.0, 0.9, Constellation::Beidou);
        o.pseudorange = 2.2e7;
        let before = pseudorange_residual(&o, &s, 0.2, &a).unwrap().residual;
        s.clock_bias[3] += 3e-6;
        o.pseudorange += 3e-6 * SPEED_OF_LIGHT;
        let after = pseudorange_residual(&o, &s, 0.2, &a).unwrap().residual;
        assert!((before - after).abs() < 1e-6);
    }

    #[test]
    fn position_jacobian_is_negative_line_of_sight() {
        let a = anchor();
        let s = truth();
        let psi = 0.35;
        let o = sat(&a, 1.2, 0.5, Constellation::Gps);
        let e = pseudorange_residual(&o, &s, psi, &a).unwrap();
        let p_r = receiver_ecef(&s.position, psi, &a).unwrap();
        let u = (o.position - p_r).normalize();
        let r = ecef_from_enu(&a).matrix() * rotation_from_yaw(psi).unwrap().matrix();
        let expected = -(r.transpose() * u);
        assert!((e.jacobian.fixed_rows::<3>(0) - expected).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn jacobian_matches_finite_differences(
            az in 0.0f64..6.28, el in 0.25f64..1.5, psi in -3.0f64..3.0,
            px in -200.0f64..200.0, py in -200.0f64..200.0, pz in -5.0f64..20.0,
            c in 0usize..4,
        ) {
            let a = anchor();
            let mut s = truth();
            s.position = Vector3::new(px, py, pz);
            let mut o = sat(&a, az, el, Constellation::ALL[c]);
            o.pseudorange = 2.3e7;
            let e = pseudorange_residual(&o, &s, psi, &a).unwrap();
            // ranges are ~2e7 m, so a larger step keeps rounding below 1e-7
            let h = 0.1;
            let f = |s: &ImuState, psi: f64| pseudorange_residual(&o, s, psi, &a).unwrap().residual;
            let mut fd = SVector::<f64, PR_JAC_DIM>::zeros();
            for k in 0..3 {
                let mut d = ErrorVector::zeros();
                d[k] = h;
                fd[k] = (f(&s.plus(&d), psi) - f(&s.plus(&(-d)), psi)) / (2.0 * h);
            }
            for k in 0..4 {
                let mut d = ErrorVector::zeros();
                d[IDX_CLK + k] = h;
                fd[3 + k] = (f(&s.plus(&d), psi) - f(&s.plus(&(-d)), psi)) / (2.0 * h);
            }
            let hp = 1e-3;
            fd[7] = (f(&s, psi + hp) - f(&s, psi - hp)) / (2.0 * hp);
            let scale = e.jacobian.abs().max().max(1.0);
            prop_assert!((e.jacobian - fd).abs().max() / scale < 1e-6);
        }
    }
}
