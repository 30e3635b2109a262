use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::GnssConfig;
use super::{stream_rng, ScenarioError, STREAM_GNSS, STREAM_SATELLITES};
use crate::factors::SatelliteObservation;
use crate::geom::{ecef_from_enu, rotation_from_yaw, AnchorGeodesy};
use crate::state::{ImuState, SatId, SPEED_OF_LIGHT};

/// Orbital radius used for the static satellites (m).
pub const SATELLITE_RADIUS: f64 = 26_560_000.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Satellite {
    pub sat: SatId,
    /// ECEF position (m).
    pub position: Vector3<f64>,
    /// Satellite clock offset (s).
    pub clock_offset: f64,
}

/// Satellite at the given azimuth/elevation as seen from the anchor.
pub fn satellite_at(anchor: &AnchorGeodesy, azimuth: f64, elevation: f64) -> Vector3<f64> {
    let dir = ecef_from_enu(anchor).rotate(&Vector3::new(
        elevation.cos() * azimuth.sin(),
        elevation.cos() * azimuth.cos(),
        elevation.sin(),
    ));
    let a = anchor.position_ecef;
    let b = a.dot(&dir);
    let d = -b + (b * b - a.norm_squared() + SATELLITE_RADIUS * SATELLITE_RADIUS).sqrt();
    a + dir * d
}

/// Elevation of `sat` seen from `receiver` (rad).
pub fn elevation(anchor: &AnchorGeodesy, receiver: &Vector3<f64>, sat: &Vector3<f64>) -> f64 {
    let up = ecef_from_enu(anchor).rotate(&Vector3::z());
    let los = (sat - receiver).normalize();
    los.dot(&up).asin()
}

/// Static constellation geometry: each constellation's satellites are spread
/// evenly in azimuth, with elevations interleaved between the mask and 85°.
pub fn place_satellites(cfg: &GnssConfig, anchor: &AnchorGeodesy, seed: u64) -> Result<Vec<Satellite>, ScenarioError> {
    let mut rng = stream_rng(seed, STREAM_SATELLITES);
    let n = cfg.satellites_per_constellation;
    let lo = cfg.elevation_mask_deg + 5.0;
    let hi = 85.0f64.max(lo);
    let mut sats = Vec::new();
    for (ci, c) in cfg.constellations.iter().enumerate() {
        for i in 0..n {
            let az = std::f64::consts::TAU * (i as f64 + 0.37 * ci as f64) / n as f64;
            let frac = (i as f64 * 0.618_034 + ci as f64 * 0.29).fract();
            let el = (lo + (hi - lo) * frac).to_radians();
            let spread = cfg.satellite_clock_spread;
            let clock_offset = if spread > 0.0 { rng.random_range(-spread..spread) } else { 0.0 };
            sats.push(Satellite {
                sat: SatId::new(*c, i as u16 + 1),
                position: satellite_at(anchor, az, el),
                clock_offset,
            });
        }
    }
    let mask = cfg.elevation_mask_deg.to_radians();
    let visible: Vec<Satellite> = sats
        .into_iter()
        .filter(|s| elevation(anchor, &anchor.position_ecef, &s.position) >= mask)
        .collect();
    if visible.len() < cfg.min_visible {
        return Err(ScenarioError::TooFewSatellites {
            visible: visible.len(),
            required: cfg.min_visible,
        });
    }
    Ok(visible)
}

/// Pseudoranges for each epoch state (whose clock fields hold the true
/// receiver clock).
pub fn synthesize_pseudoranges(
    states: &[ImuState],
    sats: &[Satellite],
    cfg: &GnssConfig,
    anchor: &AnchorGeodesy,
    seed: u64,
    noiseless: bool,
) -> Result<Vec<Vec<SatelliteObservation>>, ScenarioError> {
    let mut rng = stream_rng(seed, STREAM_GNSS);
    let r = ecef_from_enu(anchor)
        .compose(&rotation_from_yaw(cfg.yaw_offset).map_err(|e| ScenarioError::Config(e.to_string()))?)
        .matrix();
    let mask = cfg.elevation_mask_deg.to_radians();
    let mut out = Vec::with_capacity(states.len());
    for s in states {
        let rel = r * s.position;
        let receiver = anchor.position_ecef + rel;
        let mut obs = Vec::with_capacity(sats.len());
        for sat in sats {
            if elevation(anchor, &receiver, &sat.position) < mask {
                continue;
            }
            let range = ((sat.position - anchor.position_ecef) - rel).norm();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let clock = s.clock_range(sat.sat.constellation) - SPEED_OF_LIGHT * sat.clock_offset;
            let pseudorange = range
                + clock
                + cfg.tropo
                + cfg.iono
                + cfg.multipath
                + cfg.sagnac
                + if noiseless { 0.0 } else { cfg.sigma * noise };
            obs.push(SatelliteObservation {
                sat: sat.sat,
                position: sat.position,
                clock_offset: sat.clock_offset,
                tropo: cfg.tropo,
                iono: cfg.iono,
                multipath: cfg.multipath,
                sagnac: cfg.sagnac,
                pseudorange,
                sigma: cfg.sigma,
            });
        }
        if obs.len() < cfg.min_visible {
            return Err(ScenarioError::TooFewSatellites {
                visible: obs.len(),
                required: cfg.min_visible,
            });
        }
        out.push(obs);
    }
    Ok(out)
}

/// Position dilution of precision of a satellite set at the anchor, with one
/// clock per constellation.
pub fn pdop(anchor: &AnchorGeodesy, sats: &[Satellite]) -> f64 {
    let mut consts: Vec<_> = sats.iter().map(|s| s.sat.constellation).collect();
    consts.sort();
    consts.dedup();
    let n = 3 + consts.len();
    let mut h = nalgebra::DMatrix::zeros(n, n);
    for s in sats {
        let u = (s.position - anchor.position_ecef).normalize();
        let mut row = nalgebra::DVector::zeros(n);
        row[0] = -u.x;
        row[1] = -u.y;
        row[2] = -u.z;
        row[3 + consts.iter().position(|c| *c == s.sat.constellation).unwrap()] = 1.0;
        h += &row * row.transpose();
    }
    match h.try_inverse() {
        Some(inv) => (inv[(0, 0)] + inv[(1, 1)] + inv[(2, 2)]).sqrt(),
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Constellation;

    fn setup(cfg: &GnssConfig) -> (AnchorGeodesy, Vec<Satellite>) {
        let a = cfg.anchor().unwrap();
        let s = place_satellites(cfg, &a, 1).unwrap();
        (a, s)
    }

    fn quiet() -> GnssConfig {
        GnssConfig {
            satellite_clock_spread: 0.0,
            receiver_clock_bias: [0.0; 4],
            receiver_clock_drift: 0.0,
            yaw_offset: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn default_geometry() {
        let cfg = GnssConfig::default();
        let (a, s) = setup(&cfg);
        assert_eq!(s.len(), 32);
        for sat in &s {
            let n = sat.position.norm();
            assert!((2.0e7..=3.0e7).contains(&n));
        }
        let p = pdop(&a, &s);
        assert!(p > 0.5 && p < 2.5, "pdop {p}");
    }

    #[test]
    fn geometric_range_when_quiet() {
        let cfg = quiet();
        let (a, s) = setup(&cfg);
        let st = ImuState {
            position: Vector3::new(5.0, 3.0, 1.0),
            ..Default::default()
        };
        let obs = synthesize_pseudoranges(&[st], &s, &cfg, &a, 1, true).unwrap();
        let rx = crate::factors::receiver_ecef(&st.position, 0.0, &a).unwrap();
        for o in &obs[0] {
            assert!((o.pseudorange - (o.position - rx).norm()).abs() < 1e-6);
        }
    }

    #[test]
    fn receiver_clock_shift() {
        // 299792458 · 1e-6 = 299.792 m
        let cfg = quiet();
        let (a, s) = setup(&cfg);
        let base = ImuState::default();
        let mut shifted = base;
        shifted.clock_bias = [1e-6; 4];
        let o0 = synthesize_pseudoranges(&[base], &s, &cfg, &a, 1, true).unwrap();
        let o1 = synthesize_pseudoranges(&[shifted], &s, &cfg, &a, 1, true).unwrap();
        for (x, y) in o0[0].iter().zip(&o1[0]) {
            assert!((y.pseudorange - x.pseudorange - 299.792_458).abs() < 1e-6);
        }
    }

    #[test]
    fn per_constellation_clock_difference() {
        let cfg = quiet();
        let (a, s) = setup(&cfg);
        let mut st = ImuState::default();
        st.clock_bias[Constellation::Gps.index()] = 2e-6;
        st.clock_bias[Constellation::Beidou.index()] = -1e-6;
        let clean = synthesize_pseudoranges(&[ImuState::default()], &s, &cfg, &a, 1, true).unwrap();
        let obs = synthesize_pseudoranges(&[st], &s, &cfg, &a, 1, true).unwrap();
        let shift = |c: Constellation| {
            obs[0]
                .iter()
                .zip(&clean[0])
                .find(|(o, _)| o.sat.constellation == c)
                .map(|(o, b)| o.pseudorange - b.pseudorange)
                .unwrap()
        };
        let diff = shift(Constellation::Gps) - shift(Constellation::Beidou);
        assert!((diff - SPEED_OF_LIGHT * 3e-6).abs() < 1e-6);
    }

    #[test]
    fn too_few_satellites() {
        let cfg = GnssConfig {
            satellites_per_constellation: 1,
            ..Default::default()
        };
        let a = cfg.anchor().unwrap();
        assert!(matches!(
            place_satellites(&cfg, &a, 1),
            Err(ScenarioError::TooFewSatellites { visible: 4, required: 5 })
        ));
    }
}
