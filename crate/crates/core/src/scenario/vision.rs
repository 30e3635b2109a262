use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{CameraConfig, LandmarkConfig};
use super::{stream_rng, STREAM_LANDMARKS, STREAM_VISION};
use crate::factors::{project, CameraModel};
use crate::state::ImuState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
}

/// One pixel measurement of a landmark.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureObservation {
    pub id: u64,
    pub pixel: Vector2<f64>,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    pub id: u64,
    /// Epoch index of the first observation.
    pub anchor: u64,
    pub observations: Vec<(u64, Vector2<f64>)>,
    pub landmark: Vector3<f64>,
    pub sigma: f64,
}

/// Scatters landmarks in bands on both sides of the path.
pub fn generate_landmarks(path: &[ImuState], cfg: &LandmarkConfig, seed: u64) -> Vec<Landmark> {
    let mut rng = stream_rng(seed, STREAM_LANDMARKS);
    let mut out = Vec::with_capacity(cfg.count);
    if path.is_empty() {
        return out;
    }
    let mut attempts = 0;
    while out.len() < cfg.count && attempts < cfg.count * 50 {
        attempts += 1;
        let k = rng.random_range(0..path.len());
        let s = &path[k];
        let v = Vector3::new(s.velocity.x, s.velocity.y, 0.0);
        let tangent = if v.norm() > 1e-6 { v.normalize() } else { Vector3::x() };
        let normal = Vector3::new(-tangent.y, tangent.x, 0.0);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let d = rng.random_range(cfg.min_offset..=cfg.max_offset);
        let along = rng.random_range(-5.0..=5.0);
        let h = rng.random_range(cfg.min_height..=cfg.max_height);
        let mut p = s.position + normal * (side * d) + tangent * along;
        p.z = h;
        let clear = path.iter().all(|q| {
            let dx = q.position.x - p.x;
            let dy = q.position.y - p.y;
            dx * dx + dy * dy >= 0.81 * cfg.min_offset * cfg.min_offset
        });
        if clear {
            out.push(Landmark {
                id: out.len() as u64,
                position: p,
            });
        }
    }
    out
}

/// Pixel observations per epoch. Landmarks behind the camera, beyond
/// `max_range` or outside the image are not observed, and landmarks seen in
/// a single frame are dropped. Returns the observations, the tracks, and the
/// indices of frames with fewer than `min_features` observations.
pub fn synthesize_features(
    states: &[ImuState],
    landmarks: &[Landmark],
    cam: &CameraModel,
    cfg: &CameraConfig,
    seed: u64,
    noiseless: bool,
) -> (Vec<Vec<FeatureObservation>>, Vec<FeatureTrack>, Vec<usize>) {
    let mut rng = stream_rng(seed, STREAM_VISION);
    let mut frames: Vec<Vec<FeatureObservation>> = Vec::with_capacity(states.len());
    for s in states {
        let mut obs = Vec::new();
        for l in landmarks {
            let p_c = cam.world_to_camera(&l.position, s);
            if p_c.z <= 0.0 || p_c.norm() > cfg.max_range {
                continue;
            }
            let Ok(px) = project(&l.position, s, cam) else { continue };
            let nu: f64 = StandardNormal.sample(&mut rng);
            let nv: f64 = StandardNormal.sample(&mut rng);
            let pixel = if noiseless {
                px
            } else {
                px + Vector2::new(nu, nv) * cfg.pixel_sigma
            };
            if cam.in_bounds(&pixel) {
                obs.push(FeatureObservation {
                    id: l.id,
                    pixel,
                    sigma: cfg.pixel_sigma,
                });
            }
        }
        frames.push(obs);
    }

    let mut tracks: Vec<Option<FeatureTrack>> = vec![None; landmarks.len()];
    for (k, obs) in frames.iter().enumerate() {
        for o in obs {
            let t = tracks[o.id as usize].get_or_insert_with(|| FeatureTrack {
                id: o.id,
                anchor: k as u64,
                observations: Vec::new(),
                landmark: landmarks[o.id as usize].position,
                sigma: cfg.pixel_sigma,
            });
            t.observations.push((k as u64, o.pixel));
        }
    }
    let keep: Vec<bool> = tracks
        .iter()
        .map(|t| t.as_ref().is_some_and(|t| t.observations.len() >= 2))
        .collect();
    for obs in frames.iter_mut() {
        obs.retain(|o| keep[o.id as usize]);
    }
    let tracks: Vec<FeatureTrack> = tracks.into_iter().flatten().filter(|t| t.observations.len() >= 2).collect();
    let sparse = frames
        .iter()
        .enumerate()
        .filter(|(_, o)| o.len() < cfg.min_features)
        .map(|(k, _)| k)
        .collect();
    (frames, tracks, sparse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rotation;

    fn forward_cfg() -> CameraConfig {
        CameraConfig {
            camera_to_body: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            center_in_body: [0.0; 3],
            ..Default::default()
        }
    }

    fn two_frames() -> Vec<ImuState> {
        vec![
            ImuState::default(),
            ImuState {
                position: Vector3::new(0.05, 0.0, 0.0),
                ..Default::default()
            },
        ]
    }

    #[test]
    fn on_axis_landmark_hits_principal_point() {
        let cfg = forward_cfg();
        let cam = cfg.model().unwrap();
        let lm = [Landmark {
            id: 0,
            position: Vector3::new(0.0, 0.0, 1.0),
        }];
        let states = vec![ImuState::default(); 2];
        let (frames, tracks, _) = synthesize_features(&states, &lm, &cam, &cfg, 1, true);
        assert_eq!(frames[0][0].pixel, Vector2::new(320.0, 240.0));
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].anchor, 0);
    }

    #[test]
    fn pinhole_offset_landmark() {
        // 400 · 0.1 / 1 + 320 = 360
        let cfg = forward_cfg();
        let cam = cfg.model().unwrap();
        let lm = [Landmark {
            id: 0,
            position: Vector3::new(0.1, 0.0, 1.0),
        }];
        let states = vec![ImuState::default(); 2];
        let (frames, _, _) = synthesize_features(&states, &lm, &cam, &cfg, 1, true);
        assert!((frames[0][0].pixel - Vector2::new(360.0, 240.0)).norm() < 1e-9);
    }

    #[test]
    fn landmark_behind_camera_is_absent() {
        let cfg = forward_cfg();
        let cam = cfg.model().unwrap();
        let lm = [
            Landmark {
                id: 0,
                position: Vector3::new(0.0, 0.0, -2.0),
            },
            Landmark {
                id: 1,
                position: Vector3::new(0.0, 0.5, 3.0),
            },
        ];
        let (frames, tracks, sparse) = synthesize_features(&two_frames(), &lm, &cam, &cfg, 1, true);
        assert!(frames.iter().all(|f| f.iter().all(|o| o.id == 1)));
        assert_eq!(tracks.len(), 1);
        assert_eq!(sparse, vec![0, 1]);
    }

    #[test]
    fn pixels_inside_bounds_and_tracks_have_two_views() {
        let cfg = CameraConfig::default();
        let cam = cfg.model().unwrap();
        let path: Vec<ImuState> = (0..30)
            .map(|k| ImuState {
                position: Vector3::new(5.0 * k as f64, 0.0, 1.0),
                velocity: Vector3::new(5.0, 0.0, 0.0),
                attitude: Rotation::identity(),
                ..Default::default()
            })
            .collect();
        let lms = generate_landmarks(&path, &LandmarkConfig::default(), 4);
        assert_eq!(lms.len(), 800);
        let (frames, tracks, _) = synthesize_features(&path, &lms, &cam, &cfg, 4, false);
        for f in &frames {
            for o in f {
                assert!(cam.in_bounds(&o.pixel));
            }
        }
        assert!(tracks.iter().all(|t| t.observations.len() >= 2));
        let mean = frames.iter().map(Vec::len).sum::<usize>() as f64 / frames.len() as f64;
        assert!(mean > 15.0, "mean features per frame {mean}");
    }
}
