use nalgebra::{DMatrix, Matrix3};

use super::window::SlidingWindow;
use super::SolverError;
use crate::factors::{pseudorange_residual, visual_residual, Label, SensorClass};
use crate::geom::rotation_from_yaw;
use crate::preint::preint_jacobian;
use crate::state::{ERROR_DIM, INERTIAL_DIM, NUM_CONSTELLATIONS};

/// Linearized measurements of one sensor at the newest keyframe. The first
/// three Jacobian columns are the world-frame position.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSystem {
    pub class: SensorClass,
    pub jacobian: DMatrix<f64>,
    /// Inverse measurement covariance.
    pub weight: DMatrix<f64>,
    pub labels: Vec<Label>,
}

impl SensorSystem {
    /// Position block of `(JᵀWJ)⁺` in the world frame.
    pub fn position_covariance(&self) -> Matrix3<f64> {
        normal_inverse(&self.jacobian, &self.weight).fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Position rows of `(JᵀWJ)⁺ JᵀW`, world frame.
    pub fn sensitivity(&self) -> DMatrix<f64> {
        let b = normal_inverse(&self.jacobian, &self.weight) * self.jacobian.transpose() * &self.weight;
        b.rows(0, 3).into_owned()
    }
}

/// `(JᵀWJ)⁻¹`, or the pseudo-inverse when rank-deficient.
pub fn normal_inverse(j: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.transpose() * w * j;
    let n = 0.5 * (&n + n.transpose());
    if let Some(ch) = n.clone().cholesky() {
        let d = ch.l_dirty().diagonal();
        if d.min() > 1e-9 * d.max() {
            return ch.inverse();
        }
    }
    let scale = n.abs().max().max(1e-300);
    n.pseudo_inverse(1e-12 * scale).unwrap_or_else(|_| DMatrix::zeros(j.ncols(), j.ncols()))
}

/// Sum of the per-sensor position covariances; `None` when no sensor
/// contributes.
pub fn combine_covariances<'a>(systems: impl IntoIterator<Item = &'a SensorSystem>) -> Option<Matrix3<f64>> {
    systems
        .into_iter()
        .map(SensorSystem::position_covariance)
        .reduce(|a, b| a + b)
}

/// Per-sensor position covariances of the newest keyframe and their sum,
/// in world and ENU axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorCovariance {
    pub gnss: Option<Matrix3<f64>>,
    pub imu: Option<Matrix3<f64>>,
    pub vision: Option<Matrix3<f64>>,
    pub world: Matrix3<f64>,
    pub enu: Matrix3<f64>,
    /// World-to-ENU rotation used for `enu`.
    pub world_to_enu: Matrix3<f64>,
}

impl SlidingWindow {
    /// Per-sensor systems at the newest keyframe, in G, I, V order. A sensor
    /// without non-excluded measurements there yields `None`.
    pub fn sensor_systems(&self) -> Result<[Option<SensorSystem>; 3], SolverError> {
        let n = self.keyframes.len();
        let k = self.keyframes.back().ok_or(SolverError::EmptyWindow)?;

        let gnss = {
            let obs: Vec<_> = k
                .satellites
                .iter()
                .zip(&k.gnss_excluded)
                .filter(|(_, e)| !**e)
                .map(|(o, _)| o)
                .collect();
            let mut clocks: Vec<usize> = obs.iter().map(|o| o.sat.constellation.index()).collect();
            clocks.sort_unstable();
            clocks.dedup();
            (!obs.is_empty())
                .then(|| -> Result<SensorSystem, SolverError> {
                    let mut j = DMatrix::zeros(obs.len(), 3 + clocks.len());
                    let mut w = DMatrix::zeros(obs.len(), obs.len());
                    for (r, o) in obs.iter().enumerate() {
                        let e = pseudorange_residual(o, &k.state, self.psi, &self.anchor)?;
                        for c in 0..3 {
                            j[(r, c)] = e.jacobian[c];
                        }
                        let col = clocks.iter().position(|c| *c == o.sat.constellation.index()).unwrap_or(0);
                        j[(r, 3 + col)] = e.jacobian[3 + o.sat.constellation.index()];
                        w[(r, r)] = 1.0 / (o.sigma * o.sigma);
                    }
                    debug_assert!(clocks.len() <= NUM_CONSTELLATIONS);
                    Ok(SensorSystem {
                        class: SensorClass::Gnss,
                        jacobian: j,
                        weight: w,
                        labels: obs.iter().map(|o| Label::Satellite(o.sat)).collect(),
                    })
                })
                .transpose()?
        };

        let imu = match (&k.link, n) {
            (Some(l), n) if n >= 2 && !l.excluded => {
                let s0 = &self.keyframes[n - 2].state;
                let jac = preint_jacobian(&l.preint, s0, &k.state, &self.gravity);
                let j = DMatrix::from_fn(INERTIAL_DIM, INERTIAL_DIM, |r, c| jac[(r, ERROR_DIM + c)]);
                let cov = DMatrix::from_column_slice(15, 15, l.preint.covariance.as_slice());
                let w = cov.clone().try_inverse().unwrap_or_else(|| {
                    cov.pseudo_inverse(1e-300).unwrap_or_else(|_| DMatrix::zeros(15, 15))
                });
                Some(SensorSystem {
                    class: SensorClass::Imu,
                    jacobian: j,
                    weight: 0.5 * (&w + w.transpose()),
                    labels: (0..15).map(|c| Label::Preint(c as u8)).collect(),
                })
            }
            _ => None,
        };

        let vision = if k.vision_excluded {
            None
        } else {
            let mut rows = Vec::new();
            for t in self.features.values() {
                if t.param.anchor == k.id {
                    continue;
                }
                let Some(o) = t.observations.get(&k.id) else { continue };
                let Some(ai) = self.index_of(t.param.anchor) else { continue };
                let Ok(e) = visual_residual(&o.pixel, &t.param, &self.keyframes[ai].state, &k.state, &self.camera) else {
                    continue;
                };
                rows.push((t.param.id, e.d_pos, o.sigma));
            }
            (!rows.is_empty()).then(|| {
                let m = 2 * rows.len();
                let mut j = DMatrix::zeros(m, 3);
                let mut w = DMatrix::zeros(m, m);
                let mut labels = Vec::with_capacity(m);
                for (i, (id, d, s)) in rows.iter().enumerate() {
                    for a in 0..2 {
                        for c in 0..3 {
                            j[(2 * i + a, c)] = d[(a, c)];
                        }
                        w[(2 * i + a, 2 * i + a)] = 1.0 / (s * s);
                        labels.push(Label::Feature { id: *id, axis: a as u8 });
                    }
                }
                SensorSystem {
                    class: SensorClass::Vision,
                    jacobian: j,
                    weight: w,
                    labels,
                }
            })
        };
        Ok([gnss, imu, vision])
    }

    /// Position covariance of the newest keyframe as the sum of independent
    /// per-sensor contributions.
    pub fn state_covariance(&self) -> Result<SensorCovariance, SolverError> {
        let [g, i, v] = self.sensor_systems()?;
        let world = combine_covariances(g.iter().chain(&i).chain(&v))
            .ok_or_else(|| SolverError::NotObservable("no sensor constrains the newest keyframe".into()))?;
        let eig = world.symmetric_eigenvalues();
        if !(eig.min() > 0.0) {
            return Err(SolverError::NotObservable(format!(
                "combined covariance has eigenvalue {:.3e}",
                eig.min()
            )));
        }
        let r = rotation_from_yaw(self.psi)?.matrix();
        Ok(SensorCovariance {
            gnss: g.as_ref().map(SensorSystem::position_covariance),
            imu: i.as_ref().map(SensorSystem::position_covariance),
            vision: v.as_ref().map(SensorSystem::position_covariance),
            world,
            enu: r * world * r.transpose(),
            world_to_enu: r,
        })
    }
}
