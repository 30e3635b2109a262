use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::FactorError;
use crate::geom::{skew, Rotation};
use crate::state::ImuState;

/// Pinhole camera with body-to-camera extrinsics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// `R_b^c`: rotates body-frame vectors into the camera frame.
    pub rotation: Rotation,
    /// `t_b^c`: body origin expressed in the camera frame (m).
    pub translation: Vector3<f64>,
}

impl CameraModel {
    /// Builds a camera from its mounting: the camera axes expressed in the
    /// body frame (`R_c^b`) and the camera center in the body frame.
    pub fn from_mount(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        size: (f64, f64),
        camera_to_body: Rotation,
        center_in_body: Vector3<f64>,
    ) -> Result<Self, FactorError> {
        let rotation = camera_to_body.inverse();
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width: size.0,
            height: size.1,
            rotation,
            translation: -rotation.rotate(&center_in_body),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), FactorError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(FactorError::InvalidCamera("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx <= self.width && self.cy >= 0.0 && self.cy <= self.height) {
            return Err(FactorError::InvalidCamera("principal point outside the image"));
        }
        Ok(())
    }

    pub fn in_bounds(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x < self.width && px.y >= 0.0 && px.y < self.height
    }

    /// Camera-frame coordinates of a world point seen from `state`.
    pub fn world_to_camera(&self, x_w: &Vector3<f64>, state: &ImuState) -> Vector3<f64> {
        let p_b = state.attitude.inverse().rotate(&(x_w - state.position));
        self.rotation.rotate(&p_b) + self.translation
    }

    /// World coordinates of a camera-frame point seen from `state`.
    pub fn camera_to_world(&self, p_c: &Vector3<f64>, state: &ImuState) -> Vector3<f64> {
        let p_b = self.rotation.inverse().rotate(&(p_c - self.translation));
        state.attitude.rotate(&p_b) + state.position
    }

    /// Unit bearing in the camera frame of a pixel.
    pub fn bearing(&self, px: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0).normalize()
    }
}

/// Inverse-depth feature anchored in the frame where it was first observed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureParam {
    pub id: u64,
    /// Keyframe id of the anchor frame.
    pub anchor: u64,
    /// Inverse distance along the bearing (1/m).
    pub inverse_depth: f64,
    /// Unit bearing in the anchor camera frame.
    pub bearing: Vector3<f64>,
}

impl FeatureParam {
    pub fn point_in_anchor(&self) -> Vector3<f64> {
        self.bearing / self.inverse_depth
    }

    pub fn world_point(&self, anchor_state: &ImuState, cam: &CameraModel) -> Vector3<f64> {
        cam.camera_to_world(&self.point_in_anchor(), anchor_state)
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project_camera_point(p_c: &Vector3<f64>, cam: &CameraModel) -> Result<Vector2<f64>, FactorError> {
    if !(p_c.z > 0.0) {
        return Err(FactorError::BehindCamera(p_c.z));
    }
    Ok(Vector2::new(cam.fx * p_c.x / p_c.z + cam.cx, cam.fy * p_c.y / p_c.z + cam.cy))
}

/// Projects a world point into the image of the camera carried by `state`.
pub fn project(x_w: &Vector3<f64>, state: &ImuState, cam: &CameraModel) -> Result<Vector2<f64>, FactorError> {
    project_camera_point(&cam.world_to_camera(x_w, state), cam)
}

fn projection_jacobian(p_c: &Vector3<f64>, cam: &CameraModel) -> Matrix2x3<f64> {
    let iz = 1.0 / p_c.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p_c.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p_c.y * iz * iz,
    )
}

/// Reprojection residual and its Jacobian blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualEval {
    /// Observed minus predicted pixel.
    pub residual: Vector2<f64>,
    pub d_pos_anchor: Matrix2x3<f64>,
    pub d_att_anchor: Matrix2x3<f64>,
    pub d_pos: Matrix2x3<f64>,
    pub d_att: Matrix2x3<f64>,
    pub d_inverse_depth: Vector2<f64>,
}

/// Residual of a feature anchored in `state_i` and observed at pixel `obs`
/// in `state_j`.
pub fn visual_residual(
    obs: &Vector2<f64>,
    feature: &FeatureParam,
    state_i: &ImuState,
    state_j: &ImuState,
    cam: &CameraModel,
) -> Result<VisualEval, FactorError> {
    let r_cb: Matrix3<f64> = cam.rotation.inverse().matrix();
    let r_bc: Matrix3<f64> = cam.rotation.matrix();
    let ri = state_i.attitude.matrix();
    let rj = state_j.attitude.matrix();

    let p_ci = feature.point_in_anchor();
    if !(p_ci.z > 0.0) {
        return Err(FactorError::BehindCamera(p_ci.z));
    }
    let p_bi = r_cb * (p_ci - cam.translation);
    let x_w = ri * p_bi + state_i.position;
    let p_bj = rj.transpose() * (x_w - state_j.position);
    let p_cj = r_bc * p_bj + cam.translation;
    let predicted = project_camera_point(&p_cj, cam)?;

    let jp = -projection_jacobian(&p_cj, cam);
    let d_x = jp * r_bc * rj.transpose();
    let rho = feature.inverse_depth;
    Ok(VisualEval {
        residual: obs - predicted,
        d_pos_anchor: d_x,
        d_att_anchor: -d_x * ri * skew(&p_bi),
        d_pos: -d_x,
        d_att: jp * r_bc * skew(&p_bj),
        d_inverse_depth: d_x * ri * r_cb * (-feature.bearing / (rho * rho)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::ErrorVector;
    use proptest::prelude::*;

    fn forward_camera() -> CameraModel {
        CameraModel {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    fn side_camera() -> CameraModel {
        let r_cb = Rotation::from_matrix(&Matrix3::new(-1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, -1.0, 0.0));
        CameraModel::from_mount(400.0, 400.0, 320.0, 240.0, (640.0, 480.0), r_cb, Vector3::new(0.1, -0.05, 0.2)).unwrap()
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let cam = forward_camera();
        let px = project_camera_point(&Vector3::new(0.0, 0.0, 2.0), &cam).unwrap();
        assert_eq!(px, Vector2::new(320.0, 240.0));
    }

    #[test]
    fn pinhole_hand_computation() {
        // 400·0.2/1 + 320 = 400, 400·(−0.1)/1 + 240 = 200
        let cam = forward_camera();
        let px = project_camera_point(&Vector3::new(0.2, -0.1, 1.0), &cam).unwrap();
        assert!((px - Vector2::new(400.0, 200.0)).norm() < 1e-9);
    }

    #[test]
    fn negative_depth_fails() {
        let cam = forward_camera();
        assert!(matches!(
            project_camera_point(&Vector3::new(0.0, 0.0, -1.0), &cam),
            Err(FactorError::BehindCamera(_))
        ));
    }

    #[test]
    fn mount_round_trip() {
        let cam = side_camera();
        let s = ImuState {
            position: Vector3::new(1.0, 2.0, 0.5),
            attitude: Rotation::exp(&Vector3::new(0.0, 0.0, 0.7)),
            ..Default::default()
        };
        let x = Vector3::new(3.0, -4.0, 2.0);
        let back = cam.camera_to_world(&cam.world_to_camera(&x, &s), &s);
        assert!((back - x).norm() < 1e-12);
        // the camera looks along body −y
        let ahead = cam.world_to_camera(&(s.position + s.attitude.rotate(&Vector3::new(0.1, -5.0, 0.2))), &s);
        assert!((ahead - Vector3::new(0.0, 0.0, 4.95)).norm() < 1e-12);
    }

    fn pair() -> (ImuState, ImuState, FeatureParam, Vector2<f64>) {
        let cam = side_camera();
        let si = ImuState {
            position: Vector3::new(0.0, 0.0, 1.0),
            attitude: Rotation::exp(&Vector3::new(0.01, -0.02, 0.3)),
            ..Default::default()
        };
        let sj = ImuState {
            position: Vector3::new(4.0, 1.0, 1.1),
            attitude: Rotation::exp(&Vector3::new(-0.01, 0.01, 0.45)),
            ..Default::default()
        };
        let x_w = Vector3::new(3.0, -12.0, 2.5);
        let p_ci = cam.world_to_camera(&x_w, &si);
        let f = FeatureParam {
            id: 7,
            anchor: 0,
            inverse_depth: 1.0 / p_ci.norm(),
            bearing: p_ci.normalize(),
        };
        let obs = project(&x_w, &sj, &cam).unwrap();
        (si, sj, f, obs)
    }

    #[test]
    fn noiseless_observation_has_zero_residual() {
        let (si, sj, f, obs) = pair();
        let e = visual_residual(&obs, &f, &si, &sj, &side_camera()).unwrap();
        assert!(e.residual.norm() < 1e-9);
    }

    #[test]
    fn pixel_offset_is_residual() {
        let (si, sj, f, obs) = pair();
        let e = visual_residual(&(obs + Vector2::new(5.0, 0.0)), &f, &si, &sj, &side_camera()).unwrap();
        assert!((e.residual - Vector2::new(5.0, 0.0)).norm() < 1e-9);
    }

    fn fd_check(si: ImuState, sj: ImuState, f: FeatureParam, obs: Vector2<f64>) -> f64 {
        let cam = side_camera();
        let e = visual_residual(&obs, &f, &si, &sj, &cam).unwrap();
        let h = 1e-6;
        let res = |a: &ImuState, b: &ImuState, f: &FeatureParam| visual_residual(&obs, f, a, b, &cam).unwrap().residual;
        let mut worst: f64 = 0.0;
        let mut cmp = |analytic: Vector2<f64>, fd: Vector2<f64>| {
            let scale = analytic.abs().max().max(fd.abs().max()).max(1.0);
            worst = worst.max((analytic - fd).abs().max() / scale);
        };
        for k in 0..6 {
            let idx = if k < 3 { k } else { k + 3 };
            let mut d = ErrorVector::zeros();
            d[idx] = h;
            let fd_i = (res(&si.plus(&d), &sj, &f) - res(&si.plus(&(-d)), &sj, &f)) / (2.0 * h);
            let fd_j = (res(&si, &sj.plus(&d), &f) - res(&si, &sj.plus(&(-d)), &f)) / (2.0 * h);
            let (ai, aj) = if k < 3 {
                (e.d_pos_anchor.column(k).into_owned(), e.d_pos.column(k).into_owned())
            } else {
                (e.d_att_anchor.column(k - 3).into_owned(), e.d_att.column(k - 3).into_owned())
            };
            cmp(ai, fd_i);
            cmp(aj, fd_j);
        }
        let hr = 1e-6 * f.inverse_depth;
        let mut fp = f;
        fp.inverse_depth += hr;
        let mut fm = f;
        fm.inverse_depth -= hr;
        let fd_rho = (res(&si, &sj, &fp) - res(&si, &sj, &fm)) / (2.0 * hr);
        // compare scaled by ρ so the check is unit-free
        cmp(e.d_inverse_depth * f.inverse_depth, fd_rho * f.inverse_depth);
        worst
    }

    #[test]
    fn jacobians_match_finite_differences_nominal() {
        let (si, sj, f, obs) = pair();
        assert!(fd_check(si, sj, f, obs) < 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn jacobians_match_finite_differences(
            di in proptest::collection::vec(-0.3f64..0.3, 9),
            dj in proptest::collection::vec(-0.3f64..0.3, 9),
            drho in 0.7f64..1.4,
        ) {
            let (si, sj, mut f, obs) = pair();
            let mut ei = ErrorVector::zeros();
            let mut ej = ErrorVector::zeros();
            for k in 0..9 {
                ei[k] = di[k];
                ej[k] = dj[k];
            }
            f.inverse_depth *= drho;
            let worst = fd_check(si.plus(&(ei * 0.3)), sj.plus(&(ej * 0.3)), f, obs);
            prop_assert!(worst < 1e-4, "worst relative error {worst}");
        }
    }
}
