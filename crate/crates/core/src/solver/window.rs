use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

use super::{SolverError, WindowConfig};
use crate::factors::{
    decorrelate, pseudorange_residual, visual_residual, whiten, CameraModel, FeatureParam, Label,
    SatelliteObservation, SensorClass, WhitenedResidual,
};
use crate::geom::AnchorGeodesy;
use crate::preint::{preint_residual, Matrix15, PreintegratedImu};
use crate::scenario::MeasurementEpoch;
use crate::state::{gravity, ImuState, SatId, ERROR_DIM};

/// A pixel measurement with its noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub pixel: Vector2<f64>,
    pub sigma: f64,
}

/// A triangulated feature and every observation of it inside the window,
/// keyed by keyframe id. The anchor observation is included but is not a
/// residual.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedFeature {
    pub param: FeatureParam,
    pub observations: BTreeMap<u64, Observation>,
}

impl TrackedFeature {
    /// Whether the feature has at least one residual.
    pub fn is_active(&self) -> bool {
        self.observations.keys().any(|k| *k != self.param.anchor)
    }
}

/// Pre-integrated IMU segment ending at a keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuLink {
    pub preint: PreintegratedImu,
    /// Replaced by a weak motion bridge after exclusion.
    pub excluded: bool,
    pub(crate) sqrt_info: Matrix15,
}

impl ImuLink {
    pub fn new(preint: PreintegratedImu) -> Self {
        let sqrt_info = sqrt_information(&preint.covariance);
        Self {
            preint,
            excluded: false,
            sqrt_info,
        }
    }

    pub(crate) fn refresh(&mut self) {
        self.sqrt_info = sqrt_information(&self.preint.covariance);
    }
}

/// `L⁻¹` for `Σ = L Lᵀ`.
fn sqrt_information(cov: &Matrix15) -> Matrix15 {
    let mut c = *cov;
    for attempt in 0..6 {
        if let Some(ch) = c.cholesky() {
            if let Some(inv) = ch.l().try_inverse() {
                return inv;
            }
        }
        let jitter = 1e-15 * 10f64.powi(attempt) * cov.diagonal().max().max(1e-12);
        c += Matrix15::identity() * jitter;
    }
    Matrix15::identity()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe {
    /// Epoch index.
    pub id: u64,
    pub time: f64,
    pub state: ImuState,
    pub satellites: Vec<SatelliteObservation>,
    pub gnss_excluded: Vec<bool>,
    /// Segment from the previous keyframe; `None` for the oldest keyframe.
    pub link: Option<ImuLink>,
    pub vision_excluded: bool,
}

/// Quadratic prior on the oldest keyframe and the yaw offset:
/// `½ dxᵀ H dx + gᵀ dx` with `dx = [x ⊟ x̄, ψ − ψ̄]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalPrior {
    pub keyframe: u64,
    pub state: ImuState,
    pub psi: f64,
    pub information: DMatrix<f64>,
    pub gradient: DVector<f64>,
}

impl MarginalPrior {
    pub(crate) fn delta(&self, state: &ImuState, psi: f64) -> DVector<f64> {
        let d = state.minus(&self.state);
        let mut dx = DVector::zeros(ERROR_DIM + 1);
        dx.rows_mut(0, ERROR_DIM).copy_from(&d);
        dx[ERROR_DIM] = psi - self.psi;
        dx
    }

    pub(crate) fn cost(&self, state: &ImuState, psi: f64) -> f64 {
        let dx = self.delta(state, psi);
        0.5 * dx.dot(&(&self.information * &dx)) + self.gradient.dot(&dx)
    }
}

/// Sliding window of keyframes with their factors.
#[derive(Clone, Debug)]
pub struct SlidingWindow {
    pub config: WindowConfig,
    pub anchor: AnchorGeodesy,
    pub camera: CameraModel,
    pub keyframes: VecDeque<Keyframe>,
    pub features: BTreeMap<u64, TrackedFeature>,
    /// Observations of features not yet triangulated.
    pub pending: BTreeMap<u64, BTreeMap<u64, Observation>>,
    pub psi: f64,
    pub prior: Option<MarginalPrior>,
    pub excluded_satellites: BTreeSet<SatId>,
    initial: ImuState,
    initial_psi: f64,
    pub(crate) gravity: Vector3<f64>,
    pub(crate) position_covariance: Option<Matrix3<f64>>,
}

impl SlidingWindow {
    /// Empty window whose first keyframe starts at `initial` with yaw offset
    /// `psi`, both weighted by the configured prior sigmas.
    pub fn new(config: WindowConfig, anchor: AnchorGeodesy, camera: CameraModel, initial: ImuState, psi: f64) -> Self {
        Self {
            config,
            anchor,
            camera,
            keyframes: VecDeque::new(),
            features: BTreeMap::new(),
            pending: BTreeMap::new(),
            psi,
            prior: None,
            excluded_satellites: BTreeSet::new(),
            initial,
            initial_psi: psi,
            gravity: gravity(),
            position_covariance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn newest(&self) -> Option<&Keyframe> {
        self.keyframes.back()
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        let first = self.keyframes.front()?.id;
        let i = id.checked_sub(first)? as usize;
        (self.keyframes.get(i)?.id == id).then_some(i)
    }

    /// Marginal covariance of the newest position from the last solve.
    pub fn position_covariance(&self) -> Option<Matrix3<f64>> {
        self.position_covariance
    }

    fn initial_prior(&self, id: u64) -> MarginalPrior {
        let s = self.config.prior.state_sigmas();
        let mut info = DMatrix::zeros(ERROR_DIM + 1, ERROR_DIM + 1);
        for (i, sig) in s.iter().enumerate() {
            info[(i, i)] = 1.0 / (sig * sig);
        }
        info[(ERROR_DIM, ERROR_DIM)] = 1.0 / (self.config.prior.yaw * self.config.prior.yaw);
        MarginalPrior {
            keyframe: id,
            state: self.initial,
            psi: self.initial_psi,
            information: info,
            gradient: DVector::zeros(ERROR_DIM + 1),
        }
    }

    /// Appends a keyframe. After the first keyframe a pre-integrated segment
    /// from the previous keyframe is required; the new state is predicted
    /// from it. The oldest keyframe is marginalized first when the window is
    /// full.
    pub fn add_keyframe(&mut self, epoch: &MeasurementEpoch, preint: Option<PreintegratedImu>) -> Result<(), SolverError> {
        let (state, link) = match self.keyframes.back() {
            None => (self.initial, None),
            Some(last) => {
                if !(epoch.time > last.time) {
                    return Err(SolverError::TimeRegression {
                        last: last.time,
                        got: epoch.time,
                    });
                }
                let p = preint.ok_or(SolverError::MissingPreint)?;
                (p.predict(&last.state, &self.gravity), Some(ImuLink::new(p)))
            }
        };
        if self.keyframes.is_empty() {
            self.prior = Some(self.initial_prior(epoch.index));
        } else if self.keyframes.len() >= self.config.capacity {
            self.slide()?;
        }
        let gnss_excluded = epoch
            .satellites
            .iter()
            .map(|s| self.excluded_satellites.contains(&s.sat))
            .collect();
        self.keyframes.push_back(Keyframe {
            id: epoch.index,
            time: epoch.time,
            state,
            satellites: epoch.satellites.clone(),
            gnss_excluded,
            link,
            vision_excluded: false,
        });
        for f in &epoch.features {
            let obs = Observation {
                pixel: f.pixel,
                sigma: f.sigma,
            };
            match self.features.get_mut(&f.id) {
                Some(t) => {
                    t.observations.insert(epoch.index, obs);
                }
                None => {
                    self.pending.entry(f.id).or_default().insert(epoch.index, obs);
                }
            }
        }
        self.triangulate_pending();
        Ok(())
    }

    /// Triangulates pending features with at least two observations and
    /// enough parallax, using the current keyframe estimates.
    pub fn triangulate_pending(&mut self) {
        let ids: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, o)| o.len() >= 2)
            .map(|(id, _)| *id)
            .collect();
        for id in ids {
            let obs = &self.pending[&id];
            if let Some(param) = self.triangulate(id, obs) {
                let observations = self.pending.remove(&id).unwrap_or_default();
                self.features.insert(id, TrackedFeature { param, observations });
            }
        }
    }

    fn triangulate(&self, id: u64, obs: &BTreeMap<u64, Observation>) -> Option<FeatureParam> {
        let cam = &self.camera;
        let mut rays = Vec::with_capacity(obs.len());
        for (kf, o) in obs {
            let state = &self.keyframes[self.index_of(*kf)?].state;
            let center = cam.camera_to_world(&Vector3::zeros(), state);
            let dir = state.attitude.rotate(&cam.rotation.inverse().rotate(&cam.bearing(&o.pixel)));
            rays.push((*kf, center, dir));
        }
        let d0 = rays[0].2;
        let parallax = rays[1..]
            .iter()
            .map(|r| d0.dot(&r.2).clamp(-1.0, 1.0).acos())
            .fold(0.0, f64::max);
        if parallax < self.config.min_parallax {
            return None;
        }
        let mut a = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for (_, c, d) in &rays {
            let m = Matrix3::identity() - d * d.transpose();
            a += m;
            b += m * c;
        }
        let x = a.try_inverse()? * b;
        let anchor = rays[0].0;
        let anchor_state = &self.keyframes[self.index_of(anchor)?].state;
        let bearing = cam.bearing(&obs[&anchor].pixel);
        let depth = cam.world_to_camera(&x, anchor_state).dot(&bearing);
        for (kf, _, _) in &rays {
            let s = &self.keyframes[self.index_of(*kf)?].state;
            if cam.world_to_camera(&x, s).z <= 0.1 {
                return None;
            }
        }
        if !(0.5..=1000.0).contains(&depth) {
            return None;
        }
        Some(FeatureParam {
            id,
            anchor,
            inverse_depth: 1.0 / depth,
            bearing,
        })
    }

    /// Marginalizes the oldest keyframe into a dense prior on the next
    /// keyframe and the yaw offset. Features anchored in the dropped frame
    /// are re-anchored at their next observation.
    pub fn slide(&mut self) -> Result<(), SolverError> {
        if self.keyframes.is_empty() {
            return Err(SolverError::EmptyWindow);
        }
        if self.keyframes.len() == 1 {
            self.keyframes.clear();
            self.features.clear();
            self.pending.clear();
            self.prior = None;
            return Ok(());
        }
        let prior = self.marginal_prior()?;
        let old = self.keyframes.pop_front().ok_or(SolverError::EmptyWindow)?;
        if let Some(k) = self.keyframes.front_mut() {
            k.link = None;
        }
        self.prior = Some(prior);

        let cam = self.camera;
        let ids: Vec<u64> = self.features.keys().copied().collect();
        for id in ids {
            let mut t = self.features.remove(&id).unwrap_or_else(|| unreachable!());
            let point = (t.param.anchor == old.id).then(|| t.param.world_point(&old.state, &cam));
            t.observations.remove(&old.id);
            if let Some(x) = point {
                let next = t.observations.keys().next().copied();
                let reanchored = next.and_then(|a| {
                    let s = &self.keyframes[self.index_of(a)?].state;
                    let p_c = cam.world_to_camera(&x, s);
                    (p_c.z > 0.1).then(|| FeatureParam {
                        id,
                        anchor: a,
                        inverse_depth: 1.0 / p_c.norm(),
                        bearing: p_c.normalize(),
                    })
                });
                match reanchored {
                    Some(param) if t.observations.len() >= 2 => {
                        t.param = param;
                    }
                    _ => {
                        self.demote(id, t.observations);
                        continue;
                    }
                }
            }
            if t.is_active() {
                self.features.insert(id, t);
            } else {
                self.demote(id, t.observations);
            }
        }
        for obs in self.pending.values_mut() {
            obs.remove(&old.id);
        }
        self.pending.retain(|_, o| !o.is_empty());
        Ok(())
    }

    fn demote(&mut self, id: u64, observations: BTreeMap<u64, Observation>) {
        if !observations.is_empty() {
            self.pending.insert(id, observations);
        }
    }

    /// Schur complement of the factors touching the oldest keyframe onto the
    /// second keyframe and the yaw offset.
    fn marginal_prior(&self) -> Result<MarginalPrior, SolverError> {
        const D: usize = 2 * ERROR_DIM + 1;
        let mut h = DMatrix::zeros(D, D);
        let mut b = DVector::zeros(D);
        let k0 = &self.keyframes[0];
        let k1 = &self.keyframes[1];
        let psi_col = 2 * ERROR_DIM;
        if let Some(p) = &self.prior {
            let dx = p.delta(&k0.state, self.psi);
            let g = &p.information * &dx + &p.gradient;
            let idx: Vec<usize> = (0..ERROR_DIM).chain([psi_col]).collect();
            for (a, ia) in idx.iter().enumerate() {
                b[*ia] -= g[a];
                for (c, ic) in idx.iter().enumerate() {
                    h[(*ia, *ic)] += p.information[(a, c)];
                }
            }
        }
        let mut acc = |idx: &[usize], j: &DMatrix<f64>, r: &DVector<f64>| {
            super::optimize::accumulate(&mut h, &mut b, idx, j, r);
        };
        self.gnss_factor(0, 0, psi_col, &mut acc)?;
        self.link_factors(1, 0, ERROR_DIM, &mut acc);

        let keep: Vec<usize> = (ERROR_DIM..D).collect();
        let drop: Vec<usize> = (0..ERROR_DIM).collect();
        let hdd = h.select_rows(&drop).select_columns(&drop);
        let hkd = h.select_rows(&keep).select_columns(&drop);
        let hkk = h.select_rows(&keep).select_columns(&keep);
        let bd = b.select_rows(&drop);
        let bk = b.select_rows(&keep);
        let chol = hdd.clone().cholesky().ok_or_else(|| SolverError::Singular {
            block: format!("keyframe {} during marginalization", k0.id),
            condition: f64::INFINITY,
        })?;
        let x = chol.solve(&hkd.transpose());
        let y = chol.solve(&bd);
        let mut info = hkk - &hkd * x;
        info = 0.5 * (&info + info.transpose());
        let rhs = bk - &hkd * y;
        Ok(MarginalPrior {
            keyframe: k1.id,
            state: k1.state,
            psi: self.psi,
            information: info,
            gradient: -rhs,
        })
    }

    /// Marks a satellite excluded in every epoch of the window and in future
    /// epochs.
    pub fn exclude_satellite(&mut self, sat: SatId) {
        self.excluded_satellites.insert(sat);
        for k in self.keyframes.iter_mut() {
            for (o, e) in k.satellites.iter().zip(k.gnss_excluded.iter_mut()) {
                if o.sat == sat {
                    *e = true;
                }
            }
        }
    }

    /// Re-admits a satellite for the newest and future epochs.
    pub fn readmit_satellite(&mut self, sat: SatId) {
        self.excluded_satellites.remove(&sat);
        if let Some(k) = self.keyframes.back_mut() {
            for (o, e) in k.satellites.iter().zip(k.gnss_excluded.iter_mut()) {
                if o.sat == sat {
                    *e = false;
                }
            }
        }
    }

    /// Replaces the IMU factor ending at keyframe `id` with a motion bridge.
    pub fn exclude_imu(&mut self, id: u64) -> bool {
        let Some(i) = self.index_of(id) else { return false };
        match self.keyframes[i].link.as_mut() {
            Some(l) if !l.excluded => {
                l.excluded = true;
                true
            }
            _ => false,
        }
    }

    /// Drops every feature observation of keyframe `id`.
    pub fn exclude_vision(&mut self, id: u64) -> bool {
        let Some(i) = self.index_of(id) else { return false };
        if self.keyframes[i].vision_excluded {
            return false;
        }
        self.keyframes[i].vision_excluded = true;
        let ids: Vec<u64> = self.features.keys().copied().collect();
        for fid in ids {
            let Some(mut t) = self.features.remove(&fid) else { continue };
            t.observations.remove(&id);
            if t.param.anchor == id || !t.is_active() {
                self.demote(fid, t.observations);
            } else {
                self.features.insert(fid, t);
            }
        }
        for obs in self.pending.values_mut() {
            obs.remove(&id);
        }
        self.pending.retain(|_, o| !o.is_empty());
        true
    }

    /// Whitened residuals of the last `m` keyframes, one entry per epoch and
    /// sensor class; excluded measurements are left out.
    pub fn windowed_residuals(&self, m: usize) -> Result<Vec<WhitenedResidual>, SolverError> {
        let n = self.keyframes.len();
        let mut out = Vec::new();
        for i in n.saturating_sub(m)..n {
            let k = &self.keyframes[i];
            let mut raw = Vec::new();
            let mut sig = Vec::new();
            let mut labels = Vec::new();
            for (o, ex) in k.satellites.iter().zip(&k.gnss_excluded) {
                if *ex {
                    continue;
                }
                let e = pseudorange_residual(o, &k.state, self.psi, &self.anchor)?;
                raw.push(e.residual);
                sig.push(o.sigma);
                labels.push(Label::Satellite(o.sat));
            }
            if !raw.is_empty() {
                out.push(push_whitened(SensorClass::Gnss, k.id, raw, sig, labels)?);
            }
            if let Some(l) = k.link.as_ref().filter(|l| !l.excluded) {
                let r = preint_residual(&l.preint, &self.keyframes[i - 1].state, &k.state, &self.gravity);
                let cov = DMatrix::from_column_slice(15, 15, l.preint.covariance.as_slice());
                let r = DVector::from_column_slice(r.as_slice());
                if let Ok((d, s)) = decorrelate(&r, &cov) {
                    let labels = (0..15).map(|c| Label::Preint(c as u8)).collect();
                    out.push(push_whitened(SensorClass::Imu, k.id, d.as_slice().to_vec(), s.as_slice().to_vec(), labels)?);
                }
            }
            if !k.vision_excluded {
                let mut raw = Vec::new();
                let mut sig = Vec::new();
                let mut labels = Vec::new();
                for t in self.features.values() {
                    if t.param.anchor == k.id {
                        continue;
                    }
                    let Some(o) = t.observations.get(&k.id) else { continue };
                    let Some(ai) = self.index_of(t.param.anchor) else { continue };
                    let Ok(e) = visual_residual(&o.pixel, &t.param, &self.keyframes[ai].state, &k.state, &self.camera)
                    else {
                        continue;
                    };
                    for axis in 0..2 {
                        raw.push(e.residual[axis]);
                        sig.push(o.sigma);
                        labels.push(Label::Feature { id: t.param.id, axis: axis as u8 });
                    }
                }
                if !raw.is_empty() {
                    out.push(push_whitened(SensorClass::Vision, k.id, raw, sig, labels)?);
                }
            }
        }
        Ok(out)
    }
}

fn push_whitened(
    source: SensorClass,
    epoch: u64,
    raw: Vec<f64>,
    sigma: Vec<f64>,
    labels: Vec<Label>,
) -> Result<WhitenedResidual, SolverError> {
    Ok(whiten(source, epoch, DVector::from_vec(raw), DVector::from_vec(sigma), labels)?)
}
