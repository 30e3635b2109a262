use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector6};

use super::window::SlidingWindow;
use super::SolverError;
use crate::factors::{pseudorange_residual, visual_residual, PR_JAC_DIM};
use crate::geom::right_jacobian_inv;
use crate::preint::{preint_jacobian, preint_residual};
use crate::state::{ErrorVector, ImuState, Constellation, ERROR_DIM, IDX_BA, IDX_BG, IDX_CLK, IDX_DRIFT, IDX_P, IDX_TH, IDX_V, INERTIAL_DIM, NUM_CONSTELLATIONS};

/// Rows of a keyframe's position and attitude inside its error state.
const POSE_ROWS: [usize; 6] = [IDX_P, IDX_P + 1, IDX_P + 2, IDX_TH, IDX_TH + 1, IDX_TH + 2];

/// Half squared whitened norms per factor family.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassCosts {
    pub gnss: f64,
    pub imu: f64,
    pub vision: f64,
    /// Receiver clock process and motion bridges.
    pub motion: f64,
    pub prior: f64,
}

impl ClassCosts {
    pub fn total(&self) -> f64 {
        self.gnss + self.imu + self.vision + self.motion + self.prior
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: ClassCosts,
    pub converged: bool,
    pub damping: f64,
}

struct FeatBlock {
    h: f64,
    b: f64,
    /// Cross terms with the pose rows of each keyframe.
    cross: Vec<Vector6<f64>>,
    touched: Vec<usize>,
}

pub(crate) struct Normal {
    h: DMatrix<f64>,
    b: DVector<f64>,
    feats: Vec<FeatBlock>,
    feat_ids: Vec<u64>,
}

/// Adds `½‖r + J δ‖²` over the variables `idx` to `(H, b)` with `b = −∇`.
pub(crate) fn accumulate(h: &mut DMatrix<f64>, b: &mut DVector<f64>, idx: &[usize], j: &DMatrix<f64>, r: &DVector<f64>) {
    let jtj = j.tr_mul(j);
    let jtr = j.tr_mul(r);
    for (a, ia) in idx.iter().enumerate() {
        b[*ia] -= jtr[a];
        for (c, ic) in idx.iter().enumerate() {
            h[(*ia, *ic)] += jtj[(a, c)];
        }
    }
}

struct Snapshot {
    states: Vec<ImuState>,
    psi: f64,
    rho: Vec<(u64, f64)>,
}

impl SlidingWindow {
    /// Whitened pseudorange block of keyframe `i`; calls `f` with column
    /// indices, Jacobian and residual and returns the half squared norm.
    pub(crate) fn gnss_factor(
        &self,
        i: usize,
        base: usize,
        psi_col: usize,
        f: &mut dyn FnMut(&[usize], &DMatrix<f64>, &DVector<f64>),
    ) -> Result<f64, SolverError> {
        let k = &self.keyframes[i];
        let rows: Vec<_> = k
            .satellites
            .iter()
            .zip(&k.gnss_excluded)
            .filter(|(_, e)| !**e)
            .map(|(o, _)| o)
            .collect();
        if rows.is_empty() {
            return Ok(0.0);
        }
        let mut j = DMatrix::zeros(rows.len(), PR_JAC_DIM);
        let mut r = DVector::zeros(rows.len());
        for (row, o) in rows.iter().enumerate() {
            let e = pseudorange_residual(o, &k.state, self.psi, &self.anchor)?;
            let w = 1.0 / o.sigma;
            r[row] = e.residual * w;
            for c in 0..PR_JAC_DIM {
                j[(row, c)] = e.jacobian[c] * w;
            }
        }
        let mut idx: Vec<usize> = (0..3).map(|c| base + IDX_P + c).collect();
        idx.extend((0..NUM_CONSTELLATIONS).map(|c| base + IDX_CLK + c));
        idx.push(psi_col);
        f(&idx, &j, &r);
        Ok(0.5 * r.norm_squared())
    }

    /// Inertial (or bridge) and clock-process factors between keyframes
    /// `i − 1` and `i`. Returns `(inertial cost, motion cost)`.
    pub(crate) fn link_factors(
        &self,
        i: usize,
        base_prev: usize,
        base_cur: usize,
        f: &mut dyn FnMut(&[usize], &DMatrix<f64>, &DVector<f64>),
    ) -> (f64, f64) {
        let cur = &self.keyframes[i];
        let Some(link) = cur.link.as_ref() else { return (0.0, 0.0) };
        let prev = &self.keyframes[i - 1];
        let (s0, s1) = (&prev.state, &cur.state);
        let dt = cur.time - prev.time;
        let idx: Vec<usize> = (0..ERROR_DIM)
            .map(|c| base_prev + c)
            .chain((0..ERROR_DIM).map(|c| base_cur + c))
            .collect();

        let (mut imu, mut motion) = (0.0, 0.0);
        if link.excluded {
            let (j, r) = self.bridge(s0, s1, dt);
            f(&idx, &j, &r);
            motion += 0.5 * r.norm_squared();
        } else {
            let r = link.sqrt_info * preint_residual(&link.preint, s0, s1, &self.gravity);
            let jac = link.sqrt_info * preint_jacobian(&link.preint, s0, s1, &self.gravity);
            let j = DMatrix::from_column_slice(INERTIAL_DIM, 2 * ERROR_DIM, jac.as_slice());
            let r = DVector::from_column_slice(r.as_slice());
            f(&idx, &j, &r);
            imu += 0.5 * r.norm_squared();
        }

        let sc = 1.0 / (self.config.clock_walk * dt.sqrt());
        let sd = 1.0 / (self.config.drift_walk * dt.sqrt());
        let mut j = DMatrix::zeros(NUM_CONSTELLATIONS + 1, 2 * ERROR_DIM);
        let mut r = DVector::zeros(NUM_CONSTELLATIONS + 1);
        let d0 = s0.clock_drift * crate::state::SPEED_OF_LIGHT;
        let d1 = s1.clock_drift * crate::state::SPEED_OF_LIGHT;
        for c in Constellation::ALL {
            let n = c.index();
            r[n] = (s1.clock_range(c) - s0.clock_range(c) - d0 * dt) * sc;
            j[(n, ERROR_DIM + IDX_CLK + n)] = sc;
            j[(n, IDX_CLK + n)] = -sc;
            j[(n, IDX_DRIFT)] = -dt * sc;
        }
        let n = NUM_CONSTELLATIONS;
        r[n] = (d1 - d0) * sd;
        j[(n, ERROR_DIM + IDX_DRIFT)] = sd;
        j[(n, IDX_DRIFT)] = -sd;
        f(&idx, &j, &r);
        motion += 0.5 * r.norm_squared();
        (imu, motion)
    }

    /// Weak constant-velocity link used in place of an excluded IMU factor.
    fn bridge(&self, s0: &ImuState, s1: &ImuState, dt: f64) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.config.bridge_accel;
        let wp = 1.0 / (0.5 * a * dt * dt);
        let wv = 1.0 / (a * dt);
        let wt = 1.0 / (self.config.bridge_rate * dt);
        let wa = 1.0 / (self.config.imu_noise.accel_bias_walk * dt.sqrt());
        let wg = 1.0 / (self.config.imu_noise.gyro_bias_walk * dt.sqrt());
        let o = ERROR_DIM;
        let mut j = DMatrix::zeros(INERTIAL_DIM, 2 * ERROR_DIM);
        let mut r = DVector::zeros(INERTIAL_DIM);
        let rp = s1.position - s0.position - s0.velocity * dt;
        let rv = s1.velocity - s0.velocity;
        let rt = s0.attitude.inverse().compose(&s1.attitude).log();
        let jr = right_jacobian_inv(&rt);
        let jt0 = -jr * s1.attitude.matrix().transpose() * s0.attitude.matrix();
        for a in 0..3 {
            r[a] = rp[a] * wp;
            r[3 + a] = rv[a] * wv;
            r[6 + a] = rt[a] * wt;
            r[9 + a] = (s1.accel_bias[a] - s0.accel_bias[a]) * wa;
            r[12 + a] = (s1.gyro_bias[a] - s0.gyro_bias[a]) * wg;
            j[(a, o + IDX_P + a)] = wp;
            j[(a, IDX_P + a)] = -wp;
            j[(a, IDX_V + a)] = -dt * wp;
            j[(3 + a, o + IDX_V + a)] = wv;
            j[(3 + a, IDX_V + a)] = -wv;
            for c in 0..3 {
                j[(6 + a, o + IDX_TH + c)] = jr[(a, c)] * wt;
                j[(6 + a, IDX_TH + c)] = jt0[(a, c)] * wt;
            }
            j[(9 + a, o + IDX_BA + a)] = wa;
            j[(9 + a, IDX_BA + a)] = -wa;
            j[(12 + a, o + IDX_BG + a)] = wg;
            j[(12 + a, IDX_BG + a)] = -wg;
        }
        (j, r)
    }

    fn active_features(&self) -> Vec<u64> {
        self.features
            .iter()
            .filter(|(_, t)| t.is_active() && self.index_of(t.param.anchor).is_some())
            .map(|(id, _)| *id)
            .collect()
    }

    /// Evaluates every factor; with `linearize` also builds the normal
    /// equations.
    fn evaluate(&self, linearize: bool) -> Result<(ClassCosts, Option<Normal>), SolverError> {
        let n = self.keyframes.len();
        let dim = ERROR_DIM * n + 1;
        let psi_col = ERROR_DIM * n;
        let mut h = DMatrix::zeros(if linearize { dim } else { 0 }, if linearize { dim } else { 0 });
        let mut b = DVector::zeros(if linearize { dim } else { 0 });
        let mut costs = ClassCosts::default();

        if let Some(p) = &self.prior {
            let i = self.index_of(p.keyframe).ok_or(SolverError::EmptyWindow)?;
            let s = &self.keyframes[i].state;
            costs.prior = p.cost(s, self.psi);
            if linearize {
                let dx = p.delta(s, self.psi);
                let g = &p.information * &dx + &p.gradient;
                let idx: Vec<usize> = (0..ERROR_DIM).map(|c| ERROR_DIM * i + c).chain([psi_col]).collect();
                for (a, ia) in idx.iter().enumerate() {
                    b[*ia] -= g[a];
                    for (c, ic) in idx.iter().enumerate() {
                        h[(*ia, *ic)] += p.information[(a, c)];
                    }
                }
            }
        }

        {
            let mut acc = |idx: &[usize], j: &DMatrix<f64>, r: &DVector<f64>| {
                if linearize {
                    accumulate(&mut h, &mut b, idx, j, r);
                }
            };
            for i in 0..n {
                costs.gnss += self.gnss_factor(i, ERROR_DIM * i, psi_col, &mut acc)?;
                if i > 0 {
                    let (imu, motion) = self.link_factors(i, ERROR_DIM * (i - 1), ERROR_DIM * i, &mut acc);
                    costs.imu += imu;
                    costs.motion += motion;
                }
            }
        }

        let ids = self.active_features();
        let mut feats = Vec::new();
        for id in &ids {
            let t = &self.features[id];
            let ai = self.index_of(t.param.anchor).ok_or(SolverError::EmptyWindow)?;
            let mut blk = FeatBlock {
                h: 0.0,
                b: 0.0,
                cross: vec![Vector6::zeros(); n],
                touched: vec![ai],
            };
            for (kf, o) in &t.observations {
                if *kf == t.param.anchor {
                    continue;
                }
                let Some(oi) = self.index_of(*kf) else { continue };
                let e = match visual_residual(&o.pixel, &t.param, &self.keyframes[ai].state, &self.keyframes[oi].state, &self.camera) {
                    Ok(e) => e,
                    Err(_) if !linearize => {
                        costs.vision = f64::INFINITY;
                        continue;
                    }
                    Err(_) => continue,
                };
                let w = 1.0 / o.sigma;
                let r = e.residual * w;
                costs.vision += 0.5 * r.norm_squared();
                if !linearize {
                    continue;
                }
                let mut jx = nalgebra::Matrix2x6::<f64>::zeros();
                let mut jy = nalgebra::Matrix2x6::<f64>::zeros();
                jx.fixed_columns_mut::<3>(0).copy_from(&(e.d_pos_anchor * w));
                jx.fixed_columns_mut::<3>(3).copy_from(&(e.d_att_anchor * w));
                jy.fixed_columns_mut::<3>(0).copy_from(&(e.d_pos * w));
                jy.fixed_columns_mut::<3>(3).copy_from(&(e.d_att * w));
                let jr = e.d_inverse_depth * w;
                let blocks = [(ai, &jx), (oi, &jy)];
                for (ka, ja) in &blocks {
                    let ga = ja.tr_mul(&r);
                    for (p, row) in POSE_ROWS.iter().enumerate() {
                        b[ERROR_DIM * ka + row] -= ga[p];
                    }
                    for (kb, jb) in &blocks {
                        let m = ja.tr_mul(jb);
                        for (p, rp) in POSE_ROWS.iter().enumerate() {
                            for (q, rq) in POSE_ROWS.iter().enumerate() {
                                h[(ERROR_DIM * ka + rp, ERROR_DIM * kb + rq)] += m[(p, q)];
                            }
                        }
                    }
                    blk.cross[*ka] += ja.tr_mul(&jr);
                }
                if !blk.touched.contains(&oi) {
                    blk.touched.push(oi);
                }
                blk.h += jr.norm_squared();
                blk.b -= jr.dot(&r);
            }
            feats.push(blk);
        }
        let normal = linearize.then(|| Normal {
            h,
            b,
            feats,
            feat_ids: ids,
        });
        Ok((costs, normal))
    }

    /// Reduced system after eliminating inverse depths, with damping `mu`.
    fn schur(&self, nrm: &Normal, mu: f64) -> (DMatrix<f64>, DVector<f64>) {
        let mut s = nrm.h.clone();
        for i in 0..s.nrows() {
            s[(i, i)] += mu * nrm.h[(i, i)].max(1e-9);
        }
        let mut rhs = nrm.b.clone();
        for f in &nrm.feats {
            let hf = f.h * (1.0 + mu);
            if hf <= 1e-12 {
                continue;
            }
            for &ka in &f.touched {
                let ca = f.cross[ka];
                for (p, rp) in POSE_ROWS.iter().enumerate() {
                    rhs[ERROR_DIM * ka + rp] -= ca[p] * f.b / hf;
                }
                for &kb in &f.touched {
                    let cb = f.cross[kb];
                    for (p, rp) in POSE_ROWS.iter().enumerate() {
                        for (q, rq) in POSE_ROWS.iter().enumerate() {
                            s[(ERROR_DIM * ka + rp, ERROR_DIM * kb + rq)] -= ca[p] * cb[q] / hf;
                        }
                    }
                }
            }
        }
        (s, rhs)
    }

    fn solve(&self, nrm: &Normal, mu: f64) -> Option<(DVector<f64>, Vec<f64>)> {
        let (s, rhs) = self.schur(nrm, mu);
        let dx = s.cholesky()?.solve(&rhs);
        let drho = nrm
            .feats
            .iter()
            .map(|f| {
                let hf = f.h * (1.0 + mu);
                if hf <= 1e-12 {
                    return 0.0;
                }
                let mut v = f.b;
                for &ka in &f.touched {
                    for (p, rp) in POSE_ROWS.iter().enumerate() {
                        v -= f.cross[ka][p] * dx[ERROR_DIM * ka + rp];
                    }
                }
                v / hf
            })
            .collect();
        Some((dx, drho))
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            states: self.keyframes.iter().map(|k| k.state).collect(),
            psi: self.psi,
            rho: self.features.iter().map(|(id, t)| (*id, t.param.inverse_depth)).collect(),
        }
    }

    fn restore(&mut self, s: Snapshot) {
        for (k, st) in self.keyframes.iter_mut().zip(s.states) {
            k.state = st;
        }
        self.psi = s.psi;
        for (id, rho) in s.rho {
            if let Some(t) = self.features.get_mut(&id) {
                t.param.inverse_depth = rho;
            }
        }
    }

    fn apply(&mut self, dx: &DVector<f64>, nrm: &Normal, drho: &[f64]) {
        let n = self.keyframes.len();
        for (i, k) in self.keyframes.iter_mut().enumerate() {
            let d = ErrorVector::from_column_slice(&dx.as_slice()[ERROR_DIM * i..ERROR_DIM * (i + 1)]);
            k.state = k.state.plus(&d);
        }
        self.psi += dx[ERROR_DIM * n];
        for (id, d) in nrm.feat_ids.iter().zip(drho) {
            if let Some(t) = self.features.get_mut(id) {
                t.param.inverse_depth = (t.param.inverse_depth + d).max(1e-4);
            }
        }
    }

    /// Re-integrates segments whose start bias moved away from the
    /// linearization point.
    fn relinearize_links(&mut self) {
        let reference = (self.config.prior.accel_bias, self.config.prior.gyro_bias);
        let threshold = self.config.relinearize;
        for i in 1..self.keyframes.len() {
            let s0 = self.keyframes[i - 1].state;
            if let Some(l) = self.keyframes[i].link.as_mut() {
                if l.preint.bias_drift(&s0.accel_bias, &s0.gyro_bias, reference) > threshold {
                    l.preint.repropagate(s0.accel_bias, s0.gyro_bias);
                    l.refresh();
                }
            }
        }
    }

    /// Drops feature observations that cannot be evaluated at the current
    /// estimate (point behind a camera).
    fn prune_features(&mut self) {
        let ids: Vec<u64> = self.features.keys().copied().collect();
        for id in ids {
            let t = &self.features[&id];
            let Some(ai) = self.index_of(t.param.anchor) else { continue };
            let bad: Vec<u64> = t
                .observations
                .iter()
                .filter(|(kf, _)| **kf != t.param.anchor)
                .filter(|(kf, o)| {
                    self.index_of(**kf).is_none_or(|oi| {
                        visual_residual(&o.pixel, &t.param, &self.keyframes[ai].state, &self.keyframes[oi].state, &self.camera)
                            .is_err()
                    })
                })
                .map(|(kf, _)| *kf)
                .collect();
            if bad.is_empty() {
                continue;
            }
            let t = self.features.get_mut(&id).unwrap_or_else(|| unreachable!());
            for kf in bad {
                t.observations.remove(&kf);
            }
            if !t.is_active() {
                self.features.remove(&id);
            }
        }
    }

    fn block_name(&self, col: usize) -> String {
        let n = self.keyframes.len();
        if col >= ERROR_DIM * n {
            return "yaw offset".into();
        }
        let id = self.keyframes[col / ERROR_DIM].id;
        let local = col % ERROR_DIM;
        let what = match local {
            l if l < IDX_V => "position".to_string(),
            l if l < IDX_TH => "velocity".to_string(),
            l if l < IDX_BA => "attitude".to_string(),
            l if l < IDX_BG => "accelerometer bias".to_string(),
            l if l < IDX_CLK => "gyroscope bias".to_string(),
            l if l < IDX_DRIFT => format!("clock {}", Constellation::ALL[l - IDX_CLK].tag()),
            _ => "clock drift".to_string(),
        };
        format!("keyframe {id} {what}")
    }

    /// Rejects a reduced normal matrix whose condition number, in units of
    /// the default prior sigmas, exceeds 1e12.
    fn check_conditioning(&self, nrm: &Normal) -> Result<(), SolverError> {
        const LIMIT: f64 = 1e12;
        let (mut s, _) = self.schur(nrm, 0.0);
        // nondimensionalize with the default prior sigmas
        let unit = super::PriorSigmas::default();
        let sig = unit.state_sigmas();
        let n = self.keyframes.len();
        let d: Vec<f64> = (0..s.nrows())
            .map(|i| if i >= ERROR_DIM * n { unit.yaw } else { sig[i % ERROR_DIM] })
            .collect();
        for i in 0..s.nrows() {
            for j in 0..s.ncols() {
                s[(i, j)] *= d[i] * d[j];
            }
        }
        if let Some(ch) = s.clone().cholesky() {
            let piv = ch.l_dirty().diagonal().map(|x| x * x);
            if piv.min() > 0.0 && piv.max() / piv.min() < LIMIT.sqrt() {
                return Ok(());
            }
        }
        let eig = SymmetricEigen::new(s);
        let (mut imin, mut imax) = (0, 0);
        for i in 0..eig.eigenvalues.len() {
            if eig.eigenvalues[i] < eig.eigenvalues[imin] {
                imin = i;
            }
            if eig.eigenvalues[i] > eig.eigenvalues[imax] {
                imax = i;
            }
        }
        let lmin = eig.eigenvalues[imin];
        let condition = if lmin > 0.0 { eig.eigenvalues[imax] / lmin } else { f64::INFINITY };
        if condition <= LIMIT {
            return Ok(());
        }
        let v = eig.eigenvectors.column(imin);
        let col = v.iamax();
        Err(SolverError::Singular {
            block: self.block_name(col),
            condition,
        })
    }

    /// Levenberg-Marquardt over all window variables with inverse depths
    /// eliminated by Schur complement.
    pub fn optimize(&mut self) -> Result<SolveReport, SolverError> {
        if self.keyframes.is_empty() {
            return Err(SolverError::EmptyWindow);
        }
        self.relinearize_links();
        self.prune_features();
        let (mut costs, _) = self.evaluate(false)?;
        let initial_cost = costs.total();
        let mut mu = self.config.initial_damping;
        let mut iterations = 0;
        let mut converged = false;
        'outer: for iter in 0..self.config.max_iterations {
            iterations += 1;
            let (_, nrm) = self.evaluate(true)?;
            let nrm = nrm.unwrap_or_else(|| unreachable!());
            if iter == 0 {
                self.check_conditioning(&nrm)?;
            }
            loop {
                let Some((dx, drho)) = self.solve(&nrm, mu) else {
                    mu *= 10.0;
                    if mu > 1e10 {
                        break 'outer;
                    }
                    continue;
                };
                let step = (dx.norm_squared() + drho.iter().map(|d| d * d).sum::<f64>()).sqrt();
                if step < self.config.step_tolerance {
                    converged = true;
                    break 'outer;
                }
                let snap = self.snapshot();
                self.apply(&dx, &nrm, &drho);
                let (trial, _) = self.evaluate(false)?;
                if trial.total().is_finite() && trial.total() <= costs.total() {
                    let rel = (costs.total() - trial.total()) / costs.total().max(1e-300);
                    costs = trial;
                    mu = (mu / 10.0).max(1e-12);
                    if rel < self.config.cost_tolerance {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                self.restore(snap);
                mu *= 10.0;
                if mu > 1e10 {
                    // no descent direction left at this point
                    converged = true;
                    break 'outer;
                }
            }
        }
        self.position_covariance = self.newest_position_covariance()?;
        Ok(SolveReport {
            iterations,
            initial_cost,
            final_cost: costs,
            converged,
            damping: mu,
        })
    }

    fn newest_position_covariance(&self) -> Result<Option<Matrix3<f64>>, SolverError> {
        let (_, nrm) = self.evaluate(true)?;
        let nrm = nrm.unwrap_or_else(|| unreachable!());
        let (s, _) = self.schur(&nrm, 0.0);
        let Some(ch) = s.cholesky() else { return Ok(None) };
        let base = ERROR_DIM * (self.keyframes.len() - 1) + IDX_P;
        let mut e = DMatrix::zeros(nrm.h.nrows(), 3);
        for c in 0..3 {
            e[(base + c, c)] = 1.0;
        }
        let x = ch.solve(&e);
        let mut p = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                p[(r, c)] = x[(base + r, c)];
            }
        }
        Ok(Some(0.5 * (p + p.transpose())))
    }
}
