//! Sliding-window factor graph, Levenberg-Marquardt solve and
//! marginalization of the oldest keyframe.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::factors::{huber, imu_residual, visual_residual, ContactFactor, MarginalPrior};
use super::preintegration::{Matrix15, Preintegrated};
use super::state::{CameraExtrinsic, Intrinsics, Landmark, NavState};
use super::EstimatorError;
use crate::geom::{RigidTransform, Vec3};

/// Inverse depths are kept inside `[MIN_INVERSE_DEPTH, MAX_INVERSE_DEPTH]`.
pub const MIN_INVERSE_DEPTH: f64 = 1e-3;
pub const MAX_INVERSE_DEPTH: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// [px]
    pub huber_delta: f64,
    /// [px]
    pub pixel_sigma: f64,
    /// Keyframes kept in the window.
    pub window_size: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 15,
            relative_tolerance: 1e-6,
            step_tolerance: 1e-8,
            initial_damping: 1e-4,
            huber_delta: 1.0,
            pixel_sigma: 0.7,
            window_size: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    /// Monotonically increasing; consecutive keyframes have consecutive ids.
    pub id: u64,
    pub state: NavState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraphWindow {
    pub keyframes: Vec<Keyframe>,
    /// `preintegrations[k]` links `keyframes[k]` and `keyframes[k + 1]`.
    pub preintegrations: Vec<Preintegrated>,
    pub landmarks: BTreeMap<u32, Landmark>,
    pub extrinsic: CameraExtrinsic,
    pub intrinsics: Intrinsics,
    pub contacts: Vec<ContactFactor>,
    pub prior: Option<MarginalPrior>,
    pub settings: SolverSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
    /// Whether every accepted step strictly decreased the cost.
    pub monotone: bool,
    pub converged: bool,
    /// Marginal covariance of the newest keyframe, tangent ordering.
    pub newest_covariance: Matrix15,
}

impl FactorGraphWindow {
    pub fn new(intrinsics: Intrinsics, extrinsic: CameraExtrinsic, settings: SolverSettings) -> Self {
        Self {
            keyframes: Vec::new(),
            preintegrations: Vec::new(),
            landmarks: BTreeMap::new(),
            extrinsic,
            intrinsics,
            contacts: Vec::new(),
            prior: None,
            settings,
        }
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        let first = self.keyframes.first()?.id;
        let idx = id.checked_sub(first)? as usize;
        (idx < self.keyframes.len()).then_some(idx)
    }

    pub fn newest(&self) -> Option<&Keyframe> {
        self.keyframes.last()
    }

    /// Appends a keyframe; every keyframe after the first needs the
    /// preintegration linking it to its predecessor.
    pub fn push_keyframe(&mut self, state: NavState, pre: Option<Preintegrated>) -> Result<u64, EstimatorError> {
        let id = self.keyframes.last().map(|k| k.id + 1).unwrap_or(0);
        match (self.keyframes.is_empty(), pre) {
            (true, None) => {}
            (false, Some(p)) => {
                if !(p.dt > 0.0) {
                    return Err(EstimatorError::ZeroInterval);
                }
                self.preintegrations.push(p);
            }
            _ => return Err(EstimatorError::InvalidWindow("preintegration must link consecutive keyframes".into())),
        }
        self.keyframes.push(Keyframe { id, state });
        Ok(id)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidWindow(m.into()));
        if self.keyframes.is_empty() {
            return bad("empty window");
        }
        if self.preintegrations.len() + 1 != self.keyframes.len() {
            return bad("one preintegration per adjacent keyframe pair");
        }
        if self.keyframes.windows(2).any(|w| w[1].id != w[0].id + 1) {
            return bad("keyframe ids must be consecutive");
        }
        for c in &self.contacts {
            if self.index_of(c.first).is_none() || self.index_of(c.second).is_none() {
                return bad("contact factor outside the window");
            }
        }
        for lm in self.landmarks.values() {
            if lm.observations.is_empty() || lm.observations[0].0 != lm.anchor {
                return bad("landmark anchor must be its first observation");
            }
            if lm.observations.iter().any(|(f, _)| self.index_of(*f).is_none()) {
                return bad("landmark observation outside the window");
            }
        }
        if let Some(p) = &self.prior {
            if p.frames.iter().any(|f| self.index_of(*f).is_none()) {
                return bad("prior references a keyframe outside the window");
            }
        }
        Ok(())
    }

    fn state_dim(&self) -> usize {
        15 * self.keyframes.len() + if self.extrinsic.estimated { 6 } else { 0 }
    }

    fn ext_offset(&self) -> Option<usize> {
        self.extrinsic.estimated.then_some(15 * self.keyframes.len())
    }

    /// World position of a landmark at the current estimate.
    pub fn landmark_world_point(&self, lm: &Landmark) -> Option<Vec3> {
        if !(lm.has_depth && lm.inverse_depth > 0.0) {
            return None;
        }
        let anchor = &self.keyframes[self.index_of(lm.anchor)?].state;
        let p_c = self.intrinsics.bearing(&lm.anchor_pixel()) / lm.inverse_depth;
        Some(world_from_camera(anchor, &self.extrinsic).apply(&p_c))
    }

    /// Total weighted cost of all factors.
    pub fn cost(&self) -> f64 {
        let mut cost = 0.0;
        for (k, pre) in self.preintegrations.iter().enumerate() {
            let e = imu_residual(&self.keyframes[k].state, &self.keyframes[k + 1].state, pre);
            cost += (e.residual.transpose() * pre.information() * e.residual)[(0, 0)];
        }
        let inv_var = 1.0 / self.settings.pixel_sigma.powi(2);
        for lm in self.landmarks.values().filter(|l| l.is_active()) {
            let Some(ai) = self.index_of(lm.anchor) else { continue };
            for (f, px) in &lm.observations[1..] {
                let Some(oi) = self.index_of(*f) else { continue };
                let e = visual_residual(
                    &self.keyframes[ai].state,
                    &self.keyframes[oi].state,
                    &self.extrinsic,
                    &self.intrinsics,
                    &lm.anchor_pixel(),
                    lm.inverse_depth,
                    px,
                );
                if let Some(e) = e {
                    cost += huber(e.residual.norm_squared(), self.settings.huber_delta).0 * inv_var;
                }
            }
        }
        for c in &self.contacts {
            let (Some(a), Some(b)) = (self.index_of(c.first), self.index_of(c.second)) else { continue };
            cost += c.cost(&self.keyframes[a].state, &self.keyframes[b].state);
        }
        if let Some(p) = &self.prior {
            let states: Vec<&NavState> = p.frames.iter().map(|f| &self.keyframes[self.index_of(*f).unwrap()].state).collect();
            cost += p.evaluate(&states, Some(&self.extrinsic)).residual.norm_squared();
        }
        cost
    }
}

pub(crate) fn world_from_camera(x: &NavState, ext: &CameraExtrinsic) -> RigidTransform {
    RigidTransform::new(x.orientation, x.position).compose(&ext.body_from_camera)
}

/// Accumulates `J^T W J` and `J^T W r` for a factor whose Jacobian is split
/// into column blocks placed at the given offsets.
pub(crate) fn add_factor(h: &mut DMatrix<f64>, g: &mut DVector<f64>, blocks: &[(usize, DMatrix<f64>)], r: &DVector<f64>, w: &DMatrix<f64>) {
    for (oa, ja) in blocks {
        let jw = ja.transpose() * w;
        let ga = &jw * r;
        let mut gv = g.rows_mut(*oa, ja.ncols());
        gv += ga;
        for (ob, jb) in blocks {
            let hab = &jw * jb;
            let mut hv = h.view_mut((*oa, *ob), (ja.ncols(), jb.ncols()));
            hv += hab;
        }
    }
}

fn dyn_mat<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

struct LandmarkBlock {
    id: u32,
    hll: f64,
    gl: f64,
    cross: DVector<f64>,
}

struct NormalEquations {
    h: DMatrix<f64>,
    g: DVector<f64>,
    landmarks: Vec<LandmarkBlock>,
}

/// Gauss-Newton normal equations with the landmark rows kept separate.
fn build_normal(w: &FactorGraphWindow) -> NormalEquations {
    let n = w.state_dim();
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);

    for (k, pre) in w.preintegrations.iter().enumerate() {
        let e = imu_residual(&w.keyframes[k].state, &w.keyframes[k + 1].state, pre);
        let blocks = [(15 * k, dyn_mat(&e.jac_i)), (15 * (k + 1), dyn_mat(&e.jac_j))];
        add_factor(&mut h, &mut g, &blocks, &DVector::from_column_slice(e.residual.as_slice()), &dyn_mat(&pre.information()));
    }

    for c in &w.contacts {
        let (Some(a), Some(b)) = (w.index_of(c.first), w.index_of(c.second)) else { continue };
        let e = c.evaluate(&w.keyframes[a].state, &w.keyframes[b].state);
        let blocks = [(15 * a, dyn_mat(&e.jac_k)), (15 * b, dyn_mat(&e.jac_k1))];
        add_factor(&mut h, &mut g, &blocks, &DVector::from_column_slice(e.residual.as_slice()), &dyn_mat(&c.information));
    }

    if let Some(p) = &w.prior {
        let idx: Vec<usize> = p.frames.iter().map(|f| w.index_of(*f).unwrap()).collect();
        let states: Vec<&NavState> = idx.iter().map(|&i| &w.keyframes[i].state).collect();
        let e = p.evaluate(&states, Some(&w.extrinsic));
        let mut blocks: Vec<(usize, DMatrix<f64>)> =
            idx.iter().enumerate().map(|(c, &i)| (15 * i, e.jacobian.columns(15 * c, 15).into_owned())).collect();
        if let (Some(_), Some(o)) = (&p.extrinsic, w.ext_offset()) {
            blocks.push((o, e.jacobian.columns(15 * idx.len(), 6).into_owned()));
        }
        let eye = DMatrix::identity(e.residual.len(), e.residual.len());
        add_factor(&mut h, &mut g, &blocks, &e.residual, &eye);
    }

    let inv_var = 1.0 / w.settings.pixel_sigma.powi(2);
    let mut landmarks = Vec::new();
    for lm in w.landmarks.values().filter(|l| l.is_active()) {
        let Some(ai) = w.index_of(lm.anchor) else { continue };
        let mut block = LandmarkBlock { id: lm.id, hll: 0.0, gl: 0.0, cross: DVector::zeros(n) };
        for (f, px) in &lm.observations[1..] {
            let Some(oi) = w.index_of(*f) else { continue };
            let Some(e) = visual_residual(
                &w.keyframes[ai].state,
                &w.keyframes[oi].state,
                &w.extrinsic,
                &w.intrinsics,
                &lm.anchor_pixel(),
                lm.inverse_depth,
                px,
            ) else {
                continue;
            };
            let (_, rho) = huber(e.residual.norm_squared(), w.settings.huber_delta);
            let wt = DMatrix::identity(2, 2) * (rho * inv_var);
            let r = DVector::from_column_slice(e.residual.as_slice());
            let mut blocks = vec![(15 * ai, dyn_mat(&e.jac_anchor)), (15 * oi, dyn_mat(&e.jac_observer))];
            if let Some(o) = w.ext_offset() {
                blocks.push((o, dyn_mat(&e.jac_extrinsic)));
            }
            add_factor(&mut h, &mut g, &blocks, &r, &wt);
            let jl = e.jac_inverse_depth;
            let s = rho * inv_var;
            block.hll += s * jl.norm_squared();
            block.gl += s * jl.dot(&e.residual);
            for (o, j) in &blocks {
                let c = j.transpose() * DVector::from_column_slice(jl.as_slice()) * s;
                let mut v = block.cross.rows_mut(*o, j.ncols());
                v += c;
            }
        }
        // Depths without enough parallax are held fixed for this solve.
        if block.hll * lm.inverse_depth.powi(2) >= MIN_RELATIVE_DEPTH_INFORMATION {
            landmarks.push(block);
        }
    }
    NormalEquations { h, g, landmarks }
}

/// Inverse depths are only optimized once their relative standard deviation
/// would fall below 10%.
const MIN_RELATIVE_DEPTH_INFORMATION: f64 = 100.0;

struct Step {
    states: DVector<f64>,
    landmarks: Vec<(u32, f64)>,
    /// Model decrease of the cost for this step.
    predicted: f64,
}

const DAMPING_FLOOR: f64 = 1e-6;

/// Solves the damped system with the landmarks eliminated by Schur
/// complement; raises the damping until the reduced system factorizes.
fn damped_step(ne: &NormalEquations, lambda: &mut f64) -> Option<Step> {
    let n = ne.g.len();
    for _ in 0..20 {
        let mut reduced = ne.h.clone();
        let mut diag = DVector::zeros(n);
        for i in 0..n {
            diag[i] = ne.h[(i, i)].max(DAMPING_FLOOR);
            reduced[(i, i)] += *lambda * diag[i];
        }
        let mut rhs = -&ne.g;
        let mut hl = Vec::with_capacity(ne.landmarks.len());
        for lm in &ne.landmarks {
            let d = lm.hll.max(DAMPING_FLOOR);
            let h = lm.hll + *lambda * d;
            reduced.ger(-1.0 / h, &lm.cross, &lm.cross, 1.0);
            rhs.axpy(lm.gl / h, &lm.cross, 1.0);
            hl.push((h, d));
        }
        let reduced = 0.5 * (&reduced + reduced.transpose());
        if let Some(chol) = reduced.cholesky() {
            let dx = chol.solve(&rhs);
            let mut predicted = -ne.g.dot(&dx) + *lambda * dx.component_mul(&diag).dot(&dx);
            let mut landmarks = Vec::with_capacity(ne.landmarks.len());
            for (lm, (h, d)) in ne.landmarks.iter().zip(hl) {
                let dl = -(lm.gl + lm.cross.dot(&dx)) / h;
                predicted += -lm.gl * dl + *lambda * d * dl * dl;
                landmarks.push((lm.id, dl));
            }
            if dx.iter().all(|v| v.is_finite()) {
                return Some(Step { states: dx, landmarks, predicted });
            }
        }
        *lambda = (*lambda * 10.0).max(1e-6);
    }
    None
}

fn apply_step(w: &FactorGraphWindow, step: &Step) -> FactorGraphWindow {
    let mut out = w.clone();
    for (k, kf) in out.keyframes.iter_mut().enumerate() {
        kf.state = kf.state.retract(&step.states.as_slice()[15 * k..15 * k + 15]);
    }
    if let Some(o) = w.ext_offset() {
        out.extrinsic = w.extrinsic.retract(&step.states.as_slice()[o..o + 6]);
    }
    for (id, dl) in &step.landmarks {
        if let Some(lm) = out.landmarks.get_mut(id) {
            lm.inverse_depth = (lm.inverse_depth + dl).clamp(MIN_INVERSE_DEPTH, MAX_INVERSE_DEPTH);
        }
    }
    out
}

fn step_norm(step: &Step) -> f64 {
    (step.states.norm_squared() + step.landmarks.iter().map(|(_, d)| d * d).sum::<f64>()).sqrt()
}

/// Covariance of the newest keyframe from the undamped normal equations.
fn newest_covariance(w: &FactorGraphWindow) -> Matrix15 {
    let ne = build_normal(w);
    let n = ne.g.len();
    let mut reg = 1e-9;
    for _ in 0..8 {
        let mut reduced = ne.h.clone();
        for i in 0..n {
            reduced[(i, i)] += reg * ne.h[(i, i)].max(1.0);
        }
        for lm in &ne.landmarks {
            reduced.ger(-1.0 / (lm.hll * (1.0 + reg) + reg), &lm.cross, &lm.cross, 1.0);
        }
        let reduced = 0.5 * (&reduced + reduced.transpose());
        if let Some(chol) = reduced.cholesky() {
            let o = 15 * (w.keyframes.len() - 1);
            let mut e = DMatrix::zeros(n, 15);
            for i in 0..15 {
                e[(o + i, i)] = 1.0;
            }
            let x = chol.solve(&e);
            let block = x.rows(o, 15);
            let mut cov = Matrix15::zeros();
            for r in 0..15 {
                for c in 0..15 {
                    cov[(r, c)] = 0.5 * (block[(r, c)] + block[(c, r)]);
                }
            }
            return cov;
        }
        reg *= 100.0;
    }
    Matrix15::identity() * f64::INFINITY
}

/// Levenberg-Marquardt over all keyframe states, the extrinsic (when
/// estimated) and the active landmark inverse depths. A step is accepted
/// only when it strictly lowers the total cost, so the cost sequence is
/// monotone by construction.
pub fn solve_window(w: &mut FactorGraphWindow) -> Result<SolveReport, EstimatorError> {
    w.validate()?;
    let s = w.settings.clone();
    let mut cost = w.cost();
    if !cost.is_finite() {
        return Err(EstimatorError::NonFiniteCost);
    }
    let initial_cost = cost;
    let mut accepted_costs = vec![cost];
    let mut lambda = s.initial_damping;
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut ne = build_normal(w);

    while iterations < s.max_iterations {
        iterations += 1;
        let Some(step) = damped_step(&ne, &mut lambda) else { break };
        if step_norm(&step) < s.step_tolerance {
            converged = true;
            break;
        }
        let candidate = apply_step(w, &step);
        let new_cost = candidate.cost();
        if new_cost.is_finite() && new_cost < cost {
            let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
            let rho = if step.predicted > 0.0 { (cost - new_cost) / step.predicted } else { 0.0 };
            lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            *w = candidate;
            cost = new_cost;
            accepted_costs.push(cost);
            if rel < s.relative_tolerance {
                converged = true;
                break;
            }
            ne = build_normal(w);
        } else {
            lambda *= nu;
            nu *= 2.0;
            if lambda > 1e16 {
                break;
            }
        }
    }
    let monotone = accepted_costs.windows(2).all(|p| p[1] < p[0]);
    Ok(SolveReport {
        iterations,
        initial_cost,
        final_cost: cost,
        accepted_costs,
        monotone,
        converged,
        newest_covariance: newest_covariance(w),
    })
}

/// Relative eigenvalue cutoff used when inverting and factoring marginal
/// information.
const EIGEN_CUTOFF: f64 = 1e-12;

fn pseudo_inverse_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(0.5 * (m + m.transpose()));
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let inv = eig.eigenvalues.map(|v| if v > EIGEN_CUTOFF * max { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Folds the oldest keyframe, its preintegration and contact factors, the
/// old prior and the landmarks anchored at it into a new linear prior on
/// the remaining keyframes. Landmarks anchored at the removed keyframe are
/// then re-anchored at their next observation. Returns `false` (and leaves
/// the window untouched) when the window is not full.
pub fn marginalize_oldest(w: &mut FactorGraphWindow) -> Result<bool, EstimatorError> {
    if w.keyframes.len() < w.settings.window_size || w.keyframes.len() < 2 {
        return Ok(false);
    }
    w.validate()?;
    let first = w.keyframes[0].id;
    let kept = w.keyframes.len() - 1;
    let marg_ids: Vec<u32> = w.landmarks.values().filter(|l| l.anchor == first && l.is_active()).map(|l| l.id).collect();
    let n_m = 15 + marg_ids.len();
    let n_k = 15 * kept + if w.extrinsic.estimated { 6 } else { 0 };
    let frame_off = |i: usize| if i == 0 { 0 } else { n_m + 15 * (i - 1) };
    let ext_off = n_m + 15 * kept;

    let n = n_m + n_k;
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);

    if let Some(p) = &w.prior {
        let idx: Vec<usize> = p.frames.iter().map(|f| w.index_of(*f).unwrap()).collect();
        let states: Vec<&NavState> = idx.iter().map(|&i| &w.keyframes[i].state).collect();
        let e = p.evaluate(&states, Some(&w.extrinsic));
        let mut blocks: Vec<(usize, DMatrix<f64>)> =
            idx.iter().enumerate().map(|(c, &i)| (frame_off(i), e.jacobian.columns(15 * c, 15).into_owned())).collect();
        if p.extrinsic.is_some() && w.extrinsic.estimated {
            blocks.push((ext_off, e.jacobian.columns(15 * idx.len(), 6).into_owned()));
        }
        let eye = DMatrix::identity(e.residual.len(), e.residual.len());
        add_factor(&mut h, &mut g, &blocks, &e.residual, &eye);
    }

    let pre = &w.preintegrations[0];
    let e = imu_residual(&w.keyframes[0].state, &w.keyframes[1].state, pre);
    add_factor(
        &mut h,
        &mut g,
        &[(frame_off(0), dyn_mat(&e.jac_i)), (frame_off(1), dyn_mat(&e.jac_j))],
        &DVector::from_column_slice(e.residual.as_slice()),
        &dyn_mat(&pre.information()),
    );

    for c in w.contacts.iter().filter(|c| c.first == first || c.second == first) {
        let (a, b) = (w.index_of(c.first).unwrap(), w.index_of(c.second).unwrap());
        let e = c.evaluate(&w.keyframes[a].state, &w.keyframes[b].state);
        add_factor(
            &mut h,
            &mut g,
            &[(frame_off(a), dyn_mat(&e.jac_k)), (frame_off(b), dyn_mat(&e.jac_k1))],
            &DVector::from_column_slice(e.residual.as_slice()),
            &dyn_mat(&c.information),
        );
    }

    let inv_var = 1.0 / w.settings.pixel_sigma.powi(2);
    for (li, id) in marg_ids.iter().enumerate() {
        let lm = &w.landmarks[id];
        for (f, px) in &lm.observations[1..] {
            let oi = w.index_of(*f).unwrap();
            let Some(e) = visual_residual(
                &w.keyframes[0].state,
                &w.keyframes[oi].state,
                &w.extrinsic,
                &w.intrinsics,
                &lm.anchor_pixel(),
                lm.inverse_depth,
                px,
            ) else {
                continue;
            };
            let (_, rho) = huber(e.residual.norm_squared(), w.settings.huber_delta);
            let mut blocks = vec![
                (frame_off(0), dyn_mat(&e.jac_anchor)),
                (frame_off(oi), dyn_mat(&e.jac_observer)),
                (15 + li, dyn_mat(&e.jac_inverse_depth)),
            ];
            if w.extrinsic.estimated {
                blocks.push((ext_off, dyn_mat(&e.jac_extrinsic)));
            }
            add_factor(
                &mut h,
                &mut g,
                &blocks,
                &DVector::from_column_slice(e.residual.as_slice()),
                &(DMatrix::identity(2, 2) * (rho * inv_var)),
            );
        }
    }

    let hmm = h.view((0, 0), (n_m, n_m)).into_owned();
    let hkm = h.view((n_m, 0), (n_k, n_m)).into_owned();
    let hkk = h.view((n_m, n_m), (n_k, n_k)).into_owned();
    let gm = g.rows(0, n_m).into_owned();
    let gk = g.rows(n_m, n_k).into_owned();
    let hmm_inv = pseudo_inverse_sym(&hmm);
    let schur_h = &hkk - &hkm * &hmm_inv * hkm.transpose();
    let schur_g = &gk - &hkm * &hmm_inv * gm;

    let eig = SymmetricEigen::new(0.5 * (&schur_h + schur_h.transpose()));
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n_k).filter(|&i| eig.eigenvalues[i] > EIGEN_CUTOFF * max).collect();
    let mut jacobian = DMatrix::zeros(keep.len(), n_k);
    let mut residual = DVector::zeros(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        let v = eig.eigenvectors.column(i);
        jacobian.row_mut(row).copy_from(&(v.transpose() * s));
        residual[row] = v.dot(&schur_g) / s;
    }

    w.prior = Some(MarginalPrior {
        frames: w.keyframes[1..].iter().map(|k| k.id).collect(),
        linearization: w.keyframes[1..].iter().map(|k| k.state.clone()).collect(),
        extrinsic: w.extrinsic.estimated.then(|| w.extrinsic.clone()),
        jacobian,
        residual,
    });

    // re-anchor before dropping the keyframe so the old pose is still available
    let anchored: Vec<u32> = w.landmarks.values().filter(|l| l.anchor == first).map(|l| l.id).collect();
    for id in anchored {
        let world = w.landmark_world_point(&w.landmarks[&id]);
        let mut lm = w.landmarks.remove(&id).unwrap();
        lm.observations.remove(0);
        if lm.observations.is_empty() {
            continue;
        }
        lm.anchor = lm.observations[0].0;
        lm.has_depth = false;
        if let Some(p_w) = world {
            let anchor = &w.keyframes[w.index_of(lm.anchor).unwrap()].state;
            let p_c = world_from_camera(anchor, &w.extrinsic).inverse().apply(&p_w);
            if p_c.z > 0.02 {
                lm.inverse_depth = (1.0 / p_c.z).clamp(MIN_INVERSE_DEPTH, MAX_INVERSE_DEPTH);
                lm.has_depth = true;
            }
        }
        w.landmarks.insert(id, lm);
    }
    w.keyframes.remove(0);
    w.preintegrations.remove(0);
    w.contacts.retain(|c| c.first != first && c.second != first);
    Ok(true)
}
