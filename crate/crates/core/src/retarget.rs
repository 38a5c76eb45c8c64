//! Glove-to-hand retargeting by matching fingertip key vectors.
//!
//! Each frame minimises
//!
//! ```text
//! E(q) = Σ_k w_k ‖v_k(q) − α u_k‖² + β ‖q − q_prev‖²
//! ```
//!
//! over the hand joint box, where `u_k` are key vectors measured on the glove
//! and `v_k` the same vectors on the hand. The first frame of a session has no
//! previous solution and drops the β term.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::kinematics::{self, Finger, HandModel, JointVector, KinematicsError, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum RetargetError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid retarget config: {0}")]
    Config(String),
    #[error("expected {expected} target vectors, got {got}")]
    TargetCount { expected: usize, got: usize },
    #[error("objective is not finite")]
    NonFinite,
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<RetargetError>,
    },
    #[error("empty trajectory")]
    Empty,
}

pub type Result<T, E = RetargetError> = std::result::Result<T, E>;

/// Start of a key vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Endpoint {
    Palm,
    Tip(Finger),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Palm => f.write_str("palm"),
            Endpoint::Tip(finger) => finger.fmt(f),
        }
    }
}

impl FromStr for Endpoint {
    type Err = KinematicsError;

    fn from_str(s: &str) -> Result<Self, KinematicsError> {
        if s == "palm" { Ok(Endpoint::Palm) } else { s.parse().map(Endpoint::Tip) }
    }
}

impl TryFrom<String> for Endpoint {
    type Error = KinematicsError;

    fn try_from(s: String) -> Result<Self, KinematicsError> {
        s.parse()
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyVectorKind {
    PalmToTip,
    TipToTip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyVectorSpec {
    pub kind: KeyVectorKind,
    pub from: Endpoint,
    pub to: Finger,
    pub weight: f64,
}

impl KeyVectorSpec {
    pub fn palm_to_tip(to: Finger, weight: f64) -> Self {
        Self { kind: KeyVectorKind::PalmToTip, from: Endpoint::Palm, to, weight }
    }

    pub fn tip_to_tip(from: Finger, to: Finger, weight: f64) -> Self {
        Self { kind: KeyVectorKind::TipToTip, from: Endpoint::Tip(from), to, weight }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(RetargetError::Config(m));
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return bad(format!("weight {} must be finite and non-negative", self.weight));
        }
        match (self.kind, self.from) {
            (KeyVectorKind::PalmToTip, Endpoint::Palm) => Ok(()),
            (KeyVectorKind::TipToTip, Endpoint::Tip(f)) if f != self.to => Ok(()),
            _ => bad(format!("key vector {}→{} does not match kind {:?}", self.from, self.to, self.kind)),
        }
    }
}

/// Three palm-to-tip vectors (weight 1) and the three tip-to-tip pairs (weight 2).
pub fn default_specs() -> Vec<KeyVectorSpec> {
    use Finger::*;
    vec![
        KeyVectorSpec::palm_to_tip(Thumb, 1.0),
        KeyVectorSpec::palm_to_tip(Index, 1.0),
        KeyVectorSpec::palm_to_tip(Middle, 1.0),
        KeyVectorSpec::tip_to_tip(Thumb, Index, 2.0),
        KeyVectorSpec::tip_to_tip(Thumb, Middle, 2.0),
        KeyVectorSpec::tip_to_tip(Index, Middle, 2.0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// q ← clamp(q − η∇E) with a constant η.
    Fixed { eta: f64 },
    /// Projected gradient with Armijo backtracking.
    Backtracking,
    /// Projected Newton step with Armijo backtracking, falling back to the
    /// gradient when the Newton step fails to descend.
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetConfig {
    pub specs: Vec<KeyVectorSpec>,
    pub alpha: f64,
    pub beta: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_rule: StepRule,
    pub armijo_c: f64,
    pub shrink: f64,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self {
            specs: default_specs(),
            alpha: 1.0,
            beta: 1e-2,
            max_iters: 50,
            grad_tol: 1e-8,
            step_rule: StepRule::Newton,
            armijo_c: 1e-4,
            shrink: 0.5,
        }
    }
}

impl RetargetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RetargetError::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be non-negative");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.grad_tol >= 0.0) {
            return bad("grad_tol must be non-negative");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("armijo_c and shrink must lie in (0, 1)");
        }
        if let StepRule::Fixed { eta } = self.step_rule {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad("fixed step eta must be positive");
            }
        }
        if self.specs.is_empty() {
            return bad("no key vectors");
        }
        self.specs.iter().try_for_each(KeyVectorSpec::check)
    }

    /// Every endpoint exists in `model` and every finger of it is covered.
    pub fn validate_for(&self, model: &HandModel) -> Result<()> {
        self.validate()?;
        for s in &self.specs {
            model.finger_index(s.to)?;
            if let Endpoint::Tip(f) = s.from {
                model.finger_index(f)?;
            }
        }
        for f in &model.fingers {
            let covered = self.specs.iter().any(|s| s.to == f.name || s.from == Endpoint::Tip(f.name));
            if !covered {
                return Err(RetargetError::Config(format!("finger `{}` has no key vector", f.name)));
            }
        }
        Ok(())
    }
}

/// Warm-start memory carried between frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetState {
    pub q_prev: JointVector,
    pub initialized: bool,
}

impl RetargetState {
    pub fn new(model: &HandModel) -> Self {
        Self { q_prev: model.mid_range(), initialized: false }
    }

    pub fn reset(&mut self, model: &HandModel) {
        *self = Self::new(model);
    }
}

/// Tip positions and Jacobians of every finger, in declaration order.
struct Tips {
    pos: Vec<Vec3>,
    jac: Vec<Matrix3xX<f64>>,
    cols: Vec<std::ops::Range<usize>>,
}

fn tips(model: &HandModel, q: &[f64], with_jacobian: bool) -> Result<Tips> {
    let mut out = Tips { pos: Vec::new(), jac: Vec::new(), cols: Vec::new() };
    for f in &model.fingers {
        let r = model.finger_range(f.name)?;
        let qf = &q[r.clone()];
        out.pos.push(kinematics::fingertip(model, f.name, qf)?);
        if with_jacobian {
            out.jac.push(kinematics::position_jacobian(model, f.name, qf)?);
        }
        out.cols.push(r);
    }
    Ok(out)
}

/// Key vectors of `model` at joint configuration `q`.
pub fn keyvectors(model: &HandModel, q: &[f64], specs: &[KeyVectorSpec]) -> Result<Vec<Vec3>> {
    if q.len() != model.dof() {
        return Err(KinematicsError::DimensionMismatch { expected: model.dof(), got: q.len() }.into());
    }
    let t = tips(model, q, false)?;
    specs
        .iter()
        .map(|s| {
            let to = t.pos[model.finger_index(s.to)?];
            Ok(match s.from {
                Endpoint::Palm => to - model.palm_origin(),
                Endpoint::Tip(f) => to - t.pos[model.finger_index(f)?],
            })
        })
        .collect()
}

/// Key vectors measured on the glove.
pub fn glove_keyvectors(glove: &HandModel, q_glove: &[f64], specs: &[KeyVectorSpec]) -> Result<Vec<Vec3>> {
    keyvectors(glove, q_glove, specs)
}

struct Eval {
    energy: f64,
    grad: DVector<f64>,
    /// Gauss-Newton approximation of the Hessian.
    gn: Option<DMatrix<f64>>,
}

fn evaluate(
    model: &HandModel,
    q: &[f64],
    u: &[Vec3],
    cfg: &RetargetConfig,
    anchor: Option<&[f64]>,
    want_gn: bool,
) -> Result<Eval> {
    let n = model.dof();
    if u.len() != cfg.specs.len() {
        return Err(RetargetError::TargetCount { expected: cfg.specs.len(), got: u.len() });
    }
    let t = tips(model, q, true)?;
    let mut energy = 0.0;
    let mut grad = DVector::zeros(n);
    let mut gn = want_gn.then(|| DMatrix::zeros(n, n));
    for (s, uk) in cfg.specs.iter().zip(u) {
        let ti = model.finger_index(s.to)?;
        let from = match s.from {
            Endpoint::Palm => None,
            Endpoint::Tip(f) => Some(model.finger_index(f)?),
        };
        let v = t.pos[ti] - from.map_or(model.palm_origin(), |fi| t.pos[fi]);
        let r = v - cfg.alpha * uk;
        energy += s.weight * r.norm_squared();
        // Jacobian of v: +J_to on the target finger, −J_from on the source.
        let mut jk = DMatrix::zeros(3, n);
        jk.columns_mut(t.cols[ti].start, t.cols[ti].len()).copy_from(&t.jac[ti]);
        if let Some(fi) = from {
            let mut block = jk.columns_mut(t.cols[fi].start, t.cols[fi].len());
            block -= &t.jac[fi];
        }
        let rk = DVector::from_column_slice(r.as_slice());
        grad += 2.0 * s.weight * jk.tr_mul(&rk);
        if let Some(h) = gn.as_mut() {
            *h += 2.0 * s.weight * jk.tr_mul(&jk);
        }
    }
    if let Some(a) = anchor {
        for i in 0..n {
            let d = q[i] - a[i];
            energy += cfg.beta * d * d;
            grad[i] += 2.0 * cfg.beta * d;
        }
        if let Some(h) = gn.as_mut() {
            for i in 0..n {
                h[(i, i)] += 2.0 * cfg.beta;
            }
        }
    }
    if !energy.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(RetargetError::NonFinite);
    }
    Ok(Eval { energy, grad, gn })
}

/// E(q) and ∇E(q) with the β term anchored at `q_prev`.
pub fn objective_and_gradient(
    model: &HandModel,
    q: &[f64],
    u: &[Vec3],
    config: &RetargetConfig,
    q_prev: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_len(model, q)?;
    check_len(model, q_prev)?;
    let e = evaluate(model, q, u, config, Some(q_prev), false)?;
    Ok((e.energy, e.grad.as_slice().to_vec()))
}

fn check_len(model: &HandModel, q: &[f64]) -> Result<()> {
    if q.len() != model.dof() {
        return Err(KinematicsError::DimensionMismatch { expected: model.dof(), got: q.len() }.into());
    }
    Ok(())
}

/// Diagnostics of one frame solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub q: JointVector,
    pub iterations: usize,
    /// Objective at the start point and after every accepted iteration.
    pub energies: Vec<f64>,
    /// Norm of the projected gradient at the returned point.
    pub projected_grad_norm: f64,
    pub converged: bool,
}

fn project(q: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in q.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn projected_gradient_norm(q: &[f64], g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    q.iter()
        .zip(g.iter())
        .zip(lo.iter().zip(hi))
        .map(|((&x, &gi), (&l, &h))| x - (x - gi).clamp(l, h))
        .map(|d| d * d)
        .sum::<f64>()
        .sqrt()
}

const HESSIAN_STEP: f64 = 1e-6;
/// Upper bound on the distance at which a joint counts as resting on a limit.
const ACTIVE_SET_EPS: f64 = 1e-3;

struct Problem<'a> {
    model: &'a HandModel,
    u: &'a [Vec3],
    cfg: &'a RetargetConfig,
    anchor: Option<&'a [f64]>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Problem<'_> {
    fn energy(&self, q: &[f64]) -> Result<f64> {
        Ok(evaluate(self.model, q, self.u, self.cfg, self.anchor, false)?.energy)
    }

    /// Armijo search along the projection arc q(t) = clamp(q + t·d).
    fn line_search(&self, q: &[f64], e0: f64, g: &DVector<f64>, d: &DVector<f64>, t0: f64) -> Result<Option<(Vec<f64>, f64)>> {
        let mut t = t0;
        for _ in 0..60 {
            let mut trial: Vec<f64> = q.iter().zip(d.iter()).map(|(x, di)| x + t * di).collect();
            project(&mut trial, &self.lo, &self.hi);
            let decrease: f64 = g.iter().zip(trial.iter().zip(q)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if decrease < 0.0 {
                let e = self.energy(&trial)?;
                if e <= e0 + self.cfg.armijo_c * decrease {
                    return Ok(Some((trial, e)));
                }
            } else if trial.iter().zip(q).all(|(a, b)| a == b) {
                return Ok(None);
            }
            t *= self.cfg.shrink;
        }
        Ok(None)
    }

    /// Hessian of E by central differences of the analytic gradient.
    fn hessian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let n = q.len();
        let mut h = DMatrix::zeros(n, n);
        let mut x = q.to_vec();
        for j in 0..n {
            x[j] = q[j] + HESSIAN_STEP;
            let gp = evaluate(self.model, &x, self.u, self.cfg, self.anchor, false)?.grad;
            x[j] = q[j] - HESSIAN_STEP;
            let gm = evaluate(self.model, &x, self.u, self.cfg, self.anchor, false)?.grad;
            x[j] = q[j];
            h.set_column(j, &((gp - gm) / (2.0 * HESSIAN_STEP)));
        }
        Ok((&h + h.transpose()) * 0.5)
    }

    /// Projected Newton direction. Joints within `eps` of a limit that the
    /// gradient pushes against are sent straight to the limit; the rest take
    /// a damped Newton step on their block of the Hessian.
    fn newton_direction(&self, q: &[f64], g: &DVector<f64>, h: &DMatrix<f64>, eps: f64) -> Option<DVector<f64>> {
        let n = q.len();
        let mut d = DVector::zeros(n);
        let mut free = Vec::with_capacity(n);
        for i in 0..n {
            if q[i] <= self.lo[i] + eps && g[i] > 0.0 {
                d[i] = self.lo[i] - q[i];
            } else if q[i] >= self.hi[i] - eps && g[i] < 0.0 {
                d[i] = self.hi[i] - q[i];
            } else {
                free.push(i);
            }
        }
        let m = free.len();
        if m > 0 {
            let hf = DMatrix::from_fn(m, m, |a, b| h[(free[a], free[b])]);
            let gf = DVector::from_fn(m, |a, _| g[free[a]]);
            let scale = (0..m).map(|a| hf[(a, a)].abs()).fold(0.0, f64::max).max(1e-12);
            // Levenberg damping until the block is positive definite.
            let mut lambda = 0.0;
            let step = loop {
                let damped = &hf + DMatrix::identity(m, m) * lambda;
                if let Some(c) = damped.cholesky() {
                    break c.solve(&gf);
                }
                lambda = if lambda == 0.0 { 1e-9 * scale } else { lambda * 10.0 };
                if lambda > 1e6 * scale {
                    return None;
                }
            };
            for (a, &i) in free.iter().enumerate() {
                d[i] = -step[a];
            }
        }
        d.iter().all(|x| x.is_finite()).then_some(d)
    }

    fn solve(&self, start: &[f64]) -> Result<SolveReport> {
        let mut q = start.to_vec();
        project(&mut q, &self.lo, &self.hi);
        let want_gn = matches!(self.cfg.step_rule, StepRule::Newton | StepRule::Backtracking);
        let mut ev = evaluate(self.model, &q, self.u, self.cfg, self.anchor, want_gn)?;
        let mut energies = vec![ev.energy];
        let mut iterations = 0;
        let mut pg = projected_gradient_norm(&q, &ev.grad, &self.lo, &self.hi);
        while pg > self.cfg.grad_tol && iterations < self.cfg.max_iters {
            let next = match self.cfg.step_rule {
                StepRule::Fixed { eta } => {
                    let mut trial: Vec<f64> = q.iter().zip(ev.grad.iter()).map(|(x, g)| x - eta * g).collect();
                    project(&mut trial, &self.lo, &self.hi);
                    let e = self.energy(&trial)?;
                    Some((trial, e))
                }
                StepRule::Backtracking => {
                    let h = ev.gn.as_ref().expect("requested");
                    self.line_search(&q, ev.energy, &ev.grad, &-&ev.grad, gradient_step(h))?
                }
                StepRule::Newton => {
                    let h = self.hessian(&q)?;
                    let eps = pg.min(ACTIVE_SET_EPS);
                    let scaled = match self.newton_direction(&q, &ev.grad, &h, eps) {
                        Some(d) => self.line_search(&q, ev.energy, &ev.grad, &d, 1.0)?,
                        None => None,
                    };
                    match scaled {
                        Some(s) => Some(s),
                        None => {
                            let gn = ev.gn.as_ref().expect("requested");
                            self.line_search(&q, ev.energy, &ev.grad, &-&ev.grad, gradient_step(gn))?
                        }
                    }
                }
            };
            let Some((qn, _)) = next else { break };
            q = qn;
            iterations += 1;
            ev = evaluate(self.model, &q, self.u, self.cfg, self.anchor, want_gn)?;
            energies.push(ev.energy);
            pg = projected_gradient_norm(&q, &ev.grad, &self.lo, &self.hi);
        }
        Ok(SolveReport {
            q: JointVector { model_name: self.model.name.clone(), values: q },
            iterations,
            energies,
            projected_grad_norm: pg,
            converged: pg <= self.cfg.grad_tol,
        })
    }
}

/// Initial gradient step: inverse of the largest curvature estimate.
fn gradient_step(h: &DMatrix<f64>) -> f64 {
    let trace: f64 = h.diagonal().iter().sum();
    if trace > 0.0 { 1.0 / trace } else { 1.0 }
}

/// Solve one frame from an explicit start point, anchored at `state.q_prev`
/// when the state is initialised. Updates the state.
pub fn solve_from(
    model: &HandModel,
    u: &[Vec3],
    state: &mut RetargetState,
    config: &RetargetConfig,
    start: &[f64],
) -> Result<SolveReport> {
    config.validate()?;
    check_len(model, start)?;
    check_len(model, &state.q_prev)?;
    let (lo, hi) = model.limits();
    let anchor = state.initialized.then_some(state.q_prev.values.as_slice());
    let problem = Problem { model, u, cfg: config, anchor, lo, hi };
    let report = problem.solve(start)?;
    state.q_prev = report.q.clone();
    state.initialized = true;
    Ok(report)
}

/// Solve one frame warm-started at the previous solution (mid-range on the
/// first frame), with diagnostics.
pub fn solve_frame_report(
    model: &HandModel,
    u: &[Vec3],
    state: &mut RetargetState,
    config: &RetargetConfig,
) -> Result<SolveReport> {
    let start = if state.initialized { state.q_prev.values.clone() } else { model.mid_range().values };
    solve_from(model, u, state, config, &start)
}

pub fn solve_frame(
    model: &HandModel,
    u: &[Vec3],
    state: &mut RetargetState,
    config: &RetargetConfig,
) -> Result<JointVector> {
    Ok(solve_frame_report(model, u, state, config)?.q)
}

/// Retarget a glove trajectory frame by frame with one shared state.
pub fn retarget_trajectory(
    glove: &HandModel,
    hand: &HandModel,
    glove_traj: &[Vec<f64>],
    config: &RetargetConfig,
) -> Result<Vec<JointVector>> {
    if glove_traj.is_empty() {
        return Err(RetargetError::Empty);
    }
    config.validate_for(glove)?;
    config.validate_for(hand)?;
    let mut state = RetargetState::new(hand);
    glove_traj
        .iter()
        .enumerate()
        .map(|(frame, qg)| {
            let wrap = |e: RetargetError| RetargetError::Frame { frame, source: Box::new(e) };
            let u = glove_keyvectors(glove, qg, &config.specs).map_err(wrap)?;
            solve_frame(hand, &u, &mut state, config).map_err(wrap)
        })
        .collect()
}
