//! Second-level factor graph over scan poses, marker poses and corner
//! positions, and a Levenberg–Marquardt solver for it.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Pose, Twist, Vec3};
use crate::initgraph::InitialEstimate;
use crate::pose_svd::CanonicalCorners;
use crate::tagdetect::MarkerObservation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FgoError {
    #[error("no initial value for {0}")]
    MissingInitial(VarKey),
    #[error("noise parameter {0} must be strictly positive")]
    InvalidNoise(&'static str),
    #[error("covariance of a {0:?} factor is not positive definite")]
    NotPositiveDefinite(FactorKind),
    #[error("normal equations stayed singular up to damping {lambda:e}")]
    SingularNormalEquations { lambda: f64 },
    #[error("cost is not finite")]
    NonFiniteCost,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Standard deviations of the isotropic factor covariances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_corner_scan: f64,
    pub sigma_corner_marker: f64,
    pub sigma_marker_rot: f64,
    pub sigma_marker_trans: f64,
    pub sigma_rel_rot: f64,
    pub sigma_rel_trans: f64,
    pub sigma_prior: f64,
    /// Inflate each anchor-relative covariance by
    /// `1 + path_weight / mean_e_pp`.
    pub weight_rel_by_path: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_corner_scan: 0.02,
            sigma_corner_marker: 0.002,
            sigma_marker_rot: 0.02,
            sigma_marker_trans: 0.01,
            sigma_rel_rot: 0.05,
            sigma_rel_trans: 0.03,
            sigma_prior: 1e-6,
            weight_rel_by_path: false,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), FgoError> {
        let fields = [
            ("sigma_corner_scan", self.sigma_corner_scan),
            ("sigma_corner_marker", self.sigma_corner_marker),
            ("sigma_marker_rot", self.sigma_marker_rot),
            ("sigma_marker_trans", self.sigma_marker_trans),
            ("sigma_rel_rot", self.sigma_rel_rot),
            ("sigma_rel_trans", self.sigma_rel_trans),
            ("sigma_prior", self.sigma_prior),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FgoError::InvalidNoise(name));
            }
        }
        Ok(())
    }

    /// Every standard deviation multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        NoiseConfig {
            sigma_corner_scan: self.sigma_corner_scan * k,
            sigma_corner_marker: self.sigma_corner_marker * k,
            sigma_marker_rot: self.sigma_marker_rot * k,
            sigma_marker_trans: self.sigma_marker_trans * k,
            sigma_rel_rot: self.sigma_rel_rot * k,
            sigma_rel_trans: self.sigma_rel_trans * k,
            sigma_prior: self.sigma_prior * k,
            weight_rel_by_path: self.weight_rel_by_path,
        }
    }
}

/// Variable identifier. Corner index `s` is 0-based in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKey {
    Scan(u32),
    Marker(u32),
    Corner(u32, u8),
}

impl VarKey {
    pub fn dim(&self) -> usize {
        match self {
            VarKey::Scan(_) | VarKey::Marker(_) => 6,
            VarKey::Corner(..) => 3,
        }
    }
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarKey::Scan(i) => write!(f, "scan {i}"),
            VarKey::Marker(j) => write!(f, "marker {j}"),
            VarKey::Corner(j, s) => write!(f, "corner {s} of marker {j}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Pose(Pose),
    Point(Vec3),
}

impl Value {
    fn pose(&self) -> &Pose {
        match self {
            Value::Pose(p) => p,
            Value::Point(_) => panic!("expected a pose variable"),
        }
    }

    fn point(&self) -> &Vec3 {
        match self {
            Value::Point(p) => p,
            Value::Pose(_) => panic!("expected a point variable"),
        }
    }

    /// Local update: right retraction for poses, addition for points.
    pub fn retract(&self, delta: &[f64]) -> Value {
        match self {
            Value::Pose(p) => Value::Pose(p.retract(&Twist::from_slice(delta))),
            Value::Point(p) => Value::Point(p + Vec3::new(delta[0], delta[1], delta[2])),
        }
    }
}

/// All optimisation variables, expressed in the global (anchor) frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VariableSet {
    pub scan_poses: BTreeMap<u32, Pose>,
    pub marker_poses: BTreeMap<u32, Pose>,
    pub corners: BTreeMap<(u32, u8), Vec3>,
}

impl VariableSet {
    pub fn get(&self, key: VarKey) -> Option<Value> {
        match key {
            VarKey::Scan(i) => self.scan_poses.get(&i).copied().map(Value::Pose),
            VarKey::Marker(j) => self.marker_poses.get(&j).copied().map(Value::Pose),
            VarKey::Corner(j, s) => self.corners.get(&(j, s)).copied().map(Value::Point),
        }
    }

    fn set(&mut self, key: VarKey, v: Value) {
        match (key, v) {
            (VarKey::Scan(i), Value::Pose(p)) => {
                self.scan_poses.insert(i, p);
            }
            (VarKey::Marker(j), Value::Pose(p)) => {
                self.marker_poses.insert(j, p);
            }
            (VarKey::Corner(j, s), Value::Point(p)) => {
                self.corners.insert((j, s), p);
            }
            _ => panic!("value kind does not match {key}"),
        }
    }

    pub fn keys(&self) -> Vec<VarKey> {
        let scans = self.scan_poses.keys().map(|&i| VarKey::Scan(i));
        let markers = self.marker_poses.keys().map(|&j| VarKey::Marker(j));
        let corners = self.corners.keys().map(|&(j, s)| VarKey::Corner(j, s));
        scans.chain(markers).chain(corners).collect()
    }

    /// Applies a stacked local update laid out by `layout`.
    pub fn retract(&self, layout: &Layout, delta: &DVector<f64>) -> VariableSet {
        let mut out = self.clone();
        for (&key, &off) in &layout.offsets {
            let v = self.get(key).expect("layout built from this variable set");
            out.set(key, v.retract(&delta.as_slice()[off..off + key.dim()]));
        }
        out
    }

    /// Largest per-entry difference over shared variables (rotation and
    /// translation entries of poses, coordinates of points).
    pub fn max_difference(&self, other: &VariableSet) -> f64 {
        let mut worst = 0.0f64;
        for key in self.keys() {
            let (Some(a), Some(b)) = (self.get(key), other.get(key)) else {
                return f64::INFINITY;
            };
            let d = match (a, b) {
                (Value::Pose(a), Value::Pose(b)) => (a.to_homogeneous() - b.to_homogeneous()).abs().max(),
                (Value::Point(a), Value::Point(b)) => (a - b).abs().max(),
                _ => f64::INFINITY,
            };
            worst = worst.max(d);
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    PriorAnchor,
    MarkerPoseObs,
    CornerInMarker,
    CornerInScan,
    AnchorRelative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Measurement {
    Pose(Pose),
    Point(Vec3),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub keys: Vec<VarKey>,
    pub measurement: Measurement,
    pub covariance: DMatrix<f64>,
    /// `L⁻¹` for the Cholesky factor `Σ = L·Lᵀ`.
    whitener: DMatrix<f64>,
}

impl Factor {
    pub fn new(
        kind: FactorKind,
        keys: Vec<VarKey>,
        measurement: Measurement,
        covariance: DMatrix<f64>,
    ) -> Result<Self, FgoError> {
        let arity = if kind == FactorKind::PriorAnchor { 1 } else { 2 };
        assert_eq!(keys.len(), arity, "wrong arity for {kind:?}");
        let dim = match kind {
            FactorKind::CornerInMarker | FactorKind::CornerInScan => 3,
            _ => 6,
        };
        assert_eq!(covariance.shape(), (dim, dim), "wrong covariance size for {kind:?}");
        let symmetric = (&covariance - covariance.transpose()).abs().max() <= 1e-12 * covariance.abs().max();
        let chol = covariance
            .clone()
            .cholesky()
            .filter(|_| symmetric)
            .ok_or(FgoError::NotPositiveDefinite(kind))?;
        let l = chol.l();
        let whitener = l
            .solve_lower_triangular(&DMatrix::identity(dim, dim))
            .ok_or(FgoError::NotPositiveDefinite(kind))?;
        Ok(Factor {
            kind,
            keys,
            measurement,
            covariance,
            whitener,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// Unwhitened residual from the factor's variable values.
    pub fn raw_residual(&self, values: &[Value]) -> Result<DVector<f64>, FgoError> {
        let twist = |t: Twist| DVector::from_column_slice(t.to_vector().as_slice());
        let point = |p: Vec3| DVector::from_column_slice(p.as_slice());
        Ok(match (self.kind, &self.measurement) {
            (FactorKind::PriorAnchor, Measurement::Pose(z)) => twist(values[0].pose().ominus(z)?),
            (FactorKind::MarkerPoseObs | FactorKind::AnchorRelative, Measurement::Pose(z)) => {
                let rel = values[0].pose().inverse() * *values[1].pose();
                twist(rel.ominus(z)?)
            }
            (FactorKind::CornerInMarker | FactorKind::CornerInScan, Measurement::Point(z)) => {
                point(values[0].pose().inverse().apply(values[1].point()) - z)
            }
            _ => panic!("measurement type does not match {:?}", self.kind),
        })
    }

    pub fn whitened_residual(&self, values: &[Value]) -> Result<DVector<f64>, FgoError> {
        Ok(&self.whitener * self.raw_residual(values)?)
    }

    pub fn residual(&self, vars: &VariableSet) -> Result<DVector<f64>, FgoError> {
        self.whitened_residual(&self.values(vars)?)
    }

    fn values(&self, vars: &VariableSet) -> Result<Vec<Value>, FgoError> {
        self.keys
            .iter()
            .map(|&k| vars.get(k).ok_or(FgoError::MissingInitial(k)))
            .collect()
    }

    /// Whitened Jacobian with respect to the local coordinates of each key,
    /// concatenated in key order.
    pub fn jacobian(&self, values: &[Value], scheme: DiffScheme) -> Result<DMatrix<f64>, FgoError> {
        let cols: usize = self.keys.iter().map(|k| k.dim()).sum();
        let mut jac = DMatrix::zeros(self.dim(), cols);
        let base = match scheme {
            DiffScheme::Forward => Some(self.whitened_residual(values)?),
            DiffScheme::Central => None,
        };
        let mut col = 0;
        for (slot, key) in self.keys.iter().enumerate() {
            for d in 0..key.dim() {
                let eval = |h: f64| -> Result<DVector<f64>, FgoError> {
                    let mut delta = [0.0; 6];
                    delta[d] = h;
                    let mut vals = values.to_vec();
                    vals[slot] = values[slot].retract(&delta[..key.dim()]);
                    self.whitened_residual(&vals)
                };
                let column = match &base {
                    None => (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP),
                    Some(r0) => (eval(FD_STEP)? - r0) / FD_STEP,
                };
                jac.set_column(col, &column);
                col += 1;
            }
        }
        Ok(jac)
    }
}

/// Finite-difference step in local coordinates.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffScheme {
    Central,
    Forward,
}

/// Offsets of each variable's local coordinates in the stacked state.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub offsets: BTreeMap<VarKey, usize>,
    pub dim: usize,
}

impl Layout {
    pub fn new(vars: &VariableSet) -> Self {
        let mut offsets = BTreeMap::new();
        let mut dim = 0;
        for key in vars.keys() {
            offsets.insert(key, dim);
            dim += key.dim();
        }
        Layout { offsets, dim }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraph {
    pub vars: VariableSet,
    pub factors: Vec<Factor>,
    pub anchor: u32,
}

impl FactorGraph {
    pub fn count(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind == kind).count()
    }

    /// Same graph without its anchor prior.
    pub fn without_prior(&self) -> FactorGraph {
        FactorGraph {
            vars: self.vars.clone(),
            factors: self
                .factors
                .iter()
                .filter(|f| f.kind != FactorKind::PriorAnchor)
                .cloned()
                .collect(),
            anchor: self.anchor,
        }
    }
}

fn isotropic(sigma: f64, dim: usize) -> DMatrix<f64> {
    DMatrix::identity(dim, dim) * (sigma * sigma)
}

fn pose_cov(sigma_rot: f64, sigma_trans: f64) -> DMatrix<f64> {
    let r2 = sigma_rot * sigma_rot;
    let t2 = sigma_trans * sigma_trans;
    DMatrix::from_diagonal(&DVector::from_column_slice(&[r2, r2, r2, t2, t2, t2]))
}

/// Assembles variables and factors. Only observations from scans present in
/// `init.scan_poses` are used; every marker they see needs an initial pose.
pub fn build_graph(
    observations: &[MarkerObservation],
    init: &InitialEstimate,
    noise: &NoiseConfig,
    canonical: &CanonicalCorners,
) -> Result<FactorGraph, FgoError> {
    noise.validate()?;
    let used: Vec<&MarkerObservation> = observations
        .iter()
        .filter(|o| init.scan_poses.contains_key(&o.scan_id))
        .collect();

    let mut vars = VariableSet::default();
    for o in &used {
        vars.scan_poses.insert(o.scan_id, init.scan_poses[&o.scan_id]);
        let mpose = *init
            .marker_poses
            .get(&o.marker_id)
            .ok_or(FgoError::MissingInitial(VarKey::Marker(o.marker_id)))?;
        vars.marker_poses.insert(o.marker_id, mpose);
        for s in 0..4u8 {
            let p = init
                .corners
                .get(&o.marker_id)
                .map(|c| c[s as usize])
                .unwrap_or_else(|| mpose.apply(&canonical.corners[s as usize]));
            vars.corners.insert((o.marker_id, s), p);
        }
    }
    let anchor = init.anchor;
    vars.scan_poses
        .entry(anchor)
        .or_insert_with(|| init.scan_poses.get(&anchor).copied().unwrap_or_default());

    let mut factors = vec![Factor::new(
        FactorKind::PriorAnchor,
        vec![VarKey::Scan(anchor)],
        Measurement::Pose(Pose::identity()),
        isotropic(noise.sigma_prior, 6),
    )?];
    let mut seen_markers = std::collections::BTreeSet::new();
    for o in &used {
        let (i, j) = (o.scan_id, o.marker_id);
        factors.push(Factor::new(
            FactorKind::MarkerPoseObs,
            vec![VarKey::Scan(i), VarKey::Marker(j)],
            Measurement::Pose(o.pose),
            pose_cov(noise.sigma_marker_rot, noise.sigma_marker_trans),
        )?);
        if seen_markers.insert(j) {
            for s in 0..4u8 {
                factors.push(Factor::new(
                    FactorKind::CornerInMarker,
                    vec![VarKey::Marker(j), VarKey::Corner(j, s)],
                    Measurement::Point(canonical.corners[s as usize]),
                    isotropic(noise.sigma_corner_marker, 3),
                )?);
            }
        }
        for s in 0..4u8 {
            factors.push(Factor::new(
                FactorKind::CornerInScan,
                vec![VarKey::Scan(i), VarKey::Corner(j, s)],
                Measurement::Point(o.corners3d[s as usize]),
                isotropic(noise.sigma_corner_scan, 3),
            )?);
        }
    }

    let mean_e_pp = if used.is_empty() {
        0.0
    } else {
        used.iter().map(|o| o.e_pp).sum::<f64>() / used.len() as f64
    };
    let anchor_pose = vars.scan_poses[&anchor];
    for &i in vars.scan_poses.keys() {
        if i == anchor {
            continue;
        }
        let weight = init.path_weights.get(&i).copied().unwrap_or(0.0);
        let inflate = if noise.weight_rel_by_path && mean_e_pp > 0.0 {
            1.0 + weight / mean_e_pp
        } else {
            1.0
        };
        let rel = anchor_pose.inverse() * init.scan_poses[&i];
        factors.push(Factor::new(
            FactorKind::AnchorRelative,
            vec![VarKey::Scan(anchor), VarKey::Scan(i)],
            Measurement::Pose(rel),
            pose_cov(noise.sigma_rel_rot, noise.sigma_rel_trans) * inflate,
        )?);
    }
    Ok(FactorGraph {
        vars,
        factors,
        anchor,
    })
}

/// `½ Σ ‖whitened residual‖²`.
pub fn total_cost(vars: &VariableSet, factors: &[Factor]) -> Result<f64, FgoError> {
    let parts: Result<Vec<f64>, FgoError> = factors
        .par_iter()
        .map(|f| f.residual(vars).map(|r| r.norm_squared()))
        .collect();
    let cost = 0.5 * parts?.iter().sum::<f64>();
    if cost.is_finite() {
        Ok(cost)
    } else {
        Err(FgoError::NonFiniteCost)
    }
}

/// Stacked whitened residual and Jacobian.
pub fn linearize(
    vars: &VariableSet,
    factors: &[Factor],
    layout: &Layout,
    scheme: DiffScheme,
) -> Result<(DVector<f64>, DMatrix<f64>), FgoError> {
    let blocks = factors
        .par_iter()
        .map(|f| {
            let values = f.values(vars)?;
            Ok((f.whitened_residual(&values)?, f.jacobian(&values, scheme)?))
        })
        .collect::<Result<Vec<_>, FgoError>>()?;
    let rows: usize = factors.iter().map(|f| f.dim()).sum();
    let mut r = DVector::zeros(rows);
    let mut jac = DMatrix::zeros(rows, layout.dim);
    let mut row = 0;
    for (f, (res, fj)) in factors.iter().zip(&blocks) {
        r.rows_mut(row, f.dim()).copy_from(res);
        let mut col = 0;
        for key in &f.keys {
            let off = *layout.offsets.get(key).ok_or(FgoError::MissingInitial(*key))?;
            jac.view_mut((row, off), (f.dim(), key.dim()))
                .copy_from(&fj.view((0, col), (f.dim(), key.dim())));
            col += key.dim();
        }
        row += f.dim();
    }
    Ok((r, jac))
}

/// Gauss–Newton approximation `JᵀJ` of the Hessian at `vars`.
pub fn gauss_newton_hessian(vars: &VariableSet, factors: &[Factor]) -> Result<DMatrix<f64>, FgoError> {
    let layout = Layout::new(vars);
    let (_, jac) = linearize(vars, factors, &layout, DiffScheme::Central)?;
    Ok(jac.transpose() * jac)
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmOptions {
    pub max_iters: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Converged when an accepted step lowers the cost by less than this
    /// fraction of the previous cost.
    pub tol_cost: f64,
    /// Converged when the local step norm falls below this.
    pub tol_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iters: 100,
            lambda0: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.5,
            tol_cost: 1e-10,
            tol_step: 1e-10,
        }
    }
}

/// Damping beyond which the normal equations are declared singular.
const LAMBDA_MAX: f64 = 1e16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Cost after the iteration (the trial cost when rejected).
    pub cost: f64,
    pub lambda: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:e} {:e} {:e} {}",
            self.iter, self.cost, self.lambda, self.step_norm, self.accepted as u8
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    CostChange,
    StepNorm,
    ZeroCost,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmSummary {
    pub vars: VariableSet,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub log: Vec<IterationRecord>,
    pub termination: Termination,
}

impl LmSummary {
    /// Iteration log, one `iter cost lambda step_norm accepted` line each.
    pub fn log_text(&self) -> String {
        let mut out = String::from("# iter cost lambda step_norm accepted\n");
        for rec in &self.log {
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }

    pub fn accepted_steps(&self) -> usize {
        self.log.iter().filter(|r| r.accepted).count()
    }
}

/// Levenberg–Marquardt on `½‖r(x)‖²` with damping `λ·diag(JᵀJ)`. Each
/// iteration tries one step; a step is accepted only if the cost strictly
/// decreases.
pub fn solve_lm(vars: &VariableSet, factors: &[Factor], opts: &LmOptions) -> Result<LmSummary, FgoError> {
    let layout = Layout::new(vars);
    let mut x = vars.clone();
    let mut cost = total_cost(&x, factors)?;
    let initial_cost = cost;
    let mut lambda = opts.lambda0;
    let mut log = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut lin = None;

    for iter in 1..=opts.max_iters {
        if cost == 0.0 {
            termination = Termination::ZeroCost;
            break;
        }
        let (h, g) = match &lin {
            Some(hg) => hg,
            None => {
                let (r, jac) = linearize(&x, factors, &layout, DiffScheme::Central)?;
                let jt = jac.transpose();
                lin.insert((&jt * &jac, jt * r))
            }
        };
        let diag_floor = 1e-12 * h.diagonal().max().max(f64::MIN_POSITIVE);
        let step = loop {
            let mut a = h.clone();
            for k in 0..layout.dim {
                a[(k, k)] += lambda * h[(k, k)].max(diag_floor);
            }
            if let Some(chol) = a.cholesky() {
                break -chol.solve(g);
            }
            lambda *= opts.lambda_up;
            if lambda > LAMBDA_MAX {
                return Err(FgoError::SingularNormalEquations { lambda });
            }
        };
        let step_norm = step.norm();
        let candidate = x.retract(&layout, &step);
        let trial = match total_cost(&candidate, factors) {
            Ok(c) => Some(c),
            Err(FgoError::Geometry(GeometryError::AngleNearPi { .. })) => None,
            Err(e) => return Err(e),
        };
        match trial {
            Some(new_cost) if new_cost < cost => {
                let decrease = cost - new_cost;
                let previous = cost;
                x = candidate;
                cost = new_cost;
                lin = None;
                lambda = (lambda * opts.lambda_down).max(f64::MIN_POSITIVE);
                log.push(IterationRecord {
                    iter,
                    cost,
                    lambda,
                    step_norm,
                    accepted: true,
                });
                if decrease <= opts.tol_cost * previous {
                    termination = Termination::CostChange;
                    break;
                }
                if step_norm < opts.tol_step {
                    termination = Termination::StepNorm;
                    break;
                }
            }
            rejected => {
                lambda *= opts.lambda_up;
                log.push(IterationRecord {
                    iter,
                    cost: rejected.unwrap_or(f64::NAN),
                    lambda,
                    step_norm,
                    accepted: false,
                });
                if step_norm < opts.tol_step {
                    termination = Termination::StepNorm;
                    break;
                }
                if lambda > LAMBDA_MAX {
                    return Err(FgoError::SingularNormalEquations { lambda });
                }
            }
        }
    }
    Ok(LmSummary {
        vars: x,
        initial_cost,
        final_cost: cost,
        log,
        termination,
    })
}
