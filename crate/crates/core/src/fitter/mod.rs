//! Noise-aware body fitting.
//!
//! Minimizes a landmark data term with per-landmark Gaussian uncertainty
//! plus norm priors on shape and latent pose, in two annealed stages:
//! first over shape, pose and root with σ frozen, then over pose and σ with
//! shape and root frozen.

pub mod diff;
pub mod lbfgs;
mod lm;
pub mod robust;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::balance::Autoencoder;
use crate::error::{check_len, param, Error, Result};
use crate::geometry::{kabsch, triangle_area};
use crate::model::{BodyModel, BodyParams, LandmarkKind, LandmarkSet, RootTransform};

pub use diff::{Forward, LandmarkEvaluator, ParamGrad};
use lbfgs::{LbfgsOptions, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    NoiseAware,
    Plain,
    Barron,
}

/// Residual penalty inside the Gaussian data term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataNorm {
    /// `||e||`.
    Norm,
    /// `||e||²`.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Damped Gauss–Newton on the majorized data term, closed-form σ.
    LevenbergMarquardt,
    /// Bounded limited-memory BFGS over all free variables.
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealRound {
    pub iterations: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda_beta: f64,
    pub lambda_z: f64,
    /// Rounds run in order within each stage.
    pub anneal_schedule: Vec<AnnealRound>,
    pub sigma_init: f64,
    pub sigma_bounds: [f64; 2],
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Iteration cap per stage, shared by its rounds.
    pub max_iterations: usize,
    pub mode: FitMode,
    /// Solver for the Gaussian data term; the robust baseline always uses L-BFGS.
    pub solver: Solver,
    pub data_norm: DataNorm,
    /// Optimizer-side smoothing of the norm penalty, `√(r² + ε²) − ε`; the
    /// reported energy is always the exact norm. Zero disables it.
    pub norm_smoothing: f64,
    pub alpha_range: [f64; 2],
    pub alpha_init: f64,
    /// Half-width (in scale units) of the domain normalizing the robust density.
    pub barron_truncation: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda_beta: 0.01,
            lambda_z: 0.01,
            anneal_schedule: [1.0, 2.0, 4.0].iter().map(|&weight| AnnealRound { iterations: 100, weight }).collect(),
            sigma_init: 0.02,
            sigma_bounds: [1e-3, 1.0],
            grad_tol: 1e-8,
            step_tol: 1e-10,
            max_iterations: 300,
            mode: FitMode::NoiseAware,
            solver: Solver::LevenbergMarquardt,
            data_norm: DataNorm::Norm,
            norm_smoothing: 1e-3,
            alpha_range: [-7.0, 4.0],
            alpha_init: -4.5,
            barron_truncation: 20.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.sigma_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return param(format!("sigma bounds [{lo}, {hi}] must satisfy 0 < min ≤ max"));
        }
        if !(self.sigma_init >= lo && self.sigma_init <= hi) {
            return param(format!("sigma_init {} outside bounds [{lo}, {hi}]", self.sigma_init));
        }
        if self.lambda_beta < 0.0 || self.lambda_z < 0.0 {
            return param("prior weights must be non-negative");
        }
        if self.anneal_schedule.is_empty() || self.anneal_schedule.iter().any(|r| !(r.weight > 0.0)) {
            return param("anneal schedule needs at least one round with positive weight");
        }
        let [a_lo, a_hi] = self.alpha_range;
        if !(a_lo <= self.alpha_init && self.alpha_init <= a_hi) {
            return param(format!("alpha_init {} outside [{a_lo}, {a_hi}]", self.alpha_init));
        }
        Ok(())
    }

    fn lbfgs(&self, max_iterations: usize) -> LbfgsOptions {
        LbfgsOptions { max_iterations, grad_tol: self.grad_tol, step_tol: self.step_tol, ..Default::default() }
    }
}

/// Landmark targets for one frame; `None` marks an unobserved landmark.
pub struct FitProblem<'a> {
    pub model: &'a BodyModel,
    /// Pose prior. Without one, pose is optimized directly as axis-angle and
    /// the latent prior is dropped.
    pub ae: Option<&'a dyn Autoencoder>,
    targets: Vec<Option<Vector3<f64>>>,
    observed: Vec<usize>,
}

impl<'a> FitProblem<'a> {
    pub fn new(model: &'a BodyModel, ae: Option<&'a dyn Autoencoder>, targets: Vec<Option<Vector3<f64>>>) -> Result<Self> {
        check_len(model.num_landmarks(), targets.len())?;
        if let Some(ae) = ae {
            check_len(3 * model.num_joints(), ae.pose_dim())?;
        }
        let observed: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].is_some()).collect();
        if observed.len() < 4 {
            return param(format!("fitting needs at least 4 observed landmarks, got {}", observed.len()));
        }
        if targets.iter().flatten().any(|t| !t.iter().all(|v| v.is_finite())) {
            return param("landmark targets contain non-finite values");
        }
        Ok(Self { model, ae, targets, observed })
    }

    /// Targets from a full landmark set, optionally masked.
    pub fn from_landmarks(
        model: &'a BodyModel,
        ae: Option<&'a dyn Autoencoder>,
        set: &LandmarkSet,
        mask: Option<&[bool]>,
    ) -> Result<Self> {
        if let Some(m) = mask {
            check_len(set.len(), m.len())?;
        }
        let targets = set
            .positions
            .iter()
            .enumerate()
            .map(|(i, p)| mask.map_or(true, |m| m[i]).then_some(*p))
            .collect();
        Self::new(model, ae, targets)
    }

    /// Targets from markers only, joints left unobserved.
    pub fn markers_only(model: &'a BodyModel, ae: Option<&'a dyn Autoencoder>, set: &LandmarkSet) -> Result<Self> {
        let mask: Vec<bool> = set.kinds.iter().map(|k| *k == LandmarkKind::Marker).collect();
        Self::from_landmarks(model, ae, set, Some(&mask))
    }

    pub fn targets(&self) -> &[Option<Vector3<f64>>] {
        &self.targets
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Length of the optimized pose vector (latent or axis-angle).
    pub fn pose_dim(&self) -> usize {
        self.ae.map_or(3 * self.model.num_joints(), |ae| ae.latent_dim())
    }

    pub fn theta(&self, pose: &[f64]) -> Result<Vec<Vector3<f64>>> {
        match self.ae {
            Some(ae) => BodyParams::theta_from_flat(&ae.decode(pose)),
            None => BodyParams::theta_from_flat(pose),
        }
    }

    pub fn params(&self, beta: &[f64], pose: &[f64], root: RootTransform) -> Result<BodyParams> {
        Ok(BodyParams { beta: beta.to_vec(), theta: self.theta(pose)?, root })
    }
}

/// Optimization variables. As a flat vector: `[β | pose | root rotation | root translation | log σ]`,
/// with one `log σ` per observed landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub beta: Vec<f64>,
    pub pose: Vec<f64>,
    pub root: RootTransform,
    pub log_sigma: Vec<f64>,
}

impl FitState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.beta.len() + self.pose.len() + 6 + self.log_sigma.len());
        x.extend(&self.beta);
        x.extend(&self.pose);
        x.extend(self.root.rotation.iter());
        x.extend(self.root.translation.iter());
        x.extend(&self.log_sigma);
        x
    }

    pub fn from_vec(problem: &FitProblem, x: &[f64]) -> Result<Self> {
        let l = Layout::new(problem, problem.observed.len());
        check_len(l.len(), x.len())?;
        Ok(Self {
            beta: x[..l.pose].to_vec(),
            pose: x[l.pose..l.root].to_vec(),
            root: l.root_of(x),
            log_sigma: x[l.extra..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustState {
    pub alpha: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BodyParams,
    /// Latent pose code; empty when pose was optimized directly.
    pub z: Vec<f64>,
    /// Per-landmark σ in meters; `None` for unobserved landmarks.
    pub sigma: Vec<Option<f64>>,
    /// Total energy at the solution with unit data weight.
    pub energy: f64,
    pub converged: bool,
    pub stage_iterations: Vec<usize>,
    /// Per-landmark residual norm in meters; `None` for unobserved landmarks.
    pub residuals: Vec<Option<f64>>,
    /// Energy after each accepted step, one list per annealing round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub energy_history: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust: Option<RobustState>,
}

impl FitResult {
    /// σ of observed landmarks, flattened.
    pub fn observed_sigma(&self) -> Vec<f64> {
        self.sigma.iter().flatten().copied().collect()
    }
}

/// `Σ_obs ρ(ℓ̃_est,i − ℓ̃_i*)/(2σ_i²) + log σ_i` with ρ the configured norm.
/// `sigma` has one entry per landmark; unobserved entries are ignored.
pub fn data_energy(problem: &FitProblem, params: &BodyParams, sigma: &[f64], norm: DataNorm) -> Result<f64> {
    check_len(problem.targets.len(), sigma.len())?;
    let lm = problem.model.landmarks_for(params)?;
    Ok(problem
        .observed
        .iter()
        .map(|&i| {
            let r = (problem.targets[i].unwrap() - lm.positions[i]).norm();
            let rho = match norm {
                DataNorm::Norm => r,
                DataNorm::Squared => r * r,
            };
            rho / (2.0 * sigma[i] * sigma[i]) + sigma[i].ln()
        })
        .sum())
}

/// `λ_β ||β|| + λ_z ||z||`.
pub fn prior_energy(beta: &[f64], z: &[f64], config: &FitConfig) -> f64 {
    config.lambda_beta * norm(beta) + config.lambda_z * norm(z)
}

/// Total noise-aware energy (unit data weight) at `state`.
pub fn total_energy(problem: &FitProblem, config: &FitConfig, state: &FitState) -> Result<f64> {
    let obj = Objective::new(problem, config, DataTerm::Gaussian(config.data_norm));
    let x = state.to_vec();
    check_len(obj.layout.len(), x.len())?;
    obj.evaluate(&x, None)
}

/// Gradient of [`total_energy`] in the flat layout of [`FitState::to_vec`].
pub fn gradient(problem: &FitProblem, config: &FitConfig, state: &FitState) -> Result<Vec<f64>> {
    let obj = Objective::new(problem, config, DataTerm::Gaussian(config.data_norm));
    let x = state.to_vec();
    check_len(obj.layout.len(), x.len())?;
    let mut g = vec![0.0; x.len()];
    obj.evaluate(&x, Some(&mut g))?;
    Ok(g)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    pose: usize,
    root: usize,
    extra: usize,
    n_extra: usize,
}

impl Layout {
    fn new(problem: &FitProblem, n_extra: usize) -> Self {
        let pose = problem.model.num_shapes();
        let root = pose + problem.pose_dim();
        Self { pose, root, extra: root + 6, n_extra }
    }

    fn len(&self) -> usize {
        self.extra + self.n_extra
    }

    fn root_of(&self, x: &[f64]) -> RootTransform {
        let r = self.root;
        RootTransform {
            rotation: Vector3::new(x[r], x[r + 1], x[r + 2]),
            translation: Vector3::new(x[r + 3], x[r + 4], x[r + 5]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum DataTerm {
    /// Extra variables: one `log σ` per observed landmark.
    Gaussian(DataNorm),
    /// Extra variables: `[α, log c]`.
    Robust { truncation: f64 },
}

struct Objective<'p, 'm> {
    problem: &'p FitProblem<'m>,
    config: &'p FitConfig,
    eval: LandmarkEvaluator<'m>,
    layout: Layout,
    data: DataTerm,
    weight: f64,
    smoothing: f64,
}

impl<'p, 'm> Objective<'p, 'm> {
    fn new(problem: &'p FitProblem<'m>, config: &'p FitConfig, data: DataTerm) -> Self {
        let n_extra = match data {
            DataTerm::Gaussian(_) => problem.observed.len(),
            DataTerm::Robust { .. } => 2,
        };
        Self {
            problem,
            config,
            eval: LandmarkEvaluator::new(problem.model),
            layout: Layout::new(problem, n_extra),
            data,
            weight: 1.0,
            smoothing: 0.0,
        }
    }

    fn params(&self, x: &[f64]) -> Result<BodyParams> {
        let l = &self.layout;
        self.problem.params(&x[..l.pose], &x[l.pose..l.root], l.root_of(x))
    }

    fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        let problem = self.problem;
        let l = self.layout;
        let w = self.weight;
        let fwd = self.eval.forward(&self.params(x)?)?;
        let mut g_lm = vec![Vector3::zeros(); problem.targets.len()];
        let mut g_extra = vec![0.0; l.n_extra];
        let mut energy = 0.0;

        match self.data {
            DataTerm::Gaussian(kind) => {
                for (k, &i) in problem.observed.iter().enumerate() {
                    let e = problem.targets[i].unwrap() - fwd.positions[i];
                    let log_sigma = x[l.extra + k];
                    let inv = 0.5 * (-2.0 * log_sigma).exp();
                    let r = e.norm();
                    let (rho, d_rho) = match kind {
                        DataNorm::Norm if self.smoothing > 0.0 => {
                            let h = (r * r + self.smoothing * self.smoothing).sqrt();
                            (h - self.smoothing, -e / h)
                        }
                        DataNorm::Norm => (r, if r > 0.0 { -e / r } else { Vector3::zeros() }),
                        DataNorm::Squared => (r * r, -2.0 * e),
                    };
                    energy += w * (rho * inv + log_sigma);
                    g_lm[i] = d_rho * (w * inv);
                    g_extra[k] = w * (1.0 - 2.0 * rho * inv);
                }
            }
            DataTerm::Robust { truncation } => {
                let alpha = x[l.extra];
                let log_c = x[l.extra + 1];
                let c = log_c.exp();
                let (log_z, d_log_z) = robust::log_partition(alpha, truncation);
                for &i in &problem.observed {
                    let e = problem.targets[i].unwrap() - fwd.positions[i];
                    let r = e.norm();
                    let t = r / c;
                    let (f, fx, fa) = robust::rho_with_grad(t, alpha);
                    energy += w * (f + log_c + log_z);
                    if r > 0.0 {
                        g_lm[i] = -e / r * (w * fx / c);
                    }
                    g_extra[0] += w * (fa + d_log_z);
                    g_extra[1] += w * (1.0 - fx * t);
                }
            }
        }

        let beta = &x[..l.pose];
        let pose = &x[l.pose..l.root];
        let (nb, nz) = (norm(beta), norm(pose));
        energy += self.config.lambda_beta * nb;
        if problem.ae.is_some() {
            energy += self.config.lambda_z * nz;
        }

        if let Some(g) = grad {
            let pg = self.eval.backward(&fwd, &g_lm);
            self.pull_back(&pg, pose, g);
            if nb > 0.0 {
                for k in 0..l.pose {
                    g[k] += self.config.lambda_beta * beta[k] / nb;
                }
            }
            if problem.ae.is_some() && nz > 0.0 {
                for k in 0..pose.len() {
                    g[l.pose + k] += self.config.lambda_z * pose[k] / nz;
                }
            }
            g[l.extra..].copy_from_slice(&g_extra);
        }
        Ok(energy)
    }

    /// Writes the body-parameter part of a pulled-back gradient into the flat layout.
    fn pull_back(&self, pg: &ParamGrad, pose: &[f64], g: &mut [f64]) {
        let l = self.layout;
        g[..l.pose].copy_from_slice(&pg.beta);
        let g_theta: Vec<f64> = pg.theta.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        match self.problem.ae {
            Some(ae) => g[l.pose..l.root].copy_from_slice(&ae.decode_vjp(pose, &g_theta)),
            None => g[l.pose..l.root].copy_from_slice(&g_theta),
        }
        for a in 0..3 {
            g[l.root + a] = pg.root_rotation[a];
            g[l.root + 3 + a] = pg.root_translation[a];
        }
    }

    /// Runs the annealing schedule over the `free` coordinates of `x`.
    fn run_stage(
        &mut self,
        x: &mut [f64],
        free: &[usize],
        lower: &[f64],
        upper: &[f64],
        history: &mut Vec<Vec<f64>>,
    ) -> Result<(usize, bool)> {
        let schedule = self.config.anneal_schedule.clone();
        self.smoothing = self.config.norm_smoothing;
        let mut used = 0;
        let mut converged = true;
        for round in &schedule {
            let budget = round.iterations.min(self.config.max_iterations.saturating_sub(used));
            self.weight = round.weight;
            let report = match (self.config.solver, self.data) {
                (Solver::LevenbergMarquardt, DataTerm::Gaussian(_)) => {
                    let extra = self.layout.extra;
                    let body: Vec<usize> = free.iter().copied().filter(|&i| i < extra).collect();
                    let profile = free.iter().any(|&i| i >= extra);
                    self.levenberg_marquardt(x, &body, profile, lower, upper, budget)?
                }
                _ => self.minimize_subset(x, free, lower, upper, budget)?,
            };
            used += report.iterations;
            converged = report.converged();
            history.push(report.history);
        }
        self.weight = 1.0;
        self.smoothing = 0.0;
        Ok((used, converged))
    }

    fn minimize_subset(
        &self,
        x: &mut [f64],
        free: &[usize],
        lower: &[f64],
        upper: &[f64],
        max_iterations: usize,
    ) -> Result<SolveReport> {
        let sub0: Vec<f64> = free.iter().map(|&i| x[i]).collect();
        let lo: Vec<f64> = free.iter().map(|&i| lower[i]).collect();
        let hi: Vec<f64> = free.iter().map(|&i| upper[i]).collect();
        let mut full = x.to_vec();
        let mut full_grad = vec![0.0; x.len()];
        let report = lbfgs::minimize(
            |sub, g| {
                for (k, &i) in free.iter().enumerate() {
                    full[i] = sub[k];
                }
                let e = self.evaluate(&full, Some(&mut full_grad))?;
                for (k, &i) in free.iter().enumerate() {
                    g[k] = full_grad[i];
                }
                Ok(e)
            },
            &sub0,
            &lo,
            &hi,
            &self.config.lbfgs(max_iterations),
        )?;
        for (k, &i) in free.iter().enumerate() {
            x[i] = report.x[k];
        }
        Ok(report)
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.layout.len();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        let [s_lo, s_hi] = self.config.sigma_bounds;
        let e = self.layout.extra;
        match self.data {
            DataTerm::Gaussian(_) => {
                lo[e..].fill(s_lo.ln());
                hi[e..].fill(s_hi.ln());
            }
            DataTerm::Robust { .. } => {
                [lo[e], hi[e]] = self.config.alpha_range;
                lo[e + 1] = s_lo.ln();
                hi[e + 1] = s_hi.ln();
            }
        }
        (lo, hi)
    }

    fn result(&self, x: &[f64], stage_iterations: Vec<usize>, converged: bool, history: Vec<Vec<f64>>) -> Result<FitResult> {
        let problem = self.problem;
        let l = self.layout;
        let params = self.params(x)?;
        let energy = self.evaluate(x, None)?;
        if !energy.is_finite() {
            return Err(Error::Numerical("final energy is not finite".into()));
        }
        let positions = self.eval.forward(&params)?.positions;
        let n = problem.targets.len();
        let mut sigma = vec![None; n];
        let mut residuals = vec![None; n];
        let mut robust_state = None;
        match self.data {
            DataTerm::Gaussian(_) => {
                for (k, &i) in problem.observed.iter().enumerate() {
                    sigma[i] = Some(x[l.extra + k].exp());
                }
            }
            DataTerm::Robust { .. } => {
                let c = x[l.extra + 1].exp();
                for &i in &problem.observed {
                    sigma[i] = Some(c);
                }
                robust_state = Some(RobustState { alpha: x[l.extra], scale: c });
            }
        }
        for &i in &problem.observed {
            residuals[i] = Some((problem.targets[i].unwrap() - positions[i]).norm());
        }
        Ok(FitResult {
            params,
            z: if problem.ae.is_some() { x[l.pose..l.root].to_vec() } else { Vec::new() },
            sigma,
            energy,
            converged,
            stage_iterations,
            residuals,
            energy_history: history,
            robust: robust_state,
        })
    }
}

/// Rest-shape starting point: β = 0, pose at the encoded rest pose, root
/// from rigid alignment of three well-spread anchor landmarks.
pub fn initial_state(problem: &FitProblem, config: &FitConfig) -> Result<FitState> {
    let model = problem.model;
    let beta = vec![0.0; model.num_shapes()];
    let pose = match problem.ae {
        Some(ae) => ae.encode(&vec![0.0; ae.pose_dim()]),
        None => vec![0.0; 3 * model.num_joints()],
    };
    let rest = model.landmarks_for(&problem.params(&beta, &pose, RootTransform::identity())?)?;
    let root = procrustes_root(problem, &rest.positions);
    Ok(FitState { beta, pose, root, log_sigma: vec![config.sigma_init.ln(); problem.observed.len()] })
}

fn procrustes_root(problem: &FitProblem, rest: &[Vector3<f64>]) -> RootTransform {
    let model = problem.model;
    let root_joint = model.parents().iter().position(Option::is_none).unwrap_or(0);
    let rigid_on_root = |i: usize| {
        model.landmarks()[i].kind == LandmarkKind::Marker
            && model.landmarks()[i].weights.iter().all(|&(v, _)| {
                model.skin_weights()[v].iter().all(|&(j, w)| j == root_joint || w == 0.0)
            })
    };
    let mut candidates: Vec<usize> = problem.observed.iter().copied().filter(|&i| rigid_on_root(i)).collect();
    if candidates.len() < 3 {
        candidates = problem.observed.clone();
    }
    candidates.truncate(24);

    let target = |i: usize| problem.targets[i].unwrap();
    // Every well-spread triple is a hypothesis; the one whose alignment best
    // explains the other candidates (median residual) wins, so a single
    // displaced anchor cannot throw off the initial root.
    let min_area = 1e-4;
    let mut best = None;
    let mut best_score = (f64::INFINITY, 0.0);
    let mut residuals = Vec::with_capacity(candidates.len());
    for a in 0..candidates.len() {
        for b in a + 1..candidates.len() {
            for c in b + 1..candidates.len() {
                let idx = [candidates[a], candidates[b], candidates[c]];
                let area = triangle_area(&rest[idx[0]], &rest[idx[1]], &rest[idx[2]]);
                if area < min_area {
                    continue;
                }
                let Ok(g) = kabsch(&idx.map(|i| rest[i]), &idx.map(target)) else { continue };
                residuals.clear();
                residuals.extend(candidates.iter().map(|&i| (g.apply(&rest[i]) - target(i)).norm()));
                residuals.sort_by(f64::total_cmp);
                let score = (residuals[residuals.len() / 2], -area);
                if score.0 < best_score.0 - 1e-12 || (score.0 <= best_score.0 + 1e-12 && score.1 < best_score.1) {
                    best_score = score;
                    best = Some(idx);
                }
            }
        }
    }
    let aligned = best.and_then(|idx| kabsch(&idx.map(|i| rest[i]), &idx.map(target)).ok());
    match aligned {
        Some(g) => RootTransform::from_matrix(&g.rotation, g.translation),
        None => {
            let n = problem.observed.len() as f64;
            let shift: Vector3<f64> = problem.observed.iter().map(|&i| target(i) - rest[i]).sum::<Vector3<f64>>() / n;
            RootTransform { rotation: Vector3::zeros(), translation: shift }
        }
    }
}

/// Fits in the configured mode.
pub fn fit(problem: &FitProblem, config: &FitConfig) -> Result<FitResult> {
    match config.mode {
        FitMode::NoiseAware => noise_aware_fit(problem, config, None),
        FitMode::Plain => plain_fit(problem, config),
        FitMode::Barron => barron_fit(problem, config, config.alpha_range, config.alpha_init),
    }
}

/// Like [`fit`] in noise-aware mode, but starting from `init`.
pub fn fit_from(problem: &FitProblem, config: &FitConfig, init: &FitState) -> Result<FitResult> {
    noise_aware_fit(problem, config, Some(init))
}

fn noise_aware_fit(problem: &FitProblem, config: &FitConfig, init: Option<&FitState>) -> Result<FitResult> {
    config.validate()?;
    let mut obj = Objective::new(problem, config, DataTerm::Gaussian(config.data_norm));
    let state = match init {
        Some(s) => s.clone(),
        None => initial_state(problem, config)?,
    };
    let mut x = state.to_vec();
    check_len(obj.layout.len(), x.len())?;
    let (lo, hi) = obj.bounds();
    let l = obj.layout;
    let mut history = Vec::new();

    let stage1: Vec<usize> = (0..l.extra).collect();
    let (it1, _) = obj.run_stage(&mut x, &stage1, &lo, &hi, &mut history)?;
    let stage2: Vec<usize> = (l.pose..l.root).chain(l.extra..l.len()).collect();
    let (it2, converged) = obj.run_stage(&mut x, &stage2, &lo, &hi, &mut history)?;
    obj.result(&x, vec![it1, it2], converged, history)
}

/// Baseline with σ frozen at 1 and no second stage.
pub fn plain_fit(problem: &FitProblem, config: &FitConfig) -> Result<FitResult> {
    let config = FitConfig { sigma_init: 1.0, sigma_bounds: [1.0, 1.0], ..config.clone() };
    config.validate()?;
    let mut obj = Objective::new(problem, &config, DataTerm::Gaussian(config.data_norm));
    let mut x = initial_state(problem, &config)?.to_vec();
    let (lo, hi) = obj.bounds();
    let free: Vec<usize> = (0..obj.layout.extra).collect();
    let mut history = Vec::new();
    let (it, converged) = obj.run_stage(&mut x, &free, &lo, &hi, &mut history)?;
    obj.result(&x, vec![it], converged, history)
}

/// Adaptive robust-loss baseline: shape α and scale are optimized jointly
/// with the body, α bounded to `alpha_range`.
pub fn barron_fit(problem: &FitProblem, config: &FitConfig, alpha_range: [f64; 2], alpha_init: f64) -> Result<FitResult> {
    let config = FitConfig { alpha_range, alpha_init, ..config.clone() };
    config.validate()?;
    let mut obj = Objective::new(problem, &config, DataTerm::Robust { truncation: config.barron_truncation });
    let mut x = initial_state(problem, &config)?.to_vec();
    x.truncate(obj.layout.extra);
    x.extend([alpha_init, config.sigma_init.ln()]);
    let (lo, hi) = obj.bounds();
    let l = obj.layout;
    let mut history = Vec::new();
    let stage1: Vec<usize> = (0..l.extra).collect();
    let (it1, _) = obj.run_stage(&mut x, &stage1, &lo, &hi, &mut history)?;
    let stage2: Vec<usize> = (l.pose..l.root).chain(l.extra..l.len()).collect();
    let (it2, converged) = obj.run_stage(&mut x, &stage2, &lo, &hi, &mut history)?;
    obj.result(&x, vec![it1, it2], converged, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::IdentityAutoencoder;
    use crate::model::{desk_body, toy_model};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(model: &BodyModel, rng: &mut ChaCha8Rng, amp: f64) -> BodyParams {
        BodyParams {
            beta: (0..model.num_shapes()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            theta: (0..model.num_joints())
                .map(|_| Vector3::from_fn(|_, _| rng.random_range(-amp..amp)))
                .collect(),
            root: RootTransform {
                rotation: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                translation: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            },
        }
    }

    fn joint_rmse(model: &BodyModel, a: &BodyParams, b: &BodyParams) -> f64 {
        let (ja, jb) = (model.posed_joints(a).unwrap(), model.posed_joints(b).unwrap());
        (ja.iter().zip(&jb).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / ja.len() as f64).sqrt()
    }

    #[test]
    fn energy_oracles() {
        let m = toy_model();
        let p = BodyParams::rest(&m);
        let lm = m.landmarks_for(&p).unwrap();
        let mut targets: Vec<_> = lm.positions.iter().map(|x| Some(*x)).collect();
        let problem = FitProblem::new(&m, None, targets.clone()).unwrap();
        let ones = vec![1.0; m.num_landmarks()];
        assert_eq!(data_energy(&problem, &p, &ones, DataNorm::Norm).unwrap(), 0.0);
        for t in targets.iter_mut().skip(1) {
            *t = None;
        }
        targets.iter_mut().skip(1).take(4).zip(lm.positions.iter().skip(1)).for_each(|(t, x)| *t = Some(*x));
        targets[0] = Some(lm.positions[0] + Vector3::new(0.0, 1.0, 0.0));
        let problem = FitProblem::new(&m, None, targets).unwrap();
        assert!((data_energy(&problem, &p, &ones, DataNorm::Norm).unwrap() - 0.5).abs() < 1e-12);

        let cfg = FitConfig { lambda_beta: 1.0, ..Default::default() };
        assert_eq!(prior_energy(&[0.0; 3], &[0.0; 4], &cfg), 0.0);
        assert!((prior_energy(&[3.0, 4.0, 0.0], &[], &cfg) - 5.0).abs() < 1e-15);
        let z = [0.3, -0.4];
        let a = prior_energy(&[], &z, &FitConfig { lambda_z: 0.7, ..Default::default() });
        let b = prior_energy(&[], &z, &FitConfig { lambda_z: 1.4, ..Default::default() });
        assert_eq!(2.0 * a, b);
    }

    #[test]
    fn too_few_observations_rejected() {
        let m = toy_model();
        let mut t = vec![None; m.num_landmarks()];
        t[0] = Some(Vector3::zeros());
        assert!(FitProblem::new(&m, None, t).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = desk_body();
        let ae = IdentityAutoencoder { dim: 3 * m.num_joints() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for norm_kind in [DataNorm::Norm, DataNorm::Squared] {
            let cfg = FitConfig { data_norm: norm_kind, lambda_beta: 0.3, lambda_z: 0.2, ..Default::default() };
            let truth = random_params(&m, &mut rng, 0.5);
            let lm = m.landmarks_for(&truth).unwrap();
            let problem = FitProblem::from_landmarks(&m, Some(&ae), &lm, None).unwrap();
            let p0 = random_params(&m, &mut rng, 0.5);
            let state = FitState {
                beta: p0.beta.clone(),
                pose: p0.theta_flat(),
                root: p0.root,
                log_sigma: (0..problem.observed().len()).map(|_| rng.random_range(-4.0..-1.0)).collect(),
            };
            let g = gradient(&problem, &cfg, &state).unwrap();
            let x = state.to_vec();
            let h = 1e-6;
            for k in 0..x.len() {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let ep = total_energy(&problem, &cfg, &FitState::from_vec(&problem, &xp).unwrap()).unwrap();
                let em = total_energy(&problem, &cfg, &FitState::from_vec(&problem, &xm).unwrap()).unwrap();
                let fd = (ep - em) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "coord {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn sigma_gradient_vanishes_at_closed_form() {
        let m = toy_model();
        let p = BodyParams::rest(&m);
        let lm = m.landmarks_for(&p).unwrap();
        let offset = Vector3::new(0.03, -0.01, 0.02);
        let targets: Vec<_> = lm.positions.iter().map(|x| Some(x + offset)).collect();
        let problem = FitProblem::new(&m, None, targets).unwrap();
        for kind in [DataNorm::Norm, DataNorm::Squared] {
            let cfg = FitConfig { data_norm: kind, ..Default::default() };
            let rho = match kind {
                DataNorm::Norm => offset.norm(),
                DataNorm::Squared => offset.norm_squared(),
            };
            let state = FitState {
                beta: p.beta.clone(),
                pose: p.theta_flat(),
                root: p.root,
                log_sigma: vec![rho.sqrt().ln(); problem.observed().len()],
            };
            let g = gradient(&problem, &cfg, &state).unwrap();
            let n = problem.observed().len();
            assert!(g[g.len() - n..].iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn noiseless_fit_from_truth_stays_put() {
        let m = desk_body();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_params(&m, &mut rng, 0.4);
        let lm = m.landmarks_for(&truth).unwrap();
        let problem = FitProblem::markers_only(&m, None, &lm).unwrap();
        let cfg = FitConfig { lambda_beta: 0.0, lambda_z: 0.0, ..Default::default() };
        let init = FitState {
            beta: truth.beta.clone(),
            pose: truth.theta_flat(),
            root: truth.root,
            log_sigma: vec![cfg.sigma_init.ln(); problem.observed().len()],
        };
        let r = fit_from(&problem, &cfg, &init).unwrap();
        assert!(joint_rmse(&m, &r.params, &truth) < 1e-6);
    }

    #[test]
    fn energy_history_is_monotone_within_rounds() {
        let m = desk_body();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = random_params(&m, &mut rng, 0.3);
        let lm = m.landmarks_for(&truth).unwrap();
        let problem = FitProblem::markers_only(&m, None, &lm).unwrap();
        let r = fit(&problem, &FitConfig::default()).unwrap();
        for h in &r.energy_history {
            assert!(h.windows(2).all(|w| w[1] <= w[0]));
        }
        assert_eq!(r.stage_iterations.len(), 2);
        let [lo, hi] = FitConfig::default().sigma_bounds;
        assert!(r.observed_sigma().iter().all(|s| *s >= lo && *s <= hi));
    }

    #[test]
    fn robust_fit_reports_finite_energy() {
        let m = desk_body();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_params(&m, &mut rng, 0.3);
        let mut lm = m.landmarks_for(&truth).unwrap();
        for p in lm.positions.iter_mut() {
            *p += Vector3::from_fn(|_, _| rng.random_range(-0.02..0.02));
        }
        let problem = FitProblem::markers_only(&m, None, &lm).unwrap();
        let r = barron_fit(&problem, &FitConfig::default(), [-7.0, 4.0], -4.5).unwrap();
        assert!(r.energy.is_finite());
        let s = r.robust.unwrap();
        assert!((-7.0..=4.0).contains(&s.alpha));
    }
}
