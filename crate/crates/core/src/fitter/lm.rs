//! Levenberg–Marquardt for the Gaussian data term.
//!
//! Each iteration linearizes the landmarks, replaces the (smoothed) norm by
//! its quadratic majorizer at the current residual, and solves the damped
//! normal equations. A step is kept only if the true energy drops, so the
//! energy history stays non-increasing. With `profile_sigma`, each σ is set
//! to its closed-form minimizer `σ² = ρ` (clamped to bounds) before the
//! energy is compared.

use nalgebra::{DMatrix, DVector, Vector3};

use super::lbfgs::{SolveReport, Termination};
use super::{DataNorm, DataTerm, Objective};
use crate::error::{Error, Result};

const ARMIJO: f64 = 1e-4;
const MAX_DAMPING: f64 = 1e12;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl Objective<'_, '_> {
    fn norm_kind(&self) -> DataNorm {
        match self.data {
            DataTerm::Gaussian(kind) => kind,
            DataTerm::Robust { .. } => unreachable!("robust data term is solved by L-BFGS"),
        }
    }

    /// Per-landmark penalty ρ and the coefficient of `||e||²` in its majorizer.
    fn penalty(&self, r: f64) -> (f64, f64) {
        match self.norm_kind() {
            DataNorm::Squared => (r * r, 1.0),
            DataNorm::Norm => {
                let eps = self.smoothing;
                let s = (r * r + eps * eps).sqrt();
                (s - eps, 0.5 / s.max(1e-10))
            }
        }
    }

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pos = self.eval.forward(&self.params(x)?)?.positions;
        Ok(self.problem.observed.iter().map(|&i| (self.problem.targets[i].unwrap() - pos[i]).norm()).collect())
    }

    fn profile_sigma(&self, x: &mut [f64], lower: &[f64], upper: &[f64]) -> Result<()> {
        let e = self.layout.extra;
        for (k, r) in self.residuals(x)?.into_iter().enumerate() {
            let (rho, _) = self.penalty(r);
            let ls = if rho > 0.0 { 0.5 * rho.ln() } else { f64::NEG_INFINITY };
            x[e + k] = ls.clamp(lower[e + k], upper[e + k]);
        }
        Ok(())
    }

    /// Gauss–Newton curvature of the majorized energy over `free` body coordinates.
    fn curvature(&self, x: &[f64], free: &[usize]) -> Result<DMatrix<f64>> {
        let l = self.layout;
        let problem = self.problem;
        let fwd = self.eval.forward(&self.params(x)?)?;
        let n = free.len();
        let mut h = DMatrix::zeros(n, n);
        let mut seed = vec![Vector3::zeros(); problem.targets.len()];
        let mut row = vec![0.0; l.len()];
        let mut jr = DVector::zeros(n);
        for (k, &i) in problem.observed.iter().enumerate() {
            let r = (problem.targets[i].unwrap() - fwd.positions[i]).norm();
            let a = 0.5 * (-2.0 * x[l.extra + k]).exp();
            let c = 2.0 * self.weight * a * self.penalty(r).1;
            for axis in 0..3 {
                seed[i] = Vector3::ith(axis, 1.0);
                let pg = self.eval.backward(&fwd, &seed);
                self.pull_back(&pg, &x[l.pose..l.root], &mut row);
                for (slot, &f) in free.iter().enumerate() {
                    jr[slot] = row[f];
                }
                for b in 0..n {
                    let cb = c * jr[b];
                    if cb != 0.0 {
                        for a in b..n {
                            h[(a, b)] += cb * jr[a];
                        }
                    }
                }
            }
            seed[i] = Vector3::zeros();
        }
        // Curvature of λ||v|| is λ/||v|| (I − v̂v̂ᵀ); the floor keeps it finite at 0.
        let mut prior = |range: std::ops::Range<usize>, lambda: f64| {
            if lambda == 0.0 {
                return;
            }
            let v = &x[range.clone()];
            let nv = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            let scale = lambda / nv.max(1e-3);
            for (a, &fa) in free.iter().enumerate() {
                if !range.contains(&fa) {
                    continue;
                }
                for (b, &fb) in free.iter().enumerate() {
                    if !range.contains(&fb) {
                        continue;
                    }
                    let outer = if nv > 0.0 { x[fa] * x[fb] / (nv * nv) } else { 0.0 };
                    let eye = if fa == fb { 1.0 } else { 0.0 };
                    h[(a, b)] += scale * (eye - outer);
                }
            }
        };
        prior(0..l.pose, self.config.lambda_beta);
        if problem.ae.is_some() {
            prior(l.pose..l.root, self.config.lambda_z);
        }
        h.fill_upper_triangle_with_lower_triangle();
        Ok(h)
    }

    pub(super) fn levenberg_marquardt(
        &self,
        x: &mut [f64],
        free: &[usize],
        profile_sigma: bool,
        lower: &[f64],
        upper: &[f64],
        max_iterations: usize,
    ) -> Result<SolveReport> {
        let n = free.len();
        let mut g = vec![0.0; x.len()];
        if profile_sigma {
            self.profile_sigma(x, lower, upper)?;
        }
        let mut energy = self.evaluate(x, Some(&mut g))?;
        let mut history = vec![energy];
        let mut damping = 1e-3;
        let mut xt = x.to_vec();
        let mut gt = vec![0.0; x.len()];
        let done = |x: &[f64], energy, iterations, termination, history| SolveReport {
            x: x.to_vec(),
            energy,
            iterations,
            termination,
            history,
        };

        for iter in 0..max_iterations {
            let gf: Vec<f64> = free.iter().map(|&i| g[i]).collect();
            if inf_norm(&gf) < self.config.grad_tol {
                return Ok(done(x, energy, iter, Termination::Gradient, history));
            }
            let h = self.curvature(x, free)?;
            let diag_floor = 1e-9 * (0..n).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1e-12);
            let rhs = -DVector::from_vec(gf.clone());
            let accepted = loop {
                if damping > MAX_DAMPING {
                    return Ok(done(x, energy, iter, Termination::Stalled, history));
                }
                let mut a = h.clone();
                for i in 0..n {
                    a[(i, i)] += damping * h[(i, i)].max(diag_floor);
                }
                let Some(chol) = a.cholesky() else {
                    damping *= 10.0;
                    continue;
                };
                let d = chol.solve(&rhs);
                xt.copy_from_slice(x);
                for (slot, &i) in free.iter().enumerate() {
                    xt[i] = (x[i] + d[slot]).clamp(lower[i], upper[i]);
                }
                if profile_sigma {
                    self.profile_sigma(&mut xt, lower, upper)?;
                }
                let predicted: f64 = free.iter().map(|&i| g[i] * (xt[i] - x[i])).sum();
                let et = self.evaluate(&xt, Some(&mut gt))?;
                if !et.is_finite() {
                    return Err(Error::Numerical("energy is not finite".into()));
                }
                if et < energy && et <= energy + ARMIJO * predicted.min(0.0) {
                    damping = (damping / 3.0).max(1e-15);
                    break et;
                }
                damping *= 4.0;
            };
            let step = free.iter().map(|&i| (xt[i] - x[i]).abs()).fold(0.0, f64::max);
            let previous = energy;
            x.copy_from_slice(&xt);
            std::mem::swap(&mut g, &mut gt);
            energy = accepted;
            history.push(energy);
            if step < self.config.step_tol {
                return Ok(done(x, energy, iter + 1, Termination::Step, history));
            }
            if previous - energy <= 1e-15 * previous.abs().max(1.0) {
                return Ok(done(x, energy, iter + 1, Termination::Energy, history));
            }
        }
        Ok(done(x, energy, max_iterations, Termination::MaxIterations, history))
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::model::{desk_body, BodyParams, RootTransform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn curvature_matches_hessian_at_zero_residual() {
        let m = desk_body();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = BodyParams {
            beta: (0..m.num_shapes()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            theta: (0..m.num_joints()).map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5))).collect(),
            root: RootTransform { rotation: Vector3::new(0.3, -0.2, 0.5), translation: Vector3::new(0.1, 0.2, 0.3) },
        };
        let lm = m.landmarks_for(&truth).unwrap();
        let problem = FitProblem::markers_only(&m, None, &lm).unwrap();
        let cfg = FitConfig { data_norm: DataNorm::Squared, lambda_beta: 0.0, lambda_z: 0.0, ..Default::default() };
        let obj = Objective::new(&problem, &cfg, DataTerm::Gaussian(DataNorm::Squared));
        let state = FitState { beta: truth.beta.clone(), pose: truth.theta_flat(), root: truth.root, log_sigma: vec![0.0; problem.observed().len()] };
        let x = state.to_vec();
        let free: Vec<usize> = (0..obj.layout.extra).collect();
        let h = obj.curvature(&x, &free).unwrap();
        let e0 = obj.evaluate(&x, None).unwrap();
        let step = 1e-4;
        for _ in 0..5 {
            let v: Vec<f64> = free.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut xp = x.clone();
            let mut xm = x.clone();
            for (k, &i) in free.iter().enumerate() {
                xp[i] += step * v[k];
                xm[i] -= step * v[k];
            }
            let fd = (obj.evaluate(&xp, None).unwrap() + obj.evaluate(&xm, None).unwrap() - 2.0 * e0) / (step * step);
            let vv = nalgebra::DVector::from_vec(v);
            let model = (vv.transpose() * &h * &vv)[(0, 0)];
            assert!((fd - model).abs() < 1e-4 * fd.abs(), "{fd} vs {model}");
        }
    }
}
