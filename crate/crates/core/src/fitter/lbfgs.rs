//! Limited-memory BFGS with simple bound projection and Armijo backtracking.
//!
//! Variables sitting on a bound with the gradient pushing outward are held
//! fixed for the step; every accepted step satisfies sufficient decrease, so
//! the recorded energy history is non-increasing.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Infinity norm of the projected gradient.
    pub grad_tol: f64,
    /// Infinity norm of an accepted step.
    pub step_tol: f64,
    /// Relative energy decrease of an accepted step.
    pub energy_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 200,
            grad_tol: 1e-9,
            step_tol: 1e-11,
            energy_tol: 1e-14,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Step,
    Energy,
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub energy: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Energy after every accepted step, starting with the initial energy.
    pub history: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f` (which writes its gradient into the second argument) subject
/// to `lower ≤ x ≤ upper` elementwise.
pub fn minimize<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LbfgsOptions) -> Result<SolveReport>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut eval = |x: &[f64], g: &mut [f64]| -> Result<f64> {
        let e = f(x, g)?;
        if !e.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("energy or gradient is not finite ({e})")));
        }
        Ok(e)
    };

    let mut x = x0.to_vec();
    project(&mut x);
    let mut g = vec![0.0; n];
    let mut energy = eval(&x, &mut g)?;
    let mut history = vec![energy];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];

    if n == 0 {
        return Ok(SolveReport { x, energy, iterations: 0, termination: Termination::Gradient, history });
    }

    for iter in 0..opts.max_iterations {
        let active: Vec<bool> =
            (0..n).map(|i| (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)).collect();
        let pg: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { g[i] }).collect();
        if inf_norm(&pg) < opts.grad_tol {
            return Ok(SolveReport { x, energy, iterations: iter, termination: Termination::Gradient, history });
        }

        let mut retried = false;
        loop {
            let mut d = two_loop(&memory, &pg);
            for i in 0..n {
                d[i] = if active[i] { 0.0 } else { -d[i] };
            }
            if dot(&d, &pg) >= 0.0 {
                memory.clear();
                d = pg.iter().map(|v| -v).collect();
            }
            let mut t = if memory.is_empty() { (1.0 / inf_norm(&d)).min(1.0) } else { 1.0 };

            let mut accepted = None;
            for _ in 0..opts.max_backtracks {
                for i in 0..n {
                    xt[i] = x[i] + t * d[i];
                }
                project(&mut xt);
                let decrease: f64 = (0..n).map(|i| g[i] * (xt[i] - x[i])).sum();
                if decrease < 0.0 {
                    let et = eval(&xt, &mut gt)?;
                    if et <= energy + opts.armijo * decrease {
                        accepted = Some(et);
                        break;
                    }
                }
                t *= 0.5;
            }

            match accepted {
                Some(et) => {
                    let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
                    let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                        if memory.len() == opts.memory {
                            memory.pop_front();
                        }
                        memory.push_back((s.clone(), y, 1.0 / sy));
                    }
                    let previous = energy;
                    std::mem::swap(&mut x, &mut xt);
                    std::mem::swap(&mut g, &mut gt);
                    energy = et;
                    history.push(energy);
                    if inf_norm(&s) < opts.step_tol {
                        return Ok(SolveReport { x, energy, iterations: iter + 1, termination: Termination::Step, history });
                    }
                    if previous - energy <= opts.energy_tol * previous.abs().max(1.0) {
                        return Ok(SolveReport {
                            x,
                            energy,
                            iterations: iter + 1,
                            termination: Termination::Energy,
                            history,
                        });
                    }
                    break;
                }
                None if !retried && !memory.is_empty() => {
                    memory.clear();
                    retried = true;
                }
                None => {
                    return Ok(SolveReport { x, energy, iterations: iter, termination: Termination::Stalled, history });
                }
            }
        }
    }
    Ok(SolveReport { x, energy, iterations: opts.max_iterations, termination: Termination::MaxIterations, history })
}

fn two_loop(memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}
