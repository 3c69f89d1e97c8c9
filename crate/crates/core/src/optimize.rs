//! Limited-memory BFGS with Armijo backtracking.
//!
//! The objective returns `None` (or non-finite values) where it cannot be
//! evaluated, e.g. when a kernel matrix fails to factorize. Such trial points
//! are treated like a failed sufficient-decrease test and the step is halved.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{invalid, Result};

const ARMIJO_C1: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;
/// Largest infinity-norm of a trial step.
const MAX_STEP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub max_iters: usize,
    /// Infinity-norm of the gradient below which the run stops.
    pub grad_tol: f64,
    /// Relative parameter change below which the run stops.
    pub step_tol: f64,
    /// Quasi-Newton history length.
    pub memory: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { max_iters: 200, grad_tol: 1e-5, step_tol: 1e-9, memory: 10 }
    }
}

impl OptimizeConfig {
    /// Evaluate at the initial point only.
    pub fn frozen() -> Self {
        Self { max_iters: 0, ..Self::default() }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0 && self.memory > 0) {
            return Err(invalid("optimizer tolerances and memory must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub argmin: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// A non-finite objective or gradient stopped the run; `argmin` is the
    /// best finite iterate.
    pub diverged: bool,
    /// Objective value of every accepted iterate, starting with `x0`.
    pub history: Vec<f64>,
}

fn finite_eval(r: Option<(f64, DVector<f64>)>) -> Option<(f64, DVector<f64>)> {
    r.filter(|(f, g)| f.is_finite() && g.iter().all(|v| v.is_finite()))
}

/// Minimize `objective` from `x0`.
pub fn minimize<F>(mut objective: F, x0: DVector<f64>, cfg: &OptimizeConfig) -> Result<OptimizeResult>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    cfg.validate()?;
    let (mut f, mut g) =
        finite_eval(objective(&x0)).ok_or_else(|| invalid("objective is not finite at the initial point"))?;
    if g.len() != x0.len() {
        return Err(invalid("gradient length differs from parameter length"));
    }
    let mut x = x0;
    let mut history = alloc::vec![f];
    let mut memory: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut converged = g.amax() <= cfg.grad_tol;
    let mut diverged = false;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iters {
        let mut d = two_loop(&g, &memory);
        let mut slope = d.dot(&g);
        if !(slope < 0.0) {
            memory.clear();
            d = -&g;
            slope = d.dot(&g);
        }
        let mut alpha = 1.0;
        let dmax = d.amax();
        if dmax * alpha > MAX_STEP {
            alpha = MAX_STEP / dmax;
        }

        let mut accepted = None;
        let mut saw_finite = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &d * alpha;
            if let Some((ft, gt)) = finite_eval(objective(&trial)) {
                saw_finite = true;
                if ft <= f + ARMIJO_C1 * alpha * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= SHRINK;
        }
        iterations += 1;

        let Some((x_new, f_new, g_new)) = accepted else {
            if !memory.is_empty() {
                // Retry from steepest descent before giving up.
                memory.clear();
                continue;
            }
            diverged = !saw_finite;
            break;
        };

        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back((s.clone(), yv, 1.0 / sy));
        }
        let small_step = s.amax() <= cfg.step_tol * x.amax().max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        history.push(f);
        converged = g.amax() <= cfg.grad_tol || small_step;
    }

    Ok(OptimizeResult { argmin: x, value: f, iterations, converged: converged && !diverged, diverged, history })
}

fn two_loop(g: &DVector<f64>, memory: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}
