//! Finite-difference and convexity spot checks of user callbacks.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CoupledProblem;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub points: usize,
    /// Worst `‖fd − analytic‖ / max(1, ‖fd‖)` over nodes and points.
    pub max_rel_err_grad: f64,
    pub max_rel_err_jac: f64,
}

impl DerivativeReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err_grad <= tol && self.max_rel_err_jac <= tol
    }
}

/// Compares callback derivatives with central differences,
/// `h = 1e-6 (1 + |x_k|)`, at `points` random interior points per node.
pub fn check_derivatives(problem: &CoupledProblem, points: usize, seed: u64) -> Result<DerivativeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = DerivativeReport {
        points,
        max_rel_err_grad: 0.0,
        max_rel_err_jac: 0.0,
    };
    let x_lo = problem.lower();
    let x_hi = problem.upper();
    for _ in 0..points {
        let x = DVector::from_fn(x_lo.len(), |k, _| {
            let (l, u) = (x_lo[k], x_hi[k]);
            // stay clear of the box faces so both probes are inside
            let s = 0.05 + 0.9 * rng.gen::<f64>();
            l + (u - l) * s
        });
        for i in 0..problem.n() {
            let nd = problem.node(i);
            let fun = nd.functions();
            let xs = problem.gather_scope(i, &x);
            let ev = nd.evaluate(i, &xs)?;
            let mut fd_grad = DVector::zeros(xs.len());
            let mut fd_jac = ev.jac_g.clone() * 0.0;
            for k in 0..xs.len() {
                let h = 1e-6 * (1.0 + xs[k].abs());
                let (mut xp, mut xm) = (xs.clone(), xs.clone());
                xp[k] += h;
                xm[k] -= h;
                fd_grad[k] = (fun.objective(&xp) - fun.objective(&xm)) / (2.0 * h);
                let col = (fun.constraint(&xp) - fun.constraint(&xm)) / (2.0 * h);
                fd_jac.column_mut(k).copy_from(&col);
            }
            let eg = (&fd_grad - &ev.grad_f).norm() / fd_grad.norm().max(1.0);
            let ej = (&fd_jac - &ev.jac_g).norm() / fd_jac.norm().max(1.0);
            rep.max_rel_err_grad = rep.max_rel_err_grad.max(eg);
            rep.max_rel_err_jac = rep.max_rel_err_jac.max(ej);
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub pairs: usize,
    /// Midpoint inequalities violated by `Σ f_i`.
    pub objective_failures: usize,
    /// Midpoint inequalities violated by some row of some `g_i`.
    pub constraint_failures: usize,
}

/// Random midpoint tests of `Σ f_i` and of each `g_i`. A failure disproves
/// convexity; a pass proves nothing.
pub fn spot_check_convexity(problem: &CoupledProblem, pairs: usize, seed: u64) -> Result<ConvexityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = problem.lower();
    let hi = problem.upper();
    let mut draw = || DVector::from_fn(lo.len(), |k, _| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>());
    let mut rep = ConvexityReport {
        pairs,
        objective_failures: 0,
        constraint_failures: 0,
    };
    let tol = |a: f64, b: f64| 1e-10 * (1.0 + a.abs() + b.abs());
    for _ in 0..pairs {
        let (xa, xb) = (draw(), draw());
        let xm = (&xa + &xb) * 0.5;
        let (fa, fb, fm) = (problem.objective(&xa)?, problem.objective(&xb)?, problem.objective(&xm)?);
        if fm > 0.5 * (fa + fb) + tol(fa, fb) {
            rep.objective_failures += 1;
        }
        for i in 0..problem.n() {
            let (ga, gb, gm) = (
                problem.evaluate_node(i, &xa)?.g,
                problem.evaluate_node(i, &xb)?.g,
                problem.evaluate_node(i, &xm)?.g,
            );
            if (0..ga.len()).any(|l| gm[l] > 0.5 * (ga[l] + gb[l]) + tol(ga[l], gb[l])) {
                rep.constraint_failures += 1;
            }
        }
    }
    Ok(rep)
}
