//! Sampled Lipschitz constants.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CoupledProblem;
use crate::error::{Error, Result};

const CONSTANT_TOL: f64 = 1e-12;
/// Relative offset of the near-corner partner points.
const NEAR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    /// Gradient Lipschitz constant of each `f_i` on `X_{N_i}`.
    pub l_f: f64,
    /// Jacobian Lipschitz constant of each `g_i`.
    pub l_g: f64,
    /// Value Lipschitz constant of each `g_i`.
    pub beta: f64,
    /// `L_f · max_i |N_i|`.
    pub l_f_lifted: f64,
    /// `sqrt((1 + β²) · max_i |N_i|)`.
    pub beta_tilde: f64,
}

impl LipschitzEstimates {
    pub fn from_local(l_f: f64, l_g: f64, beta: f64, max_neighborhood: usize) -> Self {
        let nmax = max_neighborhood as f64;
        LipschitzEstimates {
            l_f,
            l_g,
            beta,
            l_f_lifted: l_f * nmax,
            beta_tilde: ((1.0 + beta * beta) * nmax).sqrt(),
        }
    }
}

/// Maximal difference ratios over sampled pairs in each `X_{N_i}`.
///
/// Samples are the two extreme corners, the center, `samples` uniform points
/// and a close partner for each corner. A node whose Jacobian (gradient) is
/// constant within `1e-12` across all samples contributes exactly zero to
/// `l_g` (`l_f`).
pub fn estimate_lipschitz(problem: &CoupledProblem, samples: usize, seed: u64) -> Result<LipschitzEstimates> {
    if samples < 2 {
        return Err(Error::InvalidParameter("estimate_lipschitz needs at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut l_f, mut l_g, mut beta) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..problem.n() {
        let nd = problem.node(i);
        let (lo, hi) = scope_box(problem, i);
        let dim = lo.len();
        let mut pts = vec![lo.clone(), hi.clone(), (&lo + &hi) * 0.5];
        let span = &hi - &lo;
        pts.push(&lo + &span * NEAR);
        pts.push(&hi - &span * NEAR);
        for _ in 0..samples {
            pts.push(DVector::from_fn(dim, |k, _| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>()));
        }
        let evals = pts
            .iter()
            .map(|x| nd.evaluate(i, x))
            .collect::<Result<Vec<_>>>()?;
        for ev in &evals {
            if ev.jac_g.nrows() > 0 && ev.jac_g.ncols() > 0 {
                beta = beta.max(ev.jac_g.singular_values().max());
            }
        }
        let jac_const = evals.iter().all(|e| (&e.jac_g - &evals[0].jac_g).amax() <= CONSTANT_TOL);
        let grad_const = evals.iter().all(|e| (&e.grad_f - &evals[0].grad_f).amax() <= CONSTANT_TOL);
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                let dist = (&pts[a] - &pts[b]).norm();
                if dist <= 1e-14 {
                    continue;
                }
                let (ea, eb) = (&evals[a], &evals[b]);
                beta = beta.max((&ea.g - &eb.g).norm() / dist);
                if !grad_const {
                    l_f = l_f.max((&ea.grad_f - &eb.grad_f).norm() / dist);
                }
                if !jac_const {
                    l_g = l_g.max(max_row_ratio(&ea.jac_g, &eb.jac_g) / dist);
                }
            }
        }
    }
    Ok(LipschitzEstimates::from_local(
        l_f,
        l_g,
        beta,
        problem.graph().max_neighborhood_size(),
    ))
}

/// `max_l ‖∇g_l(x) − ∇g_l(x')‖`.
fn max_row_ratio(ja: &DMatrix<f64>, jb: &DMatrix<f64>) -> f64 {
    (ja - jb).row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

fn scope_box(problem: &CoupledProblem, i: usize) -> (DVector<f64>, DVector<f64>) {
    let nd = problem.node(i);
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for &j in nd.scope() {
        lo.extend(problem.node(j).lower().iter());
        hi.extend(problem.node(j).upper().iter());
    }
    (DVector::from_vec(lo), DVector::from_vec(hi))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::super::{LinearLogNode, NodeProblem, QuadraticForm, QuadraticNode};
    use super::*;
    use crate::graph::Graph;

    fn linear_log(ds: &[f64]) -> CoupledProblem {
        let n = ds.len();
        let graph = Graph::path(n).unwrap();
        let nodes = ds
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                NodeProblem::new(
                    vec![i],
                    DVector::from_element(1, 0.0),
                    DVector::from_element(1, 1.0),
                    Arc::new(LinearLogNode::new(0.5, d, 0.0)),
                    DMatrix::zeros(1, 1),
                    DVector::zeros(1),
                )
            })
            .collect();
        CoupledProblem::new(graph, 1, 1, nodes).unwrap()
    }

    #[test]
    fn linear_objective_has_zero_gradient_constant() {
        let est = estimate_lipschitz(&linear_log(&[0.3, 0.9, 0.5]), 20, 1).unwrap();
        assert_eq!(est.l_f, 0.0);
        assert_eq!(est.l_f_lifted, 0.0);
        assert!(est.l_g > 0.0);
    }

    #[test]
    fn log_constraint_beta_matches_max_slope() {
        let ds = [0.3, 0.9, 0.5, 0.7];
        let est = estimate_lipschitz(&linear_log(&ds), 30, 2).unwrap();
        assert!((est.beta - 0.9).abs() <= 0.05 * 0.9, "beta {}", est.beta);
        // path graph: max |N_i| = 3
        assert!((est.beta_tilde - ((1.0 + est.beta.powi(2)) * 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn affine_constraint_has_zero_curvature_constant() {
        let graph = Graph::path(2).unwrap();
        let nodes = (0..2)
            .map(|_| {
                let obj = QuadraticForm::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.0);
                let con = QuadraticForm::linear(DVector::from_vec(vec![1.0, -2.0]), 0.1);
                NodeProblem::new(
                    vec![0, 1],
                    DVector::from_element(1, -1.0),
                    DVector::from_element(1, 1.0),
                    Arc::new(QuadraticNode::new(obj, vec![con])),
                    DMatrix::zeros(1, 2),
                    DVector::zeros(1),
                )
            })
            .collect();
        let prob = CoupledProblem::new(graph, 1, 1, nodes).unwrap();
        let est = estimate_lipschitz(&prob, 10, 3).unwrap();
        assert_eq!(est.l_g, 0.0);
        assert!((est.l_f - 2.0).abs() < 1e-9);
        assert!((est.beta - 5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rejects_single_sample() {
        assert!(estimate_lipschitz(&linear_log(&[1.0]), 1, 0).is_err());
    }
}
