//! Independent oracles for the integration tests. Nothing here calls the
//! library's own operators (`apply_b`, `apply_w`, `compute_d_*`); quantities
//! are rebuilt densely from the raw problem data.
#![allow(dead_code)]

use dpd::algorithm::{AlgoParams, AlgoState, IterationRecord, Observer};
use dpd::problem::{CoupledProblem, LiftedProblem};
use dpd::weights::WeightPair;
use nalgebra::{DMatrix, DVector};

/// Dense `(B, c)` of the lifted consensus constraint, built from the node
/// data: block row `i` holds `S_i = Σ_{j : i ∈ scope(j)} A_j[:, cols of x_i]`
/// over the `x_i` columns and `I_p` over the `t_i` columns.
pub fn dense_b_c(lp: &LiftedProblem) -> (DMatrix<f64>, DVector<f64>) {
    let prob = lp.problem();
    let (n, m, p) = (prob.n(), prob.m(), prob.p());
    let ub = m + p;
    let mut b = DMatrix::zeros(n * ub, lp.dim());
    let mut c = DVector::zeros(n * ub);
    for j in 0..n {
        let node = prob.node(j);
        let mut col = 0;
        for &i in node.scope() {
            let di = prob.dim(i);
            let blk = node.a().columns(col, di);
            let mut target = b.view_mut((i * ub, lp.y_offset(i)), (m, di));
            target += blk;
            col += di;
        }
        c.rows_mut(j * ub, m).copy_from(node.b());
    }
    for i in 0..n {
        let di = prob.dim(i);
        for l in 0..p {
            b[(i * ub + m + l, lp.y_offset(i) + di + l)] = 1.0;
        }
    }
    (b, c)
}

pub fn kron_identity(mat: &DMatrix<f64>, block: usize) -> DMatrix<f64> {
    mat.kronecker(&DMatrix::identity(block, block))
}

/// Splits `y` into the global `x` and the per-node `t_i`.
pub fn split_y(lp: &LiftedProblem, y: &DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
    let prob = lp.problem();
    let mut x = DVector::zeros(prob.x_dim());
    let mut t = Vec::with_capacity(prob.n());
    for i in 0..prob.n() {
        let (off, di) = (lp.y_offset(i), prob.dim(i));
        x.rows_mut(prob.x_offset(i), di).copy_from(&y.rows(off, di));
        t.push(y.rows(off + di, prob.p()).into_owned());
    }
    (x, t)
}

fn scope_vector(prob: &CoupledProblem, i: usize, x: &DVector<f64>) -> DVector<f64> {
    let parts: Vec<f64> = prob
        .node(i)
        .scope()
        .iter()
        .flat_map(|&j| x.rows(prob.x_offset(j), prob.dim(j)).iter().copied().collect::<Vec<_>>())
        .collect();
    DVector::from_vec(parts)
}

/// `Σ_i f_i(x_{scope(i)})` straight from the callbacks.
pub fn lifted_f(lp: &LiftedProblem, y: &DVector<f64>) -> f64 {
    let prob = lp.problem();
    let (x, _) = split_y(lp, y);
    (0..prob.n())
        .map(|i| prob.node(i).functions().objective(&scope_vector(prob, i, &x)))
        .sum()
}

/// Stacked `G(y)` with `G_i = g_i(x_{scope(i)}) − t_i`.
pub fn lifted_g(lp: &LiftedProblem, y: &DVector<f64>) -> DVector<f64> {
    let prob = lp.problem();
    let p = prob.p();
    let (x, t) = split_y(lp, y);
    let mut out = DVector::zeros(prob.n() * p);
    for i in 0..prob.n() {
        let g = prob.node(i).functions().constraint(&scope_vector(prob, i, &x));
        out.rows_mut(i * p, p).copy_from(&(g - &t[i]));
    }
    out
}

/// Frozen data defining `R^k`.
pub struct RkOracle {
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub w: DMatrix<f64>,
    pub rho: f64,
}

impl RkOracle {
    pub fn new(lp: &LiftedProblem, wp: &WeightPair, rho: f64) -> Self {
        let (b, c) = dense_b_c(lp);
        let w = kron_identity(wp.pw(), lp.u_block());
        RkOracle { b, c, w, rho }
    }

    /// `R^k(y) = f(y) + ⟨q^k + G(y^k), G(y)⟩ + ⟨Wu^k − z^k/ρ, By − c⟩ + ‖By − c‖²/(2ρ)`.
    pub fn value(&self, lp: &LiftedProblem, state: &AlgoState, y: &DVector<f64>) -> f64 {
        let weight = &state.q + lifted_g(lp, &state.y);
        let dual = &self.w * &state.u - &state.z / self.rho;
        let r = &self.b * y - &self.c;
        lifted_f(lp, y) + weight.dot(&lifted_g(lp, y)) + dual.dot(&r) + r.norm_squared() / (2.0 * self.rho)
    }

    /// Central differences of `R^k` at `y^k`, `h = 1e−6 (1 + |y_j|)`.
    pub fn fd_gradient(&self, lp: &LiftedProblem, state: &AlgoState) -> DVector<f64> {
        let y = &state.y;
        DVector::from_fn(y.len(), |j, _| {
            let h = 1e-6 * (1.0 + y[j].abs());
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[j] += h;
            ym[j] -= h;
            (self.value(lp, state, &yp) - self.value(lp, state, &ym)) / (2.0 * h)
        })
    }
}

/// Sum of the `n` blocks of length `block`.
pub fn block_sum(v: &DVector<f64>, block: usize) -> DVector<f64> {
    let mut s = DVector::zeros(block);
    for chunk in v.as_slice().chunks(block) {
        s += DVector::from_column_slice(chunk);
    }
    s
}

/// KKT solution of `min Σ c_i x_i` over `[0, 1]^n` subject to
/// `Σ d_i log(1 + x_i) ≥ b`: `x_i(λ) = clamp(λ d_i / c_i − 1, 0, 1)` with `λ`
/// found by bisection on the active constraint.
pub fn linear_log_kkt(c: &[f64], d: &[f64], b: f64) -> (Vec<f64>, f64) {
    let x_of = |lam: f64| -> Vec<f64> {
        c.iter()
            .zip(d)
            .map(|(&ci, &di)| (lam * di / ci - 1.0).clamp(0.0, 1.0))
            .collect()
    };
    let reach = |x: &[f64]| x.iter().zip(d).map(|(&xi, &di)| di * xi.ln_1p()).sum::<f64>();
    if b <= 0.0 {
        return (vec![0.0; c.len()], 0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while reach(&x_of(hi)) < b {
        hi *= 2.0;
        assert!(hi < 1e12, "linear-log instance is infeasible");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if reach(&x_of(mid)) < b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (x_of(hi), hi)
}

/// Worst values of the per-iteration invariants seen along a run.
#[derive(Debug, Clone)]
pub struct InvariantAudit {
    b: DMatrix<f64>,
    c: DVector<f64>,
    rho: f64,
    pub iterations: usize,
    /// Most negative `q^k` entry.
    pub q_min: f64,
    /// Most negative `q^k + G(y^k)` entry.
    pub q_plus_g_min: f64,
    /// `‖q^0‖ − ‖G(y^0)‖`.
    pub q0_excess: f64,
    /// Worst `‖G(y^k)‖ − ‖q^k‖`.
    pub q_deficit: f64,
    /// Worst `‖Σ(Bȳ^k − c) − (ρ/k)Σ(u^k − u^0)‖ / (1 + ‖u^k‖)`.
    pub avg_identity: f64,
    /// Worst `G(ȳ^k) − q^k/k` entry.
    pub avg_ineq: f64,
    /// Worst `‖Σ_i z_i^k‖`.
    pub z_sum: f64,
    /// Worst box violation of `x^k`.
    pub box_violation: f64,
}

impl InvariantAudit {
    pub fn new(lp: &LiftedProblem, params: &AlgoParams) -> Self {
        Self::with_rho(lp, params.rho)
    }

    pub fn with_rho(lp: &LiftedProblem, rho: f64) -> Self {
        let (b, c) = dense_b_c(lp);
        InvariantAudit {
            b,
            c,
            rho,
            iterations: 0,
            q_min: f64::INFINITY,
            q_plus_g_min: f64::INFINITY,
            q0_excess: f64::NEG_INFINITY,
            q_deficit: f64::NEG_INFINITY,
            avg_identity: 0.0,
            avg_ineq: f64::NEG_INFINITY,
            z_sum: 0.0,
            box_violation: 0.0,
        }
    }

    fn track_queue(&mut self, lp: &LiftedProblem, state: &AlgoState) {
        let g = lifted_g(lp, &state.y);
        self.q_min = self.q_min.min(state.q.min());
        self.q_plus_g_min = self.q_plus_g_min.min((&state.q + &g).min());
        self.q_deficit = self.q_deficit.max(g.norm() - state.q.norm());
    }

    pub fn queue_bounds_hold(&self) -> bool {
        self.q_min >= -1e-12 && self.q_plus_g_min >= -1e-12 && self.q0_excess <= 1e-12 && self.q_deficit <= 1e-12
    }

    pub fn avg_bounds_hold(&self) -> bool {
        self.avg_identity <= 1e-8 && self.avg_ineq <= 1e-10
    }

    pub fn z_conserved(&self) -> bool {
        self.z_sum <= 1e-10
    }
}

impl Observer for InvariantAudit {
    fn on_init(&mut self, lp: &LiftedProblem, state: &AlgoState) -> dpd::Result<()> {
        let g0 = lifted_g(lp, &state.y);
        self.q0_excess = state.q.norm() - g0.norm();
        self.q_min = self.q_min.min(state.q.min());
        self.q_plus_g_min = self.q_plus_g_min.min((&state.q + &g0).min());
        Ok(())
    }

    fn on_iteration(&mut self, lp: &LiftedProblem, state: &AlgoState, _: &IterationRecord) -> dpd::Result<()> {
        self.iterations += 1;
        self.track_queue(lp, state);
        let k = state.k as f64;
        let ub = lp.u_block();
        let y_avg = &state.y_sum / k;
        let lhs = block_sum(&(&self.b * &y_avg - &self.c), ub);
        let rhs = block_sum(&(&state.u - &state.u0), ub) * (self.rho / k);
        let scale = 1.0 + state.u.norm();
        self.avg_identity = self.avg_identity.max((lhs - rhs).norm() / scale);
        let gap = lifted_g(lp, &y_avg) - &state.q / k;
        if !gap.is_empty() {
            self.avg_ineq = self.avg_ineq.max(gap.max());
        }
        self.z_sum = self.z_sum.max(block_sum(&state.z, ub).norm());
        let prob = lp.problem();
        let (x, _) = split_y(lp, &state.y);
        let (lo, hi) = (prob.lower(), prob.upper());
        for j in 0..x.len() {
            self.box_violation = self.box_violation.max(lo[j] - x[j]).max(x[j] - hi[j]);
        }
        Ok(())
    }
}
