//! The lifted problem over `y_i = (x_i, t_i)`.
//!
//! ```text
//! minimize f(y)  s.t.  G(y) ≤ 0,  (1 ⊗ I)ᵀ(B y − c) = 0,  y ∈ Y
//! G(y)_i = g_i(x_{N_i}) − t_i,   B_i = diag(S_i, I_p),   c_i = (b_i, 0_p)
//! ```
//!
//! `S_i = Σ_{j : i ∈ scope(j)} A_{ji}` collects every column block that
//! multiplies `x_i`. `B` and `c` are only ever held per node.

use nalgebra::{DMatrix, DVector, DVectorView};

use super::{CoupledProblem, NodeEval};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LiftedProblem {
    problem: CoupledProblem,
    y_offsets: Vec<usize>,
    s_blocks: Vec<DMatrix<f64>>,
    bt_b_norm: f64,
}

impl LiftedProblem {
    pub fn new(problem: CoupledProblem) -> Result<Self> {
        let (n, p, m) = (problem.n(), problem.p(), problem.m());
        let mut y_offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for i in 0..n {
            y_offsets.push(acc);
            acc += problem.dim(i) + p;
        }
        y_offsets.push(acc);
        let mut s_blocks: Vec<DMatrix<f64>> = (0..n).map(|i| DMatrix::zeros(m, problem.dim(i))).collect();
        for j in 0..n {
            let nd = problem.node(j);
            for (k, &i) in nd.scope().iter().enumerate() {
                s_blocks[i] += nd.a().columns(problem.scope_offset(j, k), problem.dim(i));
            }
        }
        for (i, s) in s_blocks.iter().enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { node: i, what: "equality block" });
            }
        }
        // ‖BᵀB‖ = max_i max(‖S_i‖², 1) for p ≥ 1 since B_iᵀB_i = diag(S_iᵀS_i, I_p).
        let mut bt_b_norm: f64 = if p > 0 { 1.0 } else { 0.0 };
        for s in &s_blocks {
            if s.nrows() > 0 && s.ncols() > 0 {
                let sv = s.singular_values();
                bt_b_norm = bt_b_norm.max(sv.max().powi(2));
            }
        }
        Ok(LiftedProblem {
            problem,
            y_offsets,
            s_blocks,
            bt_b_norm,
        })
    }

    pub fn problem(&self) -> &CoupledProblem {
        &self.problem
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn p(&self) -> usize {
        self.problem.p()
    }

    pub fn m(&self) -> usize {
        self.problem.m()
    }

    /// `N = n p + Σ d_i`.
    pub fn dim(&self) -> usize {
        self.y_offsets[self.n()]
    }

    /// Length of one consensus block, `m + p`.
    pub fn u_block(&self) -> usize {
        self.m() + self.p()
    }

    pub fn u_dim(&self) -> usize {
        self.n() * self.u_block()
    }

    pub fn y_offset(&self, i: usize) -> usize {
        self.y_offsets[i]
    }

    pub fn y_block_len(&self, i: usize) -> usize {
        self.problem.dim(i) + self.p()
    }

    /// `S_i`, the x-part of `B_i`.
    pub fn s_block(&self, i: usize) -> &DMatrix<f64> {
        &self.s_blocks[i]
    }

    pub fn bt_b_norm(&self) -> f64 {
        self.bt_b_norm
    }

    pub fn x_block<'a>(&self, y: &'a DVector<f64>, i: usize) -> DVectorView<'a, f64> {
        y.rows(self.y_offsets[i], self.problem.dim(i))
    }

    pub fn t_block<'a>(&self, y: &'a DVector<f64>, i: usize) -> DVectorView<'a, f64> {
        y.rows(self.y_offsets[i] + self.problem.dim(i), self.p())
    }

    fn check_dim(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// Global `x` extracted from `y`.
    pub fn x_of(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.problem.x_dim());
        for i in 0..self.n() {
            x.rows_mut(self.problem.x_offset(i), self.problem.dim(i))
                .copy_from(&self.x_block(y, i));
        }
        x
    }

    /// `y` with the given `x` blocks and slack blocks `t`.
    pub fn assemble(&self, x: &DVector<f64>, t: &[DVector<f64>]) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        for i in 0..self.n() {
            let d = self.problem.dim(i);
            y.rows_mut(self.y_offsets[i], d)
                .copy_from(&self.problem.x_block(x, i));
            y.rows_mut(self.y_offsets[i] + d, self.p()).copy_from(&t[i]);
        }
        y
    }

    /// Lifts `x` with `t_i = g_i(x_{N_i}) − (1/n) Σ_j g_j(x_{N_j})`, which
    /// makes `Σ t_i = 0` and `G(y) = (1/n) Σ_j g_j` in every block.
    pub fn lift_balanced(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let gs = (0..self.n())
            .map(|i| self.problem.evaluate_node(i, x).map(|e| e.g))
            .collect::<Result<Vec<_>>>()?;
        let mean = gs.iter().fold(DVector::zeros(self.p()), |a, g| a + g) / self.n() as f64;
        let t: Vec<_> = gs.iter().map(|g| g - &mean).collect();
        Ok(self.assemble(x, &t))
    }

    /// Concatenated scope variables of node `i` read from `y`.
    pub fn gather_scope(&self, i: usize, y: &DVector<f64>) -> DVector<f64> {
        let nd = self.problem.node(i);
        let len: usize = nd.scope().iter().map(|&j| self.problem.dim(j)).sum();
        let mut out = DVector::zeros(len);
        for (k, &j) in nd.scope().iter().enumerate() {
            out.rows_mut(self.problem.scope_offset(i, k), self.problem.dim(j))
                .copy_from(&self.x_block(y, j));
        }
        out
    }

    /// Evaluates every node's oracles at `y` (node evaluations are independent).
    pub fn evaluate(&self, y: &DVector<f64>) -> Result<LiftedEval> {
        self.check_dim(y)?;
        let nodes = (0..self.n())
            .map(|i| self.problem.node(i).evaluate(i, &self.gather_scope(i, y)))
            .collect::<Result<Vec<_>>>()?;
        let mut g_stack = DVector::zeros(self.n() * self.p());
        for (i, ev) in nodes.iter().enumerate() {
            let blk = &ev.g - self.t_block(y, i);
            g_stack.rows_mut(i * self.p(), self.p()).copy_from(&blk);
        }
        Ok(LiftedEval { nodes, g_stack })
    }

    pub fn eval_f(&self, y: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(y)?.f())
    }

    pub fn eval_grad_f(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(y)?.grad_f(self))
    }

    #[allow(non_snake_case)]
    pub fn eval_G(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(y)?.g_stack)
    }

    /// `(∂G/∂y)ᵀ w`.
    pub fn eval_jac_g_apply(&self, y: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.n() * self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.n() * self.p(),
                actual: w.len(),
            });
        }
        Ok(self.evaluate(y)?.jac_g_t_apply(self, w))
    }

    /// Clamps x-blocks into their boxes; t-blocks are free.
    pub fn project_y(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = y.clone();
        for i in 0..self.n() {
            let nd = self.problem.node(i);
            let off = self.y_offsets[i];
            for k in 0..nd.dim() {
                out[off + k] = out[off + k].clamp(nd.lower()[k], nd.upper()[k]);
            }
        }
        out
    }

    /// `B y`, one `(m + p)` block per node.
    pub fn apply_b(&self, y: &DVector<f64>) -> DVector<f64> {
        let (m, p, ub) = (self.m(), self.p(), self.u_block());
        let mut out = DVector::zeros(self.u_dim());
        for i in 0..self.n() {
            let sx = &self.s_blocks[i] * self.x_block(y, i);
            out.rows_mut(i * ub, m).copy_from(&sx);
            out.rows_mut(i * ub + m, p).copy_from(&self.t_block(y, i));
        }
        out
    }

    /// `Bᵀ v`.
    pub fn apply_bt(&self, v: &DVector<f64>) -> DVector<f64> {
        let (m, p, ub) = (self.m(), self.p(), self.u_block());
        let mut out = DVector::zeros(self.dim());
        for i in 0..self.n() {
            let d = self.problem.dim(i);
            let sx = self.s_blocks[i].transpose() * v.rows(i * ub, m);
            out.rows_mut(self.y_offsets[i], d).copy_from(&sx);
            out.rows_mut(self.y_offsets[i] + d, p)
                .copy_from(&v.rows(i * ub + m, p));
        }
        out
    }

    /// Stacked `c`.
    pub fn c(&self) -> DVector<f64> {
        let (m, ub) = (self.m(), self.u_block());
        let mut out = DVector::zeros(self.u_dim());
        for i in 0..self.n() {
            out.rows_mut(i * ub, m).copy_from(self.problem.node(i).b());
        }
        out
    }

    /// `(1 ⊗ I)ᵀ (B y − c)`: top `m` rows `Σ(A_i x_{N_i} − b_i)`, bottom `p` rows `Σ t_i`.
    pub fn consensus_residual(&self, y: &DVector<f64>) -> DVector<f64> {
        sum_blocks(&(self.apply_b(y) - self.c()), self.n(), self.u_block())
    }
}

/// `(1 ⊗ I)ᵀ v` for `n` blocks of length `block`.
pub fn sum_blocks(v: &DVector<f64>, n: usize, block: usize) -> DVector<f64> {
    let mut s = DVector::zeros(block);
    for i in 0..n {
        s += v.rows(i * block, block);
    }
    s
}

/// Node evaluations at one `y`, plus `G(y)`.
#[derive(Debug, Clone)]
pub struct LiftedEval {
    pub nodes: Vec<NodeEval>,
    pub g_stack: DVector<f64>,
}

impl LiftedEval {
    pub fn f(&self) -> f64 {
        self.nodes.iter().map(|e| e.f).sum()
    }

    /// x-blocks `Σ_{j : i ∈ scope(j)} ∂f_j/∂x_i`; t-blocks zero.
    pub fn grad_f(&self, lp: &LiftedProblem) -> DVector<f64> {
        let prob = lp.problem();
        let mut out = DVector::zeros(lp.dim());
        for (j, ev) in self.nodes.iter().enumerate() {
            for (k, &i) in prob.node(j).scope().iter().enumerate() {
                let d = prob.dim(i);
                let mut dst = out.rows_mut(lp.y_offset(i), d);
                dst += ev.grad_f.rows(prob.scope_offset(j, k), d);
            }
        }
        out
    }

    /// x-blocks `Σ_{j : i ∈ scope(j)} (∂g_j/∂x_i)ᵀ w_j`; t-blocks `−w_i`.
    pub fn jac_g_t_apply(&self, lp: &LiftedProblem, w: &DVector<f64>) -> DVector<f64> {
        let prob = lp.problem();
        let p = lp.p();
        let mut out = DVector::zeros(lp.dim());
        for (j, ev) in self.nodes.iter().enumerate() {
            let wj = w.rows(j * p, p);
            for (k, &i) in prob.node(j).scope().iter().enumerate() {
                let d = prob.dim(i);
                let blk = ev.jac_g.columns(prob.scope_offset(j, k), d).transpose() * wj;
                let mut dst = out.rows_mut(lp.y_offset(i), d);
                dst += blk;
            }
            out.rows_mut(lp.y_offset(j) + prob.dim(j), p).copy_from(&(-wj));
        }
        out
    }
}
