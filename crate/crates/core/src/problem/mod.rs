//! The coupled problem
//!
//! ```text
//! minimize   Σ_i f_i(x_{N_i})
//! subject to Σ_i g_i(x_{N_i}) ≤ 0_p,   Σ_i A_i x_{N_i} = Σ_i b_i,   x_i ∈ X_i
//! ```
//!
//! Each node declares a *scope*: the ascending list of node ids whose
//! variables its local functions read. The scope always contains the node
//! itself and is a subset of its closed neighborhood. Callbacks receive the
//! scope variables concatenated in scope order.

mod derivatives;
mod families;
mod io;
mod lifted;
mod lipschitz;

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub use derivatives::{check_derivatives, spot_check_convexity, ConvexityReport, DerivativeReport};
pub use families::{FunctionSpec, LinearLogNode, QuadraticForm, QuadraticNode};
pub use io::{NodeFile, ProblemFile};
pub use lifted::{sum_blocks, LiftedEval, LiftedProblem};
pub use lipschitz::{estimate_lipschitz, LipschitzEstimates};

/// Local objective and constraint oracles of one node.
///
/// Implementations must be pure: the engines may call them from several
/// threads and in any order.
pub trait NodeFunctions: Send + Sync + Debug {
    fn objective(&self, x: &DVector<f64>) -> f64;
    /// Gradient of `f_i` with respect to the concatenated scope variables.
    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `g_i(x) ∈ R^p`.
    fn constraint(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `∂g_i/∂x`, a `p × dim(x)` matrix.
    fn constraint_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Serializable description, for the built-in families.
    fn spec(&self) -> Option<FunctionSpec> {
        None
    }
}

/// Values and derivatives of one node's functions at one point.
#[derive(Debug, Clone)]
pub struct NodeEval {
    pub f: f64,
    pub grad_f: DVector<f64>,
    pub g: DVector<f64>,
    pub jac_g: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct NodeProblem {
    scope: Vec<usize>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    functions: Arc<dyn NodeFunctions>,
    /// `A_i`: `m × Σ_{j ∈ scope} d_j`, columns in scope order.
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl NodeProblem {
    pub fn new(
        scope: Vec<usize>,
        lower: DVector<f64>,
        upper: DVector<f64>,
        functions: Arc<dyn NodeFunctions>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Self {
        NodeProblem {
            scope,
            lower,
            upper,
            functions,
            a,
            b,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn functions(&self) -> &Arc<dyn NodeFunctions> {
        &self.functions
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Evaluates all oracles at `x_scope`, naming `node` on non-finite output.
    pub fn evaluate(&self, node: usize, x_scope: &DVector<f64>) -> Result<NodeEval> {
        let f = self.functions.objective(x_scope);
        let grad_f = self.functions.objective_gradient(x_scope);
        let g = self.functions.constraint(x_scope);
        let jac_g = self.functions.constraint_jacobian(x_scope);
        if !f.is_finite() {
            return Err(Error::NonFiniteValue { node, what: "objective" });
        }
        if grad_f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { node, what: "objective gradient" });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { node, what: "constraint" });
        }
        if jac_g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { node, what: "constraint jacobian" });
        }
        Ok(NodeEval { f, grad_f, g, jac_g })
    }
}

/// The user-facing coupled problem over a graph.
#[derive(Debug, Clone)]
pub struct CoupledProblem {
    graph: Graph,
    nodes: Vec<NodeProblem>,
    p: usize,
    m: usize,
    x_offsets: Vec<usize>,
    /// For node i, the offset of each scope member inside `x_scope`.
    scope_offsets: Vec<Vec<usize>>,
    a_global: DMatrix<f64>,
    b_sum: DVector<f64>,
}

impl CoupledProblem {
    pub fn new(graph: Graph, p: usize, m: usize, nodes: Vec<NodeProblem>) -> Result<Self> {
        let n = graph.n();
        if nodes.len() != n {
            return Err(Error::ShapeMismatch(format!("{} node problems for {n} nodes", nodes.len())));
        }
        let dims: Vec<usize> = nodes.iter().map(NodeProblem::dim).collect();
        for (i, node) in nodes.iter().enumerate() {
            let sc = &node.scope;
            if !sc.windows(2).all(|w| w[0] < w[1]) || sc.binary_search(&i).is_err() {
                return Err(Error::ShapeMismatch(format!(
                    "node {i}: scope {sc:?} must be strictly ascending and contain the node"
                )));
            }
            if let Some(&j) = sc.iter().find(|&&j| j >= n || !graph.are_neighbors(i, j)) {
                return Err(Error::ShapeMismatch(format!("node {i}: scope member {j} is not a neighbor")));
            }
            if node.upper.len() != node.dim() {
                return Err(Error::ShapeMismatch(format!("node {i}: bound lengths differ")));
            }
            for k in 0..node.dim() {
                let (l, u) = (node.lower[k], node.upper[k]);
                if !(l.is_finite() && u.is_finite() && l <= u) {
                    return Err(Error::ShapeMismatch(format!(
                        "node {i}: box [{l}, {u}] in coordinate {k} must be finite with lower <= upper"
                    )));
                }
            }
            let scope_dim: usize = sc.iter().map(|&j| dims[j]).sum();
            if node.a.nrows() != m || node.a.ncols() != scope_dim || node.b.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "node {i}: A is {}x{}, b has {} rows; expected {m}x{scope_dim} and {m}",
                    node.a.nrows(),
                    node.a.ncols(),
                    node.b.len()
                )));
            }
        }
        let mut x_offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for &d in &dims {
            x_offsets.push(acc);
            acc += d;
        }
        x_offsets.push(acc);
        let scope_offsets: Vec<Vec<usize>> = nodes
            .iter()
            .map(|node| {
                let mut off = 0;
                node.scope
                    .iter()
                    .map(|&j| {
                        let o = off;
                        off += dims[j];
                        o
                    })
                    .collect()
            })
            .collect();
        let mut a_global = DMatrix::zeros(m, acc);
        let mut b_sum = DVector::zeros(m);
        for (i, node) in nodes.iter().enumerate() {
            for (k, &j) in node.scope.iter().enumerate() {
                let mut dst = a_global.columns_mut(x_offsets[j], dims[j]);
                dst += node.a.columns(scope_offsets[i][k], dims[j]);
            }
            b_sum += &node.b;
        }
        Ok(CoupledProblem {
            graph,
            nodes,
            p,
            m,
            x_offsets,
            scope_offsets,
            a_global,
            b_sum,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn node(&self, i: usize) -> &NodeProblem {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[NodeProblem] {
        &self.nodes
    }

    pub fn dim(&self, i: usize) -> usize {
        self.nodes[i].dim()
    }

    /// Total primal dimension `Σ d_i`.
    pub fn x_dim(&self) -> usize {
        self.x_offsets[self.n()]
    }

    pub fn x_offset(&self, i: usize) -> usize {
        self.x_offsets[i]
    }

    /// Offset of scope member number `k` of node `i` within its `x_scope`.
    pub fn scope_offset(&self, i: usize, k: usize) -> usize {
        self.scope_offsets[i][k]
    }

    /// True when every node's functions read only its own variable.
    pub fn is_decoupled(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, nd)| nd.scope == [i])
    }

    /// False when all `A_i` and `b_i` are zero (the equality rows are inert).
    pub fn has_active_equality(&self) -> bool {
        self.m > 0 && (self.a_global.amax() > 0.0 || self.b_sum.amax() > 0.0)
    }

    /// `Σ_i A_i` scattered to global columns.
    pub fn equality_matrix(&self) -> &DMatrix<f64> {
        &self.a_global
    }

    pub fn equality_rhs(&self) -> &DVector<f64> {
        &self.b_sum
    }

    pub fn lower(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.x_dim());
        for (i, nd) in self.nodes.iter().enumerate() {
            v.rows_mut(self.x_offsets[i], nd.dim()).copy_from(&nd.lower);
        }
        v
    }

    pub fn upper(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.x_dim());
        for (i, nd) in self.nodes.iter().enumerate() {
            v.rows_mut(self.x_offsets[i], nd.dim()).copy_from(&nd.upper);
        }
        v
    }

    /// Clamps a global `x` into `X_1 × … × X_n`.
    pub fn project_x(&self, x: &DVector<f64>) -> DVector<f64> {
        let (lo, hi) = (self.lower(), self.upper());
        DVector::from_iterator(x.len(), (0..x.len()).map(|k| x[k].clamp(lo[k], hi[k])))
    }

    pub fn x_block<'a>(&self, x: &'a DVector<f64>, i: usize) -> nalgebra::DVectorView<'a, f64> {
        x.rows(self.x_offsets[i], self.dim(i))
    }

    /// Concatenates `x_j` for `j` in node `i`'s scope from a global `x`.
    pub fn gather_scope(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let sc = &self.nodes[i].scope;
        let len: usize = sc.iter().map(|&j| self.dim(j)).sum();
        let mut out = DVector::zeros(len);
        for (k, &j) in sc.iter().enumerate() {
            out.rows_mut(self.scope_offsets[i][k], self.dim(j))
                .copy_from(&self.x_block(x, j));
        }
        out
    }

    pub fn evaluate_node(&self, i: usize, x: &DVector<f64>) -> Result<NodeEval> {
        self.nodes[i].evaluate(i, &self.gather_scope(i, x))
    }

    /// Evaluates every node and assembles the global quantities.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<GlobalEval> {
        if x.len() != self.x_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.x_dim(),
                actual: x.len(),
            });
        }
        let mut f = 0.0;
        let mut grad_f = DVector::zeros(self.x_dim());
        let mut g_sum = DVector::zeros(self.p);
        let mut jac_sum = DMatrix::zeros(self.p, self.x_dim());
        for i in 0..self.n() {
            let ev = self.evaluate_node(i, x)?;
            f += ev.f;
            g_sum += &ev.g;
            for (k, &j) in self.nodes[i].scope.iter().enumerate() {
                let (so, d, xo) = (self.scope_offsets[i][k], self.dim(j), self.x_offsets[j]);
                let mut dst = grad_f.rows_mut(xo, d);
                dst += ev.grad_f.rows(so, d);
                let mut jdst = jac_sum.columns_mut(xo, d);
                jdst += ev.jac_g.columns(so, d);
            }
        }
        let eq_residual = &self.a_global * x - &self.b_sum;
        Ok(GlobalEval {
            f,
            grad_f,
            g_sum,
            jac_sum,
            eq_residual,
        })
    }

    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        let mut f = 0.0;
        for i in 0..self.n() {
            let xs = self.gather_scope(i, x);
            let v = self.nodes[i].functions.objective(&xs);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { node: i, what: "objective" });
            }
            f += v;
        }
        Ok(f)
    }

    /// `Σ_i g_i(x_{N_i})`.
    pub fn constraint_sum(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut s = DVector::zeros(self.p);
        for i in 0..self.n() {
            let xs = self.gather_scope(i, x);
            let g = self.nodes[i].functions.constraint(&xs);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { node: i, what: "constraint" });
            }
            s += g;
        }
        Ok(s)
    }

    /// `Σ_i (A_i x_{N_i} − b_i)`.
    pub fn equality_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_global * x - &self.b_sum
    }

    /// Largest violation of the original constraints:
    /// `max(max_l (Σ g)_l, ‖Σ(A x − b)‖_∞, 0)`.
    pub fn feasibility_residual(&self, x: &DVector<f64>) -> Result<f64> {
        let g = self.constraint_sum(x)?;
        let gmax = g.iter().cloned().fold(0.0, f64::max);
        Ok(gmax.max(self.equality_residual(x).amax()))
    }

    /// Serializable description; fails for callback-only problems.
    pub fn to_file(&self, family: &str) -> Result<ProblemFile> {
        ProblemFile::from_problem(self, family)
    }
}

/// Network-wide values at a global `x`.
#[derive(Debug, Clone)]
pub struct GlobalEval {
    pub f: f64,
    pub grad_f: DVector<f64>,
    pub g_sum: DVector<f64>,
    /// `∂(Σ_i g_i)/∂x`, `p × Σ d_i`.
    pub jac_sum: DMatrix<f64>,
    pub eq_residual: DVector<f64>,
}
