//! Mixing matrices `P^W`, `P^H` and their block actions `W = P^W ⊗ I`,
//! `H = P^H ⊗ I` on stacked per-node vectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Absolute tolerance for eigenvalue tests.
pub const EIG_TOL: f64 = 1e-10;

/// The pair `(P^W, P^H)` with cached sparse rows for neighbor sums.
#[derive(Debug, Clone)]
pub struct WeightPair {
    pw: DMatrix<f64>,
    ph: DMatrix<f64>,
    pw_rows: Vec<Vec<(usize, f64)>>,
    ph_rows: Vec<Vec<(usize, f64)>>,
}

fn sparse_rows(m: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .filter(|&j| m[(i, j)] != 0.0)
                .map(|j| (j, m[(i, j)]))
                .collect()
        })
        .collect()
}

impl WeightPair {
    pub fn from_matrices(pw: DMatrix<f64>, ph: DMatrix<f64>) -> Result<Self> {
        let n = pw.nrows();
        if pw.ncols() != n || ph.nrows() != n || ph.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "mixing matrices must both be square of equal size, got {}x{} and {}x{}",
                pw.nrows(),
                pw.ncols(),
                ph.nrows(),
                ph.ncols()
            )));
        }
        let pw_rows = sparse_rows(&pw);
        let ph_rows = sparse_rows(&ph);
        Ok(WeightPair {
            pw,
            ph,
            pw_rows,
            ph_rows,
        })
    }

    pub fn n(&self) -> usize {
        self.pw.nrows()
    }

    pub fn pw(&self) -> &DMatrix<f64> {
        &self.pw
    }

    pub fn ph(&self) -> &DMatrix<f64> {
        &self.ph
    }

    /// Nonzero entries `(j, [P^W]_ij)` of row `i`, ascending in `j`.
    pub fn pw_row(&self, i: usize) -> &[(usize, f64)] {
        &self.pw_rows[i]
    }

    pub fn ph_row(&self, i: usize) -> &[(usize, f64)] {
        &self.ph_rows[i]
    }

    /// `(P ⊗ I_b) v` for a vector made of `n` blocks of length `b`.
    fn apply_rows(rows: &[Vec<(usize, f64)>], v: &DVector<f64>, b: usize) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (i, row) in rows.iter().enumerate() {
            let mut acc = out.rows_mut(i * b, b);
            for &(j, w) in row {
                acc.axpy(w, &v.rows(j * b, b), 1.0);
            }
        }
        out
    }

    pub fn apply_w(&self, v: &DVector<f64>, block: usize) -> DVector<f64> {
        Self::apply_rows(&self.pw_rows, v, block)
    }

    pub fn apply_h(&self, v: &DVector<f64>, block: usize) -> DVector<f64> {
        Self::apply_rows(&self.ph_rows, v, block)
    }

    /// `‖v‖_W = sqrt(vᵀ W v)`; negative rounding is clamped to zero.
    pub fn w_norm(&self, v: &DVector<f64>, block: usize) -> f64 {
        v.dot(&self.apply_w(v, block)).max(0.0).sqrt()
    }

    /// Moore-Penrose pseudo-inverse of `P^H` via its eigendecomposition,
    /// zeroing eigenvalues below [`EIG_TOL`].
    pub fn ph_pseudo_inverse(&self) -> DMatrix<f64> {
        let sym = (&self.ph + self.ph.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() > EIG_TOL {
                let v = eig.eigenvectors.column(k);
                out += (v * v.transpose()) / lam;
            }
        }
        out
    }

    /// `‖v‖²_{H†}` with `H† = (P^H)† ⊗ I_b`.
    pub fn h_pinv_norm_sq(&self, v: &DVector<f64>, block: usize) -> f64 {
        let pinv = self.ph_pseudo_inverse();
        let n = self.n();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = pinv[(i, j)];
                if w != 0.0 {
                    total += w * v.rows(i * block, block).dot(&v.rows(j * block, block));
                }
            }
        }
        total
    }
}

/// Symmetric Metropolis-style weights: `1/(1+max(deg_i, deg_j))` on edges,
/// the diagonal takes the remainder so rows sum to one.
pub fn metropolis(graph: &Graph) -> DMatrix<f64> {
    let n = graph.n();
    let mut p = DMatrix::zeros(n, n);
    for &(i, j) in graph.edges() {
        let w = 1.0 / (1.0 + graph.degree(i).max(graph.degree(j)) as f64);
        p[(i, j)] = w;
        p[(j, i)] = w;
    }
    for i in 0..n {
        let off: f64 = graph.neighbors(i).iter().filter(|&&j| j != i).map(|&j| p[(i, j)]).sum();
        p[(i, i)] = 1.0 - off;
    }
    p
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `P^W = (I + P')/2`, `P^H = shrink·(I − P')/2` with Metropolis `P'`.
///
/// If either matrix fails the PSD test numerically, `P'` is replaced by its
/// lazy version `(I + P')/2` and the pair is rebuilt.
pub fn build_weight_matrices(graph: &Graph, shrink: f64) -> Result<WeightPair> {
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(Error::InvalidShrink(shrink));
    }
    let n = graph.n();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut p = metropolis(graph);
    for _ in 0..4 {
        if let Some(i) = (0..n).find(|&i| p[(i, i)] <= 0.0) {
            return Err(Error::NonPositiveDiagonal(i));
        }
        let pw = (&eye + &p) * 0.5;
        let ph = (&eye - &p) * (0.5 * shrink);
        if min_eigenvalue(&pw) >= -EIG_TOL && min_eigenvalue(&ph) >= -EIG_TOL {
            return WeightPair::from_matrices(pw, ph);
        }
        p = (&eye + &p) * 0.5;
    }
    Err(Error::NonPositiveDiagonal(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseResult {
    pub passed: bool,
    pub detail: String,
}

impl ClauseResult {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        ClauseResult {
            passed,
            detail: detail.into(),
        }
    }
}

/// Clause-by-clause check of the mixing-matrix conditions.
///
/// Clause (d) is checked in relaxed form: `λmax(P^W + P^H) ≤ 1` with the
/// eigenvalue 1 attained on `span(1)`. The strict form `P^W + P^H ≺ I` cannot
/// hold together with `P^W 1 = 1`, `P^H 1 = 0`, so it is only reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sparsity: ClauseResult,
    pub symmetric_psd: ClauseResult,
    pub kernel: ClauseResult,
    pub relaxed_upper_bound: ClauseResult,
    /// `λmax(P^W + P^H)` restricted to `1^⊥` is strictly below one.
    pub strict_on_complement: bool,
    /// Strict `P^W + P^H ≺ I`, impossible whenever clause (c) holds.
    pub strict_upper_bound: bool,
    pub pw_min_eigenvalue: f64,
    pub ph_min_eigenvalue: f64,
    pub ph_second_smallest_eigenvalue: f64,
    pub sum_max_eigenvalue: f64,
    pub sum_max_eigenvalue_on_complement: f64,
}

impl ValidationReport {
    /// Clauses (a)–(c) and relaxed (d).
    pub fn all_passed(&self) -> bool {
        self.sparsity.passed
            && self.symmetric_psd.passed
            && self.kernel.passed
            && self.relaxed_upper_bound.passed
    }
}

pub fn validate_assumption2(wp: &WeightPair, graph: &Graph) -> ValidationReport {
    let n = wp.n();
    let (pw, ph) = (wp.pw(), wp.ph());
    let ones = DVector::from_element(n, 1.0);

    let mut offending = Vec::new();
    if n == graph.n() {
        for i in 0..n {
            for j in 0..n {
                if !graph.are_neighbors(i, j) && (pw[(i, j)] != 0.0 || ph[(i, j)] != 0.0) {
                    offending.push((i, j));
                }
            }
        }
    }
    let sparsity = if n != graph.n() {
        ClauseResult::new(false, format!("matrix size {n} != node count {}", graph.n()))
    } else if offending.is_empty() {
        ClauseResult::new(true, "support within closed neighborhoods")
    } else {
        ClauseResult::new(false, format!("nonzero weights outside N_i at {offending:?}"))
    };

    let asym = (pw - pw.transpose()).amax().max((ph - ph.transpose()).amax());
    let pw_min = min_eigenvalue(pw);
    let mut ph_eigs: Vec<f64> = ((ph + ph.transpose()) * 0.5).symmetric_eigenvalues().iter().cloned().collect();
    ph_eigs.sort_by(f64::total_cmp);
    let ph_min = ph_eigs.first().copied().unwrap_or(0.0);
    let ph_second = ph_eigs.get(1).copied().unwrap_or(f64::INFINITY);
    let symmetric = asym <= 1e-12;
    let psd = pw_min >= -EIG_TOL && ph_min >= -EIG_TOL;
    let symmetric_psd = ClauseResult::new(
        symmetric && psd,
        format!("max asymmetry {asym:.3e}, min eig PW {pw_min:.3e}, min eig PH {ph_min:.3e}"),
    );

    let pw_row_err = (pw * &ones - &ones).amax();
    let ph_one = (ph * &ones).amax();
    let sv = ph.clone().svd(false, false).singular_values;
    let nullity = sv.iter().filter(|&&s| s < EIG_TOL).count();
    let kernel_ok = pw_row_err <= 1e-12 && ph_one <= 1e-12 && nullity == 1;
    let kernel = ClauseResult::new(
        kernel_ok,
        format!("|PW·1 − 1| = {pw_row_err:.3e}, |PH·1| = {ph_one:.3e}, dim Null(PH) = {nullity}"),
    );

    let sum = (pw + ph + (pw + ph).transpose()) * 0.5;
    let sum_max = sum.symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let fixes_one = (&sum * &ones - &ones).amax() <= 1e-12;
    let proj = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let restricted = &proj * &sum * &proj;
    let sum_max_complement = restricted
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let relaxed_upper_bound = ClauseResult::new(
        sum_max <= 1.0 + EIG_TOL && fixes_one,
        format!(
            "relaxed: λmax(PW+PH) = {sum_max:.12}, (PW+PH)·1 = 1: {fixes_one}; \
             λmax on 1^⊥ = {sum_max_complement:.12}"
        ),
    );
    let strict_on_complement = n == 1 || sum_max_complement < 1.0 - EIG_TOL;
    let strict_upper_bound = sum_max < 1.0 - EIG_TOL;

    ValidationReport {
        sparsity,
        symmetric_psd,
        kernel,
        relaxed_upper_bound,
        strict_on_complement,
        strict_upper_bound,
        pw_min_eigenvalue: pw_min,
        ph_min_eigenvalue: ph_min,
        ph_second_smallest_eigenvalue: ph_second,
        sum_max_eigenvalue: sum_max,
        sum_max_eigenvalue_on_complement: sum_max_complement,
    }
}
