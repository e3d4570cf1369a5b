//! Reference solutions, dual estimates and the constants of the O(1/k)
//! guarantees.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithm::{AlgoParams, AlgoState, IterationRecord};
use crate::error::{Error, Result};
use crate::problem::{CoupledProblem, LiftedProblem, LipschitzEstimates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Grid,
    PenaltyPg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Iteration budget ran out; the best point so far is returned.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x: DVector<f64>,
    pub f: f64,
    pub method: Method,
    pub status: SolveStatus,
    /// `max(0, max_l Σg_l, ‖Σ(Ax − b)‖_∞)`.
    pub feasibility_residual: f64,
    /// Multipliers of the penalty method, when it ran.
    pub lambda: Option<DVector<f64>>,
    pub nu: Option<DVector<f64>>,
}

/// Grid search for tiny problems, the penalty method otherwise.
pub fn solve_reference(problem: &CoupledProblem, tol: f64, budget: usize) -> Result<ReferenceSolution> {
    if problem.x_dim() <= 4 && problem.p() == 1 && !problem.has_active_equality() {
        solve_grid(problem, 1e-4)
    } else {
        solve_penalty(problem, tol, budget)
    }
}

const GRID_MAX_DIM: usize = 6;
const GRID_POINTS_PER_LEVEL: f64 = 2e5;

/// Zooming grid search: evaluate a uniform grid over the current box, keep
/// the best point satisfying `Σg ≤ 0`, shrink the box to two cells around it,
/// and repeat until the spacing is at most `spacing`.
pub fn solve_grid(problem: &CoupledProblem, spacing: f64) -> Result<ReferenceSolution> {
    let dim = problem.x_dim();
    if dim > GRID_MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "grid search supports at most {GRID_MAX_DIM} variables, got {dim}"
        )));
    }
    if problem.has_active_equality() {
        return Err(Error::InvalidParameter("grid search does not handle equality constraints".into()));
    }
    let per_dim = (GRID_POINTS_PER_LEVEL.powf(1.0 / dim.max(1) as f64).floor() as usize).clamp(5, 401);
    let (mut lo, mut hi) = (problem.lower(), problem.upper());
    let (box_lo, box_hi) = (lo.clone(), hi.clone());
    let mut best: Option<(f64, DVector<f64>)> = None;
    loop {
        let h = DVector::from_fn(dim, |k, _| (hi[k] - lo[k]) / (per_dim - 1) as f64);
        let mut idx = vec![0usize; dim];
        let mut level_best: Option<(f64, DVector<f64>)> = None;
        loop {
            let x = DVector::from_fn(dim, |k, _| lo[k] + h[k] * idx[k] as f64);
            let g = problem.constraint_sum(&x)?;
            if g.iter().all(|&v| v <= 0.0) {
                let f = problem.objective(&x)?;
                if level_best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    level_best = Some((f, x));
                }
            }
            // odometer increment
            let mut k = 0;
            while k < dim {
                idx[k] += 1;
                if idx[k] < per_dim {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == dim {
                break;
            }
        }
        if let Some((f, x)) = level_best {
            if best.as_ref().is_none_or(|(bf, _)| f <= *bf) {
                best = Some((f, x));
            }
        }
        let Some((_, center)) = best.as_ref() else {
            let g = problem.constraint_sum(&((&lo + &hi) * 0.5))?;
            return Err(Error::Infeasible {
                residual: g.max().max(0.0),
            });
        };
        if h.max() <= spacing {
            break;
        }
        for k in 0..dim {
            lo[k] = (center[k] - 2.0 * h[k]).max(box_lo[k]);
            hi[k] = (center[k] + 2.0 * h[k]).min(box_hi[k]);
        }
    }
    let (f, x) = best.expect("checked above");
    let feas = problem.feasibility_residual(&x)?;
    Ok(ReferenceSolution {
        x,
        f,
        method: Method::Grid,
        status: SolveStatus::Converged,
        feasibility_residual: feas,
        lambda: None,
        nu: None,
    })
}

/// Augmented-Lagrangian value and gradient at `x`.
struct AugLag<'a> {
    problem: &'a CoupledProblem,
    lambda: DVector<f64>,
    nu: DVector<f64>,
    mu: f64,
}

impl AugLag<'_> {
    fn eval(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let ev = self.problem.evaluate(x)?;
        let shifted = (&ev.g_sum * self.mu + &self.lambda).map(|v| v.max(0.0));
        let h = &ev.eq_residual;
        let val = ev.f + shifted.norm_squared() / (2.0 * self.mu) + self.nu.dot(h) + 0.5 * self.mu * h.norm_squared();
        let grad = ev.grad_f
            + ev.jac_sum.transpose() * shifted
            + self.problem.equality_matrix().transpose() * (&self.nu + h * self.mu);
        Ok((val, grad))
    }
}

fn project_box(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |k, _| x[k].clamp(lo[k], hi[k]))
}

/// `‖P(x − ∇φ) − x‖_∞`.
fn projected_gradient_norm(x: &DVector<f64>, grad: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    (project_box(&(x - grad), lo, hi) - x).amax()
}

/// Spectral projected gradient with a non-monotone Armijo rule and step
/// halving. Returns the final point and the number of iterations used.
fn spg(
    phi: &AugLag<'_>,
    x0: DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    eps: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    const MEMORY: usize = 10;
    let mut x = project_box(&x0, lo, hi);
    let (mut fx, mut g) = phi.eval(&x)?;
    let mut history = vec![fx];
    let mut alpha = 1.0 / g.amax().max(1.0);
    for it in 0..max_iter {
        if projected_gradient_norm(&x, &g, lo, hi) <= eps {
            return Ok((x, it));
        }
        let d = project_box(&(&x - &g * alpha), lo, hi) - &x;
        let slope = g.dot(&d);
        let f_ref = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let (x_new, f_new, g_new) = loop {
            let cand = &x + &d * t;
            let (fc, gc) = phi.eval(&cand)?;
            if fc <= f_ref + 1e-4 * t * slope || t < 1e-20 {
                break (cand, fc, gc);
            }
            t *= 0.5;
        };
        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sty = s.dot(&yv);
        alpha = if sty > 0.0 { (s.norm_squared() / sty).clamp(1e-12, 1e12) } else { 1e3 };
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        if history.len() > MEMORY {
            history.remove(0);
        }
    }
    Ok((x, max_iter))
}

/// Augmented-Lagrangian outer loop around the projected-gradient inner
/// solver. The penalty doubles whenever the constraint residual fails to
/// drop below a quarter of its previous value.
pub fn solve_penalty(problem: &CoupledProblem, tol: f64, budget: usize) -> Result<ReferenceSolution> {
    let (lo, hi) = (problem.lower(), problem.upper());
    let (p, m) = (problem.p(), problem.m());
    let active_eq = problem.has_active_equality();
    let mut phi = AugLag {
        problem,
        lambda: DVector::zeros(p),
        nu: DVector::zeros(m),
        mu: 10.0,
    };
    let mut x = (&lo + &hi) * 0.5;
    let mut used = 0;
    let mut prev_resid = f64::INFINITY;
    let mut outer = 0;
    let status = loop {
        let eps = (0.1f64.powi(outer + 1)).max(0.01 * tol);
        let (x_new, its) = spg(&phi, x, &lo, &hi, eps, budget.saturating_sub(used).max(1))?;
        used += its;
        x = x_new;
        let ev = problem.evaluate(&x)?;
        let h = if active_eq { ev.eq_residual.clone() } else { DVector::zeros(m) };
        // violation and complementarity of the inequality rows
        let ineq = DVector::from_fn(p, |l, _| ev.g_sum[l].max(-phi.lambda[l] / phi.mu));
        let resid = ineq.amax().max(h.amax());
        phi.lambda = (&ev.g_sum * phi.mu + &phi.lambda).map(|v| v.max(0.0));
        if active_eq {
            phi.nu += &h * phi.mu;
        }
        let lag_grad = &ev.grad_f + ev.jac_sum.transpose() * &phi.lambda + problem.equality_matrix().transpose() * &phi.nu;
        let stationarity = projected_gradient_norm(&x, &lag_grad, &lo, &hi);
        if resid <= tol && stationarity <= tol && eps <= tol.max(0.01 * tol) {
            break SolveStatus::Converged;
        }
        if used >= budget {
            break SolveStatus::BudgetExhausted;
        }
        if resid > 0.25 * prev_resid {
            phi.mu *= 2.0;
            if phi.mu > 1e10 {
                return Err(Error::Infeasible { residual: resid });
            }
        }
        prev_resid = resid;
        outer += 1;
    };
    let f = problem.objective(&x)?;
    let feas = problem.feasibility_residual(&x)?;
    Ok(ReferenceSolution {
        x,
        f,
        method: Method::PenaltyPg,
        status,
        feasibility_residual: feas,
        lambda: Some(phi.lambda),
        nu: Some(phi.nu),
    })
}

/// Multipliers of the original problem at a reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEstimate {
    /// `λ̂ ∈ R^p`, one multiplier per inequality row.
    pub lambda_hat: DVector<f64>,
    /// `ν ∈ R^m`; zero when the equality rows are inert.
    pub nu: DVector<f64>,
    /// `‖∇f + Jᵀλ̂ + Aᵀν‖` over coordinates strictly inside their box.
    pub stationarity_residual: f64,
    pub rank_deficient: bool,
    /// Upper bound on `‖λ̂‖₁` from a Slater point; absent when equality rows
    /// are active.
    pub slater_bound: Option<f64>,
}

const ACTIVE_TOL: f64 = 1e-6;
const SLATER_SAMPLES: usize = 2000;

/// Least-squares solve of the stationarity system on the free coordinates,
/// with inactive inequality rows fixed at zero.
pub fn estimate_dual(problem: &CoupledProblem, reference: &ReferenceSolution, seed: u64) -> Result<DualEstimate> {
    let x = &reference.x;
    let (lo, hi) = (problem.lower(), problem.upper());
    let ev = problem.evaluate(x)?;
    let (p, m) = (problem.p(), problem.m());
    let active_eq = problem.has_active_equality();
    let free: Vec<usize> = (0..x.len())
        .filter(|&k| {
            let w = (hi[k] - lo[k]).max(1.0);
            x[k] > lo[k] + 1e-7 * w && x[k] < hi[k] - 1e-7 * w
        })
        .collect();
    let active: Vec<usize> = (0..p).filter(|&l| ev.g_sum[l] >= -ACTIVE_TOL).collect();
    let n_eq = if active_eq { m } else { 0 };
    let cols = active.len() + n_eq;
    let mut mat = DMatrix::zeros(free.len(), cols);
    let mut rhs = DVector::zeros(free.len());
    for (r, &k) in free.iter().enumerate() {
        rhs[r] = -ev.grad_f[k];
        for (c, &l) in active.iter().enumerate() {
            mat[(r, c)] = ev.jac_sum[(l, k)];
        }
        for e in 0..n_eq {
            mat[(r, active.len() + e)] = problem.equality_matrix()[(e, k)];
        }
    }
    let (sol, rank_deficient) = if cols == 0 || free.is_empty() {
        (DVector::zeros(cols), cols > 0)
    } else {
        let svd = mat.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let cut = smax * 1e-10 * free.len().max(cols) as f64;
        let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
        let sol = svd.solve(&rhs, cut).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        (sol, rank < cols)
    };
    let mut lambda_hat = DVector::zeros(p);
    for (c, &l) in active.iter().enumerate() {
        lambda_hat[l] = sol[c].max(0.0);
    }
    let mut nu = DVector::zeros(m);
    for e in 0..n_eq {
        nu[e] = sol[active.len() + e];
    }
    let full = &ev.grad_f + ev.jac_sum.transpose() * &lambda_hat + problem.equality_matrix().transpose() * &nu;
    let stationarity_residual = free.iter().map(|&k| full[k].powi(2)).sum::<f64>().sqrt();
    let slater_bound = if active_eq {
        None
    } else {
        Some(slater_bound(problem, reference.f, seed)?)
    };
    Ok(DualEstimate {
        lambda_hat,
        nu,
        stationarity_residual,
        rank_deficient,
        slater_bound,
    })
}

/// `(f(x̃) − f*) / min_l(−Σg_l(x̃))` at the sampled point with the largest
/// minimum slack.
pub fn slater_bound(problem: &CoupledProblem, f_star: f64, seed: u64) -> Result<f64> {
    let (lo, hi) = (problem.lower(), problem.upper());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = vec![lo.clone(), hi.clone(), (&lo + &hi) * 0.5];
    for _ in 0..SLATER_SAMPLES {
        candidates.push(DVector::from_fn(lo.len(), |k, _| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>()));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for x in candidates {
        let g = problem.constraint_sum(&x)?;
        let slack = if g.is_empty() { f64::INFINITY } else { -g.max() };
        if slack > 0.0 && best.as_ref().is_none_or(|(s, _)| slack > *s) {
            best = Some((slack, x));
        }
    }
    let (slack, x) = best.ok_or(Error::NoSlaterPoint {
        samples: SLATER_SAMPLES + 3,
    })?;
    if slack.is_infinite() {
        return Ok(0.0);
    }
    Ok(((problem.objective(&x)? - f_star) / slack).max(0.0))
}

/// The constants of the convergence guarantees for one run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub gamma: f64,
    pub rho: f64,
    pub f_star: f64,
    /// `‖λ*‖` with `λ* = 1_n ⊗ λ̂`.
    pub lambda_star_norm: f64,
    /// `1ᵀλ*`.
    pub lambda_star_sum: f64,
    pub u_star_norm: f64,
    pub u_star_w_norm: f64,
    pub u0_w_norm: f64,
    pub c: f64,
    pub d0: f64,
    pub c0: f64,
    pub s0: f64,
    pub gamma_tilde: f64,
    /// `1/γ` minus the right-hand side of the step-size condition at `gamma`.
    pub step_condition_margin: f64,
    /// Largest `γ` with `C ≥ 0` (infinite when every `γ` works).
    pub gamma_max_for_nonnegative_c: f64,
    pub theoretical_guarantee: bool,
    pub lipschitz: LipschitzEstimates,
    pub bt_b_norm: f64,
    pub dist_y0_ystar: f64,
}

impl RateConstants {
    /// `2(‖λ*‖ + √C)`.
    pub fn ineq_numerator(&self) -> f64 {
        2.0 * (self.lambda_star_norm + self.c.max(0.0).sqrt())
    }
}

/// Lifted saddle point assembled from a reference solution and its duals.
#[derive(Debug, Clone)]
pub struct SaddlePoint {
    pub y: DVector<f64>,
    pub lambda: DVector<f64>,
    pub u: DVector<f64>,
    pub z: DVector<f64>,
}

/// `y*` with balanced slacks, `λ* = 1 ⊗ λ̂`, `u* = 1 ⊗ (ν, λ̂)`, `z* = B y* − c`.
pub fn lifted_saddle_point(lp: &LiftedProblem, x_star: &DVector<f64>, dual: &DualEstimate) -> Result<SaddlePoint> {
    let (n, p, m) = (lp.n(), lp.p(), lp.m());
    let y = lp.lift_balanced(x_star)?;
    let lambda = DVector::from_fn(n * p, |r, _| dual.lambda_hat[r % p]);
    let ub = m + p;
    let u = DVector::from_fn(n * ub, |r, _| {
        let k = r % ub;
        if k < m {
            dual.nu[k]
        } else {
            dual.lambda_hat[k - m]
        }
    });
    let z = lp.apply_b(&y) - lp.c();
    Ok(SaddlePoint { y, lambda, u, z })
}

/// The constants `C`, `D⁰`, `C⁰`, `S⁰` and the step-size bound `γ̃` for a run
/// started at `initial`.
pub fn compute_constants(
    lp: &LiftedProblem,
    f_star: f64,
    saddle: &SaddlePoint,
    params: &AlgoParams,
    initial: &AlgoState,
    lipschitz: &LipschitzEstimates,
) -> Result<RateConstants> {
    let (gamma, rho) = (params.gamma, params.rho);
    let (n, p) = (lp.n() as f64, lp.p() as f64);
    let ub = lp.u_block();
    let wp = &params.wp;
    let g0 = lp.eval_G(&initial.y)?;
    let g_star = lp.eval_G(&saddle.y)?;
    let delta = &initial.y - &saddle.y;
    let b_delta = lp.apply_b(&delta);
    let u0_w = wp.w_norm(&initial.u, ub);
    let u_star_w = wp.w_norm(&saddle.u, ub);
    let z_term = wp.h_pinv_norm_sq(&(&initial.z - &saddle.z), ub) / (2.0 * rho);
    let lam_norm = saddle.lambda.norm();
    // every part of C except the y-distance term
    let r = z_term
        + 0.5 * rho * (u0_w + u_star_w).powi(2)
        + 0.5 * g0.norm_squared()
        + 0.5 * g_star.norm_squared()
        + 0.5 * initial.q.norm_squared()
        + lam_norm * lam_norm;
    let y_term = |g: f64| 0.5 * delta.norm_squared() / g - 0.5 * b_delta.norm_squared() / rho;
    let c = r + y_term(gamma);
    let root = (2.0 * c.max(0.0) / rho).sqrt();
    let d0 = rho * n.sqrt() * (u0_w + u_star_w + root);
    let c0 = 2.0 * (lam_norm + c.max(0.0).sqrt()) * saddle.lambda.sum() + rho * saddle.u.norm() * (u0_w + u_star_w + root);
    let s0 = z_term + 0.5 * rho * u0_w * u0_w + y_term(gamma) + 0.5 * initial.q.norm_squared() - 0.5 * g0.norm_squared();

    let l_g = lipschitz.l_g;
    let snp = (n * p).sqrt();
    let dnorm = delta.norm();
    let base = lipschitz.beta_tilde.powi(2) + lipschitz.l_f_lifted + lp.bt_b_norm() / rho;
    let gamma_tilde = if l_g == 0.0 {
        1.0 / base
    } else {
        let dd = base + 4.0 * snp * l_g * lam_norm;
        let a = 2.0 * l_g * snp * dnorm;
        let s = (a * a + dd + 4.0 * snp * l_g * r.sqrt()).sqrt() + a;
        1.0 / (s * s)
    };
    let rhs = base + 4.0 * snp * (lam_norm + c.max(0.0).sqrt()) * l_g;
    let margin = 1.0 / gamma - rhs;
    let excess = 0.5 * b_delta.norm_squared() / rho - r;
    let gamma_max = if excess > 0.0 {
        0.5 * delta.norm_squared() / excess
    } else {
        f64::INFINITY
    };
    let guarantee = c >= 0.0 && margin >= -1e-10 * rhs.abs().max(1.0);
    Ok(RateConstants {
        gamma,
        rho,
        f_star,
        lambda_star_norm: lam_norm,
        lambda_star_sum: saddle.lambda.sum(),
        u_star_norm: saddle.u.norm(),
        u_star_w_norm: u_star_w,
        u0_w_norm: u0_w,
        c,
        d0,
        c0,
        s0,
        gamma_tilde,
        step_condition_margin: margin,
        gamma_max_for_nonnegative_c: gamma_max,
        theoretical_guarantee: guarantee,
        lipschitz: *lipschitz,
        bt_b_norm: lp.bt_b_norm(),
        dist_y0_ystar: dnorm,
    })
}

/// Fails with [`Error::NegativeC`] when the constants were computed for a
/// step size that makes `C` negative.
pub fn require_nonnegative_c(k: &RateConstants) -> Result<()> {
    if k.c < 0.0 {
        return Err(Error::NegativeC {
            gamma: k.gamma,
            c: k.c,
            gamma_max: k.gamma_max_for_nonnegative_c,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub failures: usize,
    pub first_failure: Option<usize>,
    /// Largest `value / bound` seen.
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub name: String,
    /// Absent when the series is identically zero on the window.
    pub slope: Option<f64>,
    pub points: usize,
    /// First `k` of the window's terminal run of exact zeros, if the run
    /// reaches the window's end.
    pub zero_from: Option<usize>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub iterations: usize,
    pub checks: Vec<BoundCheck>,
    pub slopes: Vec<SlopeFit>,
    /// The run satisfied the step-size condition; otherwise the report is
    /// advisory.
    pub theoretical_guarantee: bool,
}

impl BoundReport {
    pub fn all_bounds_hold(&self) -> bool {
        self.checks.iter().all(|c| c.failures == 0)
    }

    pub fn check(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn slope(&self, name: &str) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.name == name)
    }
}

/// Absolute slack for rounding in the bound comparisons.
const BOUND_SLACK: f64 = 1e-12;
pub const SLOPE_WINDOW: (usize, usize) = (100, 10_000);
pub const SLOPE_RANGE: (f64, f64) = (-2.0, -0.7);
pub const ZERO_TAIL_START: usize = 1_000;

/// Checks every record against the `1/k` bounds and fits log-log slopes of
/// the inequality violation and the objective error over [`SLOPE_WINDOW`].
pub fn check_rate_bounds(records: &[IterationRecord], k: &RateConstants, n: usize) -> BoundReport {
    let ineq_num = k.ineq_numerator();
    type Series<'a> = (&'a str, Box<dyn Fn(&IterationRecord) -> f64 + 'a>, f64);
    let specs: Vec<Series<'_>> = vec![
        ("lifted_inequality", Box::new(|r| r.lifted_g_max_avg), ineq_num),
        ("consensus_residual", Box::new(|r| r.consensus_norm_avg), k.d0),
        ("objective_upper", Box::new(|r| r.f_avg - k.f_star), k.s0),
        ("objective_lower", Box::new(|r| k.f_star - r.f_avg), k.c0),
        ("global_inequality", Box::new(|r| r.ineq_max_avg), n as f64 * ineq_num + k.d0),
        ("global_equality", Box::new(|r| r.eq_norm_avg), k.d0),
    ];
    let checks = specs
        .iter()
        .map(|(name, value, num)| {
            let mut c = BoundCheck {
                name: name.to_string(),
                failures: 0,
                first_failure: None,
                worst_ratio: f64::NEG_INFINITY,
            };
            for r in records {
                let bound = num / r.k as f64;
                let v = value(r);
                if v > bound + BOUND_SLACK * (1.0 + bound.abs()) {
                    c.failures += 1;
                    c.first_failure.get_or_insert(r.k);
                }
                if bound > 0.0 {
                    c.worst_ratio = c.worst_ratio.max(v / bound);
                }
            }
            c
        })
        .collect();
    let slopes = vec![
        fit_slope("inequality_violation", records, |r| r.ineq_max_avg.max(0.0)),
        fit_slope("objective_error", records, |r| (r.f_avg - k.f_star).abs()),
    ];
    BoundReport {
        iterations: records.len(),
        checks,
        slopes,
        theoretical_guarantee: k.theoretical_guarantee,
    }
}

/// Least-squares slope of `log v` against `log k` over every record in the
/// window with `v > 0`.
///
/// Passes when the slope lies in [`SLOPE_RANGE`], or when `v` is exactly zero
/// for every recorded `k ≥` [`ZERO_TAIL_START`] in the window: a series that
/// vanishes on the whole last decade decays faster than any power of `k`.
pub fn fit_slope(name: &str, records: &[IterationRecord], value: impl Fn(&IterationRecord) -> f64) -> SlopeFit {
    let window: Vec<&IterationRecord> = records
        .iter()
        .filter(|r| r.k >= SLOPE_WINDOW.0 && r.k <= SLOPE_WINDOW.1)
        .collect();
    let pts: Vec<(f64, f64)> = window
        .iter()
        .filter_map(|r| {
            let v = value(r);
            (v > 0.0).then(|| ((r.k as f64).ln(), v.ln()))
        })
        .collect();
    let covers_end = window.last().is_some_and(|r| r.k == SLOPE_WINDOW.1);
    let zero_from = if covers_end {
        let tail = window.iter().rev().take_while(|r| value(r) == 0.0).count();
        (tail > 0).then(|| window[window.len() - tail].k)
    } else {
        None
    };
    let slope = least_squares_slope(&pts);
    let in_range = slope.is_some_and(|s| (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&s));
    let vanishes = zero_from.is_some_and(|k| k <= ZERO_TAIL_START);
    SlopeFit {
        name: name.to_string(),
        slope,
        points: pts.len(),
        zero_from,
        passed: in_range || vanishes,
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
