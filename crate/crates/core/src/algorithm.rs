//! The projected primal-dual iteration on the lifted problem.
//!
//! ```text
//! y⁺ = P_Y(y − γ d)
//! q⁺ = max(−G(y⁺), q + G(y⁺))
//! u⁺ = W u + (B y⁺ − c − z) / ρ
//! z⁺ = z + ρ H u⁺
//! d  = ∇f(y) + ∂G(y)ᵀ(q + G(y)) + Bᵀ(W u − z/ρ) + Bᵀ(B y − c)/ρ
//! ```
//!
//! The updates run in exactly this order. The stacked engine applies them to
//! global vectors; the decentralized engine in [`crate::network`] runs the
//! same recursion node by node over neighbor messages.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{CommunicationAudit, Fault, Simulator};
use crate::problem::sum_blocks;
use crate::problem::{LiftedEval, LiftedProblem};
use crate::weights::WeightPair;

#[derive(Debug, Clone)]
pub struct AlgoParams {
    pub gamma: f64,
    pub rho: f64,
    pub max_iter: usize,
    pub wp: WeightPair,
}

impl AlgoParams {
    pub fn new(gamma: f64, rho: f64, max_iter: usize, wp: WeightPair) -> Result<Self> {
        for (name, v) in [("gamma", gamma), ("rho", rho)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(AlgoParams {
            gamma,
            rho,
            max_iter,
            wp,
        })
    }

    fn check(&self, lp: &LiftedProblem) -> Result<()> {
        if self.wp.n() != lp.n() {
            return Err(Error::DimensionMismatch {
                expected: lp.n(),
                actual: self.wp.n(),
            });
        }
        Ok(())
    }
}

/// Global iterate. The decentralized engine holds the same data split into
/// per-node slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoState {
    pub k: usize,
    pub y: DVector<f64>,
    pub q: DVector<f64>,
    pub u: DVector<f64>,
    pub z: DVector<f64>,
    /// `Σ_{ℓ=1}^k y^ℓ`.
    pub y_sum: DVector<f64>,
    pub u0: DVector<f64>,
}

impl AlgoState {
    /// `ȳ^k`; absent at `k = 0`.
    pub fn y_avg(&self) -> Option<DVector<f64>> {
        (self.k > 0).then(|| &self.y_sum / self.k as f64)
    }

    /// Largest absolute entry difference over all variables.
    pub fn sup_distance(&self, other: &AlgoState) -> f64 {
        [
            (&self.y - &other.y).amax(),
            (&self.q - &other.q).amax(),
            (&self.u - &other.u).amax(),
            (&self.z - &other.z).amax(),
            (&self.y_sum - &other.y_sum).amax(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Starting point. Absent fields use `y⁰ = P_Y(0)` and `u⁰ = 0`.
#[derive(Debug, Clone, Default)]
pub struct InitialPoint {
    pub y0: Option<DVector<f64>>,
    pub u0: Option<DVector<f64>>,
}

/// Builds `(y⁰, q⁰, u⁰, z⁰)` with `z⁰ = ρ H u⁰` and `q⁰ = max(−G(y⁰), 0)`.
/// A `y⁰` outside `Y` is projected; the returned distance says by how much.
pub fn init_state(
    lp: &LiftedProblem,
    init: &InitialPoint,
    params: &AlgoParams,
) -> Result<(AlgoState, f64)> {
    params.check(lp)?;
    let raw_y = init.y0.clone().unwrap_or_else(|| DVector::zeros(lp.dim()));
    if raw_y.len() != lp.dim() {
        return Err(Error::DimensionMismatch {
            expected: lp.dim(),
            actual: raw_y.len(),
        });
    }
    let y = lp.project_y(&raw_y);
    let moved = (&y - &raw_y).norm();
    let u = init.u0.clone().unwrap_or_else(|| DVector::zeros(lp.u_dim()));
    if u.len() != lp.u_dim() {
        return Err(Error::DimensionMismatch {
            expected: lp.u_dim(),
            actual: u.len(),
        });
    }
    let g = lp.eval_G(&y)?;
    let q = g.map(|v| (-v).max(0.0));
    let z = params.wp.apply_h(&u, lp.u_block()) * params.rho;
    Ok((
        AlgoState {
            k: 0,
            y,
            q,
            u0: u.clone(),
            u,
            z,
            y_sum: DVector::zeros(lp.dim()),
        },
        moved,
    ))
}

/// `d^k` at the state's `y`, using a precomputed evaluation at that point.
pub fn compute_d_with_eval(
    lp: &LiftedProblem,
    state: &AlgoState,
    params: &AlgoParams,
    ev: &LiftedEval,
) -> DVector<f64> {
    let rho = params.rho;
    let w = &state.q + &ev.g_stack;
    let dual = params.wp.apply_w(&state.u, lp.u_block()) - &state.z / rho;
    let resid = lp.apply_b(&state.y) - lp.c();
    ev.grad_f(lp) + ev.jac_g_t_apply(lp, &w) + lp.apply_bt(&(dual + resid / rho))
}

pub fn compute_d_stacked(lp: &LiftedProblem, state: &AlgoState, params: &AlgoParams) -> Result<DVector<f64>> {
    let ev = lp.evaluate(&state.y)?;
    Ok(compute_d_with_eval(lp, state, params, &ev))
}

/// One application of the four updates. Returns the evaluation at `y^{k+1}`
/// so the caller can reuse it for the next direction.
pub fn step_stacked_with_eval(
    lp: &LiftedProblem,
    state: &mut AlgoState,
    params: &AlgoParams,
    ev: &LiftedEval,
) -> Result<LiftedEval> {
    let d = compute_d_with_eval(lp, state, params, ev);
    let y_next = lp.project_y(&(&state.y - d * params.gamma));
    let ev_next = lp.evaluate(&y_next)?;
    let g = &ev_next.g_stack;
    let q_next = DVector::from_fn(g.len(), |r, _| (-g[r]).max(state.q[r] + g[r]));
    let ub = lp.u_block();
    let u_next = params.wp.apply_w(&state.u, ub) + (lp.apply_b(&y_next) - lp.c() - &state.z) / params.rho;
    let z_next = &state.z + params.wp.apply_h(&u_next, ub) * params.rho;
    state.y_sum += &y_next;
    state.y = y_next;
    state.q = q_next;
    state.u = u_next;
    state.z = z_next;
    state.k += 1;
    Ok(ev_next)
}

pub fn step_stacked(lp: &LiftedProblem, state: &mut AlgoState, params: &AlgoParams) -> Result<()> {
    let ev = lp.evaluate(&state.y)?;
    step_stacked_with_eval(lp, state, params, &ev).map(|_| ())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Stacked,
    Decentralized,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stacked" => Ok(Engine::Stacked),
            "decentralized" => Ok(Engine::Decentralized),
            other => Err(Error::InvalidParameter(format!("unknown engine `{other}`"))),
        }
    }
}

/// Known solution of the original problem, used for error metrics and the
/// optional stopping rule.
#[derive(Debug, Clone)]
pub struct Reference {
    pub x: DVector<f64>,
    pub f: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub engine: Option<Engine>,
    pub record_states: bool,
    pub audit: bool,
    pub reference: Option<Reference>,
    /// Stop once `max(ineq violation, eq violation, |f(x̄) − f*|) < tol`;
    /// needs `reference`.
    pub stop_tol: Option<f64>,
    pub fault: Option<Fault>,
}

/// Scalars recorded after iteration `k ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub f_iter: f64,
    pub f_avg: f64,
    /// Componentwise max of `Σ_i g_i(x̄_{N_i})`.
    pub ineq_max_avg: f64,
    /// `‖Σ_i (A_i x̄_{N_i} − b_i)‖`.
    pub eq_norm_avg: f64,
    /// Componentwise max of `G(ȳ^k)`.
    pub lifted_g_max_avg: f64,
    /// `‖(1 ⊗ I)ᵀ(B ȳ^k − c)‖`.
    pub consensus_norm_avg: f64,
    pub q_norm: f64,
    /// `‖G(y^k)‖`.
    pub g_norm: f64,
    /// `‖u^k − u^0‖_W`.
    pub u_drift: f64,
    /// `‖Σ_i z_i^k‖`.
    pub z_sum_norm: f64,
    pub opt_dist_iter: Option<f64>,
    pub opt_dist_avg: Option<f64>,
}

/// Per-iteration callback. Errors abort the run.
pub trait Observer {
    fn on_init(&mut self, _lp: &LiftedProblem, _state: &AlgoState) -> Result<()> {
        Ok(())
    }
    fn on_iteration(&mut self, lp: &LiftedProblem, state: &AlgoState, record: &IterationRecord) -> Result<()>;
}

/// Observer that does nothing.
pub struct NoObserver;

impl Observer for NoObserver {
    fn on_iteration(&mut self, _: &LiftedProblem, _: &AlgoState, _: &IterationRecord) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub engine: Engine,
    pub initial: AlgoState,
    /// Distance by which the supplied `y⁰` was projected into `Y`.
    pub initial_projection: f64,
    pub final_state: AlgoState,
    /// `ȳ^K`; absent when no iteration ran.
    pub y_avg: Option<DVector<f64>>,
    pub records: Vec<IterationRecord>,
    /// `y^1..y^K` states when requested.
    pub states: Option<Vec<AlgoState>>,
    pub audit: Option<CommunicationAudit>,
    pub stopped_early: bool,
}

fn record_for(
    lp: &LiftedProblem,
    wp: &WeightPair,
    state: &AlgoState,
    ev_iter: &LiftedEval,
    reference: Option<&Reference>,
) -> Result<IterationRecord> {
    let y_avg = state.y_avg().expect("records start at k = 1");
    let ev_avg = lp.evaluate(&y_avg)?;
    let (n, p) = (lp.n(), lp.p());
    let g_sum = ev_avg.nodes.iter().fold(DVector::zeros(p), |a, e| a + &e.g);
    let x_avg = lp.x_of(&y_avg);
    let eq = lp.problem().equality_residual(&x_avg);
    let max_or_zero = |v: &DVector<f64>| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (opt_dist_iter, opt_dist_avg) = match reference {
        Some(r) => (
            Some((lp.x_of(&state.y) - &r.x).norm()),
            Some((&x_avg - &r.x).norm()),
        ),
        None => (None, None),
    };
    Ok(IterationRecord {
        k: state.k,
        f_iter: ev_iter.f(),
        f_avg: ev_avg.f(),
        ineq_max_avg: if p > 0 { max_or_zero(&g_sum) } else { 0.0 },
        eq_norm_avg: eq.norm(),
        lifted_g_max_avg: if p > 0 { max_or_zero(&ev_avg.g_stack) } else { 0.0 },
        consensus_norm_avg: lp.consensus_residual(&y_avg).norm(),
        q_norm: state.q.norm(),
        g_norm: ev_iter.g_stack.norm(),
        u_drift: wp.w_norm(&(&state.u - &state.u0), lp.u_block()),
        z_sum_norm: sum_blocks(&state.z, n, lp.u_block()).norm(),
        opt_dist_iter,
        opt_dist_avg,
    })
}

/// Runs `params.max_iter` iterations (or fewer with a stopping rule).
pub fn run(
    lp: &LiftedProblem,
    params: &AlgoParams,
    init: &InitialPoint,
    options: &RunOptions,
    observer: &mut dyn Observer,
) -> Result<Trajectory> {
    let engine = options.engine.unwrap_or(Engine::Stacked);
    if options.stop_tol.is_some() && options.reference.is_none() {
        return Err(Error::InvalidParameter("a stopping tolerance needs a reference solution".into()));
    }
    let (initial, moved) = init_state(lp, init, params)?;
    observer.on_init(lp, &initial)?;
    let mut records = Vec::with_capacity(params.max_iter);
    let mut states = options.record_states.then(Vec::new);
    let mut stopped_early = false;

    let mut after_step = |state: &AlgoState, ev: &LiftedEval| -> Result<bool> {
        let rec = record_for(lp, &params.wp, state, ev, options.reference.as_ref())?;
        observer.on_iteration(lp, state, &rec)?;
        let stop = match (options.stop_tol, options.reference.as_ref()) {
            (Some(tol), Some(r)) => {
                rec.ineq_max_avg.max(0.0).max(rec.eq_norm_avg).max((rec.f_avg - r.f).abs()) < tol
            }
            _ => false,
        };
        records.push(rec);
        if let Some(s) = states.as_mut() {
            s.push(state.clone());
        }
        Ok(stop)
    };

    let (final_state, audit) = match engine {
        Engine::Stacked => {
            let mut state = initial.clone();
            let mut ev = lp.evaluate(&state.y)?;
            for _ in 0..params.max_iter {
                ev = step_stacked_with_eval(lp, &mut state, params, &ev)?;
                if after_step(&state, &ev)? {
                    stopped_early = true;
                    break;
                }
            }
            (state, None)
        }
        Engine::Decentralized => {
            let mut sim = Simulator::new(lp, params, &initial, options.audit)?;
            if let Some(f) = options.fault {
                sim.inject_fault(f);
            }
            for _ in 0..params.max_iter {
                sim.round()?;
                let state = sim.global_state();
                let ev = lp.evaluate(&state.y)?;
                if after_step(&state, &ev)? {
                    stopped_early = true;
                    break;
                }
            }
            let audit = options.audit.then(|| sim.audit().clone());
            (sim.global_state(), audit)
        }
    };
    Ok(Trajectory {
        engine,
        y_avg: final_state.y_avg(),
        initial,
        initial_projection: moved,
        final_state,
        records,
        states,
        audit,
        stopped_early,
    })
}
