//! Instance generators and the end-to-end experiment pipeline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithm::{
    init_state, run, AlgoParams, Engine, InitialPoint, IterationRecord, NoObserver, Observer, Reference, RunOptions, Trajectory,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::problem::{
    estimate_lipschitz, CoupledProblem, LiftedProblem, LinearLogNode, NodeProblem, ProblemFile, QuadraticForm,
    QuadraticNode,
};
use crate::reference::{
    check_rate_bounds, compute_constants, estimate_dual, lifted_saddle_point, solve_reference, BoundReport,
    DualEstimate, RateConstants, ReferenceSolution,
};
use crate::weights::{build_weight_matrices, validate_assumption2, ValidationReport};

/// `Σ_i −d_i log(1 + x_i) ≤ −b` with the offset split evenly over the nodes.
pub fn linear_log_from_coefficients(graph: Graph, c: &[f64], d: &[f64], b: f64) -> Result<CoupledProblem> {
    let n = graph.n();
    if c.len() != n || d.len() != n {
        return Err(Error::ShapeMismatch(format!("need {n} coefficients per family")));
    }
    // the largest achievable Σ d_i log(1 + x_i) on [0, 1]^n is at x = 1
    let reach = d.iter().sum::<f64>() * 2f64.ln();
    if reach <= b {
        return Err(Error::Infeasible { residual: b - reach });
    }
    let nodes = (0..n)
        .map(|i| {
            NodeProblem::new(
                vec![i],
                DVector::zeros(1),
                DVector::from_element(1, 1.0),
                Arc::new(LinearLogNode::new(c[i], d[i], b / n as f64)),
                DMatrix::zeros(1, 1),
                DVector::zeros(1),
            )
        })
        .collect();
    CoupledProblem::new(graph, 1, 1, nodes)
}

/// Default right-hand side: `b = 0.1 n`, which is 5 for 50 nodes.
pub fn default_linear_log_b(n: usize) -> f64 {
    0.1 * n as f64
}

const MAX_REDRAWS: usize = 1000;

/// `c_i, d_i ~ U[0, 1]`, redrawn from the same stream until `x = 1` is a
/// Slater point.
pub fn gen_linear_log(graph: Graph, seed: u64, b: f64) -> Result<CoupledProblem> {
    let n = graph.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = Error::Infeasible { residual: b };
    for _ in 0..MAX_REDRAWS {
        let c: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        match linear_log_from_coefficients(graph.clone(), &c, &d, b) {
            Ok(p) => return Ok(p),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Options of the coupled-quadratic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticConfig {
    /// Variables per node.
    pub d: usize,
    /// Equality rows.
    pub m: usize,
    /// Inequality rows.
    pub p: usize,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        QuadraticConfig { d: 2, m: 2, p: 1 }
    }
}

/// Quadratic objective and constraints on `x_{N_i}`, all data random:
///
/// - `P_i = FᵀF / D` and constraint matrices `HᵀH / D` with entries of `F`, `H` in `U[−1, 1]`;
/// - linear terms in `U[−1, 1]`, boxes `[−1, 1]`;
/// - an interior point `x̃ ∈ [−0.5, 0.5]` with `b_i = B_i x̃_{N_i}` and
///   constraint offsets leaving slack in `[0.1, 0.3]` per node at `x̃`.
pub fn gen_coupled_quadratic(graph: Graph, cfg: QuadraticConfig, seed: u64) -> Result<CoupledProblem> {
    let QuadraticConfig { d, m, p } = cfg;
    if d == 0 {
        return Err(Error::InvalidParameter("d must be at least 1".into()));
    }
    let n = graph.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_tilde: Vec<f64> = (0..n * d).map(|_| unif(&mut rng, -0.5, 0.5)).collect();
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let scope = graph.neighbors(i).to_vec();
        let dim = d * scope.len();
        let xt = DVector::from_iterator(dim, scope.iter().flat_map(|&j| x_tilde[j * d..(j + 1) * d].to_vec()));
        let f = rand_mat(&mut rng, dim, dim);
        let q = rand_mat(&mut rng, dim, 1).column(0).into_owned();
        let objective = QuadraticForm::new(f.transpose() * &f / dim as f64, q, 0.0);
        let mut constraints = Vec::with_capacity(p);
        for _ in 0..p {
            let h = rand_mat(&mut rng, dim, dim);
            let a = rand_mat(&mut rng, dim, 1).column(0).into_owned();
            let probe = QuadraticForm::new(h.transpose() * &h / dim as f64, a.clone(), 0.0);
            let slack = unif(&mut rng, 0.1, 0.3);
            let offset = -(probe.value(&xt) + slack);
            constraints.push(QuadraticForm::new(probe.mat().clone(), a, offset));
        }
        let b_mat = rand_mat(&mut rng, m, dim);
        let b = &b_mat * &xt;
        nodes.push(NodeProblem::new(
            scope,
            DVector::from_element(d, -1.0),
            DVector::from_element(d, 1.0),
            Arc::new(QuadraticNode::new(objective, constraints)),
            b_mat,
            b,
        ));
    }
    CoupledProblem::new(graph, p, m, nodes)
}

fn unif(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| unif(rng, -1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LinearLog,
    CoupledQuadratic,
    CustomFile(PathBuf),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::LinearLog => "linear-log",
            Family::CoupledQuadratic => "coupled-quadratic",
            Family::CustomFile(_) => "custom-file",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    Value(f64),
    /// The theoretical bound `γ̃`.
    Auto,
}

/// Hand-tuned `(γ, ρ)` per family.
pub fn default_step_sizes(family: &Family) -> (f64, f64) {
    match family {
        Family::LinearLog => (0.2, 1.0),
        // the average's equality residual is ρ‖Σ(u^k − u^0)‖/k, so ρ stays small
        Family::CoupledQuadratic | Family::CustomFile(_) => (0.03, 1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: Family,
    pub n: usize,
    pub seed: u64,
    pub gamma: GammaChoice,
    pub rho: f64,
    pub max_iter: usize,
    pub engine: Engine,
    pub audit: bool,
    pub shrink: f64,
    pub graph_file: Option<PathBuf>,
    pub quadratic: QuadraticConfig,
    /// Linear-log right-hand side; `None` uses [`default_linear_log_b`].
    pub linear_log_b: Option<f64>,
    pub reference_tol: f64,
    pub reference_budget: usize,
    pub lipschitz_samples: usize,
}

impl ExperimentConfig {
    pub fn new(family: Family, n: usize, seed: u64) -> Self {
        let (gamma, rho) = default_step_sizes(&family);
        ExperimentConfig {
            family,
            n,
            seed,
            gamma: GammaChoice::Value(gamma),
            rho,
            max_iter: 1000,
            engine: Engine::Stacked,
            audit: false,
            shrink: 1.0,
            graph_file: None,
            quadratic: QuadraticConfig::default(),
            linear_log_b: None,
            reference_tol: 1e-6,
            reference_budget: 2_000_000,
            lipschitz_samples: 32,
        }
    }

    /// Rejects values that can never run.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("iters must be at least 1".into()));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {}", self.rho)));
        }
        if let GammaChoice::Value(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidParameter(format!("gamma must be positive, got {g}")));
            }
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(Error::InvalidShrink(self.shrink));
        }
        Ok(())
    }
}

pub fn build_graph(cfg: &ExperimentConfig) -> Result<Graph> {
    match &cfg.graph_file {
        Some(path) => Graph::parse_edge_list(&std::fs::read_to_string(path)?),
        None => Graph::geometric_default(cfg.n, cfg.seed),
    }
}

/// The problem instance and a note describing how it was produced.
pub fn build_problem(cfg: &ExperimentConfig, graph: Graph) -> Result<(CoupledProblem, String)> {
    match &cfg.family {
        Family::LinearLog => {
            let b = cfg.linear_log_b.unwrap_or_else(|| default_linear_log_b(graph.n()));
            let note = format!("c_i, d_i ~ U[0,1], b = {b}, offset b/n per node, redrawn until x = 1 is strictly feasible");
            Ok((gen_linear_log(graph, cfg.seed, b)?, note))
        }
        Family::CoupledQuadratic => {
            let q = cfg.quadratic;
            let note = format!(
                "d = {}, m = {}, p = {}; P_i = F^T F / D, constraint matrices H^T H / D, linear terms U[-1,1], boxes [-1,1], b_i = B_i x~ at x~ ~ U[-0.5,0.5], slack U[0.1,0.3] per node",
                q.d, q.m, q.p
            );
            Ok((gen_coupled_quadratic(graph, q, cfg.seed)?, note))
        }
        Family::CustomFile(path) => {
            let prob = ProblemFile::load(path)?.into_problem()?;
            Ok((prob, format!("loaded from {}", path.display())))
        }
    }
}

/// Everything produced by one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub lifted: LiftedProblem,
    pub params: AlgoParams,
    pub reference: ReferenceSolution,
    pub dual: DualEstimate,
    pub constants: RateConstants,
    pub trajectory: Trajectory,
    pub bounds: BoundReport,
    pub weights_report: ValidationReport,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub family: String,
    pub n: usize,
    pub edges: usize,
    pub seed: u64,
    pub gamma: f64,
    pub gamma_source: String,
    pub rho: f64,
    pub iters: usize,
    pub engine: Engine,
    pub shrink: f64,
    pub audit: bool,
    pub theoretical_guarantee: bool,
    pub weights_all_clauses_passed: bool,
    pub weights_strict_on_complement: bool,
    pub reference_method: crate::reference::Method,
    pub reference_status: crate::reference::SolveStatus,
    pub f_star: f64,
    pub reference_feasibility: f64,
    pub initial_projection: f64,
    pub generator: String,
}

/// Solves the reference problem, resolves `γ`, runs the chosen engine and
/// checks the rate bounds. Writes nothing.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_observed(cfg, &mut NoObserver)
}

/// [`run_experiment`] with a per-iteration observer attached to the run.
pub fn run_experiment_observed(cfg: &ExperimentConfig, observer: &mut dyn Observer) -> Result<ExperimentResult> {
    cfg.validate()?;
    let graph = build_graph(cfg)?;
    let (problem, generator) = build_problem(cfg, graph)?;
    let wp = build_weight_matrices(problem.graph(), cfg.shrink)?;
    let weights_report = validate_assumption2(&wp, problem.graph());
    let reference = solve_reference(&problem, cfg.reference_tol, cfg.reference_budget)?;
    let dual = estimate_dual(&problem, &reference, cfg.seed)?;
    let lipschitz = estimate_lipschitz(&problem, cfg.lipschitz_samples, cfg.seed)?;
    let lifted = LiftedProblem::new(problem)?;
    let saddle = lifted_saddle_point(&lifted, &reference.x, &dual)?;

    // γ̃ does not depend on γ, so any positive value works for the first pass
    let probe = AlgoParams::new(1.0, cfg.rho, cfg.max_iter, wp.clone())?;
    let (initial, _) = init_state(&lifted, &InitialPoint::default(), &probe)?;
    let (gamma, gamma_source) = match cfg.gamma {
        GammaChoice::Value(g) => (g, "user"),
        GammaChoice::Auto => {
            let k = compute_constants(&lifted, reference.f, &saddle, &probe, &initial, &lipschitz)?;
            (k.gamma_tilde, "auto")
        }
    };
    let params = AlgoParams::new(gamma, cfg.rho, cfg.max_iter, wp)?;
    let constants = compute_constants(&lifted, reference.f, &saddle, &params, &initial, &lipschitz)?;
    let options = RunOptions {
        engine: Some(cfg.engine),
        audit: cfg.audit && cfg.engine == Engine::Decentralized,
        reference: Some(Reference {
            x: reference.x.clone(),
            f: reference.f,
        }),
        ..Default::default()
    };
    let trajectory = run(&lifted, &params, &InitialPoint::default(), &options, observer)?;
    let bounds = check_rate_bounds(&trajectory.records, &constants, lifted.n());
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        family: cfg.family.name().to_string(),
        n: lifted.n(),
        edges: lifted.problem().graph().edge_count(),
        seed: cfg.seed,
        gamma,
        gamma_source: gamma_source.to_string(),
        rho: cfg.rho,
        iters: cfg.max_iter,
        engine: cfg.engine,
        shrink: cfg.shrink,
        audit: options.audit,
        theoretical_guarantee: constants.theoretical_guarantee,
        weights_all_clauses_passed: weights_report.all_passed(),
        weights_strict_on_complement: weights_report.strict_on_complement,
        reference_method: reference.method,
        reference_status: reference.status,
        f_star: reference.f,
        reference_feasibility: reference.feasibility_residual,
        initial_projection: trajectory.initial_projection,
        generator,
    };
    Ok(ExperimentResult {
        lifted,
        params,
        reference,
        dual,
        constants,
        trajectory,
        bounds,
        weights_report,
        manifest,
    })
}

pub const METRICS_HEADER: &str = "k,obj_err_iter,obj_err_avg,opt_dist_iter,opt_dist_avg,ineq_viol_avg,eq_viol_avg,q_norm,u_drift";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub k: usize,
    pub obj_err_iter: f64,
    pub obj_err_avg: f64,
    pub opt_dist_iter: f64,
    pub opt_dist_avg: f64,
    pub ineq_viol_avg: f64,
    pub eq_viol_avg: f64,
    pub q_norm: f64,
    pub u_drift: f64,
}

impl MetricsRow {
    pub fn from_record(r: &IterationRecord, f_star: f64) -> Self {
        MetricsRow {
            k: r.k,
            obj_err_iter: (r.f_iter - f_star).abs(),
            obj_err_avg: (r.f_avg - f_star).abs(),
            opt_dist_iter: r.opt_dist_iter.unwrap_or(f64::NAN),
            opt_dist_avg: r.opt_dist_avg.unwrap_or(f64::NAN),
            ineq_viol_avg: r.ineq_max_avg,
            eq_viol_avg: r.eq_norm_avg,
            q_norm: r.q_norm,
            u_drift: r.u_drift,
        }
    }
}

pub fn metrics_csv(records: &[IterationRecord], f_star: f64) -> String {
    let mut s = String::with_capacity(records.len() * 120);
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let m = MetricsRow::from_record(r, f_star);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            m.k, m.obj_err_iter, m.obj_err_avg, m.opt_dist_iter, m.opt_dist_avg, m.ineq_viol_avg, m.eq_viol_avg, m.q_norm, m.u_drift
        );
    }
    s
}

/// Per-iteration bound values and observed quantities.
pub fn bounds_csv(records: &[IterationRecord], k: &RateConstants, n: usize) -> String {
    let mut s = String::from("k,lifted_ineq,lifted_ineq_bound,consensus,consensus_bound,obj_gap,obj_lower_bound,obj_upper_bound,global_ineq,global_ineq_bound\n");
    let ineq = k.ineq_numerator();
    for r in records {
        let kk = r.k as f64;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.k,
            r.lifted_g_max_avg,
            ineq / kk,
            r.consensus_norm_avg,
            k.d0 / kk,
            r.f_avg - k.f_star,
            -k.c0 / kk,
            k.s0 / kk,
            r.ineq_max_avg,
            (n as f64 * ineq + k.d0) / kk
        );
    }
    s
}

/// Writes `metrics.csv`, `bounds.csv`, `constants.json`, `bound_report.json`,
/// `reference.json`, `problem.json` (built-in families), `audit.csv` (if recorded) and
/// `manifest.json` into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let f_star = result.reference.f;
    let recs = &result.trajectory.records;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(recs, f_star))?;
    std::fs::write(dir.join("bounds.csv"), bounds_csv(recs, &result.constants, result.lifted.n()))?;
    #[derive(Serialize)]
    struct ConstantsFile<'a> {
        constants: &'a RateConstants,
        dual: &'a DualEstimate,
    }
    std::fs::write(
        dir.join("constants.json"),
        serde_json::to_string_pretty(&ConstantsFile {
            constants: &result.constants,
            dual: &result.dual,
        })?,
    )?;
    std::fs::write(dir.join("bound_report.json"), serde_json::to_string_pretty(&result.bounds)?)?;
    std::fs::write(dir.join("reference.json"), serde_json::to_string_pretty(&result.reference)?)?;
    if let Ok(file) = result.lifted.problem().to_file(&result.manifest.family) {
        file.save(&dir.join("problem.json"))?;
    }
    if let Some(audit) = &result.trajectory.audit {
        std::fs::write(dir.join("audit.csv"), audit.to_csv())?;
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&result.manifest)?)?;
    Ok(())
}
