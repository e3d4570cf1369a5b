use std::f64::consts::PI;

use dpd::algorithm::{run, AlgoParams, Engine, InitialPoint, RunOptions};
use dpd::experiments::{
    gen_linear_log, run_experiment, write_outputs, ExperimentConfig, Family, QuadraticConfig, METRICS_HEADER,
};
use dpd::graph::Graph;
use dpd::network::{Fault, Phase};
use dpd::problem::{LiftedProblem, ProblemFile};
use dpd::weights::build_weight_matrices;
use dpd::Error;

#[test]
fn ring_ph_spectrum_matches_the_circulant_formula() {
    // Metropolis on a ring: P' = circ(1/3, 1/3, 1/3), so P^H has
    // eigenvalues (1 − cos(2πj/5)) / 3
    let wp = build_weight_matrices(&Graph::ring(5).unwrap(), 1.0).unwrap();
    let mut got: Vec<f64> = wp.ph().clone().symmetric_eigenvalues().iter().copied().collect();
    got.sort_by(f64::total_cmp);
    let mut expect: Vec<f64> = (0..5).map(|j| (1.0 - (2.0 * PI * j as f64 / 5.0).cos()) / 3.0).collect();
    expect.sort_by(f64::total_cmp);
    for (g, e) in got.iter().zip(&expect) {
        assert!((g - e).abs() <= 1e-12, "{got:?} vs {expect:?}");
    }
    assert!(got[0].abs() <= 1e-12 && got[1] > 0.1);
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Family::CoupledQuadratic, 6, 4);
    cfg.max_iter = 50;
    cfg.engine = Engine::Decentralized;
    cfg.audit = true;
    let res = run_experiment(&cfg).unwrap();
    write_outputs(&res, dir.path()).unwrap();
    for f in [
        "metrics.csv",
        "bounds.csv",
        "constants.json",
        "bound_report.json",
        "reference.json",
        "problem.json",
        "audit.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER);
    let ks: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ks, (1..=50).collect::<Vec<_>>());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert!(manifest["theoretical_guarantee"].is_boolean());
    let audit = std::fs::read_to_string(dir.path().join("audit.csv")).unwrap();
    assert_eq!(audit.lines().next().unwrap(), "round,phase,messages,scalars");
}

#[test]
fn saved_problems_reload_as_custom_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Family::CoupledQuadratic, 5, 8);
    cfg.quadratic = QuadraticConfig { d: 1, m: 1, p: 1 };
    cfg.max_iter = 20;
    let first = run_experiment(&cfg).unwrap();
    let path = dir.path().join("p.json");
    first.lifted.problem().to_file("coupled-quadratic").unwrap().save(&path).unwrap();
    let reloaded = ProblemFile::load(&path).unwrap().into_problem().unwrap();
    assert_eq!(reloaded.x_dim(), first.lifted.problem().x_dim());

    let mut again = cfg.clone();
    again.family = Family::CustomFile(path);
    let second = run_experiment(&again).unwrap();
    let (a, b) = (&first.trajectory.records, &second.trajectory.records);
    for (ra, rb) in a.iter().zip(b) {
        assert!((ra.f_iter - rb.f_iter).abs() <= 1e-12 * (1.0 + ra.f_iter.abs()));
    }
}

#[test]
fn infeasible_linear_log_is_rejected() {
    let err = gen_linear_log(Graph::path(3).unwrap(), 1, 100.0).unwrap_err();
    assert!(matches!(err, Error::Infeasible { .. }));
}

#[test]
fn linear_log_uses_the_fast_path() {
    let prob = gen_linear_log(Graph::geometric_default(12, 3).unwrap(), 3, 1.2).unwrap();
    assert!(prob.is_decoupled());
    let wp = build_weight_matrices(prob.graph(), 1.0).unwrap();
    let lp = LiftedProblem::new(prob).unwrap();
    let params = AlgoParams::new(0.1, 1.0, 30, wp).unwrap();
    let opts = RunOptions {
        engine: Some(Engine::Decentralized),
        audit: true,
        ..Default::default()
    };
    let t = run(&lp, &params, &InitialPoint::default(), &opts, &mut dpd::algorithm::NoObserver).unwrap();
    let audit = t.audit.unwrap();
    assert_eq!(audit.total_messages(Phase::CrossTerm), 0);
    assert_eq!(audit.total_messages(Phase::PostPrimalX), 0);
    assert!(audit.total_messages(Phase::PostDualU) > 0);
    assert_eq!(audit.non_neighbor_accesses, 0);
}

#[test]
fn a_non_local_read_aborts_the_run() {
    let mut cfg = ExperimentConfig::new(Family::CoupledQuadratic, 8, 2);
    cfg.max_iter = 1;
    let res = run_experiment(&cfg).unwrap();
    let g = res.lifted.problem().graph();
    let (reader, owner) = (0..8)
        .flat_map(|i| (0..8).map(move |j| (i, j)))
        .find(|&(i, j)| !g.are_neighbors(i, j))
        .expect("geometric graph on 8 nodes is not complete");
    let opts = RunOptions {
        engine: Some(Engine::Decentralized),
        audit: true,
        fault: Some(Fault::ReadNonNeighborX { reader, owner, round: 1 }),
        ..Default::default()
    };
    let params = AlgoParams::new(0.02, 1.0, 5, res.params.wp.clone()).unwrap();
    let err = run(&res.lifted, &params, &InitialPoint::default(), &opts, &mut dpd::algorithm::NoObserver).unwrap_err();
    assert_eq!(err, Error::LocalityViolation { reader, owner });
}
