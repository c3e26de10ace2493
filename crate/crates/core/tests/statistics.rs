use std::path::PathBuf;

use fkmeasure::bsde::{driver_l1_bound_check, martingale_residual};
use fkmeasure::config::RunConfig;
use fkmeasure::process::{mean_exit_time, SimConfig};
use fkmeasure::solver::{picard_solve, FkEngine, MeasureTermMode, PicardConfig};
use fkmeasure::{Domain, MeasureData, Nonlinearity, OperatorSpec, SolutionField};

fn unit() -> Domain {
    Domain::unit_interval()
}

#[test]
fn undamped_iterates_bracket_the_fixed_point() {
    let sim = SimConfig::new(1e-3, 10.0, 31, 4000);
    let picard = PicardConfig { grid: 11, damping: 1.0, ..PicardConfig::default() };
    let engine = FkEngine::new(
        &OperatorSpec::laplacian(1, 1.0),
        &unit(),
        &Nonlinearity::linear(-1.0),
        &MeasureData::constant_density(1.0),
        &sim,
        &picard,
    )
    .unwrap();
    let y_max = 1e6;
    let mut u = engine.field(vec![0.0; engine.grid.len()]);
    let mut iterates = Vec::new();
    for _ in 0..6 {
        u = engine.field(engine.map(&u, y_max, 0).values);
        iterates.push(u.values.clone());
    }
    let tol = 1e-12;
    for i in engine.active_nodes().iter().copied() {
        let it: Vec<f64> = iterates.iter().map(|v| v[i]).collect();
        // odd iterates (u₁, u₃, u₅) fall, even ones (u₂, u₄, u₆) rise, and the
        // two families never cross
        assert!(it[0] >= it[2] - tol && it[2] >= it[4] - tol, "node {i}: {it:?}");
        assert!(it[1] <= it[3] + tol && it[3] <= it[5] + tol, "node {i}: {it:?}");
        assert!(it[5] <= it[4] + tol, "node {i}: {it:?}");
    }
}

#[test]
fn solve_report_is_independent_of_worker_count() {
    let sim = SimConfig::new(1e-3, 10.0, 5, 3000);
    let picard = PicardConfig { grid: 9, ..PicardConfig::default() };
    let f = Nonlinearity::new(|_, y| -y * y * y, true);
    let mu = MeasureData::constant_density(3.0).with_atom(vec![0.3], 0.5);
    let reports: Vec<String> = [1, 3]
        .into_iter()
        .map(|n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| {
                let (u, rep) = picard_solve(&OperatorSpec::laplacian(1, 1.0), &unit(), &f, &mu, &sim, &picard).unwrap();
                format!("{:?}\n{}", u.values, serde_json::to_string(&rep).unwrap())
            })
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn exact_linear_solution_is_a_martingale_at_five_probes() {
    let u = SolutionField::sample(&unit(), 1001, |x| x[0] * (1.0 - x[0]) / 2.0).unwrap();
    let sim = SimConfig::new(1e-3, 10.0, 77, 20_000);
    for x0 in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let rep = martingale_residual(
            &u,
            &OperatorSpec::laplacian(1, 1.0),
            &unit(),
            &[x0],
            &Nonlinearity::zero(),
            &MeasureData::constant_density(1.0),
            &sim,
            None,
            None,
        )
        .unwrap();
        assert!(rep.pass, "x0 = {x0}: means {:?} stderr {:?}", rep.ensemble_means, rep.stderr);
    }
}

#[test]
fn exit_time_is_consistent_under_step_halving() {
    // ½Δ on (0, 1) from ½: E ζ = x(1 - x) = 1/4
    let spec = OperatorSpec::laplacian(1, 0.5);
    let exact = 0.25;
    let dts = [4e-3, 2e-3, 1e-3];
    let est: Vec<_> = dts
        .iter()
        .map(|&dt| mean_exit_time(&spec, &unit(), &[0.5], &SimConfig::new(dt, 10.0, 3, 40_000)).unwrap().estimate)
        .collect();
    let c = (est[0].mean - exact).abs() / dts[0].sqrt();
    for k in 1..dts.len() {
        let diff = (est[k].mean - est[k - 1].mean).abs();
        let se = (est[k].stderr.powi(2) + est[k - 1].stderr.powi(2)).sqrt();
        assert!(diff <= 3.0 * se + c * dts[k - 1].sqrt(), "dt {}: {diff} vs se {se}, C {c}", dts[k]);
    }
    assert!((est[2].mean - exact).abs() <= 3.0 * est[2].stderr + c * dts[2].sqrt());
}

#[test]
fn driver_bound_holds_on_shipped_presets() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for name in ["linear", "dirac", "manufactured", "stable", "ou"] {
        let cfg = RunConfig::load(&dir.join(format!("{name}.toml"))).unwrap();
        let mut p = cfg.problem().unwrap();
        p.sim.paths = 4000;
        p.sim.dt = p.sim.dt.max(1e-3);
        let picard = PicardConfig { measure_term: MeasureTermMode::Auto, ..p.picard.clone() };
        let (u, _) = picard_solve(&p.spec, &p.domain, &p.f, &p.mu, &p.sim, &picard).unwrap();
        let x0 = p.probe();
        let rep = driver_l1_bound_check(&u, &p.spec, &p.domain, &x0, &p.f, &p.mu, &p.sim, None).unwrap();
        assert!(rep.pass, "{name}: lhs {:?} rhs {:?} u(x0) {}", rep.lhs, rep.rhs, rep.u_x0);
    }
}
