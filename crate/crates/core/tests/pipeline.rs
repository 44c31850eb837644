use nbvqpco_core::bounds::{truncation_bound, SystemNorms};
use nbvqpco_core::carleman::build_carleman;
use nbvqpco_core::config::RunConfig;
use nbvqpco_core::invopt::{measurement_series, run_nbvqpco, InnerSolver, InverseProblem, OuterSearch, PipelineConfig};
use nbvqpco_core::linsys::{assemble, Scheme};
use nbvqpco_core::polyode::integrate_implicit_euler;

#[test]
fn scalar_stacked_solve_stays_within_truncation_bound() {
    let cfg = RunConfig::parse("model = scalar\na = -1\nb = 0.1\nu0 = 0.5\nT = 1\nn_t = 11\n").unwrap();
    let ode = cfg.model.ode().unwrap();
    let reference = integrate_implicit_euler(&ode, 1.0, 10).unwrap();
    let norms = SystemNorms::of(&ode, 1.0).unwrap();
    for level in 1..=5 {
        let cs = build_carleman(&ode, level).unwrap();
        let sys = assemble(&cs, 1.0, 11, Scheme::Backward, false).unwrap();
        let w = sys.solve_direct().unwrap().w;
        // the first lifted component of each step is u itself
        let err = reference
            .iter()
            .enumerate()
            .map(|(k, u)| (w[k * sys.layout.slot] - u[0]).abs())
            .fold(0.0, f64::max);
        assert!(err <= truncation_bound(&norms, level, 1.0), "level {level}: {err}");
    }
}

#[test]
fn classical_inversion_from_config_recovers_generating_viscosity() {
    let cfg = RunConfig::parse("model = burgers\nlevel = 3\nnu = 0.05\n").unwrap();
    let burgers = cfg.burgers().unwrap().clone();
    let y = measurement_series(&burgers, burgers.nu, cfg.scheme).unwrap();
    let result = run_nbvqpco(&InverseProblem {
        pipeline: PipelineConfig {
            burgers,
            level: cfg.level,
            scheme: cfg.scheme,
            pad: true,
        },
        y,
        nu_range: (cfg.nu_min, cfg.nu_max),
        outer: OuterSearch::uniform_grid(cfg.nu_min, cfg.nu_max, cfg.nu_step).unwrap(),
        inner: InnerSolver::Classical,
        normalization: None,
    })
    .unwrap();
    assert!((result.nu_star - 0.05).abs() <= 0.01 + 1e-12, "nu_star = {}", result.nu_star);
    assert_eq!(result.points.len(), 15);
}
