use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nbvqpco_core::bounds::bound_report;
use nbvqpco_core::carleman::build_carleman;
use nbvqpco_core::config::{Model, RunConfig};
use nbvqpco_core::invopt::{
    measurement_series, run_nbvqpco, solution_error_metric, InnerSolver, InverseProblem, OuterSearch, PipelineConfig,
    VqlsSettings,
};
use nbvqpco_core::linsys::{assemble as assemble_system, BlockLinearSystem, Scheme};
use nbvqpco_core::polyode::{discretize_burgers, BurgersConfig, QuadOde};
use nbvqpco_core::qsim::{prepare_b_state, vqls_solve, Ansatz, CostKind, Operator, VqlsOptions, VqlsProblem};
use nbvqpco_core::sigmalcu::{a1_count_bound, a2_count_bound, decompose_pipeline, pauli_term_count};
use rayon::prelude::*;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{CliError, CostArg, InnerArg, SchemeArg, SystemArgs, VqlsArgs};

type CliResult = Result<(), CliError>;

/// Largest system for which `assemble` reports a dense condition number.
const CONDITION_NUMBER_MAX_DIM: usize = 4096;

struct Loaded {
    cfg: RunConfig,
    ode: QuadOde,
    level: usize,
    scheme: Scheme,
}

fn load(sys: &SystemArgs) -> Result<Loaded, CliError> {
    let cfg = RunConfig::load(&sys.config)?;
    let ode = cfg.model.ode()?;
    let level = sys.level.unwrap_or(cfg.level);
    if level == 0 {
        return Err(CliError::Usage("--N must be at least 1".into()));
    }
    let scheme = match sys.scheme {
        Some(SchemeArg::Forward) => Scheme::Forward,
        Some(SchemeArg::Backward) => Scheme::Backward,
        None => cfg.scheme,
    };
    Ok(Loaded { cfg, ode, level, scheme })
}

fn start(dir: &Path, command: &str, options: &str, config: Option<&Path>, seed: u64) -> CliResult {
    std::fs::create_dir_all(dir)?;
    RunManifest::new(command, options, config, seed, dir)?.write(dir)?;
    Ok(())
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> CliResult
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
    std::fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn write_vector(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    writeln!(w, "index,value")?;
    for (i, x) in v.iter().enumerate() {
        writeln!(w, "{i},{x:e}")?;
    }
    Ok(())
}

fn stacked(l: &Loaded, pad: bool) -> Result<BlockLinearSystem, CliError> {
    let sys = build_carleman(&l.ode, l.level)?;
    Ok(assemble_system(&sys, l.cfg.model.horizon(), l.cfg.model.n_t(), l.scheme, pad)?)
}

fn vqls_settings(args: &VqlsArgs, seed: u64) -> VqlsSettings {
    VqlsSettings {
        options: VqlsOptions {
            max_iter: args.max_iter,
            step: args.step,
            restarts: args.restarts,
            seed,
            ..VqlsOptions::default()
        },
        layers: args.layers,
        cost_kind: match args.cost {
            CostArg::Local => CostKind::Local,
            CostArg::Global => CostKind::Global,
            CostArg::LocalUnnormalized => CostKind::LocalUnnormalized,
            CostArg::GlobalUnnormalized => CostKind::GlobalUnnormalized,
        },
        use_sigma: true,
    }
}

pub fn discretize(config: &Path, out: &Path, seed: u64) -> CliResult {
    let cfg = RunConfig::load(config)?;
    let ode = cfg.model.ode()?;
    start(out, "discretize", "", Some(config), seed)?;
    write_with(out, "f1.txt", |w| ode.f1().write_coordinate(w))?;
    write_with(out, "f2.txt", |w| ode.f2().write_coordinate(w))?;
    write_with(out, "f0.csv", |w| write_vector(w, &ode.f0_at(0.0)))?;
    write_with(out, "u0.csv", |w| write_vector(w, ode.u0()))?;
    Ok(())
}

pub fn lift(args: &SystemArgs, seed: u64) -> CliResult {
    let l = load(args)?;
    let sys = build_carleman(&l.ode, l.level)?;
    start(&args.out, "lift", &format!("{args:?}"), Some(&args.config), seed)?;
    write_with(&args.out, "carleman.txt", |w| sys.write_matrix(w))?;
    write_with(&args.out, "w0.csv", |w| write_vector(w, sys.w0()))?;
    write_json(
        &args.out,
        "lift.json",
        &json!({ "n_x": sys.n_x(), "level": sys.level(), "n_c": sys.n_c() }),
    )
}

pub fn assemble(args: &SystemArgs, pad: bool, seed: u64) -> CliResult {
    let l = load(args)?;
    let sys = stacked(&l, pad)?;
    start(&args.out, "assemble", &format!("{args:?} pad={pad}"), Some(&args.config), seed)?;
    write_with(&args.out, "matrix.txt", |w| sys.write_matrix(w))?;
    write_with(&args.out, "rhs.txt", |w| sys.write_rhs(w))?;
    let kappa = if sys.dim() <= CONDITION_NUMBER_MAX_DIM {
        Some(sys.condition_number()?)
    } else {
        None
    };
    write_json(
        &args.out,
        "system.json",
        &json!({
            "scheme": sys.scheme.to_string(),
            "level": sys.level,
            "dim": sys.dim(),
            "n_qubits": sys.n_qubits().ok(),
            "h": sys.h,
            "time_points": sys.layout.n_steps,
            "slot": sys.layout.slot,
            "condition_number": kappa,
        }),
    )
}

pub fn decompose(args: &SystemArgs, seed: u64) -> CliResult {
    let l = load(args)?;
    let sys = stacked(&l, true)?;
    let (d1, d2) = decompose_pipeline(&sys)?;
    start(&args.out, "decompose", &format!("{args:?}"), Some(&args.config), seed)?;
    write_with(&args.out, "a1_terms.txt", |w| d1.write_terms(w))?;
    write_with(&args.out, "a2_terms.txt", |w| d2.write_terms(w))?;
    let n_x = l.ode.n_x();
    write_json(
        &args.out,
        "counts.json",
        &json!({
            "scheme": sys.scheme.to_string(),
            "n_x": n_x,
            "time_points": sys.layout.n_steps,
            "level": l.level,
            "n_qubits": sys.n_qubits().ok(),
            "a1_terms": d1.len(),
            "a2_terms": d2.len(),
            "a1_bound": a1_count_bound(n_x, sys.layout.n_steps, l.level),
            "a2_bound": a2_count_bound(n_x, l.level),
        }),
    )
}

pub fn solve(args: &SystemArgs, inner: InnerArg, vqls: &VqlsArgs, seed: u64) -> CliResult {
    let l = load(args)?;
    let sys = stacked(&l, true)?;
    let classical = sys.solve_direct()?;
    start(
        &args.out,
        "solve",
        &format!("{args:?} {inner:?} {vqls:?}"),
        Some(&args.config),
        seed,
    )?;
    let mut summary = json!({
        "scheme": sys.scheme.to_string(),
        "level": l.level,
        "dim": sys.dim(),
        "inner": format!("{inner:?}").to_lowercase(),
    });
    if inner != InnerArg::Vqls {
        write_with(&args.out, "solution.csv", |w| sys.write_solution_csv(&classical.w, w))?;
        write_with(&args.out, "normalized.csv", |w| sys.write_solution_csv(&classical.normalized, w))?;
    }
    if inner != InnerArg::Classical {
        let settings = vqls_settings(vqls, seed);
        let operator = match &sys.split {
            Some(split) => {
                let (d1, d2) = decompose_pipeline(&sys)?;
                Operator::Sigma(d1.add_scaled(split.nu, &d2))
            }
            None => Operator::Sparse(sys.a.clone()),
        };
        let problem = VqlsProblem::new(operator, prepare_b_state(&sys)?, settings.cost_kind)?;
        let ansatz = Ansatz::new(problem.n_qubits(), settings.layers);
        let run = vqls_solve(&problem, &ansatz, &settings.options)?;
        let state = run.final_state.real();
        write_with(&args.out, "vqls_state.csv", |w| run.final_state.write_csv(w))?;
        write_with(&args.out, "vqls_normalized.csv", |w| sys.write_solution_csv(&state, w))?;
        write_with(&args.out, "vqls_log.csv", |w| run.write_log(w))?;
        summary["vqls"] = json!({
            "achieved_cost": run.achieved_cost,
            "iterations": run.iterations,
            "converged": run.converged,
            "restart": run.restart,
        });
        if inner == InnerArg::Both {
            summary["E"] = json!(solution_error_metric(&classical.normalized, &state, &sys.layout)?);
        }
    }
    write_json(&args.out, "summary.json", &summary)
}

fn parse_grid(spec: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("grid {spec:?} is not lo:hi:step")))?;
    match parts[..] {
        [lo, hi, step] => Ok((lo, hi, step)),
        _ => Err(CliError::Usage(format!("grid {spec:?} is not lo:hi:step"))),
    }
}

pub fn invert(args: &SystemArgs, inner: InnerArg, grid: Option<&str>, vqls: &VqlsArgs, seed: u64) -> CliResult {
    let l = load(args)?;
    let burgers: BurgersConfig = match &l.cfg.model {
        Model::Burgers(b) => b.clone(),
        Model::Scalar(_) => return Err(CliError::Usage("invert needs model = burgers".into())),
    };
    let (lo, hi, step) = match grid {
        Some(g) => parse_grid(g)?,
        None => (l.cfg.nu_min, l.cfg.nu_max, l.cfg.nu_step),
    };
    let inner_solver = match inner {
        InnerArg::Classical => InnerSolver::Classical,
        InnerArg::Vqls => InnerSolver::Vqls(vqls_settings(vqls, seed)),
        InnerArg::Both => return Err(CliError::Usage("invert takes --inner classical or vqls".into())),
    };
    let outer = OuterSearch::uniform_grid(lo, hi, step)?;
    let y = measurement_series(&burgers, burgers.nu, l.scheme)?;
    let problem = InverseProblem {
        pipeline: PipelineConfig {
            burgers,
            level: l.level,
            scheme: l.scheme,
            pad: true,
        },
        y,
        nu_range: (lo, hi),
        outer,
        inner: inner_solver,
        normalization: None,
    };
    let result = run_nbvqpco(&problem)?;
    start(
        &args.out,
        "invert",
        &format!("{args:?} {inner:?} {grid:?} {vqls:?}"),
        Some(&args.config),
        seed,
    )?;
    write_with(&args.out, "curve.csv", |w| result.write_csv(w))?;
    let summary = serde_json::to_value(&result).map_err(|e| CliError::Numeric(e.to_string()))?;
    write_json(&args.out, "summary.json", &summary)?;
    let _ = writeln!(std::io::stdout(), "nu_star = {} (design cost {:e})", result.nu_star, result.best_cost);
    Ok(())
}

pub fn bounds(args: &SystemArgs, seed: u64) -> CliResult {
    let l = load(args)?;
    let report = bound_report(
        &l.ode,
        l.level,
        l.cfg.model.horizon(),
        l.cfg.model.n_t(),
        l.cfg.eps,
        l.cfg.alpha,
    )?;
    start(&args.out, "bounds", &format!("{args:?}"), Some(&args.config), seed)?;
    let text = report.to_json();
    std::fs::write(args.out.join("bounds.json"), format!("{text}\n"))?;
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

struct CensusRow {
    n_x: usize,
    n_t: usize,
    level: usize,
    dim: usize,
    sigma: (usize, usize),
    bound: (f64, f64),
    pauli: Option<(usize, usize)>,
}

fn census_row(n_x: usize, n_t: usize, level: usize, pauli_max_dim: usize) -> Result<CensusRow, CliError> {
    let ode = discretize_burgers(&BurgersConfig {
        n_x,
        n_t,
        x_p_index: 1,
        ..BurgersConfig::default()
    })?;
    let cs = build_carleman(&ode, level)?;
    let sys = assemble_system(&cs, 0.35, n_t, Scheme::Backward, true)?;
    let (d1, d2) = decompose_pipeline(&sys)?;
    let split = sys.split.as_ref().expect("Burgers systems carry a split");
    let pauli = if sys.dim() <= pauli_max_dim {
        Some((
            pauli_term_count(&split.a1, pauli_max_dim, 1e-12)?,
            pauli_term_count(&split.a2, pauli_max_dim, 1e-12)?,
        ))
    } else {
        None
    };
    Ok(CensusRow {
        n_x,
        n_t,
        level,
        dim: sys.dim(),
        sigma: (d1.len(), d2.len()),
        bound: (a1_count_bound(n_x, n_t, level), a2_count_bound(n_x, level)),
        pauli,
    })
}

pub fn lcu_census(
    nx_list: &[usize],
    nt_list: &[usize],
    n_list: &[usize],
    pauli_max_dim: usize,
    out: &Path,
    seed: u64,
) -> CliResult {
    let cells: Vec<(usize, usize, usize)> = nx_list
        .iter()
        .flat_map(|&nx| nt_list.iter().flat_map(move |&nt| n_list.iter().map(move |&n| (nx, nt, n))))
        .collect();
    if cells.is_empty() {
        return Err(CliError::Usage("empty census grid".into()));
    }
    let rows: Vec<CensusRow> = cells
        .par_iter()
        .map(|&(nx, nt, n)| census_row(nx, nt, n, pauli_max_dim))
        .collect::<Result<_, _>>()?;
    start(
        out,
        "lcu-census",
        &format!("{nx_list:?} {nt_list:?} {n_list:?} {pauli_max_dim}"),
        None,
        seed,
    )?;
    write_with(out, "lcu_census.csv", |w| {
        writeln!(w, "n_x,n_t,N,dim,sigma_a1,sigma_a2,sigma_total,bound_a1,bound_a2,pauli_a1,pauli_a2,pauli_total")?;
        for r in &rows {
            let pauli = r
                .pauli
                .map(|(a, b)| format!("{a},{b},{}", a + b))
                .unwrap_or_else(|| ",,".into());
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n_x,
                r.n_t,
                r.level,
                r.dim,
                r.sigma.0,
                r.sigma.1,
                r.sigma.0 + r.sigma.1,
                r.bound.0,
                r.bound.1,
                pauli
            )?;
        }
        Ok(())
    })
}
