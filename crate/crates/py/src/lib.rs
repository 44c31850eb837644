//! Python bindings: Burgers instances, stacked systems, VQLS solves,
//! viscosity inversion and bound reports.

use nbvqpco_core::bounds::bound_report;
use nbvqpco_core::carleman::build_carleman;
use nbvqpco_core::config::RunConfig;
use nbvqpco_core::invopt::{
    measurement_series, run_nbvqpco, solution_error_metric, InnerSolver, InverseProblem, OuterSearch, PipelineConfig,
    VqlsSettings,
};
use nbvqpco_core::linsys::{assemble, BlockLinearSystem, Scheme};
use nbvqpco_core::polyode::{discretize_burgers, BurgersConfig};
use nbvqpco_core::qsim::{prepare_b_state, vqls_solve as core_vqls_solve, Ansatz, CostKind, Operator, VqlsOptions, VqlsProblem};
use nbvqpco_core::sigmalcu::decompose_pipeline;
use nbvqpco_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::NotPowerOfTwo { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_scheme(s: &str) -> PyResult<Scheme> {
    s.parse().map_err(|_| PyValueError::new_err(format!("unknown scheme {s:?}")))
}

/// Viscous Burgers instance on a uniform periodic grid.
#[pyclass(name = "Burgers")]
#[derive(Clone)]
struct PyBurgers {
    inner: BurgersConfig,
}

#[pymethods]
impl PyBurgers {
    #[new]
    #[pyo3(signature = (length=0.5, horizon=0.35, n_x=4, n_t=8, nu=0.07, x_p_index=2))]
    fn new(length: f64, horizon: f64, n_x: usize, n_t: usize, nu: f64, x_p_index: usize) -> PyResult<Self> {
        let inner = BurgersConfig {
            length,
            horizon,
            n_x,
            n_t,
            nu,
            x_p_index,
            ..BurgersConfig::default()
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.nu
    }

    #[getter]
    fn n_x(&self) -> usize {
        self.inner.n_x
    }

    #[getter]
    fn n_t(&self) -> usize {
        self.inner.n_t
    }

    fn initial_state(&self) -> Vec<f64> {
        self.inner.initial_state()
    }

    /// Dense `F1` and `F2` of the semi-discrete system.
    fn matrices(&self) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let ode = discretize_burgers(&self.inner).map_err(py_err)?;
        Ok((dense_rows(ode.f1()), dense_rows(ode.f2())))
    }

    /// Probe-point measurements at viscosity `nu`.
    #[pyo3(signature = (nu, scheme="backward"))]
    fn measurements(&self, nu: f64, scheme: &str) -> PyResult<Vec<f64>> {
        measurement_series(&self.inner, nu, parse_scheme(scheme)?).map_err(py_err)
    }

    /// Stacked Euler system at truncation `level`.
    #[pyo3(signature = (level=1, scheme="backward", pad=true))]
    fn system(&self, level: usize, scheme: &str, pad: bool) -> PyResult<LinearSystem> {
        let ode = discretize_burgers(&self.inner).map_err(py_err)?;
        let cs = build_carleman(&ode, level).map_err(py_err)?;
        let sys = assemble(&cs, self.inner.horizon, self.inner.n_t, parse_scheme(scheme)?, pad).map_err(py_err)?;
        Ok(LinearSystem { inner: sys })
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Burgers(length={}, horizon={}, n_x={}, n_t={}, nu={}, x_p_index={})",
            c.length, c.horizon, c.n_x, c.n_t, c.nu, c.x_p_index
        )
    }
}

fn dense_rows(m: &nbvqpco_core::sparse::SparseMatrix) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; m.ncols()]; m.nrows()];
    for (i, j, v) in m.iter() {
        rows[i][j] += v;
    }
    rows
}

/// Stacked Euler system `A w = b`.
#[pyclass]
struct LinearSystem {
    inner: BlockLinearSystem,
}

#[pymethods]
impl LinearSystem {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_qubits(&self) -> PyResult<u32> {
        self.inner.n_qubits().map_err(py_err)
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        dense_rows(&self.inner.a)
    }

    fn rhs(&self) -> Vec<f64> {
        self.inner.b.clone()
    }

    /// Direct solve; returns `(w, w / |w|)`.
    fn solve(&self) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = self.inner.solve_direct().map_err(py_err)?;
        Ok((s.w, s.normalized))
    }

    fn condition_number(&self) -> PyResult<f64> {
        self.inner.condition_number().map_err(py_err)
    }

    /// Sigma-basis term counts of the two halves of the viscosity split.
    fn sigma_counts(&self) -> PyResult<(usize, usize)> {
        let (d1, d2) = decompose_pipeline(&self.inner).map_err(py_err)?;
        Ok((d1.len(), d2.len()))
    }

    /// Runs VQLS on the system; the result dict also carries the error
    /// metric against the direct solve.
    #[pyo3(signature = (layers=3, max_iter=200, step=0.8, restarts=3, seed=0, cost="local"))]
    fn vqls<'py>(
        &self,
        py: Python<'py>,
        layers: usize,
        max_iter: usize,
        step: f64,
        restarts: usize,
        seed: u64,
        cost: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let settings = vqls_settings(layers, max_iter, step, restarts, seed, cost)?;
        let sys = &self.inner;
        let (run, error) = py
            .allow_threads(|| -> Result<_, Error> {
                let operator = match &sys.split {
                    Some(split) => {
                        let (d1, d2) = decompose_pipeline(sys)?;
                        Operator::Sigma(d1.add_scaled(split.nu, &d2))
                    }
                    None => Operator::Sparse(sys.a.clone()),
                };
                let problem = VqlsProblem::new(operator, prepare_b_state(sys)?, settings.cost_kind)?;
                let ansatz = Ansatz::new(problem.n_qubits(), settings.layers);
                let run = core_vqls_solve(&problem, &ansatz, &settings.options)?;
                let reference = sys.solve_direct()?;
                let error = solution_error_metric(&reference.normalized, &run.final_state.real(), &sys.layout)?;
                Ok((run, error))
            })
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("state", run.final_state.real())?;
        d.set_item("achieved_cost", run.achieved_cost)?;
        d.set_item("iterations", run.iterations)?;
        d.set_item("converged", run.converged)?;
        d.set_item("cost_trace", run.cost_trace)?;
        d.set_item("error", error)?;
        Ok(d)
    }
}

fn vqls_settings(layers: usize, max_iter: usize, step: f64, restarts: usize, seed: u64, cost: &str) -> PyResult<VqlsSettings> {
    let cost_kind: CostKind = cost.parse().map_err(|_| PyValueError::new_err(format!("unknown cost {cost:?}")))?;
    Ok(VqlsSettings {
        options: VqlsOptions {
            max_iter,
            step,
            restarts,
            seed,
            ..VqlsOptions::default()
        },
        layers,
        cost_kind,
        use_sigma: true,
    })
}

/// Grid search for the viscosity that best explains probe measurements
/// generated at `burgers.nu`.
#[pyfunction]
#[pyo3(signature = (burgers, level=1, scheme="backward", grid=(0.01, 0.15, 0.01), inner="classical", layers=3, max_iter=200, step=0.8, restarts=3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn invert<'py>(
    py: Python<'py>,
    burgers: &PyBurgers,
    level: usize,
    scheme: &str,
    grid: (f64, f64, f64),
    inner: &str,
    layers: usize,
    max_iter: usize,
    step: f64,
    restarts: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let scheme = parse_scheme(scheme)?;
    let inner = match inner {
        "classical" => InnerSolver::Classical,
        "vqls" => InnerSolver::Vqls(vqls_settings(layers, max_iter, step, restarts, seed, "local")?),
        other => return Err(PyValueError::new_err(format!("unknown inner solver {other:?}"))),
    };
    let cfg = burgers.inner.clone();
    let result = py
        .allow_threads(|| -> Result<_, Error> {
            let y = measurement_series(&cfg, cfg.nu, scheme)?;
            run_nbvqpco(&InverseProblem {
                pipeline: PipelineConfig {
                    burgers: cfg.clone(),
                    level,
                    scheme,
                    pad: true,
                },
                y,
                nu_range: (grid.0, grid.1),
                outer: OuterSearch::uniform_grid(grid.0, grid.1, grid.2)?,
                inner,
                normalization: None,
            })
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("nu_star", result.nu_star)?;
    d.set_item("best_cost", result.best_cost)?;
    d.set_item("nu", result.points.iter().map(|p| p.nu).collect::<Vec<_>>())?;
    d.set_item("design_cost", result.points.iter().map(|p| p.design_cost).collect::<Vec<_>>())?;
    Ok(d)
}

/// Error and complexity bound report for a `key = value` config, as JSON text.
#[pyfunction]
fn bounds_report(config_text: &str) -> PyResult<String> {
    let cfg = RunConfig::parse(config_text).map_err(py_err)?;
    let ode = cfg.model.ode().map_err(py_err)?;
    let report = bound_report(&ode, cfg.level, cfg.model.horizon(), cfg.model.n_t(), cfg.eps, cfg.alpha).map_err(py_err)?;
    Ok(report.to_json())
}

#[pymodule]
fn nbvqpco(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBurgers>()?;
    m.add_class::<LinearSystem>()?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(bounds_report, m)?)?;
    Ok(())
}
