//! Bi-level design optimization: an outer search over the viscosity wrapped around
//! an inner linear solve (classical or VQLS), scored by a quadratic design cost
//! that only needs the normalized solution.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carleman::build_carleman;
use crate::error::{Error, Result};
use crate::linsys::{assemble, BlockLinearSystem, PadMap, Scheme};
use crate::polyode::{discretize_burgers, integrate_euler, integrate_implicit_euler, BurgersConfig};
use crate::qsim::{prepare_b_state, vqls_solve, Ansatz, CostKind, Operator, StateVector, VqlsOptions, VqlsProblem};
use crate::sigmalcu::{decompose_pipeline, SigmaDecomposition};
use crate::sparse::{dot, norm2, SparseMatrix};

pub type OuterMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `f(w1 ⟨u, H u⟩_T + w2 ⟨u, h⟩_T + offset)` with Riemann-sum time integrals.
///
/// `step_weights[k]` multiplies `h` at time step `k`, which lets the linear term
/// carry a time series such as measured data.
#[derive(Clone)]
pub struct DesignCostSpec {
    pub w1: f64,
    pub w2: f64,
    pub h_matrix: DMatrix<f64>,
    pub h_vec: Vec<f64>,
    pub step_weights: Option<Vec<f64>>,
    pub offset: f64,
    pub outer: Option<OuterMap>,
}

impl std::fmt::Debug for DesignCostSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DesignCostSpec")
            .field("w1", &self.w1)
            .field("w2", &self.w2)
            .field("h_matrix", &self.h_matrix)
            .field("h_vec", &self.h_vec)
            .field("step_weights", &self.step_weights)
            .field("offset", &self.offset)
            .field("outer", &self.outer.as_ref().map(|_| ".."))
            .finish()
    }
}

impl DesignCostSpec {
    /// Normalized probe misfit `(1/T)∫(y − u_p)² dt / u0(x_p)²` written in
    /// quadratic-cost form. `probe` is the 0-based state index.
    pub fn probe_misfit(n_x: usize, probe: usize, y: &[f64], u0_probe: f64, h: f64, horizon: f64) -> Self {
        let mut hm = DMatrix::zeros(n_x, n_x);
        hm[(probe, probe)] = 1.0;
        let mut hv = vec![0.0; n_x];
        hv[probe] = 1.0;
        let scale = 1.0 / (horizon * u0_probe * u0_probe);
        Self {
            w1: scale,
            w2: -2.0 * scale,
            h_matrix: hm,
            h_vec: hv,
            step_weights: Some(y.to_vec()),
            offset: h * scale * dot(y, y),
            outer: None,
        }
    }
}

/// Selection matrices and the derived quadratic/linear forms of the design cost.
#[derive(Clone, Debug)]
pub struct SelectorMatrices {
    /// Picks `u^0` (first `n_x` lifted entries at step 0).
    pub k0: SparseMatrix,
    /// Stacks `u^k` for every time step.
    pub kf: SparseMatrix,
    /// `Kfᵀ (I ⊗ H) Kf`.
    pub phi_f: SparseMatrix,
    /// `K0ᵀ K0`.
    pub phi_0: SparseMatrix,
    /// `(c ⊗ h)ᵀ Kf` with `c` the step weights (ones by default).
    pub phi_vec: Vec<f64>,
}

pub fn build_selectors(layout: &PadMap, n_x: usize, spec: &DesignCostSpec) -> Result<SelectorMatrices> {
    if spec.h_matrix.shape() != (n_x, n_x) || spec.h_vec.len() != n_x {
        return Err(Error::DimensionMismatch(format!("design cost forms must be sized for n_x = {n_x}")));
    }
    if n_x > layout.n_c {
        return Err(Error::DimensionMismatch("n_x exceeds the lifted dimension".into()));
    }
    let steps = layout.n_steps;
    if let Some(c) = &spec.step_weights {
        if c.len() != steps {
            return Err(Error::DimensionMismatch(format!(
                "{} step weights for {steps} time steps",
                c.len()
            )));
        }
    }
    let dim = layout.dim();
    let k0 = SparseMatrix::from_triplets(n_x, dim, (0..n_x).map(|j| (j, layout.position(0, j), 1.0)));
    let kf = SparseMatrix::from_triplets(
        n_x * steps,
        dim,
        (0..steps).flat_map(|k| (0..n_x).map(move |j| (k * n_x + j, layout.position(k, j), 1.0))),
    );
    let mut hf = Vec::new();
    let mut lin = vec![0.0; n_x * steps];
    for k in 0..steps {
        let c = spec.step_weights.as_ref().map_or(1.0, |w| w[k]);
        for i in 0..n_x {
            lin[k * n_x + i] = c * spec.h_vec[i];
            for j in 0..n_x {
                hf.push((k * n_x + i, k * n_x + j, spec.h_matrix[(i, j)]));
            }
        }
    }
    let block_h = SparseMatrix::from_triplets(n_x * steps, n_x * steps, hf);
    let kf_t = kf.transpose();
    let phi_f = sparse_product(&kf_t, &sparse_product(&block_h, &kf));
    let phi_0 = sparse_product(&k0.transpose(), &k0);
    let phi_vec = kf.transpose_matvec(&lin);
    Ok(SelectorMatrices {
        k0,
        kf,
        phi_f,
        phi_0,
        phi_vec,
    })
}

fn sparse_product(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    let mut t = Vec::new();
    for r in 0..a.nrows() {
        for (k, av) in a.row(r) {
            for (c, bv) in b.row(k) {
                t.push((r, c, av * bv));
            }
        }
    }
    SparseMatrix::from_triplets(a.nrows(), b.ncols(), t)
}

/// How the scale of the unnormalized solution is recovered from a normalized state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// Matches the step-0 block to the known initial state (norm and sign).
    InitialNorm { u0: Vec<f64> },
    /// Matches entry `index` of `u^0` to the known value `u0(x_p)`.
    ProbeValue { index: usize, value: f64 },
}

impl Normalization {
    fn scale(&self, state: &[f64], sel: &SelectorMatrices) -> Result<f64> {
        let first = sel.k0.matvec(state);
        match self {
            Normalization::InitialNorm { u0 } => {
                let q0 = dot(&first, &first);
                if !(q0 > 0.0) {
                    return Err(Error::DegenerateNormalization("initial block of the state vanishes".into()));
                }
                let sign = if dot(u0, &first) < 0.0 { -1.0 } else { 1.0 };
                Ok(sign * norm2(u0) / q0.sqrt())
            }
            Normalization::ProbeValue { index, value } => {
                let p = *first
                    .get(*index)
                    .ok_or_else(|| Error::InvalidArgument(format!("probe index {index} out of range")))?;
                if p == 0.0 {
                    return Err(Error::DegenerateNormalization("probe entry of the state is zero".into()));
                }
                Ok(value / p)
            }
        }
    }
}

/// Design cost of a normalized solution. Only ratios of forms in the state enter,
/// so the value does not depend on the solution's scale.
pub fn design_cost(
    state: &[f64],
    sel: &SelectorMatrices,
    spec: &DesignCostSpec,
    normalization: &Normalization,
    h: f64,
) -> Result<f64> {
    if state.len() != sel.k0.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} entries, selectors expect {}",
            state.len(),
            sel.k0.ncols()
        )));
    }
    let s = normalization.scale(state, sel)?;
    let quad = dot(state, &sel.phi_f.matvec(state));
    let lin = dot(&sel.phi_vec, state);
    let inner = spec.offset + spec.w1 * h * s * s * quad + spec.w2 * h * s * lin;
    Ok(spec.outer.as_ref().map_or(inner, |f| f(inner)))
}

/// Mean over time steps of `‖a_k − b_k‖` between two normalized solutions, with `b`
/// sign-aligned to `a`. Blocks are whole slots, padding included.
pub fn solution_error_metric(reference: &[f64], other: &[f64], layout: &PadMap) -> Result<f64> {
    if reference.len() != layout.dim() || other.len() != layout.dim() {
        return Err(Error::DimensionMismatch("solutions must match the layout".into()));
    }
    let sign = if dot(reference, other) < 0.0 { -1.0 } else { 1.0 };
    let s = layout.slot;
    let total: f64 = (0..layout.n_steps)
        .map(|k| {
            let r = k * s..(k + 1) * s;
            reference[r.clone()]
                .iter()
                .zip(&other[r])
                .map(|(a, b)| (a - sign * b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / layout.n_steps as f64)
}

/// Probe values `u_p(k Δt)`, `k = 0..n_t`, from Euler stepping (explicit or
/// implicit per `scheme`) of the nonlinear Burgers system at viscosity `nu`.
pub fn measurement_series(cfg: &BurgersConfig, nu: f64, scheme: Scheme) -> Result<Vec<f64>> {
    let ode = discretize_burgers(&BurgersConfig {
        nu,
        ..cfg.clone()
    })?;
    let p = cfg.x_p_index - 1;
    let traj = match scheme {
        Scheme::Forward => integrate_euler(&ode, cfg.horizon, cfg.n_t - 1)?,
        Scheme::Backward => integrate_implicit_euler(&ode, cfg.horizon, cfg.n_t - 1)?,
    };
    Ok(traj.into_iter().map(|u| u[p]).collect())
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub burgers: BurgersConfig,
    pub level: usize,
    pub scheme: Scheme,
    pub pad: bool,
}

/// Stacked system assembled once, re-parameterized as `Ã₁ + ν Ã₂`.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    base: BlockLinearSystem,
    a1: SparseMatrix,
    a2: SparseMatrix,
    sigma: Option<(SigmaDecomposition, SigmaDecomposition)>,
    u0: Vec<f64>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let ode = discretize_burgers(&config.burgers)?;
        let sys = build_carleman(&ode, config.level)?;
        let base = assemble(&sys, config.burgers.horizon, config.burgers.n_t, config.scheme, config.pad)?;
        let split = base.split.as_ref().ok_or(Error::MissingSplit("pipeline"))?;
        let (a1, a2) = (split.a1.clone(), split.a2.clone());
        let sigma = if config.pad {
            Some(decompose_pipeline(&base)?)
        } else {
            None
        };
        Ok(Self {
            u0: ode.u0().to_vec(),
            config,
            base,
            a1,
            a2,
            sigma,
        })
    }

    pub fn layout(&self) -> &PadMap {
        &self.base.layout
    }

    pub fn h(&self) -> f64 {
        self.base.h
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.u0
    }

    /// The stacked system at viscosity `nu`.
    pub fn system_at(&self, nu: f64) -> BlockLinearSystem {
        let mut sys = self.base.clone();
        sys.a = self.a1.add_scaled(nu, &self.a2);
        if let Some(s) = sys.split.as_mut() {
            s.nu = nu;
        }
        sys
    }

    /// Sigma-word decomposition of `Ã(nu)` from the precomputed split.
    pub fn sigma_at(&self, nu: f64) -> Option<SigmaDecomposition> {
        self.sigma.as_ref().map(|(d1, d2)| d1.add_scaled(nu, d2))
    }

    pub fn sigma_split(&self) -> Option<&(SigmaDecomposition, SigmaDecomposition)> {
        self.sigma.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqlsSettings {
    pub options: VqlsOptions,
    pub layers: usize,
    pub cost_kind: CostKind,
    /// Apply `Ã` through its sigma-word sum rather than the sparse matrix.
    pub use_sigma: bool,
}

impl Default for VqlsSettings {
    fn default() -> Self {
        Self {
            options: VqlsOptions::default(),
            layers: Ansatz::DEFAULT_LAYERS,
            cost_kind: CostKind::Local,
            use_sigma: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerSolver {
    Classical,
    Vqls(VqlsSettings),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OuterSearch {
    Grid { points: Vec<f64> },
    NelderMead { start: f64, step: f64, xtol: f64, max_iter: usize },
}

impl OuterSearch {
    /// `lo, lo + step, …` up to `hi` inclusive, rounded to suppress accumulation error.
    pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(hi >= lo) {
            return Err(Error::InvalidArgument("grid needs step > 0 and hi >= lo".into()));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        let points = (0..=n).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect();
        Ok(OuterSearch::Grid { points })
    }
}

#[derive(Clone, Debug)]
pub struct InverseProblem {
    pub pipeline: PipelineConfig,
    /// Measured probe series over the `n_t` time points.
    pub y: Vec<f64>,
    pub nu_range: (f64, f64),
    pub outer: OuterSearch,
    pub inner: InnerSolver,
    pub normalization: Option<Normalization>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub nu: f64,
    pub design_cost: Option<f64>,
    /// Achieved VQLS cost (VQLS inner solver only).
    pub inner_cost: Option<f64>,
    /// Solution error against the classical solve (VQLS inner solver only).
    pub solution_error: Option<f64>,
    pub failure: Option<String>,
    #[serde(skip)]
    pub state: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InversionResult {
    pub nu_star: f64,
    pub best_cost: f64,
    /// Evaluated points sorted by `nu`.
    pub points: Vec<GridPoint>,
}

impl InversionResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "nu,design_cost,inner_cost_achieved,E")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for p in &self.points {
            writeln!(
                w,
                "{:e},{},{},{}",
                p.nu,
                opt(p.design_cost),
                opt(p.inner_cost),
                opt(p.solution_error)
            )?;
        }
        Ok(())
    }
}

/// Evaluates one candidate viscosity: assemble, solve, score.
pub struct Evaluator<'a> {
    pub pipeline: &'a Pipeline,
    pub selectors: SelectorMatrices,
    pub spec: DesignCostSpec,
    pub normalization: Normalization,
    pub inner: &'a InnerSolver,
    b_state: Option<StateVector>,
}

impl<'a> Evaluator<'a> {
    pub fn new(pipeline: &'a Pipeline, y: &[f64], inner: &'a InnerSolver, normalization: Option<Normalization>) -> Result<Self> {
        let cfg = &pipeline.config.burgers;
        let layout = pipeline.layout();
        if y.len() != layout.n_steps {
            return Err(Error::DimensionMismatch(format!(
                "{} measurements for {} time points",
                y.len(),
                layout.n_steps
            )));
        }
        let p = cfg.x_p_index - 1;
        let u0p = pipeline.initial_state()[p];
        let spec = DesignCostSpec::probe_misfit(cfg.n_x, p, y, u0p, pipeline.h(), cfg.horizon);
        let selectors = build_selectors(layout, cfg.n_x, &spec)?;
        let normalization = normalization.unwrap_or(Normalization::ProbeValue { index: p, value: u0p });
        let b_state = match inner {
            InnerSolver::Classical => None,
            InnerSolver::Vqls(_) => Some(prepare_b_state(&pipeline.system_at(cfg.nu))?),
        };
        Ok(Self {
            pipeline,
            selectors,
            spec,
            normalization,
            inner,
            b_state,
        })
    }

    pub fn evaluate(&self, nu: f64) -> GridPoint {
        let mut point = GridPoint {
            nu,
            design_cost: None,
            inner_cost: None,
            solution_error: None,
            failure: None,
            state: None,
        };
        if let Err(e) = self.fill(nu, &mut point) {
            point.failure = Some(e.to_string());
        }
        point
    }

    fn fill(&self, nu: f64, point: &mut GridPoint) -> Result<()> {
        let sys = self.pipeline.system_at(nu);
        let classical = sys.solve_direct()?;
        let state = match self.inner {
            InnerSolver::Classical => classical.normalized,
            InnerSolver::Vqls(settings) => {
                let operator = match (settings.use_sigma, self.pipeline.sigma_at(nu)) {
                    (true, Some(d)) => Operator::Sigma(d),
                    _ => Operator::Sparse(sys.a.clone()),
                };
                let b = self.b_state.clone().expect("prepared for VQLS");
                let problem = VqlsProblem::new(operator, b, settings.cost_kind)?;
                let ansatz = Ansatz::new(problem.n_qubits(), settings.layers);
                let run = vqls_solve(&problem, &ansatz, &settings.options)?;
                let state = run.final_state.real();
                point.inner_cost = Some(run.achieved_cost);
                point.solution_error = Some(solution_error_metric(&classical.normalized, &state, &sys.layout)?);
                state
            }
        };
        point.design_cost = Some(design_cost(&state, &self.selectors, &self.spec, &self.normalization, sys.h)?);
        point.state = Some(state);
        Ok(())
    }
}

/// Runs the outer search. Grid points are evaluated in parallel on the current
/// rayon pool; failed points are recorded and skipped by the argmin.
pub fn run_nbvqpco(problem: &InverseProblem) -> Result<InversionResult> {
    let (lo, hi) = problem.nu_range;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty viscosity range [{lo}, {hi}]")));
    }
    let pipeline = Pipeline::new(problem.pipeline.clone())?;
    let eval = Evaluator::new(&pipeline, &problem.y, &problem.inner, problem.normalization.clone())?;
    let mut points = match &problem.outer {
        OuterSearch::Grid { points } => {
            if points.is_empty() {
                return Err(Error::InvalidArgument("empty grid".into()));
            }
            if let Some(p) = points.iter().find(|p| !(lo..=hi).contains(*p)) {
                return Err(Error::InvalidArgument(format!("grid point {p} outside [{lo}, {hi}]")));
            }
            points.par_iter().map(|&nu| eval.evaluate(nu)).collect::<Vec<_>>()
        }
        OuterSearch::NelderMead {
            start,
            step,
            xtol,
            max_iter,
        } => {
            let seen = std::sync::Mutex::new(Vec::new());
            let objective = |x: &[f64]| {
                let nu = x[0].clamp(lo, hi);
                let p = eval.evaluate(nu);
                let c = p.design_cost.unwrap_or(f64::INFINITY);
                seen.lock().expect("not poisoned").push(p);
                c
            };
            nelder_mead(objective, &[start.clamp(lo, hi)], *step, *xtol, *max_iter);
            seen.into_inner().expect("not poisoned")
        }
    };
    points.sort_by(|a, b| a.nu.total_cmp(&b.nu));
    points.dedup_by(|a, b| a.nu == b.nu);
    let best = points
        .iter()
        .filter_map(|p| p.design_cost.map(|c| (p.nu, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .ok_or_else(|| Error::InvalidArgument("every candidate failed".into()))?;
    Ok(InversionResult {
        nu_star: best.0,
        best_cost: best.1,
        points,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Derivative-free simplex minimization; stops when every vertex lies within
/// `xtol` of the best one (in each coordinate) or after `max_iter` iterations.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: f64, xtol: f64, max_iter: usize) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut iterations = 0;
    while iterations < max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        if spread <= xtol {
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, v) in simplex[1..].iter_mut() {
                    for (xi, bi) in x.iter_mut().zip(&best) {
                        *xi = bi + 0.5 * (*xi - bi);
                    }
                    *v = f(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult { x, value, iterations }
}
