//! Exact statevector simulation of the variational linear-solver loop: amplitude
//! encoding, a layered real ansatz, global/local costs with adjoint gradients and an
//! Adagrad driver.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use crate::carleman::lift_state;
use crate::error::{Error, Result};
use crate::linsys::{BlockLinearSystem, PadMap};
use crate::sigmalcu::SigmaDecomposition;
use crate::sparse::{dot, norm2, spectral_norm, SparseMatrix};

const UNIT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Normalizes a real vector of power-of-two length.
    pub fn from_real(v: &[f64]) -> Result<Self> {
        if !v.len().is_power_of_two() {
            return Err(Error::NotPowerOfTwo {
                what: "state length",
                value: v.len(),
            });
        }
        let n = norm2(v);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateNormalization("zero or non-finite state".into()));
        }
        Ok(Self {
            amplitudes: v.iter().map(|x| Complex64::new(x / n, 0.0)).collect(),
        })
    }

    pub fn zero_state(n_qubits: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn n_qubits(&self) -> usize {
        self.amplitudes.len().trailing_zeros() as usize
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Real parts of the amplitudes.
    pub fn real(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.re).collect()
    }

    pub fn max_imag(&self) -> f64 {
        self.amplitudes.iter().fold(0.0_f64, |m, a| m.max(a.im.abs()))
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,re,im")?;
        for (i, a) in self.amplitudes.iter().enumerate() {
            writeln!(w, "{i},{:e},{:e}", a.re, a.im)?;
        }
        Ok(())
    }
}

/// Trace distance `sqrt(1 − |⟨a|b⟩|²)` between pure states.
pub fn trace_distance(a: &StateVector, b: &StateVector) -> f64 {
    (1.0 - a.inner(b).norm_sqr()).max(0.0).sqrt()
}

/// Euclidean distance `‖a − b‖`.
pub fn euclidean_distance(a: &StateVector, b: &StateVector) -> f64 {
    a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn ry_pair(c: f64, s: f64, a: f64, b: f64) -> (f64, f64) {
    (c * a - s * b, s * a + c * b)
}

/// Real amplitude encoding by a binary tree of uniformly controlled Y rotations.
///
/// The tree spans only the low qubits needed to address the support of the target;
/// the remaining high qubits are left untouched, so `U_b = I ⊗ U`. Level `q`
/// rotates tree qubit `q` (most significant first) conditioned on the tree qubits
/// above it.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeEncoder {
    n_qubits: usize,
    tree_qubits: usize,
    angles: Vec<Vec<f64>>,
}

impl AmplitudeEncoder {
    pub fn new(target: &[f64]) -> Result<Self> {
        let state = StateVector::from_real(target)?;
        let v = state.real();
        let n_qubits = state.n_qubits();
        let support = v.iter().rposition(|x| *x != 0.0).map_or(1, |i| i + 1);
        let n = support.next_power_of_two().trailing_zeros() as usize;
        let v = &v[..1 << n];
        // norms[k] holds subtree norms at depth k
        let mut norms: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        norms[n] = v.iter().map(|x| x.abs()).collect();
        for k in (0..n).rev() {
            norms[k] = norms[k + 1]
                .chunks(2)
                .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
                .collect();
        }
        let mut angles = Vec::with_capacity(n);
        for q in 0..n {
            let level: Vec<f64> = (0..1usize << q)
                .map(|p| {
                    if q + 1 == n {
                        2.0 * v[2 * p + 1].atan2(v[2 * p])
                    } else {
                        2.0 * norms[q + 1][2 * p + 1].atan2(norms[q + 1][2 * p])
                    }
                })
                .collect();
            angles.push(level);
        }
        Ok(Self {
            n_qubits,
            tree_qubits: n,
            angles,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Low qubits spanned by the rotation tree.
    pub fn tree_qubits(&self) -> usize {
        self.tree_qubits
    }

    fn level(&self, x: &mut [f64], q: usize, sign: f64) {
        let block = 1usize << (self.tree_qubits - q);
        let half = block / 2;
        for chunk in x.chunks_mut(1 << self.tree_qubits) {
            for (p, &theta) in self.angles[q].iter().enumerate() {
                let (s, c) = (sign * theta / 2.0).sin_cos();
                let base = p * block;
                for j in 0..half {
                    let (a, b) = ry_pair(c, s, chunk[base + j], chunk[base + half + j]);
                    chunk[base + j] = a;
                    chunk[base + half + j] = b;
                }
            }
        }
    }

    /// `U_b x`.
    pub fn apply(&self, x: &mut [f64]) {
        for q in 0..self.tree_qubits {
            self.level(x, q, 1.0);
        }
    }

    /// `U_b† x`.
    pub fn apply_adjoint(&self, x: &mut [f64]) {
        for q in (0..self.tree_qubits).rev() {
            self.level(x, q, -1.0);
        }
    }

    /// `U_b |0…0⟩`.
    pub fn prepare(&self) -> Vec<f64> {
        let mut x = vec![0.0; 1 << self.n_qubits];
        x[0] = 1.0;
        self.apply(&mut x);
        x
    }
}

/// `(1/√N)(0, u0, u0^[2], …, u0^[N])` on the padded slot register, prepared by
/// amplitude encoding.
pub fn prepare_w0_state(u0: &[f64], level: usize) -> Result<StateVector> {
    if !u0.len().is_power_of_two() {
        return Err(Error::NotPowerOfTwo {
            what: "n_x",
            value: u0.len(),
        });
    }
    if (norm2(u0) - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidArgument(format!(
            "initial state must have unit norm, got {}",
            norm2(u0)
        )));
    }
    let w = lift_state(u0, level);
    let layout = PadMap::padded(w.len(), 1)?;
    let mut target = vec![0.0; layout.slot];
    target[layout.step_range(0)].copy_from_slice(&w);
    let enc = AmplitudeEncoder::new(&target)?;
    StateVector::from_real(&enc.prepare())
}

/// `|b̃⟩` for a forcing-free padded system: the initial-slot state with the time
/// qubits in `|0⟩`.
pub fn prepare_b_state(sys: &BlockLinearSystem) -> Result<StateVector> {
    if !sys.forcing_free {
        return Err(Error::InvalidArgument(
            "state preparation path requires zero forcing; normalize b̃ directly".into(),
        ));
    }
    if !sys.layout.is_padded() {
        return Err(Error::InvalidArgument("state preparation needs a padded layout".into()));
    }
    let u0 = &sys.b[sys.layout.step_range(0)][..sys.n_x];
    let slot_state = prepare_w0_state(u0, sys.level)?;
    let mut amps = vec![0.0; sys.dim()];
    amps[..sys.layout.slot].copy_from_slice(&slot_state.real());
    StateVector::from_real(&amps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Gate {
    Ry { wire: usize, param: usize },
    Cz(usize, usize),
}

/// Layered real ansatz: each layer applies `RY` to every wire followed by a ring of
/// `CZ` gates between neighbouring wires; a final `RY` layer closes the circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct Ansatz {
    n_qubits: usize,
    n_layers: usize,
    gates: Vec<Gate>,
}

impl Ansatz {
    pub const DEFAULT_LAYERS: usize = 3;

    pub fn new(n_qubits: usize, n_layers: usize) -> Self {
        let mut gates = Vec::new();
        let mut param = 0;
        for _ in 0..n_layers {
            for wire in 0..n_qubits {
                gates.push(Gate::Ry { wire, param });
                param += 1;
            }
            for wire in 0..n_qubits.saturating_sub(1) {
                gates.push(Gate::Cz(wire, wire + 1));
            }
            if n_qubits > 2 {
                gates.push(Gate::Cz(n_qubits - 1, 0));
            }
        }
        for wire in 0..n_qubits {
            gates.push(Gate::Ry { wire, param });
            param += 1;
        }
        Self {
            n_qubits,
            n_layers,
            gates,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_params(&self) -> usize {
        self.n_qubits * (self.n_layers + 1)
    }

    fn bit(&self, wire: usize) -> usize {
        1 << (self.n_qubits - 1 - wire)
    }

    fn apply_ry(&self, x: &mut [f64], wire: usize, theta: f64) {
        let (s, c) = (theta / 2.0).sin_cos();
        let m = self.bit(wire);
        for i in 0..x.len() {
            if i & m == 0 {
                let (a, b) = ry_pair(c, s, x[i], x[i | m]);
                x[i] = a;
                x[i | m] = b;
            }
        }
    }

    /// `d/dθ RY(θ)` applied in place.
    fn apply_dry(&self, x: &mut [f64], wire: usize, theta: f64) {
        let (s, c) = (theta / 2.0).sin_cos();
        let m = self.bit(wire);
        for i in 0..x.len() {
            if i & m == 0 {
                let (a, b) = (x[i], x[i | m]);
                x[i] = 0.5 * (-s * a - c * b);
                x[i | m] = 0.5 * (c * a - s * b);
            }
        }
    }

    fn apply_cz(&self, x: &mut [f64], a: usize, b: usize) {
        let m = self.bit(a) | self.bit(b);
        for (i, v) in x.iter_mut().enumerate() {
            if i & m == m {
                *v = -*v;
            }
        }
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "ansatz takes {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        Ok(())
    }

    /// `V(θ)|0…0⟩` as a real vector.
    pub fn apply_real(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let mut x = vec![0.0; 1 << self.n_qubits];
        x[0] = 1.0;
        for g in &self.gates {
            match *g {
                Gate::Ry { wire, param } => self.apply_ry(&mut x, wire, theta[param]),
                Gate::Cz(a, b) => self.apply_cz(&mut x, a, b),
            }
        }
        Ok(x)
    }

    pub fn apply(&self, theta: &[f64]) -> Result<StateVector> {
        StateVector::from_real(&self.apply_real(theta)?)
    }

    /// `∂⟨g, V(θ)|0⟩⟩ / ∂θ` by a reverse sweep, given `g = ∂C/∂ψ` at `ψ = V(θ)|0⟩`.
    fn pullback(&self, theta: &[f64], psi: &[f64], g: &[f64]) -> Vec<f64> {
        let mut state = psi.to_vec();
        let mut lambda = g.to_vec();
        let mut grad = vec![0.0; self.n_params()];
        for gate in self.gates.iter().rev() {
            match *gate {
                Gate::Ry { wire, param } => {
                    self.apply_ry(&mut state, wire, -theta[param]);
                    let mut mu = state.clone();
                    self.apply_dry(&mut mu, wire, theta[param]);
                    grad[param] += dot(&lambda, &mu);
                    self.apply_ry(&mut lambda, wire, -theta[param]);
                }
                Gate::Cz(a, b) => {
                    self.apply_cz(&mut state, a, b);
                    self.apply_cz(&mut lambda, a, b);
                }
            }
        }
        grad
    }
}

/// Matrix of the linear system, either sparse or as a sigma-word sum.
#[derive(Clone, Debug)]
pub enum Operator {
    Sparse(SparseMatrix),
    Sigma(SigmaDecomposition),
}

impl Operator {
    pub fn dim(&self) -> usize {
        match self {
            Operator::Sparse(m) => m.nrows(),
            Operator::Sigma(d) => d.dim(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Operator::Sparse(m) => m.matvec(x),
            Operator::Sigma(d) => d.apply(x),
        }
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Operator::Sparse(m) => m.transpose_matvec(x),
            Operator::Sigma(d) => d.apply_transpose(x),
        }
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        match self {
            Operator::Sparse(m) => m.clone(),
            Operator::Sigma(d) => d.to_sparse(),
        }
    }

    /// Spectral norm (dense).
    pub fn norm(&self) -> f64 {
        spectral_norm(&self.to_sparse().to_dense())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    GlobalUnnormalized,
    Global,
    LocalUnnormalized,
    Local,
}

impl std::str::FromStr for CostKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "global_unnormalized" => CostKind::GlobalUnnormalized,
            "global" => CostKind::Global,
            "local_unnormalized" => CostKind::LocalUnnormalized,
            "local" => CostKind::Local,
            other => return Err(Error::InvalidArgument(format!("unknown cost '{other}'"))),
        })
    }
}

/// All four cost values for one trial state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Costs {
    pub global_unnormalized: f64,
    pub global: f64,
    pub local_unnormalized: f64,
    pub local: f64,
}

impl Costs {
    pub fn get(&self, kind: CostKind) -> f64 {
        match kind {
            CostKind::GlobalUnnormalized => self.global_unnormalized,
            CostKind::Global => self.global,
            CostKind::LocalUnnormalized => self.local_unnormalized,
            CostKind::Local => self.local,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VqlsProblem {
    pub operator: Operator,
    pub b_state: StateVector,
    pub cost_kind: CostKind,
    encoder: AmplitudeEncoder,
    b: Vec<f64>,
}

impl VqlsProblem {
    pub fn new(operator: Operator, b_state: StateVector, cost_kind: CostKind) -> Result<Self> {
        if operator.dim() != b_state.amplitudes().len() {
            return Err(Error::DimensionMismatch(format!(
                "operator dimension {} vs state length {}",
                operator.dim(),
                b_state.amplitudes().len()
            )));
        }
        if b_state.max_imag() > 0.0 {
            return Err(Error::InvalidArgument("right-hand state must be real".into()));
        }
        let b = b_state.real();
        let encoder = AmplitudeEncoder::new(&b)?;
        Ok(Self {
            operator,
            b_state,
            cost_kind,
            encoder,
            b,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.b_state.n_qubits()
    }

    /// Prepares `U_b |0⟩`, which equals `|b̃⟩` up to rounding.
    pub fn encoded_b(&self) -> Vec<f64> {
        self.encoder.prepare()
    }

    fn local_projection(&self, chi: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n_qubits();
        let mut sum = 0.0;
        let mut m = vec![0.0; chi.len()];
        for (i, &c) in chi.iter().enumerate() {
            let zeros = n - i.count_ones() as usize;
            sum += zeros as f64 * c * c;
            m[i] = c * zeros as f64 / n as f64;
        }
        (sum / n as f64, m)
    }

    pub fn costs_real(&self, psi: &[f64]) -> Result<Costs> {
        let phi = self.operator.apply(psi);
        let pp = dot(&phi, &phi);
        if !(pp > 0.0) {
            return Err(Error::DegenerateNormalization("A|ψ⟩ vanishes".into()));
        }
        let bp = dot(&self.b, &phi);
        let mut chi = phi.clone();
        self.encoder.apply_adjoint(&mut chi);
        let (proj, _) = self.local_projection(&chi);
        let c_ul = pp - proj;
        Ok(Costs {
            global_unnormalized: pp - bp * bp,
            global: 1.0 - bp * bp / pp,
            local_unnormalized: c_ul,
            local: c_ul / pp,
        })
    }

    pub fn costs(&self, state: &StateVector) -> Result<Costs> {
        if state.amplitudes().len() != self.operator.dim() {
            return Err(Error::DimensionMismatch("state and operator disagree".into()));
        }
        self.costs_real(&state.real())
    }

    pub fn cost(&self, state: &StateVector) -> Result<f64> {
        Ok(self.costs(state)?.get(self.cost_kind))
    }

    /// Cost and `∂C/∂ψ` for a real trial state.
    fn cost_and_state_gradient(&self, psi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let phi = self.operator.apply(psi);
        let pp = dot(&phi, &phi);
        if !(pp > 0.0) {
            return Err(Error::DegenerateNormalization("A|ψ⟩ vanishes".into()));
        }
        let at_phi = self.operator.apply_transpose(&phi);
        let scaled = |a: f64, x: &[f64], b: f64, y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
        };
        Ok(match self.cost_kind {
            CostKind::GlobalUnnormalized | CostKind::Global => {
                let bp = dot(&self.b, &phi);
                let at_b = self.operator.apply_transpose(&self.b);
                if self.cost_kind == CostKind::GlobalUnnormalized {
                    (pp - bp * bp, scaled(2.0, &at_phi, -2.0 * bp, &at_b))
                } else {
                    (
                        1.0 - bp * bp / pp,
                        scaled(2.0 * bp * bp / (pp * pp), &at_phi, -2.0 * bp / pp, &at_b),
                    )
                }
            }
            CostKind::LocalUnnormalized | CostKind::Local => {
                let mut chi = phi.clone();
                self.encoder.apply_adjoint(&mut chi);
                let (proj, mut m) = self.local_projection(&chi);
                self.encoder.apply(&mut m);
                let resid: Vec<f64> = phi.iter().zip(&m).map(|(a, b)| a - b).collect();
                let g_ul: Vec<f64> = self.operator.apply_transpose(&resid).iter().map(|v| 2.0 * v).collect();
                let c_ul = pp - proj;
                if self.cost_kind == CostKind::LocalUnnormalized {
                    (c_ul, g_ul)
                } else {
                    let c_l = c_ul / pp;
                    (c_l, scaled(1.0 / pp, &g_ul, -2.0 * c_l / pp, &at_phi))
                }
            }
        })
    }

    /// Cost and exact parameter gradient at `theta`.
    pub fn cost_and_gradient(&self, ansatz: &Ansatz, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let psi = ansatz.apply_real(theta)?;
        let (c, g) = self.cost_and_state_gradient(&psi)?;
        Ok((c, ansatz.pullback(theta, &psi, &g)))
    }

    pub fn gradient(&self, ansatz: &Ansatz, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.cost_and_gradient(ansatz, theta)?.1)
    }

    pub fn cost_at(&self, ansatz: &Ansatz, theta: &[f64]) -> Result<f64> {
        Ok(self.costs_real(&ansatz.apply_real(theta)?)?.get(self.cost_kind))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqlsOptions {
    pub max_iter: usize,
    pub step: f64,
    pub threshold: f64,
    pub restarts: usize,
    pub seed: u64,
    pub eps: f64,
}

impl Default for VqlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            step: 0.8,
            threshold: 1e-6,
            restarts: 3,
            seed: 0,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqlsRun {
    pub theta_star: Vec<f64>,
    /// Cost at each iteration of the returned restart.
    pub cost_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub final_state: StateVector,
    pub iterations: usize,
    pub achieved_cost: f64,
    pub converged: bool,
    pub restart: usize,
}

impl VqlsRun {
    /// Running minimum of the cost trace.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.cost_trace
            .iter()
            .map(|&c| {
                best = best.min(c);
                best
            })
            .collect()
    }

    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,cost,grad_norm")?;
        for (i, (c, g)) in self.cost_trace.iter().zip(&self.grad_norm_trace).enumerate() {
            writeln!(w, "{i},{c:e},{g:e}")?;
        }
        Ok(())
    }
}

/// Initial parameters `2π · Beta(0.5, 0.5)`.
pub fn initial_parameters(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let beta = Beta::new(0.5, 0.5).expect("valid shape parameters");
    (0..n).map(|_| 2.0 * std::f64::consts::PI * rng.sample(beta)).collect()
}

/// Adagrad on the selected cost, restarted from fresh random parameters; the run
/// with the lowest cost ever seen is returned at its best parameters.
pub fn vqls_solve(problem: &VqlsProblem, ansatz: &Ansatz, opts: &VqlsOptions) -> Result<VqlsRun> {
    if ansatz.n_qubits() != problem.n_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "ansatz has {} qubits, problem {}",
            ansatz.n_qubits(),
            problem.n_qubits()
        )));
    }
    let mut best: Option<VqlsRun> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(restart as u64));
        let mut theta = initial_parameters(ansatz.n_params(), &mut rng);
        let mut accum = vec![0.0; theta.len()];
        let mut cost_trace = Vec::with_capacity(opts.max_iter + 1);
        let mut grad_norm_trace = Vec::with_capacity(opts.max_iter + 1);
        let (mut best_c, mut best_theta) = (f64::INFINITY, theta.clone());
        let mut converged = false;
        for it in 0..=opts.max_iter {
            let (c, g) = problem.cost_and_gradient(ansatz, &theta)?;
            cost_trace.push(c);
            grad_norm_trace.push(norm2(&g));
            if c < best_c {
                best_c = c;
                best_theta.clone_from(&theta);
            }
            if c <= opts.threshold {
                converged = true;
                break;
            }
            if it == opts.max_iter {
                break;
            }
            for ((t, a), gi) in theta.iter_mut().zip(accum.iter_mut()).zip(&g) {
                *a += gi * gi;
                *t -= opts.step * gi / (*a + opts.eps).sqrt();
            }
        }
        let run = VqlsRun {
            final_state: ansatz.apply(&best_theta)?,
            theta_star: best_theta,
            iterations: cost_trace.len() - 1,
            cost_trace,
            grad_norm_trace,
            achieved_cost: best_c,
            converged,
            restart,
        };
        let better = best.as_ref().is_none_or(|b| run.achieved_cost < b.achieved_cost);
        if better {
            best = Some(run);
        }
        if converged {
            break;
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carleman::build_carleman;
    use crate::linsys::{assemble, Scheme};
    use crate::polyode::{discretize_burgers, kron_power, BurgersConfig};
    use crate::sigmalcu::decompose_pipeline;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm2(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn toy_problem(kind: CostKind) -> VqlsProblem {
        let a = SparseMatrix::from_triplets(
            16,
            16,
            (0..16).flat_map(|i| {
                let mut t = vec![(i, i, 1.0 + 0.1 * i as f64)];
                if i + 1 < 16 {
                    t.push((i + 1, i, -0.3));
                }
                t
            }),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = StateVector::from_real(&random_unit(&mut rng, 16)).unwrap();
        VqlsProblem::new(Operator::Sparse(a), b, kind).unwrap()
    }

    #[test]
    fn encoder_reproduces_signed_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=6 {
            let mut v = random_unit(&mut rng, 1 << n);
            v[0] = 0.0;
            let nv = norm2(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            let enc = AmplitudeEncoder::new(&v).unwrap();
            let got = enc.prepare();
            for (a, b) in got.iter().zip(&v) {
                assert!((a - b).abs() < 1e-12);
            }
            let mut back = got.clone();
            enc.apply_adjoint(&mut back);
            assert!((back[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_acts_only_below_target_support() {
        // support in the first 4 of 32 entries: a 2-qubit tree, identity on 3 high qubits
        let mut v = vec![0.0; 32];
        v[..4].copy_from_slice(&[0.1, -0.7, 0.5, 0.5]);
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let enc = AmplitudeEncoder::new(&v).unwrap();
        assert_eq!((enc.n_qubits(), enc.tree_qubits()), (5, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_unit(&mut rng, 32);
        let mut y = x.clone();
        enc.apply(&mut y);
        for (k, (xb, yb)) in x.chunks(4).zip(y.chunks(4)).enumerate() {
            let mut single = xb.to_vec();
            let low = AmplitudeEncoder::new(&v[..4]).unwrap();
            low.apply(&mut single);
            for (a, b) in single.iter().zip(yb) {
                assert!((a - b).abs() < 1e-14, "block {k}");
            }
        }
        enc.apply_adjoint(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn w0_state_single_level() {
        let u0 = [0.6, 0.8];
        let s = prepare_w0_state(&u0, 1).unwrap();
        assert_eq!(s.n_qubits(), 2);
        let want = [0.0, 0.0, 0.6, 0.8];
        for (a, b) in s.real().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w0_state_basis_vector_level_three() {
        let s = prepare_w0_state(&[1.0, 0.0], 3).unwrap();
        let r = s.real();
        assert_eq!(r.len(), 16);
        let c = 1.0 / 3f64.sqrt();
        // slot: 2 leading zeros, then e1, e1⊗e1, e1⊗e1⊗e1
        for (i, v) in r.iter().enumerate() {
            let want = if [2, 4, 8].contains(&i) { c } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "index {i}");
        }
    }

    #[test]
    fn w0_state_burgers_matches_direct_build() {
        let u0 = BurgersConfig::default().initial_state();
        let s = prepare_w0_state(&u0, 2).unwrap();
        let mut want = vec![0.0; 12];
        want.extend(&u0);
        want.extend(kron_power(&u0, 2).unwrap());
        let want: Vec<f64> = want.iter().map(|v| v / 2f64.sqrt()).collect();
        for (a, b) in s.real().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(prepare_w0_state(&[0.5, 0.5], 1).is_err());
    }

    #[test]
    fn b_state_matches_normalized_rhs() {
        let ode = discretize_burgers(&BurgersConfig::default()).unwrap();
        let sys = assemble(&build_carleman(&ode, 2).unwrap(), 0.35, 8, Scheme::Backward, true).unwrap();
        let s = prepare_b_state(&sys).unwrap();
        let want = StateVector::from_real(&sys.b).unwrap();
        assert!(euclidean_distance(&s, &want) < 1e-12);
        assert!((s.inner(&s).re - 1.0).abs() < 1e-12);
        // time register (three most significant qubits) stays in |0⟩
        assert!(s.real()[sys.layout.slot..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn ansatz_zero_parameters_give_zero_state() {
        let a = Ansatz::new(4, 3);
        let s = a.apply(&vec![0.0; a.n_params()]).unwrap();
        assert_eq!(s, StateVector::zero_state(4));
        assert!(a.apply(&[0.0; 3]).is_err());
    }

    #[test]
    fn ansatz_matches_gate_by_gate_matrices() {
        // dense-matrix oracle for a 3-qubit, 1-layer circuit
        use nalgebra::DMatrix;
        let n = 3;
        let a = Ansatz::new(n, 1);
        let theta = [0.3, -1.2, 2.0, 0.7, 1.1, -0.4];
        let ry = |t: f64| DMatrix::from_row_slice(2, 2, &[(t / 2.0).cos(), -(t / 2.0).sin(), (t / 2.0).sin(), (t / 2.0).cos()]);
        let layer = |ts: &[f64]| ry(ts[0]).kronecker(&ry(ts[1])).kronecker(&ry(ts[2]));
        let cz = |p: usize, q: usize| {
            let mut m = DMatrix::<f64>::identity(8, 8);
            for i in 0..8 {
                if (i >> (n - 1 - p)) & 1 == 1 && (i >> (n - 1 - q)) & 1 == 1 {
                    m[(i, i)] = -1.0;
                }
            }
            m
        };
        let u = layer(&theta[3..]) * cz(2, 0) * cz(1, 2) * cz(0, 1) * layer(&theta[..3]);
        let got = a.apply_real(&theta).unwrap();
        for i in 0..8 {
            assert!((got[i] - u[(i, 0)]).abs() < 1e-14);
        }
    }

    #[test]
    fn solution_annihilates_costs() {
        let p = toy_problem(CostKind::Local);
        let dense = p.operator.to_sparse().to_dense();
        let x = dense.lu().solve(&nalgebra::DVector::from_column_slice(&p.b_state.real())).unwrap();
        let s = StateVector::from_real(x.as_slice()).unwrap();
        let c = p.costs(&s).unwrap();
        assert!(c.global.abs() < 1e-10 && c.local.abs() < 1e-10);
    }

    #[test]
    fn orthogonal_image_gives_unit_global_cost() {
        let a = SparseMatrix::identity(4);
        let b = StateVector::from_real(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let p = VqlsProblem::new(Operator::Sparse(a), b, CostKind::Global).unwrap();
        let s = StateVector::from_real(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((p.cost(&s).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn local_and_global_cost_ordering() {
        let p = toy_problem(CostKind::Local);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = StateVector::from_real(&random_unit(&mut rng, 16)).unwrap();
            let c = p.costs(&s).unwrap();
            assert!(c.local <= c.global + 1e-12);
            assert!(c.global <= 4.0 * c.local + 1e-12);
        }
    }

    #[test]
    fn degenerate_image_is_an_error() {
        let p = VqlsProblem::new(
            Operator::Sparse(SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0)])),
            StateVector::from_real(&[1.0, 0.0]).unwrap(),
            CostKind::Global,
        )
        .unwrap();
        assert!(p.cost(&StateVector::from_real(&[0.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        for kind in [CostKind::GlobalUnnormalized, CostKind::Global, CostKind::LocalUnnormalized, CostKind::Local] {
            let p = toy_problem(kind);
            let a = Ansatz::new(4, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..5 {
                let theta = initial_parameters(a.n_params(), &mut rng);
                let g = p.gradient(&a, &theta).unwrap();
                let h = 1e-5;
                let fd: Vec<f64> = (0..theta.len())
                    .map(|j| {
                        let mut tp = theta.clone();
                        let mut tm = theta.clone();
                        tp[j] += h;
                        tm[j] -= h;
                        (p.cost_at(&a, &tp).unwrap() - p.cost_at(&a, &tm).unwrap()) / (2.0 * h)
                    })
                    .collect();
                let diff: Vec<f64> = g.iter().zip(&fd).map(|(x, y)| x - y).collect();
                assert!(norm2(&diff) <= 1e-5 * norm2(&fd).max(1e-8), "{kind:?}");
            }
        }
    }

    #[test]
    fn one_qubit_gradient_closed_form() {
        let a = SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (1, 1, 2.0)]);
        let p = VqlsProblem::new(
            Operator::Sparse(a),
            StateVector::from_real(&[1.0, 0.0]).unwrap(),
            CostKind::Global,
        )
        .unwrap();
        let ans = Ansatz::new(1, 0);
        for theta in [0.3, 1.0, 2.5, -0.7] {
            let (c, g) = p.cost_and_gradient(&ans, &[theta]).unwrap();
            let s = (theta / 2.0).sin().powi(2);
            assert!((c - 4.0 * s / (1.0 + 3.0 * s)).abs() < 1e-14);
            let want = 2.0 * theta.sin() / (1.0 + 3.0 * s).powi(2);
            assert!((g[0] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_vanishes_at_representable_solution() {
        let a = SparseMatrix::from_triplets(4, 4, (0..4).map(|i| (i, i, 1.0 + i as f64)));
        let ans = Ansatz::new(2, 1);
        let theta = [0.4, -0.9, 1.3, 0.2];
        let psi = ans.apply_real(&theta).unwrap();
        let b = StateVector::from_real(&a.matvec(&psi)).unwrap();
        let p = VqlsProblem::new(Operator::Sparse(a), b, CostKind::Local).unwrap();
        let (c, g) = p.cost_and_gradient(&ans, &theta).unwrap();
        assert!(c.abs() < 1e-14 && norm2(&g) < 1e-12);
    }

    #[test]
    fn diagonal_two_qubit_problem_converges() {
        let a = SparseMatrix::from_triplets(4, 4, [(0, 0, 1.0), (1, 1, 2.0), (2, 2, 3.0), (3, 3, 4.0)]);
        let b = StateVector::from_real(&[0.5; 4]).unwrap();
        let p = VqlsProblem::new(Operator::Sparse(a), b, CostKind::Global).unwrap();
        let run = vqls_solve(&p, &Ansatz::new(2, 3), &VqlsOptions::default()).unwrap();
        assert!(run.achieved_cost <= 1e-6, "cost {}", run.achieved_cost);
        assert!(run.iterations <= 200);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let p = toy_problem(CostKind::Local);
        let opts = VqlsOptions {
            max_iter: 30,
            seed: 42,
            ..VqlsOptions::default()
        };
        let a = Ansatz::new(4, 3);
        let r1 = vqls_solve(&p, &a, &opts).unwrap();
        let r2 = vqls_solve(&p, &a, &opts).unwrap();
        assert_eq!(r1, r2);
        let best = r1.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert!(r1.cost_trace.iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn sigma_operator_matches_sparse_operator() {
        let ode = discretize_burgers(&BurgersConfig::default()).unwrap();
        let sys = assemble(&build_carleman(&ode, 1).unwrap(), 0.35, 8, Scheme::Backward, true).unwrap();
        let (d1, d2) = decompose_pipeline(&sys).unwrap();
        let sigma = Operator::Sigma(d1.add_scaled(0.07, &d2));
        let b = prepare_b_state(&sys).unwrap();
        let ps = VqlsProblem::new(sigma, b.clone(), CostKind::Local).unwrap();
        let pm = VqlsProblem::new(Operator::Sparse(sys.a.clone()), b, CostKind::Local).unwrap();
        let a = Ansatz::new(6, 3);
        let theta: Vec<f64> = (0..a.n_params()).map(|i| 0.1 * i as f64).collect();
        let (c1, g1) = ps.cost_and_gradient(&a, &theta).unwrap();
        let (c2, g2) = pm.cost_and_gradient(&a, &theta).unwrap();
        assert!((c1 - c2).abs() < 1e-12);
        assert!(g1.iter().zip(&g2).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    proptest! {
        #[test]
        fn trace_distance_identity(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = StateVector::from_real(&random_unit(&mut rng, 1 << n)).unwrap();
            let b = StateVector::from_real(&random_unit(&mut rng, 1 << n)).unwrap();
            let d = euclidean_distance(&a, &b);
            let rho = trace_distance(&a, &b);
            prop_assert!(((1.0 - d * d / 2.0).powi(2) + rho * rho - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn ansatz_states_are_real_and_unit(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Ansatz::new(5, 3);
            let theta = initial_parameters(a.n_params(), &mut rng);
            prop_assert!((norm2(&a.apply_real(&theta).unwrap()) - 1.0).abs() < 1e-12);
            prop_assert!(a.apply(&theta).unwrap().max_imag() <= 1e-14);
        }
    }
}
