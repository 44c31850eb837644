//! Quadratic polynomial ODE systems `u' = F0(t) + F1 u + F2 u^[2]` and the
//! semi-discretized viscous Burgers instance.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::limits;
use crate::sparse::SparseMatrix;

/// Kronecker power `x^[i]`, with `x^[0] = (1)`.
pub fn kron_power(x: &[f64], i: usize) -> Result<Vec<f64>> {
    kron_power_capped(x, i, limits::size_cap())
}

pub fn kron_power_capped(x: &[f64], i: usize, cap: usize) -> Result<Vec<f64>> {
    limits::checked_pow("kron_power", x.len(), i, cap)?;
    let mut out = vec![1.0];
    for _ in 0..i {
        out = crate::sparse::kron_vec(&out, x);
    }
    Ok(out)
}

pub type ForcingFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Inhomogeneous term `F0(t)`.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Constant(Vec<f64>),
    Function(ForcingFn),
}

impl Forcing {
    pub fn eval(&self, t: f64, n: usize) -> Vec<f64> {
        match self {
            Forcing::Zero => vec![0.0; n],
            Forcing::Constant(v) => v.clone(),
            Forcing::Function(f) => f(t),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Forcing::Zero => true,
            Forcing::Constant(v) => v.iter().all(|&x| x == 0.0),
            Forcing::Function(_) => false,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Forcing::Function(_))
    }

    /// Multiplies the forcing by `s`.
    pub fn scaled(&self, s: f64) -> Forcing {
        match self {
            Forcing::Zero => Forcing::Zero,
            Forcing::Constant(v) => Forcing::Constant(v.iter().map(|x| s * x).collect()),
            Forcing::Function(f) => {
                let f = f.clone();
                Forcing::Function(Arc::new(move |t| f(t).into_iter().map(|x| s * x).collect()))
            }
        }
    }
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => write!(f, "Zero"),
            Forcing::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Forcing::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Records `F1 = nu * f1_base` for parameter-dependent assembly.
#[derive(Clone, Debug)]
pub struct ParamSplit {
    pub nu: f64,
    pub f1_base: SparseMatrix,
}

#[derive(Clone, Debug)]
pub struct QuadOde {
    n_x: usize,
    f0: Forcing,
    f1: SparseMatrix,
    f2: SparseMatrix,
    u0: Vec<f64>,
    param_split: Option<ParamSplit>,
}

impl QuadOde {
    pub fn new(f0: Forcing, f1: SparseMatrix, f2: SparseMatrix, u0: Vec<f64>) -> Result<Self> {
        let n = u0.len();
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        if f1.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "F1 is {:?}, expected ({n}, {n})",
                f1.shape()
            )));
        }
        if f2.shape() != (n, n * n) {
            return Err(Error::DimensionMismatch(format!(
                "F2 is {:?}, expected ({n}, {})",
                f2.shape(),
                n * n
            )));
        }
        if let Forcing::Constant(v) = &f0 {
            if v.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "F0 has length {}, expected {n}",
                    v.len()
                )));
            }
        }
        Ok(Self {
            n_x: n,
            f0,
            f1,
            f2,
            u0,
            param_split: None,
        })
    }

    /// Builds the system with `F1 = nu * f1_base`.
    pub fn with_parameter(
        f0: Forcing,
        f1_base: SparseMatrix,
        nu: f64,
        f2: SparseMatrix,
        u0: Vec<f64>,
    ) -> Result<Self> {
        let mut ode = Self::new(f0, f1_base.scale(nu), f2, u0)?;
        ode.param_split = Some(ParamSplit { nu, f1_base });
        Ok(ode)
    }

    /// Same system at a different parameter value. Fails without a split.
    pub fn at_parameter(&self, nu: f64) -> Result<Self> {
        let split = self
            .param_split
            .as_ref()
            .ok_or(Error::MissingSplit("QuadOde::at_parameter"))?;
        Self::with_parameter(
            self.f0.clone(),
            split.f1_base.clone(),
            nu,
            self.f2.clone(),
            self.u0.clone(),
        )
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn f0(&self) -> &Forcing {
        &self.f0
    }
    pub fn f0_at(&self, t: f64) -> Vec<f64> {
        self.f0.eval(t, self.n_x)
    }
    pub fn f1(&self) -> &SparseMatrix {
        &self.f1
    }
    pub fn f2(&self) -> &SparseMatrix {
        &self.f2
    }
    pub fn u0(&self) -> &[f64] {
        &self.u0
    }
    pub fn param_split(&self) -> Option<&ParamSplit> {
        self.param_split.as_ref()
    }

    /// Replaces every operator while keeping the split metadata consistent.
    pub(crate) fn with_parts(&self, f0: Forcing, f2: SparseMatrix, u0: Vec<f64>) -> Self {
        Self {
            n_x: self.n_x,
            f0,
            f1: self.f1.clone(),
            f2,
            u0,
            param_split: self.param_split.clone(),
        }
    }

    pub fn with_initial_state(&self, u0: Vec<f64>) -> Result<Self> {
        if u0.len() != self.n_x {
            return Err(Error::DimensionMismatch(format!(
                "u0 has length {}, expected {}",
                u0.len(),
                self.n_x
            )));
        }
        Ok(self.with_parts(self.f0.clone(), self.f2.clone(), u0))
    }

    /// `F2 (u ⊗ u)` without forming the Kronecker square.
    pub fn quadratic_term(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n_x;
        let mut y = vec![0.0; n];
        for (r, c, v) in self.f2.iter() {
            y[r] += v * u[c / n] * u[c % n];
        }
        y
    }

    /// `F0(t) + F1 u + F2 u^[2]`.
    pub fn eval_rhs(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n_x {
            return Err(Error::DimensionMismatch(format!(
                "state has length {}, expected {}",
                u.len(),
                self.n_x
            )));
        }
        let mut y = self.f1.matvec(u);
        for (yi, qi) in y.iter_mut().zip(self.quadratic_term(u)) {
            *yi += qi;
        }
        if !self.f0.is_zero() {
            let f0 = self.f0_at(t);
            if f0.len() != self.n_x {
                return Err(Error::DimensionMismatch(format!(
                    "F0(t) has length {}, expected {}",
                    f0.len(),
                    self.n_x
                )));
            }
            for (yi, fi) in y.iter_mut().zip(f0) {
                *yi += fi;
            }
        }
        Ok(y)
    }
}

/// Classical forward Euler on the nonlinear system; returns the `steps + 1` states
/// `u(k h)`, `h = t_end / steps`.
pub fn integrate_euler(ode: &QuadOde, t_end: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let h = t_end / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut u = ode.u0().to_vec();
    out.push(u.clone());
    for k in 0..steps {
        let f = ode.eval_rhs(k as f64 * h, &u)?;
        for (ui, fi) in u.iter_mut().zip(f) {
            *ui += h * fi;
        }
        out.push(u.clone());
    }
    Ok(out)
}

/// Backward Euler on the nonlinear system, each step solved by Newton iteration;
/// returns the `steps + 1` states `u(k h)`.
pub fn integrate_implicit_euler(ode: &QuadOde, t_end: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let n = ode.n_x();
    let h = t_end / steps as f64;
    let f1 = ode.f1().to_dense();
    let mut out = Vec::with_capacity(steps + 1);
    let mut u = ode.u0().to_vec();
    out.push(u.clone());
    for k in 1..=steps {
        let t = k as f64 * h;
        let prev = u.clone();
        for _ in 0..50 {
            let f = ode.eval_rhs(t, &u)?;
            let g: Vec<f64> = (0..n).map(|i| u[i] - prev[i] - h * f[i]).collect();
            // J = I − h (F1 + F2 (I ⊗ u + u ⊗ I))
            let mut jac = nalgebra::DMatrix::<f64>::identity(n, n) - &f1 * h;
            for (r, c, v) in ode.f2().iter() {
                let (a, b) = (c / n, c % n);
                jac[(r, a)] -= h * v * u[b];
                jac[(r, b)] -= h * v * u[a];
            }
            let delta = jac
                .lu()
                .solve(&nalgebra::DVector::from_vec(g))
                .ok_or(Error::SingularBlock { step: k })?;
            for (ui, di) in u.iter_mut().zip(delta.iter()) {
                *ui -= di;
            }
            if delta.norm() <= 1e-15 * (1.0 + crate::sparse::norm2(&u)) {
                break;
            }
        }
        out.push(u.clone());
    }
    Ok(out)
}

/// Classical fourth-order Runge–Kutta; returns the `steps + 1` states `u(k h)`.
pub fn integrate_rk4(ode: &QuadOde, t_end: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    rk4_from(ode, ode.u0(), 0.0, t_end, steps)
}

pub(crate) fn rk4_from(
    ode: &QuadOde,
    start: &[f64],
    t0: f64,
    t_end: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let h = (t_end - t0) / steps as f64;
    let axpy = |u: &[f64], a: f64, k: &[f64]| -> Vec<f64> {
        u.iter().zip(k).map(|(x, y)| x + a * y).collect()
    };
    let mut out = Vec::with_capacity(steps + 1);
    let mut u = start.to_vec();
    out.push(u.clone());
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let k1 = ode.eval_rhs(t, &u)?;
        let k2 = ode.eval_rhs(t + h / 2.0, &axpy(&u, h / 2.0, &k1))?;
        let k3 = ode.eval_rhs(t + h / 2.0, &axpy(&u, h / 2.0, &k2))?;
        let k4 = ode.eval_rhs(t + h, &axpy(&u, h, &k3))?;
        for i in 0..u.len() {
            u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(u.clone());
    }
    Ok(out)
}

pub type SourceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Viscous Burgers problem on `[0, L]` with homogeneous Dirichlet boundaries.
#[derive(Clone)]
pub struct BurgersConfig {
    pub length: f64,
    pub horizon: f64,
    pub n_x: usize,
    pub n_t: usize,
    pub nu: f64,
    /// 1-based grid index of the measurement point.
    pub x_p_index: usize,
    /// Source term `f(x, t)`; `None` means identically zero.
    pub forcing: Option<SourceFn>,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            length: 0.5,
            horizon: 0.35,
            n_x: 4,
            n_t: 8,
            nu: 0.07,
            x_p_index: 2,
            forcing: None,
        }
    }
}

impl fmt::Debug for BurgersConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BurgersConfig")
            .field("length", &self.length)
            .field("horizon", &self.horizon)
            .field("n_x", &self.n_x)
            .field("n_t", &self.n_t)
            .field("nu", &self.nu)
            .field("x_p_index", &self.x_p_index)
            .field("forcing", &self.forcing.as_ref().map(|_| ".."))
            .finish()
    }
}

impl BurgersConfig {
    pub fn dx(&self) -> f64 {
        self.length / (self.n_x as f64 + 1.0)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.n_t as f64 - 1.0)
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Grid coordinate `x_i = i Δx` for 1-based `i`.
    pub fn grid_point(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_x must be at least 2, got {}",
                self.n_x
            )));
        }
        if self.n_t < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_t must be at least 2, got {}",
                self.n_t
            )));
        }
        if !(self.length > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument(
                "L and T must be positive".into(),
            ));
        }
        if !self.nu.is_finite() {
            return Err(Error::InvalidArgument("nu must be finite".into()));
        }
        if self.x_p_index < 1 || self.x_p_index > self.n_x {
            return Err(Error::InvalidArgument(format!(
                "x_p_index must lie in [1, {}], got {}",
                self.n_x, self.x_p_index
            )));
        }
        Ok(())
    }

    /// Normalized initial profile `c sin(k (x_i - Δx))`, `‖u0‖ = 1`.
    pub fn initial_state(&self) -> Vec<f64> {
        let kdx = self.wavenumber() * self.dx();
        let raw: Vec<f64> = (0..self.n_x).map(|i| (i as f64 * kdx).sin()).collect();
        let c = 1.0 / crate::sparse::norm2(&raw);
        raw.into_iter().map(|v| c * v).collect()
    }
}

/// `tridiag(1, -2, 1) / (2 Δx²)`.
pub fn burgers_laplacian(n: usize, dx: f64) -> SparseMatrix {
    let s = 1.0 / (2.0 * dx * dx);
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        t.push((i, i, -2.0 * s));
        if i > 0 {
            t.push((i, i - 1, s));
        }
        if i + 1 < n {
            t.push((i, i + 1, s));
        }
    }
    SparseMatrix::from_triplets(n, n, t)
}

/// Convective operator acting on `u^[2]`: row `i` carries `-u_i u_{i+1}/(2Δx)` and
/// `+u_i u_{i-1}/(2Δx)`.
pub fn burgers_convection(n: usize, dx: f64) -> SparseMatrix {
    let s = 1.0 / (2.0 * dx);
    let mut t = Vec::with_capacity(2 * n);
    for i in 0..n {
        if i + 1 < n {
            t.push((i, i * n + i + 1, -s));
        }
        if i > 0 {
            t.push((i, i * n + i - 1, s));
        }
    }
    SparseMatrix::from_triplets(n, n * n, t)
}

/// Central-difference semi-discretization of the Burgers problem.
pub fn discretize_burgers(cfg: &BurgersConfig) -> Result<QuadOde> {
    cfg.validate()?;
    let n = cfg.n_x;
    let dx = cfg.dx();
    let f0 = match &cfg.forcing {
        None => Forcing::Zero,
        Some(f) => {
            let f = f.clone();
            let xs: Vec<f64> = (1..=n).map(|i| cfg.grid_point(i)).collect();
            Forcing::Function(Arc::new(move |t| xs.iter().map(|&x| f(x, t)).collect()))
        }
    };
    QuadOde::with_parameter(
        f0,
        burgers_laplacian(n, dx),
        cfg.nu,
        burgers_convection(n, dx),
        cfg.initial_state(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::norm2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stencil_rhs(cfg: &BurgersConfig, u: &[f64], t: f64) -> Vec<f64> {
        let n = u.len();
        let dx = cfg.dx();
        let at = |j: isize| -> f64 {
            if j < 0 || j as usize >= n {
                0.0
            } else {
                u[j as usize]
            }
        };
        (0..n)
            .map(|i| {
                let i = i as isize;
                let (l, c, r) = (at(i - 1), at(i), at(i + 1));
                let f = cfg
                    .forcing
                    .as_ref()
                    .map_or(0.0, |f| f(cfg.grid_point(i as usize + 1), t));
                -c * (r - l) / (2.0 * dx) + cfg.nu * (r - 2.0 * c + l) / (2.0 * dx * dx) + f
            })
            .collect()
    }

    #[test]
    fn kron_power_small_cases() {
        assert_eq!(kron_power(&[1.0, 2.0], 2).unwrap(), vec![1.0, 2.0, 2.0, 4.0]);
        assert_eq!(kron_power(&[3.0, -1.0, 7.0], 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn kron_power_respects_cap() {
        let err = kron_power_capped(&[1.0; 4], 13, 1 << 24).unwrap_err();
        assert!(matches!(err, Error::SizeCapExceeded { .. }));
        assert_eq!(kron_power_capped(&[1.0; 4], 12, 1 << 24).unwrap().len(), 1 << 24);
    }

    #[test]
    fn implicit_euler_satisfies_step_equation() {
        let ode = discretize_burgers(&BurgersConfig::default()).unwrap();
        let traj = integrate_implicit_euler(&ode, 0.35, 7).unwrap();
        let h = 0.05;
        for k in 1..traj.len() {
            let f = ode.eval_rhs(k as f64 * h, &traj[k]).unwrap();
            for i in 0..4 {
                assert!((traj[k][i] - traj[k - 1][i] - h * f[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn implicit_euler_first_order() {
        let ode = discretize_burgers(&BurgersConfig::default()).unwrap();
        let exact = integrate_rk4(&ode, 0.35, 4096).unwrap().pop().unwrap();
        let err = |steps: usize| {
            let u = integrate_implicit_euler(&ode, 0.35, steps).unwrap().pop().unwrap();
            u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let ratio = err(64) / err(128);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn burgers_grid_spacing() {
        let cfg = BurgersConfig::default();
        assert!((cfg.dx() - 0.1).abs() < 1e-15);
        assert!((cfg.dt() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn burgers_initial_state() {
        let cfg = BurgersConfig::default();
        let u0 = cfg.initial_state();
        let s = [0.0, (0.4 * PI).sin(), (0.8 * PI).sin(), (1.2 * PI).sin()];
        let c = 1.0 / (s[1] * s[1] + s[2] * s[2] + s[3] * s[3]).sqrt();
        assert!((c - 0.791_685_6).abs() < 1e-7);
        for (a, b) in u0.iter().zip(s) {
            assert!((a - c * b).abs() < 1e-15);
        }
        assert!((s[1] - 0.951057).abs() < 1e-6 && (s[2] - 0.587785).abs() < 1e-6);
        let sq = kron_power(&u0, 2).unwrap();
        assert!((norm2(&sq) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn burgers_convection_entries() {
        let ode = discretize_burgers(&BurgersConfig::default()).unwrap();
        // 1-based (row, col) pairs expanded from the convective stencil
        let expected = [
            (1, 2, -5.0),
            (2, 5, 5.0),
            (2, 7, -5.0),
            (3, 10, 5.0),
            (3, 12, -5.0),
            (4, 15, 5.0),
        ];
        assert_eq!(ode.f2().nnz(), expected.len());
        for (r, c, v) in expected {
            assert!((ode.f2().get(r - 1, c - 1) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rhs_matches_stencil() {
        let cfg = BurgersConfig::default();
        let ode = discretize_burgers(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = ode.eval_rhs(0.0, &u).unwrap();
            let b = stencil_rhs(&cfg, &u, 0.0);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-13, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn rhs_with_source_matches_stencil() {
        let cfg = BurgersConfig {
            forcing: Some(Arc::new(|x, t| x * (1.0 + t))),
            ..BurgersConfig::default()
        };
        let ode = discretize_burgers(&cfg).unwrap();
        let u = cfg.initial_state();
        let a = ode.eval_rhs(0.3, &u).unwrap();
        let b = stencil_rhs(&cfg, &u, 0.3);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn rhs_zero_state_and_linear_case() {
        let ode = discretize_burgers(&BurgersConfig::default()).unwrap();
        assert_eq!(ode.eval_rhs(0.0, &[0.0; 4]).unwrap(), vec![0.0; 4]);
        let lin = QuadOde::new(
            Forcing::Constant(vec![1.0, -2.0]),
            SparseMatrix::from_triplets(2, 2, [(0, 1, 3.0), (1, 0, 0.5)]),
            SparseMatrix::zeros(2, 4),
            vec![0.0, 0.0],
        )
        .unwrap();
        assert_eq!(lin.eval_rhs(0.0, &[1.0, 2.0]).unwrap(), vec![7.0, -1.5]);
        assert!(ode.eval_rhs(0.0, &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_viscosity_split() {
        let cfg = BurgersConfig {
            nu: 0.0,
            ..BurgersConfig::default()
        };
        let ode = discretize_burgers(&cfg).unwrap();
        assert!(ode.f1().is_zero());
        let split = ode.param_split().unwrap();
        assert_eq!(split.nu, 0.0);
        assert_eq!(split.f1_base.scale(split.nu), *ode.f1());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = BurgersConfig {
            n_x: 1,
            x_p_index: 1,
            ..BurgersConfig::default()
        };
        assert!(discretize_burgers(&bad).is_err());
        let bad = BurgersConfig {
            x_p_index: 5,
            ..BurgersConfig::default()
        };
        assert!(discretize_burgers(&bad).is_err());
    }

    proptest! {
        #[test]
        fn kron_power_norm_is_multiplicative(
            x in prop::collection::vec(-2.0f64..2.0, 1..5),
            i in 0usize..5,
        ) {
            let p = kron_power(&x, i).unwrap();
            prop_assert_eq!(p.len(), x.len().pow(i as u32));
            let want = norm2(&x).powi(i as i32);
            prop_assert!((norm2(&p) - want).abs() <= 1e-12 * want.max(1.0));
        }

        #[test]
        fn split_is_consistent(nu in -1.0f64..1.0) {
            let cfg = BurgersConfig { nu, ..BurgersConfig::default() };
            let ode = discretize_burgers(&cfg).unwrap();
            let s = ode.param_split().unwrap();
            prop_assert_eq!(s.f1_base.scale(nu), ode.f1().clone());
        }
    }
}
