//! Truncated Carleman lift of a quadratic ODE to a linear system on
//! `w = (u, u^[2], ..., u^[N])`.

use crate::error::{Error, Result};
use crate::limits;
use crate::polyode::{Forcing, QuadOde};
use crate::sparse::{kron_vec, norm2, SparseMatrix};

/// Sum over the `i` tensor slots of `I ⊗ … ⊗ F ⊗ … ⊗ I`, where `F` is `n × n^j`.
///
/// The result has shape `n^i × n^(i+j-1)`.
pub fn transfer_block(f: &SparseMatrix, j: usize, i: usize, n: usize) -> Result<SparseMatrix> {
    if i == 0 {
        return Err(Error::InvalidArgument("block row index starts at 1".into()));
    }
    if j > 2 {
        return Err(Error::InvalidArgument(format!("operator order {j} not in 0..=2")));
    }
    let cols_f = n.pow(j as u32);
    if f.shape() != (n, cols_f) {
        return Err(Error::DimensionMismatch(format!(
            "operator of order {j} must be {n}x{cols_f}, got {:?}",
            f.shape()
        )));
    }
    let cap = limits::size_cap();
    let rows = limits::checked_pow("transfer block rows", n, i, cap)?;
    let cols = limits::checked_pow("transfer block cols", n, i + j - 1, cap)?;
    let mut t = Vec::with_capacity(i * f.nnz() * rows / n.max(1));
    for p in 1..=i {
        let left = n.pow((p - 1) as u32);
        let right = n.pow((i - p) as u32);
        for (r, c, v) in f.iter() {
            for a in 0..left {
                let row_base = (a * n + r) * right;
                let col_base = (a * cols_f + c) * right;
                for b in 0..right {
                    t.push((row_base + b, col_base + b, v));
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(rows, cols, t))
}

/// Lifted dimension `n + n^2 + … + n^N`.
pub fn lifted_dim(n: usize, level: usize) -> Result<usize> {
    let cap = limits::size_cap();
    let mut total: u128 = 0;
    for i in 1..=level {
        total += limits::checked_pow("lifted dimension", n, i, cap)? as u128;
    }
    limits::check("lifted dimension", total, cap)
}

/// `A_N = A_N1 + nu * A_N2`, `A_N1` off-diagonal, `A_N2` block diagonal.
#[derive(Clone, Debug)]
pub struct CarlemanSplit {
    pub nu: f64,
    pub a1: SparseMatrix,
    pub a2: SparseMatrix,
}

#[derive(Clone, Debug)]
pub struct CarlemanSystem {
    level: usize,
    n_x: usize,
    n_c: usize,
    offsets: Vec<usize>,
    /// Diagonal and super-diagonal blocks (F1 and F2 contributions).
    a_const: SparseMatrix,
    f0: Forcing,
    w0: Vec<f64>,
    split: Option<CarlemanSplit>,
}

impl CarlemanSystem {
    pub fn level(&self) -> usize {
        self.level
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_c(&self) -> usize {
        self.n_c
    }
    pub fn w0(&self) -> &[f64] {
        &self.w0
    }
    pub fn split(&self) -> Option<&CarlemanSplit> {
        self.split.as_ref()
    }
    pub fn forcing(&self) -> &Forcing {
        &self.f0
    }

    /// Start offset of 1-based block `i` inside the lifted vector.
    pub fn block_offset(&self, i: usize) -> usize {
        self.offsets[i - 1]
    }

    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i - 1]..self.offsets[i - 1] + self.n_x.pow(i as u32)
    }

    /// True when `A_N` does not depend on time.
    pub fn is_time_independent(&self) -> bool {
        !self.f0.is_time_dependent()
    }

    /// Sub-diagonal blocks `A^i_{i-1}` built from `F0(t)`.
    pub fn forcing_blocks(&self, t: f64) -> Result<SparseMatrix> {
        if self.f0.is_zero() {
            return Ok(SparseMatrix::zeros(self.n_c, self.n_c));
        }
        let f0 = self.f0.eval(t, self.n_x);
        let col = SparseMatrix::from_triplets(
            self.n_x,
            1,
            f0.iter().enumerate().map(|(r, &v)| (r, 0, v)),
        );
        let mut t_all = Vec::new();
        for i in 2..=self.level {
            let blk = transfer_block(&col, 0, i, self.n_x)?;
            let (ro, co) = (self.block_offset(i), self.block_offset(i - 1));
            t_all.extend(blk.iter().map(|(r, c, v)| (r + ro, c + co, v)));
        }
        Ok(SparseMatrix::from_triplets(self.n_c, self.n_c, t_all))
    }

    /// `A_N(t)`.
    pub fn a_at(&self, t: f64) -> Result<SparseMatrix> {
        if self.f0.is_zero() {
            return Ok(self.a_const.clone());
        }
        Ok(self.a_const.add(&self.forcing_blocks(t)?))
    }

    /// `A_N1(t)`, the parameter-free part including forcing coupling.
    pub fn a1_at(&self, t: f64) -> Result<SparseMatrix> {
        let split = self.split.as_ref().ok_or(Error::MissingSplit("CarlemanSystem::a1_at"))?;
        if self.f0.is_zero() {
            return Ok(split.a1.clone());
        }
        Ok(split.a1.add(&self.forcing_blocks(t)?))
    }

    /// Forcing vector `b(t) = (F0(t), 0, …, 0)`.
    pub fn b_at(&self, t: f64) -> Vec<f64> {
        let mut b = vec![0.0; self.n_c];
        if !self.f0.is_zero() {
            b[..self.n_x].copy_from_slice(&self.f0.eval(t, self.n_x));
        }
        b
    }

    /// `(u, u^[2], …, u^[N])`.
    pub fn lift(&self, u: &[f64]) -> Vec<f64> {
        lift_state(u, self.level)
    }

    /// Right-hand side of the truncated lifted system `A_N(t) w + b(t)`.
    pub fn rhs(&self, t: f64, w: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.a_at(t)?.checked_matvec(w)?;
        for (yi, bi) in y.iter_mut().zip(self.b_at(t)) {
            *yi += bi;
        }
        Ok(y)
    }

    /// Writes `A_N(0)` in coordinate text form.
    pub fn write_matrix<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        self.a_at(0.0)
            .map_err(|e| std::io::Error::other(e.to_string()))?
            .write_coordinate(w)
    }
}

/// `(u, u^[2], …, u^[N])`.
pub fn lift_state(u: &[f64], level: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut p = vec![1.0];
    for _ in 0..level {
        p = kron_vec(&p, u);
        out.extend_from_slice(&p);
    }
    out
}

/// Assembles the level-`N` truncated Carleman system.
pub fn build_carleman(ode: &QuadOde, level: usize) -> Result<CarlemanSystem> {
    if level == 0 {
        return Err(Error::InvalidArgument("truncation level must be at least 1".into()));
    }
    let n = ode.n_x();
    let n_c = lifted_dim(n, level)?;
    let mut offsets = Vec::with_capacity(level + 1);
    let mut acc = 0;
    for i in 1..=level {
        offsets.push(acc);
        acc += n.pow(i as u32);
    }
    offsets.push(acc);

    let place = |blk: &SparseMatrix, ro: usize, co: usize, out: &mut Vec<(usize, usize, f64)>| {
        out.extend(blk.iter().map(|(r, c, v)| (r + ro, c + co, v)));
    };

    let mut upper = Vec::new();
    for i in 1..level {
        let blk = transfer_block(ode.f2(), 2, i, n)?;
        place(&blk, offsets[i - 1], offsets[i], &mut upper);
    }
    let upper = SparseMatrix::from_triplets(n_c, n_c, upper);

    let diag_from = |f1: &SparseMatrix| -> Result<SparseMatrix> {
        let mut d = Vec::new();
        for i in 1..=level {
            let blk = transfer_block(f1, 1, i, n)?;
            place(&blk, offsets[i - 1], offsets[i - 1], &mut d);
        }
        Ok(SparseMatrix::from_triplets(n_c, n_c, d))
    };

    let (a_const, split) = match ode.param_split() {
        Some(ps) => {
            let a2 = diag_from(&ps.f1_base)?;
            let a = upper.add_scaled(ps.nu, &a2);
            (
                a,
                Some(CarlemanSplit {
                    nu: ps.nu,
                    a1: upper,
                    a2,
                }),
            )
        }
        None => (upper.add(&diag_from(ode.f1())?), None),
    };

    let w0 = lift_state(ode.u0(), level);
    Ok(CarlemanSystem {
        level,
        n_x: n,
        n_c,
        offsets,
        a_const,
        f0: ode.f0().clone(),
        w0,
        split,
    })
}

/// Per-block norms `‖d/dt u^[i] − Σ_j A^i_{i+j−1} u^[i+j−1]‖`, `i = 1..=N`, with the
/// time derivative expanded by the product rule.
pub fn lifted_rhs_residuals(ode: &QuadOde, level: usize, t: f64, u: &[f64]) -> Result<Vec<f64>> {
    let sys = build_carleman(ode, level)?;
    let udot = ode.eval_rhs(t, u)?;
    let w = sys.lift(u);
    let lifted = sys.rhs(t, &w)?;
    let mut out = Vec::with_capacity(level);
    for i in 1..=level {
        let mut d = vec![0.0; ode.n_x().pow(i as u32)];
        for p in 0..i {
            let mut term = vec![1.0];
            for q in 0..i {
                term = kron_vec(&term, if q == p { &udot } else { u });
            }
            for (di, ti) in d.iter_mut().zip(term) {
                *di += ti;
            }
        }
        let r = sys.block_range(i);
        let diff: Vec<f64> = d.iter().zip(&lifted[r]).map(|(a, b)| a - b).collect();
        out.push(norm2(&diff));
    }
    Ok(out)
}

/// Largest lifted residual over the blocks below the truncation level.
pub fn lifted_rhs_residual(ode: &QuadOde, level: usize, t: f64, u: &[f64]) -> Result<f64> {
    let r = lifted_rhs_residuals(ode, level, t, u)?;
    Ok(r[..level - 1].iter().fold(0.0_f64, |m, &v| m.max(v)))
}

/// Integrates the truncated lifted system with RK4 and returns the first block `u`
/// approximation at each of the `steps + 1` sample times.
pub fn integrate_lifted_rk4(sys: &CarlemanSystem, t_end: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let h = t_end / steps as f64;
    let mut w = sys.w0().to_vec();
    let mut out = vec![w.clone()];
    let axpy = |u: &[f64], a: f64, k: &[f64]| -> Vec<f64> {
        u.iter().zip(k).map(|(x, y)| x + a * y).collect()
    };
    for s in 0..steps {
        let t = s as f64 * h;
        let k1 = sys.rhs(t, &w)?;
        let k2 = sys.rhs(t + h / 2.0, &axpy(&w, h / 2.0, &k1))?;
        let k3 = sys.rhs(t + h / 2.0, &axpy(&w, h / 2.0, &k2))?;
        let k4 = sys.rhs(t + h, &axpy(&w, h, &k3))?;
        for i in 0..w.len() {
            w[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(w.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyode::{discretize_burgers, integrate_rk4, BurgersConfig};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn burgers(nu: f64) -> QuadOde {
        discretize_burgers(&BurgersConfig {
            nu,
            ..BurgersConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn transfer_block_single_slot_is_operator() {
        let ode = burgers(0.07);
        assert_eq!(transfer_block(ode.f1(), 1, 1, 4).unwrap(), *ode.f1());
        assert_eq!(transfer_block(ode.f2(), 2, 1, 4).unwrap(), *ode.f2());
    }

    #[test]
    fn transfer_block_two_slots_is_kronecker_sum() {
        let ode = burgers(0.07);
        let i4 = SparseMatrix::identity(4);
        let want = ode.f1().kron(&i4).add(&i4.kron(ode.f1()));
        let got = transfer_block(ode.f1(), 1, 2, 4).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
        let b = transfer_block(ode.f2(), 2, 2, 4).unwrap();
        assert_eq!(b.shape(), (16, 64));
    }

    #[test]
    fn transfer_block_rejects_bad_shapes() {
        let ode = burgers(0.07);
        assert!(transfer_block(ode.f2(), 1, 2, 4).is_err());
        assert!(transfer_block(ode.f1(), 1, 0, 4).is_err());
    }

    #[test]
    fn second_block_tracks_trajectory_derivative() {
        // d/dt (u ⊗ u) by central differences along a fine RK4 trajectory
        let ode = burgers(0.07);
        let steps = 4000;
        let t_end = 0.02;
        let traj = integrate_rk4(&ode, t_end, steps).unwrap();
        let h = t_end / steps as f64;
        let k = steps / 2;
        let sq = |u: &[f64]| kron_vec(u, u);
        let (a, b) = (sq(&traj[k + 1]), sq(&traj[k - 1]));
        let fd: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect();
        let u = &traj[k];
        let cubic = kron_vec(&sq(u), u);
        let mut pred = transfer_block(ode.f2(), 2, 2, 4).unwrap().matvec(&cubic);
        for (p, q) in pred.iter_mut().zip(transfer_block(ode.f1(), 1, 2, 4).unwrap().matvec(&sq(u))) {
            *p += q;
        }
        let err: f64 = fd.iter().zip(&pred).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max deviation {err}");
    }

    #[test]
    fn level_one_is_identity_lift() {
        let ode = QuadOde::new(
            Forcing::Constant(vec![0.5, -1.0]),
            SparseMatrix::from_triplets(2, 2, [(0, 0, -1.0), (1, 0, 0.3), (1, 1, -2.0)]),
            SparseMatrix::from_triplets(2, 4, [(0, 3, 0.2)]),
            vec![0.1, 0.2],
        )
        .unwrap();
        let sys = build_carleman(&ode, 1).unwrap();
        assert_eq!(sys.a_at(0.0).unwrap(), *ode.f1());
        assert_eq!(sys.b_at(0.0), vec![0.5, -1.0]);
        assert_eq!(sys.w0(), ode.u0());
    }

    #[test]
    fn burgers_lifted_dimensions() {
        let ode = burgers(0.07);
        for (level, n_c) in [(1, 4), (2, 20), (3, 84)] {
            let sys = build_carleman(&ode, level).unwrap();
            assert_eq!(sys.n_c(), n_c);
            assert_eq!(sys.n_c(), (4usize.pow(level as u32 + 1) - 4) / 3);
            assert_eq!(sys.w0().len(), n_c);
        }
    }

    #[test]
    fn block_tridiagonal_structure() {
        let f0 = Forcing::Constant(vec![0.3, -0.1, 0.2, 0.05]);
        let base = burgers(0.07);
        let ode = base.with_parts(f0, base.f2().clone(), base.u0().to_vec());
        let sys = build_carleman(&ode, 3).unwrap();
        let a = sys.a_at(0.0).unwrap();
        let block_of = |idx: usize| (1..=3).find(|&i| sys.block_range(i).contains(&idx)).unwrap();
        for (r, c, _) in a.iter() {
            let (bi, bj) = (block_of(r) as isize, block_of(c) as isize);
            assert!((bj - bi).abs() <= 1, "entry in block ({bi},{bj})");
        }
        assert!(!sys.forcing_blocks(0.0).unwrap().is_zero());
    }

    #[test]
    fn split_recombines_exactly() {
        let ode = burgers(0.07);
        for level in 1..=3 {
            let sys = build_carleman(&ode, level).unwrap();
            let s = sys.split().unwrap();
            let rebuilt = s.a1.add_scaled(s.nu, &s.a2);
            assert_eq!(rebuilt.max_abs_diff(&sys.a_at(0.0).unwrap()), 0.0);
        }
    }

    #[test]
    fn split_agrees_with_unsplit_build() {
        let ode = burgers(0.07);
        let plain = QuadOde::new(
            ode.f0().clone(),
            ode.f1().clone(),
            ode.f2().clone(),
            ode.u0().to_vec(),
        )
        .unwrap();
        let a = build_carleman(&ode, 3).unwrap().a_at(0.0).unwrap();
        let b = build_carleman(&plain, 3).unwrap().a_at(0.0).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn residual_vanishes_below_truncation() {
        let ode = burgers(0.07);
        let u = [0.3, -0.2, 0.5, 0.1];
        let r = lifted_rhs_residuals(&ode, 3, 0.0, &u).unwrap();
        assert!(r[0] < 1e-12 && r[1] < 1e-12);
        assert!(r[2] > 1e-6);
        assert!(lifted_rhs_residual(&ode, 3, 0.0, &u).unwrap() < 1e-12);
    }

    #[test]
    fn residual_vanishes_with_time_dependent_forcing() {
        let base = burgers(0.07);
        let f0 = Forcing::Function(Arc::new(|t| vec![t, 1.0 - t, 0.5, -t * t]));
        let ode = base.with_parts(f0, base.f2().clone(), base.u0().to_vec());
        let r = lifted_rhs_residuals(&ode, 3, 0.4, &[0.1, 0.2, -0.3, 0.4]).unwrap();
        assert!(r[0] < 1e-12 && r[1] < 1e-12);
    }

    #[test]
    fn linear_system_has_no_closure_error() {
        let ode = QuadOde::new(
            Forcing::Zero,
            SparseMatrix::from_triplets(3, 3, [(0, 0, -1.0), (0, 1, 0.5), (2, 1, 0.25), (2, 2, -0.3)]),
            SparseMatrix::zeros(3, 9),
            vec![0.1, 0.2, 0.3],
        )
        .unwrap();
        for level in 1..=4 {
            let r = lifted_rhs_residuals(&ode, level, 0.0, &[0.4, -0.1, 0.9]).unwrap();
            assert!(r.iter().all(|&v| v < 1e-12));
        }
    }

    #[test]
    fn linear_first_block_follows_original() {
        let f1 = SparseMatrix::from_triplets(2, 2, [(0, 0, -1.0), (0, 1, 0.4), (1, 1, -0.5)]);
        let ode = QuadOde::new(Forcing::Zero, f1, SparseMatrix::zeros(2, 4), vec![1.0, 0.5]).unwrap();
        let sys = build_carleman(&ode, 3).unwrap();
        let lifted = integrate_lifted_rk4(&sys, 1.0, 200).unwrap();
        let direct = integrate_rk4(&ode, 1.0, 200).unwrap();
        for (w, u) in lifted.iter().zip(&direct) {
            assert!((w[0] - u[0]).abs() < 1e-13 && (w[1] - u[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_zero_level() {
        assert!(build_carleman(&burgers(0.07), 0).is_err());
    }

    proptest! {
        #[test]
        fn parameter_linearity(nu1 in 0.0f64..0.2, nu2 in 0.0f64..0.2) {
            let a = build_carleman(&burgers(nu1), 2).unwrap();
            let b = build_carleman(&burgers(nu2), 2).unwrap();
            let diff = a.a_at(0.0).unwrap().add_scaled(-1.0, &b.a_at(0.0).unwrap());
            let want = a.split().unwrap().a2.scale(nu1 - nu2);
            prop_assert!(diff.max_abs_diff(&want) < 1e-12);
        }

        #[test]
        fn dimension_formula(n in 2usize..5, level in 1usize..5) {
            let want = (n.pow(level as u32 + 1) - n) / (n - 1);
            prop_assert_eq!(lifted_dim(n, level).unwrap(), want);
        }
    }
}
