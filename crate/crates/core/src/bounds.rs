//! Analytic error, step-size and complexity bounds for the Carleman + Euler +
//! VQLS pipeline, evaluated on concrete systems.

use serde::Serialize;

use crate::carleman::{lift_state, lifted_dim};
use crate::error::{Error, Result};
use crate::polyode::{integrate_rk4, QuadOde};
use crate::sparse::{norm2, spectral_norm, SparseMatrix};

/// Samples used to estimate `max_t ‖F0(t)‖` and `max_t ‖F0'(t)‖` on `[0, T]`.
const FORCING_SAMPLES: usize = 256;

/// RK4 substeps per output step of reference trajectories.
const REFERENCE_SUBSTEPS: usize = 8;

/// Norms and the leading eigenvalue entering every bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SystemNorms {
    pub norm_f0: f64,
    pub norm_f1: f64,
    pub norm_f2: f64,
    pub norm_f0_dot: f64,
    /// Largest real part among the eigenvalues of `F1`.
    pub re_lambda1: f64,
    pub norm_u0: f64,
}

impl SystemNorms {
    /// Evaluates the norms of `ode`, sampling the forcing on `[0, horizon]`.
    pub fn of(ode: &QuadOde, horizon: f64) -> Result<Self> {
        let n = ode.n_x();
        let f1 = ode.f1().to_dense();
        let re_lambda1 = f1
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let (norm_f0, norm_f0_dot) = if ode.f0().is_zero() {
            (0.0, 0.0)
        } else if !ode.f0().is_time_dependent() {
            (norm2(&ode.f0_at(0.0)), 0.0)
        } else {
            let dt = horizon / FORCING_SAMPLES as f64;
            let samples: Vec<Vec<f64>> = (0..=FORCING_SAMPLES)
                .map(|i| ode.f0().eval(i as f64 * dt, n))
                .collect();
            let max_f0 = samples.iter().map(|v| norm2(v)).fold(0.0, f64::max);
            let max_dot = samples
                .windows(2)
                .map(|w| {
                    let d: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) / dt).collect();
                    norm2(&d)
                })
                .fold(0.0, f64::max);
            (max_f0, max_dot)
        };
        Ok(Self {
            norm_f0,
            norm_f1: spectral_norm(&f1),
            norm_f2: spectral_norm(&ode.f2().to_dense()),
            norm_f0_dot,
            re_lambda1,
            norm_u0: norm2(ode.u0()),
        })
    }
}

/// `R₂ = (‖u0‖‖F2‖ + ‖F0‖/‖u0‖) / |Re λ₁|`.
pub fn compute_r2(norms: &SystemNorms) -> Result<f64> {
    if !(norms.re_lambda1 < 0.0) {
        return Err(Error::PremiseViolated(format!(
            "F1 has an eigenvalue with real part {} >= 0",
            norms.re_lambda1
        )));
    }
    if !(norms.norm_u0 > 0.0) {
        return Err(Error::InvalidArgument("initial state must be nonzero".into()));
    }
    Ok((norms.norm_u0 * norms.norm_f2 + norms.norm_f0 / norms.norm_u0) / norms.re_lambda1.abs())
}

/// Roots `r₋ ≤ r₊` of `‖F2‖ r² − |Re λ₁| r + ‖F0‖`; `None` when the discriminant is
/// negative or `‖F2‖ = 0`.
pub fn scaling_roots(norms: &SystemNorms) -> Option<(f64, f64)> {
    let a = norms.re_lambda1.abs();
    let disc = a * a - 4.0 * norms.norm_f2 * norms.norm_f0;
    if norms.norm_f2 == 0.0 || disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((a - s) / (2.0 * norms.norm_f2), (a + s) / (2.0 * norms.norm_f2)))
}

/// Scale factor of the substitution `u = ū / γ`.
///
/// With `‖F2‖ > 0` this is `1/sqrt(‖u0‖ r₊)`. With `‖F2‖ = 0` the upper root is
/// infinite and `r₋` degenerates to `‖F0‖/|Re λ₁|`; then `γ = sqrt(r₋/‖u0‖)/‖u0‖`,
/// and `γ = 1/(2‖u0‖)` when `F0` vanishes too.
pub fn rescale_gamma(norms: &SystemNorms) -> Result<f64> {
    let r2 = compute_r2(norms)?;
    if r2 >= 1.0 {
        return Err(Error::PremiseViolated(format!("R2 = {r2} >= 1, rescaling is not guaranteed")));
    }
    let u = norms.norm_u0;
    if norms.norm_f2 == 0.0 {
        let r_minus = norms.norm_f0 / norms.re_lambda1.abs();
        if r_minus == 0.0 {
            return Ok(0.5 / u);
        }
        return Ok((r_minus / u).sqrt() / u);
    }
    let (_, r_plus) = scaling_roots(norms)
        .ok_or_else(|| Error::PremiseViolated("negative discriminant in rescaling".into()))?;
    Ok(1.0 / (u * r_plus).sqrt())
}

/// Returns the system in the variable `ū = γ u` together with `γ`.
pub fn rescale(ode: &QuadOde) -> Result<(QuadOde, f64)> {
    let norms = SystemNorms::of(ode, 1.0)?;
    let gamma = rescale_gamma(&norms)?;
    let f0 = ode.f0().scaled(gamma);
    let f2: SparseMatrix = ode.f2().scale(1.0 / gamma);
    let u0 = ode.u0().iter().map(|v| gamma * v).collect();
    Ok((ode.with_parts(f0, f2, u0), gamma))
}

/// Carleman truncation error bound `t N ‖F2‖ ‖u0‖^{N+1}`.
pub fn truncation_bound(norms: &SystemNorms, level: usize, t: f64) -> f64 {
    t * level as f64 * norms.norm_f2 * norms.norm_u0.powi(level as i32 + 1)
}

/// Forward-Euler error bound on the lifted system after `k` steps of size `h`.
pub fn euler_bound(norms: &SystemNorms, level: usize, k: usize, h: f64) -> f64 {
    let s = norms.norm_f2 + norms.norm_f1 + norms.norm_f0;
    3.0 * (level as f64).powf(2.5) * k as f64 * h * h * (s * s + norms.norm_f0_dot)
}

fn stability_terms(norms: &SystemNorms, level: usize) -> (f64, Option<f64>) {
    let n = level as f64;
    let first = if norms.norm_f1 > 0.0 {
        1.0 / (n * norms.norm_f1)
    } else {
        f64::INFINITY
    };
    let a = norms.re_lambda1.abs();
    let s = norms.norm_f1 + norms.norm_f0;
    let den = n * (a * a - s * s + norms.norm_f1 * norms.norm_f1);
    let second = (den > 0.0).then(|| 2.0 * (a - norms.norm_f2 - norms.norm_f0) / den);
    (first, second)
}

/// Largest Euler step for which [`euler_bound`] applies. The second term is
/// skipped when its denominator is not positive.
pub fn h_max(norms: &SystemNorms, level: usize) -> f64 {
    let (first, second) = stability_terms(norms, level);
    second.map_or(first, |s| first.min(s))
}

/// [`h_max`] further capped by the accuracy term for the Euler error `eps_prime / 2`.
pub fn h_max_accuracy(norms: &SystemNorms, level: usize, horizon: f64, eps_prime: f64) -> f64 {
    let s = norms.norm_f2 + norms.norm_f1 + norms.norm_f0;
    let q = 2.0 * s * s + norms.norm_f0_dot;
    let accuracy = eps_prime * eps_prime / (36.0 * (level as f64).powi(5) * horizon.powi(3) * q * q);
    h_max(norms, level).min(accuracy)
}

/// Smallest admissible truncation level, the least integer above `(1 + α/2)/ln(1/‖u0‖)`.
pub fn min_level(norms: &SystemNorms, alpha: f64) -> Result<usize> {
    if !(norms.norm_u0 < 1.0) {
        return Err(Error::PremiseViolated(format!(
            "‖u0‖ = {} must be below 1; rescale first",
            norms.norm_u0
        )));
    }
    let x = (1.0 + alpha / 2.0) / (1.0 / norms.norm_u0).ln();
    Ok((x.floor() as usize + 1).max(1))
}

/// Bound `3(M + 1)` on the condition number of the stacked Euler system.
pub fn kappa_bound(m_steps: usize) -> f64 {
    3.0 * (m_steps as f64 + 1.0)
}

/// VQLS stopping threshold on the local cost guaranteeing a normalized solution
/// error of at most `eps / 2`.
pub fn vqls_threshold(eps: f64, m_steps: usize, n_c: usize) -> Result<f64> {
    let size = n_c as f64 * (m_steps as f64 + 1.0);
    if !(size > 1.0) {
        return Err(Error::InvalidArgument("system must have more than one entry".into()));
    }
    let q = 1.0 - eps * eps / 8.0;
    Ok((1.0 - q * q) / (9.0 * (m_steps as f64 + 1.0).powi(2) * size.ln()))
}

/// Samples `u(kh)`, `k = 0..=steps`, from a fine RK4 integration.
pub fn reference_trajectory(ode: &QuadOde, horizon: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let fine = integrate_rk4(ode, horizon, steps * REFERENCE_SUBSTEPS)?;
    Ok(fine.into_iter().step_by(REFERENCE_SUBSTEPS).collect())
}

/// `‖w_c‖` over the samples of a trajectory lifted to level `N`.
pub fn lifted_sample_norm(traj: &[Vec<f64>], level: usize) -> f64 {
    traj.iter()
        .map(|u| {
            let s = norm2(u).powi(2);
            (1..=level).map(|i| s.powi(i as i32)).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Stacked exact Carleman samples `w_c = (w(0), …, w(Mh))` at the given states.
pub fn lifted_samples(traj: &[Vec<f64>], level: usize) -> Vec<f64> {
    traj.iter().flat_map(|u| lift_state(u, level)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepSelection {
    pub h: f64,
    pub level: usize,
    pub m_steps: usize,
    pub alpha: f64,
    pub k_const: f64,
    pub eps_prime: f64,
    pub wc_norm: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl StepSelection {
    pub fn delta(&self) -> f64 {
        self.delta1.min(self.delta2)
    }
}

/// Chooses `(h, N)` so that the normalized stacked Euler solution is within `eps`
/// of the normalized exact Carleman samples.
///
/// `h` and `‖w_c‖` depend on each other through the number of steps, so both are
/// iterated until the truncation level stops growing.
pub fn select_h_n(ode: &QuadOde, horizon: f64, eps: f64, alpha: f64) -> Result<StepSelection> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must exceed 1, got {alpha}")));
    }
    if !(eps > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidArgument("eps and horizon must be positive".into()));
    }
    let norms = SystemNorms::of(ode, horizon)?;
    let r2 = compute_r2(&norms)?;
    if r2 >= 1.0 {
        return Err(Error::PremiseViolated(format!("R2 = {r2} >= 1")));
    }
    let mut level = min_level(&norms, alpha)?;
    let u0 = norms.norm_u0;
    let u_t = norm2(reference_trajectory(ode, horizon, 64)?.last().expect("nonempty"));
    let truncation_lhs = |n: usize| n as f64 * norms.norm_f2 * u0.powi(n as i32 + 1) * horizon.powf(1.5);
    loop {
        // h_cap grows with M through ‖w_c‖ while T/M shrinks: take the least valid M
        let fits = |m: usize| -> Result<(bool, f64)> {
            let wc = lifted_sample_norm(&reference_trajectory(ode, horizon, m)?, level);
            let cap = h_max_accuracy(&norms, level, horizon, wc * eps / 2.0);
            Ok((horizon / m as f64 <= cap, wc))
        };
        let mut hi = (horizon / h_max(&norms, level)).ceil().max(1.0) as usize;
        let mut lo = 0;
        while !fits(hi)?.0 {
            lo = hi;
            hi *= 2;
            crate::limits::check("Euler steps", hi as u128, crate::limits::size_cap())?;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if fits(mid)?.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let m_steps = hi;
        let wc_norm = fits(m_steps)?.1;
        let h = horizon / m_steps as f64;
        let eps_prime = wc_norm * eps / 2.0;
        let delta2 = if norms.norm_f2 > 0.0 {
            u_t / (4.0 * horizon * norms.norm_f2 * u0)
        } else {
            f64::INFINITY
        };
        let ok = |n: usize| {
            let nf = n as f64;
            truncation_lhs(n) <= 0.5 * eps_prime * h.sqrt()
                && nf.powf(1.0 + alpha / 2.0) * u0.powi(n as i32) <= delta2
        };
        let mut next = level;
        while !ok(next) {
            next += 1;
            if next > 10_000 {
                return Err(Error::PremiseViolated("no admissible truncation level found".into()));
            }
        }
        if next == level {
            let k_const = h * (level as f64).powf(alpha);
            let delta1 = if norms.norm_f2 > 0.0 {
                eps_prime * k_const.sqrt() / (2.0 * horizon.powf(1.5) * norms.norm_f2 * u0)
            } else {
                f64::INFINITY
            };
            return Ok(StepSelection {
                h,
                level,
                m_steps,
                alpha,
                k_const,
                eps_prime,
                wc_norm,
                delta1,
                delta2,
            });
        }
        level = next;
    }
}

/// Lipschitz constant, global error constant and stability step of classical
/// forward Euler on the nonlinear system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassicalConstants {
    pub lipschitz: f64,
    /// Sampled `max ‖u''(t)‖`.
    pub max_second_derivative: f64,
    pub c: f64,
    pub h0: f64,
}

/// `u''(t) = F0'(t) + F1 u' + F2 (u' ⊗ u + u ⊗ u')`.
fn second_derivative(ode: &QuadOde, t: f64, u: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = ode.n_x();
    let du = ode.eval_rhs(t, u)?;
    let mut out = ode.f1().matvec(&du);
    let mut sym = crate::sparse::kron_vec(&du, u);
    for (s, v) in sym.iter_mut().zip(crate::sparse::kron_vec(u, &du)) {
        *s += v;
    }
    for (o, v) in out.iter_mut().zip(ode.f2().matvec(&sym)) {
        *o += v;
    }
    if ode.f0().is_time_dependent() {
        let a = ode.f0().eval(t + dt, n);
        let b = ode.f0().eval((t - dt).max(0.0), n);
        let span = t + dt - (t - dt).max(0.0);
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o += (x - y) / span;
        }
    }
    Ok(out)
}

pub fn classical_constants(ode: &QuadOde, norms: &SystemNorms, horizon: f64) -> Result<ClassicalConstants> {
    let lipschitz = norms.norm_f1 + 2.0 * norms.norm_u0 * norms.norm_f2;
    let samples = 2048;
    let dt = horizon / samples as f64;
    let traj = reference_trajectory(ode, horizon, samples)?;
    let mut m = 0.0_f64;
    for (k, u) in traj.iter().enumerate() {
        m = m.max(norm2(&second_derivative(ode, k as f64 * dt, u, dt * 1e-3)?));
    }
    let c = if lipschitz > 0.0 {
        m / (2.0 * lipschitz) * (lipschitz * horizon).exp_m1()
    } else {
        m * horizon / 2.0
    };
    let u0 = norms.norm_u0;
    let f_sq = norm2(&ode.eval_rhs(0.0, ode.u0())?).powi(2);
    let margin = norms.norm_f0 + norms.re_lambda1 * u0 + norms.norm_f2 * u0 * u0;
    let h0 = if f_sq > 0.0 { -margin / f_sq * u0 } else { f64::INFINITY };
    Ok(ClassicalConstants {
        lipschitz,
        max_second_derivative: m,
        c,
        h0,
    })
}

/// Asymptotic cost expressions evaluated as plain formulas, without constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComplexityEstimates {
    /// `log^{8.5}(n T⁴/(‖w_c‖²ε²)) · T⁴/(‖w_c‖²ε²) · log(1/ε)`.
    pub quantum: f64,
    /// `s n T² / (‖u_c‖² ε²)`.
    pub classical: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComplexityParams {
    pub n_x: usize,
    pub horizon: f64,
    pub eps: f64,
    pub wc_norm: f64,
    pub uc_norm: f64,
    /// Largest number of nonzeros per row of `F1` and `F2`.
    pub sparsity: usize,
}

pub fn query_complexity_estimates(p: &ComplexityParams) -> ComplexityEstimates {
    let e2 = p.eps * p.eps;
    let q = p.horizon.powi(4) / (p.wc_norm * p.wc_norm * e2);
    let quantum = (p.n_x as f64 * q).ln().max(0.0).powf(8.5) * q * (1.0 / p.eps).ln();
    let classical = p.sparsity as f64 * p.n_x as f64 * p.horizon.powi(2) / (p.uc_norm * p.uc_norm * e2);
    ComplexityEstimates { quantum, classical }
}

fn row_sparsity(m: &SparseMatrix) -> usize {
    (0..m.nrows()).map(|r| m.row(r).count()).max().unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PremiseFlags {
    pub re_lambda1_negative: bool,
    pub r2_below_one: bool,
    pub discriminant_nonnegative: bool,
    pub u0_inside_unit_ball: bool,
    pub step_within_h_max: bool,
    pub truncation_below_quarter_final_norm: bool,
}

impl PremiseFlags {
    pub fn all(&self) -> bool {
        self.re_lambda1_negative
            && self.r2_below_one
            && self.discriminant_nonnegative
            && self.u0_inside_unit_ball
            && self.step_within_h_max
            && self.truncation_below_quarter_final_norm
    }
}

/// Every bound evaluated for one system, truncation level and time grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub norms: SystemNorms,
    pub level: usize,
    pub horizon: f64,
    pub m_steps: usize,
    pub h: f64,
    pub eps: f64,
    pub alpha: f64,
    pub n_c: usize,
    pub r2: Option<f64>,
    pub r_minus: Option<f64>,
    pub r_plus: Option<f64>,
    pub rescale_gamma: Option<f64>,
    pub truncation_bound: f64,
    pub euler_bound: f64,
    pub h_max: f64,
    pub h_max_accuracy: f64,
    pub n_min: Option<usize>,
    pub kappa_bound: f64,
    pub vqls_gamma_threshold: f64,
    pub classical: ClassicalConstants,
    pub complexity: ComplexityEstimates,
    pub wc_norm: f64,
    pub final_state_norm: f64,
    pub premises: PremiseFlags,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// Evaluates all bounds on `ode` for truncation `level` and `n_t` time points on
/// `[0, horizon]`. Violated premises are flagged, not raised.
pub fn bound_report(
    ode: &QuadOde,
    level: usize,
    horizon: f64,
    n_t: usize,
    eps: f64,
    alpha: f64,
) -> Result<BoundReport> {
    if n_t < 2 || level == 0 {
        return Err(Error::InvalidArgument("need n_t >= 2 and level >= 1".into()));
    }
    let norms = SystemNorms::of(ode, horizon)?;
    let m_steps = n_t - 1;
    let h = horizon / m_steps as f64;
    let n_c = lifted_dim(ode.n_x(), level)?;
    let mut warnings = Vec::new();

    let r2 = match compute_r2(&norms) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };
    if let Some(v) = r2.filter(|v| *v >= 1.0) {
        warnings.push(format!("R2 = {v} >= 1: the error bounds are not guaranteed"));
    }
    let roots = scaling_roots(&norms);
    let rescale_gamma = match rescale_gamma(&norms) {
        Ok(g) => Some(g),
        Err(e) => {
            warnings.push(format!("no rescaling: {e}"));
            None
        }
    };
    let n_min = min_level(&norms, alpha).ok();
    if n_min.is_none() {
        warnings.push(format!("‖u0‖ = {} >= 1: no minimal truncation level", norms.norm_u0));
    }

    let traj = reference_trajectory(ode, horizon, m_steps)?;
    let wc_norm = lifted_sample_norm(&traj, level);
    let uc_norm = traj.iter().map(|u| norm2(u).powi(2)).sum::<f64>().sqrt();
    let final_state_norm = norm2(traj.last().expect("nonempty"));
    let eps_prime = wc_norm * eps / 2.0;
    let h_max_v = h_max(&norms, level);
    let truncation = truncation_bound(&norms, level, horizon);

    let premises = PremiseFlags {
        re_lambda1_negative: norms.re_lambda1 < 0.0,
        r2_below_one: r2.is_some_and(|v| v < 1.0),
        discriminant_nonnegative: norms.re_lambda1.powi(2) >= 4.0 * norms.norm_f2 * norms.norm_f0,
        u0_inside_unit_ball: norms.norm_u0 < 1.0,
        step_within_h_max: h <= h_max_v,
        truncation_below_quarter_final_norm: truncation <= final_state_norm / 4.0,
    };
    if !premises.step_within_h_max {
        warnings.push(format!("step h = {h} exceeds h_max = {h_max_v}"));
    }

    Ok(BoundReport {
        norms,
        level,
        horizon,
        m_steps,
        h,
        eps,
        alpha,
        n_c,
        r2,
        r_minus: roots.map(|r| r.0),
        r_plus: roots.map(|r| r.1),
        rescale_gamma,
        truncation_bound: truncation,
        euler_bound: euler_bound(&norms, level, m_steps, h),
        h_max: h_max_v,
        h_max_accuracy: h_max_accuracy(&norms, level, horizon, eps_prime),
        n_min,
        kappa_bound: kappa_bound(m_steps),
        vqls_gamma_threshold: vqls_threshold(eps, m_steps, n_c)?,
        classical: classical_constants(ode, &norms, horizon)?,
        complexity: query_complexity_estimates(&ComplexityParams {
            n_x: ode.n_x(),
            horizon,
            eps,
            wc_norm,
            uc_norm,
            sparsity: row_sparsity(ode.f1()).max(row_sparsity(ode.f2())),
        }),
        wc_norm,
        final_state_norm,
        premises,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carleman::{build_carleman, integrate_lifted_rk4};
    use crate::linsys::{assemble, Scheme};
    use crate::polyode::{discretize_burgers, integrate_euler, BurgersConfig, Forcing};
    use proptest::prelude::*;

    fn scalar(a: f64, b: f64, f0: f64, u0: f64) -> QuadOde {
        let f0 = if f0 == 0.0 {
            Forcing::Zero
        } else {
            Forcing::Constant(vec![f0])
        };
        QuadOde::new(
            f0,
            SparseMatrix::from_triplets(1, 1, [(0, 0, a)]),
            SparseMatrix::from_triplets(1, 1, [(0, 0, b)]),
            vec![u0],
        )
        .unwrap()
    }

    fn contractive() -> QuadOde {
        scalar(-1.0, 0.1, 0.0, 0.5)
    }

    #[test]
    fn r2_of_contractive_scalar() {
        let n = SystemNorms::of(&contractive(), 1.0).unwrap();
        assert!((compute_r2(&n).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(scaling_roots(&n), Some((0.0, 10.0)));
    }

    #[test]
    fn r2_zero_without_nonlinearity_or_forcing() {
        let n = SystemNorms::of(&scalar(-2.0, 0.0, 0.0, 0.3), 1.0).unwrap();
        assert_eq!(compute_r2(&n).unwrap(), 0.0);
    }

    #[test]
    fn r2_of_burgers_instance() {
        let ode = discretize_burgers(&BurgersConfig::default()).unwrap();
        let n = SystemNorms::of(&ode, 0.35).unwrap();
        // tridiagonal eigenvalue 3.5·(2cos(π/5) − 2); F2 has unit-free entries ±5
        let lam = 3.5 * (2.0 * (std::f64::consts::PI / 5.0).cos() - 2.0);
        assert!((n.re_lambda1 - lam).abs() < 1e-10);
        let f2 = ode.f2().to_dense();
        let sv = f2.singular_values().max();
        assert!((n.norm_f2 - sv).abs() < 1e-10);
        let r2 = compute_r2(&n).unwrap();
        assert!((r2 - sv / lam.abs()).abs() < 1e-10);
        assert!((r2 - 5.29).abs() < 0.01, "{r2}");
    }

    #[test]
    fn unstable_linear_part_rejected() {
        let n = SystemNorms::of(&scalar(0.5, 0.1, 0.0, 0.5), 1.0).unwrap();
        assert!(matches!(compute_r2(&n), Err(Error::PremiseViolated(_))));
    }

    #[test]
    fn rescale_meets_post_conditions() {
        let ode = scalar(-1.0, 0.3, 0.2, 1.2);
        let before = SystemNorms::of(&ode, 1.0).unwrap();
        assert!(compute_r2(&before).unwrap() < 1.0);
        let (scaled, gamma) = rescale(&ode).unwrap();
        let after = SystemNorms::of(&scaled, 1.0).unwrap();
        assert!((after.norm_f0 - gamma * before.norm_f0).abs() < 1e-14);
        assert!((after.norm_f2 - before.norm_f2 / gamma).abs() < 1e-14);
        assert!(after.norm_f2 + after.norm_f0 < after.re_lambda1.abs());
        assert!(after.norm_u0 < 1.0);
        assert!((compute_r2(&after).unwrap() - compute_r2(&before).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rescale_without_nonlinearity() {
        let ode = scalar(-1.0, 0.0, 0.4, 2.0);
        let (scaled, _) = rescale(&ode).unwrap();
        let after = SystemNorms::of(&scaled, 1.0).unwrap();
        assert_eq!(after.norm_f2, 0.0);
        assert!(after.norm_f0 < after.re_lambda1.abs());
        assert!(after.norm_u0 < 1.0);
        let (lin, g) = rescale(&scalar(-1.0, 0.0, 0.0, 4.0)).unwrap();
        assert_eq!(g, 0.125);
        assert_eq!(lin.u0(), &[0.5]);
    }

    #[test]
    fn rescale_refuses_large_r2() {
        let ode = discretize_burgers(&BurgersConfig::default()).unwrap();
        assert!(matches!(rescale(&ode), Err(Error::PremiseViolated(_))));
    }

    #[test]
    fn truncation_bound_measured() {
        let ode = contractive();
        let norms = SystemNorms::of(&ode, 1.0).unwrap();
        let exact = integrate_rk4(&ode, 1.0, 4000).unwrap();
        for level in 1..=4 {
            let sys = build_carleman(&ode, level).unwrap();
            let lifted = integrate_lifted_rk4(&sys, 1.0, 4000).unwrap();
            for k in (0..=4000).step_by(250) {
                let t = k as f64 / 4000.0;
                let w = lift_state(&exact[k], level);
                let eta: Vec<f64> = w.iter().zip(&lifted[k]).map(|(a, b)| a - b).collect();
                assert!(norm2(&eta) <= truncation_bound(&norms, level, t) + 1e-12);
            }
        }
    }

    #[test]
    fn truncation_bound_vanishes_with_level() {
        let n = SystemNorms::of(&contractive(), 1.0).unwrap();
        assert!(truncation_bound(&n, 60, 1.0) < 1e-15);
        let unit = SystemNorms { norm_u0: 1.0, ..n };
        assert!((truncation_bound(&unit, 3, 2.0) - 6.0 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn euler_bound_measured_against_matrix_exponential() {
        let ode = contractive();
        let norms = SystemNorms::of(&ode, 1.0).unwrap();
        assert_eq!(euler_bound(&norms, 3, 0, 0.1), 0.0);
        for level in 1..=3 {
            let hm = h_max(&norms, level);
            assert!(hm > 0.0);
            let sys = build_carleman(&ode, level).unwrap();
            let a = sys.a_at(0.0).unwrap().to_dense();
            for m in [8usize, 32] {
                let h = 1.0 / m as f64;
                if h > hm {
                    continue;
                }
                let ls = assemble(&sys, 1.0, m + 1, Scheme::Forward, false).unwrap();
                let w = ls.solve_direct().unwrap().w;
                for k in 0..=m {
                    let exact = (&a * (k as f64 * h)).exp() * nalgebra::DVector::from_column_slice(sys.w0());
                    let diff: Vec<f64> = ls.layout.blocks(&w)[k].iter().zip(exact.iter()).map(|(x, y)| x - y).collect();
                    assert!(norm2(&diff) <= euler_bound(&norms, level, k, h) + 1e-14);
                }
            }
        }
    }

    #[test]
    fn h_max_ignores_nonpositive_denominator() {
        let n = SystemNorms {
            norm_f0: 0.0,
            norm_f1: 1.0,
            norm_f2: 0.1,
            norm_f0_dot: 0.0,
            re_lambda1: -1.0,
            norm_u0: 0.5,
        };
        assert_eq!(h_max(&n, 2), 0.5);
        let flat = SystemNorms { norm_f0: 0.5, ..n };
        // |Re λ₁|² − (‖F1‖+‖F0‖)² + ‖F1‖² = 1 − 2.25 + 1 < 0
        assert_eq!(h_max(&flat, 1), 1.0);
    }

    #[test]
    fn selection_meets_eps() {
        let ode = contractive();
        let sel = select_h_n(&ode, 1.0, 0.1, 2.0).unwrap();
        assert!(sel.level >= 3);
        let sys = build_carleman(&ode, sel.level).unwrap();
        let ls = assemble(&sys, 1.0, sel.m_steps + 1, Scheme::Forward, false).unwrap();
        let sol = ls.solve_direct().unwrap();
        let wc = lifted_samples(&reference_trajectory(&ode, 1.0, sel.m_steps).unwrap(), sel.level);
        let nc = norm2(&wc);
        let err: Vec<f64> = wc.iter().zip(&sol.normalized).map(|(a, b)| a / nc - b).collect();
        assert!(norm2(&err) <= 0.1);
    }

    #[test]
    fn selection_tightens_with_eps() {
        let ode = contractive();
        let a = select_h_n(&ode, 0.5, 0.2, 2.0).unwrap();
        let b = select_h_n(&ode, 0.5, 0.1, 2.0).unwrap();
        assert!(b.h < a.h);
        assert!(b.level >= a.level);
    }

    #[test]
    fn selection_rejects_large_initial_state() {
        let ode = scalar(-1.0, 0.0, 0.0, 1.5);
        assert!(matches!(select_h_n(&ode, 1.0, 0.1, 2.0), Err(Error::PremiseViolated(_))));
    }

    #[test]
    fn vqls_threshold_closed_form() {
        let g = vqls_threshold(1.0, 3, 2).unwrap();
        let expect = (1.0 - (7.0f64 / 8.0).powi(2)) / (9.0 * 16.0 * 8.0f64.ln());
        assert!((g - expect).abs() < 1e-16);
        assert!(g < 1.0);
        assert!(vqls_threshold(0.5, 3, 2).unwrap() < g);
    }

    #[test]
    fn classical_euler_within_ch() {
        let ode = contractive();
        let norms = SystemNorms::of(&ode, 1.0).unwrap();
        let cc = classical_constants(&ode, &norms, 1.0).unwrap();
        assert!((cc.lipschitz - 1.1).abs() < 1e-15);
        assert!(cc.h0 > 0.0);
        for steps in [100usize, 1000] {
            let h = 1.0 / steps as f64;
            let euler = integrate_euler(&ode, 1.0, steps).unwrap();
            let exact = reference_trajectory(&ode, 1.0, steps).unwrap();
            for (a, b) in euler.iter().zip(&exact) {
                assert!((a[0] - b[0]).abs() <= cc.c * h);
            }
        }
    }

    #[test]
    fn classical_lipschitz_without_nonlinearity() {
        let ode = scalar(-3.0, 0.0, 0.0, 0.5);
        let norms = SystemNorms::of(&ode, 1.0).unwrap();
        assert_eq!(classical_constants(&ode, &norms, 1.0).unwrap().lipschitz, 3.0);
    }

    #[test]
    fn complexity_formulas() {
        let p = ComplexityParams {
            n_x: 4,
            horizon: 1.0,
            eps: 0.1,
            wc_norm: 1.0,
            uc_norm: 1.0,
            sparsity: 3,
        };
        let a = query_complexity_estimates(&p);
        let b = query_complexity_estimates(&ComplexityParams { sparsity: 6, ..p });
        assert!((b.classical - 2.0 * a.classical).abs() < 1e-9);
        let t2 = query_complexity_estimates(&ComplexityParams { horizon: 2.0, ..p });
        let log_ratio = ((4.0 * 1600.0f64).ln() / (4.0 * 100.0f64).ln()).powf(8.5);
        assert!((t2.quantum / a.quantum - 16.0 * log_ratio).abs() < 1e-6);
    }

    #[test]
    fn reports_flag_premises() {
        let good = bound_report(&contractive(), 2, 1.0, 9, 0.1, 2.0).unwrap();
        assert!(good.premises.all(), "{:?}", good.premises);
        assert!(good.warnings.is_empty());
        let burgers = discretize_burgers(&BurgersConfig::default()).unwrap();
        let bad = bound_report(&burgers, 2, 0.35, 8, 0.1, 2.0).unwrap();
        assert!(!bad.premises.r2_below_one);
        assert!(bad.r2.unwrap() > 5.0);
        assert!(!bad.warnings.is_empty());
        let v: serde_json::Value = serde_json::from_str(&good.to_json()).unwrap();
        assert!(v["premises"]["r2_below_one"].as_bool().unwrap());
        assert_eq!(v["kappa_bound"].as_f64().unwrap(), 27.0);
    }

    proptest! {
        #[test]
        fn bounds_nonnegative_and_monotone(
            f1 in 0.1f64..5.0, f2 in 0.0f64..2.0, f0 in 0.0f64..2.0, u0 in 0.01f64..3.0,
            level in 1usize..6, t in 0.0f64..3.0, k in 0usize..50, h in 0.0f64..0.5,
        ) {
            let n = SystemNorms { norm_f0: f0, norm_f1: f1, norm_f2: f2, norm_f0_dot: 0.0, re_lambda1: -f1, norm_u0: u0 };
            let tb = truncation_bound(&n, level, t);
            prop_assert!(tb >= 0.0);
            prop_assert!(truncation_bound(&n, level, t + 1.0) >= tb);
            let eb = euler_bound(&n, level, k, h);
            prop_assert!(eb >= 0.0);
            prop_assert!(euler_bound(&n, level, k + 1, h) >= eb);
            prop_assert!(euler_bound(&n, level, k, h + 0.1) >= eb);
            prop_assert!(euler_bound(&n, level + 1, k, h) >= eb);
            if compute_r2(&n).unwrap() < 1.0 {
                let g = rescale_gamma(&n).unwrap();
                let s = SystemNorms { norm_f0: g * f0, norm_f2: f2 / g, norm_u0: g * u0, ..n };
                prop_assert!((compute_r2(&s).unwrap() - compute_r2(&n).unwrap()).abs() < 1e-12);
                prop_assert!(s.norm_u0 < 1.0);
                prop_assert!(s.norm_f2 + s.norm_f0 < f1);
                prop_assert!(h_max(&s, level) > 0.0);
            }
        }
    }
}
