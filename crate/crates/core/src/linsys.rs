//! Euler time stepping of a truncated Carleman system written as one block
//! lower-bidiagonal linear system, optionally zero-padded to power-of-two registers.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::carleman::CarlemanSystem;
use crate::error::{Error, Result};
use crate::limits;
use crate::sparse::{norm2, SparseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Forward,
    Backward,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" | "explicit" => Ok(Scheme::Forward),
            "backward" | "implicit" => Ok(Scheme::Backward),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Forward => "forward",
            Scheme::Backward => "backward",
        })
    }
}

/// Position of logical entries inside the stacked (and possibly padded) vector.
///
/// Each time step owns a slot of `slot` entries: `lead` zeros followed by the
/// `n_c` lifted components. Without padding `lead = 0` and `slot = n_c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadMap {
    pub n_c: usize,
    pub slot: usize,
    pub lead: usize,
    pub n_steps: usize,
}

impl PadMap {
    pub fn unpadded(n_c: usize, n_steps: usize) -> Self {
        Self {
            n_c,
            slot: n_c,
            lead: 0,
            n_steps,
        }
    }

    pub fn padded(n_c: usize, n_steps: usize) -> Result<Self> {
        if !n_steps.is_power_of_two() {
            return Err(Error::NotPowerOfTwo {
                what: "n_t",
                value: n_steps,
            });
        }
        let slot = (n_c + 1).next_power_of_two();
        Ok(Self {
            n_c,
            slot,
            lead: slot - n_c,
            n_steps,
        })
    }

    pub fn dim(&self) -> usize {
        self.slot * self.n_steps
    }

    pub fn is_padded(&self) -> bool {
        self.lead > 0
    }

    /// Padded position of lifted index `j` at time step `k`.
    pub fn position(&self, k: usize, j: usize) -> usize {
        k * self.slot + self.lead + j
    }

    pub fn step_range(&self, k: usize) -> std::ops::Range<usize> {
        let s = k * self.slot + self.lead;
        s..s + self.n_c
    }

    /// Qubits addressing one time slot (padded layouts only).
    pub fn slot_qubits(&self) -> u32 {
        self.slot.trailing_zeros()
    }

    pub fn time_qubits(&self) -> u32 {
        self.n_steps.trailing_zeros()
    }

    /// Embeds a lifted-space matrix into one slot.
    pub fn embed_slot(&self, a: &SparseMatrix) -> SparseMatrix {
        a.embed(self.slot, self.slot, self.lead, self.lead)
    }

    /// Splits a stacked vector into its `n_steps` logical blocks.
    pub fn blocks<'a>(&self, w: &'a [f64]) -> Vec<&'a [f64]> {
        (0..self.n_steps).map(|k| &w[self.step_range(k)]).collect()
    }
}

/// `Ã = Ã₁ + ν Ã₂`.
#[derive(Clone, Debug)]
pub struct SystemSplit {
    pub nu: f64,
    pub a1: SparseMatrix,
    pub a2: SparseMatrix,
    /// Slot-embedded `A_N1` and `A_N2` (time-independent systems only).
    pub slot_blocks: Option<(SparseMatrix, SparseMatrix)>,
}

#[derive(Clone, Debug)]
pub struct BlockLinearSystem {
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub scheme: Scheme,
    pub h: f64,
    pub steps: usize,
    pub layout: PadMap,
    pub n_x: usize,
    pub level: usize,
    pub forcing_free: bool,
    pub time_independent: bool,
    pub split: Option<SystemSplit>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub w: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Assembles the stacked Euler system over `n_t` time points (`M = n_t − 1` steps).
pub fn assemble(
    sys: &CarlemanSystem,
    horizon: f64,
    n_t: usize,
    scheme: Scheme,
    pad: bool,
) -> Result<BlockLinearSystem> {
    if n_t < 2 {
        return Err(Error::InvalidArgument(format!("n_t must be at least 2, got {n_t}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let layout = if pad {
        PadMap::padded(sys.n_c(), n_t)?
    } else {
        PadMap::unpadded(sys.n_c(), n_t)
    };
    limits::check("stacked system", layout.dim() as u128, limits::size_cap())?;
    let steps = n_t - 1;
    let h = horizon / steps as f64;
    let constant = sys.is_time_independent();

    let (a, split) = match sys.split() {
        Some(cs) => {
            let a1 = stack(&layout, scheme, h, true, constant, |t| sys.a1_at(t))?;
            let a2 = stack(&layout, scheme, h, false, true, |_| Ok(cs.a2.clone()))?;
            let a = a1.add_scaled(cs.nu, &a2);
            let slot_blocks = if constant {
                Some((layout.embed_slot(&sys.a1_at(0.0)?), layout.embed_slot(&cs.a2)))
            } else {
                None
            };
            (
                a,
                Some(SystemSplit {
                    nu: cs.nu,
                    a1,
                    a2,
                    slot_blocks,
                }),
            )
        }
        None => (stack(&layout, scheme, h, true, constant, |t| sys.a_at(t))?, None),
    };

    let mut b = vec![0.0; layout.dim()];
    b[layout.step_range(0)].copy_from_slice(sys.w0());
    if !sys.forcing().is_zero() {
        for k in 1..n_t {
            let bk = sys.b_at((k - 1) as f64 * h);
            for (dst, v) in b[layout.step_range(k)].iter_mut().zip(bk) {
                *dst = h * v;
            }
        }
    }

    Ok(BlockLinearSystem {
        a,
        b,
        scheme,
        h,
        steps,
        layout,
        n_x: sys.n_x(),
        level: sys.level(),
        forcing_free: sys.forcing().is_zero(),
        time_independent: sys.is_time_independent(),
        split,
    })
}

/// Stacks identity/shift structure (when `with_identity`) plus the `−h A` couplings.
fn stack<F>(
    layout: &PadMap,
    scheme: Scheme,
    h: f64,
    with_identity: bool,
    constant: bool,
    a_at: F,
) -> Result<SparseMatrix>
where
    F: Fn(f64) -> Result<SparseMatrix>,
{
    let (slot, lead, n) = (layout.slot, layout.lead, layout.n_steps);
    let mut t = Vec::new();
    if with_identity {
        for i in 0..layout.dim() {
            t.push((i, i, 1.0));
        }
        for k in 1..n {
            for i in 0..slot {
                t.push((k * slot + i, (k - 1) * slot + i, -1.0));
            }
        }
    }
    let fixed = if constant { Some(a_at(0.0)?) } else { None };
    for k in 1..n {
        // forward couples step k to A at the previous time, backward to the current one
        let (t_k, col_step) = match scheme {
            Scheme::Forward => ((k - 1) as f64 * h, k - 1),
            Scheme::Backward => (k as f64 * h, k),
        };
        let owned;
        let a = match &fixed {
            Some(a) => a,
            None => {
                owned = a_at(t_k)?;
                &owned
            }
        };
        for (r, c, v) in a.iter() {
            t.push((k * slot + lead + r, col_step * slot + lead + c, -h * v));
        }
    }
    Ok(SparseMatrix::from_triplets(layout.dim(), layout.dim(), t))
}

/// Assembles `Ã` directly from `A_N(t)` without using the parameter split.
pub fn assemble_unsplit(sys: &CarlemanSystem, horizon: f64, n_t: usize, scheme: Scheme, pad: bool) -> Result<SparseMatrix> {
    let layout = if pad {
        PadMap::padded(sys.n_c(), n_t)?
    } else {
        PadMap::unpadded(sys.n_c(), n_t)
    };
    let h = horizon / (n_t - 1) as f64;
    stack(&layout, scheme, h, true, sys.is_time_independent(), |t| sys.a_at(t))
}

impl BlockLinearSystem {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Number of qubits of the full register (padded layouts).
    pub fn n_qubits(&self) -> Result<u32> {
        let d = self.dim();
        if !d.is_power_of_two() {
            return Err(Error::NotPowerOfTwo {
                what: "system dimension",
                value: d,
            });
        }
        Ok(d.trailing_zeros())
    }

    fn dense_block(&self, k_row: usize, k_col: usize) -> DMatrix<f64> {
        let s = self.layout.slot;
        self.a.dense_block(k_row * s, k_col * s, s, s)
    }

    /// Block forward substitution over the time steps.
    pub fn solve_direct(&self) -> Result<Solution> {
        let s = self.layout.slot;
        let n = self.layout.n_steps;
        let mut w = vec![0.0; self.dim()];
        let mut lu_cache: Option<(DMatrix<f64>, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)> = None;
        for k in 0..n {
            let mut rhs = nalgebra::DVector::from_column_slice(&self.b[k * s..(k + 1) * s]);
            if k > 0 {
                let prev = nalgebra::DVector::from_column_slice(&w[(k - 1) * s..k * s]);
                rhs -= self.dense_block(k, k - 1) * prev;
            }
            let diag = self.dense_block(k, k);
            let reuse = matches!(&lu_cache, Some((d, _)) if *d == diag);
            if !reuse {
                let lu = diag.clone().lu();
                if !lu.is_invertible() {
                    return Err(Error::SingularBlock { step: k });
                }
                lu_cache = Some((diag, lu));
            }
            let (_, lu) = lu_cache.as_ref().expect("factorization cached above");
            let x = lu.solve(&rhs).ok_or(Error::SingularBlock { step: k })?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularBlock { step: k });
            }
            w[k * s..(k + 1) * s].copy_from_slice(x.as_slice());
        }
        let nrm = norm2(&w);
        let normalized = if nrm > 0.0 {
            w.iter().map(|v| v / nrm).collect()
        } else {
            w.clone()
        };
        Ok(Solution { w, normalized })
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        limits::check("dense system", (d as u128) * (d as u128), limits::size_cap())?;
        Ok(self.a.to_dense())
    }

    /// Spectral condition number `σ_max / σ_min` of `Ã`.
    pub fn condition_number(&self) -> Result<f64> {
        condition_number_dense(&self.to_dense()?)
    }

    /// First-block state `u^k` approximations for every time step.
    pub fn state_trajectory(&self, w: &[f64]) -> Vec<Vec<f64>> {
        self.layout
            .blocks(w)
            .into_iter()
            .map(|blk| blk[..self.n_x].to_vec())
            .collect()
    }

    pub fn write_matrix<W: Write>(&self, w: W) -> std::io::Result<()> {
        self.a.write_coordinate(w)
    }

    pub fn write_rhs<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} 1 {}", self.dim(), self.b.iter().filter(|v| **v != 0.0).count())?;
        for (i, v) in self.b.iter().enumerate() {
            if *v != 0.0 {
                writeln!(w, "{i} 0 {v:e}")?;
            }
        }
        Ok(())
    }

    /// CSV rows `step,index,value` over the logical (unpadded) entries.
    pub fn write_solution_csv<W: Write>(&self, w: &[f64], mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,index,value")?;
        for (k, blk) in self.layout.blocks(w).into_iter().enumerate() {
            for (j, v) in blk.iter().enumerate() {
                writeln!(out, "{k},{j},{v:e}")?;
            }
        }
        Ok(())
    }
}

pub fn condition_number_dense(m: &DMatrix<f64>) -> Result<f64> {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}
