//! Tensor-product decompositions over the sigma basis
//! `{I, σ₊ = |0⟩⟨1|, σ₋ = |1⟩⟨0|, σ₊σ₋ = |0⟩⟨0|, σ₋σ₊ = |1⟩⟨1|}`, plus a Pauli-basis
//! term counter for comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linsys::{BlockLinearSystem, Scheme};
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SigmaOp {
    I,
    /// `σ₊ = |0⟩⟨1|`
    Plus,
    /// `σ₋ = |1⟩⟨0|`
    Minus,
    /// `σ₊σ₋ = |0⟩⟨0|`
    P0,
    /// `σ₋σ₊ = |1⟩⟨1|`
    P1,
}

impl SigmaOp {
    pub fn as_char(self) -> char {
        match self {
            SigmaOp::I => 'I',
            SigmaOp::Plus => '+',
            SigmaOp::Minus => '-',
            SigmaOp::P0 => 'P',
            SigmaOp::P1 => 'M',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            'I' => SigmaOp::I,
            '+' => SigmaOp::Plus,
            '-' => SigmaOp::Minus,
            'P' => SigmaOp::P0,
            'M' => SigmaOp::P1,
            _ => return None,
        })
    }

    /// Operator with a single 1 at `(row_bit, col_bit)`.
    pub fn from_bits(row_bit: bool, col_bit: bool) -> Self {
        match (row_bit, col_bit) {
            (false, false) => SigmaOp::P0,
            (false, true) => SigmaOp::Plus,
            (true, false) => SigmaOp::Minus,
            (true, true) => SigmaOp::P1,
        }
    }

    pub fn matrix(self) -> [[f64; 2]; 2] {
        match self {
            SigmaOp::I => [[1.0, 0.0], [0.0, 1.0]],
            SigmaOp::Plus => [[0.0, 1.0], [0.0, 0.0]],
            SigmaOp::Minus => [[0.0, 0.0], [1.0, 0.0]],
            SigmaOp::P0 => [[1.0, 0.0], [0.0, 0.0]],
            SigmaOp::P1 => [[0.0, 0.0], [0.0, 1.0]],
        }
    }

    /// `(row_bit, col_bit)` fixed by the operator, `None` for the identity.
    fn bits(self) -> Option<(u64, u64)> {
        match self {
            SigmaOp::I => None,
            SigmaOp::Plus => Some((0, 1)),
            SigmaOp::Minus => Some((1, 0)),
            SigmaOp::P0 => Some((0, 0)),
            SigmaOp::P1 => Some((1, 1)),
        }
    }
}

/// Tensor word, most-significant qubit first.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SigmaWord(pub Vec<SigmaOp>);

/// Bit patterns of a word: entries live at rows `r` with `r & mask == row` and
/// columns `(r & !mask) | col`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordPattern {
    pub mask: u64,
    pub row: u64,
    pub col: u64,
    pub n_qubits: u32,
}

impl WordPattern {
    /// Calls `f(row, col)` for every nonzero entry of the word.
    pub fn for_each_entry<F: FnMut(usize, usize)>(&self, mut f: F) {
        let free = !self.mask & ((1u64 << self.n_qubits) - 1);
        let mut sub = 0u64;
        loop {
            f((self.row | sub) as usize, (self.col | sub) as usize);
            sub = sub.wrapping_sub(free) & free;
            if sub == 0 {
                break;
            }
        }
    }
}

impl SigmaWord {
    pub fn identity(n: usize) -> Self {
        SigmaWord(vec![SigmaOp::I; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &SigmaWord) -> SigmaWord {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        SigmaWord(v)
    }

    pub fn pattern(&self) -> WordPattern {
        let n = self.0.len() as u32;
        assert!(n < 64, "words are limited to 63 qubits");
        let (mut mask, mut row, mut col) = (0u64, 0u64, 0u64);
        for (q, op) in self.0.iter().enumerate() {
            let bit = n - 1 - q as u32;
            if let Some((r, c)) = op.bits() {
                mask |= 1 << bit;
                row |= r << bit;
                col |= c << bit;
            }
        }
        WordPattern {
            mask,
            row,
            col,
            n_qubits: n,
        }
    }

    pub fn materialize(&self) -> SparseMatrix {
        let d = 1usize << self.0.len();
        let mut t = Vec::new();
        self.pattern().for_each_entry(|r, c| t.push((r, c, 1.0)));
        SparseMatrix::from_triplets(d, d, t)
    }
}

impl fmt::Display for SigmaWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.0 {
            write!(f, "{}", op.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for SigmaWord {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| {
                SigmaOp::from_char(c)
                    .ok_or_else(|| Error::InvalidArgument(format!("bad sigma character '{c}'")))
            })
            .collect::<Result<Vec<_>>>()
            .map(SigmaWord)
    }
}

/// Weighted sum of sigma words. Coefficients are real: every matrix the pipeline
/// produces is real.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaDecomposition {
    pub n_qubits: usize,
    pub terms: Vec<(f64, SigmaWord)>,
}

impl SigmaDecomposition {
    /// Merges duplicate words and drops zero coefficients; terms are sorted by word.
    pub fn from_terms(n_qubits: usize, terms: impl IntoIterator<Item = (f64, SigmaWord)>) -> Self {
        let mut acc: BTreeMap<SigmaWord, f64> = BTreeMap::new();
        for (c, w) in terms {
            assert_eq!(w.len(), n_qubits, "word width mismatch");
            *acc.entry(w).or_insert(0.0) += c;
        }
        Self {
            n_qubits,
            terms: acc.into_iter().filter(|(_, c)| *c != 0.0).map(|(w, c)| (c, w)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// `Σ αᵢ wordᵢ` as a sparse matrix.
    pub fn to_sparse(&self) -> SparseMatrix {
        let d = self.dim();
        let mut t = Vec::new();
        for (c, w) in &self.terms {
            w.pattern().for_each_entry(|r, col| t.push((r, col, *c)));
        }
        SparseMatrix::from_triplets(d, d, t)
    }

    /// `(Σ αᵢ wordᵢ) x`, applied term by term.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut y = vec![0.0; x.len()];
        for (c, w) in &self.terms {
            w.pattern().for_each_entry(|r, col| y[r] += c * x[col]);
        }
        y
    }

    /// `(Σ αᵢ wordᵢ)ᵀ x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut y = vec![0.0; x.len()];
        for (c, w) in &self.terms {
            w.pattern().for_each_entry(|r, col| y[col] += c * x[r]);
        }
        y
    }

    /// `self + alpha * other` with merged words.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Self {
        assert_eq!(self.n_qubits, other.n_qubits);
        Self::from_terms(
            self.n_qubits,
            self.terms
                .iter()
                .cloned()
                .chain(other.terms.iter().map(|(c, w)| (alpha * c, w.clone()))),
        )
    }

    /// One `coefficient<TAB>word` line per term.
    pub fn write_terms<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (c, word) in &self.terms {
            writeln!(w, "{c:e}\t{word}")?;
        }
        Ok(())
    }

    pub fn read_terms(text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let mut width = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::Config { line: i + 1, message: m };
            let (c, w) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected 'coefficient<TAB>word'".into()))?;
            let c: f64 = c.trim().parse().map_err(|e| bad(format!("{e}")))?;
            let w: SigmaWord = w.trim().parse().map_err(|e: Error| bad(e.to_string()))?;
            if *width.get_or_insert(w.len()) != w.len() {
                return Err(bad("inconsistent word width".into()));
            }
            terms.push((c, w));
        }
        Ok(Self::from_terms(width.unwrap_or(0), terms))
    }
}

fn check_qubits(dim: usize) -> Result<usize> {
    if !dim.is_power_of_two() {
        return Err(Error::NotPowerOfTwo {
            what: "matrix dimension",
            value: dim,
        });
    }
    let n = dim.trailing_zeros() as usize;
    if n >= 63 {
        return Err(Error::InvalidArgument("too many qubits".into()));
    }
    Ok(n)
}

/// One-term decomposition of the matrix with a single entry `v` at `(r, c)`.
pub fn decompose_single_entry(r: usize, c: usize, v: f64, s: usize) -> Result<SigmaDecomposition> {
    if s >= 63 || r >> s != 0 || c >> s != 0 {
        return Err(Error::InvalidArgument(format!(
            "entry ({r},{c}) outside a {s}-qubit register"
        )));
    }
    let word = SigmaWord(
        (0..s)
            .rev()
            .map(|b| SigmaOp::from_bits((r >> b) & 1 == 1, (c >> b) & 1 == 1))
            .collect(),
    );
    Ok(SigmaDecomposition::from_terms(s, [(v, word)]))
}

/// Exact decomposition by quadrant recursion. Diagonal quadrants recurse under
/// `σ₊σ₋`/`σ₋σ₊` prefixes and terms shared with equal coefficients collapse to an
/// `I` prefix; off-diagonal quadrants recurse under `σ₊`/`σ₋`.
pub fn decompose_structured(m: &SparseMatrix) -> Result<SigmaDecomposition> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "matrix must be square, got {:?}",
            m.shape()
        )));
    }
    let n = check_qubits(m.nrows())?;
    let entries: Vec<(usize, usize, f64)> = m.iter().collect();
    let terms = recurse(&entries, n);
    Ok(SigmaDecomposition::from_terms(
        n,
        terms.into_iter().map(|(w, c)| (c, SigmaWord(w))),
    ))
}

type Terms = BTreeMap<Vec<SigmaOp>, f64>;

fn recurse(entries: &[(usize, usize, f64)], k: usize) -> Terms {
    let mut out = Terms::new();
    if entries.is_empty() {
        return out;
    }
    if k == 0 {
        let v: f64 = entries.iter().map(|e| e.2).sum();
        if v != 0.0 {
            out.insert(Vec::new(), v);
        }
        return out;
    }
    let half = 1usize << (k - 1);
    let mut quads: [Vec<(usize, usize, f64)>; 4] = Default::default();
    for &(r, c, v) in entries {
        let q = ((r >= half) as usize) << 1 | (c >= half) as usize;
        quads[q].push((r & (half - 1), c & (half - 1), v));
    }
    let prefixed = |out: &mut Terms, op: SigmaOp, terms: Terms| {
        for (w, c) in terms {
            let mut word = Vec::with_capacity(k);
            word.push(op);
            word.extend(w);
            out.insert(word, c);
        }
    };
    let d00 = recurse(&quads[0], k - 1);
    let mut d11 = recurse(&quads[3], k - 1);
    for (w, c) in d00 {
        match d11.get(&w) {
            Some(&c1) if c1 == c => {
                d11.remove(&w);
                let mut word = vec![SigmaOp::I];
                word.extend(w);
                out.insert(word, c);
            }
            _ => {
                let mut word = vec![SigmaOp::P0];
                word.extend(w);
                out.insert(word, c);
            }
        }
    }
    prefixed(&mut out, SigmaOp::P1, d11);
    prefixed(&mut out, SigmaOp::Plus, recurse(&quads[1], k - 1));
    prefixed(&mut out, SigmaOp::Minus, recurse(&quads[2], k - 1));
    out
}

/// Sub-diagonal time shift `Σ_k |k+1⟩⟨k|` on `t` qubits as `t` words
/// `I^(t−ℓ) ⊗ σ₋ ⊗ σ₊^(ℓ−1)`.
pub fn shift_words(t: usize) -> Vec<SigmaWord> {
    (1..=t)
        .map(|l| {
            let mut w = vec![SigmaOp::I; t - l];
            w.push(SigmaOp::Minus);
            w.extend(std::iter::repeat_n(SigmaOp::Plus, l - 1));
            SigmaWord(w)
        })
        .collect()
}

/// Decompositions of `Ã₁` and `Ã₂` for a split, padded system.
///
/// Time-independent systems use the closed forms built from the slot blocks
/// `A_N1`, `A_N2`; otherwise the stacked matrices are decomposed directly.
pub fn decompose_pipeline(sys: &BlockLinearSystem) -> Result<(SigmaDecomposition, SigmaDecomposition)> {
    let split = sys.split.as_ref().ok_or(Error::MissingSplit("decompose_pipeline"))?;
    let n_total = check_qubits(sys.dim())?;
    let slot_q = check_qubits(sys.layout.slot)?;
    let t = check_qubits(sys.layout.n_steps)?;
    let Some((a1, a2)) = &split.slot_blocks else {
        return Ok((decompose_structured(&split.a1)?, decompose_structured(&split.a2)?));
    };
    let h = sys.h;
    let d1 = decompose_structured(a1)?;
    let d2 = decompose_structured(a2)?;
    let id_t = SigmaWord::identity(t);
    let p0_t = SigmaWord(vec![SigmaOp::P0; t]);
    let shifts = shift_words(t);

    let mut t1: Vec<(f64, SigmaWord)> = vec![(1.0, SigmaWord::identity(n_total))];
    for s in &shifts {
        t1.push((-1.0, s.concat(&SigmaWord::identity(slot_q))));
    }
    let coupling = |d: &SigmaDecomposition, out: &mut Vec<(f64, SigmaWord)>| match sys.scheme {
        Scheme::Backward => {
            for (a, w) in &d.terms {
                out.push((-h * a, id_t.concat(w)));
                out.push((h * a, p0_t.concat(w)));
            }
        }
        Scheme::Forward => {
            for s in &shifts {
                for (a, w) in &d.terms {
                    out.push((-h * a, s.concat(w)));
                }
            }
        }
    };
    coupling(&d1, &mut t1);
    let mut t2 = Vec::new();
    coupling(&d2, &mut t2);
    Ok((
        SigmaDecomposition::from_terms(n_total, t1),
        SigmaDecomposition::from_terms(n_total, t2),
    ))
}

/// Upper bound on the `Ã₂` term count: `2 (N + N (N+1) log₂ n_x)`.
pub fn a2_count_bound(n_x: usize, level: usize) -> f64 {
    let s = (n_x as f64).log2();
    let n = level as f64;
    2.0 * (n + n * (n + 1.0) * s)
}

/// Upper bound on the `Ã₁` term count:
/// `log₂ n_t + 1 + 2 (C n_x / (n_x − 1)²)(n_x^N − 1 − N (n_x − 1))` with `C = 2`.
pub fn a1_count_bound(n_x: usize, n_t: usize, level: usize) -> f64 {
    let c = 2.0;
    let nx = n_x as f64;
    let inner = nx.powi(level as i32) - 1.0 - level as f64 * (nx - 1.0);
    (n_t as f64).log2() + 1.0 + 2.0 * (c * nx / ((nx - 1.0) * (nx - 1.0))) * inner
}

/// Default largest dimension accepted by [`pauli_term_count`].
pub const PAULI_MAX_DIM: usize = 1 << 8;

/// Number of Pauli words with coefficient magnitude above `tol` in the expansion of
/// `m`. For each X-pattern `x` the coefficients over Z-patterns are the Walsh–Hadamard
/// transform of the diagonal `c ↦ m[c ⊕ x, c]`.
pub fn pauli_term_count(m: &SparseMatrix, max_dim: usize, tol: f64) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch("matrix must be square".into()));
    }
    let d = m.nrows();
    check_qubits(d)?;
    if d > max_dim {
        return Err(Error::SizeCapExceeded {
            what: "Pauli expansion",
            requested: d as u128,
            cap: max_dim,
        });
    }
    let mut by_x: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (r, c, v) in m.iter() {
        by_x.entry(r ^ c).or_insert_with(|| vec![0.0; d])[c] = v;
    }
    let mut count = 0;
    for (_, mut v) in by_x {
        walsh_hadamard(&mut v);
        count += v.iter().filter(|c| (**c / d as f64).abs() > tol).count();
    }
    Ok(count)
}

fn walsh_hadamard(v: &mut [f64]) {
    let mut len = 1;
    while len < v.len() {
        for i in (0..v.len()).step_by(2 * len) {
            for j in i..i + len {
                let (a, b) = (v[j], v[j + len]);
                v[j] = a + b;
                v[j + len] = a - b;
            }
        }
        len *= 2;
    }
}
