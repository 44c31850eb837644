//! Compressed sparse row matrices with the handful of operations the pipeline needs.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Real CSR matrix. Column indices within a row are sorted and unique; stored values
/// are never exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)))
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed in input order.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        // stable sort keeps the summation order of duplicates deterministic
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut rows = Vec::with_capacity(t.len());
        let mut i = 0;
        while i < t.len() {
            let (r, c, mut v) = t[i];
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) outside {nrows}x{ncols}");
            let mut j = i + 1;
            while j < t.len() && t[j].0 == r && t[j].1 == c {
                v += t[j].2;
                j += 1;
            }
            if v != 0.0 {
                rows.push(r);
                col_idx.push(c);
                values.push(v);
            }
            i = j;
        }
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != 0.0 {
                    t.push((r, c, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        match self.col_idx[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Iterates stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
    }

    /// `selfᵀ x`.
    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * xr;
            }
        }
        y
    }

    pub fn checked_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns, vector has length {}",
                self.ncols,
                x.len()
            )));
        }
        Ok(self.matvec(x))
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.iter().map(|(r, c, v)| (c, r, v)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self::from_triplets(self.nrows, self.ncols, self.iter().map(|(r, c, v)| (r, c, alpha * v)))
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        Self::from_triplets(
            self.nrows,
            self.ncols,
            self.iter()
                .chain(other.iter().map(|(r, c, v)| (r, c, alpha * v))),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        Self::from_triplets(self.nrows, self.ncols, self.iter().chain(other.iter()))
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (p, q) = other.shape();
        let mut t = Vec::with_capacity(self.nnz() * other.nnz());
        for (r, c, v) in self.iter() {
            for (r2, c2, v2) in other.iter() {
                t.push((r * p + r2, c * q + c2, v * v2));
            }
        }
        Self::from_triplets(self.nrows * p, self.ncols * q, t)
    }

    /// Places `self` at `(row_off, col_off)` inside a zero matrix of the given shape.
    pub fn embed(&self, nrows: usize, ncols: usize, row_off: usize, col_off: usize) -> Self {
        assert!(row_off + self.nrows <= nrows && col_off + self.ncols <= ncols);
        Self::from_triplets(
            nrows,
            ncols,
            self.iter().map(|(r, c, v)| (r + row_off, c + col_off, v)),
        )
    }

    /// Extracts the dense sub-block starting at `(row_off, col_off)`.
    pub fn dense_block(&self, row_off: usize, col_off: usize, nrows: usize, ncols: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(nrows, ncols);
        for r in 0..nrows {
            for (c, v) in self.row(row_off + r) {
                if c >= col_off && c < col_off + ncols {
                    m[(r, c - col_off)] = v;
                }
            }
        }
        m
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.add_scaled(-1.0, other)
            .values
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Writes `# rows cols nnz` followed by one `row col value` line per entry (0-based).
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.iter() {
            writeln!(w, "{r} {c} {v:e}")?;
        }
        Ok(())
    }

    /// Parses the output of [`SparseMatrix::write_coordinate`].
    pub fn read_coordinate(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Config {
            line: 1,
            message: "empty coordinate file".into(),
        })?;
        let dims: Vec<usize> = header
            .trim_start_matches('#')
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config {
                line: 1,
                message: format!("bad header: {e}"),
            })?;
        if dims.len() != 3 {
            return Err(Error::Config {
                line: 1,
                message: "header must be '# rows cols nnz'".into(),
            });
        }
        let mut t = Vec::with_capacity(dims[2]);
        for (i, l) in lines {
            let bad = |m: String| Error::Config { line: i + 1, message: m };
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", f.len())));
            }
            let r = f[0].parse::<usize>().map_err(|e| bad(e.to_string()))?;
            let c = f[1].parse::<usize>().map_err(|e| bad(e.to_string()))?;
            let v = f[2].parse::<f64>().map_err(|e| bad(e.to_string()))?;
            if r >= dims[0] || c >= dims[1] {
                return Err(bad(format!("entry ({r},{c}) out of range")));
            }
            t.push((r, c, v));
        }
        Ok(Self::from_triplets(dims[0], dims[1], t))
    }
}

/// Kronecker product of a dense column vector sequence, row-major (`x ⊗ y`).
pub fn kron_vec(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * y.len());
    for &a in x {
        out.extend(y.iter().map(|&b| a * b));
    }
    out
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Spectral norm (largest singular value) of a dense matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // σ_max(M) = sqrt(λ_max(M Mᵀ)) on the smaller Gram side
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    let eig = nalgebra::SymmetricEigen::new(gram);
    eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b)).max(0.0).sqrt()
}
