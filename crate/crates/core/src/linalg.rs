//! Sparse storage and direct solves.
//!
//! Assembly produces a row-compressed matrix that we own and inspect
//! (sign patterns, row sums, matvecs). Factorizations are delegated to
//! faer's sparse LU.

use faer::linalg::solvers::SolveCore;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};

use crate::error::{Error, Result};

/// Accumulates `(row, col, value)` entries; duplicates are summed in
/// insertion order so that identical assembly sequences give bitwise
/// identical matrices.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    pub fn build(self) -> CsrMatrix {
        let n = self.n;
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in &self.entries {
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; self.entries.len()];
        let mut vals = vec![0.0; self.entries.len()];
        for &(r, c, v) in &self.entries {
            let k = fill[r];
            cols[k] = c;
            vals[k] = v;
            fill[r] += 1;
        }
        // Sort each row by column (stable) and merge duplicates.
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(cols.len());
        let mut values = Vec::with_capacity(vals.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|&(c, _)| c);
            let mut iter = scratch.iter().peekable();
            while let Some(&(c, v)) = iter.next() {
                let mut acc = v;
                while let Some(&&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    acc += v2;
                    iter.next();
                }
                col_idx.push(c);
                values.push(acc);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.n, self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.push(j, i, v);
            }
        }
        b.build()
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.n, self.nnz() + self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.push(i, j, v);
            }
            b.push(i, i, shift);
        }
        b.build()
    }

    /// `alpha * self + beta * I`.
    pub fn scaled_plus_identity(&self, alpha: f64, beta: f64) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.n, self.nnz() + self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.push(i, j, alpha * v);
            }
            b.push(i, i, beta);
        }
        b.build()
    }

    /// Largest strictly positive off-diagonal entry, if any.
    pub fn max_offdiagonal(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if i != j && best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((i, j, v));
                }
            }
        }
        best
    }

    /// Gershgorin lower bound `min_i (a_ii - sum_{j != i} |a_ij|)`.
    pub fn gershgorin_lower(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let mut diag = 0.0;
                let mut off = 0.0;
                for (j, v) in self.row(i) {
                    if i == j {
                        diag += v;
                    } else {
                        off += v.abs();
                    }
                }
                diag - off
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                triplets.push(Triplet::new(i, j, v));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| Error::LinearSolveFailure(format!("{e:?}")))
    }

    pub fn lu(&self) -> Result<SparseLu> {
        let mat = self.to_faer()?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::LinearSolveFailure(format!("{e:?}")))?;
        Ok(SparseLu { n: self.n, lu })
    }
}

/// Factorized sparse matrix ready for repeated solves.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) -> Result<()> {
        assert_eq!(rhs.len(), self.n);
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place_with_conj(Conj::No, b.as_mut());
        for (i, r) in rhs.iter_mut().enumerate() {
            let v = b[(i, 0)];
            if !v.is_finite() {
                return Err(Error::LinearSolveFailure(
                    "non-finite solution (singular matrix?)".into(),
                ));
            }
            *r = v;
        }
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyclic(n: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(n);
        for i in 0..n {
            b.push(i, i, 4.0);
            b.push(i, (i + 1) % n, -1.0);
            b.push((i + 1) % n, i, -1.0);
        }
        b.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2);
        b.push(0, 1, 1.0);
        b.push(0, 1, 2.5);
        b.push(1, 0, -1.0);
        let m = b.build();
        assert_eq!(m.get(0, 1), 3.5);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn lu_solves_cyclic_system() {
        let m = cyclic(6);
        let x_true: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let b = m.mul_vec(&x_true);
        let x = m.lu().unwrap().solve(&b).unwrap();
        assert!(sup_diff(&x, &x_true) < 1e-13);
    }

    #[test]
    fn gershgorin_and_offdiagonal() {
        let m = cyclic(5);
        assert_eq!(m.gershgorin_lower(), 2.0);
        assert_eq!(m.max_offdiagonal().unwrap().2, -1.0);
        let t = m.transpose();
        assert_eq!(t, m);
    }
}
