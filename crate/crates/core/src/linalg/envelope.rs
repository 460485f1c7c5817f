//! Profile (envelope) Cholesky factorization of sparse symmetric positive
//! definite matrices, with a reverse Cuthill–McKee ordering to keep the
//! profile narrow.
//!
//! With `P` the ordering permutation, the factor satisfies `P A Pᵀ = L Lᵀ`.
//! Row `i` of `L` is stored densely from its first structural nonzero column
//! to the diagonal; fill only ever occurs inside that envelope.

use std::sync::Arc;

use super::ordering::reverse_cuthill_mckee;
use super::sparse::SymSparse;
use crate::error::{Error, Result};

/// Ordering and envelope layout, shared by every matrix with the same pattern.
#[derive(Debug, Clone)]
pub struct EnvelopeSymbolic {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `iperm[old] = new`
    iperm: Vec<usize>,
    /// first stored column of each (new) row
    first: Vec<usize>,
    /// offset of each (new) row in the value array
    start: Vec<usize>,
}

impl EnvelopeSymbolic {
    /// Analyses the union of the given patterns. Indices listed in `tail` are
    /// kept at the end of the ordering (typically dense fixed-effect rows).
    pub fn analyse(n: usize, adjacency: &[Vec<usize>], tail: &[usize]) -> Self {
        assert_eq!(adjacency.len(), n);
        let perm = reverse_cuthill_mckee(adjacency, tail);
        Self::with_permutation(n, adjacency, perm)
    }

    pub fn with_permutation(n: usize, adjacency: &[Vec<usize>], perm: Vec<usize>) -> Self {
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old_i, nb) in adjacency.iter().enumerate() {
            let i = iperm[old_i];
            for &old_j in nb {
                let j = iperm[old_j];
                if j < i && j < first[i] {
                    first[i] = j;
                } else if i < j && i < first[j] {
                    first[j] = i;
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for i in 0..n {
            start.push(acc);
            acc += i - first[i] + 1;
        }
        start.push(acc);
        Self {
            n,
            perm,
            iperm,
            first,
            start,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries in the factor.
    pub fn envelope_size(&self) -> usize {
        self.start[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    #[inline]
    fn slot(&self, i_new: usize, j_new: usize) -> Option<usize> {
        let (i, j) = if i_new >= j_new {
            (i_new, j_new)
        } else {
            (j_new, i_new)
        };
        (j >= self.first[i]).then(|| self.start[i] + j - self.first[i])
    }
}

/// A symmetric matrix being assembled inside a fixed envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeMatrix {
    sym: Arc<EnvelopeSymbolic>,
    vals: Vec<f64>,
}

impl EnvelopeMatrix {
    pub fn zeros(sym: Arc<EnvelopeSymbolic>) -> Self {
        let vals = vec![0.0; sym.envelope_size()];
        Self { sym, vals }
    }

    /// Adds `v` to entry `(i, j)` (original indexing; symmetric, so add each
    /// off-diagonal pair once). Panics if the entry lies outside the envelope.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let slot = self
            .sym
            .slot(self.sym.iperm[i], self.sym.iperm[j])
            .unwrap_or_else(|| panic!("entry ({i}, {j}) lies outside the analysed pattern"));
        self.vals[slot] += v;
    }

    pub fn add_sparse(&mut self, a: &SymSparse, scale: f64) {
        for (i, j, v) in a.iter_lower() {
            self.add(i, j, scale * v);
        }
    }

    pub fn factorize(self) -> Result<EnvelopeCholesky> {
        let sym = self.sym;
        let mut l = self.vals;
        let n = sym.n;
        for i in 0..n {
            let fi = sym.first[i];
            let si = sym.start[i];
            for j in fi..i {
                let fj = sym.first[j];
                let sj = sym.start[j];
                let k0 = fi.max(fj);
                let len = j - k0;
                let dot = dot(
                    &l[si + k0 - fi..si + k0 - fi + len],
                    &l[sj + k0 - fj..sj + k0 - fj + len],
                );
                let djj = l[sj + j - fj];
                l[si + j - fi] = (l[si + j - fi] - dot) / djj;
            }
            let row = &l[si..si + i - fi];
            let d = l[si + i - fi] - dot(row, row);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "pivot {d:e} at row {} (original index {})",
                    i, sym.perm[i]
                )));
            }
            l[si + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky { sym, vals: l })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky factor of a permuted sparse SPD matrix.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    sym: Arc<EnvelopeSymbolic>,
    vals: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Analyses and factors in one step; convenient for one-off matrices.
    pub fn factor(a: &SymSparse) -> Result<Self> {
        let sym = Arc::new(EnvelopeSymbolic::analyse(a.n(), &a.adjacency(), &[]));
        let mut m = EnvelopeMatrix::zeros(sym);
        m.add_sparse(a, 1.0);
        m.factorize()
    }

    pub fn n(&self) -> usize {
        self.sym.n
    }

    pub fn symbolic(&self) -> &Arc<EnvelopeSymbolic> {
        &self.sym
    }

    #[inline]
    fn diag(&self, i: usize) -> f64 {
        self.vals[self.sym.start[i] + i - self.sym.first[i]]
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.sym.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// Solves `A x = b` (original indexing).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.sym.n);
        let mut y: Vec<f64> = self.sym.perm.iter().map(|&old| b[old]).collect();
        self.forward_in_place(&mut y);
        self.backward_in_place(&mut y);
        let mut x = vec![0.0; self.sym.n];
        for (new, &old) in self.sym.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Returns `x` with `x ~ N(0, A⁻¹)` when `w ~ N(0, I)`: solves `Lᵀ y = w`
    /// and undoes the permutation.
    pub fn solve_transposed_factor(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.sym.n);
        let mut y = w.to_vec();
        self.backward_in_place(&mut y);
        let mut x = vec![0.0; self.sym.n];
        for (new, &old) in self.sym.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    fn forward_in_place(&self, y: &mut [f64]) {
        let sym = &self.sym;
        for i in 0..sym.n {
            let fi = sym.first[i];
            let si = sym.start[i];
            let s = dot(&self.vals[si..si + i - fi], &y[fi..i]);
            y[i] = (y[i] - s) / self.vals[si + i - fi];
        }
    }

    fn backward_in_place(&self, y: &mut [f64]) {
        let sym = &self.sym;
        for i in (0..sym.n).rev() {
            let fi = sym.first[i];
            let si = sym.start[i];
            let xi = y[i] / self.vals[si + i - fi];
            y[i] = xi;
            for (k, lik) in (fi..i).zip(&self.vals[si..si + i - fi]) {
                y[k] -= lik * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn lattice_precision(side: usize) -> SymSparse {
        let n = side * side;
        let mut trip = Vec::new();
        for r in 0..side {
            for c in 0..side {
                let i = r * side + c;
                trip.push((i, i, 4.5));
                if c + 1 < side {
                    trip.push((i + 1, i, -1.0));
                }
                if r + 1 < side {
                    trip.push((i + side, i, -1.0));
                }
            }
        }
        SymSparse::from_triplets(n, trip)
    }

    #[test]
    fn solve_and_logdet_match_dense() {
        let a = lattice_precision(6);
        let chol = EnvelopeCholesky::factor(&a).unwrap();
        let dense = a.to_dense();
        let dchol = dense.clone().cholesky().unwrap();
        let logdet_dense = 2.0 * dchol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        assert!((chol.log_det() - logdet_dense).abs() < 1e-10);

        let b: Vec<f64> = (0..a.n()).map(|i| (i as f64).sin()).collect();
        let x = chol.solve(&b);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_factor_solve_gives_inverse_covariance() {
        let a = lattice_precision(3);
        let n = a.n();
        let chol = EnvelopeCholesky::factor(&a).unwrap();
        // Σ = Σ_k x_k x_kᵀ with x_k = L⁻ᵀ e_k (in permuted coordinates)
        let mut cov = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let x = chol.solve_transposed_factor(&e);
            let xv = nalgebra::DVector::from_vec(x);
            cov += &xv * xv.transpose();
        }
        let inv = a.to_dense().try_inverse().unwrap();
        assert!((cov - inv).abs().max() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = SymSparse::from_triplets(2, [(0, 0, 1.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(
            EnvelopeCholesky::factor(&a),
            Err(Error::NotPositiveDefinite(_))
        ));
    }
}
