use nalgebra::DMatrix;

/// Symmetric sparse matrix stored as its lower triangle in compressed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparse {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymSparse {
    /// Builds from `(i, j, v)` triplets. Either triangle may be supplied;
    /// `(i, j)` and `(j, i)` address the same entry and duplicates are summed.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = triplets
            .into_iter()
            .map(|(i, j, v)| if i >= j { (i, j, v) } else { (j, i, v) })
            .collect();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            assert!(i < n, "row {i} out of range for n = {n}");
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(j);
            vals.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored lower-triangle entries.
    pub fn nnz_lower(&self) -> usize {
        self.vals.len()
    }

    /// Lower-triangle entries `(i, j, v)` with `j <= i`.
    pub fn iter_lower(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.vals[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (i, j, v) in self.iter_lower() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n);
        self.iter_lower()
            .map(|(i, j, v)| {
                if i == j {
                    v * x[i] * x[i]
                } else {
                    2.0 * v * x[i] * x[j]
                }
            })
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Returns `self + eps * I`.
    pub fn with_added_diagonal(&self, eps: f64) -> Self {
        Self::from_triplets(
            self.n,
            self.iter_lower().chain((0..self.n).map(|i| (i, i, eps))),
        )
    }

    /// Off-diagonal adjacency pattern, both directions.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (i, j, _) in self.iter_lower() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        adj
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter_lower() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// Kronecker product `a ⊗ b` of two symmetric sparse matrices.
    pub fn kron(a: &SymSparse, b: &SymSparse) -> Self {
        let nb = b.n;
        let mut trip = Vec::with_capacity(a.nnz_lower() * b.nnz_lower() * 2);
        for (i, j, va) in a.iter_lower() {
            for (k, l, vb) in b.iter_lower() {
                let v = va * vb;
                trip.push((i * nb + k, j * nb + l, v));
                if i != j && k != l {
                    // lower × upper block entry that the symmetric storage would miss
                    trip.push((i * nb + l, j * nb + k, v));
                }
            }
        }
        Self::from_triplets(a.n * nb, trip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_across_triangles() {
        let m = SymSparse::from_triplets(2, [(0, 1, 1.0), (1, 0, 2.0), (0, 0, 1.0)]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 3.0);
        assert_eq!(m.nnz_lower(), 2);
    }

    #[test]
    fn kron_matches_dense() {
        let a = SymSparse::from_triplets(2, [(0, 0, 2.0), (1, 0, -1.0), (1, 1, 3.0)]);
        let b = SymSparse::from_triplets(
            3,
            [(0, 0, 1.0), (1, 0, 0.5), (2, 1, -0.25), (1, 1, 4.0), (2, 2, 2.0)],
        );
        let k = SymSparse::kron(&a, &b).to_dense();
        let dense = a.to_dense().kronecker(&b.to_dense());
        assert!((k - dense).abs().max() < 1e-15);
    }

    #[test]
    fn quad_form_and_mul_vec_agree() {
        let a = SymSparse::from_triplets(3, [(0, 0, 2.0), (1, 0, -1.0), (1, 1, 3.0), (2, 2, 1.0)]);
        let x = [1.0, -2.0, 0.5];
        let ax = a.mul_vec(&x);
        let q: f64 = ax.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((q - a.quad_form(&x)).abs() < 1e-14);
    }
}
