//! Dense reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use stcar::field::SpaceTimeField;
use stcar::graph::Graph;
use stcar::inference::{Design, LatentProblem, Likelihood};
use stcar::linalg::SymSparse;
use stcar::structures::{SpatialStructure, StructureKind};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Orthonormal basis of `{x : C x = 0}` (columns).
pub fn null_basis(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.ncols();
    if c.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let cct = (c * c.transpose()).try_inverse().unwrap();
    let p = DMatrix::identity(n, n) - c.transpose() * cct * c;
    let eig = SymmetricEigen::new(p);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&k| eig.eigenvalues[k] > 0.5)
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Covariance of `N(0, Q⁻¹)` conditioned on `C x = 0`, valid whenever `Q`
/// is positive definite on that subspace.
pub fn constrained_covariance(q: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let nb = null_basis(c);
    let inner = (nb.transpose() * q * &nb).try_inverse().unwrap();
    &nb * inner * nb.transpose()
}

/// Log density on `{C x = 0}` with respect to Lebesgue measure there.
pub fn constrained_log_density(x: &[f64], q: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let nb = null_basis(c);
    let inner = nb.transpose() * q * &nb;
    let logdet = inner.clone().cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
    let xv = DVector::from_column_slice(x);
    -0.5 * (xv.transpose() * q * &xv)[(0, 0)] + 0.5 * logdet - 0.5 * inner.nrows() as f64 * LN_2PI
}

/// Log density of `N(mean, cov)`.
pub fn gaussian_log_density(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().unwrap();
    let r = y - mean;
    let sol = chol.solve(&r);
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * r.dot(&sol) - 0.5 * logdet - 0.5 * y.len() as f64 * LN_2PI
}

/// AR(1) correlation matrix `R_st = r^|s−t|`.
pub fn ar1_correlation(r: f64, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |i, j| r.powi((i as i32 - j as i32).abs()))
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected_graph(n: usize, extra: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    Graph::new(n, edges).unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Field on a small lattice plus two fixed effects, Gaussian observations
/// of `z + Xβ` with known noise.
pub struct Surrogate {
    pub field: SpaceTimeField,
    pub design: Design,
    pub likelihood: Likelihood,
    pub p: usize,
    pub fixed_var: f64,
}

pub fn surrogate(kind: StructureKind) -> Surrogate {
    let g = Arc::new(Graph::lattice(3, 3).unwrap());
    let s = Arc::new(SpatialStructure::new(kind, g, Some(0.6)).unwrap());
    let field = SpaceTimeField::new(s, 0.8, 0.5, 2).unwrap();
    let n = 9;
    let nf = field.dim();
    let p = 2;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut offset = Vec::new();
    let mut variance = Vec::new();
    for t in 0..2 {
        for i in 0..n {
            let c = (t * n + i) as f64;
            rows.push(vec![
                (field.field_index(t, i), 1.0),
                (nf, 1.0),
                (nf + 1, (0.7 * c).sin()),
            ]);
            y.push(1.5 + (1.3 * c).cos());
            offset.push(0.1 * (c * 0.37).sin());
            variance.push(0.3 + 0.05 * (i % 3) as f64);
        }
    }
    Surrogate {
        design: Design::new(nf + p, rows),
        likelihood: Likelihood::Gaussian { y, offset, variance },
        field,
        p,
        fixed_var: 1e3,
    }
}

pub fn problem(s: &Surrogate) -> LatentProblem<'_> {
    let q = s.field.joint_precision().unwrap();
    let nf = q.n();
    let precision = SymSparse::from_triplets(
        nf + s.p,
        q.iter_lower().chain((nf..nf + s.p).map(|i| (i, i, 1.0 / s.fixed_var))),
    );
    let cf = s.field.constraints();
    let mut constraints = DMatrix::zeros(cf.nrows(), nf + s.p);
    constraints.view_mut((0, 0), (cf.nrows(), nf)).copy_from(&cf);
    let tail: Vec<usize> = (nf..nf + s.p).collect();
    let symbolic = s.design.symbolic(&precision, &tail);
    LatentProblem {
        log_normalizer: s.field.log_normalizer().unwrap()
            - 0.5 * s.p as f64 * (s.fixed_var.ln() + LN_2PI),
        precision,
        constraints,
        design: &s.design,
        likelihood: &s.likelihood,
        symbolic,
    }
}

/// Checks the Laplace result for a Gaussian surrogate against the
/// conjugate closed form; returns the largest discrepancy.
pub fn conjugate_discrepancy(s: &Surrogate) -> f64 {
    use stcar::inference::{laplace_inner, InnerOptions};
    let prob = problem(s);
    let res = laplace_inner(&prob, None, InnerOptions::default()).unwrap();
    let nx = prob.dim();
    let q = prob.precision.to_dense();
    let prior_cov = constrained_covariance(&q, &prob.constraints);
    let a = DMatrix::from_fn(s.design.n_rows(), nx, |c, j| {
        s.design.rows()[c].iter().filter(|e| e.0 == j).map(|e| e.1).sum()
    });
    let Likelihood::Gaussian { y, offset, variance } = &s.likelihood else { unreachable!() };
    let y = DVector::from_column_slice(y);
    let o = DVector::from_column_slice(offset);
    let v = DMatrix::from_diagonal(&DVector::from_column_slice(variance));
    let ycov = &a * &prior_cov * a.transpose() + v;
    let mut worst = (res.log_marginal - gaussian_log_density(&y, &o, &ycov)).abs();
    let gain = &prior_cov * a.transpose() * ycov.clone().try_inverse().unwrap();
    let mean = &gain * (&y - &o);
    let post_cov = &prior_cov - &gain * &a * &prior_cov;
    for j in 0..nx {
        worst = worst.max((res.mode[j] - mean[j]).abs());
        worst = worst.max((res.gaussian.marginal_variance(j) - post_cov[(j, j)]).abs());
    }
    worst
}

/// `L⁺` through `(L + 11ᵀ/n)⁻¹ − 11ᵀ/n`, valid for connected graphs.
pub fn dense_laplacian_pinv(g: &Graph) -> DMatrix<f64> {
    let n = g.n();
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let l = g.degree_dense() - g.adjacency_dense();
    (l + &j).try_inverse().unwrap() - j
}

/// `L⁺` scaled so that the geometric mean of its diagonal is one.
pub fn dense_scaled_pinv(g: &Graph) -> DMatrix<f64> {
    let p = dense_laplacian_pinv(g);
    let gm = (p.diagonal().iter().map(|d| d.ln()).sum::<f64>() / g.n() as f64).exp();
    p / gm
}

/// Spatial covariance `Ω` of each structure built from the adjacency alone.
pub fn dense_structure_covariance(kind: StructureKind, g: &Graph, xi: f64) -> DMatrix<f64> {
    let n = g.n();
    let w = g.adjacency_dense();
    let d = g.degree_dense();
    let eye = DMatrix::<f64>::identity(n, n);
    match kind {
        StructureKind::Icar => dense_laplacian_pinv(g),
        StructureKind::Pcar => (d - w * xi).try_inverse().unwrap(),
        StructureKind::Lcar => ((d - w) * xi + &eye * (1.0 - xi)).try_inverse().unwrap(),
        StructureKind::Bym => dense_scaled_pinv(g) * xi + eye * (1.0 - xi),
    }
}

/// Gaussian KLD `½[tr(Σ₀⁻¹Σ₁) − N − ln(|Σ₁|/|Σ₀|)]` by LU.
pub fn gaussian_kld(base: &DMatrix<f64>, flexible: &DMatrix<f64>) -> f64 {
    let m = base.clone().try_inverse().unwrap() * flexible;
    let n = base.nrows() as f64;
    0.5 * (m.trace() - n - m.determinant().ln())
}
