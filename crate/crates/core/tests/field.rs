mod common;

use std::sync::Arc;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stcar::field::SpaceTimeField;
use stcar::graph::Graph;
use stcar::structures::{SpatialStructure, StructureKind};

fn field(g: &Arc<Graph>, kind: StructureKind, xi: f64, sigma: f64, r: f64, t: usize) -> SpaceTimeField {
    let s = SpatialStructure::new(kind, g.clone(), Some(xi)).unwrap();
    SpaceTimeField::new(Arc::new(s), sigma, r, t).unwrap()
}

/// Covariance of the field `Z` implied by the joint precision and constraints.
fn implied_field_covariance(f: &SpaceTimeField) -> DMatrix<f64> {
    let q = f.joint_precision().unwrap().to_dense();
    let cov = if f.structure().is_singular() {
        constrained_covariance(&q, &f.constraints())
    } else {
        q.try_inverse().unwrap()
    };
    let n = f.structure().n_areas();
    let t = f.n_years();
    let idx: Vec<usize> = (0..t).flat_map(|s| (0..n).map(move |i| f.field_index(s, i))).collect();
    DMatrix::from_fn(n * t, n * t, |a, b| cov[(idx[a], idx[b])])
}

fn kronecker_oracle(f: &SpaceTimeField) -> DMatrix<f64> {
    let r = f.r();
    let omega = f.structure().covariance_dense().unwrap();
    ar1_correlation(r, f.n_years()).kronecker(&omega) * (f.sigma().powi(2) / (1.0 - r * r))
}

#[test]
fn lcar_path_example_matches_dense_kronecker() {
    let g = Arc::new(Graph::new(3, [(0, 1), (1, 2)]).unwrap());
    let f = field(&g, StructureKind::Lcar, 0.5, 1.0, 0.5, 3);
    let inv = f.joint_precision().unwrap().to_dense().try_inverse().unwrap();
    assert!(max_abs_diff(&inv, &kronecker_oracle(&f)) < 1e-8);
}

#[test]
fn r_zero_is_block_diagonal_and_t1_is_stationary_marginal() {
    let g = Arc::new(Graph::lattice(2, 3).unwrap());
    let s = Arc::new(SpatialStructure::new(StructureKind::Pcar, g, Some(0.6)).unwrap());
    let q = s.precision().to_dense();
    let f = SpaceTimeField::new(s.clone(), 0.7, 0.0, 2).unwrap();
    let joint = f.joint_precision().unwrap().to_dense();
    let expected = DMatrix::<f64>::identity(2, 2).kronecker(&q) / 0.49;
    assert!(max_abs_diff(&joint, &expected) < 1e-12);

    let f1 = SpaceTimeField::new(s, 0.7, 0.4, 1).unwrap();
    let expected = &q * ((1.0 - 0.16) / 0.49);
    assert!(max_abs_diff(&f1.joint_precision().unwrap().to_dense(), &expected) < 1e-12);
}

#[test]
fn constraints_have_one_row_per_year() {
    let g = Arc::new(Graph::lattice(2, 2).unwrap());
    for kind in StructureKind::ALL {
        let f = field(&g, kind, 0.3, 1.0, 0.2, 3);
        let c = f.constraints();
        assert_eq!(c.nrows(), 3);
        for t in 0..3 {
            assert_eq!(c.row(t).sum(), 4.0);
        }
    }
}

#[test]
fn samples_are_reproducible_and_constrained() {
    let g = Arc::new(Graph::lattice(3, 3).unwrap());
    for kind in StructureKind::ALL {
        let f = field(&g, kind, 0.8, 1.3, -0.4, 4);
        let a = f.sample_constrained(&mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = f.sample_constrained(&mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        let cx = f.constraints() * DVector::from_vec(a);
        assert!(cx.amax() < 1e-10, "{kind}");
    }
}

#[test]
fn log_density_matches_dense_constrained_oracle() {
    let g = Arc::new(Graph::new(3, [(0, 1), (1, 2)]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for kind in StructureKind::ALL {
        let f = field(&g, kind, 0.45, 0.8, 0.35, 2);
        let q = f.joint_precision().unwrap().to_dense();
        let c = f.constraints();
        let x = f.sample_constrained(&mut rng).unwrap();
        let y = f.sample_constrained(&mut rng).unwrap();
        let ours = f.log_density(&x).unwrap();
        let dense = constrained_log_density(&x, &q, &c);
        assert!((ours - dense).abs() < 1e-8, "{kind}: {ours} vs {dense}");
        let diff = ours - f.log_density(&y).unwrap();
        let dense_diff = dense - constrained_log_density(&y, &q, &c);
        assert!((diff - dense_diff).abs() < 1e-8, "{kind}");
        let zero = f.log_density(&vec![0.0; x.len()]).unwrap();
        assert!(zero > ours && zero > f.log_density(&y).unwrap());
    }
}

#[test]
fn doubling_sigma_quarters_the_quadratic_term() {
    let g = Arc::new(Graph::lattice(2, 3).unwrap());
    let f1 = field(&g, StructureKind::Lcar, 0.4, 0.9, 0.3, 2);
    let f2 = field(&g, StructureKind::Lcar, 0.4, 1.8, 0.3, 2);
    let x = f1.sample_constrained(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let q1 = f1.joint_precision().unwrap().quad_form(&x);
    let q2 = f2.joint_precision().unwrap().quad_form(&x);
    assert!((q1 / q2 - 4.0).abs() < 1e-12);
}

#[test]
fn stationary_slices_share_their_covariance() {
    let g = Arc::new(Graph::lattice(2, 3).unwrap());
    for kind in StructureKind::ALL {
        let f = field(&g, kind, 0.6, 1.1, 0.7, 4);
        let cov = implied_field_covariance(&f);
        let n = 6;
        let first = cov.view((0, 0), (n, n)).into_owned();
        for t in 1..4 {
            let block = cov.view((t * n, t * n), (n, n)).into_owned();
            assert!(max_abs_diff(&first, &block) < 1e-8, "{kind}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kronecker_identity_holds(
        n in 3usize..=8,
        extra in 0usize..6,
        seed in 0u64..1000,
        t in 1usize..=4,
        kind_idx in 0usize..4,
        xi in 0.0f64..0.95,
        sigma in 0.2f64..2.0,
        r in -0.9f64..0.9,
    ) {
        let g = Arc::new(random_connected_graph(n, extra, seed));
        let f = field(&g, StructureKind::ALL[kind_idx], xi, sigma, r, t);
        let ours = implied_field_covariance(&f);
        let oracle = kronecker_oracle(&f);
        prop_assert!(max_abs_diff(&ours, &oracle) < 1e-8);
    }
}
