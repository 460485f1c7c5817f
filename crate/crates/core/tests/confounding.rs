mod common;

use common::random_connected_graph;
use proptest::prelude::*;
use stcar::confounding::{apply_filter, spatial_plus_filter, FilterSpec};
use stcar::data::Dataset;
use stcar::graph::Graph;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_an_orthogonal_projection(
        n in 4usize..30,
        extra in 0usize..20,
        seed in 0u64..10_000,
        x in proptest::collection::vec(-5.0f64..5.0, 30),
        kfrac in 0.0f64..1.0,
    ) {
        let g = random_connected_graph(n, extra, seed);
        let s = g.spectrum().unwrap();
        let x = &x[..n];
        let k = 1 + ((n - 2) as f64 * kfrac) as usize;
        let f = spatial_plus_filter(x, s, k).unwrap();
        for j in 0..k {
            let dot: f64 = s.laplacian_vecs.column(j).iter().zip(&f).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() < 1e-10);
        }
        let twice = spatial_plus_filter(&f, s, k).unwrap();
        for (a, b) in twice.iter().zip(&f) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let mut prev = norm(x);
        for kk in 1..n {
            let r = norm(&spatial_plus_filter(x, s, kk).unwrap());
            prop_assert!(r <= prev + 1e-12);
            prev = r;
        }
    }
}

#[test]
fn centred_column_keeps_zero_mean() {
    let g = Graph::lattice(4, 4).unwrap();
    let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
    let m = x.iter().sum::<f64>() / 16.0;
    let x: Vec<f64> = x.iter().map(|v| v - m).collect();
    let f = spatial_plus_filter(&x, g.spectrum().unwrap(), 5).unwrap();
    assert!(f.iter().sum::<f64>().abs() < 1e-12);
}

fn panel() -> (Dataset, Graph) {
    let g = Graph::lattice(4, 5).unwrap();
    let n = 20;
    let t = 3;
    let constant: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64).sqrt()).collect();
    let a: Vec<f64> = (0..t).flat_map(|_| constant.iter().copied()).collect();
    let b: Vec<f64> = (0..n * t).map(|c| (c as f64 * 1.3).cos() + 0.01 * c as f64).collect();
    let c: Vec<f64> = (0..n * t).map(|c| (c as f64 * 0.41).sin()).collect();
    let d = Dataset::new(
        n,
        vec![2001, 2002, 2003],
        (0..n * t).map(|c| (c % 5) as u64).collect(),
        vec![500.0; n * t],
        vec![("a".into(), a), ("b".into(), b), ("c".into(), c)],
    )
    .unwrap();
    (d, g)
}

#[test]
fn apply_filter_touches_only_named_columns() {
    let (d, g) = panel();
    let s = g.spectrum().unwrap();
    let (same, rec) = apply_filter(&d, &FilterSpec { covariates: vec![], k: 3 }, s).unwrap();
    assert_eq!(same, d);
    assert!(rec.is_empty());

    let spec = FilterSpec { covariates: vec!["a".into(), "b".into()], k: 4 };
    let (f, rec) = apply_filter(&d, &spec, s).unwrap();
    assert_eq!(f.covariate("c").unwrap(), d.covariate("c").unwrap());
    assert_eq!(rec.len(), 2);
    let a = f.covariate("a").unwrap();
    assert!(a.time_constant);
    let once = spatial_plus_filter(&d.covariate("a").unwrap().values[..20], s, 4).unwrap();
    for t in 0..3 {
        for i in 0..20 {
            assert!((a.raw[t * 20 + i] - once[i]).abs() < 1e-14);
        }
    }
    // per-year filtering of the time-varying column
    let b = f.covariate("b").unwrap();
    for t in 0..3 {
        let fy = spatial_plus_filter(&d.covariate("b").unwrap().values[t * 20..(t + 1) * 20], s, 4).unwrap();
        for i in 0..20 {
            assert!((b.raw[t * 20 + i] - fy[i]).abs() < 1e-14);
        }
    }
    // re-standardized
    let mean = b.values.iter().sum::<f64>() / 60.0;
    let var = b.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 59.0;
    assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
    assert!((rec[1].back_transform(rec[1].scale * 0.4) - 0.4).abs() < 1e-15);

    let bad = FilterSpec { covariates: vec!["zzz".into()], k: 2 };
    assert!(apply_filter(&d, &bad, s).is_err());
    let too_many = FilterSpec { covariates: vec!["a".into()], k: 20 };
    assert!(apply_filter(&d, &too_many, s).is_err());
}
