use stcar::graph::Graph;
use stcar::simulate::{simulate, CovariateGenerator, GraphSource, SimConfig};
use stcar::structures::StructureKind;

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, (var / v.len() as f64).sqrt())
}

fn big_panel(beta: Vec<f64>, intercepts: Vec<f64>) -> SimConfig {
    SimConfig {
        graph: GraphSource::Lattice { rows: 50, cols: 50 },
        years: 40,
        sigma: 0.0,
        beta,
        intercepts,
        covariates: CovariateGenerator::Random { time_varying: 1 },
        seed: 99,
        ..SimConfig::default()
    }
}

#[test]
fn poisson_mean_identity_without_field() {
    let sim = simulate(&big_panel(vec![0.3, -0.2], vec![-7.0])).unwrap();
    let d = &sim.dataset;
    assert_eq!(d.n_cells(), 100_000);
    let ratios: Vec<f64> = sim
        .truth
        .eta
        .iter()
        .zip(d.counts())
        .zip(d.population())
        .map(|((e, &y), p)| y as f64 / (p * e.exp()))
        .collect();
    let (m, se) = mean_and_se(&ratios);
    assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");
}

#[test]
fn null_effects_recover_the_base_rate() {
    let mu = 2e-3;
    let sim = simulate(&big_panel(vec![0.0], vec![f64::ln(mu)])).unwrap();
    let d = &sim.dataset;
    let rates: Vec<f64> = d.counts().iter().zip(d.population()).map(|(&y, p)| y as f64 / p).collect();
    let (m, se) = mean_and_se(&rates);
    assert!((m - mu).abs() < 3.0 * se, "{m} ± {se}");
}

fn moran(z: &[f64], g: &Graph) -> f64 {
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    let d: Vec<f64> = z.iter().map(|v| v - m).collect();
    let num: f64 = g.edges().iter().map(|&(a, b)| 2.0 * d[a] * d[b]).sum();
    let w = 2.0 * g.edges().len() as f64;
    n / w * num / d.iter().map(|v| v * v).sum::<f64>()
}

#[test]
fn spatial_autocorrelation_increases_with_mixing() {
    for kind in [StructureKind::Lcar, StructureKind::Pcar, StructureKind::Bym] {
        let avg: Vec<f64> = [0.0, 0.5, 0.95]
            .iter()
            .map(|&xi| {
                (0..20u64)
                    .map(|seed| {
                        let sim = simulate(&SimConfig { kind, xi, seed, ..SimConfig::default() }).unwrap();
                        let n = sim.graph.n();
                        (0..4).map(|t| moran(&sim.truth.field[t * n..(t + 1) * n], &sim.graph)).sum::<f64>() / 4.0
                    })
                    .sum::<f64>()
                    / 20.0
            })
            .collect();
        assert!(avg[0] < avg[1] && avg[1] < avg[2], "{kind}: {avg:?}");
    }
}

#[test]
fn writes_dataset_graph_and_truth() {
    let sim = simulate(&SimConfig { graph: GraphSource::Lattice { rows: 3, cols: 4 }, ..SimConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sim.write(dir.path()).unwrap();
    let (d, g) = stcar::data::load_dataset(&dir.path().join("counts.csv"), None, &dir.path().join("adjacency.txt")).unwrap();
    assert_eq!(d, sim.dataset);
    assert_eq!(g.edges(), sim.graph.edges());
    let truth: stcar::simulate::Truth =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth, sim.truth);
}
