//! Synthetic panels drawn from the full generative model.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::graph::Graph;
use crate::structures::{SpatialStructure, StructureKind};

/// Largest linear predictor accepted before the Poisson mean overflows in
/// practice.
pub const MAX_ETA: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum GraphSource {
    Lattice { rows: usize, cols: usize },
    EdgeList { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum CovariateGenerator {
    /// Independent standard normal values per area (time-constant), except
    /// the last `time_varying` columns, which are redrawn every year.
    Random { time_varying: usize },
    /// The first covariate is the second Laplacian eigenvector (unit sample
    /// sd) plus `N(0, noise_sd²)` noise, and the field gains
    /// `field_weight` times the same eigenvector in every year. Any further
    /// covariates are random and time-constant.
    Confounded { noise_sd: f64, field_weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub graph: GraphSource,
    pub years: usize,
    pub first_year: i64,
    pub kind: StructureKind,
    /// Field scale; `0` switches the latent field off.
    pub sigma: f64,
    pub r: f64,
    /// Mixing parameter (ignored for ICAR).
    pub xi: f64,
    /// Effects of the standardized covariates.
    pub beta: Vec<f64>,
    /// Per-year intercepts; a single value is used for every year.
    pub intercepts: Vec<f64>,
    pub covariates: CovariateGenerator,
    pub population_range: (f64, f64),
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::Lattice { rows: 10, cols: 10 },
            years: 4,
            first_year: 2019,
            kind: StructureKind::Bym,
            sigma: 0.5,
            r: 0.6,
            xi: 0.7,
            beta: vec![0.3, -0.2],
            intercepts: vec![-7.0, -6.9, -7.1, -7.0],
            covariates: CovariateGenerator::Random { time_varying: 0 },
            population_range: (1e3, 1e5),
            seed: 1,
        }
    }
}

/// Ground truth written next to a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SimConfig,
    pub covariate_names: Vec<String>,
    pub intercepts: Vec<f64>,
    /// `z_{i,t}` indexed `t·n + i`.
    pub field: Vec<f64>,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: Dataset,
    pub graph: Arc<Graph>,
    pub truth: Truth,
}

impl Simulation {
    /// Writes `counts.csv`, `adjacency.txt` and `truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dataset.write_csv(&dir.join("counts.csv"))?;
        let adj = dir.join("adjacency.txt");
        std::fs::write(&adj, self.graph.to_edge_list()).map_err(|e| Error::io(&adj, e))?;
        let truth = dir.join("truth.json");
        let text = serde_json::to_string_pretty(&self.truth)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        std::fs::write(&truth, text + "\n").map_err(|e| Error::io(&truth, e))
    }
}

fn check(cfg: &SimConfig) -> Result<()> {
    let (lo, hi) = cfg.population_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::Invalid(format!("population range ({lo}, {hi}) must be positive")));
    }
    if cfg.years == 0 {
        return Err(Error::domain("years", 0.0, "years >= 1"));
    }
    if !(cfg.intercepts.len() == 1 || cfg.intercepts.len() == cfg.years) {
        return Err(Error::Invalid(format!(
            "{} intercepts given for {} years",
            cfg.intercepts.len(),
            cfg.years
        )));
    }
    if let CovariateGenerator::Random { time_varying } = cfg.covariates {
        if time_varying > cfg.beta.len() {
            return Err(Error::Invalid("more time-varying covariates than effects".into()));
        }
    }
    if let CovariateGenerator::Confounded { noise_sd, .. } = cfg.covariates {
        if cfg.beta.is_empty() || !(noise_sd >= 0.0) {
            return Err(Error::Invalid(
                "confounded scenario needs at least one effect and noise_sd >= 0".into(),
            ));
        }
    }
    Ok(())
}

pub fn simulate(cfg: &SimConfig) -> Result<Simulation> {
    check(cfg)?;
    let graph = Arc::new(match &cfg.graph {
        GraphSource::Lattice { rows, cols } => Graph::lattice(*rows, *cols)?,
        GraphSource::EdgeList { path } => Graph::from_path(path, None)?,
    });
    let n = graph.n();
    let t = cfg.years;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let mut z = if cfg.sigma == 0.0 {
        vec![0.0; n * t]
    } else {
        let xi = cfg.kind.has_mixing().then_some(cfg.xi);
        let structure = Arc::new(SpatialStructure::new(cfg.kind, graph.clone(), xi)?);
        let field = SpaceTimeField::new(structure, cfg.sigma, cfg.r, t)?;
        let x = field.sample_constrained(&mut rng)?;
        (0..t)
            .flat_map(|s| (0..n).map(move |i| (s, i)))
            .map(|(s, i)| x[field.field_index(s, i)])
            .collect()
    };

    let p = cfg.beta.len();
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(p);
    match cfg.covariates {
        CovariateGenerator::Random { time_varying } => {
            for k in 0..p {
                if k >= p - time_varying {
                    raw.push((0..n * t).map(|_| std_normal.sample(&mut rng)).collect());
                } else {
                    let a: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut rng)).collect();
                    raw.push((0..t).flat_map(|_| a.iter().copied()).collect());
                }
            }
        }
        CovariateGenerator::Confounded {
            noise_sd,
            field_weight,
        } => {
            let e2: Vec<f64> = graph.spectrum()?.laplacian_vecs.column(1).iter().copied().collect();
            // unit sample sd: the eigenvector is centred with norm 1
            let e2: Vec<f64> = e2.iter().map(|v| v * ((n - 1) as f64).sqrt()).collect();
            let a: Vec<f64> = e2
                .iter()
                .map(|v| v + noise_sd * std_normal.sample(&mut rng))
                .collect();
            raw.push((0..t).flat_map(|_| a.iter().copied()).collect());
            for s in 0..t {
                for i in 0..n {
                    z[s * n + i] += field_weight * e2[i];
                }
            }
            for _ in 1..p {
                let a: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut rng)).collect();
                raw.push((0..t).flat_map(|_| a.iter().copied()).collect());
            }
        }
    }

    let (lo, hi) = cfg.population_range;
    let population: Vec<f64> = (0..n * t)
        .map(|_| rng.random_range(lo.ln()..=hi.ln()).exp().round().max(1.0))
        .collect();
    let intercepts: Vec<f64> = (0..t)
        .map(|s| cfg.intercepts[if cfg.intercepts.len() == 1 { 0 } else { s }])
        .collect();
    let names: Vec<String> = (0..p).map(|k| format!("x{}", k + 1)).collect();

    // η uses the standardized covariates, matching the fitted model
    let placeholder = Dataset::new(
        n,
        (0..t as i64).map(|s| cfg.first_year + s).collect(),
        vec![0; n * t],
        population.clone(),
        names.iter().cloned().zip(raw.iter().cloned()).collect(),
    )?;
    let mut eta = Vec::with_capacity(n * t);
    for s in 0..t {
        for i in 0..n {
            let c = s * n + i;
            let lin: f64 = placeholder
                .covariates()
                .iter()
                .zip(&cfg.beta)
                .map(|(cv, b)| b * cv.values[c])
                .sum();
            let e = intercepts[s] + lin + z[c];
            if e > MAX_ETA {
                return Err(Error::Invalid(format!(
                    "linear predictor {e:.2} exceeds {MAX_ETA} at area {i}, year index {s}; use smaller effects or σ"
                )));
            }
            eta.push(e);
        }
    }
    let counts: Vec<u64> = eta
        .iter()
        .zip(&population)
        .map(|(e, p)| {
            let mean = p * e.exp();
            if mean > 0.0 {
                Poisson::new(mean).map(|d| d.sample(&mut rng) as u64).map_err(|e| Error::Numerical(e.to_string()))
            } else {
                Ok(0)
            }
        })
        .collect::<Result<_>>()?;

    let dataset = Dataset::new(
        n,
        placeholder.years().to_vec(),
        counts,
        population,
        names.iter().cloned().zip(raw).collect(),
    )?;
    Ok(Simulation {
        dataset,
        graph,
        truth: Truth {
            config: cfg.clone(),
            covariate_names: names,
            intercepts,
            field: z,
            eta,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_determinism() {
        let cfg = SimConfig {
            graph: GraphSource::Lattice { rows: 4, cols: 4 },
            ..SimConfig::default()
        };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn overflow_is_rejected() {
        let cfg = SimConfig {
            graph: GraphSource::Lattice { rows: 3, cols: 3 },
            intercepts: vec![40.0],
            ..SimConfig::default()
        };
        assert!(matches!(simulate(&cfg), Err(Error::Invalid(_))));
    }
}
