//! WAIC from posterior draws: grid points are drawn by weight, then the
//! latent vector from the Gaussian approximation at that point. The
//! pointwise density is the conditional `p(y_c | η_c)` given each draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::FitResult;
use super::laplace::{laplace_inner, InnerOptions};
use super::model::PoissonModel;
use crate::error::{Error, Result};

/// Draw counts below this give an unreliable variance term.
pub const MIN_RECOMMENDED_DRAWS: usize = 100;

const BATCHES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaicReport {
    pub waic: f64,
    pub lppd: f64,
    pub p_eff: f64,
    /// Monte-Carlo standard error of `waic` from batch means.
    pub mc_se: f64,
    pub draws: usize,
    pub seed: u64,
    pub few_draws: bool,
}

/// Log-sum-exp of `v` minus `log |v|`.
fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

fn waic_of(rows: &[&Vec<f64>], n_obs: usize) -> (f64, f64) {
    let mut lppd = 0.0;
    let mut p = 0.0;
    let s = rows.len() as f64;
    let mut col = vec![0.0; rows.len()];
    for c in 0..n_obs {
        for (k, r) in rows.iter().enumerate() {
            col[k] = r[c];
        }
        lppd += log_mean_exp(&col);
        let mean = col.iter().sum::<f64>() / s;
        p += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0);
    }
    (lppd, p)
}

pub fn waic(model: &PoissonModel, fit: &FitResult, draws: usize, seed: u64) -> Result<WaicReport> {
    if draws < 2 {
        return Err(Error::Invalid("WAIC needs at least two draws".into()));
    }
    let few_draws = draws < MIN_RECOMMENDED_DRAWS;
    if few_draws {
        log::warn!("{draws} WAIC draws is below {MIN_RECOMMENDED_DRAWS}; the Monte-Carlo error is large");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = fit.points.iter().map(|g| g.weight).collect();
    let index = WeightedIndex::new(&weights).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut counts = vec![0usize; fit.points.len()];
    for _ in 0..draws {
        counts[index.sample(&mut rng)] += 1;
    }
    let point_seeds: Vec<u64> = (0..fit.points.len()).map(|_| rng.random()).collect();

    let lik = model.likelihood();
    let n_obs = lik.n_obs();
    let per_point: Vec<Vec<Vec<f64>>> = fit
        .points
        .par_iter()
        .zip(counts.par_iter())
        .zip(point_seeds.par_iter())
        .filter(|((_, &k), _)| k > 0)
        .map(|((g, &k), &s)| -> Result<Vec<Vec<f64>>> {
            let problem = model.problem(g.hyper)?;
            let inner = laplace_inner(&problem, Some(&g.mode), InnerOptions::default())?;
            let mut prng = ChaCha8Rng::seed_from_u64(s);
            Ok((0..k)
                .map(|_| {
                    let x = inner.gaussian.sample(Some(&inner.mode), &mut prng);
                    problem
                        .predictor(&x)
                        .iter()
                        .enumerate()
                        .map(|(c, &e)| lik.log_density(c, e))
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<Vec<f64>> = per_point.into_iter().flatten().collect();
    // shuffle so batches mix grid points
    for i in (1..rows.len()).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }

    let all: Vec<&Vec<f64>> = rows.iter().collect();
    let (lppd, p_eff) = waic_of(&all, n_obs);
    let waic = -2.0 * (lppd - p_eff);

    let batch = draws / BATCHES;
    let mc_se = if batch >= 2 {
        let vals: Vec<f64> = (0..BATCHES)
            .map(|b| {
                let part: Vec<&Vec<f64>> = rows[b * batch..(b + 1) * batch].iter().collect();
                let (l, p) = waic_of(&part, n_obs);
                -2.0 * (l - p)
            })
            .collect();
        let m = vals.iter().sum::<f64>() / BATCHES as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
        (var / BATCHES as f64).sqrt()
    } else {
        f64::INFINITY
    };

    Ok(WaicReport {
        waic,
        lppd,
        p_eff,
        mc_se,
        draws,
        seed,
        few_draws,
    })
}
