//! Latent Gaussian models at fixed hyperparameters: a Gaussian prior on
//! `x` restricted to `{C x = 0}`, a sparse linear map `η = o + A x`, and a
//! factorising likelihood `Π_c p(y_c | η_c)`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::linalg::{EnvelopeSymbolic, SymSparse};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observation model with its offset folded into `η`.
#[derive(Debug, Clone)]
pub enum Likelihood {
    /// `y ~ Poisson(exp(η))`, `η = log P + A x`.
    Poisson { y: Vec<f64>, offset: Vec<f64> },
    /// `y ~ N(η, v)` with known variance, `η = offset + A x`.
    Gaussian {
        y: Vec<f64>,
        offset: Vec<f64>,
        variance: Vec<f64>,
    },
}

impl Likelihood {
    pub fn n_obs(&self) -> usize {
        match self {
            Likelihood::Poisson { y, .. } | Likelihood::Gaussian { y, .. } => y.len(),
        }
    }

    pub fn offset(&self) -> &[f64] {
        match self {
            Likelihood::Poisson { offset, .. } | Likelihood::Gaussian { offset, .. } => offset,
        }
    }

    /// `log p(y_c | η)`.
    pub fn log_density(&self, c: usize, eta: f64) -> f64 {
        match self {
            Likelihood::Poisson { y, .. } => {
                let y = y[c];
                y * eta - eta.exp() - statrs::function::gamma::ln_gamma(y + 1.0)
            }
            Likelihood::Gaussian { y, variance, .. } => {
                let v = variance[c];
                -0.5 * (y[c] - eta).powi(2) / v - 0.5 * (LN_2PI + v.ln())
            }
        }
    }

    /// First derivative and negated second derivative of the log density.
    pub fn derivatives(&self, c: usize, eta: f64) -> (f64, f64) {
        match self {
            Likelihood::Poisson { y, .. } => {
                let mu = eta.exp();
                (y[c] - mu, mu)
            }
            Likelihood::Gaussian { y, variance, .. } => {
                ((y[c] - eta) / variance[c], 1.0 / variance[c])
            }
        }
    }
}

/// Sparse rows of `A`.
#[derive(Debug, Clone)]
pub struct Design {
    n_cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Design {
    pub fn new(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert!(rows.iter().flatten().all(|&(j, _)| j < n_cols));
        Self { n_cols, rows }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn row_dot(&self, c: usize, x: &[f64]) -> f64 {
        self.rows[c].iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// `A x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows.len()).map(|c| self.row_dot(c, x)).collect()
    }

    /// Envelope layout covering `prior` plus `AᵀA`, with `tail` ordered last.
    pub fn symbolic(&self, prior: &SymSparse, tail: &[usize]) -> Arc<EnvelopeSymbolic> {
        let mut adj = prior.adjacency();
        for row in &self.rows {
            for &(a, _) in row {
                for &(b, _) in row {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for nb in &mut adj {
            nb.sort_unstable();
            nb.dedup();
        }
        Arc::new(EnvelopeSymbolic::analyse(self.n_cols, &adj, tail))
    }
}

/// Everything the inner Laplace step needs at one hyperparameter value.
#[derive(Debug, Clone)]
pub struct LatentProblem<'a> {
    /// Prior precision over all of `x`.
    pub precision: SymSparse,
    /// Log normalising constant of the prior on the constraint set.
    pub log_normalizer: f64,
    /// `k × N` constraint matrix (may have zero rows).
    pub constraints: DMatrix<f64>,
    pub design: &'a Design,
    pub likelihood: &'a Likelihood,
    pub symbolic: Arc<EnvelopeSymbolic>,
}

impl LatentProblem<'_> {
    pub fn dim(&self) -> usize {
        self.precision.n()
    }

    /// `η = o + A x`.
    pub fn predictor(&self, x: &[f64]) -> Vec<f64> {
        let o = self.likelihood.offset();
        (0..self.design.n_rows())
            .map(|c| o[c] + self.design.row_dot(c, x))
            .collect()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.predictor(x)
            .iter()
            .enumerate()
            .map(|(c, &e)| self.likelihood.log_density(c, e))
            .sum()
    }

    /// Prior log density on the constraint set.
    pub fn log_prior(&self, x: &[f64]) -> f64 {
        self.log_normalizer - 0.5 * self.precision.quad_form(x)
    }
}
