//! Nested Laplace inference for the space-time Poisson model.

mod fit;
mod laplace;
mod latent;
mod model;
mod waic;

pub use fit::{fit, FitOptions, FitResult, GridPoint, Marginal};
pub use laplace::{laplace_inner, InnerOptions, InnerResult};
pub use latent::{Design, LatentProblem, Likelihood};
pub use model::{Hyper, HyperName, MixingPriorSpec, ModelSpec, PcSpec, PoissonModel};
pub use waic::{waic, WaicReport};

/// Multiplicative effect of a coefficient on the rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRatio {
    pub ratio: f64,
    pub percent_change: f64,
}

pub fn rate_ratio(effect: f64) -> RateRatio {
    let ratio = effect.exp();
    RateRatio {
        ratio,
        percent_change: 100.0 * (ratio - 1.0),
    }
}
