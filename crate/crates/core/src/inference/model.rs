//! Poisson space-time regression: `y_{i,t} ~ Poisson(P_{i,t} e^{η_{i,t}})`,
//! `η_{i,t} = β_{0,t} + X_{i,t} β + z_{i,t}`.
//!
//! Latent vector layout: the space-time field (slice-major, see
//! [`SpaceTimeField`]) followed by the fixed effects.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::latent::{Design, LatentProblem, Likelihood};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::graph::Graph;
use crate::linalg::{EnvelopeSymbolic, SymSparse};
use crate::pc_prior::{MixingPrior, PcPrior, PcTarget, PriorContext, TailReading};
use crate::structures::{SpatialStructure, StructureKind, XI_UPPER_CLAMP};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// PC prior tail condition `P(θ ≤ U) = α` (on `|r|` for the AR(1) target
/// under the default reading).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcSpec {
    pub u: f64,
    pub alpha: f64,
}

impl PcSpec {
    pub const fn new(u: f64, alpha: f64) -> Self {
        Self { u, alpha }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MixingPriorSpec {
    Uniform,
    Pc { u: f64, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: StructureKind,
    pub sigma_prior: PcSpec,
    pub r_prior: PcSpec,
    pub r_reading: TailReading,
    pub xi_prior: MixingPriorSpec,
    /// Covariates entering the model; `None` uses every column.
    pub covariates: Option<Vec<String>>,
    pub per_year_intercepts: bool,
    pub fixed_prior_variance: f64,
    /// Hold σ, r or ξ at a value instead of integrating over it.
    pub fixed_sigma: Option<f64>,
    pub fixed_r: Option<f64>,
    pub fixed_xi: Option<f64>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: StructureKind::Bym,
            sigma_prior: PcSpec::new(0.5f64.sqrt(), 0.9),
            r_prior: PcSpec::new(0.4, 0.8),
            r_reading: TailReading::Absolute,
            xi_prior: MixingPriorSpec::Pc {
                u: 0.5,
                alpha: 2.0 / 3.0,
            },
            covariates: None,
            per_year_intercepts: true,
            fixed_prior_variance: 1e3,
            fixed_sigma: None,
            fixed_r: None,
            fixed_xi: None,
        }
    }
}

impl ModelSpec {
    pub fn with_kind(kind: StructureKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Hyperparameters on their natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub sigma: f64,
    pub r: f64,
    /// Mixing parameter; `None` for ICAR.
    pub xi: Option<f64>,
}

/// Which hyperparameters are free, in the order (σ, r, ξ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HyperName {
    Sigma,
    R,
    Xi,
}

pub struct PoissonModel {
    spec: ModelSpec,
    graph: Arc<Graph>,
    n: usize,
    t: usize,
    years: Vec<i64>,
    slice_dim: usize,
    fixed_names: Vec<String>,
    design: Design,
    likelihood: Likelihood,
    symbolic: Arc<EnvelopeSymbolic>,
    sigma_prior: PcPrior,
    r_prior: PcPrior,
    xi_prior: Option<MixingPrior>,
    free: Vec<HyperName>,
}

impl std::fmt::Debug for PoissonModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonModel")
            .field("spec", &self.spec)
            .field("n", &self.n)
            .field("t", &self.t)
            .field("fixed_names", &self.fixed_names)
            .finish_non_exhaustive()
    }
}

impl PoissonModel {
    pub fn new(dataset: &Dataset, graph: Arc<Graph>, spec: ModelSpec) -> Result<Self> {
        dataset.check_graph(&graph)?;
        if !(spec.fixed_prior_variance > 0.0 && spec.fixed_prior_variance.is_finite()) {
            return Err(Error::domain(
                "fixed_prior_variance",
                spec.fixed_prior_variance,
                "(0, inf)",
            ));
        }
        let n = dataset.n_areas();
        let t = dataset.n_years();
        let kind = spec.kind;
        let slice_dim = if kind == StructureKind::Bym { 2 * n } else { n };
        let n_field = t * slice_dim;

        let covs: Vec<&crate::data::Covariate> = match &spec.covariates {
            None => dataset.covariates().iter().collect(),
            Some(names) => names
                .iter()
                .map(|nm| dataset.covariate(nm))
                .collect::<Result<_>>()?,
        };
        let mut fixed_names = Vec::new();
        if spec.per_year_intercepts {
            fixed_names.extend(dataset.years().iter().map(|y| format!("intercept_{y}")));
        } else {
            fixed_names.push("intercept".to_string());
        }
        let n_int = fixed_names.len();
        fixed_names.extend(covs.iter().map(|c| c.name.clone()));
        let p = fixed_names.len();
        let dim = n_field + p;

        let mut rows = Vec::with_capacity(n * t);
        let mut y = Vec::with_capacity(n * t);
        let mut offset = Vec::with_capacity(n * t);
        for tt in 0..t {
            for i in 0..n {
                let c = tt * n + i;
                let mut row = vec![(tt * slice_dim + i, 1.0)];
                row.push((n_field + if spec.per_year_intercepts { tt } else { 0 }, 1.0));
                for (k, cov) in covs.iter().enumerate() {
                    row.push((n_field + n_int + k, cov.values[c]));
                }
                rows.push(row);
                y.push(dataset.counts()[c] as f64);
                offset.push(dataset.population()[c].ln());
            }
        }
        let design = Design::new(dim, rows);
        let likelihood = Likelihood::Poisson { y, offset };

        let spectrum = graph.spectrum()?;
        let ctx = PriorContext {
            n,
            t,
            spectrum: Some(spectrum),
        };
        let sigma_prior = PcPrior::calibrate(
            PcTarget::Sigma,
            spec.sigma_prior.u,
            spec.sigma_prior.alpha,
            ctx,
        )?;
        let r_prior = PcPrior::calibrate_with(
            PcTarget::R,
            spec.r_prior.u,
            spec.r_prior.alpha,
            ctx,
            spec.r_reading,
        )?;
        let xi_prior = match (PcTarget::for_structure(kind), spec.xi_prior) {
            (None, _) => None,
            (Some(_), MixingPriorSpec::Uniform) => Some(MixingPrior::Uniform),
            (Some(target), MixingPriorSpec::Pc { u, alpha }) => {
                Some(MixingPrior::Pc(PcPrior::calibrate(target, u, alpha, ctx)?))
            }
        };

        if let Some(s) = spec.fixed_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::domain("sigma", s, "(0, inf)"));
            }
        }
        if let Some(r) = spec.fixed_r {
            if !(r.abs() < 1.0) {
                return Err(Error::domain("r", r, "(-1, 1)"));
            }
        }
        if let Some(xi) = spec.fixed_xi {
            crate::structures::check_mixing(xi)?;
        }
        let mut free = Vec::new();
        if spec.fixed_sigma.is_none() {
            free.push(HyperName::Sigma);
        }
        if spec.fixed_r.is_none() {
            free.push(HyperName::R);
        }
        if kind.has_mixing() && spec.fixed_xi.is_none() {
            free.push(HyperName::Xi);
        }

        // pattern is independent of the hyperparameter values
        let probe = Self::field_for(&graph, kind, Hyper { sigma: 1.0, r: 0.5, xi: Some(0.5) }, t)?;
        let prior = Self::full_precision(&probe, p, spec.fixed_prior_variance)?;
        let tail: Vec<usize> = (n_field..dim).collect();
        let symbolic = design.symbolic(&prior, &tail);

        Ok(Self {
            spec,
            graph,
            n,
            t,
            years: dataset.years().to_vec(),
            slice_dim,
            fixed_names,
            design,
            likelihood,
            symbolic,
            sigma_prior,
            r_prior,
            xi_prior,
            free,
        })
    }

    fn field_for(graph: &Arc<Graph>, kind: StructureKind, h: Hyper, t: usize) -> Result<SpaceTimeField> {
        let xi = if kind.has_mixing() { h.xi } else { None };
        let s = SpatialStructure::new(kind, graph.clone(), xi)?;
        SpaceTimeField::new(Arc::new(s), h.sigma, h.r, t)
    }

    fn full_precision(field: &SpaceTimeField, p: usize, var: f64) -> Result<SymSparse> {
        let q = field.joint_precision()?;
        let nf = q.n();
        Ok(SymSparse::from_triplets(
            nf + p,
            q.iter_lower().chain((nf..nf + p).map(|i| (i, i, 1.0 / var))),
        ))
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> StructureKind {
        self.spec.kind
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn n_areas(&self) -> usize {
        self.n
    }

    pub fn n_years(&self) -> usize {
        self.t
    }

    pub fn years(&self) -> &[i64] {
        &self.years
    }

    pub fn slice_dim(&self) -> usize {
        self.slice_dim
    }

    pub fn n_field(&self) -> usize {
        self.t * self.slice_dim
    }

    pub fn dim(&self) -> usize {
        self.design.n_cols()
    }

    pub fn fixed_names(&self) -> &[String] {
        &self.fixed_names
    }

    /// Position of fixed effect `k` in the latent vector.
    pub fn fixed_index(&self, k: usize) -> usize {
        self.n_field() + k
    }

    /// Position of `z_{i,t}` in the latent vector.
    pub fn field_index(&self, t: usize, i: usize) -> usize {
        t * self.slice_dim + i
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    pub fn free_hypers(&self) -> &[HyperName] {
        &self.free
    }

    pub fn sigma_prior(&self) -> &PcPrior {
        &self.sigma_prior
    }

    pub fn r_prior(&self) -> &PcPrior {
        &self.r_prior
    }

    pub fn xi_prior(&self) -> Option<&MixingPrior> {
        self.xi_prior.as_ref()
    }

    /// Maps the free transformed coordinates `(log σ, atanh r, logit ξ)` to
    /// natural values, filling in fixed ones.
    pub fn hyper_from_theta(&self, theta: &[f64]) -> Hyper {
        let mut h = Hyper {
            sigma: self.spec.fixed_sigma.unwrap_or(f64::NAN),
            r: self.spec.fixed_r.unwrap_or(f64::NAN),
            xi: if self.kind().has_mixing() { self.spec.fixed_xi } else { None },
        };
        for (name, &v) in self.free.iter().zip(theta) {
            match name {
                HyperName::Sigma => h.sigma = v.exp(),
                HyperName::R => h.r = v.tanh(),
                HyperName::Xi => h.xi = Some((1.0 / (1.0 + (-v).exp())).min(XI_UPPER_CLAMP)),
            }
        }
        h
    }

    pub fn theta_from_hyper(&self, h: &Hyper) -> Vec<f64> {
        self.free
            .iter()
            .map(|name| match name {
                HyperName::Sigma => h.sigma.ln(),
                HyperName::R => h.r.atanh(),
                HyperName::Xi => {
                    let x = h.xi.unwrap_or(0.5);
                    (x / (1.0 - x)).ln()
                }
            })
            .collect()
    }

    /// Log prior density of the free transformed coordinates, Jacobians
    /// included.
    pub fn log_prior_theta(&self, theta: &[f64]) -> Result<f64> {
        let h = self.hyper_from_theta(theta);
        let mut lp = 0.0;
        for (name, &v) in self.free.iter().zip(theta) {
            lp += match name {
                HyperName::Sigma => self.sigma_prior.log_density(h.sigma)? + v,
                HyperName::R => self.r_prior.log_density(h.r)? + (1.0 - h.r * h.r).ln(),
                HyperName::Xi => self.xi_prior.as_ref().unwrap().log_density_logit(v)?,
            };
        }
        Ok(lp)
    }

    pub fn field(&self, h: Hyper) -> Result<SpaceTimeField> {
        Self::field_for(&self.graph, self.kind(), h, self.t)
    }

    /// Latent problem at `h`, prior including the fixed effects.
    pub fn problem(&self, h: Hyper) -> Result<LatentProblem<'_>> {
        let field = self.field(h)?;
        let p = self.fixed_names.len();
        let precision = Self::full_precision(&field, p, self.spec.fixed_prior_variance)?;
        let log_normalizer = field.log_normalizer()?
            - 0.5 * p as f64 * (self.spec.fixed_prior_variance.ln() + LN_2PI);
        let c_field = field.constraints();
        let mut constraints = nalgebra::DMatrix::zeros(c_field.nrows(), self.dim());
        constraints
            .view_mut((0, 0), (c_field.nrows(), c_field.ncols()))
            .copy_from(&c_field);
        Ok(LatentProblem {
            precision,
            log_normalizer,
            constraints,
            design: &self.design,
            likelihood: &self.likelihood,
            symbolic: self.symbolic.clone(),
        })
    }
}
