//! Penalised-complexity priors for the hyperparameters of the space-time
//! field.
//!
//! Each prior places an `Exp(ψ)` distribution on the distance
//! `d(θ) = √(2·KLD(θ))` from the base model, with `ψ` fixed by a tail
//! condition `P(θ ≤ U) = α`. The KLDs are evaluated in eigenvalue form; the
//! dense Gaussian divergence [`kld_dense`] is the reference they are checked
//! against.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Spectrum;
use crate::quadrature;
use crate::structures::{check_mixing, StructureKind, XI_UPPER_CLAMP};

/// Interior window kept away from the open boundary of `r` and `ξ`.
pub const BOUNDARY_MARGIN: f64 = 1e-8;

/// KLD between two zero-mean Gaussians with covariances `var1` (flexible)
/// and `var0` (base).
pub fn kld_dense(var0: &DMatrix<f64>, var1: &DMatrix<f64>) -> Result<f64> {
    if var0.shape() != var1.shape() || !var0.is_square() {
        return Err(Error::Dimension(format!(
            "kld_dense: {:?} vs {:?}",
            var0.shape(),
            var1.shape()
        )));
    }
    let dim = var0.nrows() as f64;
    let c0 = var0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("base covariance".into()))?;
    let c1 = var1
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("flexible covariance".into()))?;
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_ratio = logdet(&c1.l()) - logdet(&c0.l());
    let trace = c0.solve(var1).trace();
    Ok((-0.5 * log_ratio - 0.5 * dim + 0.5 * trace).max(0.0))
}

/// `ln(1+u) + 1/(1+u) − 1`, accurate near `u = 0`.
fn log_plus_inverse(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        // Σ_{k≥2} (−1)^k (k−1)/k u^k
        let mut sum = 0.0;
        let mut p = u * u;
        for k in 2..12 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (k as f64 - 1.0) / k as f64 * p;
            p *= u;
        }
        sum
    } else {
        u.ln_1p() + 1.0 / (1.0 + u) - 1.0
    }
}

/// `u − ln(1+u)`, accurate near `u = 0`.
fn linear_minus_log(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        let mut sum = 0.0;
        let mut p = u * u;
        for k in 2..12 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * p / k as f64;
            p *= u;
        }
        sum
    } else {
        u - u.ln_1p()
    }
}

/// `h(r) = ln(1−r²) + T r²/(1−r²)`, clamped at zero.
pub fn ar1_h(r: f64, t: usize) -> f64 {
    let s = r * r;
    let t = t as f64;
    let h = if s < 1e-3 {
        let mut sum = 0.0;
        let mut p = s;
        for k in 1..12 {
            sum += (t - 1.0 / k as f64) * p;
            p *= s;
        }
        sum
    } else {
        (-s).ln_1p() + t * s / (1.0 - s)
    };
    h.max(0.0)
}

fn ar1_h_derivative(r: f64, t: usize) -> f64 {
    let s = r * r;
    2.0 * r * (t as f64 - 1.0 + s) / ((1.0 - s) * (1.0 - s))
}

fn check_r(r: f64) -> Result<f64> {
    if r.abs() < 1.0 {
        Ok(r)
    } else {
        Err(Error::domain("r", r, "(-1, 1)"))
    }
}

/// `(n/2)·(ln(1−r²) + T r²/(1−r²))`.
pub fn kld_ar1(r: f64, n: usize, t: usize) -> Result<f64> {
    check_r(r)?;
    if n == 0 || t == 0 {
        return Err(Error::Invalid("kld_ar1 needs n ≥ 1 and T ≥ 1".into()));
    }
    Ok(0.5 * n as f64 * ar1_h(r, t))
}

/// PCAR against `ρ = 0`; `delta` are the eigenvalues of `D⁻¹W`.
pub fn kld_pcar(rho: f64, delta: &[f64], t: usize) -> Result<f64> {
    check_mixing(rho).map_err(|_| Error::domain("rho", rho, "[0, 1)"))?;
    Ok(0.5 * t as f64 * delta.iter().map(|d| log_plus_inverse(-rho * d)).sum::<f64>())
}

/// LCAR against `λ = 0`; `ell` are the Laplacian eigenvalues.
pub fn kld_lcar(lambda: f64, ell: &[f64], t: usize) -> Result<f64> {
    check_mixing(lambda).map_err(|_| Error::domain("lambda", lambda, "[0, 1)"))?;
    Ok(0.5
        * t as f64
        * ell
            .iter()
            .map(|l| log_plus_inverse(lambda * (l - 1.0)))
            .sum::<f64>())
}

/// BYM against `φ = 0`; `gamma` are the eigenvalues of `L_s⁺`.
pub fn kld_bym(phi: f64, gamma: &[f64], t: usize) -> Result<f64> {
    check_mixing(phi).map_err(|_| Error::domain("phi", phi, "[0, 1)"))?;
    Ok(0.5
        * t as f64
        * gamma
            .iter()
            .map(|g| linear_minus_log(phi * (g - 1.0)))
            .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcTarget {
    Sigma,
    R,
    Rho,
    Lambda,
    Phi,
}

impl PcTarget {
    pub fn for_structure(kind: StructureKind) -> Option<Self> {
        match kind {
            StructureKind::Icar => None,
            StructureKind::Pcar => Some(Self::Rho),
            StructureKind::Lcar => Some(Self::Lambda),
            StructureKind::Bym => Some(Self::Phi),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sigma => "sigma",
            Self::R => "r",
            Self::Rho => "rho",
            Self::Lambda => "lambda",
            Self::Phi => "phi",
        }
    }
}

impl std::str::FromStr for PcTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigma" => Ok(Self::Sigma),
            "r" => Ok(Self::R),
            "rho" => Ok(Self::Rho),
            "lambda" => Ok(Self::Lambda),
            "phi" => Ok(Self::Phi),
            other => Err(Error::Invalid(format!("unknown prior target {other:?}"))),
        }
    }
}

/// How the tail condition on `r` is read. The AR(1) prior is symmetric in
/// `r`, so `P(r ≤ U) = α` is ambiguous.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailReading {
    /// `P(|r| ≤ U) = α`.
    #[default]
    Absolute,
    /// `P(r ≤ U) = α` over the signed, symmetric prior (needs `α > 1/2`).
    Signed,
}

/// Model dimensions needed to evaluate a KLD.
#[derive(Debug, Clone, Copy)]
pub struct PriorContext<'a> {
    pub n: usize,
    pub t: usize,
    pub spectrum: Option<&'a Spectrum>,
}

#[derive(Debug, Clone)]
enum Kld {
    Sigma,
    Ar1 { n: usize, t: usize },
    Pcar { delta: Arc<Vec<f64>>, t: usize },
    Lcar { ell: Arc<Vec<f64>>, t: usize },
    Bym { gamma: Arc<Vec<f64>>, t: usize },
}

impl Kld {
    fn value(&self, theta: f64) -> Result<f64> {
        match self {
            Kld::Sigma => Ok(0.5 * theta * theta),
            Kld::Ar1 { n, t } => kld_ar1(theta, *n, *t),
            Kld::Pcar { delta, t } => kld_pcar(theta, delta, *t),
            Kld::Lcar { ell, t } => kld_lcar(theta, ell, *t),
            Kld::Bym { gamma, t } => kld_bym(theta, gamma, *t),
        }
    }

    fn derivative(&self, theta: f64) -> f64 {
        match self {
            Kld::Sigma => theta,
            Kld::Ar1 { n, t } => 0.5 * *n as f64 * ar1_h_derivative(theta, *t),
            _ => self.mixing_derivative(theta, 1.0 - theta),
        }
    }

    /// Eigenvalue ratio `a_i` of a mixing structure given `ξ` and `1 − ξ`
    /// separately, so that `a_i` stays accurate when `1 − ξ` underflows `ξ`.
    fn ratio(&self, x: f64, xc: f64, e: f64) -> f64 {
        match self {
            Kld::Pcar { .. } => xc + x * (1.0 - e),
            Kld::Lcar { .. } | Kld::Bym { .. } => xc + x * e,
            _ => unreachable!("not a mixing target"),
        }
    }

    fn mixing_eigs(&self) -> (&[f64], usize) {
        match self {
            Kld::Pcar { delta, t } => (delta, *t),
            Kld::Lcar { ell, t } => (ell, *t),
            Kld::Bym { gamma, t } => (gamma, *t),
            _ => unreachable!("not a mixing target"),
        }
    }

    fn mixing_value(&self, x: f64, xc: f64) -> f64 {
        if xc >= 0.5 {
            return self.value(x).unwrap_or(f64::INFINITY);
        }
        let (eigs, t) = self.mixing_eigs();
        let bym = matches!(self, Kld::Bym { .. });
        let sum: f64 = eigs
            .iter()
            .map(|&e| {
                let a = self.ratio(x, xc, e);
                if bym {
                    a - 1.0 - a.ln()
                } else {
                    a.ln() + 1.0 / a - 1.0
                }
            })
            .sum();
        (0.5 * t as f64 * sum).max(0.0)
    }

    fn mixing_derivative(&self, x: f64, xc: f64) -> f64 {
        let (eigs, t) = self.mixing_eigs();
        let bym = matches!(self, Kld::Bym { .. });
        let sum: f64 = eigs
            .iter()
            .map(|&e| {
                let a = self.ratio(x, xc, e);
                let slope = match self {
                    Kld::Pcar { .. } => -e,
                    _ => e - 1.0,
                };
                if bym {
                    x * slope * slope / a
                } else {
                    x * slope * slope / (a * a)
                }
            })
            .sum();
        0.5 * t as f64 * sum
    }

    /// `lim_{θ→base} d′(θ)`, i.e. `√KLD″(base)`.
    fn distance_slope_at_base(&self) -> f64 {
        match self {
            Kld::Sigma => 1.0,
            Kld::Ar1 { n, t } => (*n as f64 * (*t as f64 - 1.0)).sqrt(),
            Kld::Pcar { delta, t } => (0.5 * *t as f64 * delta.iter().map(|d| d * d).sum::<f64>()).sqrt(),
            Kld::Lcar { ell, t } => {
                (0.5 * *t as f64 * ell.iter().map(|l| (l - 1.0).powi(2)).sum::<f64>()).sqrt()
            }
            Kld::Bym { gamma, t } => {
                (0.5 * *t as f64 * gamma.iter().map(|g| (g - 1.0).powi(2)).sum::<f64>()).sqrt()
            }
        }
    }
}

/// Density value plus a flag recording whether the argument was pulled into
/// the interior window before evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEval {
    pub value: f64,
    pub clamped: bool,
}

/// A calibrated PC prior.
#[derive(Debug, Clone)]
pub struct PcPrior {
    target: PcTarget,
    u: f64,
    alpha: f64,
    psi: f64,
    reading: TailReading,
    kld: Kld,
}

impl PcPrior {
    /// Calibrates with the default `|r|` reading for the AR(1) target.
    pub fn calibrate(target: PcTarget, u: f64, alpha: f64, ctx: PriorContext<'_>) -> Result<Self> {
        Self::calibrate_with(target, u, alpha, ctx, TailReading::default())
    }

    pub fn calibrate_with(
        target: PcTarget,
        u: f64,
        alpha: f64,
        ctx: PriorContext<'_>,
        reading: TailReading,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain("alpha", alpha, "(0, 1)"));
        }
        let spectrum = || {
            ctx.spectrum
                .ok_or_else(|| Error::Invalid(format!("{} prior needs the graph spectrum", target.name())))
        };
        let kld = match target {
            PcTarget::Sigma => {
                if !(u > 0.0 && u.is_finite()) {
                    return Err(Error::domain("U", u, "(0, inf)"));
                }
                Kld::Sigma
            }
            PcTarget::R => Kld::Ar1 { n: ctx.n, t: ctx.t },
            PcTarget::Rho => Kld::Pcar {
                delta: Arc::new(spectrum()?.rowstoch_eigs.clone()),
                t: ctx.t,
            },
            PcTarget::Lambda => Kld::Lcar {
                ell: Arc::new(spectrum()?.laplacian_eigs.clone()),
                t: ctx.t,
            },
            PcTarget::Phi => Kld::Bym {
                gamma: Arc::new(spectrum()?.scaled_eigs.clone()),
                t: ctx.t,
            },
        };
        let u_kld = kld.value(if target == PcTarget::R { u.abs() } else { u })?;
        if u_kld <= 0.0 {
            return Err(Error::Invalid(format!(
                "U = {u} sits at the base model of {} (KLD = 0)",
                target.name()
            )));
        }
        let du = (2.0 * u_kld).sqrt();
        let mass = match (target, reading) {
            (PcTarget::R, TailReading::Signed) => {
                if alpha <= 0.5 || u <= 0.0 {
                    return Err(Error::Invalid(
                        "signed tail reading for r needs U > 0 and alpha > 1/2".into(),
                    ));
                }
                2.0 * alpha - 1.0
            }
            _ => alpha,
        };
        let psi = -(1.0 - mass).ln() / du;
        Ok(Self {
            target,
            u,
            alpha,
            psi,
            reading,
            kld,
        })
    }

    pub fn target(&self) -> PcTarget {
        self.target
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Rate of the exponential on the distance scale.
    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn reading(&self) -> TailReading {
        self.reading
    }

    /// Parameter domain as `(lower, upper)`.
    pub fn domain(&self) -> (f64, f64) {
        match self.target {
            PcTarget::Sigma => (0.0, f64::INFINITY),
            PcTarget::R => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }

    fn check_domain(&self, theta: f64) -> Result<()> {
        let ok = match self.target {
            PcTarget::Sigma => theta >= 0.0 && theta.is_finite(),
            PcTarget::R => theta.abs() < 1.0,
            _ => (0.0..1.0).contains(&theta),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(self.target.name(), theta, "prior domain"))
        }
    }

    fn clamp(&self, theta: f64) -> (f64, bool) {
        match self.target {
            PcTarget::Sigma => (theta, false),
            PcTarget::R if theta.abs() > 1.0 - BOUNDARY_MARGIN => {
                ((1.0 - BOUNDARY_MARGIN).copysign(theta), true)
            }
            PcTarget::R => (theta, false),
            _ if theta > XI_UPPER_CLAMP => (XI_UPPER_CLAMP, true),
            _ => (theta, false),
        }
    }

    pub fn kld(&self, theta: f64) -> Result<f64> {
        self.kld.value(theta)
    }

    /// `d(θ) = √(2·KLD(θ))`.
    pub fn distance(&self, theta: f64) -> Result<f64> {
        Ok((2.0 * self.kld.value(theta)?).sqrt())
    }

    /// `d′(θ)` from the closed-form KLD derivative (odd in `r`).
    pub fn distance_derivative(&self, theta: f64) -> Result<f64> {
        let k = self.kld.value(theta)?;
        if k == 0.0 {
            let slope = self.kld.distance_slope_at_base();
            return Ok(if self.target == PcTarget::R { slope * theta.signum() } else { slope });
        }
        Ok(self.kld.derivative(theta) / (2.0 * k).sqrt())
    }

    /// Prior density, with out-of-window arguments clamped and flagged.
    pub fn density(&self, theta: f64) -> Result<DensityEval> {
        self.check_domain(theta)?;
        let (x, clamped) = self.clamp(theta);
        let d = self.distance(x)?;
        let slope = self.distance_derivative(x)?.abs();
        let mut value = self.psi * (-self.psi * d).exp() * slope;
        if self.target == PcTarget::R {
            value *= 0.5;
        }
        Ok(DensityEval { value, clamped })
    }

    pub fn log_density(&self, theta: f64) -> Result<f64> {
        Ok(self.density(theta)?.value.ln())
    }

    /// Log density of `η = logit(ξ)` for a mixing target. Works from `ξ` and
    /// `1 − ξ` separately, so it stays exact where `ξ` rounds to one; no
    /// clamping is applied.
    pub fn log_density_logit(&self, eta: f64) -> Result<f64> {
        if !matches!(self.target, PcTarget::Rho | PcTarget::Lambda | PcTarget::Phi) {
            return Err(Error::Invalid(format!(
                "logit-scale density is defined for mixing targets, not {}",
                self.target.name()
            )));
        }
        if !eta.is_finite() {
            return Err(Error::domain("logit", eta, "finite values"));
        }
        let x = 1.0 / (1.0 + (-eta).exp());
        let xc = 1.0 / (1.0 + eta.exp());
        let k = self.kld.mixing_value(x, xc);
        let slope = if k == 0.0 {
            self.kld.distance_slope_at_base()
        } else {
            self.kld.mixing_derivative(x, xc) / (2.0 * k).sqrt()
        };
        let d = (2.0 * k).sqrt();
        if !(d.is_finite() && slope.is_finite()) {
            // only reached where e^{−ψd} has long underflowed
            return Ok(f64::NEG_INFINITY);
        }
        // ln ξ(1−ξ) = −|η| − 2 ln(1 + e^{−|η|})
        let log_jac = -eta.abs() - 2.0 * (-eta.abs()).exp().ln_1p();
        Ok(self.psi.ln() - self.psi * d + slope.abs().ln() + log_jac)
    }

    /// Closed-form CDF through the exponential law of the distance.
    pub fn cdf(&self, theta: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if theta <= lo {
            return Ok(0.0);
        }
        if theta >= hi {
            return Ok(1.0);
        }
        let tail = (-self.psi * self.distance(theta)?).exp();
        Ok(match self.target {
            PcTarget::R if theta < 0.0 => 0.5 * tail,
            PcTarget::R => 1.0 - 0.5 * tail,
            _ => 1.0 - tail,
        })
    }

    /// The non-negative `θ` with `d(θ) = distance`.
    pub fn inverse_distance(&self, distance: f64) -> Result<f64> {
        if !(distance >= 0.0) {
            return Err(Error::domain("distance", distance, "[0, inf)"));
        }
        if self.target == PcTarget::Sigma {
            return Ok(distance);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if self.distance(mid)? < distance {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Draws by sampling the distance from `Exp(ψ)` and inverting `d`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let exp = Exp::new(self.psi).map_err(|e| Error::Numerical(e.to_string()))?;
        let theta = self.inverse_distance(exp.sample(rng))?;
        Ok(if self.target == PcTarget::R && rng.random::<bool>() {
            -theta
        } else {
            theta
        })
    }

    /// Prior mean: `1/ψ` for σ, quadrature otherwise (zero for `r` by symmetry).
    pub fn mean(&self) -> Result<f64> {
        match self.target {
            PcTarget::Sigma => Ok(1.0 / self.psi),
            PcTarget::R => Ok(0.0),
            _ => {
                // E[θ] = ∫₀¹ (1 − F(θ)) dθ
                let survival = |x: f64| 1.0 - self.cdf(x).unwrap_or(1.0);
                Ok(quadrature::integrate(survival, 0.0, 1.0, 1e-10))
            }
        }
    }
}

/// Prior on a mixing parameter `ξ`.
#[derive(Debug, Clone)]
pub enum MixingPrior {
    Uniform,
    Pc(PcPrior),
}

impl MixingPrior {
    pub fn log_density(&self, xi: f64) -> Result<f64> {
        match self {
            MixingPrior::Uniform => {
                check_mixing(xi)?;
                Ok(0.0)
            }
            MixingPrior::Pc(p) => p.log_density(xi),
        }
    }

    /// Log density of `η = logit(ξ)`.
    pub fn log_density_logit(&self, eta: f64) -> Result<f64> {
        match self {
            MixingPrior::Uniform => Ok(-eta.abs() - 2.0 * (-eta.abs()).exp().ln_1p()),
            MixingPrior::Pc(p) => p.log_density_logit(eta),
        }
    }
}
