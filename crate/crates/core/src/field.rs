//! Space-time Gaussian field `Z = (Z_1, …, Z_T)` with AR(1) dependence in
//! time and a spatial structure within each year:
//! `Z_t = r Z_{t−1} + ε_t`, `ε_t ~ N(0, σ² Ω)`, `Z_1 ~ N(0, σ²/(1−r²) Ω)`.
//!
//! The joint precision is `σ⁻² B ⊗ Ω⁻¹` with the tridiagonal AR(1) precision
//! `B`. Coordinates are slice-major: entry `t·m + k` is slice position `k`
//! of year `t`, where `m` is the slice dimension (`2n` for BYM, holding
//! `z` then `u`).

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{ConstrainedGaussian, EnvelopeCholesky, SymSparse};
use crate::structures::{SpatialStructure, StructureKind};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative diagonal jitter that makes singular prior precisions factorable
/// before kriging onto the constraint set.
pub const SAMPLING_JITTER: f64 = 1e-8;

/// Tolerance on `|C x|` accepted by [`SpaceTimeField::log_density`].
pub const CONSTRAINT_TOLERANCE: f64 = 1e-6;

/// AR(1) precision `B` of length `t` at unit innovation variance:
/// tridiagonal with diagonal `(1, 1+r², …, 1+r², 1)` and off-diagonal `−r`
/// (`1 − r²` when `t = 1`). `det B = 1 − r²`.
pub fn ar1_precision(r: f64, t: usize) -> Result<SymSparse> {
    check_r(r)?;
    if t == 0 {
        return Err(Error::domain("T", 0.0, "T >= 1"));
    }
    if t == 1 {
        return Ok(SymSparse::from_triplets(1, [(0, 0, 1.0 - r * r)]));
    }
    let mut trip = Vec::with_capacity(2 * t);
    for i in 0..t {
        let d = if i == 0 || i == t - 1 { 1.0 } else { 1.0 + r * r };
        trip.push((i, i, d));
        if i > 0 {
            trip.push((i, i - 1, -r));
        }
    }
    Ok(SymSparse::from_triplets(t, trip))
}

fn check_r(r: f64) -> Result<f64> {
    if r.is_finite() && r.abs() < 1.0 {
        Ok(r)
    } else {
        Err(Error::domain("r", r, "(-1, 1)"))
    }
}

fn check_sigma(sigma: f64) -> Result<f64> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(sigma)
    } else {
        Err(Error::domain("sigma", sigma, "(0, inf)"))
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    structure: Arc<SpatialStructure>,
    sigma: f64,
    r: f64,
    t: usize,
}

impl SpaceTimeField {
    pub fn new(structure: Arc<SpatialStructure>, sigma: f64, r: f64, t: usize) -> Result<Self> {
        check_sigma(sigma)?;
        check_r(r)?;
        if t == 0 {
            return Err(Error::domain("T", 0.0, "T >= 1"));
        }
        Ok(Self {
            structure,
            sigma,
            r,
            t,
        })
    }

    pub fn structure(&self) -> &Arc<SpatialStructure> {
        &self.structure
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn n_years(&self) -> usize {
        self.t
    }

    pub fn slice_dim(&self) -> usize {
        self.structure.slice_dim()
    }

    /// Length of the latent vector, `T · m`.
    pub fn dim(&self) -> usize {
        self.t * self.slice_dim()
    }

    /// Index of area `i` in year `t` for the field `Z`.
    pub fn field_index(&self, t: usize, i: usize) -> usize {
        t * self.slice_dim() + i
    }

    /// Slice precision with the σ scaling applied to the `Z` block.
    fn scaled_slice(&self) -> SymSparse {
        let s = &self.structure;
        let inv = 1.0 / self.sigma;
        let scale = |k: usize| if s.scales_with_sigma(k) { inv } else { 1.0 };
        SymSparse::from_triplets(
            s.slice_dim(),
            s.precision()
                .iter_lower()
                .map(|(i, j, v)| (i, j, v * scale(i) * scale(j))),
        )
    }

    /// Joint prior precision `B ⊗ (D_σ M D_σ)`.
    pub fn joint_precision(&self) -> Result<SymSparse> {
        Ok(SymSparse::kron(&ar1_precision(self.r, self.t)?, &self.scaled_slice()))
    }

    /// One sum-to-zero row per year over the constrained block (`T × N`).
    pub fn constraints(&self) -> DMatrix<f64> {
        let m = self.slice_dim();
        let mut c = DMatrix::zeros(self.t, self.dim());
        for t in 0..self.t {
            for k in self.structure.constrained_block() {
                c[(t, t * m + k)] = 1.0;
            }
        }
        c
    }

    /// Constrained Gaussian used for prior draws. Singular precisions get a
    /// diagonal jitter of [`SAMPLING_JITTER`] times their mean diagonal.
    pub fn sampler(&self) -> Result<ConstrainedGaussian> {
        let mut q = self.joint_precision()?;
        if self.structure.is_singular() {
            let diag = q.diagonal();
            let mean = diag.iter().sum::<f64>() / diag.len() as f64;
            q = q.with_added_diagonal(SAMPLING_JITTER * mean);
        }
        ConstrainedGaussian::new(EnvelopeCholesky::factor(&q)?, self.constraints())
    }

    pub fn sample_constrained<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.sampler()?.sample(None, rng))
    }

    /// Log normalising constant of the prior on `{C x = 0}`, from the graph
    /// spectrum. Add `−½ xᵀ Q x` for the log density.
    pub fn log_normalizer(&self) -> Result<f64> {
        let s = &self.structure;
        let n = s.n_areas() as f64;
        let t = self.t as f64;
        let ln_b = (1.0 - self.r * self.r).ln();
        let ln_s2 = 2.0 * self.sigma.ln();
        Ok(match s.kind() {
            StructureKind::Icar => {
                0.5 * ((n - 1.0) * ln_b - t * (n - 1.0) * ln_s2 + t * s.log_generalized_det()?)
                    - 0.5 * t * (n - 1.0) * LN_2PI
            }
            StructureKind::Bym => {
                // π(z | u) π(u) with u an ICAR field on the scaled Laplacian
                let phi = s.xi().unwrap();
                let spec = s.graph().spectrum()?;
                let ln_ls: f64 = spec.laplacian_eigs[1..]
                    .iter()
                    .map(|l| (spec.scale * l).ln())
                    .sum();
                0.5 * (n * ln_b - t * n * (ln_s2 + (1.0 - phi).ln())) - 0.5 * t * n * LN_2PI
                    + 0.5 * ((n - 1.0) * ln_b + t * ln_ls)
                    - 0.5 * t * (n - 1.0) * LN_2PI
            }
            StructureKind::Pcar | StructureKind::Lcar => {
                let full = 0.5 * (-t * n * ln_s2 + n * ln_b + t * s.log_generalized_det()?)
                    - 0.5 * t * n * LN_2PI;
                // C Q⁻¹ Cᵀ = σ² B⁻¹ (1ᵀ Ω 1), C Cᵀ = n I
                let cqc = t * ln_s2 - ln_b + t * s.ones_inverse_quadratic()?.ln();
                full + 0.5 * cqc + 0.5 * t * LN_2PI - 0.5 * t * n.ln()
            }
        })
    }

    /// Log density of `x` on the constraint set (Lebesgue measure there).
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "field vector has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let c = self.constraints();
        let cx = &c * nalgebra::DVector::from_column_slice(x);
        let worst = cx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > CONSTRAINT_TOLERANCE {
            return Err(Error::Invalid(format!(
                "field violates the sum-to-zero constraint by {worst:e}"
            )));
        }
        Ok(self.log_normalizer()? - 0.5 * self.joint_precision()?.quad_form(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ar1_precision_inverts_stationary_covariance() {
        let (r, t) = (0.6, 4);
        let b = ar1_precision(r, t).unwrap().to_dense();
        let cov = DMatrix::from_fn(t, t, |i, j| r.powi((i as i32 - j as i32).abs()) / (1.0 - r * r));
        assert!((b * cov - DMatrix::identity(t, t)).abs().max() < 1e-12);
        assert!((ar1_precision(r, 1).unwrap().get(0, 0) - 0.64).abs() < 1e-15);
    }

    #[test]
    fn samples_satisfy_constraints() {
        let g = Arc::new(Graph::lattice(3, 3).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in StructureKind::ALL {
            let s = Arc::new(SpatialStructure::new(kind, g.clone(), Some(0.4)).unwrap());
            let f = SpaceTimeField::new(s, 0.8, 0.5, 3).unwrap();
            let x = f.sample_constrained(&mut rng).unwrap();
            let cx = f.constraints() * nalgebra::DVector::from_vec(x.clone());
            assert!(cx.amax() < 1e-10, "{kind}: {}", cx.amax());
            assert!(f.log_density(&x).unwrap().is_finite());
        }
    }

    #[test]
    fn violating_vector_is_rejected() {
        let g = Arc::new(Graph::lattice(2, 2).unwrap());
        let s = Arc::new(SpatialStructure::new(StructureKind::Icar, g, None).unwrap());
        let f = SpaceTimeField::new(s, 1.0, 0.0, 1).unwrap();
        assert!(f.log_density(&[1.0, 0.0, 0.0, 0.0]).is_err());
    }
}
