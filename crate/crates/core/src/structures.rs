//! The four spatial structures (ICAR, PCAR, LCAR, BYM) as sparse precision
//! matrices with rank and constraint metadata.
//!
//! BYM is held in its augmented form over one slice `(z, u)`, where `u` is
//! the scaled ICAR component and `z = √φ u + √(1−φ) v` (unit marginal scale):
//!
//! ```text
//! ⎡ 1/(1−φ) I        −√φ/(1−φ) I      ⎤
//! ⎣ −√φ/(1−φ) I      L_s + φ/(1−φ) I  ⎦
//! ```
//!
//! Marginalising `u` under `1ᵀu = 0` gives `Ω = φ L_s⁺ + (1−φ) I`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Spectrum};
use crate::linalg::SymSparse;

/// Largest mixing value used during inference; the open end of `[0, 1)`.
pub const XI_UPPER_CLAMP: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StructureKind {
    Icar,
    Pcar,
    Lcar,
    Bym,
}

impl StructureKind {
    pub const ALL: [StructureKind; 4] = [Self::Icar, Self::Pcar, Self::Lcar, Self::Bym];

    pub fn has_mixing(self) -> bool {
        self != Self::Icar
    }

    /// Name of the mixing/autocorrelation parameter, if any.
    pub fn mixing_name(self) -> Option<&'static str> {
        match self {
            Self::Icar => None,
            Self::Pcar => Some("rho"),
            Self::Lcar => Some("lambda"),
            Self::Bym => Some("phi"),
        }
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Icar => "ICAR",
            Self::Pcar => "PCAR",
            Self::Lcar => "LCAR",
            Self::Bym => "BYM",
        })
    }
}

impl FromStr for StructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ICAR" => Ok(Self::Icar),
            "PCAR" => Ok(Self::Pcar),
            "LCAR" => Ok(Self::Lcar),
            "BYM" | "BYM2" => Ok(Self::Bym),
            other => Err(Error::Invalid(format!("unknown structure kind {other:?}"))),
        }
    }
}

/// Checks `ξ ∈ [0, 1)`.
pub fn check_mixing(value: f64) -> Result<f64> {
    if (0.0..1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::domain("xi", value, "[0, 1)"))
    }
}

#[derive(Debug, Clone)]
pub struct SpatialStructure {
    kind: StructureKind,
    graph: Arc<Graph>,
    xi: Option<f64>,
    precision: SymSparse,
    rank: usize,
}

impl SpatialStructure {
    /// Builds the precision of one time slice. `xi` is required for every
    /// kind except ICAR, where it is ignored.
    pub fn new(kind: StructureKind, graph: Arc<Graph>, xi: Option<f64>) -> Result<Self> {
        let n = graph.n();
        let xi = match kind {
            StructureKind::Icar => None,
            _ => Some(check_mixing(xi.ok_or_else(|| {
                Error::Invalid(format!("{kind} requires a mixing parameter"))
            })?)?),
        };
        let (precision, rank) = match kind {
            StructureKind::Icar => (graph.laplacian(), n - 1),
            StructureKind::Pcar => (graph.degree_minus_scaled_adjacency(xi.unwrap()), n),
            StructureKind::Lcar => {
                let lambda = xi.unwrap();
                let trip = graph
                    .laplacian()
                    .iter_lower()
                    .map(|(i, j, v)| (i, j, lambda * v))
                    .chain((0..n).map(|i| (i, i, 1.0 - lambda)))
                    .collect::<Vec<_>>();
                (SymSparse::from_triplets(n, trip), n)
            }
            StructureKind::Bym => {
                let phi = xi.unwrap();
                let (ls, _) = graph.scaled_laplacian()?;
                let a = 1.0 / (1.0 - phi);
                let b = -phi.sqrt() / (1.0 - phi);
                let c = phi / (1.0 - phi);
                let mut trip = Vec::with_capacity(3 * n + ls.nnz_lower());
                for i in 0..n {
                    trip.push((i, i, a));
                    trip.push((n + i, i, b));
                    trip.push((n + i, n + i, c));
                }
                trip.extend(ls.iter_lower().map(|(i, j, v)| (n + i, n + j, v)));
                (SymSparse::from_triplets(2 * n, trip), 2 * n - 1)
            }
        };
        Ok(Self {
            kind,
            graph,
            xi,
            precision,
            rank,
        })
    }

    pub fn kind(&self) -> StructureKind {
        self.kind
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn xi(&self) -> Option<f64> {
        self.xi
    }

    pub fn n_areas(&self) -> usize {
        self.graph.n()
    }

    /// Precision of one slice at unit marginal scale (augmented for BYM).
    pub fn precision(&self) -> &SymSparse {
        &self.precision
    }

    /// Length of one slice of the latent vector (`2n` for BYM).
    pub fn slice_dim(&self) -> usize {
        self.precision.n()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_singular(&self) -> bool {
        self.rank < self.slice_dim()
    }

    /// Every structure carries a per-slice sum-to-zero constraint.
    pub fn needs_sum_zero(&self) -> bool {
        true
    }

    /// Slice positions holding the field `Z` itself.
    pub fn field_block(&self) -> Range<usize> {
        0..self.n_areas()
    }

    /// Slice positions summed by the constraint (the ICAR part `U` for BYM).
    pub fn constrained_block(&self) -> Range<usize> {
        match self.kind {
            StructureKind::Bym => self.n_areas()..2 * self.n_areas(),
            _ => 0..self.n_areas(),
        }
    }

    /// Whether slice position `k` is on the σ scale (`U` of BYM is not).
    pub fn scales_with_sigma(&self, k: usize) -> bool {
        k < self.n_areas()
    }

    /// Sum of logs of the `rank` largest eigenvalues of the slice precision,
    /// in closed form from the graph spectrum.
    pub fn log_generalized_det(&self) -> Result<f64> {
        let s = self.graph.spectrum()?;
        let n = self.n_areas() as f64;
        Ok(match self.kind {
            StructureKind::Icar => s.laplacian_eigs[1..].iter().map(|l| l.ln()).sum(),
            StructureKind::Pcar => {
                let rho = self.xi.unwrap();
                self.graph.degrees().iter().map(|d| d.ln()).sum::<f64>()
                    + s.rowstoch_eigs
                        .iter()
                        .map(|d| (1.0 - rho * d).ln())
                        .sum::<f64>()
            }
            StructureKind::Lcar => {
                let lambda = self.xi.unwrap();
                s.laplacian_eigs
                    .iter()
                    .map(|l| (lambda * (l - 1.0) + 1.0).ln())
                    .sum()
            }
            StructureKind::Bym => {
                // Per Laplacian eigenpair the augmented precision reduces to a
                // 2×2 block with determinant c·ℓ_i/(1−φ); the null pair keeps
                // the single nonzero eigenvalue (1+φ)/(1−φ).
                let phi = self.xi.unwrap();
                n * (1.0 / (1.0 - phi)).ln()
                    + (1.0 + phi).ln()
                    + s.laplacian_eigs[1..]
                        .iter()
                        .map(|l| (s.scale * l).ln())
                        .sum::<f64>()
            }
        })
    }

    /// `1ᵀ Q⁻¹ 1` for the proper structures (PCAR, LCAR), from the spectrum.
    pub fn ones_inverse_quadratic(&self) -> Result<f64> {
        let n = self.n_areas();
        match self.kind {
            StructureKind::Lcar => Ok(n as f64 / (1.0 - self.xi.unwrap())),
            StructureKind::Pcar => {
                // D − ρW = D^{1/2} (I − ρS) D^{1/2}, S = D^{-1/2} W D^{-1/2}
                let rho = self.xi.unwrap();
                let s = self.graph.spectrum()?;
                let w: Vec<f64> = self.graph.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();
                Ok(s.rowstoch_eigs
                    .iter()
                    .enumerate()
                    .map(|(k, d)| {
                        let proj: f64 = (0..n).map(|i| s.rowstoch_vecs[(i, k)] * w[i]).sum();
                        proj * proj / (1.0 - rho * d)
                    })
                    .sum())
            }
            _ => Err(Error::Invalid(format!("{} precision is singular", self.kind))),
        }
    }

    /// Closed-form `Ω` (dense). Intended for checks on small graphs.
    pub fn covariance_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.n_areas();
        Ok(match self.kind {
            StructureKind::Icar => self.graph.laplacian_pinv()?,
            StructureKind::Pcar | StructureKind::Lcar => self
                .precision
                .to_dense()
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular proper CAR precision".into()))?,
            StructureKind::Bym => {
                let phi = self.xi.unwrap();
                let c = self.graph.spectrum()?.scale;
                self.graph.laplacian_pinv()? * (phi / c)
                    + DMatrix::identity(n, n) * (1.0 - phi)
            }
        })
    }
}

/// Eigenvalues of `Ω` relative to the base model of each structure:
/// PCAR `1/(1−ρδ_i)` (relative to `D⁻¹`), LCAR `1/(λ(ℓ_i−1)+1)`,
/// BYM `φ(γ_i−1)+1`.
pub fn structure_covariance_eigs(kind: StructureKind, spectrum: &Spectrum, xi: f64) -> Result<Vec<f64>> {
    let xi = check_mixing(xi)?;
    Ok(match kind {
        StructureKind::Icar => {
            return Err(Error::Invalid(
                "ICAR has no mixing parameter and no base-relative spectrum".into(),
            ))
        }
        StructureKind::Pcar => spectrum
            .rowstoch_eigs
            .iter()
            .map(|d| 1.0 / (1.0 - xi * d))
            .collect(),
        StructureKind::Lcar => spectrum
            .laplacian_eigs
            .iter()
            .map(|l| 1.0 / (xi * (l - 1.0) + 1.0))
            .collect(),
        StructureKind::Bym => spectrum
            .scaled_eigs
            .iter()
            .map(|g| xi * (g - 1.0) + 1.0)
            .collect(),
    })
}
