//! Sparse symmetric storage and the profile Cholesky used by every Gaussian
//! computation in the crate.

mod constrained;
mod envelope;
mod ordering;
mod sparse;

pub use constrained::ConstrainedGaussian;
pub(crate) use constrained::spd_inverse;
pub use envelope::{EnvelopeCholesky, EnvelopeMatrix, EnvelopeSymbolic};
pub use ordering::reverse_cuthill_mckee;
pub use sparse::SymSparse;
