//! Gaussian `N(μ, H⁻¹)` conditioned on linear constraints `C x = 0`, by
//! conditioning through kriging: `x ← x − V (C V)⁻¹ C x` with `V = H⁻¹ Cᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::envelope::EnvelopeCholesky;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub struct ConstrainedGaussian {
    chol: EnvelopeCholesky,
    c: DMatrix<f64>,
    v: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    log_det_s: f64,
    log_det_cct: f64,
}

impl ConstrainedGaussian {
    /// `chol` factors the precision `H`; `c` is `k × N` with full row rank
    /// (`k` may be zero).
    pub fn new(chol: EnvelopeCholesky, c: DMatrix<f64>) -> Result<Self> {
        let n = chol.n();
        if c.ncols() != n {
            return Err(Error::Dimension(format!(
                "constraint matrix has {} columns, precision has {n}",
                c.ncols()
            )));
        }
        let k = c.nrows();
        let mut v = DMatrix::zeros(n, k);
        for j in 0..k {
            let col: Vec<f64> = c.row(j).iter().copied().collect();
            v.set_column(j, &DVector::from_vec(chol.solve(&col)));
        }
        let s = &c * &v;
        let (s_inv, log_det_s) = spd_inverse(s, "C H⁻¹ Cᵀ")?;
        let (_, log_det_cct) = spd_inverse(&c * c.transpose(), "C Cᵀ")?;
        Ok(Self {
            chol,
            c,
            v,
            s_inv,
            log_det_s,
            log_det_cct,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.n()
    }

    pub fn n_constraints(&self) -> usize {
        self.c.nrows()
    }

    pub fn cholesky(&self) -> &EnvelopeCholesky {
        &self.chol
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `max_j |(C x)_j|`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.apply_c(x).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn apply_c(&self, x: &[f64]) -> DVector<f64> {
        &self.c * DVector::from_column_slice(x)
    }

    /// Projects `x` onto `{C x = 0}` along `H⁻¹ Cᵀ` (two passes, the second
    /// cleaning up rounding error).
    pub fn krige(&self, x: &mut [f64]) {
        if self.c.nrows() == 0 {
            return;
        }
        for _ in 0..2 {
            let coef = &self.s_inv * self.apply_c(x);
            let corr = &self.v * coef;
            for (xi, ci) in x.iter_mut().zip(corr.iter()) {
                *xi -= ci;
            }
        }
    }

    /// Unconstrained solve `H⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(b)
    }

    /// Draw from the constrained `N(mean, H⁻¹)`; `mean` must satisfy the
    /// constraints.
    pub fn sample<R: Rng + ?Sized>(&self, mean: Option<&[f64]>, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = self.chol.solve_transposed_factor(&w);
        self.krige(&mut x);
        if let Some(m) = mean {
            x.iter_mut().zip(m).for_each(|(a, b)| *a += b);
        }
        x
    }

    /// Marginal variance of coordinate `i` under the constrained law.
    pub fn marginal_variance(&self, i: usize) -> f64 {
        let mut e = vec![0.0; self.dim()];
        e[i] = 1.0;
        let hinv = self.chol.solve(&e)[i];
        if self.c.nrows() == 0 {
            return hinv;
        }
        let vi = self.v.row(i).transpose();
        hinv - (vi.transpose() * &self.s_inv * &vi)[(0, 0)]
    }

    /// Log normalising constant of the constrained density with respect to
    /// Lebesgue measure on `{C x = 0}`; add `−½ (x−μ)ᵀ H (x−μ)` for the
    /// log density.
    pub fn log_normalizer(&self) -> f64 {
        let n = self.dim() as f64;
        let k = self.n_constraints() as f64;
        0.5 * self.chol.log_det() - 0.5 * (n - k) * LN_2PI + 0.5 * self.log_det_s
            - 0.5 * self.log_det_cct
    }
}

/// Inverse and log-determinant of a small SPD matrix.
pub(crate) fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    if m.nrows() == 0 {
        return Ok((m, 0.0));
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what} is not positive definite")))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((chol.inverse(), log_det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymSparse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (SymSparse, ConstrainedGaussian) {
        let a = SymSparse::from_triplets(
            4,
            [
                (0, 0, 2.0),
                (1, 0, -0.5),
                (1, 1, 2.5),
                (2, 1, -0.7),
                (2, 2, 3.0),
                (3, 2, 0.4),
                (3, 3, 1.5),
            ],
        );
        let c = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]);
        let g = ConstrainedGaussian::new(EnvelopeCholesky::factor(&a).unwrap(), c).unwrap();
        (a, g)
    }

    #[test]
    fn kriging_lands_on_constraint() {
        let (_, g) = setup();
        let mut x = vec![1.0, 2.0, -0.3, 5.0];
        g.krige(&mut x);
        assert!(g.violation(&x) < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = g.sample(None, &mut rng);
        assert!(g.violation(&s) < 1e-14);
    }

    #[test]
    fn variance_matches_conditional_formula() {
        let (a, g) = setup();
        let sigma = a.to_dense().try_inverse().unwrap();
        let c = g.constraints().clone();
        let sc = &sigma * c.transpose();
        let cond = &sigma - &sc * (&c * &sc).try_inverse().unwrap() * sc.transpose();
        for i in 0..4 {
            assert!((g.marginal_variance(i) - cond[(i, i)]).abs() < 1e-12);
        }
    }
}
