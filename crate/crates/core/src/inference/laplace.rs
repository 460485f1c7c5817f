//! Inner Gaussian approximation of `x | y, θ` by constrained Newton (IRLS)
//! iterations, and the Laplace approximation of `log p(y | θ)`.

use nalgebra::{DMatrix, DVector};

use super::latent::LatentProblem;
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, ConstrainedGaussian, EnvelopeMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    pub max_iter: usize,
    /// Tolerance on the sup-norm of the gradient projected onto the
    /// constraint set.
    pub grad_tol: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub mode: Vec<f64>,
    /// `N(mode, H⁻¹)` on the constraint set, `H` the negative Hessian at the mode.
    pub gaussian: ConstrainedGaussian,
    /// Laplace approximation of `log p(y | θ)`.
    pub log_marginal: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

struct Projector {
    c: DMatrix<f64>,
    cct_inv: DMatrix<f64>,
}

impl Projector {
    fn project(&self, g: &mut [f64]) {
        if self.c.nrows() == 0 {
            return;
        }
        let gv = DVector::from_column_slice(g);
        let corr = self.c.transpose() * (&self.cct_inv * (&self.c * gv));
        g.iter_mut().zip(corr.iter()).for_each(|(a, b)| *a -= b);
    }
}

/// Runs Newton iterations from `start` (zero when `None`; otherwise it must
/// satisfy the constraints).
pub fn laplace_inner(
    problem: &LatentProblem<'_>,
    start: Option<&[f64]>,
    opts: InnerOptions,
) -> Result<InnerResult> {
    let n = problem.dim();
    let lik = problem.likelihood;
    let design = problem.design;
    if design.n_cols() != n || lik.n_obs() != design.n_rows() {
        return Err(Error::Dimension(format!(
            "design is {}×{}, latent dimension {n}, {} observations",
            design.n_rows(),
            design.n_cols(),
            lik.n_obs()
        )));
    }
    let projector = Projector {
        c: problem.constraints.clone(),
        cct_inv: spd_inverse(&problem.constraints * problem.constraints.transpose(), "C Cᵀ")?.0,
    };
    let mut x = match start {
        Some(s) if s.len() == n => s.to_vec(),
        Some(s) => {
            return Err(Error::Dimension(format!(
                "start vector has length {}, expected {n}",
                s.len()
            )))
        }
        None => vec![0.0; n],
    };
    let objective = |x: &[f64]| problem.log_likelihood(x) - 0.5 * problem.precision.quad_form(x);

    let mut f = objective(&x);
    let mut trace = Vec::new();
    let mut last_step = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let eta = problem.predictor(&x);
        let mut g_eta = Vec::with_capacity(eta.len());
        let mut w = Vec::with_capacity(eta.len());
        for (c, &e) in eta.iter().enumerate() {
            let (g, h) = lik.derivatives(c, e);
            if !g.is_finite() || !h.is_finite() {
                return Err(Error::Numerical(format!(
                    "likelihood derivatives overflow at observation {c} (η = {e})"
                )));
            }
            g_eta.push(g);
            w.push(h);
        }

        // gradient Aᵀg − Qx, and the IRLS system H x = Aᵀ(g + W A x)
        let qx = problem.precision.mul_vec(&x);
        let mut grad: Vec<f64> = qx.iter().map(|v| -v).collect();
        let mut rhs = vec![0.0; n];
        let mut h = EnvelopeMatrix::zeros(problem.symbolic.clone());
        h.add_sparse(&problem.precision, 1.0);
        for (c, row) in design.rows().iter().enumerate() {
            let lin = eta[c] - lik.offset()[c];
            let target = g_eta[c] + w[c] * lin;
            for (k, &(a, va)) in row.iter().enumerate() {
                grad[a] += va * g_eta[c];
                rhs[a] += va * target;
                for &(b, vb) in &row[..=k] {
                    h.add(a, b, w[c] * va * vb);
                }
            }
        }
        projector.project(&mut grad);
        let grad_norm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let chol = h.factorize().map_err(|e| {
            Error::Numerical(format!("inner Hessian factorization failed at iteration {iter}: {e}"))
        })?;
        let gaussian = ConstrainedGaussian::new(chol, problem.constraints.clone())?;

        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_norm < opts.grad_tol || last_step < 1e-11 * scale {
            let log_likelihood = problem.log_likelihood(&x);
            let log_marginal =
                log_likelihood + problem.log_prior(&x) - gaussian.log_normalizer();
            return Ok(InnerResult {
                mode: x,
                gaussian,
                log_marginal,
                log_likelihood,
                iterations: iter,
                grad_norm,
            });
        }
        trace.push((iter, f, grad_norm));
        if iter == opts.max_iter {
            break;
        }

        let mut target = gaussian.solve(&rhs);
        gaussian.krige(&mut target);
        let step: Vec<f64> = target.iter().zip(&x).map(|(a, b)| a - b).collect();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let fc = objective(&cand);
            if fc.is_finite() && fc >= f - 1e-12 * f.abs().max(1.0) {
                last_step = t * step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                x = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Numerical(format!(
                "inner line search failed at iteration {iter}; trace (iter, objective, |grad|): {trace:?}"
            )));
        }
    }
    Err(Error::Numerical(format!(
        "inner Newton did not converge in {} iterations; trace (iter, objective, |grad|): {trace:?}",
        opts.max_iter
    )))
}
