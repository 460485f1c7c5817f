//! Outer layer: locate the posterior mode of the transformed
//! hyperparameters, explore a rotated grid around it, and mix the inner
//! Gaussian approximations into posterior marginals.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laplace::{laplace_inner, InnerOptions};
use super::model::{Hyper, HyperName, PoissonModel};
use crate::error::{Error, Result};
use crate::structures::StructureKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Grid points per free hyperparameter axis.
    pub points_per_axis: usize,
    /// Half-width of the grid in approximate posterior standard deviations.
    pub span: f64,
    /// Relative step of the finite-difference gradient in the mode search.
    pub fd_step: f64,
    /// Step of the finite-difference Hessian at the mode.
    pub hessian_step: f64,
    /// Smallest curvature admitted along a grid axis.
    pub min_curvature: f64,
    pub max_outer_iter: usize,
    pub outer_tol: f64,
    #[serde(skip)]
    pub inner: InnerOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            points_per_axis: 7,
            span: 3.0,
            fd_step: 1e-4,
            hessian_step: 0.05,
            min_curvature: 0.05,
            max_outer_iter: 100,
            outer_tol: 1e-4,
            inner: InnerOptions::default(),
        }
    }
}

/// One evaluated hyperparameter configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    /// Free transformed coordinates.
    pub theta: Vec<f64>,
    pub hyper: Hyper,
    pub log_marginal: f64,
    pub log_posterior: f64,
    pub weight: f64,
    /// Mode of the inner approximation.
    pub mode: Vec<f64>,
    /// Posterior variances of the fixed effects at this point.
    pub fixed_var: Vec<f64>,
}

/// Posterior summary of a scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: StructureKind,
    pub fixed_names: Vec<String>,
    pub free: Vec<HyperName>,
    pub theta_mode: Vec<f64>,
    pub hyper_mode: Hyper,
    pub points: Vec<GridPoint>,
    pub fixed: Vec<Marginal>,
    /// Rows ordered ξ (when present), σ, r.
    pub hyper: Vec<Marginal>,
    /// Posterior mean of `z_{i,t}`, indexed `t·n + i`.
    pub field_mean: Vec<f64>,
    pub n_areas: usize,
    pub years: Vec<i64>,
    /// All but one grid point carry negligible weight.
    pub degenerate: bool,
    pub failed_points: usize,
    pub outer_iterations: usize,
}

impl FitResult {
    pub fn fixed_effect(&self, name: &str) -> Option<&Marginal> {
        self.fixed.iter().find(|m| m.name == name)
    }

    pub fn hyperparameter(&self, name: &str) -> Option<&Marginal> {
        self.hyper.iter().find(|m| m.name == name)
    }
}

struct Eval {
    log_posterior: f64,
    mode: Vec<f64>,
}

fn bounds(name: HyperName) -> (f64, f64) {
    match name {
        HyperName::Sigma => (1e-4f64.ln(), 20f64.ln()),
        HyperName::R => (-4.0, 4.0),
        HyperName::Xi => (-12.0, 12.0),
    }
}

struct Objective<'a> {
    model: &'a PoissonModel,
    inner: InnerOptions,
}

impl Objective<'_> {
    fn clamp(&self, theta: &mut [f64]) {
        for (v, &name) in theta.iter_mut().zip(self.model.free_hypers()) {
            let (lo, hi) = bounds(name);
            *v = v.clamp(lo, hi);
        }
    }

    fn eval(&self, theta: &[f64], start: Option<&[f64]>) -> Result<Eval> {
        let h = self.model.hyper_from_theta(theta);
        let problem = self.model.problem(h)?;
        let inner = laplace_inner(&problem, start, self.inner)?;
        let lp = inner.log_marginal + self.model.log_prior_theta(theta)?;
        if !lp.is_finite() {
            return Err(Error::Numerical(format!("log posterior is {lp} at {h:?}")));
        }
        Ok(Eval {
            log_posterior: lp,
            mode: inner.mode,
        })
    }

    fn value(&self, theta: &[f64], start: &[f64]) -> f64 {
        self.eval(theta, Some(start))
            .map(|e| -e.log_posterior)
            .unwrap_or(f64::INFINITY)
    }

    fn gradient(&self, theta: &[f64], start: &[f64], rel: f64) -> Vec<f64> {
        (0..theta.len())
            .map(|i| {
                let h = rel * theta[i].abs().max(1.0);
                let mut up = theta.to_vec();
                let mut dn = theta.to_vec();
                up[i] += h;
                dn[i] -= h;
                (self.value(&up, start) - self.value(&dn, start)) / (2.0 * h)
            })
            .collect()
    }
}

fn initial_theta(model: &PoissonModel) -> Vec<f64> {
    model
        .free_hypers()
        .iter()
        .map(|n| match n {
            HyperName::Sigma => 0.5f64.ln(),
            HyperName::R => 0.3f64.atanh(),
            HyperName::Xi => 0.0,
        })
        .collect()
}

/// Quasi-Newton (BFGS) minimisation of the negative log posterior.
fn find_mode(obj: &Objective<'_>, opts: &FitOptions) -> Result<(Vec<f64>, Eval, usize)> {
    let mut x = initial_theta(obj.model);
    let mut cur = obj.eval(&x, None)?;
    let d = x.len();
    if d == 0 {
        return Ok((x, cur, 0));
    }
    let mut g = obj.gradient(&x, &cur.mode, opts.fd_step);
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut iterations = 0;
    for it in 0..opts.max_outer_iter {
        iterations = it + 1;
        let gv = DVector::from_vec(g.clone());
        if gv.amax() < opts.outer_tol {
            break;
        }
        let mut dir = -(&hinv * &gv);
        if dir.dot(&gv) >= 0.0 {
            hinv = DMatrix::identity(d, d);
            dir = -gv.clone();
        }
        let len = dir.amax();
        if len > 2.0 {
            dir *= 2.0 / len;
        }
        let slope = dir.dot(&gv);
        let f0 = -cur.log_posterior;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let mut cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
            obj.clamp(&mut cand);
            if let Ok(e) = obj.eval(&cand, Some(&cur.mode)) {
                if -e.log_posterior <= f0 + 1e-4 * t * slope {
                    next = Some((cand, e));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, en)) = next else {
            log::debug!("mode search line search stalled at iteration {it}");
            break;
        };
        let gn = obj.gradient(&xn, &en.mode, opts.fd_step);
        let s = DVector::from_iterator(d, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(d, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-10 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        let step = s.amax();
        x = xn;
        cur = en;
        g = gn;
        log::debug!("mode search iteration {it}: θ = {x:?}, log posterior {}", cur.log_posterior);
        if step < 1e-7 {
            break;
        }
    }
    Ok((x, cur, iterations))
}

/// Finite-difference Hessian of the negative log posterior.
fn hessian(obj: &Objective<'_>, x: &[f64], f0: f64, start: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let at = |shift: &[(usize, f64)]| {
        let mut p = x.to_vec();
        for &(i, v) in shift {
            p[i] += v;
        }
        obj.value(&p, start)
    };
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = (at(&[(i, h)]) - 2.0 * f0 + at(&[(i, -h)])) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn grid_offsets(d: usize, k: usize, span: f64) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if k == 1 {
        vec![0.0]
    } else {
        (0..k)
            .map(|i| -span + 2.0 * span * i as f64 / (k - 1) as f64)
            .collect()
    };
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

/// Normal-mixture CDF inverted by bisection.
fn mixture_quantile(w: &[f64], m: &[f64], s: &[f64], p: f64) -> f64 {
    let cdf = |x: f64| -> f64 {
        w.iter()
            .zip(m)
            .zip(s)
            .map(|((w, m), s)| {
                if *s > 0.0 {
                    w * 0.5 * statrs::function::erf::erfc(-(x - m) / (s * std::f64::consts::SQRT_2))
                } else if x >= *m {
                    *w
                } else {
                    0.0
                }
            })
            .sum()
    };
    let mut lo = m.iter().zip(s).map(|(m, s)| m - 12.0 * s).fold(f64::INFINITY, f64::min);
    let mut hi = m.iter().zip(s).map(|(m, s)| m + 12.0 * s).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn mixture_marginal(name: &str, w: &[f64], m: &[f64], v: &[f64]) -> Marginal {
    let mean: f64 = w.iter().zip(m).map(|(w, m)| w * m).sum();
    let second: f64 = w.iter().zip(m).zip(v).map(|((w, m), v)| w * (v + m * m)).sum();
    let s: Vec<f64> = v.iter().map(|v| v.max(0.0).sqrt()).collect();
    Marginal {
        name: name.to_string(),
        mean,
        sd: (second - mean * mean).max(0.0).sqrt(),
        q025: mixture_quantile(w, m, &s, 0.025),
        median: mixture_quantile(w, m, &s, 0.5),
        q975: mixture_quantile(w, m, &s, 0.975),
    }
}

/// Quantile of a weighted discrete distribution, interpolating between the
/// cumulative weights at the atoms' midpoints.
fn weighted_quantile(pairs: &[(f64, f64)], p: f64) -> f64 {
    let mut cum = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for &(x, w) in pairs {
        let c = cum + 0.5 * w;
        cum += w;
        if c >= p {
            return match prev {
                None => x,
                Some((px, pc)) if c > pc => px + (x - px) * (p - pc) / (c - pc),
                Some(_) => x,
            };
        }
        prev = Some((x, c));
    }
    pairs.last().map_or(f64::NAN, |p| p.0)
}

fn empirical_marginal(name: &str, values: &[f64], w: &[f64]) -> Marginal {
    let mean: f64 = values.iter().zip(w).map(|(x, w)| x * w).sum();
    let var: f64 = values.iter().zip(w).map(|(x, w)| w * (x - mean).powi(2)).sum();
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(w.iter().copied()).filter(|p| p.1 > 0.0).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Marginal {
        name: name.to_string(),
        mean,
        sd: var.max(0.0).sqrt(),
        q025: weighted_quantile(&pairs, 0.025),
        median: weighted_quantile(&pairs, 0.5),
        q975: weighted_quantile(&pairs, 0.975),
    }
}

/// Fits the model: mode search, grid exploration and marginal assembly.
pub fn fit(model: &PoissonModel, opts: &FitOptions) -> Result<FitResult> {
    if opts.points_per_axis == 0 || !(opts.span >= 0.0) {
        return Err(Error::Invalid("grid needs at least one point per axis and a non-negative span".into()));
    }
    let obj = Objective {
        model,
        inner: opts.inner,
    };
    let (theta_mode, at_mode, outer_iterations) = find_mode(&obj, opts)
        .map_err(|e| Error::Numerical(format!("hyperparameter mode search failed: {e}")))?;
    let d = theta_mode.len();

    // axes of the grid from the curvature at the mode
    let (vecs, scales) = if d == 0 {
        (DMatrix::zeros(0, 0), vec![])
    } else {
        let h = hessian(&obj, &theta_mode, -at_mode.log_posterior, &at_mode.mode, opts.hessian_step);
        let eig = SymmetricEigen::new(h);
        let scales: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|l| {
                if !(*l >= opts.min_curvature) {
                    log::warn!("curvature {l:e} at the hyperparameter mode floored to {}", opts.min_curvature);
                }
                1.0 / l.max(opts.min_curvature).sqrt()
            })
            .collect();
        (eig.eigenvectors, scales)
    };

    let thetas: Vec<Vec<f64>> = grid_offsets(d, opts.points_per_axis, opts.span)
        .into_iter()
        .map(|z| {
            let mut th = theta_mode.clone();
            for a in 0..d {
                for (b, t) in th.iter_mut().enumerate() {
                    *t += vecs[(b, a)] * scales[a] * z[a];
                }
            }
            obj.clamp(&mut th);
            th
        })
        .collect();

    let p = model.fixed_names().len();
    let evaluated: Vec<Option<GridPoint>> = thetas
        .par_iter()
        .map(|th| -> Option<GridPoint> {
            let h = model.hyper_from_theta(th);
            let run = || -> Result<GridPoint> {
                let problem = model.problem(h)?;
                let inner = laplace_inner(&problem, Some(&at_mode.mode), opts.inner)?;
                let lp = inner.log_marginal + model.log_prior_theta(th)?;
                let fixed_var = (0..p)
                    .map(|k| inner.gaussian.marginal_variance(model.fixed_index(k)))
                    .collect();
                Ok(GridPoint {
                    theta: th.clone(),
                    hyper: h,
                    log_marginal: inner.log_marginal,
                    log_posterior: lp,
                    weight: 0.0,
                    mode: inner.mode,
                    fixed_var,
                })
            };
            match run() {
                Ok(g) if g.log_posterior.is_finite() => Some(g),
                Ok(_) => None,
                Err(e) => {
                    log::warn!("grid point {h:?} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let failed_points = evaluated.iter().filter(|p| p.is_none()).count();
    let mut points: Vec<GridPoint> = evaluated.into_iter().flatten().collect();
    if points.is_empty() {
        return Err(Error::Numerical("every grid point failed".into()));
    }
    let max_lp = points.iter().map(|g| g.log_posterior).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = points.iter().map(|g| (g.log_posterior - max_lp).exp()).sum();
    for g in &mut points {
        g.weight = (g.log_posterior - max_lp).exp() / total;
    }
    let weights: Vec<f64> = points.iter().map(|g| g.weight).collect();
    let degenerate = weights.iter().cloned().fold(0.0, f64::max) > 0.99;
    if degenerate {
        log::warn!("grid posterior is concentrated on a single point");
    }

    let fixed = (0..p)
        .map(|k| {
            let idx = model.fixed_index(k);
            let m: Vec<f64> = points.iter().map(|g| g.mode[idx]).collect();
            let v: Vec<f64> = points.iter().map(|g| g.fixed_var[k]).collect();
            mixture_marginal(&model.fixed_names()[k], &weights, &m, &v)
        })
        .collect();

    let mut hyper = Vec::new();
    if let Some(name) = model.kind().mixing_name() {
        let v: Vec<f64> = points.iter().map(|g| g.hyper.xi.unwrap()).collect();
        hyper.push(empirical_marginal(name, &v, &weights));
    }
    let v: Vec<f64> = points.iter().map(|g| g.hyper.sigma).collect();
    hyper.push(empirical_marginal("sigma", &v, &weights));
    let v: Vec<f64> = points.iter().map(|g| g.hyper.r).collect();
    hyper.push(empirical_marginal("r", &v, &weights));

    let (n, t) = (model.n_areas(), model.n_years());
    let mut field_mean = vec![0.0; n * t];
    for g in &points {
        for tt in 0..t {
            for i in 0..n {
                field_mean[tt * n + i] += g.weight * g.mode[model.field_index(tt, i)];
            }
        }
    }

    Ok(FitResult {
        kind: model.kind(),
        fixed_names: model.fixed_names().to_vec(),
        free: model.free_hypers().to_vec(),
        hyper_mode: model.hyper_from_theta(&theta_mode),
        theta_mode,
        points,
        fixed,
        hyper,
        field_mean,
        n_areas: n,
        years: model.years().to_vec(),
        degenerate,
        failed_points,
        outer_iterations,
    })
}
