//! Simplified Spatial+: remove the projection of a covariate onto the `k`
//! lowest-frequency Laplacian eigenvectors (constant vector included).

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Spectrum;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub covariates: Vec<String>,
    pub k: usize,
}

/// Scale bookkeeping for one filtered covariate. The model coefficient of
/// the re-standardized column divided by `scale` is the effect per unit of
/// the original standardized covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredCovariate {
    pub name: String,
    pub k: usize,
    pub scale: f64,
}

impl FilteredCovariate {
    pub fn back_transform(&self, coefficient: f64) -> f64 {
        coefficient / self.scale
    }
}

/// `x − E_k E_kᵀ x` for an area-indexed column.
pub fn spatial_plus_filter(x: &[f64], spectrum: &Spectrum, k: usize) -> Result<Vec<f64>> {
    let n = spectrum.laplacian_eigs.len();
    if x.len() != n {
        return Err(Error::Dimension(format!(
            "column has length {}, graph has {n} nodes",
            x.len()
        )));
    }
    if k >= n {
        return Err(Error::Invalid(format!(
            "cannot remove {k} eigenvectors from a graph with {n} nodes (need k < n)"
        )));
    }
    let mut out = x.to_vec();
    for j in 0..k {
        let e = spectrum.laplacian_vecs.column(j);
        let coef: f64 = e.iter().zip(x).map(|(a, b)| a * b).sum();
        out.iter_mut().zip(e.iter()).for_each(|(o, a)| *o -= coef * a);
    }
    Ok(out)
}

/// Filters the named covariates of `dataset` (their standardized values)
/// and re-standardizes them. Time-constant columns are filtered once and
/// broadcast; others are filtered year by year.
pub fn apply_filter(
    dataset: &Dataset,
    spec: &FilterSpec,
    spectrum: &Spectrum,
) -> Result<(Dataset, Vec<FilteredCovariate>)> {
    let n = dataset.n_areas();
    let t = dataset.n_years();
    let mut out = dataset.clone();
    let mut records = Vec::with_capacity(spec.covariates.len());
    for name in &spec.covariates {
        let cov = dataset.covariate(name)?;
        let filtered: Vec<f64> = if cov.time_constant {
            let once = spatial_plus_filter(&cov.values[..n], spectrum, spec.k)?;
            (0..t).flat_map(|_| once.iter().copied()).collect()
        } else {
            let mut v = Vec::with_capacity(n * t);
            for s in 0..t {
                v.extend(spatial_plus_filter(&cov.values[s * n..(s + 1) * n], spectrum, spec.k)?);
            }
            v
        };
        out.replace_covariate(name, filtered).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!(
                "{msg} after removing {} eigenvectors",
                spec.k
            )),
            other => other,
        })?;
        records.push(FilteredCovariate {
            name: name.clone(),
            k: spec.k,
            scale: out.covariate(name)?.standardization.sd,
        });
    }
    Ok((out, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn k1_on_path_centres_the_column() {
        let g = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
        let x = [0.3, -1.2, 2.5];
        let f = spatial_plus_filter(&x, g.spectrum().unwrap(), 1).unwrap();
        let m = (0.3 - 1.2 + 2.5) / 3.0;
        for (a, b) in f.iter().zip(&x) {
            assert!((a - (b - m)).abs() < 1e-12);
        }
    }

    #[test]
    fn second_eigenvector_is_removed_with_k2() {
        let g = Graph::lattice(3, 4).unwrap();
        let s = g.spectrum().unwrap();
        let x: Vec<f64> = s.laplacian_vecs.column(1).iter().copied().collect();
        let f = spatial_plus_filter(&x, s, 2).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-12));
        assert!(spatial_plus_filter(&x, s, 12).is_err());
    }
}
