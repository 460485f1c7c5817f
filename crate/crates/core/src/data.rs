//! Long-format panel data: counts and populations per area and year plus
//! covariates, with validation, pooled standardization and CSV exchange.
//!
//! Counts file header: `area_id,year,count,population,<covariates…>`, one
//! row per area-year. `area_id` is the 0-based graph node index. A second,
//! optional file `area_id,<covariates…>` holds time-constant covariates,
//! broadcast over years.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::inference::{FitResult, WaicReport};

/// Continuity correction added to counts in the log-incidence export.
pub const LOG_INCIDENCE_EPS: f64 = 0.5;

/// Pooled mean and sample standard deviation of a column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub fn fit(values: &[f64]) -> Option<Self> {
        let m = values.len() as f64;
        if values.len() < 2 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / m;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let sd = var.sqrt();
        (sd > 0.0 && sd.is_finite()).then_some(Self { mean, sd })
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().map(|v| (v - self.mean) / self.sd).collect()
    }

    pub fn invert(&self, standardized: &[f64]) -> Vec<f64> {
        standardized.iter().map(|v| v * self.sd + self.mean).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    /// Values as supplied, indexed `t·n + i`.
    pub raw: Vec<f64>,
    pub standardization: Standardization,
    /// Standardized values, indexed `t·n + i`.
    pub values: Vec<f64>,
    /// Same value for an area in every year.
    pub time_constant: bool,
}

/// Area × year panel. All per-cell vectors are indexed `t·n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    years: Vec<i64>,
    counts: Vec<u64>,
    population: Vec<f64>,
    covariates: Vec<Covariate>,
}

impl Dataset {
    /// Validates and standardizes. `covariates` holds raw columns indexed
    /// `t·n + i`.
    pub fn new(
        n: usize,
        years: Vec<i64>,
        counts: Vec<u64>,
        population: Vec<f64>,
        covariates: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let t = years.len();
        if n == 0 || t == 0 {
            return Err(Error::Data("dataset needs at least one area and one year".into()));
        }
        if years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("years must be strictly increasing".into()));
        }
        let cells = n * t;
        if counts.len() != cells || population.len() != cells {
            return Err(Error::Dimension(format!(
                "expected {cells} cells, got {} counts and {} populations",
                counts.len(),
                population.len()
            )));
        }
        for (c, p) in population.iter().enumerate() {
            if !(p.is_finite() && *p > 0.0) {
                return Err(Error::Data(format!(
                    "population must be positive: area {} year {} has {p}",
                    c % n,
                    years[c / n]
                )));
            }
        }
        let mut cols = Vec::with_capacity(covariates.len());
        for (name, raw) in covariates {
            if cols.iter().any(|c: &Covariate| c.name == name) {
                return Err(Error::Data(format!("duplicate covariate {name:?}")));
            }
            cols.push(make_covariate(name, raw, n, t)?);
        }
        Ok(Self {
            n,
            years,
            counts,
            population,
            covariates: cols,
        })
    }

    pub fn n_areas(&self) -> usize {
        self.n
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.years.len()
    }

    pub fn years(&self) -> &[i64] {
        &self.years
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn population(&self) -> &[f64] {
        &self.population
    }

    pub fn count(&self, t: usize, i: usize) -> u64 {
        self.counts[t * self.n + i]
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Result<&Covariate> {
        self.covariates
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Invalid(format!("unknown covariate {name:?}")))
    }

    pub fn covariate_names(&self) -> Vec<&str> {
        self.covariates.iter().map(|c| c.name.as_str()).collect()
    }

    /// Replaces the raw values of a covariate and re-standardizes it.
    pub fn replace_covariate(&mut self, name: &str, raw: Vec<f64>) -> Result<()> {
        let k = self
            .covariates
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Invalid(format!("unknown covariate {name:?}")))?;
        self.covariates[k] = make_covariate(name.to_string(), raw, self.n, self.n_years())?;
        Ok(())
    }

    /// `log((y + ε) / P)` per cell with `ε` = [`LOG_INCIDENCE_EPS`].
    pub fn log_incidence(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.population)
            .map(|(&y, p)| ((y as f64 + LOG_INCIDENCE_EPS) / p).ln())
            .collect()
    }

    /// Checks that the areas match the graph nodes.
    pub fn check_graph(&self, graph: &Graph) -> Result<()> {
        if graph.n() != self.n {
            return Err(Error::Data(format!(
                "dataset has {} areas but the graph has {} nodes",
                self.n,
                graph.n()
            )));
        }
        Ok(())
    }

    /// Writes the long-format table (raw covariates) read by [`load_dataset`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header = vec!["area_id".to_string(), "year".into(), "count".into(), "population".into()];
        header.extend(self.covariates.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for t in 0..self.n_years() {
            for i in 0..self.n {
                let c = t * self.n + i;
                let mut row = vec![
                    i.to_string(),
                    self.years[t].to_string(),
                    self.counts[c].to_string(),
                    self.population[c].to_string(),
                ];
                row.extend(self.covariates.iter().map(|cv| cv.raw[c].to_string()));
                w.write_record(&row).map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes the standardized design `area_id,year,<covariates…>`.
    pub fn write_standardized_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let mut header = vec!["area_id".to_string(), "year".into()];
        header.extend(self.covariates.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for t in 0..self.n_years() {
            for i in 0..self.n {
                let c = t * self.n + i;
                let mut row = vec![i.to_string(), self.years[t].to_string()];
                row.extend(self.covariates.iter().map(|cv| cv.values[c].to_string()));
                w.write_record(&row).map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_log_incidence(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["area_id", "year", "log_incidence"])
            .map_err(|e| csv_err(path, e))?;
        let li = self.log_incidence();
        for t in 0..self.n_years() {
            for i in 0..self.n {
                w.write_record([
                    i.to_string(),
                    self.years[t].to_string(),
                    li[t * self.n + i].to_string(),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Header of the fixed-effect summary.
pub const FIXED_EFFECTS_HEADER: [&str; 5] = ["effect", "mean", "sd", "0.025quant", "0.975quant"];
/// Header of the hyperparameter summary.
pub const HYPERPARAMETERS_HEADER: [&str; 6] = ["param", "mean", "sd", "Q0.025", "Median", "Q0.975"];

/// Writes `fixed_effects.csv`, `hyperparameters.csv`, `latent_field.csv`
/// and, when given, `waic.json` into `dir`. Returns the written paths.
pub fn export_results(
    fit: &FitResult,
    waic: Option<&WaicReport>,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("fixed_effects.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(FIXED_EFFECTS_HEADER).map_err(|e| csv_err(&path, e))?;
    for m in &fit.fixed {
        w.write_record([
            m.name.clone(),
            m.mean.to_string(),
            m.sd.to_string(),
            m.q025.to_string(),
            m.q975.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("hyperparameters.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(HYPERPARAMETERS_HEADER).map_err(|e| csv_err(&path, e))?;
    for m in &fit.hyper {
        w.write_record([
            m.name.clone(),
            m.mean.to_string(),
            m.sd.to_string(),
            m.q025.to_string(),
            m.median.to_string(),
            m.q975.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("latent_field.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["area_id", "year", "mean"]).map_err(|e| csv_err(&path, e))?;
    let n = fit.n_areas;
    for (t, year) in fit.years.iter().enumerate() {
        for i in 0..n {
            w.write_record([i.to_string(), year.to_string(), fit.field_mean[t * n + i].to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    if let Some(report) = waic {
        let path = dir.join("waic.json");
        let text = serde_json::to_string_pretty(report).map_err(|e| Error::Numerical(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn make_covariate(name: String, raw: Vec<f64>, n: usize, t: usize) -> Result<Covariate> {
    if raw.len() != n * t {
        return Err(Error::Dimension(format!(
            "covariate {name:?} has {} values, expected {}",
            raw.len(),
            n * t
        )));
    }
    if let Some(c) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "covariate {name:?} is not finite at area {} (year index {})",
            c % n,
            c / n
        )));
    }
    let standardization = Standardization::fit(&raw)
        .ok_or_else(|| Error::Data(format!("covariate {name:?} is constant")))?;
    let values = standardization.apply(&raw);
    let time_constant = (1..t).all(|s| raw[s * n..(s + 1) * n] == raw[..n]);
    Ok(Covariate {
        name,
        raw,
        standardization,
        values,
        time_constant,
    })
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: line as usize,
        msg: msg.into(),
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<(u64, Vec<String>)>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: u64, col: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| parse_err(path, line, format!("column {col}: cannot parse {v:?}")))
}

/// Reads counts, optional per-area covariates and the adjacency graph.
pub fn load_dataset(
    counts_path: &Path,
    area_covariates_path: Option<&Path>,
    adjacency_path: &Path,
) -> Result<(Dataset, Graph)> {
    let graph = Graph::from_path(adjacency_path, None)?;
    let dataset = read_dataset(counts_path, area_covariates_path, graph.n())?;
    Ok((dataset, graph))
}

/// Reads the panel for `n` areas (node indices `0..n`).
pub fn read_dataset(
    counts_path: &Path,
    area_covariates_path: Option<&Path>,
    n: usize,
) -> Result<Dataset> {
    let path = counts_path;
    let (header, rows) = read_table(path)?;
    const FIXED: [&str; 4] = ["area_id", "year", "count", "population"];
    if header.len() < 4 || header[..4] != FIXED {
        return Err(parse_err(
            path,
            1,
            format!("header must start with {}", FIXED.join(",")),
        ));
    }
    let cov_names: Vec<String> = header[4..].to_vec();

    struct Row {
        count: u64,
        pop: f64,
        covs: Vec<f64>,
    }
    let mut cells: BTreeMap<i64, BTreeMap<usize, Row>> = BTreeMap::new();
    for (line, rec) in rows {
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let area: usize = parse_num(path, line, "area_id", &rec[0])?;
        if area >= n {
            return Err(parse_err(
                path,
                line,
                format!("area_id {area} is not a graph node (graph has {n} nodes)"),
            ));
        }
        let year: i64 = parse_num(path, line, "year", &rec[1])?;
        let count: f64 = parse_num(path, line, "count", &rec[2])?;
        if count < 0.0 {
            return Err(parse_err(path, line, format!("negative count {count}")));
        }
        if count.fract() != 0.0 || !count.is_finite() {
            return Err(parse_err(path, line, format!("count {count} is not an integer")));
        }
        let pop: f64 = parse_num(path, line, "population", &rec[3])?;
        if !(pop > 0.0 && pop.is_finite()) {
            return Err(parse_err(
                path,
                line,
                format!("population must be positive (area {area}, year {year}): {pop}"),
            ));
        }
        let covs = rec[4..]
            .iter()
            .zip(&cov_names)
            .map(|(v, name)| parse_num(path, line, name, v))
            .collect::<Result<Vec<f64>>>()?;
        let year_map = cells.entry(year).or_default();
        if year_map
            .insert(area, Row { count: count as u64, pop, covs })
            .is_some()
        {
            return Err(parse_err(
                path,
                line,
                format!("duplicate row for area {area}, year {year}"),
            ));
        }
    }
    if cells.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    for (year, m) in &cells {
        if m.len() != n {
            let missing: Vec<usize> = (0..n).filter(|i| !m.contains_key(i)).collect();
            return Err(Error::Data(format!(
                "{}: year {year} is missing areas {missing:?}",
                path.display()
            )));
        }
    }

    let years: Vec<i64> = cells.keys().copied().collect();
    let t = years.len();
    let mut counts = Vec::with_capacity(n * t);
    let mut population = Vec::with_capacity(n * t);
    let mut columns: Vec<(String, Vec<f64>)> =
        cov_names.iter().map(|c| (c.clone(), Vec::with_capacity(n * t))).collect();
    for m in cells.values() {
        for row in m.values() {
            counts.push(row.count);
            population.push(row.pop);
            for (k, v) in row.covs.iter().enumerate() {
                columns[k].1.push(*v);
            }
        }
    }

    if let Some(ap) = area_covariates_path {
        let (h, rows) = read_table(ap)?;
        if h.first().map(String::as_str) != Some("area_id") || h.len() < 2 {
            return Err(parse_err(ap, 1, "header must be area_id,<covariates…>"));
        }
        let mut per_area: Vec<Option<Vec<f64>>> = vec![None; n];
        for (line, rec) in rows {
            if rec.len() != h.len() {
                return Err(parse_err(
                    ap,
                    line,
                    format!("expected {} fields, found {}", h.len(), rec.len()),
                ));
            }
            let area: usize = parse_num(ap, line, "area_id", &rec[0])?;
            if area >= n {
                return Err(parse_err(ap, line, format!("area_id {area} is not a graph node")));
            }
            if per_area[area].is_some() {
                return Err(parse_err(ap, line, format!("duplicate area {area}")));
            }
            per_area[area] = Some(
                rec[1..]
                    .iter()
                    .zip(&h[1..])
                    .map(|(v, name)| parse_num(ap, line, name, v))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        if let Some(i) = per_area.iter().position(Option::is_none) {
            return Err(Error::Data(format!("{}: area {i} is missing", ap.display())));
        }
        for (k, name) in h[1..].iter().enumerate() {
            let col: Vec<f64> = (0..t)
                .flat_map(|_| per_area.iter().map(move |r| r.as_ref().unwrap()[k]))
                .collect();
            columns.push((name.clone(), col));
        }
    }

    Dataset::new(n, years, counts, population, columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::new(
            3,
            vec![2019, 2020],
            vec![1, 0, 4, 2, 3, 0],
            vec![100.0, 200.0, 300.0, 100.0, 200.0, 300.0],
            vec![
                ("a".into(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]),
                ("b".into(), vec![0.5, 1.0, 2.0, 0.7, 1.1, 1.9]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn standardized_columns_have_unit_scale() {
        let d = toy();
        for c in d.covariates() {
            let m = c.values.iter().sum::<f64>() / 6.0;
            let v = c.values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
            let back = c.standardization.invert(&c.values);
            for (a, b) in back.iter().zip(&c.raw) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(d.covariate("a").unwrap().time_constant);
        assert!(!d.covariate("b").unwrap().time_constant);
    }

    #[test]
    fn zero_population_is_rejected() {
        let e = Dataset::new(2, vec![1], vec![0, 1], vec![1.0, 0.0], vec![]).unwrap_err();
        assert!(e.to_string().contains("area 1"), "{e}");
    }

    #[test]
    fn constant_covariate_is_rejected() {
        assert!(Dataset::new(2, vec![1], vec![0, 1], vec![1.0, 2.0], vec![("c".into(), vec![3.0, 3.0])]).is_err());
    }
}
