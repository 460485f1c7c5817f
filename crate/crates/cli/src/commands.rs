use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use stcar::confounding::{apply_filter, FilterSpec, FilteredCovariate};
use stcar::data::{export_results, load_dataset, Dataset};
use stcar::graph::Graph;
use stcar::inference::{fit, waic, MixingPriorSpec, ModelSpec, PoissonModel};
use stcar::pc_prior::{PcPrior, PcTarget, PriorContext};
use stcar::simulate::simulate;
use stcar::structures::StructureKind;

use crate::args::{Cli, Mode};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{write_manifest, write_text, RunClock};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let print_config = cli.print_config;
    let (mode, cfg) = cli.resolve()?;
    if print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let clock = RunClock::start();
    let outputs = match mode {
        Mode::Simulate => run_simulate(&cfg)?,
        Mode::Filter => run_filter(&cfg)?,
        Mode::Fit => run_fit(&cfg)?,
        Mode::Compare => run_compare(&cfg)?,
        Mode::Prior => run_prior(&cfg)?,
    };
    let manifest = write_manifest(&cfg.output, mode.name(), &cfg, clock, outputs)?;
    info!("wrote {}", manifest.display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, key: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("no {key} file given; pass {flag} or set data.{key} in the config")))
}

fn load(cfg: &RunConfig) -> Result<(Dataset, Arc<Graph>), CliError> {
    let counts = required(&cfg.data.counts, "--counts", "counts")?;
    let adjacency = required(&cfg.data.adjacency, "--adjacency", "adjacency")?;
    let (dataset, graph) = load_dataset(counts, cfg.data.area.as_deref(), adjacency)?;
    info!(
        "loaded {} areas x {} years with covariates {:?}",
        dataset.n_areas(),
        dataset.n_years(),
        dataset.covariate_names()
    );
    Ok((dataset, Arc::new(graph)))
}

fn check_model(spec: &ModelSpec) {
    if spec.kind == StructureKind::Icar && spec.xi_prior != ModelSpec::default().xi_prior {
        warn!("ICAR has no mixing parameter; the xi prior setting is ignored");
    }
}

fn run_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let sim = simulate(&cfg.simulate)?;
    sim.write(&cfg.output)?;
    println!(
        "simulated {} areas x {} years ({}), total count {}",
        sim.dataset.n_areas(),
        sim.dataset.n_years(),
        cfg.simulate.kind,
        sim.dataset.counts().iter().sum::<u64>()
    );
    Ok(["counts.csv", "adjacency.txt", "truth.json"]
        .iter()
        .map(|f| cfg.output.join(f))
        .collect())
}

fn write_scales(path: &Path, scales: &[FilteredCovariate]) -> Result<(), CliError> {
    let mut text = String::from("covariate,k,scale\n");
    for s in scales {
        text.push_str(&format!("{},{},{}\n", s.name, s.k, s.scale));
    }
    write_text(path, &text)
}

fn run_filter(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let spec = cfg.filter.as_ref().ok_or_else(|| {
        CliError::Usage("nothing to filter; pass --filter-covariates and -k or add a [filter] section".into())
    })?;
    let (dataset, graph) = load(cfg)?;
    let (filtered, scales) = apply_filter(&dataset, spec, graph.spectrum()?)?;
    create_dir(&cfg.output)?;
    let design = cfg.output.join("filtered_design.csv");
    filtered.write_standardized_csv(&design)?;
    let scale_path = cfg.output.join("filter_scales.csv");
    write_scales(&scale_path, &scales)?;
    for s in &scales {
        println!("{}: removed {} eigenvectors, residual sd {:.4}", s.name, s.k, s.scale);
    }
    Ok(vec![design, scale_path])
}

fn run_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    check_model(&cfg.model);
    let (mut dataset, graph) = load(cfg)?;
    let mut scales = Vec::new();
    if let Some(spec) = &cfg.filter {
        let (filtered, s) = apply_filter(&dataset, spec, graph.spectrum()?)?;
        dataset = filtered;
        scales = s;
    }
    let model = PoissonModel::new(&dataset, graph, cfg.model.clone())?;
    let result = fit(&model, &cfg.grid)?;
    if result.degenerate {
        warn!("posterior weight concentrates on one grid point; consider a wider grid or more points");
    }
    let report = if cfg.waic.draws > 0 {
        Some(waic(&model, &result, cfg.waic.draws, cfg.seed)?)
    } else {
        None
    };
    let mut outputs = export_results(&result, report.as_ref(), &cfg.output)?;

    if !scales.is_empty() {
        let path = cfg.output.join("filtered_effects.csv");
        let mut text = String::from("effect,k,scale,mean,0.025quant,0.975quant\n");
        for s in &scales {
            let m = result
                .fixed_effect(&s.name)
                .ok_or_else(|| CliError::Usage(format!("filtered covariate {:?} is not in the model", s.name)))?;
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.name,
                s.k,
                s.scale,
                s.back_transform(m.mean),
                s.back_transform(m.q025),
                s.back_transform(m.q975)
            ));
        }
        write_text(&path, &text)?;
        outputs.push(path);
    }

    println!("{} fit, {} grid points", result.kind, result.points.len());
    println!("{:<16} {:>10} {:>10} {:>10} {:>10}", "effect", "mean", "sd", "q0.025", "q0.975");
    for m in result.fixed.iter().chain(&result.hyper) {
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            m.name, m.mean, m.sd, m.q025, m.q975
        );
    }
    if let Some(w) = &report {
        println!("WAIC {:.2} (p_eff {:.2}, MC se {:.2}, {} draws)", w.waic, w.p_eff, w.mc_se, w.draws);
    }
    Ok(outputs)
}

/// Rows of the comparison table: structure and mixing prior.
fn compare_rows() -> Vec<(StructureKind, &'static str, Option<MixingPriorSpec>)> {
    let mut rows = vec![(StructureKind::Icar, "-", None)];
    for kind in [StructureKind::Pcar, StructureKind::Lcar, StructureKind::Bym] {
        rows.push((kind, "Unif", Some(MixingPriorSpec::Uniform)));
        rows.push((kind, "PC1", Some(MixingPriorSpec::Pc { u: 0.5, alpha: 2.0 / 3.0 })));
        rows.push((kind, "PC2", Some(MixingPriorSpec::Pc { u: 0.6, alpha: 0.9 })));
    }
    rows
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn run_compare(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    if cfg.waic.draws == 0 {
        return Err(CliError::Usage("compare needs WAIC draws > 0".into()));
    }
    let (dataset, graph) = load(cfg)?;
    let covariates: Vec<String> = if !cfg.compare.filter_covariates.is_empty() {
        cfg.compare.filter_covariates.clone()
    } else if let Some(c) = &cfg.model.covariates {
        c.clone()
    } else {
        dataset.covariate_names().iter().map(|s| s.to_string()).collect()
    };

    let mut variants: Vec<(String, Result<Dataset, String>)> = vec![("Base".into(), Ok(dataset.clone()))];
    for &k in &cfg.compare.k_values {
        let spec = FilterSpec {
            covariates: covariates.clone(),
            k,
        };
        let filtered = graph
            .spectrum()
            .and_then(|s| apply_filter(&dataset, &spec, s))
            .map(|(d, _)| d)
            .map_err(|e| e.to_string());
        variants.push((format!("S+{k}"), filtered));
    }

    let rows = compare_rows();
    let cells: Vec<(usize, usize)> = (0..rows.len())
        .flat_map(|r| (0..variants.len()).map(move |v| (r, v)))
        .collect();
    let results: Vec<Result<(f64, f64), String>> = cells
        .par_iter()
        .map(|&(r, v)| {
            let (kind, _, xi_prior) = rows[r];
            let data = variants[v].1.as_ref().map_err(|e| e.clone())?;
            let mut spec = cfg.model.clone();
            spec.kind = kind;
            if let Some(p) = xi_prior {
                spec.xi_prior = p;
            }
            let run = || -> stcar::Result<(f64, f64)> {
                let model = PoissonModel::new(data, graph.clone(), spec)?;
                let f = fit(&model, &cfg.grid)?;
                let w = waic(&model, &f, cfg.waic.draws, cfg.seed)?;
                Ok((w.waic, w.p_eff))
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut text = String::from("model,prior");
    for (name, _) in &variants {
        text.push_str(&format!(",{name}_WAIC,{name}_P_eff"));
    }
    text.push_str(",error\n");
    for (r, (kind, prior, _)) in rows.iter().enumerate() {
        text.push_str(&format!("{kind},{prior}"));
        let mut errors = Vec::new();
        for (v, (name, _)) in variants.iter().enumerate() {
            match &results[r * variants.len() + v] {
                Ok((w, p)) => text.push_str(&format!(",{w:.4},{p:.4}")),
                Err(e) => {
                    text.push_str(",,");
                    errors.push(format!("{name}: {e}"));
                }
            }
        }
        if !errors.is_empty() {
            warn!("{kind} {prior}: {}", errors.join("; "));
        }
        text.push_str(&format!(",{}\n", csv_field(&errors.join("; "))));
    }
    create_dir(&cfg.output)?;
    let path = cfg.output.join("compare.csv");
    write_text(&path, &text)?;
    print!("{text}");
    Ok(vec![path])
}

fn run_prior(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let p = &cfg.prior;
    let graph = match &cfg.data.adjacency {
        Some(path) => Some(Graph::from_path(path, None)?),
        None => None,
    };
    let spectrum = match (&graph, p.target) {
        (Some(g), _) => Some(g.spectrum()?),
        (None, PcTarget::Rho | PcTarget::Lambda | PcTarget::Phi) => {
            return Err(CliError::Usage(format!(
                "the {} prior depends on the graph; pass --adjacency",
                p.target.name()
            )))
        }
        (None, _) => None,
    };
    let n = graph.as_ref().map_or(p.n, Graph::n);
    let ctx = PriorContext {
        n,
        t: p.years,
        spectrum,
    };
    let prior = PcPrior::calibrate(p.target, p.u, p.alpha, ctx)?;
    let mean = prior.mean()?;
    println!(
        "{}: U = {}, alpha = {}, psi = {:.6}, mean = {:.6}",
        p.target.name(),
        p.u,
        p.alpha,
        prior.psi(),
        mean
    );

    if p.points < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    let (lo, hi) = match p.target {
        // out to the 0.999 quantile
        PcTarget::Sigma => (0.0, 1000f64.ln() / prior.psi()),
        PcTarget::R => (-0.999, 0.999),
        _ => (0.0, 0.999),
    };
    let mut text = String::from("theta,density,kld,distance,clamped\n");
    for k in 0..p.points {
        let theta = lo + (hi - lo) * k as f64 / (p.points - 1) as f64;
        let d = prior.density(theta)?;
        text.push_str(&format!(
            "{theta},{},{},{},{}\n",
            d.value,
            prior.kld(theta)?,
            prior.distance(theta)?,
            d.clamped
        ));
    }
    create_dir(&cfg.output)?;
    let table = cfg.output.join("prior.csv");
    write_text(&table, &text)?;
    let summary = cfg.output.join("prior.json");
    let json = serde_json::json!({
        "target": p.target,
        "u": p.u,
        "alpha": p.alpha,
        "n": n,
        "years": p.years,
        "psi": prior.psi(),
        "mean": mean,
    });
    write_text(&summary, &(serde_json::to_string_pretty(&json).unwrap_or_default() + "\n"))?;
    Ok(vec![table, summary])
}
