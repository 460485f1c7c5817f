use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use stcar::inference::{MixingPriorSpec, PcSpec};
use stcar::pc_prior::PcTarget;
use stcar::simulate::{CovariateGenerator, GraphSource};
use stcar::structures::StructureKind;

use crate::config::{parse_pair, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "stcar", version, about = "Spatio-temporal CAR models for areal Poisson counts")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel of counts with known truth.
    Simulate(SimulateArgs),
    /// Apply the Spatial+ filter and write the filtered design.
    Filter(FilterArgs),
    /// Fit one model and write posterior summaries.
    Fit(FitArgs),
    /// Fit every structure and prior setting, with and without Spatial+.
    Compare(CompareArgs),
    /// Calibrate a PC prior and tabulate its density.
    Prior(PriorArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format counts CSV (area_id, year, count, population, covariates...).
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Area-level covariates CSV (area_id, covariates...).
    #[arg(long)]
    pub area: Option<PathBuf>,
    /// Edge list, or a .csv 0/1 adjacency matrix.
    #[arg(long)]
    pub adjacency: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<StructureKind>,
    /// PC prior on σ as U,ALPHA.
    #[arg(long, value_parser = parse_pair)]
    pub sigma_prior: Option<(f64, f64)>,
    /// PC prior on r as U,ALPHA.
    #[arg(long, value_parser = parse_pair)]
    pub r_prior: Option<(f64, f64)>,
    /// Prior on the mixing parameter: `uniform` or U,ALPHA for a PC prior.
    #[arg(long, value_parser = parse_mixing)]
    pub xi_prior: Option<MixingPriorSpec>,
    /// Comma-separated covariates to include (default: all).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long)]
    pub points_per_axis: Option<usize>,
    /// Grid half-width in posterior standard deviations.
    #[arg(long)]
    pub span: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated covariates to filter.
    #[arg(long, value_delimiter = ',')]
    pub filter_covariates: Option<Vec<String>>,
    /// Number of low-frequency eigenvectors removed.
    #[arg(short, long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Filter these covariates with Spatial+ before fitting.
    #[arg(long, value_delimiter = ',')]
    pub filter_covariates: Option<Vec<String>>,
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Posterior draws for WAIC; 0 skips it.
    #[arg(long)]
    pub waic_draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated eigenvector counts for the Spatial+ columns.
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub filter_covariates: Option<Vec<String>>,
    #[arg(long)]
    pub waic_draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<StructureKind>,
    /// Lattice size as ROWSxCOLS.
    #[arg(long, value_parser = parse_lattice, conflicts_with = "edges")]
    pub lattice: Option<(usize, usize)>,
    /// Use this graph instead of a lattice.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub years: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    /// Comma-separated effects of the standardized covariates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,
    /// Comma-separated intercepts, one per year or a single value.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub intercepts: Option<Vec<f64>>,
    /// Plant a low-frequency confounder in the first covariate.
    #[arg(long)]
    pub confounded: bool,
    #[arg(long, default_value_t = 0.5, requires = "confounded")]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0.5, requires = "confounded")]
    pub field_weight: f64,
    /// Number of trailing covariates redrawn every year.
    #[arg(long, conflicts_with = "confounded")]
    pub time_varying: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    /// sigma, r, rho, lambda or phi.
    #[arg(long, value_parser = parse_target)]
    pub target: Option<PcTarget>,
    #[arg(long)]
    pub u: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Graph for the mixing targets (and n for r).
    #[arg(long)]
    pub adjacency: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub years: Option<usize>,
    /// Rows of the density table.
    #[arg(long)]
    pub points: Option<usize>,
}

fn parse_kind(s: &str) -> Result<StructureKind, String> {
    s.parse().map_err(|e: stcar::Error| e.to_string())
}

fn parse_target(s: &str) -> Result<PcTarget, String> {
    s.parse().map_err(|e: stcar::Error| e.to_string())
}

fn parse_mixing(s: &str) -> Result<MixingPriorSpec, String> {
    if s.eq_ignore_ascii_case("uniform") {
        return Ok(MixingPriorSpec::Uniform);
    }
    let (u, alpha) = parse_pair(s)?;
    Ok(MixingPriorSpec::Pc { u, alpha })
}

fn parse_lattice(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let rows = a.parse().map_err(|e| format!("rows in {s:?}: {e}"))?;
    let cols = b.parse().map_err(|e| format!("cols in {s:?}: {e}"))?;
    Ok((rows, cols))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if self.counts.is_some() {
            cfg.data.counts = self.counts;
        }
        if self.area.is_some() {
            cfg.data.area = self.area;
        }
        if self.adjacency.is_some() {
            cfg.data.adjacency = self.adjacency;
        }
    }
}

impl ModelArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.model.kind, self.kind);
        set(&mut cfg.model.sigma_prior, self.sigma_prior.map(|(u, a)| PcSpec::new(u, a)));
        set(&mut cfg.model.r_prior, self.r_prior.map(|(u, a)| PcSpec::new(u, a)));
        set(&mut cfg.model.xi_prior, self.xi_prior);
        if self.covariates.is_some() {
            cfg.model.covariates = self.covariates;
        }
        set(&mut cfg.grid.points_per_axis, self.points_per_axis);
        set(&mut cfg.grid.span, self.span);
    }
}

/// Merges `k` and covariate flags into the optional filter section.
fn apply_filter_flags(cfg: &mut RunConfig, covariates: Option<Vec<String>>, k: Option<usize>) -> Result<(), CliError> {
    match (&mut cfg.filter, covariates, k) {
        (_, None, None) => {}
        (Some(f), c, k) => {
            set(&mut f.covariates, c);
            set(&mut f.k, k);
        }
        (None, Some(c), Some(k)) => {
            cfg.filter = Some(stcar::confounding::FilterSpec { covariates: c, k });
        }
        (None, _, _) => {
            return Err(CliError::Usage(
                "a Spatial+ filter needs both --filter-covariates and -k (or a [filter] section)".into(),
            ))
        }
    }
    Ok(())
}

/// Which pipeline a resolved configuration drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Filter,
    Fit,
    Compare,
    Prior,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Filter => "filter",
            Mode::Fit => "fit",
            Mode::Compare => "compare",
            Mode::Prior => "prior",
        }
    }
}

impl Cli {
    /// Loads the config file and applies every flag on top of it.
    pub fn resolve(self) -> Result<(Mode, RunConfig), CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        set(&mut cfg.output, self.out);
        set(&mut cfg.seed, self.seed);
        let mode = match self.command {
            Command::Simulate(a) => {
                let s = &mut cfg.simulate;
                set(&mut s.kind, a.kind);
                if let Some((rows, cols)) = a.lattice {
                    s.graph = GraphSource::Lattice { rows, cols };
                }
                if let Some(path) = a.edges {
                    s.graph = GraphSource::EdgeList { path };
                }
                set(&mut s.years, a.years);
                set(&mut s.sigma, a.sigma);
                set(&mut s.r, a.r);
                set(&mut s.xi, a.xi);
                set(&mut s.beta, a.beta);
                set(&mut s.intercepts, a.intercepts);
                if a.confounded {
                    s.covariates = CovariateGenerator::Confounded {
                        noise_sd: a.noise_sd,
                        field_weight: a.field_weight,
                    };
                }
                if let Some(time_varying) = a.time_varying {
                    s.covariates = CovariateGenerator::Random { time_varying };
                }
                s.seed = cfg.seed;
                Mode::Simulate
            }
            Command::Filter(a) => {
                a.data.apply(&mut cfg);
                apply_filter_flags(&mut cfg, a.filter_covariates, a.k)?;
                Mode::Filter
            }
            Command::Fit(a) => {
                a.data.apply(&mut cfg);
                a.model.apply(&mut cfg);
                apply_filter_flags(&mut cfg, a.filter_covariates, a.k)?;
                set(&mut cfg.waic.draws, a.waic_draws);
                Mode::Fit
            }
            Command::Compare(a) => {
                a.data.apply(&mut cfg);
                a.model.apply(&mut cfg);
                set(&mut cfg.compare.k_values, a.k_values);
                set(&mut cfg.compare.filter_covariates, a.filter_covariates);
                set(&mut cfg.waic.draws, a.waic_draws);
                Mode::Compare
            }
            Command::Prior(a) => {
                let p = &mut cfg.prior;
                set(&mut p.target, a.target);
                set(&mut p.u, a.u);
                set(&mut p.alpha, a.alpha);
                set(&mut p.n, a.n);
                set(&mut p.years, a.years);
                set(&mut p.points, a.points);
                if a.adjacency.is_some() {
                    cfg.data.adjacency = a.adjacency;
                }
                Mode::Prior
            }
        };
        Ok((mode, cfg))
    }
}
