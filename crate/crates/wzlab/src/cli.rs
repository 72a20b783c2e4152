//! Command-line front end: four subcommands sharing one JSON config, one
//! output directory, and one master seed.
//!
//! Seed precedence is `--seed`, then the `WZLAB_SEED` environment variable,
//! then the config's `seed` field. Every run with the same effective config
//! and seed writes byte-identical files at any thread count.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::codec_sim::{self, Cause};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::info_density::DensityTable;
use crate::moments::MomentSummary;
use crate::region::{self, Regime, RegionPoint};
use crate::report;

pub const SEED_ENV: &str = "WZLAB_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "wzlab",
    version,
    about = "Rate, distortion, and generalization analysis for regression over \
             binned, noisily quantized sources"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the per-sample information/loss moment vector and covariance.
    ///
    /// Writes moments.json (always JSON; --format has no effect here).
    Moments(RunArgs),
    /// Sweep the finite block-length rate solver over the config grids.
    ///
    /// Writes regions.(csv|json) for the (n, epsilon, D, G) sweep and
    /// region_gfloors.(csv|json) for the minimal-generalization sweep at the
    /// fixed rate budgets, both in the region-point schema.
    Regions(RunArgs),
    /// Run quantize-and-bin codec trials and the excess-probability bound.
    ///
    /// Writes codec_trials.(csv|json) plus codec_summary.json.
    Codec(RunArgs),
    /// Emit the asymptotic boundaries and the root-loss reference bracket.
    ///
    /// Writes asymptotic_rates.(csv|json), asymptotic_regions.(csv|json),
    /// and root_loss_bounds.(csv|json). Asymptotic region rows report n = 0
    /// and epsilon = 0.
    Asymptotic(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; overrides WZLAB_SEED and the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Table output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Parse argv, run the command, and report failures on stderr. Returns the
/// process exit code: 0 ok, 2 config, 3 numeric, 1 io.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Moments(args) => cmd_moments(args),
        Command::Regions(args) => cmd_regions(args),
        Command::Codec(args) => cmd_codec(args),
        Command::Asymptotic(args) => cmd_asymptotic(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("wzlab: {e}");
            e.exit_code()
        }
    }
}

struct Run {
    config: ExperimentConfig,
    seed: u64,
    hash: String,
}

impl Run {
    fn prepare(args: &RunArgs) -> Result<Run> {
        let config = ExperimentConfig::load(&args.config)?;
        let seed = resolve_seed(args.seed, std::env::var(SEED_ENV).ok(), config.seed)?;
        if let Some(k) = args.threads {
            if k == 0 {
                return Err(Error::Config("threads: must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| Error::Config(format!("threads: {e}")))?;
        }
        let hash = config.hash();
        Ok(Run { config, seed, hash })
    }

    fn table(&self) -> Result<DensityTable> {
        let chan = self.config.channel()?;
        DensityTable::build(&self.config.model, &chan, &self.config.density)
    }

    fn summary(&self, table: &DensityTable) -> Result<MomentSummary> {
        let chan = self.config.channel()?;
        MomentSummary::compute(
            &self.config.model,
            &chan,
            table,
            &self.config.moment_plan(self.seed),
        )
    }

    fn write(&self, args: &RunArgs, name: &str, content: &str) -> Result<()> {
        report::write_output(&args.out, name, content)
    }

    fn write_json<T: Serialize>(&self, args: &RunArgs, name: &str, data: T) -> Result<()> {
        let text = report::json_envelope(data, &self.hash, self.seed)?;
        self.write(args, name, &text)
    }
}

/// Flag beats environment beats config.
fn resolve_seed(flag: Option<u64>, env: Option<String>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(text) => text
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("{SEED_ENV}: expected a u64, got {text:?}"))),
        None => Ok(config),
    }
}

fn cmd_moments(args: &RunArgs) -> Result<()> {
    let run = Run::prepare(args)?;
    let table = run.table()?;
    let summary = run.summary(&table)?;
    run.write_json(args, "moments.json", &summary)
}

fn cmd_regions(args: &RunArgs) -> Result<()> {
    let run = Run::prepare(args)?;
    let table = run.table()?;
    let summary = run.summary(&table)?;
    let solver = run.config.solver_config(run.seed);
    let grid = &run.config.region;

    let mut points = Vec::new();
    let mut skipped = 0usize;
    for &n in &grid.n_grid {
        for &epsilon in &grid.epsilon_grid {
            for &d in &grid.d_grid {
                for &g in &grid.g_grid {
                    match region::rate_bound_finite(&summary, n, epsilon, d, g, &solver) {
                        Ok(p) => points.push(p),
                        Err(Error::Infeasible(_)) => skipped += 1,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    if skipped > 0 {
        eprintln!("regions: skipped {skipped} infeasible grid points");
    }

    // Minimal generalization level per rate budget, at the first epsilon.
    let epsilon = grid.epsilon_grid[0];
    let g_tol = 2.0 * solver.tol_bits;
    let mut floors = Vec::new();
    let mut capped = 0usize;
    for &rate_cap in &grid.rates {
        for &n in &grid.n_grid {
            for &d in &grid.d_grid {
                match region::g_floor(&summary, n, epsilon, d, rate_cap, g_tol, &solver)? {
                    Some(p) => floors.push(p),
                    None => capped += 1,
                }
            }
        }
    }
    if capped > 0 {
        eprintln!("regions: {capped} budget points unattainable at any generalization level");
    }

    match args.format {
        Format::Csv => {
            run.write(
                args,
                "regions.csv",
                &report::region_rows_csv(&points, &run.hash, run.seed),
            )?;
            run.write(
                args,
                "region_gfloors.csv",
                &report::region_rows_csv(&floors, &run.hash, run.seed),
            )
        }
        Format::Json => {
            run.write_json(args, "regions.json", &points)?;
            run.write_json(args, "region_gfloors.json", &floors)
        }
    }
}

#[derive(Debug, Serialize)]
struct CodecSummary {
    codec: codec_sim::CodecConfig,
    d_target: f64,
    g_target: f64,
    n_trials: usize,
    empirical_excess: crate::regressors::McEstimate,
    bound: codec_sim::ExcessBound,
    cause_counts: Vec<(String, usize)>,
}

fn cmd_codec(args: &RunArgs) -> Result<()> {
    let run = Run::prepare(args)?;
    let chan = run.config.channel()?;
    let table = run.table()?;
    let codec = run.config.codec_config()?;
    let gen = run.config.gen_spec();
    let section = run.config.codec;

    let outcomes = codec_sim::run_trials(
        &run.config.model,
        &chan,
        &table,
        &codec,
        &gen,
        section.n_trials,
        run.seed,
    )?;
    let bound = codec_sim::theorem3_bound(
        &run.config.model,
        &chan,
        &table,
        &codec,
        &gen,
        section.d_target,
        section.g_target,
        section.bound_samples,
        run.seed,
    )?;

    let empirical = codec_sim::excess_fraction(&outcomes, section.d_target, section.g_target);
    let cause_counts = [
        Cause::None,
        Cause::NoTypicalCodeword,
        Cause::NoCandidate,
        Cause::Ambiguous,
    ]
    .into_iter()
    .map(|c| {
        (
            c.to_string(),
            outcomes.iter().filter(|o| o.cause == c).count(),
        )
    })
    .collect();
    let summary = CodecSummary {
        codec,
        d_target: section.d_target,
        g_target: section.g_target,
        n_trials: section.n_trials,
        empirical_excess: empirical,
        bound,
        cause_counts,
    };

    match args.format {
        Format::Csv => run.write(
            args,
            "codec_trials.csv",
            &report::codec_trials_csv(&outcomes, &run.hash, run.seed),
        )?,
        Format::Json => run.write_json(args, "codec_trials.json", &outcomes)?,
    }
    run.write_json(args, "codec_summary.json", &summary)
}

#[derive(Debug, Serialize)]
struct RootLossRow {
    rate_bits: f64,
    lower: f64,
    upper: f64,
    achieved: f64,
}

#[derive(Debug, Serialize)]
struct RateRow {
    d: f64,
    rate_bits: f64,
}

fn cmd_asymptotic(args: &RunArgs) -> Result<()> {
    let run = Run::prepare(args)?;
    let sigma2 = run.config.model.sigma2;
    let grid = &run.config.region;

    let mut rates = Vec::new();
    for &d in &grid.d_grid {
        rates.push(RateRow {
            d,
            rate_bits: region::r_wz(d, sigma2)?,
        });
    }

    let mut points = Vec::new();
    for &d in &grid.d_grid {
        for &g in &grid.g_grid {
            match region::r_d_g(d, g, sigma2) {
                Ok(rate_bits) => points.push(RegionPoint {
                    n: 0,
                    epsilon: 0.0,
                    d_target: d,
                    g_target: g,
                    rate_bits,
                    regime: Regime::Asymptotic,
                    delta: g - sigma2,
                }),
                Err(Error::Infeasible(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    // The scheme's own root loss sits on the lower edge at every rate.
    let mut root_loss = Vec::new();
    for &rate_bits in &grid.rates {
        let bracket = region::raginsky_bounds(rate_bits, sigma2)?;
        root_loss.push(RootLossRow {
            rate_bits,
            lower: bracket.lower,
            upper: bracket.upper,
            achieved: sigma2.sqrt(),
        });
    }

    match args.format {
        Format::Csv => {
            let rate_rows: Vec<(f64, f64)> = rates.iter().map(|r| (r.d, r.rate_bits)).collect();
            run.write(
                args,
                "asymptotic_rates.csv",
                &report::asymptotic_rates_csv(&rate_rows, &run.hash, run.seed),
            )?;
            run.write(
                args,
                "asymptotic_regions.csv",
                &report::region_rows_csv(&points, &run.hash, run.seed),
            )?;
            let loss_rows: Vec<(f64, f64, f64, f64)> = root_loss
                .iter()
                .map(|r| (r.rate_bits, r.lower, r.upper, r.achieved))
                .collect();
            run.write(
                args,
                "root_loss_bounds.csv",
                &report::root_loss_csv(&loss_rows, &run.hash, run.seed),
            )
        }
        Format::Json => {
            run.write_json(args, "asymptotic_rates.json", &rates)?;
            run.write_json(args, "asymptotic_regions.json", &points)?;
            run.write_json(args, "root_loss_bounds.json", &root_loss)
        }
    }
}
