//! Experiment driver for `expograph`: spectra, consensus residues, training
//! runs, comparison tables and built-in figure recipes.
//!
//! [`run`] takes raw arguments and returns the process exit code: 0 when all
//! outputs were written, 2 for malformed flags or invalid parameters, 1 for
//! failures inside the computation or while writing.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub mod commands;
pub mod config;
pub mod output;
pub mod recipes;

pub use output::{Cell, Format, Sidecar, Table};
pub use recipes::{figure_recipes, Recipe};

use expograph::spectral::Regime;
use expograph::synthdata::Heterogeneity;
use expograph::optimizer::Algorithm;
use expograph::TopologyKind;

pub const THREADS_ENV: &str = "EXPOGRAPH_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Bad input; `field` names the flag or config key.
    Usage { field: String, message: String },
    Compute { context: String, source: expograph::Error },
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn usage(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Usage {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn compute(context: impl Into<String>, source: expograph::Error) -> Self {
        CliError::Compute {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage { field, message } => write!(f, "invalid {field}: {message}"),
            CliError::Compute { context, source } => write!(f, "{context}: {source}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Parser)]
#[command(name = "expograph", version, about = "Exponential-graph topologies for decentralized SGD")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (falls back to EXPOGRAPH_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file (a directory for `recipe`); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// JSON file of flag values; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Spectral gap, rho and deviation norm per (family, n).
    Spectrum(SpectrumArgs),
    /// Consensus residue decay under weight schedules.
    Consensus(ConsensusArgs),
    /// Simulated DmSGD training on synthetic logistic regression.
    Train(TrainArgs),
    /// Per-iteration degree and transient-iteration bound per family.
    Table(TableArgs),
    /// Regenerates the data behind a named figure.
    Recipe(RecipeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::Consensus(_) => "consensus",
            Command::Train(_) => "train",
            Command::Table(_) => "table",
            Command::Recipe(_) => "recipe",
        }
    }
}

/// Inclusive `a:b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NRange {
    pub start: usize,
    pub end: usize,
}

impl std::str::FromStr for NRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or("expected START:END")?;
        let start: usize = a.trim().parse().map_err(|e| format!("bad start `{a}`: {e}"))?;
        let end: usize = b.trim().parse().map_err(|e| format!("bad end `{b}`: {e}"))?;
        if start > end {
            return Err(format!("empty range {start}:{end}"));
        }
        Ok(NRange { start, end })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpectrumArgs {
    /// Comma-separated topology families.
    #[arg(long, value_delimiter = ',', default_value = "static-exp")]
    pub family: Vec<TopologyKind>,
    /// Comma-separated node counts.
    #[arg(long, value_delimiter = ',', conflicts_with = "n_range")]
    pub n: Vec<usize>,
    /// Inclusive node-count range START:END.
    #[arg(long)]
    pub n_range: Option<NRange>,
    /// Data regime used for the transient-bound column.
    #[arg(long, default_value = "heterogeneous")]
    pub regime: Regime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `||(W(k)...W(0) - 11^T/n) x0||`.
    Residue,
    /// `||prod_{i<k} (W(i) - 11^T/n)||_2`.
    ProductNorm,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConsensusArgs {
    /// Comma-separated schedules: cyclic, permutation, uniform, bipartite,
    /// or a family name for a static schedule.
    #[arg(long, value_delimiter = ',', default_value = "cyclic")]
    pub schedule: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Columns of the initial state.
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, value_enum, default_value = "residue")]
    pub metric: Metric,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value = "dmsgd")]
    pub algorithm: Algorithm,
    /// Comma-separated schedules or families; a parallel baseline is always added.
    #[arg(long, value_delimiter = ',', default_value = "static-exp,one-peer-exp,grid,ring")]
    pub schedule: Vec<String>,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples_per_node: usize,
    /// Initial step size.
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
    /// Multiply gamma by --gamma-factor every this many iterations (0: constant).
    #[arg(long, default_value_t = 1000)]
    pub gamma_period: u64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma_factor: f64,
    #[arg(long, default_value_t = 0.8)]
    pub beta: f64,
    #[arg(long, default_value_t = 8000)]
    pub iters: u64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Relative MSE slack for the transient-iteration estimate.
    #[arg(long, default_value_t = expograph::optimizer::DEFAULT_DELTA)]
    pub delta: f64,
    /// Log metrics every this many iterations.
    #[arg(long, default_value_t = 1)]
    pub record_every: u64,
    #[arg(long, default_value = "non-iid")]
    pub heterogeneity: Heterogeneity,
    /// Dataset seed (defaults to --seed).
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TableArgs {
    #[arg(long, value_delimiter = ',', default_value = "16,64,256")]
    pub n: Vec<usize>,
    #[arg(long, default_value = "heterogeneous")]
    pub regime: Regime,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RecipeArgs {
    /// Recipe name, or `all`.
    pub name: Option<String>,
    /// List recipes and exit.
    #[arg(long)]
    pub list: bool,
    /// Downscaled fig10 (n = 16).
    #[arg(long)]
    pub fast: bool,
}

/// Result of one data-producing command.
#[derive(Debug, Clone)]
pub struct Product {
    pub table: Table,
    pub x_axis: &'static str,
    pub y_axis: Vec<&'static str>,
    pub series_column: Option<&'static str>,
    /// Extra JSON document written next to the data (train only).
    pub summary: Option<serde_json::Value>,
    /// Appended to the one-line summary.
    pub note: String,
}

/// Hash of everything that determines a command's output.
pub fn config_hash(command: &Command, seed: u64, format: Format) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        command: &'a Command,
        seed: u64,
        format: Format,
    }
    let json = serde_json::to_string(&Key { command, seed, format }).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let (n, field) = match flag {
        Some(n) => (Some(n), "--threads"),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => (
                Some(
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| CliError::usage(THREADS_ENV, format!("`{v}`: {e}")))?,
                ),
                THREADS_ENV,
            ),
            Err(_) => (None, ""),
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::usage(field, "must be at least 1"));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Writes `product` to `path` (stdout when `None`) plus its sidecars and
/// returns the one-line summary.
pub fn emit(product: &Product, command: &str, hash: &str, format: Format, path: Option<&Path>) -> Result<String, CliError> {
    let body = product.table.render(format);
    let rows = product.table.rows.len();
    let target = match path {
        Some(path) => {
            output::write_atomic(path, body.as_bytes())?;
            let sidecar = Sidecar {
                command: command.to_string(),
                config_hash: hash.to_string(),
                format,
                columns: product.table.columns.iter().map(|c| c.to_string()).collect(),
                x_axis: product.x_axis.to_string(),
                y_axis: product.y_axis.iter().map(|c| c.to_string()).collect(),
                series_column: product.series_column.map(str::to_string),
                series: product.series_column.map(|c| product.table.distinct(c)).unwrap_or_default(),
                rows,
            };
            let meta = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
            output::write_atomic(&output::sidecar_path(path), meta.as_bytes())?;
            if let Some(summary) = &product.summary {
                let text = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
                output::write_atomic(&output::summary_path(path), text.as_bytes())?;
            }
            path.display().to_string()
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
            "stdout".to_string()
        }
    };
    let mut line = format!("{command}: {rows} rows -> {target} (config {hash})");
    if !product.note.is_empty() {
        line.push_str("; ");
        line.push_str(&product.note);
    }
    Ok(line)
}

/// Runs the data-producing subcommands.
pub fn execute(command: &Command, seed: u64) -> Result<Product, CliError> {
    match command {
        Command::Spectrum(a) => commands::spectrum(a, seed),
        Command::Consensus(a) => commands::consensus(a, seed),
        Command::Train(a) => commands::train(a, seed),
        Command::Table(a) => commands::table(a, seed),
        Command::Recipe(_) => Err(CliError::usage("command", "recipes produce several outputs; use recipes::run")),
    }
}

fn dispatch(args: Vec<String>) -> Result<(), CliError> {
    let args = match config::config_path(&args) {
        Some(p) => config::merge(args, Path::new(&p))?,
        None => args,
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.exit_code() {
                0 => Ok(()),
                _ => Err(CliError::usage("arguments", "see message above")),
            };
        }
    };
    init_threads(cli.global.threads)?;
    let format = cli.global.format.unwrap_or(Format::Csv);
    if let Command::Recipe(r) = &cli.command {
        let lines = recipes::run(r, cli.global.seed, format, cli.global.out.as_deref())?;
        for line in lines {
            println!("{line}");
        }
        return Ok(());
    }
    let seed = cli.global.seed.unwrap_or(0);
    let hash = config_hash(&cli.command, seed, format);
    let product = execute(&cli.command, seed)?;
    let line = emit(&product, cli.command.name(), &hash, format, cli.global.out.as_deref())?;
    if cli.global.out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(())
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString>,
{
    let result = config::to_strings(args).and_then(dispatch);
    match result {
        Ok(()) => 0,
        Err(e) => {
            if !matches!(&e, CliError::Usage { field, .. } if field == "arguments") {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_range_parsing() {
        assert_eq!("4:64".parse::<NRange>().unwrap(), NRange { start: 4, end: 64 });
        assert!("9:4".parse::<NRange>().is_err());
        assert!("4-9".parse::<NRange>().is_err());
    }

    #[test]
    fn hash_depends_on_parameters_only() {
        let a = Cli::try_parse_from(["x", "table", "--n", "16"]).unwrap();
        let b = Cli::try_parse_from(["x", "--out", "elsewhere.csv", "table", "--n=16", "--threads", "3"]).unwrap();
        let c = Cli::try_parse_from(["x", "table", "--n", "32"]).unwrap();
        let h = |cli: &Cli| config_hash(&cli.command, cli.global.seed.unwrap_or(0), Format::Csv);
        assert_eq!(h(&a), h(&b));
        assert_ne!(h(&a), h(&c));
        assert_eq!(h(&a).len(), 16);
    }

    #[test]
    fn malformed_flag_is_usage_error() {
        assert_eq!(run(["expograph", "spectrum", "--n", "four"]), 2);
        assert_eq!(run(["expograph", "spectrum", "--family", "moebius", "--n", "4"]), 2);
        assert_eq!(run(["expograph", "frobnicate"]), 2);
    }
}
