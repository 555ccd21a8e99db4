mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Glucose digital twin: CGM ingestion, benchmark models and counterfactual
/// intervention simulation.
#[derive(Debug, Parser)]
#[command(name = "glucotwin", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Workspace directory for stored datasets and runs.
    #[arg(long, global = true, default_value = "glucotwin-workspace")]
    pub workspace: PathBuf,
    /// Seed for every stochastic step of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Suppress diagnostics on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    CgmXml,
    CgmCsv,
    Tabular,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and store datasets, then summarise them.
    Ingest {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Skip unreadable or malformed files instead of failing.
        #[arg(long)]
        skip_bad: bool,
        /// Parse and summarise without storing in the workspace.
        #[arg(long)]
        no_store: bool,
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Multi-seed regression and classification benchmark.
    Benchmark {
        /// Number of seeded splits, starting at --seed (default 0).
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Tabular CSV; defaults to the bundled 442-row benchmark.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Include the per-seed rows, not only the means.
        #[arg(long)]
        per_seed: bool,
    },
    /// Simulate, score and rank intervention scenarios.
    Simulate {
        /// Scenario JSON array; defaults to the bundled reference triple.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Calibrate response parameters to these targets first.
        #[arg(long, conflicts_with = "params")]
        calibrate_to: Option<PathBuf>,
        /// Response parameter JSON.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Utility weight JSON.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Add Gaussian measurement noise.
        #[arg(long)]
        noise: bool,
        /// Noise sd in mg/dL used with --noise.
        #[arg(long, default_value_t = 5.0)]
        noise_sigma: f64,
        /// Also write the trajectories (wide CSV, or JSON with --format json).
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Expand tabular rows into intervention-annotated sequences.
    Augment {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        sequence_length: usize,
        #[arg(long, default_value_t = 20.0)]
        step_minutes: f64,
        #[arg(long, default_value_t = 0.05)]
        noise_sigma: f64,
    },
    /// Apply scenario deltas to an observed CGM window.
    Overlay {
        /// CGM file; alternatively --dataset.
        #[arg(long, required_unless_present = "dataset")]
        cgm: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Kind::CgmXml)]
        kind: Kind,
        /// Workspace CGM dataset id.
        #[arg(long, conflicts_with = "cgm")]
        dataset: Option<String>,
        #[arg(long)]
        patient: Option<String>,
        /// `YYYY-MM-DDTHH:MM:SS` or `DD-MM-YYYY HH:MM:SS`.
        #[arg(long)]
        anchor: String,
        /// Scenario JSON array; the first entry is the baseline.
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 60.0)]
        before: f64,
        #[arg(long, default_value_t = 180.0)]
        after: f64,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory holding the built UI bundle.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Write a synthetic CGM XML corpus.
    Fixtures {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 24)]
        files: usize,
        #[arg(long, default_value_t = 166_533)]
        records: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
