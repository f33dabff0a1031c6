//! `spun`: command-line driver for spectra, datasets, union and downstream
//! models.
//!
//! Results are JSON on stdout, or `result.json` plus a `run.json` provenance
//! record under `--out`. Exit status is 0 on success, 2 on invalid input or a
//! failed check, 1 on runtime errors.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "spun", version = run::VERSION, about = "Spectra of partial shapes and their learned unions")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts, result.json and run.json.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of eigenvalues.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Worker threads for dataset construction (default: logical cores).
    #[arg(long, global = true, env = "SPUN_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Truncated Laplace-Beltrami spectrum of a mesh or point cloud.
    Spectrum {
        shape: PathBuf,
        #[arg(long, value_enum, default_value_t = BcArg::Natural)]
        bc: BcArg,
    },
    /// Generates a synthetic registered shape family.
    Synth {
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        poses: Option<usize>,
        #[arg(long)]
        vertices: Option<usize>,
    },
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Trains the union operator on the train split.
    TrainUnion {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        /// Precomputed augmented variants per sample (needs --family).
        #[arg(long)]
        augment: Option<usize>,
        #[arg(long)]
        family: Option<PathBuf>,
    },
    /// Union model errors and the elementwise-min baseline on a split.
    EvalUnion {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::TestA)]
        split: SplitArg,
        /// Decimate the part meshes by this vertex fraction first (needs --family).
        #[arg(long)]
        remesh: Option<f64>,
        #[arg(long)]
        family: Option<PathBuf>,
    },
    /// Predicted spectrum of the union of two or more parts.
    Union {
        #[arg(num_args = 2.., required = true)]
        spectra: Vec<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Fold from the right instead of the left.
        #[arg(long)]
        right: bool,
    },
    /// Trains the region localization model.
    TrainRegion {
        #[command(flatten)]
        data: RegionData,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Region IoU and accuracy from ground-truth and predicted spectra.
    EvalRegion {
        #[command(flatten)]
        data: RegionData,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::TestA)]
        split: SplitArg,
    },
    /// Per-vertex template probabilities for one spectrum.
    Localize {
        spectrum: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Family whose template receives the OFF export.
        #[arg(long)]
        family: Option<PathBuf>,
    },
    #[command(subcommand)]
    Index(IndexCommand),
    /// Top-k identity hit rates of union signatures against an index.
    RetrieveEval {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        union_ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::TestA)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = SourceArg::Predicted)]
        source: SourceArg,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ks: Vec<usize>,
    },
    /// Linear interpolation between two spectra.
    Interp {
        a: PathBuf,
        b: PathBuf,
        /// Evenly spaced parameters from 0 to 1.
        #[arg(long, default_value_t = 5, conflicts_with = "t")]
        steps: usize,
        #[arg(long)]
        t: Option<f64>,
    },
    /// Finite-difference checks of every autodiff primitive and block.
    Gradcheck,
    /// Predicted union spectra of dataset samples in the exchange format.
    ExportSpectrum {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::TestA)]
        split: SplitArg,
        /// A single sample index into the manifest.
        #[arg(long)]
        sample: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Samples pairs, realizes them on every shape and assigns splits.
    Build {
        #[arg(long)]
        family: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        #[arg(long)]
        test_a: Option<f64>,
        #[arg(long)]
        test_b: Option<f64>,
    },
    /// Checks split leakage, mask nesting and domain monotonicity.
    Audit { manifest: Option<PathBuf> },
}

#[derive(Subcommand, Debug)]
enum IndexCommand {
    /// Signatures of every family member.
    Build {
        #[arg(long)]
        family: Option<PathBuf>,
        /// Surface area the shapes are scaled to (default: the dataset's).
        #[arg(long)]
        target_area: Option<f64>,
    },
    /// Nearest shapes to one spectrum.
    Query {
        index: PathBuf,
        spectrum: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RegionData {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    union_ckpt: Option<PathBuf>,
    #[arg(long)]
    family: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcArg {
    Dirichlet,
    Closed,
    /// Dirichlet if the shape has a boundary, closed otherwise.
    Natural,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    TestA,
    TestB,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioArg {
    FullCover,
    PartialUnion,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceArg {
    Predicted,
    Exact,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = commands::dispatch(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(error::exit_code(&err));
    }
}
