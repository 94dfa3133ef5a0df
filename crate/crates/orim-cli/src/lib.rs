//! `orim`: moment computation, invariance verification, basis export,
//! model training, evaluation, and benchmarks from one binary.
//!
//! Exit codes: 0 on success, 1 on validation failures (bad flags, failed
//! verification, malformed inputs), 2 on I/O problems (the missing path is
//! named in the message).

mod commands;
mod report;

pub use commands::{bench_stats, BenchStats};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use orim_core::basis::Family;
use orim_core::unit_disk::DiskMode;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io { path: String, message: String },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Io { path, message } => write!(f, "{path}: {message}"),
        }
    }
}

impl From<orim_core::OrimError> for CliError {
    fn from(e: orim_core::OrimError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<orim_gcnn::GcnnError> for CliError {
    fn from(e: orim_gcnn::GcnnError) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    /// Zernike
    Zm,
    /// Pseudo-Zernike
    Pzm,
    /// Orthogonal Fourier-Mellin
    Ofmm,
}

impl FamilyArg {
    pub fn family(self) -> Family {
        match self {
            FamilyArg::Zm => Family::Zernike,
            FamilyArg::Pzm => Family::PseudoZernike,
            FamilyArg::Ofmm => Family::FourierMellin,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            FamilyArg::Zm => "zm",
            FamilyArg::Pzm => "pzm",
            FamilyArg::Ofmm => "ofmm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiskArg {
    /// Inscribed circle: diameter M
    Inner,
    /// Circumscribing circle: diameter M * sqrt(2)
    Outer,
}

impl DiskArg {
    pub fn mode(self) -> DiskMode {
        match self {
            DiskArg::Inner => DiskMode::Inner,
            DiskArg::Outer => DiskMode::Outer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    /// Group-equivariant trunk, invariant-moment head
    GcnnOrim,
    /// Group-equivariant trunk, flatten head
    GcnnFlatten,
    /// Plain convolutional trunk, flatten head
    CnnFlatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Rotation,
    Reflection,
    Translation,
    All,
}

#[derive(Parser, Debug)]
#[command(
    name = "orim",
    version,
    about = "Orthogonal rotation-invariant moments and a group-equivariant CNN"
)]
pub struct Cli {
    /// Worker threads. Every value produces bit-identical compute/verify
    /// output: reductions run in a fixed order.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Kernel-table operations
    Basis {
        #[command(subcommand)]
        action: BasisAction,
    },
    /// Compute moment coefficients of one PGM image
    Compute {
        /// Input image (PGM, P5)
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        pmax: u32,
        /// Re-center the grid on the image centroid
        #[arg(long)]
        central: bool,
        #[arg(long, value_enum, default_value_t = DiskArg::Inner)]
        disk: DiskArg,
        /// Report file; stdout when omitted
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run invariance suites against declared tolerances
    Verify {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long, value_enum, default_value_t = FamilyArg::Zm)]
        family: FamilyArg,
        #[arg(long, default_value_t = 9)]
        pmax: u32,
        /// Image side length for the synthetic corpus
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Also cross-check against the slow oracles
        #[arg(long)]
        with_oracles: bool,
        /// Report file; stdout when omitted
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a model on the MNIST subsample protocol
    Train {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long, value_enum, default_value_t = FamilyArg::Pzm)]
        family: FamilyArg,
        #[arg(long, default_value_t = 5)]
        pmax: u32,
        /// Use per-channel centroid re-centering in the transition
        #[arg(long)]
        central: bool,
        #[arg(long, default_value_t = 15)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
        optimizer: OptimizerArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        train_n: usize,
        #[arg(long, default_value_t = 1000)]
        val_n: usize,
        #[arg(long, default_value_t = 2000)]
        test_n: usize,
        /// Keep the test split upright instead of randomly rotated
        #[arg(long)]
        upright_test: bool,
        /// Dataset directory (falls back to ORIM_DATA_DIR)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for metrics, summary, and checkpoint
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a fresh subsample
    Eval {
        /// Checkpoint directory (manifest.json + params.bin)
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Rotate the evaluation images randomly in [0, 2pi)
        #[arg(long)]
        rotate: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset directory (falls back to ORIM_DATA_DIR)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report file; stdout when omitted
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Measure moment-extraction throughput
    Bench {
        #[arg(long, value_enum, default_value_t = FamilyArg::Zm)]
        family: FamilyArg,
        #[arg(long, default_value_t = 9)]
        pmax: u32,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report file; stdout when omitted
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum BasisAction {
    /// Precompute a kernel table and write it as a binary file
    Export {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        pmax: u32,
        #[arg(long)]
        size: usize,
        #[arg(long, value_enum, default_value_t = DiskArg::Inner)]
        disk: DiskArg,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("--threads must be at least 1");
        return 1;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Io { path, message }) => {
            eprintln!("error: {path}: {message}");
            2
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Basis {
            action:
                BasisAction::Export {
                    family,
                    pmax,
                    size,
                    disk,
                    out,
                },
        } => commands::basis_export(family, pmax, size, disk, &out),
        Command::Compute {
            image,
            family,
            pmax,
            central,
            disk,
            report,
        } => commands::compute(&image, family, pmax, central, disk, report.as_deref()),
        Command::Verify {
            suite,
            family,
            pmax,
            size,
            with_oracles,
            report,
        } => commands::verify(suite, family, pmax, size, with_oracles, report.as_deref()),
        Command::Train {
            variant,
            family,
            pmax,
            central,
            epochs,
            batch,
            lr,
            optimizer,
            seed,
            train_n,
            val_n,
            test_n,
            upright_test,
            data,
            out,
        } => commands::train(commands::TrainArgs {
            variant,
            family,
            pmax,
            central,
            epochs,
            batch,
            lr,
            optimizer,
            seed,
            train_n,
            val_n,
            test_n,
            upright_test,
            data,
            out,
        }),
        Command::Eval {
            checkpoint,
            n,
            rotate,
            seed,
            data,
            report,
        } => commands::eval(&checkpoint, n, rotate, seed, data, report.as_deref()),
        Command::Bench {
            family,
            pmax,
            size,
            iters,
            seed,
            report,
        } => commands::bench(family, pmax, size, iters, seed, report.as_deref()),
    }
}
