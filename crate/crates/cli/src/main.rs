//! `natmu`: dataset generation, pretraining, unlearning-set construction,
//! unlearning, evaluation, full experiment runs and the property suite.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use natmu_core::mask::MaskFamily;
use natmu_core::methods::Method;
use natmu_core::nn::OptimizerKind;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "natmu", version, about = "Machine unlearning with hybrid unlearning instances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect UDS dataset files.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model from scratch on a dataset file.
    Pretrain(PretrainArgs),
    /// Construct the unlearning set for a model and write it as UDS.
    Build(BuildArgs),
    /// Unlearn the forgetting set of an experiment config with one method.
    Unlearn(UnlearnArgs),
    /// Evaluate a model against a retrained reference.
    Evaluate(EvaluateArgs),
    /// Run a full experiment from a config file.
    Run(RunArgs),
    /// Run the property suite.
    Check(CheckArgs),
    /// Weighting-mask utilities.
    #[command(subcommand)]
    Mask(MaskCommand),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write a synthetic blob dataset.
    Synth(SynthArgs),
    /// Print a summary of a dataset file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = natmu_core::data::DEFAULT_SPREAD)]
    spread: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training split output.
    #[arg(long)]
    out: PathBuf,
    /// Test split output; requires --test-per-class.
    #[arg(long, requires = "test_per_class")]
    test_out: Option<PathBuf>,
    #[arg(long)]
    test_per_class: Option<usize>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adamw,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adamw => OptimizerKind::AdamW,
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f32,
    #[arg(long, value_enum, default_value = "adamw")]
    optimizer: OptimizerArg,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-instance correctness trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Selects the data, splits and seed of one run of an experiment config.
#[derive(Args)]
struct RunSelection {
    #[arg(long)]
    config: PathBuf,
    /// Root seed; defaults to the first seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Correctness trace, needed for difficult-sample forgetting.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    run: RunSelection,
    /// Original model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// One JSON provenance record per unlearning instance.
    #[arg(long)]
    provenance: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Retrain,
    Natmu,
    Amnesiac,
    Badteacher,
    Neggrad,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Retrain => Method::Retrain,
            MethodArg::Natmu => Method::Natmu,
            MethodArg::Amnesiac => Method::Amnesiac,
            MethodArg::Badteacher => Method::Badteacher,
            MethodArg::Neggrad => Method::Neggrad,
        }
    }
}

#[derive(Args)]
struct UnlearnArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[command(flatten)]
    run: RunSelection,
    /// Original model; optional for retrain.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunSelection,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    retrain: PathBuf,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Entropy histogram of the forgetting set.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Include the desk-scale experiment checks.
    #[arg(long)]
    full: bool,
    /// Retrained model for the KL check.
    #[arg(long)]
    retrain_model: Option<PathBuf>,
    /// Scratch directory for experiment outputs.
    #[arg(long)]
    scratch: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MaskCommand {
    /// Write one CSV per mask of a mask set.
    Dump(MaskDumpArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gradual,
    Constant,
    Cutmix,
}

impl From<FamilyArg> for MaskFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gradual => MaskFamily::Gradual,
            FamilyArg::Constant => MaskFamily::Constant,
            FamilyArg::Cutmix => MaskFamily::Cutmix,
        }
    }
}

#[derive(Args)]
struct MaskDumpArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, value_enum, default_value = "gradual")]
    family: FamilyArg,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    delta: f32,
    #[arg(long)]
    edge: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::ChecksFailed) => ExitCode::from(EXIT_ACCEPTANCE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(core) = e.downcast_ref::<natmu_core::Error>() {
        return if core.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME };
    }
    if e.downcast_ref::<commands::Invalid>().is_some() {
        return EXIT_VALIDATION;
    }
    EXIT_RUNTIME
}
