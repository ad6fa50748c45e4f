use std::fmt;
use std::fs;
use std::io::Write as _;

use anyhow::{Context, Result};

use natmu_core::builder::{build_unlearning_set, BuildOptions};
use natmu_core::checks::{reproduce_properties, CheckOptions};
use natmu_core::data::{load_raw, save_raw, synth_blobs_split, BlobParams, Dataset, Split, TrainingTrace};
use natmu_core::eval::{entropy_histogram, evaluate, MetricsReport};
use natmu_core::experiment::{self, method_seed, report_csv, run_experiment, ExperimentConfig, Splits};
use natmu_core::mask::MaskConfig;
use natmu_core::methods::{unlearn, Method};
use natmu_core::nn::{load_model, save_model, train, Architecture, Model, TrainConfig};
use natmu_core::seed::derive_seed;

use crate::{
    BuildArgs, CheckArgs, Command, DatasetCommand, EvaluateArgs, InspectArgs, MaskCommand, MaskDumpArgs,
    PretrainArgs, RunArgs, RunSelection, SynthArgs, UnlearnArgs,
};

pub enum Outcome {
    Success,
    ChecksFailed,
}

/// Invalid command-line input detected outside argument parsing.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Dataset(DatasetCommand::Synth(args)) => synth(args),
        Command::Dataset(DatasetCommand::Inspect(args)) => inspect(args),
        Command::Pretrain(args) => pretrain(args),
        Command::Build(args) => build(args),
        Command::Unlearn(args) => unlearn_cmd(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Run(args) => run(args),
        Command::Check(args) => check(args),
        Command::Mask(MaskCommand::Dump(args)) => mask_dump(args),
    }
    .map(|()| Outcome::Success)
    .or_else(|e| match e.downcast::<ChecksFailed>() {
        Ok(_) => Ok(Outcome::ChecksFailed),
        Err(e) => Err(e),
    })
}

#[derive(Debug)]
struct ChecksFailed;

impl fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("property checks failed")
    }
}

impl std::error::Error for ChecksFailed {}

fn synth(args: SynthArgs) -> Result<()> {
    let params = BlobParams {
        classes: args.classes,
        per_class: args.per_class,
        height: args.height,
        width: args.width,
        channels: args.channels,
        spread: args.spread,
        seed: args.seed,
    };
    let (train_set, test_set) = synth_blobs_split(&params, args.test_per_class.unwrap_or(0))?;
    save_raw(&train_set, &args.out)?;
    println!("wrote {} training images to {}", train_set.len(), args.out.display());
    if let Some(path) = args.test_out {
        save_raw(&test_set, &path)?;
        println!("wrote {} test images to {}", test_set.len(), path.display());
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let data = load_raw(&args.path, Split::Train)?;
    let pixels = data.instances.iter().flat_map(|i| i.pixels().iter().copied());
    let (mut min, mut max, mut sum, mut count) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64, 0usize);
    for p in pixels {
        min = min.min(p);
        max = max.max(p);
        sum += p as f64;
        count += 1;
    }
    println!("records: {}", data.len());
    println!(
        "shape: {}x{}x{}",
        data.shape.height, data.shape.width, data.shape.channels
    );
    println!("classes: {}", data.classes);
    let counts: Vec<String> = data.class_counts().iter().map(usize::to_string).collect();
    println!("class counts: {}", counts.join(","));
    if count > 0 {
        println!("pixels: min {min:.4} max {max:.4} mean {:.4}", sum / count as f64);
    }
    Ok(())
}

fn pretrain(args: PretrainArgs) -> Result<()> {
    let data = load_raw(&args.data, Split::Train)?;
    let arch = Architecture::new(data.shape.len(), args.hidden, data.classes);
    let model = Model::new(&arch, derive_seed(args.seed, "pretrain-init"))?;
    let config = TrainConfig {
        weight_decay: args.weight_decay,
        optimizer: args.optimizer.into(),
        seed: derive_seed(args.seed, "pretrain-order"),
        ..TrainConfig::new(args.epochs, args.batch_size, args.lr)
    };
    let (trained, trace) = train(&model, &data, &config, args.trace.is_some())?;
    save_model(&trained, &args.out)?;
    if let (Some(path), Some(trace)) = (args.trace, trace) {
        fs::write(&path, serde_json::to_string(&trace)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

struct Selected {
    config: ExperimentConfig,
    seed: u64,
    splits: Splits,
}

fn select(run: &RunSelection) -> Result<Selected> {
    let config = ExperimentConfig::load(&run.config)?;
    let seed = run.seed.unwrap_or(config.seeds[0]);
    let trace: Option<TrainingTrace> = match &run.trace {
        Some(path) => Some(
            serde_json::from_str(&fs::read_to_string(path)?)
                .map_err(|e| Invalid(format!("trace {}: {e}", path.display())))?,
        ),
        None => None,
    };
    if config.forget.needs_trace() && trace.is_none() {
        return Err(Invalid("difficult-sample forgetting needs --trace".into()).into());
    }
    let (train_set, test_set) = config.dataset.load()?;
    let splits = experiment::split(&config, &train_set, &test_set, trace.as_ref(), seed)?;
    Ok(Selected { config, seed, splits })
}

fn build(args: BuildArgs) -> Result<()> {
    let Selected { config, seed, splits } = select(&args.run)?;
    let model = load_model(&args.model)?;
    let params = config.section(Method::Natmu).params();
    let shape = splits.forget.shape;
    let masks = params.natmu.mask.build(shape.height, shape.width)?;
    let options = BuildOptions {
        n: params.natmu.n,
        variant: params.natmu.variant,
        seed: derive_seed(method_seed(seed, Method::Natmu), "natmu-build"),
        shuffle_masks: params.natmu.shuffle_masks,
    };
    let built = build_unlearning_set(&splits.forget, &splits.remaining, &model, &masks, &options)?;
    let instances = built.iter().map(|u| u.to_labeled()).collect();
    let dataset = Dataset::new(instances, shape, splits.forget.classes, Split::Train)?;
    save_raw(&dataset, &args.out)?;
    if let Some(path) = &args.provenance {
        let mut file = fs::File::create(path)?;
        for u in &built {
            writeln!(file, "{}", serde_json::to_string(&u.provenance)?)?;
        }
    }
    println!(
        "wrote {} unlearning instances for {} forgetting samples to {}",
        built.len(),
        splits.forget.len(),
        args.out.display()
    );
    Ok(())
}

fn unlearn_cmd(args: UnlearnArgs) -> Result<()> {
    let method: Method = args.method.into();
    let Selected { config, seed, splits } = select(&args.run)?;
    let original = match (&args.model, method) {
        (Some(path), _) => load_model(path)?,
        (None, Method::Retrain) => {
            let arch = Architecture::new(splits.remaining.shape.len(), config.model.hidden.clone(), splits.remaining.classes);
            Model::new(&arch, 0)?
        }
        (None, _) => return Err(Invalid(format!("{method} needs --model")).into()),
    };
    let req = experiment::request(&config, method, &original, &splits, seed);
    let outcome = unlearn(method, &req, &mut ())?;
    save_model(&outcome.model, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let Selected { splits, .. } = select(&args.run)?;
    let model = load_model(&args.model)?;
    let retrained = load_model(&args.retrain)?;
    let report: MetricsReport = evaluate(&model, &splits.eval())?;
    let reference = evaluate(&retrained, &splits.eval())?;
    let csv = report_csv(&report, &reference)?;
    fs::write(&args.out, &csv)?;
    print!("{csv}");
    if let Some(path) = args.histogram {
        let histogram = entropy_histogram(&model, &splits.forget.instances, args.bins)?;
        fs::write(path, histogram.to_csv())?;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    let result = run_experiment(&config)?;
    for row in &result.summary {
        println!("{:<10} {:<8} {}", row.method.name(), row.metric, row.display());
    }
    println!("results in {}", config.output_dir.display());
    Ok(())
}

fn check(args: CheckArgs) -> Result<()> {
    let results = reproduce_properties(&CheckOptions {
        full: args.full,
        retrain_model: args.retrain_model,
        scratch: args.scratch,
    });
    for r in &results {
        println!("{r}");
    }
    if results.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(ChecksFailed.into())
    }
}

fn mask_dump(args: MaskDumpArgs) -> Result<()> {
    let config = MaskConfig {
        family: args.family.into(),
        delta: args.delta,
        edge: args.edge,
    };
    let masks = config.build(args.height, args.width)?;
    fs::create_dir_all(&args.out)?;
    for (j, mask) in masks.masks().iter().enumerate() {
        let path = args.out.join(format!("mask_{}.csv", j + 1));
        fs::write(&path, mask.to_csv())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
