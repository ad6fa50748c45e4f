//! End-to-end runs: pretrain, split, retrain oracle, unlearning methods,
//! evaluation and report files, for every configured seed.

mod config;
mod manifest;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

pub use config::{DatasetSource, ExperimentConfig, MethodSection, ModelSection, Schedule, OUTPUT_DIR_ENV};
pub use manifest::{FileEntry, IsolationRecord, RunManifest, SeedRecord, StageTiming, TOOLKIT_VERSION};
pub use report::{curve_csv, mean_std, report_csv, summarize, summary_csv, CurvePoint, SummaryRow};

use crate::data::{split_forget, Dataset, LabeledInstance, TrainingTrace};
use crate::error::Result;
use crate::eval::{accuracy, entropy_histogram, evaluate, kl_avg, EvalSplits, KlOrder, Histogram, MetricsReport};
use crate::methods::{unlearn, IsolationAudit, Method, UnlearnOutcome, UnlearnRequest};
use crate::nn::{save_model, train, Architecture, Model, TrainObserver};
use crate::seed;

/// The sets one seed's models are trained and evaluated on.
#[derive(Debug, Clone)]
pub struct Splits {
    pub forget: Dataset,
    pub remaining: Dataset,
    /// Test instances outside the forgotten class (all of them for
    /// sample-wise forgetting).
    pub test: Dataset,
    pub test_forget: Option<Dataset>,
}

impl Splits {
    pub fn eval(&self) -> EvalSplits<'_> {
        EvalSplits {
            forget: &self.forget,
            remaining: &self.remaining,
            test: &self.test,
            test_forget: self.test_forget.as_ref(),
        }
    }
}

pub fn pretrain_seed_of(root: u64) -> (u64, u64) {
    (
        seed::derive_seed(root, "pretrain-init"),
        seed::derive_seed(root, "pretrain-order"),
    )
}

/// The original model of a seed, with a correctness trace when the
/// forgetting mode needs one.
pub fn pretrain(
    config: &ExperimentConfig,
    train_set: &Dataset,
    root: u64,
) -> Result<(Model, Option<TrainingTrace>)> {
    let data = config.forget.relabel(train_set)?;
    let arch = Architecture::new(data.shape.len(), config.model.hidden.clone(), data.classes);
    let (init, order) = pretrain_seed_of(root);
    let model = Model::new(&arch, init)?;
    let mut train_config = config.pretrain.to_train_config();
    train_config.seed = order;
    train(&model, &data, &train_config, config.forget.needs_trace())
}

pub fn split(
    config: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    trace: Option<&TrainingTrace>,
    root: u64,
) -> Result<Splits> {
    let mut spec = config.forget.clone();
    spec.seed = seed::derive_indexed(root, "forget-split", config.forget.seed);
    let (forget, remaining) = split_forget(train_set, &spec, trace)?;
    let (test, test_forget) = if spec.is_class_wise() {
        let (test_forget, test) = split_forget(test_set, &spec, None)?;
        (test, Some(test_forget))
    } else {
        (spec.relabel(test_set)?, None)
    };
    Ok(Splits {
        forget,
        remaining,
        test,
        test_forget,
    })
}

pub fn method_seed(root: u64, method: Method) -> u64 {
    seed::derive_seed(root, method.name())
}

pub fn request<'a>(
    config: &ExperimentConfig,
    method: Method,
    original: &'a Model,
    splits: &'a Splits,
    root: u64,
) -> UnlearnRequest<'a> {
    UnlearnRequest {
        original,
        forget: &splits.forget,
        remaining: &splits.remaining,
        config: config.train_config(method),
        params: config.section(method).params(),
        seed: method_seed(root, method),
    }
}

/// Records forgetting and remaining accuracy at every epoch boundary.
pub struct CurveRecorder<'a> {
    forget: &'a [LabeledInstance],
    remaining: &'a [LabeledInstance],
    pub points: Vec<CurvePoint>,
}

impl<'a> CurveRecorder<'a> {
    pub fn new(forget: &'a [LabeledInstance], remaining: &'a [LabeledInstance]) -> Self {
        Self {
            forget,
            remaining,
            points: Vec::new(),
        }
    }
}

impl TrainObserver for CurveRecorder<'_> {
    fn on_epoch_end(&mut self, epoch: usize, model: &Model) -> Result<()> {
        self.points.push(CurvePoint {
            epoch,
            forget_accuracy: accuracy(model, self.forget)?,
            remaining_accuracy: accuracy(model, self.remaining)?,
        });
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub model: Model,
    pub report: MetricsReport,
    pub curve: Vec<CurvePoint>,
    pub histogram: Histogram,
    pub audit: Option<IsolationAudit>,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub original: MetricsReport,
    pub runs: Vec<MethodRun>,
}

impl SeedRun {
    pub fn get(&self, method: Method) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub manifest: RunManifest,
    pub seeds: Vec<SeedRun>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every seed and writes reports, curves, histograms, models, the
/// summary and the manifest under `config.output_dir`. The manifest is also
/// written when a stage fails.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let out = config.output_dir.clone();
    fs::create_dir_all(&out)?;
    let mut manifest = RunManifest::new(config.hash());
    let result = run_seeds(config, &out, &mut manifest);
    match result {
        Ok((seeds, summary)) => {
            manifest.complete = true;
            manifest.write(&out.join("manifest.json"))?;
            Ok(ExperimentResult {
                manifest,
                seeds,
                summary,
            })
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.write(&out.join("manifest.json"))?;
            Err(e)
        }
    }
}

fn timed<T>(manifest: &mut RunManifest, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let value = f().map_err(|e| e.in_stage(name))?;
    manifest.stages.push(StageTiming {
        name: name.to_string(),
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(value)
}

fn run_seeds(
    config: &ExperimentConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<(Vec<SeedRun>, Vec<SummaryRow>)> {
    let (train_set, test_set) = timed(manifest, "load-data", || config.dataset.load())?;
    write_file(manifest, out, &out.join("config.toml"), config.to_toml()?.as_bytes())?;

    let mut methods = vec![Method::Retrain];
    methods.extend(config.unlearning_methods());
    let mut seeds = Vec::new();
    for &root in &config.seeds {
        let (init, order) = pretrain_seed_of(root);
        let mut stages = std::collections::BTreeMap::new();
        stages.insert("pretrain-init".to_string(), init);
        stages.insert("pretrain-order".to_string(), order);
        stages.insert(
            "forget-split".to_string(),
            seed::derive_indexed(root, "forget-split", config.forget.seed),
        );
        for &m in &methods {
            stages.insert(m.name().to_string(), method_seed(root, m));
        }
        manifest.seeds.push(SeedRecord { root, stages });
        seeds.push(run_seed(config, &methods, &train_set, &test_set, root, out, manifest)?);
    }

    let per_seed: Vec<Vec<(Method, MetricsReport)>> = seeds
        .iter()
        .map(|s| s.runs.iter().map(|r| (r.method, r.report.clone())).collect())
        .collect();
    let summary = summarize(&per_seed)?;
    write_file(manifest, out, &out.join("summary.csv"), summary_csv(&summary).as_bytes())?;
    Ok((seeds, summary))
}

fn run_seed(
    config: &ExperimentConfig,
    methods: &[Method],
    train_set: &Dataset,
    test_set: &Dataset,
    root: u64,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<SeedRun> {
    let tag = format!("seed-{root}");
    let (original, trace) = timed(manifest, &format!("{tag}/pretrain"), || {
        pretrain(config, train_set, root)
    })?;
    let splits = timed(manifest, &format!("{tag}/split"), || {
        split(config, train_set, test_set, trace.as_ref(), root)
    })?;

    let jobs: Vec<Result<(UnlearnOutcome, Vec<CurvePoint>, f64)>> = methods
        .par_iter()
        .map(|&method| {
            let start = Instant::now();
            let req = request(config, method, &original, &splits, root);
            let mut curve = CurveRecorder::new(&splits.forget.instances, &splits.remaining.instances);
            let outcome = unlearn(method, &req, &mut curve)?;
            Ok((outcome, curve.points, start.elapsed().as_secs_f64()))
        })
        .collect();
    let mut outcomes = Vec::with_capacity(methods.len());
    for (&method, job) in methods.iter().zip(jobs) {
        let name = format!("{tag}/{method}");
        let (outcome, curve, seconds) = job.map_err(|e| e.in_stage(&name))?;
        manifest.stages.push(StageTiming { name, seconds });
        outcomes.push((method, outcome, curve));
    }

    let retrained = outcomes[0].1.model.clone();
    let eval_splits = splits.eval();
    let runs = timed(manifest, &format!("{tag}/evaluate"), || {
        outcomes
            .into_par_iter()
            .map(|(method, outcome, curve)| {
                let mut report = evaluate(&outcome.model, &eval_splits)?;
                report.kl_avg = method_kl(method, &retrained, &outcome, config.kl_order)?;
                let histogram =
                    entropy_histogram(&outcome.model, &splits.forget.instances, config.histogram_bins)?;
                Ok(MethodRun {
                    method,
                    model: outcome.model,
                    report,
                    curve,
                    histogram,
                    audit: outcome.audit,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let original_report = evaluate(&original, &eval_splits).map_err(|e| e.in_stage(format!("{tag}/evaluate")))?;

    let retrain_report = runs[0].report.clone();
    let seed_dir = out.join(&tag);
    let original_dir = seed_dir.join("original");
    fs::create_dir_all(&original_dir)?;
    write_file(
        manifest,
        out,
        &original_dir.join("report.csv"),
        report_csv(&original_report, &retrain_report)?.as_bytes(),
    )?;
    write_model(manifest, out, &original_dir.join("model.nmu"), &original)?;
    for run in &runs {
        let dir = seed_dir.join(run.method.name());
        fs::create_dir_all(&dir)?;
        write_file(manifest, out, &dir.join("report.csv"), report_csv(&run.report, &retrain_report)?.as_bytes())?;
        write_file(manifest, out, &dir.join("curve.csv"), curve_csv(&run.curve).as_bytes())?;
        write_file(manifest, out, &dir.join("entropy.csv"), run.histogram.to_csv().as_bytes())?;
        write_model(manifest, out, &dir.join("model.nmu"), &run.model)?;
        if let Some(audit) = &run.audit {
            manifest.isolation.push(IsolationRecord {
                seed: root,
                batches: audit.batches,
                instances_seen: audit.instances_seen,
                forget_hits: audit.violations.len(),
            });
        }
    }
    Ok(SeedRun {
        seed: root,
        original: original_report,
        runs,
    })
}

/// KL_avg of a method's unlearning set under the retrained model. The
/// retrain oracle is the reference itself and scores 0; methods without an
/// unlearning set have none.
pub fn method_kl(
    method: Method,
    retrained: &Model,
    outcome: &UnlearnOutcome,
    order: KlOrder,
) -> Result<Option<f64>> {
    if method == Method::Retrain {
        return Ok(Some(0.0));
    }
    if outcome.unlearning_set.is_empty() {
        return Ok(None);
    }
    kl_avg(retrained, &outcome.unlearning_set, order).map(Some)
}

fn write_file(manifest: &mut RunManifest, root: &Path, path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    manifest.add_file(root, path)
}

fn write_model(manifest: &mut RunManifest, root: &Path, path: &Path, model: &Model) -> Result<()> {
    save_model(model, path)?;
    manifest.add_file(root, path)
}

/// Every CSV under a run directory, as `(relative path, bytes)` in path order.
pub fn collect_csvs(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, acc)?;
            } else if path.extension().is_some_and(|e| e == "csv") {
                let relative = path.strip_prefix(root).unwrap_or(&path).to_path_buf();
                acc.push((relative, fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc)?;
    acc.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(acc)
}
