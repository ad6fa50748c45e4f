//! Self-contained property checks over masks, construction, gradients,
//! metric arithmetic and the desk-scale pipeline.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::builder::{build_finetune_dataset, build_unlearning_set, BuildOptions};
use crate::data::{split_forget, synth_blobs, BlobParams, ForgettingSpec, Label};
use crate::error::{Error, Result};
use crate::eval::{fit_threshold, mean_gap, KlOrder, Metric};
use crate::experiment::{collect_csvs, method_kl, run_experiment, ExperimentConfig, SeedRun};
use crate::mask::{four_masks, gradual_base, WeightingMask};
use crate::methods::{unlearn, Method, MethodParams, UnlearnRequest};
use crate::nn::{backward, load_model, Architecture, LossKind, Model, TrainConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub enum CheckStatus {
    Pass,
    Fail(String),
    Skip(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: CheckStatus,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        !matches!(self.status, CheckStatus::Fail(_))
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.status {
            CheckStatus::Pass => write!(f, "PASS {}", self.name),
            CheckStatus::Fail(why) => write!(f, "FAIL {}: {why}", self.name),
            CheckStatus::Skip(why) => write!(f, "SKIP {}: {why}", self.name),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    /// Also run the desk-scale experiment checks (minutes of CPU).
    pub full: bool,
    /// Retrained model for the KL check; the built-in fixture is used when
    /// absent.
    pub retrain_model: Option<PathBuf>,
    /// Scratch directory for the experiment checks.
    pub scratch: Option<PathBuf>,
}

fn status(outcome: Result<(), String>) -> CheckStatus {
    match outcome {
        Ok(()) => CheckStatus::Pass,
        Err(why) => CheckStatus::Fail(why),
    }
}

/// Runs every check and returns one result per check.
pub fn reproduce_properties(options: &CheckOptions) -> Vec<CheckResult> {
    let mut results = vec![
        CheckResult {
            name: "mask-golden",
            status: status(gradual_base(32, 32).map_err(|e| e.to_string()).and_then(|m| golden_mask_check(&m))),
        },
        CheckResult {
            name: "mask-scaling",
            status: status(scaling_check(1000, 7)),
        },
        CheckResult {
            name: "dataset-identity",
            status: status(dataset_identity_check(50, 11)),
        },
        CheckResult {
            name: "gradient-oracle",
            status: status(gradient_check(20, 13).and_then(|worst| {
                if worst <= 1e-3 {
                    Ok(())
                } else {
                    Err(format!("max relative error {worst:.3e}"))
                }
            })),
        },
        CheckResult {
            name: "avg-gap-fixtures",
            status: status(avg_gap_fixture_check()),
        },
        CheckResult {
            name: "kl-naturalness",
            status: kl_check(options.retrain_model.as_deref()),
        },
        CheckResult {
            name: "mia-oracle",
            status: status(mia_oracle_check()),
        },
    ];
    if options.full {
        results.extend(desk_scale_checks(options.scratch.as_deref()));
    }
    results
}

/// Compares a mask against the closed-form column ramp of a 32×32 image,
/// reporting the first differing column.
pub fn golden_mask_check(mask: &WeightingMask) -> Result<(), String> {
    let (h, w) = (mask.height(), mask.width());
    if (h, w) != (32, 32) {
        return Err(format!("expected a 32x32 mask, got {h}x{w}"));
    }
    for i in 1..=w {
        let expected = if i <= w / 2 {
            2.0 * (i as f32 - 1.0) / (w as f32 - 2.0)
        } else {
            2.0 * (w as f32 - i as f32) / (w as f32 - 2.0)
        };
        let column = mask.column(i);
        if let Some((row, &got)) = column.iter().enumerate().find(|(_, &v)| v != expected) {
            return Err(format!(
                "column {i} row {} is {got}, closed form gives {expected}",
                row + 1
            ));
        }
        if column != mask.column(w + 1 - i) {
            return Err(format!("column {i} differs from its mirror column {}", w + 1 - i));
        }
    }
    for (&a, &b) in mask.values().iter().zip(mask.complement().values()) {
        if a + b != 1.0 {
            return Err(format!("m1 + m2 = {} somewhere", a + b));
        }
    }
    let anchors = [(1, 0.0), (2, 2.0 / 30.0), (16, 1.0), (17, 1.0), (32, 0.0)];
    for (i, value) in anchors {
        if mask.at(0, i - 1) != value {
            return Err(format!("column {i} should be {value}"));
        }
    }
    Ok(())
}

fn scaling_check(cases: usize, rng_seed: u64) -> Result<(), String> {
    let mut rng = seed::rng(rng_seed);
    for case in 0..cases {
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let values: Vec<f32> = (0..h * w).map(|_| rng.random::<f32>()).collect();
        let mask = WeightingMask::new(h, w, values, crate::mask::MaskFamily::Gradual)
            .map_err(|e| e.to_string())?;
        let delta = rng.random_range(-2.0f32..=2.0);
        let scaled = mask.scale(delta);
        if scaled.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("case {case}: scaled value outside [0, 1] at delta {delta}"));
        }
        if mask.scale(0.0) != mask {
            return Err(format!("case {case}: delta 0 changed the mask"));
        }
        if mask.scale(1.0).values().iter().any(|&v| v != 1.0) {
            return Err(format!("case {case}: delta 1 did not saturate"));
        }
    }
    Ok(())
}

fn dataset_identity_check(specs: usize, rng_seed: u64) -> Result<(), String> {
    let n = 4;
    let data = synth_blobs(&BlobParams {
        classes: 6,
        per_class: 12,
        height: 4,
        width: 4,
        channels: 1,
        spread: 0.2,
        seed: rng_seed,
    })
    .map_err(|e| e.to_string())?;
    let model = Model::new(&Architecture::new(16, vec![8], 6), rng_seed).map_err(|e| e.to_string())?;
    let masks = four_masks(4, 4, 0.0).map_err(|e| e.to_string())?;
    let mut rng = seed::rng(rng_seed);
    for case in 0..specs {
        let spec = ForgettingSpec::random(rng.random_range(0.02..0.4), rng.random());
        let (forget, remaining) = split_forget(&data, &spec, None).map_err(|e| e.to_string())?;
        let built = build_unlearning_set(&forget, &remaining, &model, &masks, &BuildOptions::natmu(n, rng.random()))
            .map_err(|e| e.to_string())?;
        let total = build_finetune_dataset(&remaining, &built).len();
        if total != remaining.len() + n * forget.len() {
            return Err(format!("case {case}: {total} instances for |D_f| = {}", forget.len()));
        }
        for (f, group) in forget.instances.iter().zip(built.chunks(n)) {
            let mut labels: Vec<usize> = group.iter().map(|u| u.label).collect();
            if labels.contains(&f.label.class()) {
                return Err(format!("case {case}: instance {} kept its label", f.index));
            }
            labels.sort_unstable();
            labels.dedup();
            if labels.len() != n {
                return Err(format!("case {case}: instance {} reuses a label", f.index));
            }
        }
    }
    Ok(())
}

fn forward64(model: &Model, params: &[Vec<f64>], x: &[f32]) -> (Vec<f64>, Vec<bool>) {
    let mut h: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut pattern = Vec::new();
    let last = model.layers().len() - 1;
    for (l, layer) in model.layers().iter().enumerate() {
        let (w, b) = (&params[2 * l], &params[2 * l + 1]);
        let mut z: Vec<f64> = (0..layer.outputs)
            .map(|o| b[o] + (0..layer.inputs).map(|i| w[o * layer.inputs + i] * h[i]).sum::<f64>())
            .collect();
        if l < last {
            for v in &mut z {
                pattern.push(*v > 0.0);
                *v = v.max(0.0);
            }
        }
        h = z;
    }
    (h, pattern)
}

fn loss64(model: &Model, params: &[Vec<f64>], xs: &[Vec<f32>], ys: &[usize]) -> (f64, Vec<bool>) {
    let mut total = 0.0;
    let mut patterns = Vec::new();
    for (x, &y) in xs.iter().zip(ys) {
        let (z, pattern) = forward64(model, params, x);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[y];
        patterns.extend(pattern);
    }
    (total / xs.len() as f64, patterns)
}

/// Worst relative error between backprop gradients and central differences
/// of an f64 forward pass, over random tiny models. Coordinates whose
/// perturbation flips a rectifier are skipped.
pub fn gradient_check(models: usize, rng_seed: u64) -> Result<f64, String> {
    let h = 1e-4;
    let mut rng = seed::rng(rng_seed);
    let mut worst = 0.0f64;
    for m in 0..models {
        let input = rng.random_range(2..=5);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect();
        let classes = rng.random_range(2..=4);
        let model = Model::new(&Architecture::new(input, hidden, classes), rng.random())
            .map_err(|e| e.to_string())?;
        let xs: Vec<Vec<f32>> = (0..3).map(|_| (0..input).map(|_| rng.random::<f32>()).collect()).collect();
        let ys: Vec<usize> = (0..3).map(|_| rng.random_range(0..classes)).collect();
        let inputs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let labels: Vec<Label> = ys.iter().map(|&y| Label::Hard(y)).collect();
        let analytic = backward(&model, &inputs, &labels, LossKind::Hard).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = analytic
            .grads
            .layers
            .iter()
            .flat_map(|g| g.weight.iter().chain(&g.bias))
            .map(|&v| v as f64)
            .collect();
        let base: Vec<Vec<f64>> = model.params().map(|p| p.iter().map(|&v| v as f64).collect()).collect();
        let mut k = 0;
        for block in 0..base.len() {
            for j in 0..base[block].len() {
                let mut plus = base.clone();
                plus[block][j] += h;
                let mut minus = base.clone();
                minus[block][j] -= h;
                let (lp, pp) = loss64(&model, &plus, &xs, &ys);
                let (lm, pm) = loss64(&model, &minus, &xs, &ys);
                if pp == pm {
                    let numeric = (lp - lm) / (2.0 * h);
                    let a = analytic[k];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                    if !rel.is_finite() {
                        return Err(format!("model {m}: non-finite gradient"));
                    }
                    worst = worst.max(rel);
                }
                k += 1;
            }
        }
    }
    Ok(worst)
}

/// Published per-metric gaps and the averages reported next to them.
pub const AVG_GAP_FIXTURES: [([f64; 4], f64); 2] = [
    ([1.15, 2.47, 1.28, 1.88], 1.70),
    ([4.21, 0.03, 18.98, 32.82], 14.01),
];

/// Half a unit in the last reported digit, plus float slack.
pub const AVG_GAP_TOLERANCE: f64 = 0.005 + 1e-9;

fn avg_gap_fixture_check() -> Result<(), String> {
    for (gaps, expected) in AVG_GAP_FIXTURES {
        let got = mean_gap(&gaps);
        if (got - expected).abs() > AVG_GAP_TOLERANCE {
            return Err(format!("{gaps:?} average to {got}, expected {expected}"));
        }
    }
    Ok(())
}

fn kl_check(retrain_model: Option<&Path>) -> CheckStatus {
    let retrained = match retrain_model {
        Some(path) if !path.is_file() => {
            return CheckStatus::Skip(format!("retrained model {} not found", path.display()));
        }
        Some(path) => match load_model(path) {
            Ok(m) => Some(m),
            Err(e) => return CheckStatus::Skip(format!("retrained model unreadable: {e}")),
        },
        None => None,
    };
    status(kl_fixture(retrained).map_err(|e| e.to_string()))
}

fn kl_fixture(retrained: Option<Model>) -> Result<(), Error> {
    let data = synth_blobs(&BlobParams {
        classes: 4,
        per_class: 15,
        height: 4,
        width: 4,
        channels: 1,
        spread: 0.2,
        seed: 21,
    })?;
    let arch = Architecture::new(16, vec![8], 4);
    let original = Model::new(&arch, 1)?;
    let retrained = match retrained {
        Some(m) if m.input_dim() == 16 && m.class_count() == 4 => m,
        Some(_) => return Err(Error::InvalidModel("retrained model does not fit the fixture".into())),
        None => Model::new(&arch, 2)?,
    };
    let (forget, remaining) = split_forget(&data, &ForgettingSpec::random(0.1, 3), None)?;
    let req = UnlearnRequest {
        original: &original,
        forget: &forget,
        remaining: &remaining,
        config: TrainConfig::new(1, 8, 0.001),
        params: MethodParams {
            natmu: crate::methods::NatmuParams {
                n: 3,
                ..Default::default()
            },
            ..MethodParams::default()
        },
        seed: 4,
    };
    for method in Method::ALL {
        let outcome = if method == Method::Retrain {
            crate::methods::UnlearnOutcome {
                model: retrained.clone(),
                unlearning_set: Vec::new(),
                provenance: Vec::new(),
                audit: None,
            }
        } else {
            unlearn(method, &req, &mut ())?
        };
        for order in [KlOrder::ModelToLabel, KlOrder::LabelToModel] {
            match (method, method_kl(method, &retrained, &outcome, order)?) {
                (Method::Retrain, Some(kl)) if kl != 0.0 => {
                    return Err(Error::MetricMismatch(format!("retrain KL_avg is {kl}")));
                }
                (_, Some(kl)) if kl.is_nan() || kl < 0.0 => {
                    return Err(Error::MetricMismatch(format!("{method} KL_avg is {kl}")));
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Balanced accuracy of the best midpoint threshold by brute force.
fn enumerate_thresholds(members: &[f64], non_members: &[f64]) -> f64 {
    let mut points: Vec<f64> = members.iter().chain(non_members).copied().collect();
    points.sort_by(f64::total_cmp);
    let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
    candidates.extend(points.windows(2).map(|p| (p[0] + p[1]) / 2.0));
    candidates
        .into_iter()
        .map(|t| {
            let tpr = members.iter().filter(|&&e| e < t).count() as f64 / members.len() as f64;
            let tnr = non_members.iter().filter(|&&e| e >= t).count() as f64 / non_members.len() as f64;
            (tpr + tnr) / 2.0
        })
        .fold(0.0, f64::max)
}

/// Ten entropies: members first, then non-members.
pub const MIA_FIXTURE: [f64; 10] = [0.05, 0.12, 0.40, 0.33, 0.90, 0.30, 0.75, 1.10, 0.62, 1.40];

fn mia_oracle_check() -> Result<(), String> {
    let (members, non_members) = MIA_FIXTURE.split_at(5);
    let fit = fit_threshold(members, non_members).map_err(|e| e.to_string())?;
    let oracle = enumerate_thresholds(members, non_members);
    if (fit.balanced_accuracy - oracle).abs() > 1e-12 {
        return Err(format!("fit {} vs enumeration {oracle}", fit.balanced_accuracy));
    }
    Ok(())
}

/// The desk-scale over-forgetting setup: 10 classes of 16×16 blobs, 5000
/// training images, 1% random forgetting, 5 unlearning epochs.
pub fn desk_scale_config(output_dir: impl Into<PathBuf>, seeds: Vec<u64>) -> ExperimentConfig {
    let text = include_str!("desk_scale.toml");
    let mut config = ExperimentConfig::from_toml(text).expect("built-in config parses");
    config.output_dir = output_dir.into();
    config.seeds = seeds;
    config
}

/// Per-seed outcome of the four directional over-forgetting comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverForgetting {
    pub amnesiac_over_forgets: bool,
    pub natmu_fa_closer: bool,
    pub natmu_kl_smaller: bool,
    pub natmu_mia_closer: bool,
}

impl OverForgetting {
    pub fn of(seed: &SeedRun) -> Option<Self> {
        let get = |m: Method| seed.get(m).map(|r| &r.report);
        let (retrain, natmu, amnesiac) = (get(Method::Retrain)?, get(Method::Natmu)?, get(Method::Amnesiac)?);
        let fa = |r: &crate::eval::MetricsReport| r.get(Metric::ForgetAccuracy);
        let mia = |r: &crate::eval::MetricsReport| r.get(Metric::Mia);
        Some(Self {
            amnesiac_over_forgets: fa(amnesiac)? < fa(retrain)? - 5.0,
            natmu_fa_closer: (fa(natmu)? - fa(retrain)?).abs() < (fa(amnesiac)? - fa(retrain)?).abs(),
            natmu_kl_smaller: natmu.kl_avg? < amnesiac.kl_avg?,
            natmu_mia_closer: (mia(natmu)? - mia(retrain)?).abs() < (mia(amnesiac)? - mia(retrain)?).abs(),
        })
    }
}

fn scratch_dir(base: Option<&Path>, name: &str) -> PathBuf {
    let base = base.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
    base.join(format!("natmu-check-{}-{name}", std::process::id()))
}

fn desk_scale_checks(scratch: Option<&Path>) -> Vec<CheckResult> {
    let first = scratch_dir(scratch, "a");
    let second = scratch_dir(scratch, "b");
    let run = |dir: &Path| run_experiment(&desk_scale_config(dir, vec![1, 2, 3]));
    let (a, b) = match (run(&first), run(&second)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            let why = format!("experiment failed: {e}");
            return ["over-forgetting", "retrain-isolation", "determinism"]
                .into_iter()
                .map(|name| CheckResult {
                    name,
                    status: CheckStatus::Fail(why.clone()),
                })
                .collect();
        }
    };

    let verdicts: Vec<OverForgetting> = a.seeds.iter().filter_map(OverForgetting::of).collect();
    let count = |f: fn(&OverForgetting) -> bool| verdicts.iter().filter(|v| f(v)).count();
    let counts = [
        ("a", count(|v| v.amnesiac_over_forgets)),
        ("b", count(|v| v.natmu_fa_closer)),
        ("c", count(|v| v.natmu_kl_smaller)),
        ("d", count(|v| v.natmu_mia_closer)),
    ];
    let failing: Vec<String> = counts
        .iter()
        .filter(|(_, c)| *c < 2)
        .map(|(k, c)| format!("({k}) held in {c}/3 seeds"))
        .collect();
    let over = if failing.is_empty() {
        Ok(())
    } else {
        Err(failing.join(", "))
    };

    let hits: usize = a
        .manifest
        .isolation
        .iter()
        .chain(&b.manifest.isolation)
        .map(|r| r.forget_hits)
        .sum();
    let isolation = if hits == 0 && !a.manifest.isolation.is_empty() {
        Ok(())
    } else {
        Err(format!("{hits} forgetting indices in retrain batches"))
    };

    let determinism = match (collect_csvs(&first), collect_csvs(&second)) {
        (Ok(x), Ok(y)) if x == y => Ok(()),
        (Ok(x), Ok(y)) => Err(format!(
            "CSV sets differ ({} vs {} files, first mismatch {:?})",
            x.len(),
            y.len(),
            x.iter().zip(&y).find(|(p, q)| p != q).map(|(p, _)| p.0.clone())
        )),
        (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
    };
    let _ = std::fs::remove_dir_all(&first);
    let _ = std::fs::remove_dir_all(&second);
    vec![
        CheckResult {
            name: "over-forgetting",
            status: status(over),
        },
        CheckResult {
            name: "retrain-isolation",
            status: status(isolation),
        },
        CheckResult {
            name: "determinism",
            status: status(determinism),
        },
    ]
}
