use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use natmu_core::data::{synth_blobs, BlobParams, Dataset, Label, DEFAULT_SPREAD};
use natmu_core::eval::accuracy;
use natmu_core::nn::{
    backward, loss_hard, loss_soft, softmax, train, Architecture, CosineSchedule, Layer, LossKind, Model,
    TrainConfig,
};

/// Straight-line f64 forward pass, written independently of the crate.
fn reference_logits(layers: &[Layer], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let mut z = Vec::with_capacity(layer.outputs);
        for o in 0..layer.outputs {
            let mut acc = layer.bias[o] as f64;
            for (w, x) in layer.weight[o * layer.inputs..(o + 1) * layer.inputs].iter().zip(&h) {
                acc += *w as f64 * x;
            }
            z.push(acc);
        }
        if l + 1 < layers.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = z;
    }
    h
}

#[test]
fn seed_zero_2_4_3_forward_matches_hand_arithmetic() {
    let mut model = Model::new(&Architecture::new(2, vec![4], 3), 0).unwrap();
    // Non-zero biases so they take part in the comparison.
    model.layers_mut()[0].bias = vec![0.1, -0.2, 0.3, -0.05];
    model.layers_mut()[1].bias = vec![0.05, 0.0, -0.1];
    let x = [0.25f32, -0.75];
    let got = model.logits(&x).unwrap();
    let want = reference_logits(model.layers(), &[0.25, -0.75]);
    assert_eq!(got.len(), 3);
    for (g, w) in got.iter().zip(&want) {
        assert_abs_diff_eq!(*g as f64, *w, epsilon = 1e-6);
    }

    // Same arithmetic spelled out entry by entry for the first logit.
    let (l1, l2) = (&model.layers()[0], &model.layers()[1]);
    let hidden: Vec<f64> = (0..4)
        .map(|o| (l1.weight[2 * o] as f64 * 0.25 + l1.weight[2 * o + 1] as f64 * -0.75 + l1.bias[o] as f64).max(0.0))
        .collect();
    let first = (0..4).map(|i| l2.weight[i] as f64 * hidden[i]).sum::<f64>() + l2.bias[0] as f64;
    assert_abs_diff_eq!(got[0] as f64, first, epsilon = 1e-6);
}

#[test]
fn batched_forward_matches_per_sample_logits() {
    let model = Model::new(&Architecture::new(5, vec![7, 3], 4), 9).unwrap();
    let batch: Vec<f32> = (0..15).map(|i| (i as f32 * 0.37).sin().abs()).collect();
    let out = model.forward(&batch).unwrap();
    for (b, x) in batch.chunks(5).enumerate() {
        assert_eq!(&out[4 * b..4 * b + 4], model.logits(x).unwrap().as_slice());
    }
}

#[test]
fn softmax_and_losses_match_direct_evaluation() {
    let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
    let sum: f64 = e.iter().sum();
    for (got, want) in softmax(&[1.0, 2.0, 3.0]).iter().zip(e.iter().map(|v| v / sum)) {
        assert_abs_diff_eq!(*got as f64, want, epsilon = 1e-7);
    }
    // -ln softmax([1,2,3])[0] = ln(e + e^2 + e^3) - 1.
    assert_abs_diff_eq!(loss_hard(&[1.0, 2.0, 3.0], 0).unwrap() as f64, sum.ln() - 1.0, epsilon = 1e-6);

    // KL(target || softmax(z / T)) at T = 2.
    let (z, t, target) = ([0.5f64, -1.0, 2.0], 2.0f64, [0.2f64, 0.3, 0.5]);
    let scaled: Vec<f64> = z.iter().map(|v| (v / t).exp()).collect();
    let s: f64 = scaled.iter().sum();
    let want: f64 = target.iter().zip(&scaled).map(|(p, q)| p * (p / (q / s)).ln()).sum();
    let got = loss_soft(&[0.5, -1.0, 2.0], &[0.2, 0.3, 0.5], 2.0).unwrap() as f64;
    assert_abs_diff_eq!(got, want, epsilon = 1e-6);
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(
        logits in prop::collection::vec(prop_oneof![-1e4f32..1e4, -10f32..10f32, Just(0.0f32)], 1..20),
    ) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let total: f64 = p.iter().map(|&v| v as f64).sum();
        prop_assert!((total - 1.0).abs() <= 1e-6, "sum {}", total);
    }

    #[test]
    fn cosine_schedule_is_monotone(base in 1e-5f32..1.0, steps in 2usize..500) {
        let s = CosineSchedule::new(base, steps);
        prop_assert_eq!(s.lr_at(0), base);
        for k in 1..steps {
            prop_assert!(s.lr_at(k) <= s.lr_at(k - 1));
        }
        prop_assert!(s.lr_at(steps - 1) <= 0.01 * base);
    }

    #[test]
    fn argmax_accuracy_survives_logit_rescaling(seed in 0u64..1000) {
        let model = Model::new(&Architecture::new(3, vec![4], 3), seed).unwrap();
        let mut scaled = model.clone();
        let last = scaled.layers_mut().len() - 1;
        let layer = &mut scaled.layers_mut()[last];
        layer.weight.iter_mut().for_each(|w| *w *= 10.0);
        layer.bias.iter_mut().for_each(|b| *b *= 10.0);
        let data = blobs(3, 10, 0.3, seed);
        let data = Dataset::new(
            data.instances.iter().map(|i| {
                let mut i = i.clone();
                i.sample.pixels.truncate(3);
                i.sample.shape = natmu_core::data::Shape::new(1, 3, 1);
                i
            }).collect(),
            natmu_core::data::Shape::new(1, 3, 1),
            3,
            natmu_core::data::Split::Train,
        ).unwrap();
        prop_assert_eq!(accuracy(&model, &data.instances).unwrap(), accuracy(&scaled, &data.instances).unwrap());
    }
}

fn loss64(model: &Model, params: &[Vec<f64>], xs: &[Vec<f64>], ys: &[usize]) -> (f64, Vec<bool>) {
    let mut total = 0.0;
    let mut pattern = Vec::new();
    for (x, &y) in xs.iter().zip(ys) {
        let mut h = x.clone();
        let n = model.layers().len();
        for (l, layer) in model.layers().iter().enumerate() {
            let (w, b) = (&params[2 * l], &params[2 * l + 1]);
            let mut z: Vec<f64> = (0..layer.outputs)
                .map(|o| b[o] + (0..layer.inputs).map(|i| w[o * layer.inputs + i] * h[i]).sum::<f64>())
                .collect();
            if l + 1 < n {
                for v in &mut z {
                    pattern.push(*v > 0.0);
                    *v = v.max(0.0);
                }
            }
            h = z;
        }
        let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - h[y];
    }
    (total / xs.len() as f64, pattern)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_match_central_differences(
        seed in any::<u64>(),
        inputs in 2usize..5,
        hidden in 2usize..5,
        classes in 2usize..4,
        raw in prop::collection::vec(0.0f32..1.0, 12),
        ys in prop::collection::vec(0usize..4, 3),
    ) {
        let model = Model::new(&Architecture::new(inputs, vec![hidden, 2], classes), seed).unwrap();
        let xs32: Vec<Vec<f32>> = raw.chunks(4).map(|c| c[..inputs].to_vec()).collect();
        let ys: Vec<usize> = ys.iter().map(|y| y % classes).collect();
        let refs: Vec<&[f32]> = xs32.iter().map(Vec::as_slice).collect();
        let labels: Vec<Label> = ys.iter().map(|&y| Label::Hard(y)).collect();
        let analytic: Vec<f64> = backward(&model, &refs, &labels, LossKind::Hard)
            .unwrap()
            .grads
            .layers
            .iter()
            .flat_map(|g| g.weight.iter().chain(&g.bias))
            .map(|&v| v as f64)
            .collect();
        let xs: Vec<Vec<f64>> = xs32.iter().map(|x| x.iter().map(|&v| v as f64).collect()).collect();
        let base: Vec<Vec<f64>> = model.params().map(|p| p.iter().map(|&v| v as f64).collect()).collect();
        let step = 1e-4;
        let mut k = 0;
        for block in 0..base.len() {
            for j in 0..base[block].len() {
                let mut plus = base.clone();
                plus[block][j] += step;
                let mut minus = base.clone();
                minus[block][j] -= step;
                let ((lp, pp), (lm, pm)) = (loss64(&model, &plus, &xs, &ys), loss64(&model, &minus, &xs, &ys));
                if pp == pm {
                    let numeric = (lp - lm) / (2.0 * step);
                    let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-3);
                    prop_assert!(rel <= 1e-3, "block {} coord {}: {} vs {}", block, j, analytic[k], numeric);
                }
                k += 1;
            }
        }
    }
}

fn blobs(classes: usize, per_class: usize, spread: f32, seed: u64) -> Dataset {
    synth_blobs(&BlobParams {
        classes,
        per_class,
        height: 8,
        width: 8,
        channels: 1,
        spread,
        seed,
    })
    .unwrap()
}

#[test]
fn separable_two_class_blobs_reach_99_percent() {
    let data = blobs(2, 100, 0.05, 5);
    let model = Model::new(&Architecture::desk(64, 2), 1).unwrap();
    let config = TrainConfig {
        seed: 2,
        ..TrainConfig::new(50, 32, 1e-3)
    };
    let (trained, _) = train(&model, &data, &config, false).unwrap();
    let acc = accuracy(&trained, &data.instances).unwrap();
    assert!(acc >= 99.0, "train accuracy {acc}");
}

#[test]
fn default_spread_is_learnable_within_50_epochs() {
    let data = synth_blobs(&BlobParams {
        classes: 10,
        per_class: 100,
        height: 16,
        width: 16,
        channels: 1,
        spread: DEFAULT_SPREAD,
        seed: 7,
    })
    .unwrap();
    let model = Model::new(&Architecture::desk(256, 10), 3).unwrap();
    let config = TrainConfig {
        seed: 4,
        weight_decay: 5e-4,
        ..TrainConfig::new(50, 64, 1e-3)
    };
    let (trained, _) = train(&model, &data, &config, false).unwrap();
    let acc = accuracy(&trained, &data.instances).unwrap();
    assert!(acc >= 95.0, "train accuracy {acc}");
}
