use std::collections::HashSet;

use proptest::prelude::*;

use natmu_core::builder::inject;
use natmu_core::data::{
    decode_dataset, encode_dataset, split_forget, synth_blobs, BlobParams, Dataset, ForgettingSpec, ImageSample, Label,
    LabeledInstance, Shape, Split, TrainingTrace,
};
use natmu_core::eval::{avg_gap, entropy, entropy_histogram, fit_threshold, kl_avg, KlOrder, Metric, MetricsReport};
use natmu_core::mask::{four_masks, MaskFamily, WeightingMask};
use natmu_core::nn::{decode_model, encode_model, softmax, Architecture, Model};
use natmu_core::seed;

fn blobs(classes: usize, per_class: usize, seed: u64) -> Dataset {
    synth_blobs(&BlobParams {
        classes,
        per_class,
        height: 3,
        width: 3,
        channels: 1,
        spread: 0.3,
        seed,
    })
    .unwrap()
}

fn indices(d: &Dataset) -> HashSet<usize> {
    d.instances.iter().map(|i| i.index).collect()
}

proptest! {
    #[test]
    fn random_split_partitions_exactly(ratio in 0.01f64..0.99, split_seed in any::<u64>(), per_class in 1usize..30) {
        let data = blobs(3, per_class, 1);
        let (f, r) = split_forget(&data, &ForgettingSpec::random(ratio, split_seed), None).unwrap();
        prop_assert_eq!(f.len() + r.len(), data.len());
        prop_assert_eq!(f.len(), ((ratio * data.len() as f64).round() as usize).min(data.len()));
        let (fi, ri) = (indices(&f), indices(&r));
        prop_assert!(fi.is_disjoint(&ri));
        prop_assert_eq!(fi.union(&ri).count(), data.len());
        // Same spec, same selection.
        let (f2, _) = split_forget(&data, &ForgettingSpec::random(ratio, split_seed), None).unwrap();
        prop_assert_eq!(indices(&f2), fi);
    }

    #[test]
    fn class_split_removes_exactly_the_class(class in 0usize..4) {
        let data = blobs(4, 9, 2);
        let (f, r) = split_forget(&data, &ForgettingSpec::class(class), None).unwrap();
        prop_assert!(f.instances.iter().all(|i| i.label.class() == class));
        prop_assert!(r.instances.iter().all(|i| i.label.class() != class));
        prop_assert_eq!(f.len(), 9);
    }

    #[test]
    fn difficult_split_is_stable_under_count_ties(counts in prop::collection::vec(0u32..4, 12), ratio in 0.05f64..0.95) {
        let data = blobs(3, 4, 3);
        let trace = TrainingTrace { correct_epochs: counts.clone(), epochs: 3 };
        let (f, _) = split_forget(&data, &ForgettingSpec::difficult(ratio), Some(&trace)).unwrap();
        // Oracle: stable sort by count, ties by index, then take the prefix.
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by_key(|&i| (counts[i], i));
        let k = ((ratio * 12.0).round() as usize).min(12);
        let want: HashSet<usize> = order[..k].iter().copied().collect();
        prop_assert_eq!(indices(&f), want);
    }

    #[test]
    fn uds_round_trips(per_class in 0usize..5, classes in 2usize..5, seed in any::<u64>()) {
        let data = blobs(classes, per_class, seed);
        let bytes = encode_dataset(&data).unwrap();
        prop_assert_eq!(bytes.len(), 24 + data.len() * (2 + 4 * 9));
        let back = decode_dataset(&bytes, Split::Train).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn truncated_uds_is_an_error(cut in 1usize..60) {
        let bytes = encode_dataset(&blobs(2, 1, 0)).unwrap();
        let cut = cut.min(bytes.len());
        prop_assert!(decode_dataset(&bytes[..bytes.len() - cut], Split::Train).is_err());
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), hidden in prop::collection::vec(1usize..6, 0..3)) {
        let model = Model::new(&Architecture::new(4, hidden, 3), seed).unwrap();
        let bytes = encode_model(&model);
        prop_assert_eq!(&bytes[..4], b"NMU1");
        prop_assert_eq!(decode_model(&bytes).unwrap(), model);
    }

    #[test]
    fn inject_is_a_convex_combination(
        f in prop::collection::vec(0.0f32..=1.0, 18),
        r in prop::collection::vec(0.0f32..=1.0, 18),
        m in prop::collection::vec(0.0f32..=1.0, 9),
    ) {
        let shape = Shape::new(3, 3, 2);
        let (xf, xr) = (ImageSample::new(f.clone(), shape).unwrap(), ImageSample::new(r.clone(), shape).unwrap());
        let mask = WeightingMask::new(3, 3, m.clone(), MaskFamily::Gradual).unwrap();
        let out = inject(&xf, &xr, &mask).unwrap();
        for (k, &v) in out.pixels.iter().enumerate() {
            // Channels are the innermost axis; the mask is shared across them.
            let w = m[k / 2] as f64;
            let want = w * f[k] as f64 + (1.0 - w) * r[k] as f64;
            prop_assert!((v as f64 - want).abs() <= 1e-6, "pixel {}: {} vs {}", k, v, want);
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(inject(&xf, &xf, &mask).unwrap().pixels, f);
    }

    #[test]
    fn four_masks_are_bounded_and_paired(h in 3usize..12, w in 3usize..12, delta in -1.5f32..1.5) {
        let set = four_masks(h, w, delta).unwrap();
        prop_assert_eq!(set.len(), 4);
        for m in set.masks() {
            prop_assert_eq!((m.height(), m.width()), (h, w));
            prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let unscaled = four_masks(h, w, 0.0).unwrap();
        for pair in [(0, 1), (2, 3)] {
            for (a, b) in unscaled.get(pair.0).values().iter().zip(unscaled.get(pair.1).values()) {
                prop_assert!((a + b - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn mask_assignment_rules(n in 1usize..10, s in any::<u64>(), shuffle in any::<bool>()) {
        let set = four_masks(4, 4, 0.0).unwrap();
        let picks = set.assignment(n, &mut seed::rng(s), shuffle);
        prop_assert_eq!(picks.len(), n);
        prop_assert!(picks.iter().all(|&j| j < 4));
        let mut counts = [0usize; 4];
        picks.iter().for_each(|&j| counts[j] += 1);
        if n <= 4 {
            prop_assert!(counts.iter().all(|&c| c <= 1));
        } else {
            // Cyclic reuse keeps the usage counts within one of each other.
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn entropy_is_within_zero_and_ln_k(logits in prop::collection::vec(-50.0f32..50.0, 2..12)) {
        let p: Vec<f64> = softmax(&logits).iter().map(|&v| v as f64).collect();
        let h = entropy(&p);
        prop_assert!(h >= 0.0 && h <= (logits.len() as f64).ln());
    }

    #[test]
    fn threshold_fit_beats_chance_and_enumeration_agrees(
        members in prop::collection::vec(0.0f64..3.0, 1..15),
        non_members in prop::collection::vec(0.0f64..3.0, 1..15),
    ) {
        let fit = fit_threshold(&members, &non_members).unwrap();
        prop_assert!(fit.balanced_accuracy >= 0.5);
        prop_assert_eq!(fit.classifier.balanced_accuracy(&members, &non_members), fit.balanced_accuracy);
        // Brute force over every split point of the pooled values.
        let mut pooled: Vec<f64> = members.iter().chain(&non_members).copied().collect();
        pooled.sort_by(f64::total_cmp);
        let mut best: f64 = 0.0;
        for t in pooled.iter().copied().chain([f64::INFINITY]) {
            let tpr = members.iter().filter(|&&e| e < t).count() as f64 / members.len() as f64;
            let tnr = non_members.iter().filter(|&&e| e >= t).count() as f64 / non_members.len() as f64;
            best = best.max((tpr + tnr) / 2.0);
        }
        prop_assert!((fit.balanced_accuracy - best).abs() < 1e-12);
    }

    #[test]
    fn avg_gap_is_symmetric(a in prop::collection::vec(0.0f64..100.0, 4), b in prop::collection::vec(0.0f64..100.0, 4)) {
        let report = |v: &[f64]| MetricsReport::new(vec![
            (Metric::TestAccuracy, v[0]),
            (Metric::RemainingAccuracy, v[1]),
            (Metric::ForgetAccuracy, v[2]),
            (Metric::Mia, v[3]),
        ]);
        let (ra, rb) = (report(&a), report(&b));
        prop_assert_eq!(avg_gap(&ra, &rb).unwrap(), avg_gap(&rb, &ra).unwrap());
        prop_assert_eq!(avg_gap(&ra, &ra).unwrap(), 0.0);
        let want = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 4.0;
        prop_assert!((avg_gap(&ra, &rb).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn kl_avg_is_non_negative(seed in any::<u64>(), labels in prop::collection::vec(0usize..3, 1..6)) {
        let model = Model::new(&Architecture::new(4, vec![5], 3), seed).unwrap();
        let instances: Vec<LabeledInstance> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let pixels = (0..4).map(|k| ((i * 4 + k) as f32 * 0.13).fract()).collect();
                LabeledInstance::new(ImageSample::new(pixels, Shape::new(2, 2, 1)).unwrap(), Label::Hard(y), i)
            })
            .collect();
        for order in [KlOrder::ModelToLabel, KlOrder::LabelToModel] {
            prop_assert!(kl_avg(&model, &instances, order).unwrap() >= 0.0);
        }
    }
}

#[test]
fn kl_avg_three_class_fixture_matches_direct_evaluation() {
    // One-layer model whose logits are the input itself plus a bias.
    let layer = natmu_core::nn::Layer {
        inputs: 3,
        outputs: 3,
        weight: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        bias: vec![0.0, 0.5, -0.5],
    };
    let model = Model::from_layers(vec![layer]).unwrap();
    let shape = Shape::new(1, 3, 1);
    let instances = vec![
        LabeledInstance::new(ImageSample::new(vec![0.9, 0.1, 0.2], shape).unwrap(), Label::Hard(2), 0),
        LabeledInstance::new(ImageSample::new(vec![0.3, 0.6, 0.0], shape).unwrap(), Label::Soft(vec![0.2, 0.5, 0.3]), 1),
    ];
    let eps = 1e-6f64;
    let targets = [[eps, eps, 1.0 + eps], [0.2 + eps, 0.5 + eps, 0.3 + eps]].map(|t| t.map(|v| v / (1.0 + 3.0 * eps)));
    let logits = [[0.9f64, 0.6, -0.3], [0.3, 1.1, -0.5]];
    let mut forward = 0.0;
    let mut reverse = 0.0;
    for (z, q) in logits.iter().zip(&targets) {
        let s: f64 = z.iter().map(|v| v.exp()).sum();
        let p: Vec<f64> = z.iter().map(|v| v.exp() / s).collect();
        forward += (0..3).map(|k| p[k] * (p[k] / q[k]).ln()).sum::<f64>();
        reverse += (0..3).map(|k| q[k] * (q[k] / p[k]).ln()).sum::<f64>();
    }
    let got = kl_avg(&model, &instances, KlOrder::ModelToLabel).unwrap();
    assert!((got - forward / 2.0).abs() < 1e-6, "{got} vs {}", forward / 2.0);
    let got = kl_avg(&model, &instances, KlOrder::LabelToModel).unwrap();
    assert!((got - reverse / 2.0).abs() < 1e-6, "{got} vs {}", reverse / 2.0);
}

#[test]
fn histogram_counts_every_instance() {
    let data = blobs(4, 7, 8);
    let model = Model::new(&Architecture::new(9, vec![6], 4), 2).unwrap();
    let h = entropy_histogram(&model, &data.instances, 13).unwrap();
    assert_eq!(h.counts.iter().sum::<usize>(), data.len());
    assert_eq!(h.counts.len(), 13);
    // A model with zero weights predicts uniformly: all mass in the last bin.
    let flat = Model::from_layers(vec![natmu_core::nn::Layer::zeros(9, 4)]).unwrap();
    let h = entropy_histogram(&flat, &data.instances, 5).unwrap();
    assert_eq!(h.counts[4], data.len());
}
