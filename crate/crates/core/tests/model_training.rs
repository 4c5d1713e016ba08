use cvharness_core::dataset::{generate_synthetic, Dataset, LabeledSample, SyntheticSpec};
use cvharness_core::image::Image;
use cvharness_core::model::{
    apply_freeze, backward, forward, forward_cached, head_loss, init_model, Architecture, FreezeMask, HeadKind,
    InitScheme,
};
use cvharness_core::optim::{OptimizerSpec, OptimizerState};
use cvharness_core::rng::derive_rng;
use cvharness_core::schedule::ScheduleSpec;
use cvharness_core::train::{evaluate, pretrain_source, train_loop, TrainConfig};
use proptest::prelude::*;

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        learning_rate: 3e-3,
        optimizer: OptimizerSpec::adam(),
        schedule: ScheduleSpec::Constant,
        head: HeadKind::SoftmaxCrossEntropy,
        freeze: FreezeMask::all_trainable(),
        patience_epochs: 3,
        max_epochs: 6,
        augment: Default::default(),
        precision: Default::default(),
    }
}

fn data(per_class: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec::new(per_class, 16, 0.05), &derive_rng(seed, "data")).unwrap()
}

fn split(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| i % 4 != 0)
}

#[test]
fn init_is_deterministic_with_zero_biases() {
    let arch = Architecture::new(16, 3, 5).unwrap();
    let a = init_model(&arch, &mut derive_rng(1, "init"), InitScheme::Kaiming).unwrap();
    let b = init_model(&arch, &mut derive_rng(1, "init"), InitScheme::Kaiming).unwrap();
    let c = init_model(&arch, &mut derive_rng(2, "init"), InitScheme::Kaiming).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for name in ["conv1", "conv2", "dense1", "head"] {
        assert!(a.layer(name).unwrap().1.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn init_spread_matches_uniform_bound() {
    // U(-b, b) with b = √(6/fan_in) has std b/√3 = √(2/fan_in)
    let arch = Architecture::new(16, 3, 5).unwrap();
    let expected = (2.0f64 / 27.0).sqrt();
    let mut all = Vec::new();
    for s in 0..10 {
        let p = init_model(&arch, &mut derive_rng(s, "init"), InitScheme::Kaiming).unwrap();
        all.extend_from_slice(p.layer("conv1").unwrap().0);
    }
    let m = all.iter().sum::<f64>() / all.len() as f64;
    let sd = (all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (all.len() - 1) as f64).sqrt();
    assert!((sd - expected).abs() < 0.2 * expected, "{sd} vs {expected}");
}

#[test]
fn forward_rows_do_not_depend_on_batch() {
    let d = data(4, 3);
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(3, "init"), InitScheme::Kaiming).unwrap();
    let batch: Vec<&Image> = d.samples().iter().take(16).map(|s| &s.image).collect();
    let all = forward(&p, &batch).unwrap();
    for i in [0, 7, 15] {
        let one = forward(&p, &[batch[i]]).unwrap();
        assert_eq!(one.row(0), all.row(i));
    }
    assert_eq!(forward(&p, &batch).unwrap(), all);
}

#[test]
fn zero_image_gives_equal_logits() {
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(4, "init"), InitScheme::Kaiming).unwrap();
    let zero = Image::filled(16, 16, 3, 0.0).unwrap();
    let l = forward(&p, &[&zero]).unwrap();
    assert!(l.row(0).iter().all(|&v| v == l.row(0)[0]));
}

#[test]
fn doubling_dense1_doubles_logits_with_zero_biases() {
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(5, "init"), InitScheme::Kaiming).unwrap();
    let mut q = p.clone();
    for w in q.layer_mut("dense1").unwrap().0 {
        *w *= 2.0;
    }
    let img = Image::filled(16, 16, 3, 0.6).unwrap();
    let a = forward(&p, &[&img]).unwrap();
    let b = forward(&q, &[&img]).unwrap();
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((2.0 * x - y).abs() < 1e-12);
    }
}

#[test]
fn freeze_masks_gradients() {
    let d = data(2, 6);
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(6, "init"), InitScheme::Kaiming).unwrap();
    let batch: Vec<&Image> = d.samples().iter().map(|s| &s.image).collect();
    let (l, cache) = forward_cached(&p, &batch).unwrap();
    let (_, dl) = head_loss(HeadKind::SoftmaxCrossEntropy, &l, &d.labels()).unwrap();
    let g = backward(&p, &cache, &dl).unwrap();
    assert!(g.layer("conv1").unwrap().0.iter().any(|&v| v != 0.0));
    assert_eq!(apply_freeze(g.clone(), &FreezeMask::all_trainable()), g);
    assert!(apply_freeze(g.clone(), &FreezeMask::all_frozen()).values().iter().all(|&v| v == 0.0));
    let only_conv1 = apply_freeze(g.clone(), &FreezeMask::from_frozen(&["conv1"]).unwrap());
    assert!(only_conv1.layer("conv1").unwrap().0.iter().all(|&v| v == 0.0));
    assert_eq!(only_conv1.layer("conv2").unwrap(), g.layer("conv2").unwrap());
}

#[test]
fn cross_entropy_descends_on_separable_batch() {
    // two constant images, one per class
    let imgs = [Image::filled(8, 8, 3, 0.1).unwrap(), Image::filled(8, 8, 3, 0.9).unwrap()];
    let batch: Vec<&Image> = imgs.iter().collect();
    let labels = [0, 1];
    let arch = Architecture::new(8, 3, 2).unwrap();
    let mut p = init_model(&arch, &mut derive_rng(7, "init"), InitScheme::Kaiming).unwrap();
    let mut opt = OptimizerState::new(OptimizerSpec::sgd(), p.values().len());
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (l, cache) = forward_cached(&p, &batch).unwrap();
        let (loss, dl) = head_loss(HeadKind::SoftmaxCrossEntropy, &l, &labels).unwrap();
        losses.push(loss);
        let g = backward(&p, &cache, &dl).unwrap();
        opt.step(p.values_mut(), g.values(), 0.1).unwrap();
    }
    assert!(losses[49] < losses[0] * 0.5, "{} -> {}", losses[0], losses[49]);
}

#[test]
fn frozen_layers_are_bit_identical_after_training() {
    let d = data(6, 8);
    let (train, val) = split(d.len());
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(8, "init"), InitScheme::Kaiming).unwrap();
    for opt in [OptimizerSpec::sgd(), OptimizerSpec::adam(), OptimizerSpec::adadelta()] {
        let cfg = TrainConfig {
            optimizer: opt,
            freeze: FreezeMask::top_unfrozen(2),
            patience_epochs: 10,
            max_epochs: 3,
            ..small_config()
        };
        let out = train_loop(&p, &d, &train, &val, &cfg, &derive_rng(8, "train")).unwrap();
        let trained = train_loop(&p, &d, &train, &val, &cfg, &derive_rng(8, "train")).unwrap();
        assert_eq!(out, trained);
        for name in ["conv1", "conv2"] {
            let (w0, b0) = p.layer(name).unwrap();
            let (w1, b1) = out.params.layer(name).unwrap();
            assert!(w0.iter().zip(w1).all(|(a, b)| a.to_bits() == b.to_bits()));
            assert!(b0.iter().zip(b1).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_ne!(p.layer("head").unwrap(), out.params.layer("head").unwrap());
    }
}

#[test]
fn early_stop_on_constructed_plateau() {
    let d = data(4, 9);
    let (train, val) = split(d.len());
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(9, "init"), InitScheme::Kaiming).unwrap();
    let cfg = TrainConfig { freeze: FreezeMask::all_frozen(), patience_epochs: 5, max_epochs: 100, ..small_config() };
    let out = train_loop(&p, &d, &train, &val, &cfg, &derive_rng(9, "train")).unwrap();
    assert_eq!(out.best_epoch, 1);
    assert_eq!(out.history.len(), out.best_epoch + 5);
    assert!(out.history.windows(2).all(|w| w[0].val_accuracy == w[1].val_accuracy));
    assert_eq!(out.params, p);
}

#[test]
fn best_snapshot_reproduces_recorded_accuracy() {
    let d = data(8, 10);
    let (train, val) = split(d.len());
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(10, "init"), InitScheme::Kaiming).unwrap();
    let out = train_loop(&p, &d, &train, &val, &small_config(), &derive_rng(10, "train")).unwrap();
    let last = out.history.last().unwrap().epoch;
    assert!(last - out.best_epoch <= small_config().patience_epochs);
    assert_eq!(evaluate(&out.params, &d, &val).unwrap().accuracy, out.best_val_accuracy);
    let again = train_loop(&p, &d, &train, &val, &small_config(), &derive_rng(10, "train")).unwrap();
    assert_eq!(out.history, again.history);
}

#[test]
fn pretraining_beats_chance_and_keeps_body() {
    let src = data(30, 11);
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(11, "init"), InitScheme::Kaiming).unwrap();
    let cfg = TrainConfig { max_epochs: 15, patience_epochs: 5, ..small_config() };
    let out = pretrain_source(&p, &src, &cfg, 3, &derive_rng(11, "pre")).unwrap();
    assert!(out.source_accuracy >= 2.0 / 5.0, "{}", out.source_accuracy);
    assert_eq!(out.params.arch().classes, 3);
    let other = pretrain_source(&p, &src, &cfg, 3, &derive_rng(12, "pre")).unwrap();
    assert_ne!(out.params, other.params);
}

#[test]
fn evaluation_counts_are_consistent() {
    let d = data(3, 12);
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(12, "init"), InitScheme::Kaiming).unwrap();
    let idx: Vec<usize> = (0..d.len()).collect();
    let e = evaluate(&p, &d, &idx).unwrap();
    assert_eq!(e.confusion.total(), d.len() as u64);
    assert_eq!(e.accuracy, e.confusion.trace() as f64 / d.len() as f64);
    assert_eq!(e.confusion.row_sums(), vec![3; 5]);
}

#[test]
fn perfect_predictor_has_identity_pattern() {
    // dataset whose labels equal the model's own predictions
    let d = data(3, 13);
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(13, "init"), InitScheme::Kaiming).unwrap();
    let imgs: Vec<&Image> = d.samples().iter().map(|s| &s.image).collect();
    let pred = forward(&p, &imgs).unwrap().argmax();
    let relabeled: Vec<LabeledSample> =
        d.samples().iter().zip(&pred).map(|(s, &y)| LabeledSample { image: s.image.clone(), label: y }).collect();
    let d2 = Dataset::new(d.class_names().to_vec(), relabeled).unwrap();
    let idx: Vec<usize> = (0..d2.len()).collect();
    let e = evaluate(&p, &d2, &idx).unwrap();
    assert_eq!(e.accuracy, 1.0);
    for (i, row) in e.confusion.counts.iter().enumerate() {
        assert!(row.iter().enumerate().all(|(j, &c)| i == j || c == 0));
    }
}

fn spec_strategy() -> impl Strategy<Value = OptimizerSpec> {
    prop_oneof![
        (0.0..0.99f64).prop_map(|m| OptimizerSpec::Sgd { momentum: m }),
        (0.0..0.99f64, 0.0..0.9999f64, 1e-10..1e-6f64).prop_map(|(b1, b2, e)| OptimizerSpec::Adam {
            beta1: b1,
            beta2: b2,
            eps: e
        }),
        (0.0..0.99f64, 1e-8..1e-4f64).prop_map(|(r, e)| OptimizerSpec::Adadelta { rho: r, eps: e }),
    ]
}

proptest! {
    #[test]
    fn zero_gradient_is_a_fixed_point(
        spec in spec_strategy(),
        params in prop::collection::vec(-5.0..5.0f64, 1..20),
        lr in 1e-6..1.0f64,
    ) {
        let mut s = OptimizerState::new(spec, params.len());
        let mut p = params.clone();
        let zeros = vec![0.0; p.len()];
        for _ in 0..5 {
            s.step(&mut p, &zeros, lr).unwrap();
        }
        prop_assert_eq!(p, params);
    }
}

