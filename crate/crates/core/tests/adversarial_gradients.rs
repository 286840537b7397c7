//! Invariants of the adversarial gradient flow through the GRL.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dann::data::Batch;
use dann::gradcheck::{random_batch, tiny_arch};
use dann::layers::softmax_cross_entropy;
use dann::model::{DannModel, ParamGroup};
use dann::optim::{
    compute_gradients, evaluate_losses, train_step, MomentumState, Mode, TrainConfig,
};
use dann::tensor::Tensor;

fn setup(seed: u64, lambda: f64) -> (DannModel, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DannModel::new(tiny_arch(), &mut rng).unwrap();
    model.set_lambda(lambda).unwrap();
    let batch = random_batch(model.arch(), 8, &mut rng);
    (model, batch)
}

fn grads(model: &DannModel, group: ParamGroup) -> Vec<(String, Tensor)> {
    model
        .named_params()
        .into_iter()
        .filter(|(_, g, _)| *g == group)
        .map(|(n, _, _)| {
            let g = model.grad(&n).unwrap().clone();
            (n, g)
        })
        .collect()
}

fn max_abs(ts: &[(String, Tensor)]) -> f64 {
    ts.iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
}

/// Feature-extractor gradients of the domain loss alone, GRL bypassed.
fn domain_only_feature_grads(model: &mut DannModel, batch: &Batch) -> Vec<(String, Tensor)> {
    let targets: Vec<usize> = batch.domain_labels.iter().map(|&d| d as usize).collect();
    let f = model.extract_features(&batch.frames).unwrap();
    let logits = model.domain_logits(&f).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &targets).unwrap();
    let gf = model.backward_domain_head(&g).unwrap();
    model.backward_features(&gf).unwrap();
    grads(model, ParamGroup::Features)
}

#[test]
fn grl_backprop_equals_negated_scaled_plain_backprop() {
    for seed in 0..5 {
        let lambda = 0.37;
        let (mut model, batch) = setup(seed, lambda);
        let targets: Vec<usize> = batch.domain_labels.iter().map(|&d| d as usize).collect();

        let plain = domain_only_feature_grads(&mut model, &batch);

        let f = model.extract_features(&batch.frames).unwrap();
        let logits = model.domain_logits(&f).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &targets).unwrap();
        let through_head = model.backward_domain_head(&g).unwrap();
        let reversed = model.backward_domain(&g).unwrap();
        // at the GRL output the relation is exact
        assert_eq!(reversed, through_head.scale(-lambda));
        model.backward_features(&reversed).unwrap();
        let via_grl = grads(&model, ParamGroup::Features);

        let scale = max_abs(&plain);
        for ((name, a), (_, b)) in via_grl.iter().zip(&plain) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - (-lambda * y)).abs() <= 1e-14 * scale.max(1.0), "{name}: {x} vs {}", -lambda * y);
            }
        }
    }
}

#[test]
fn composite_gradient_matches_two_pass_oracle() {
    for seed in 0..5 {
        let lambda = 0.8;
        let (mut model, batch) = setup(seed, lambda);
        let targets = batch.domain_labels.clone();

        compute_gradients(&mut model, &batch, Some(&targets)).unwrap();
        let composite = grads(&model, ParamGroup::Features);

        compute_gradients(&mut model, &batch, None).unwrap();
        let label_only = grads(&model, ParamGroup::Features);
        let domain_only = domain_only_feature_grads(&mut model, &batch);

        for ((name, c), ((_, l), (_, d))) in composite.iter().zip(label_only.iter().zip(&domain_only)) {
            for ((cv, lv), dv) in c.data().iter().zip(l.data()).zip(d.data()) {
                let expected = lv - lambda * dv;
                assert!((cv - expected).abs() <= 1e-12, "{name}: {cv} vs {expected}");
            }
        }
    }
}

#[test]
fn zero_lambda_leaves_no_domain_contribution() {
    let (mut model, batch) = setup(3, 0.0);
    let targets = batch.domain_labels.clone();
    compute_gradients(&mut model, &batch, Some(&targets)).unwrap();
    let with_domain = grads(&model, ParamGroup::Features);
    compute_gradients(&mut model, &batch, None).unwrap();
    let label_only = grads(&model, ParamGroup::Features);
    assert_eq!(with_domain, label_only);
}

fn directional_derivative(
    model: &mut DannModel,
    batch: &Batch,
    direction: &[(String, Tensor)],
) -> f64 {
    let h = 1e-6;
    let targets = batch.domain_labels.clone();
    let eval_at = |m: &mut DannModel, s: f64| {
        let mut probe = m.clone();
        for (name, d) in direction {
            let p = probe.param_mut(name).unwrap();
            for (v, dv) in p.data_mut().iter_mut().zip(d.data()) {
                *v += s * dv;
            }
        }
        evaluate_losses(&mut probe, batch, Some(&targets)).unwrap().1.unwrap()
    };
    (eval_at(model, h) - eval_at(model, -h)) / (2.0 * h)
}

#[test]
fn domain_head_descends_while_extractor_ascends_domain_loss() {
    for seed in 0..5 {
        let (mut model, batch) = setup(seed, 1.0);
        let targets = batch.domain_labels.clone();

        compute_gradients(&mut model, &batch, Some(&targets)).unwrap();
        let total_f = grads(&model, ParamGroup::Features);
        // SGD moves against the gradient
        let head_step: Vec<(String, Tensor)> = grads(&model, ParamGroup::Domain)
            .into_iter()
            .map(|(n, g)| (n, g.scale(-1.0)))
            .collect();

        compute_gradients(&mut model, &batch, None).unwrap();
        let label_f = grads(&model, ParamGroup::Features);
        let extractor_domain_step: Vec<(String, Tensor)> = total_f
            .iter()
            .zip(&label_f)
            .map(|((n, t), (_, l))| {
                let diff: Vec<f64> = t.data().iter().zip(l.data()).map(|(a, b)| -(a - b)).collect();
                (n.clone(), Tensor::new(t.shape(), diff).unwrap())
            })
            .collect();

        let head = directional_derivative(&mut model, &batch, &head_step);
        let extractor = directional_derivative(&mut model, &batch, &extractor_domain_step);
        assert!(head < 0.0, "seed {seed}: domain head step changes L_d at rate {head}");
        assert!(extractor > 0.0, "seed {seed}: extractor step changes L_d at rate {extractor}");
    }
}

fn run(cfg: &TrainConfig, mode: Mode, batches: &[Batch], seed: u64) -> DannModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DannModel::new(tiny_arch(), &mut rng).unwrap();
    let mut state = MomentumState::for_model(&model);
    let mut flips = ChaCha8Rng::seed_from_u64(seed + 1000);
    for (step, b) in batches.iter().enumerate() {
        train_step(&mut model, &mut state, b, step, cfg, mode, &mut flips).unwrap();
    }
    model
}

fn batches(n: usize, seed: u64) -> Vec<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_batch(&tiny_arch(), 8, &mut rng)).collect()
}

#[test]
fn fixed_seed_gives_identical_trajectories() {
    let cfg = TrainConfig { total_steps: 20, ..TrainConfig::default() };
    let stream = batches(20, 5);
    let a = run(&cfg, Mode::Dann, &stream, 9);
    let b = run(&cfg, Mode::Dann, &stream, 9);
    for ((n, _, x), (_, _, y)) in a.named_params().iter().zip(b.named_params().iter()) {
        assert_eq!(x, y, "{n}");
    }
}

#[test]
fn frozen_domain_head_with_zero_lambda_matches_baseline() {
    let cfg = TrainConfig {
        total_steps: 25,
        gamma: 0.0,
        flip_prob: 0.0,
        ..TrainConfig::default()
    };
    let stream = batches(25, 6);
    let dann = run(&cfg, Mode::Dann, &stream, 2);
    let base = run(&cfg, Mode::Baseline, &stream, 2);
    for ((n, g, x), (_, _, y)) in dann.named_params().iter().zip(base.named_params().iter()) {
        if *g == ParamGroup::Domain {
            continue;
        }
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-12, "{n}");
        }
    }
}

#[test]
fn zero_learning_rate_step_keeps_losses() {
    let cfg = TrainConfig { mu0: 0.0, total_steps: 4, ..TrainConfig::default() };
    let (mut model, batch) = setup(8, 0.0);
    let targets = batch.domain_labels.clone();
    let before = evaluate_losses(&mut model, &batch, Some(&targets)).unwrap();
    let mut state = MomentumState::for_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = train_step(&mut model, &mut state, &batch, 0, &cfg, Mode::Dann, &mut rng).unwrap();
    assert_eq!(m.label_loss, before.0);
    assert_eq!(evaluate_losses(&mut model, &batch, Some(&targets)).unwrap(), before);
}

#[test]
fn batch_without_source_rows_is_rejected() {
    let (mut model, mut batch) = setup(1, 0.5);
    batch.domain_labels = vec![1; batch.len()];
    batch.class_labels = vec![-1; batch.len()];
    let cfg = TrainConfig::default();
    let mut state = MomentumState::for_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = train_step(&mut model, &mut state, &batch, 0, &cfg, Mode::Dann, &mut rng).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn nan_loss_aborts_naming_the_step() {
    let (mut model, batch) = setup(1, 0.5);
    let bias = model
        .named_params()
        .into_iter()
        .filter(|(n, g, _)| *g == ParamGroup::Label && n.ends_with("bias"))
        .map(|(n, _, _)| n)
        .last()
        .unwrap();
    model.param_mut(&bias).unwrap().data_mut()[0] = f64::NAN;
    let cfg = TrainConfig::default();
    let mut state = MomentumState::for_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = train_step(&mut model, &mut state, &batch, 7, &cfg, Mode::Dann, &mut rng).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("step 7"), "{err}");
}
