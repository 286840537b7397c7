//! Framing, normalisation, batching and corpus-shift properties.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dann::data::{generate_corpus, DomainShift};
use dann::data::{frame_signal, make_batches, normalize, Domain, FrameConfig, FrameSet, NormStats};
use dann::harness::{predict_frames, train_on_frames, ExperimentConfig};
use dann::model::{argmax_rows, DannModel};
use dann::optim::Mode;
use dann::tensor::Tensor;

proptest! {
    #[test]
    fn every_frame_has_the_configured_length(
        len in 0usize..400,
        window_ms in 1u32..6,
        shift_ms in 1u32..6,
        context in 1u32..8,
    ) {
        let sr = 1000;
        let cfg = FrameConfig { window_ms, shift_ms, context_frames: context };
        let samples: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let frames = frame_signal(&samples, sr, &cfg);
        let win = cfg.window_samples(sr);
        let shift = cfg.shift_samples(sr);
        let expected = if len < win {
            0
        } else {
            ((len - win) / shift + 1).saturating_sub(context as usize - 1)
        };
        prop_assert_eq!(frames.len(), expected);
        for f in &frames {
            prop_assert_eq!(f.shape(), &[1, cfg.frame_len(sr)]);
        }
    }

    #[test]
    fn normalising_twice_changes_nothing(
        rows in 2usize..12,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-50.0..50.0)).collect();
        let x = Tensor::new(&[rows, cols], data).unwrap();
        let (once, _) = normalize(&x, None).unwrap();
        let (twice, _) = normalize(&once, None).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }
    }
}

#[test]
fn normalised_columns_have_zero_mean_unit_std() {
    let x = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![8.0, 5.0]]).unwrap();
    let (y, stats) = normalize(&x, None).unwrap();
    let back = NormStats::estimate(&y).unwrap();
    assert!(back.mean.iter().all(|m| m.abs() < 1e-12));
    assert!((back.std[0] - 1.0).abs() < 1e-12);
    // a constant column maps to zeros instead of dividing by zero
    assert_eq!(stats.std[1], 0.0);
    assert!(y.data().iter().skip(1).step_by(2).all(|&v| v == 0.0));
}

#[test]
fn class_templates_are_balanced() {
    let cfg = ExperimentConfig::desk();
    let splits = generate_corpus(&cfg.corpus).unwrap();
    let k = cfg.corpus.num_classes;
    for corpus in [&splits.train, &splits.eval] {
        let mut counts = vec![0usize; k];
        for u in corpus.domain(Domain::Source) {
            counts[u.class_label.unwrap()] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "class counts {counts:?}");
    }
}

#[test]
fn batches_split_source_and_target_halves() {
    let cfg = ExperimentConfig::desk();
    let mut spec = cfg.corpus.clone();
    spec.counts.source_train = 6;
    spec.counts.target_train = 6;
    let splits = generate_corpus(&spec).unwrap();
    let frames = FrameSet::from_utterances(&splits.train.utterances, spec.sample_rate, &cfg.framing);
    let (src, tgt) = (frames.domain(Domain::Source), frames.domain(Domain::Target));
    for b in make_batches(&src, Some(&tgt), 7, 3).unwrap().take(40) {
        assert_eq!(b.domain_labels, [0, 0, 0, 0, 1, 1, 1]);
        assert!(b.class_labels[..4].iter().all(|&c| c >= 0));
        assert!(b.class_labels[4..].iter().all(|&c| c == -1));
    }
}

/// Domain accuracy of a small classifier trained to tell source from target.
fn domain_probe(shift: DomainShift, seed: u64) -> f64 {
    let mut cfg = ExperimentConfig::desk().with_seed(seed);
    cfg.corpus.shift = shift;
    cfg.corpus.num_classes = 2;
    cfg.arch.num_classes = 2;
    cfg.mode = Mode::Baseline;
    cfg.train.total_steps = 1000;
    let splits = generate_corpus(&cfg.corpus).unwrap();
    let relabel = |set: FrameSet| FrameSet {
        class_labels: set.domain_labels.iter().map(|&d| d as i32).collect(),
        domain_labels: vec![0; set.len()],
        ..set
    };
    let sr = cfg.corpus.sample_rate;
    let mut train = relabel(FrameSet::from_utterances(&splits.train.utterances, sr, &cfg.framing));
    let mut eval = relabel(FrameSet::from_utterances(&splits.eval.utterances, sr, &cfg.framing));
    let stats = NormStats::estimate(&train.matrix().unwrap()).unwrap();
    train.normalize_with(&stats).unwrap();
    eval.normalize_with(&stats).unwrap();
    let mut ck = train_on_frames(&cfg, &train, &train, stats).unwrap().checkpoint;
    let pred = predict_frames(&mut ck.model, &eval).unwrap();
    let hits = pred.iter().zip(&eval.class_labels).filter(|(p, &c)| **p as i32 == c).count();
    hits as f64 / eval.len() as f64
}

#[test]
fn identity_shift_is_indistinguishable() {
    let acc = domain_probe(DomainShift::identity(), 4);
    assert!((acc - 0.5).abs() <= 0.1, "probe accuracy {acc}");
}

#[test]
fn pitch_shift_alone_is_detectable() {
    let shift = DomainShift { f0_scale: 1.6, tilt: 0.0, noise: 0.0 };
    let acc = domain_probe(shift, 4);
    assert!(acc > 0.9, "probe accuracy {acc}");
}

#[test]
fn untrained_domain_head_is_at_chance() {
    let cfg = ExperimentConfig::desk();
    let splits = generate_corpus(&cfg.corpus).unwrap();
    let mut frames = FrameSet::from_utterances(&splits.eval.utterances, cfg.corpus.sample_rate, &cfg.framing);
    let stats = NormStats::estimate(&frames.matrix().unwrap()).unwrap();
    frames.normalize_with(&stats).unwrap();
    let src: Vec<usize> = (0..frames.len()).filter(|&i| frames.domain_labels[i] == 0).take(500).collect();
    let tgt: Vec<usize> = (0..frames.len()).filter(|&i| frames.domain_labels[i] == 1).take(500).collect();
    let idx: Vec<usize> = src.into_iter().chain(tgt).collect();
    assert_eq!(idx.len(), 1000);
    for seed in 0..3 {
        let mut model = DannModel::new(cfg.arch.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let logits = model.forward_domain(&frames.gather(&idx).unwrap()).unwrap();
        let hits = argmax_rows(&logits)
            .iter()
            .zip(&idx)
            .filter(|(p, &i)| **p == frames.domain_labels[i] as usize)
            .count();
        let acc = hits as f64 / idx.len() as f64;
        assert!((acc - 0.5).abs() <= 0.1, "seed {seed}: {acc}");
    }
}
