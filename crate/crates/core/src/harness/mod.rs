//! Experiment orchestration behind the `dann` command line.
//!
//! A corpus directory holds `train.dcrp`, `eval.dcrp`, `stats.dsta` and the
//! effective `config.txt`; a training output directory holds
//! `checkpoint.dann` and `metrics.csv`.

mod config;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ExperimentConfig, Preset};

use crate::checkpoint::Checkpoint;
use crate::data::{
    generate_corpus, make_batches, read_corpus, read_stats, write_corpus, write_stats, Corpus,
    Domain, FrameConfig, FrameSet, NormStats,
};
use crate::error::{Error, Result};
use crate::gradcheck::{self, Fault, GradcheckReport};
use crate::model::{argmax_rows, DannModel};
use crate::optim::{train_step, MomentumState, Mode, StepMetrics};

pub const TRAIN_CORPUS: &str = "train.dcrp";
pub const EVAL_CORPUS: &str = "eval.dcrp";
pub const STATS_FILE: &str = "stats.dsta";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.dann";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str =
    "step,p,mu,lambda,label_loss,domain_loss_raw,domain_loss_scaled,source_train_acc,domain_acc";

/// Frames evaluated per forward pass.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::arg(format!("split must be train or eval, got {other}"))),
        }
    }
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => TRAIN_CORPUS,
            Split::Eval => EVAL_CORPUS,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub source_train_frames: usize,
    pub target_train_frames: usize,
    pub source_eval_frames: usize,
    pub target_eval_frames: usize,
    pub frame_len: usize,
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frame_len {}", self.frame_len)?;
        writeln!(f, "source_train_frames {}", self.source_train_frames)?;
        writeln!(f, "target_train_frames {}", self.target_train_frames)?;
        writeln!(f, "source_eval_frames {}", self.source_eval_frames)?;
        writeln!(f, "target_eval_frames {}", self.target_eval_frames)
    }
}

/// Synthesises the corpus, writes both splits, the source-frame
/// normalisation statistics and the effective config to `out`.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<GenerateSummary> {
    cfg.validate()?;
    let splits = generate_corpus(&cfg.corpus)?;
    let sr = cfg.corpus.sample_rate;
    let train = FrameSet::from_utterances(&splits.train.utterances, sr, &cfg.framing);
    let eval = FrameSet::from_utterances(&splits.eval.utterances, sr, &cfg.framing);
    let source = train.domain(Domain::Source);
    if source.is_empty() {
        return Err(Error::Config(format!(
            "no source training frames: utterances of {} ms are shorter than one {}-frame context",
            cfg.corpus.utterance_ms, cfg.framing.context_frames
        )));
    }
    let stats = NormStats::estimate(&source.matrix()?)?;

    create_dir(out)?;
    write_corpus(&out.join(TRAIN_CORPUS), &splits.train)?;
    write_corpus(&out.join(EVAL_CORPUS), &splits.eval)?;
    write_stats(&out.join(STATS_FILE), &stats)?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;

    Ok(GenerateSummary {
        source_train_frames: source.len(),
        target_train_frames: train.len() - source.len(),
        source_eval_frames: eval.domain(Domain::Source).len(),
        target_eval_frames: eval.domain(Domain::Target).len(),
        frame_len: train.frame_len,
    })
}

/// Frames a corpus split and applies `stats`, checking the frame length.
fn load_frames(path: &Path, framing: &FrameConfig, stats: &NormStats, input_len: usize) -> Result<(Corpus, FrameSet)> {
    let corpus = read_corpus(path)?;
    framing.validate(corpus.sample_rate)?;
    let frame_len = framing.frame_len(corpus.sample_rate);
    if frame_len != input_len || stats.dim() != input_len {
        return Err(Error::Config(format!(
            "{}: frames of {frame_len} samples at {} Hz, model expects {input_len}, stats cover {}",
            path.display(),
            corpus.sample_rate,
            stats.dim()
        )));
    }
    let mut frames = FrameSet::from_utterances(&corpus.utterances, corpus.sample_rate, framing);
    frames.normalize_with(stats)?;
    Ok((corpus, frames))
}

/// Training output kept in memory.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
}

/// Runs `cfg.train.total_steps` steps on already normalised frames.
///
/// Seeding: model init, batch order and label flips each use their own
/// stream of a generator keyed by `cfg.train.seed`.
pub fn train_on_frames(
    cfg: &ExperimentConfig,
    source: &FrameSet,
    target: &FrameSet,
    stats: NormStats,
) -> Result<TrainOutcome> {
    let mut arch = cfg.arch.clone();
    arch.input_len = source.frame_len;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    init_rng.set_stream(1);
    let mut flip_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    flip_rng.set_stream(2);

    let mut model = DannModel::new(arch, &mut init_rng)?;
    let mut momentum = MomentumState::for_model(&model);
    let target = match cfg.mode {
        Mode::Dann => Some(target),
        Mode::Baseline => None,
    };
    if let Some(&bad) = source
        .class_labels
        .iter()
        .find(|&&c| c < 0 || c as usize >= model.arch().num_classes)
    {
        return Err(Error::Config(format!(
            "source label {bad} outside the {} configured classes",
            model.arch().num_classes
        )));
    }
    let batches = make_batches(source, target, cfg.train.batch_size, cfg.train.seed)?;

    let total = cfg.train.total_steps;
    let mut metrics = Vec::new();
    for (step, batch) in batches.take(total).enumerate() {
        let m = train_step(&mut model, &mut momentum, &batch, step, &cfg.train, cfg.mode, &mut flip_rng)?;
        if step % cfg.log_every == 0 || step + 1 == total {
            metrics.push(m);
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            framing: cfg.framing,
            stats,
        },
        metrics,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.step,
            m.p,
            m.mu,
            m.lambda,
            m.label_loss,
            opt(m.domain_loss_raw),
            opt(m.domain_loss_scaled),
            m.source_train_acc,
            opt(m.domain_acc)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub last: Option<StepMetrics>,
}

/// Trains on the corpus in `corpus_dir` and writes checkpoint and metrics
/// into `out`.
pub fn cmd_train(cfg: &ExperimentConfig, corpus_dir: &Path, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let stats = read_stats(&corpus_dir.join(STATS_FILE))?;
    let (_, frames) = load_frames(&corpus_dir.join(TRAIN_CORPUS), &cfg.framing, &stats, stats.dim())?;
    let source = frames.domain(Domain::Source);
    let target = frames.domain(Domain::Target);
    if cfg.mode == Mode::Dann && target.is_empty() {
        return Err(Error::Config("dann mode needs target-domain training frames".into()));
    }
    let outcome = train_on_frames(cfg, &source, &target, stats)?;

    create_dir(out)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let metrics = out.join(METRICS_FILE);
    outcome.checkpoint.save(&checkpoint)?;
    let mut file = fs::File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
    file.write_all(metrics_csv(&outcome.metrics).as_bytes())
        .map_err(|e| Error::io(&metrics, e))?;
    Ok(TrainSummary {
        checkpoint,
        metrics,
        last: outcome.metrics.last().copied(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn value(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

fn fmt_acc(f: &mut fmt::Formatter<'_>, name: &str, acc: Option<Accuracy>) -> fmt::Result {
    match acc {
        Some(a) => writeln!(f, "{name}_accuracy {:.6} ({}/{})", a.value(), a.correct, a.total),
        None => writeln!(f, "{name}_accuracy n/a (no labeled frames)"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub source: Option<Accuracy>,
    pub target: Option<Accuracy>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_acc(f, "source", self.source)?;
        fmt_acc(f, "target", self.target)
    }
}

/// Label-path predictions for every frame, in chunks.
pub fn predict_frames(model: &mut DannModel, frames: &FrameSet) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(frames.len());
    let idx: Vec<usize> = (0..frames.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        preds.extend(model.predict(&frames.gather(chunk)?)?);
    }
    Ok(preds)
}

/// Classification accuracy per domain over labeled frames only.
pub fn domain_accuracies(model: &mut DannModel, frames: &FrameSet) -> Result<[Option<Accuracy>; 2]> {
    let preds = predict_frames(model, frames)?;
    let mut acc = [Accuracy { correct: 0, total: 0 }; 2];
    for (i, &p) in preds.iter().enumerate() {
        let Ok(label) = usize::try_from(frames.class_labels[i]) else {
            continue;
        };
        let a = &mut acc[frames.domain_labels[i] as usize];
        a.total += 1;
        a.correct += usize::from(p == label);
    }
    Ok(acc.map(|a| (a.total > 0).then_some(a)))
}

fn evaluate_checkpoint(ck: &mut Checkpoint, corpus_dir: &Path, split: Split) -> Result<EvalReport> {
    let input_len = ck.model.arch().input_len;
    let (_, frames) = load_frames(&corpus_dir.join(split.file_name()), &ck.framing, &ck.stats, input_len)?;
    let [source, target] = domain_accuracies(&mut ck.model, &frames)?;
    Ok(EvalReport { split, source, target })
}

/// Evaluates the label path of a checkpoint on one corpus split. When
/// `report` is given the text report is also written there.
pub fn cmd_eval(checkpoint: &Path, corpus_dir: &Path, split: Split, report: Option<&Path>) -> Result<EvalReport> {
    let mut ck = Checkpoint::load(checkpoint)?;
    let result = evaluate_checkpoint(&mut ck, corpus_dir, split)?;
    if let Some(path) = report {
        fs::write(path, format!("split {}\n{result}", split.name())).map_err(|e| Error::io(path, e))?;
    }
    Ok(result)
}

/// Accuracy of the domain head on the eval split (source vs target frames).
pub fn domain_classifier_accuracy(checkpoint: &Path, corpus_dir: &Path) -> Result<f64> {
    let mut ck = Checkpoint::load(checkpoint)?;
    let input_len = ck.model.arch().input_len;
    let (_, frames) = load_frames(&corpus_dir.join(EVAL_CORPUS), &ck.framing, &ck.stats, input_len)?;
    let idx: Vec<usize> = (0..frames.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let logits = ck.model.forward_domain(&frames.gather(chunk)?)?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p == frames.domain_labels[i] as usize)
            .count();
    }
    Ok(correct as f64 / frames.len() as f64)
}

/// Runs the finite-difference suite; a failing check is a numerical error
/// carrying the report.
pub fn cmd_gradcheck(seed: u64, fault: Option<Fault>) -> Result<GradcheckReport> {
    gradcheck::run_suite(seed, gradcheck::DEFAULT_SEEDS, fault)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub baseline: EvalReport,
    pub dann: EvalReport,
}

impl CompareReport {
    fn target(r: &EvalReport) -> Result<f64> {
        r.target
            .map(|a| a.value())
            .ok_or_else(|| Error::Config("eval split has no labeled target frames".into()))
    }

    /// DANN minus baseline target-domain accuracy.
    pub fn target_delta(&self) -> Result<f64> {
        Ok(Self::target(&self.dann)? - Self::target(&self.baseline)?)
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |a: Option<Accuracy>| a.map_or("n/a".to_string(), |a| format!("{:.6}", a.value()));
        writeln!(f, "{:<10} {:>12} {:>12}", "model", "source_acc", "target_acc")?;
        for (name, r) in [("baseline", &self.baseline), ("dann", &self.dann)] {
            writeln!(f, "{name:<10} {:>12} {:>12}", cell(r.source), cell(r.target))?;
        }
        match self.target_delta() {
            Ok(d) => writeln!(f, "target_delta {d:+.6}"),
            Err(_) => writeln!(f, "target_delta n/a"),
        }
    }
}

/// Evaluates a baseline and a DANN checkpoint side by side on the eval split.
pub fn cmd_compare(baseline: &Path, dann: &Path, corpus_dir: &Path) -> Result<CompareReport> {
    let mut base = Checkpoint::load(baseline)?;
    let mut adapted = Checkpoint::load(dann)?;
    if base.model.arch() != adapted.model.arch() || base.framing != adapted.framing {
        return Err(Error::Config(format!(
            "checkpoints differ in architecture or framing: {:?} vs {:?}",
            base.model.arch(),
            adapted.model.arch()
        )));
    }
    let report = CompareReport {
        baseline: evaluate_checkpoint(&mut base, corpus_dir, Split::Eval)?,
        dann: evaluate_checkpoint(&mut adapted, corpus_dir, Split::Eval)?,
    };
    report.target_delta()?;
    Ok(report)
}
