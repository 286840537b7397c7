//! SGD with momentum, the learning-rate and adaptation schedules, domain
//! label flipping, and the adversarial training step.

use std::collections::BTreeMap;

use rand::Rng;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::layers::softmax_cross_entropy;
use crate::model::{argmax_rows, DannModel, ParamGroup};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mu0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub momentum: f64,
    pub flip_prob: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mu0: 0.01,
            alpha: 10.0,
            beta: 0.75,
            gamma: 10.0,
            momentum: 0.9,
            flip_prob: 0.1,
            total_steps: 1000,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0) {
            return Err(Error::Config(format!("mu0 must be > 0, got {}", self.mu0)));
        }
        if !(0.0..1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "flip_prob must lie in [0, 1), got {}",
                self.flip_prob
            )));
        }
        if self.total_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("total_steps and batch_size must be >= 1".into()));
        }
        let finite = [self.alpha, self.beta, self.gamma, self.momentum];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("schedule constants must be finite".into()));
        }
        Ok(())
    }

    /// Training progress in `[0, 1)` at `step`.
    pub fn progress(&self, step: usize) -> f64 {
        step as f64 / self.total_steps as f64
    }
}

fn check_progress(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::arg(format!("progress must lie in [0, 1], got {p}")));
    }
    Ok(())
}

/// `mu0 / (1 + alpha * p)^beta`.
pub fn lr_schedule(p: f64, cfg: &TrainConfig) -> Result<f64> {
    check_progress(p)?;
    Ok(cfg.mu0 / (1.0 + cfg.alpha * p).powf(cfg.beta))
}

/// `2 / (1 + exp(-gamma * p)) - 1`, rising from 0 towards 1.
pub fn lambda_schedule(p: f64, cfg: &TrainConfig) -> Result<f64> {
    check_progress(p)?;
    Ok(2.0 / (1.0 + (-cfg.gamma * p).exp()) - 1.0)
}

/// Heavy-ball velocities keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MomentumState {
    pub velocity: BTreeMap<String, Tensor>,
}

impl MomentumState {
    pub fn for_model(model: &DannModel) -> Self {
        MomentumState {
            velocity: model
                .named_params()
                .into_iter()
                .map(|(name, _, t)| (name, Tensor::zeros_like(t)))
                .collect(),
        }
    }

    pub fn for_params(params: &BTreeMap<String, Tensor>) -> Self {
        MomentumState {
            velocity: params
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros_like(t)))
                .collect(),
        }
    }
}

/// `v <- momentum * v + grad; value <- value - lr * v`.
fn update_one(
    name: &str,
    value: &mut Tensor,
    grad: &Tensor,
    velocity: &mut BTreeMap<String, Tensor>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let v = velocity
        .get_mut(name)
        .ok_or_else(|| Error::dim(format!("no momentum buffer for {name}")))?;
    if v.shape() != value.shape() || grad.shape() != value.shape() {
        return Err(Error::dim(format!(
            "{name}: param {:?}, grad {:?}, velocity {:?}",
            value.shape(),
            grad.shape(),
            v.shape()
        )));
    }
    for ((v, &g), w) in v.data_mut().iter_mut().zip(grad.data()).zip(value.data_mut()) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
    Ok(())
}

/// One momentum step over named parameter maps.
pub fn sgd_momentum_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut MomentumState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim("params and grads name different tensors"));
    }
    for (name, value) in params.iter_mut() {
        let grad = grads
            .get(name)
            .ok_or_else(|| Error::dim(format!("no gradient for {name}")))?;
        update_one(name, value, grad, &mut state.velocity, lr, momentum)?;
    }
    Ok(())
}

/// Applies one momentum step to the model parameters in `groups`, using the
/// gradients currently held by the layers.
pub fn apply_model_step(
    model: &mut DannModel,
    state: &mut MomentumState,
    lr: f64,
    momentum: f64,
    groups: &[ParamGroup],
) -> Result<()> {
    model.for_each_param_mut(|name, group, value, grad| {
        if groups.contains(&group) {
            update_one(name, value, grad, &mut state.velocity, lr, momentum)?;
        }
        Ok(())
    })
}

/// Flips each binary label independently with probability `flip_prob`.
/// Draws exactly one uniform per label.
pub fn flip_domain_labels<R: Rng + ?Sized>(labels: &[u8], flip_prob: f64, rng: &mut R) -> Vec<u8> {
    labels
        .iter()
        .map(|&l| {
            let u: f64 = rng.random();
            if u < flip_prob {
                1 - l
            } else {
                l
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Source-only training of feature extractor and label head.
    Baseline,
    /// Adversarial training through the gradient reversal layer.
    Dann,
}

impl Mode {
    pub fn trained_groups(self) -> &'static [ParamGroup] {
        match self {
            Mode::Baseline => &[ParamGroup::Features, ParamGroup::Label],
            Mode::Dann => &[ParamGroup::Features, ParamGroup::Label, ParamGroup::Domain],
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "dann" => Ok(Mode::Dann),
            other => Err(Error::arg(format!("mode must be baseline or dann, got {other}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Dann => "dann",
        })
    }
}

/// Losses and accuracies from one gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub label_loss: f64,
    pub source_acc: f64,
    pub domain_loss: Option<f64>,
    /// Against the un-flipped domain labels.
    pub domain_acc: Option<f64>,
}

fn accuracy(pred: &[usize], truth: impl Iterator<Item = usize>) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| **p == *t).count();
    hits as f64 / pred.len() as f64
}

/// Forward and backward pass for one batch, leaving gradients in the layers.
///
/// The label loss covers source rows only; the domain loss, when
/// `domain_targets` is given, covers every row and reaches the feature
/// extractor through the GRL at the model's current lambda. The domain head
/// itself receives the plain (un-reversed) domain gradient.
pub fn compute_gradients(
    model: &mut DannModel,
    batch: &Batch,
    domain_targets: Option<&[u8]>,
) -> Result<LossReport> {
    let source = batch.source_indices();
    if source.is_empty() {
        return Err(Error::arg("batch has no source samples; label loss is undefined"));
    }
    let labels: Vec<usize> = source
        .iter()
        .map(|&i| {
            usize::try_from(batch.class_labels[i])
                .map_err(|_| Error::arg(format!("source row {i} has no class label")))
        })
        .collect::<Result<_>>()?;

    let features = model.extract_features(&batch.frames)?;
    let dim = features.shape()[1];

    let label_logits = model.label_logits(&features.select_rows(&source)?)?;
    let (label_loss, grad_logits) = softmax_cross_entropy(&label_logits, &labels)?;
    let source_acc = accuracy(&argmax_rows(&label_logits), labels.iter().copied());
    let grad_source = model.backward_label(&grad_logits)?;

    let mut grad_features = Tensor::zeros(features.shape());
    {
        let g = grad_features.data_mut();
        for (r, &i) in source.iter().enumerate() {
            g[i * dim..(i + 1) * dim].copy_from_slice(&grad_source.data()[r * dim..(r + 1) * dim]);
        }
    }

    let (mut domain_loss, mut domain_acc) = (None, None);
    if let Some(targets) = domain_targets {
        if targets.len() != batch.len() {
            return Err(Error::dim(format!(
                "{} domain targets for a batch of {}",
                targets.len(),
                batch.len()
            )));
        }
        let targets: Vec<usize> = targets.iter().map(|&d| d as usize).collect();
        let logits = model.domain_logits(&features)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &targets)?;
        domain_acc = Some(accuracy(
            &argmax_rows(&logits),
            batch.domain_labels.iter().map(|&d| d as usize),
        ));
        domain_loss = Some(loss);
        let reversed = model.backward_domain(&grad)?;
        for (g, r) in grad_features.data_mut().iter_mut().zip(reversed.data()) {
            *g += r;
        }
    }

    model.backward_features(&grad_features)?;
    Ok(LossReport {
        label_loss,
        source_acc,
        domain_loss,
        domain_acc,
    })
}

/// Label loss over source rows and, when `domain_targets` is given, domain
/// loss over all rows. Forward only; gradients are left untouched.
pub fn evaluate_losses(
    model: &mut DannModel,
    batch: &Batch,
    domain_targets: Option<&[u8]>,
) -> Result<(f64, Option<f64>)> {
    let source = batch.source_indices();
    let labels: Vec<usize> = source
        .iter()
        .map(|&i| {
            usize::try_from(batch.class_labels[i])
                .map_err(|_| Error::arg(format!("source row {i} has no class label")))
        })
        .collect::<Result<_>>()?;
    if labels.is_empty() {
        return Err(Error::arg("batch has no source samples; label loss is undefined"));
    }
    let features = model.extract_features(&batch.frames)?;
    let logits = model.label_logits(&features.select_rows(&source)?)?;
    let (label_loss, _) = softmax_cross_entropy(&logits, &labels)?;
    let domain_loss = match domain_targets {
        Some(t) => {
            let targets: Vec<usize> = t.iter().map(|&d| d as usize).collect();
            let logits = model.domain_logits(&features)?;
            Some(softmax_cross_entropy(&logits, &targets)?.0)
        }
        None => None,
    };
    Ok((label_loss, domain_loss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub p: f64,
    pub mu: f64,
    pub lambda: f64,
    pub label_loss: f64,
    pub domain_loss_raw: Option<f64>,
    pub domain_loss_scaled: Option<f64>,
    pub source_train_acc: f64,
    pub domain_acc: Option<f64>,
}

/// One training step at `step` of `cfg.total_steps`.
///
/// Sets the learning rate and lambda from the schedules, flips domain
/// targets (DANN only), computes gradients and applies one momentum update
/// to the trained parameter groups. Non-finite losses abort before any
/// parameter is touched.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut DannModel,
    state: &mut MomentumState,
    batch: &Batch,
    step: usize,
    cfg: &TrainConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<StepMetrics> {
    let p = cfg.progress(step);
    let mu = lr_schedule(p, cfg)?;
    let lambda = match mode {
        Mode::Dann => lambda_schedule(p, cfg)?,
        Mode::Baseline => 0.0,
    };
    model.set_lambda(lambda)?;

    let flipped;
    let targets = match mode {
        Mode::Dann => {
            flipped = flip_domain_labels(&batch.domain_labels, cfg.flip_prob, rng);
            Some(flipped.as_slice())
        }
        Mode::Baseline => None,
    };
    let report = compute_gradients(model, batch, targets)?;

    let losses = [Some(report.label_loss), report.domain_loss];
    if losses.iter().flatten().any(|l| !l.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite loss at step {step}: label {}, domain {:?}",
            report.label_loss, report.domain_loss
        )));
    }
    apply_model_step(model, state, mu, cfg.momentum, mode.trained_groups())?;

    Ok(StepMetrics {
        step,
        p,
        mu,
        lambda,
        label_loss: report.label_loss,
        domain_loss_raw: report.domain_loss,
        domain_loss_scaled: report.domain_loss.map(|l| lambda * l),
        source_train_acc: report.source_acc,
        domain_acc: report.domain_acc,
    })
}
