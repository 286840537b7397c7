//! Central finite-difference checks for every layer and for the composite
//! adversarial gradient of the feature extractor.
//!
//! Each check turns a layer into a scalar objective `sum(r * layer(x))` for
//! a fixed random projection `r`, perturbs every input and parameter element
//! by `±EPS`, and compares `(L+ - L-) / 2 EPS` with the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::error::Result;
use crate::layers::{
    softmax_cross_entropy, AvgPool1d, Conv1d, Dense, GradientReversal, Layer, LayerState, Relu,
};
use crate::model::{ArchConfig, ConvSpec, DannModel, ParamGroup};
use crate::optim::{compute_gradients, evaluate_losses};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;
pub const DEFAULT_SEEDS: usize = 5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Deliberate defects for exercising the checker itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scales the conv weight gradient by 1.01.
    ConvBackward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub worst_error: f64,
    pub comparisons: usize,
    pub seeds: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst_error < TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{:<10} {} worst_rel_err={:.3e} checks={} seeds={}",
                r.name,
                if r.passed() { "PASS" } else { "FAIL" },
                r.worst_error,
                r.comparisons,
                r.seeds
            )?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Worst {
    err: f64,
    count: usize,
}

impl Worst {
    fn add(&mut self, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        // NaN must count as a failure
        if e.is_nan() || e > self.err {
            self.err = if e.is_nan() { f64::INFINITY } else { e };
        }
        self.count += 1;
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

/// Values with magnitude in `[0.05, 1]` and random sign, away from ReLU's kink.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    random_tensor(shape, rng).map(|v| v.signum() * (0.05 + 0.95 * v.abs()))
}

fn projection(layer: &mut dyn Layer, x: &Tensor, r: &Tensor) -> Result<f64> {
    let y = layer.forward(x)?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Finite-difference check of input and parameter gradients of one layer.
fn check_layer(layer: &mut dyn Layer, x: &Tensor, rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<()> {
    let y = layer.forward(x)?;
    let r = random_tensor(y.shape(), rng);
    let dx = layer.backward(&r)?;
    let grads = layer.state().param_grads.clone();

    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + EPS;
        let lp = projection(layer, &xp, &r)?;
        xp.data_mut()[i] = orig - EPS;
        let lm = projection(layer, &xp, &r)?;
        xp.data_mut()[i] = orig;
        worst.add(dx.data()[i], (lp - lm) / (2.0 * EPS));
    }

    for (name, grad) in &grads {
        for i in 0..grad.len() {
            let orig = layer.state().params[name].data()[i];
            layer.state_mut().params.get_mut(name).unwrap().data_mut()[i] = orig + EPS;
            let lp = projection(layer, x, &r)?;
            layer.state_mut().params.get_mut(name).unwrap().data_mut()[i] = orig - EPS;
            let lm = projection(layer, x, &r)?;
            layer.state_mut().params.get_mut(name).unwrap().data_mut()[i] = orig;
            worst.add(grad.data()[i], (lp - lm) / (2.0 * EPS));
        }
    }
    Ok(())
}

/// Wraps a layer and corrupts its weight gradient.
struct Faulty<L: Layer>(L);

impl<L: Layer> Layer for Faulty<L> {
    fn kind(&self) -> &'static str {
        self.0.kind()
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.0.forward(input)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let dx = self.0.backward(grad_out)?;
        if let Some(w) = self.0.state_mut().param_grads.get_mut("weight") {
            *w = w.scale(1.01);
        }
        Ok(dx)
    }

    fn state(&self) -> &LayerState {
        self.0.state()
    }

    fn state_mut(&mut self) -> &mut LayerState {
        self.0.state_mut()
    }
}

fn check_conv(rng: &mut ChaCha8Rng, fault: Option<Fault>, worst: &mut Worst) -> Result<()> {
    let (cin, cout) = (3, rng.random_range(2..4));
    let (width, stride) = (rng.random_range(2..6), rng.random_range(1..4));
    let len = width + stride * rng.random_range(3..7) + rng.random_range(0..stride);
    let conv = Conv1d::new(cin, cout, width, stride, rng)?;
    // non-zero biases so their gradient path is exercised away from init
    let bias = random_tensor(&[cout], rng);
    let mut conv = Conv1d::from_params(conv.state().param("weight").clone(), bias, stride)?;
    let x = random_tensor(&[2, cin, len], rng);
    match fault {
        Some(Fault::ConvBackward) => check_layer(&mut Faulty(conv), &x, rng, worst),
        None => check_layer(&mut conv, &x, rng, worst),
    }
}

fn check_pool(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<()> {
    let pool = rng.random_range(1..4);
    let len = pool * rng.random_range(2..6) + rng.random_range(0..pool);
    let x = random_tensor(&[2, 2, len], rng);
    check_layer(&mut AvgPool1d::new(pool)?, &x, rng, worst)
}

fn check_relu(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<()> {
    let x = away_from_zero(&[3, 7], rng);
    check_layer(&mut Relu::new(), &x, rng, worst)
}

fn check_dense(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<()> {
    let (din, dout) = (rng.random_range(2..7), rng.random_range(2..6));
    let w = random_tensor(&[din, dout], rng);
    let b = random_tensor(&[dout], rng);
    let x = random_tensor(&[3, din], rng);
    check_layer(&mut Dense::from_params(w, b)?, &x, rng, worst)
}

fn check_softmax_ce(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<()> {
    let (b, k) = (4, rng.random_range(2..6));
    let logits = random_tensor(&[b, k], rng).scale(3.0);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let (_, grad) = softmax_cross_entropy(&logits, &labels)?;
    let mut z = logits.clone();
    for i in 0..z.len() {
        let orig = z.data()[i];
        z.data_mut()[i] = orig + EPS;
        let lp = softmax_cross_entropy(&z, &labels)?.0;
        z.data_mut()[i] = orig - EPS;
        let lm = softmax_cross_entropy(&z, &labels)?.0;
        z.data_mut()[i] = orig;
        worst.add(grad.data()[i], (lp - lm) / (2.0 * EPS));
    }
    Ok(())
}

/// The GRL's backward is by definition not the derivative of its forward:
/// it must equal `-lambda` times that derivative.
fn check_grl(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<()> {
    let lambda = rng.random_range(0.0..1.0);
    let mut grl = GradientReversal::new(lambda)?;
    let x = random_tensor(&[2, 5], rng);
    let r = random_tensor(&[2, 5], rng);
    let analytic = grl.backward(&r)?;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + EPS;
        let lp = projection(&mut grl, &xp, &r)?;
        xp.data_mut()[i] = orig - EPS;
        let lm = projection(&mut grl, &xp, &r)?;
        xp.data_mut()[i] = orig;
        worst.add(analytic.data()[i], -lambda * (lp - lm) / (2.0 * EPS));
    }
    Ok(())
}

/// Small architecture used by the composite check.
pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        input_len: 48,
        convs: vec![
            ConvSpec { width: 6, maps: 3, stride: 2 },
            ConvSpec { width: 3, maps: 3, stride: 1 },
        ],
        pool: 2,
        head_depth: 3,
        head_width: 6,
        num_classes: 3,
    }
}

/// A random half-source, half-target batch for `arch`.
pub fn random_batch(arch: &ArchConfig, size: usize, rng: &mut ChaCha8Rng) -> Batch {
    let n_source = size.div_ceil(2);
    let frames = random_tensor(&[size, 1, arch.input_len], rng);
    let class_labels = (0..size)
        .map(|i| {
            if i < n_source {
                rng.random_range(0..arch.num_classes) as i32
            } else {
                crate::data::ABSENT_LABEL
            }
        })
        .collect();
    let domain_labels = (0..size).map(|i| u8::from(i >= n_source)).collect();
    Batch {
        frames,
        class_labels,
        domain_labels,
    }
}

/// Feature-extractor gradient of `L_y - lambda * L_d` against finite
/// differences of that objective; head gradients against their own loss.
fn check_composite(rng: &mut ChaCha8Rng, worst: &mut Worst) -> Result<()> {
    let arch = tiny_arch();
    let mut model = DannModel::new(arch.clone(), rng)?;
    // random biases keep ReLUs in a mixed regime
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _, _)| n).collect();
    for n in names.iter().filter(|n| n.ends_with("bias")) {
        let shape = model.param(n).unwrap().shape().to_vec();
        model.set_param(n, random_tensor(&shape, rng).scale(0.1))?;
    }
    let lambda = rng.random_range(0.2..1.0);
    model.set_lambda(lambda)?;
    let batch = random_batch(&arch, 6, rng);
    let targets = batch.domain_labels.clone();

    compute_gradients(&mut model, &batch, Some(&targets))?;
    let analytic: Vec<(String, ParamGroup, Tensor)> = names
        .iter()
        .map(|n| {
            let group = model.named_params().into_iter().find(|(m, _, _)| m == n).unwrap().1;
            (n.clone(), group, model.grad(n).unwrap().clone())
        })
        .collect();

    for (name, group, grad) in &analytic {
        for i in 0..grad.len() {
            let objective = |m: &mut DannModel, delta: f64| -> Result<f64> {
                let orig = m.param(name).unwrap().data()[i];
                m.param_mut(name).unwrap().data_mut()[i] = orig + delta;
                let (ly, ld) = evaluate_losses(m, &batch, Some(&targets))?;
                m.param_mut(name).unwrap().data_mut()[i] = orig;
                let ld = ld.expect("domain targets given");
                Ok(match group {
                    ParamGroup::Features => ly - lambda * ld,
                    ParamGroup::Label => ly,
                    ParamGroup::Domain => ld,
                })
            };
            let lp = objective(&mut model, EPS)?;
            let lm = objective(&mut model, -EPS)?;
            worst.add(grad.data()[i], (lp - lm) / (2.0 * EPS));
        }
    }
    Ok(())
}

type CheckFn = fn(&mut ChaCha8Rng, Option<Fault>, &mut Worst) -> Result<()>;

/// Runs every check over `seeds` consecutive seeds starting at `seed`.
pub fn run_suite(seed: u64, seeds: usize, fault: Option<Fault>) -> Result<GradcheckReport> {
    let checks: [(&'static str, CheckFn); 7] = [
        ("conv1d", check_conv),
        ("avgpool1d", |r, _, w| check_pool(r, w)),
        ("relu", |r, _, w| check_relu(r, w)),
        ("dense", |r, _, w| check_dense(r, w)),
        ("softmax_ce", |r, _, w| check_softmax_ce(r, w)),
        ("grl", |r, _, w| check_grl(r, w)),
        ("composite", |r, _, w| check_composite(r, w)),
    ];
    let mut results = Vec::with_capacity(checks.len());
    for (stream, (name, check)) in checks.iter().enumerate() {
        let mut worst = Worst::default();
        for s in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
            rng.set_stream(stream as u64);
            check(&mut rng, fault, &mut worst)?;
        }
        results.push(CheckResult {
            name,
            worst_error: worst.err,
            comparisons: worst.count,
            seeds,
        });
    }
    Ok(GradcheckReport { results })
}
