//! Synthetic two-domain corpus.
//!
//! Every utterance is a harmonic series at a fundamental frequency F0 whose
//! harmonic amplitudes follow a class-specific formant envelope. The target
//! domain rescales F0, tilts the spectrum and adds white noise; none of
//! these change the class.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Corpus, Domain, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainShift {
    /// Multiplier applied to the target-domain fundamental.
    pub f0_scale: f64,
    /// Exponential high-frequency attenuation, `exp(-tilt * f / nyquist)`.
    pub tilt: f64,
    /// Standard deviation of additive white noise (signals are unit RMS).
    pub noise: f64,
}

impl DomainShift {
    pub fn identity() -> Self {
        DomainShift {
            f0_scale: 1.0,
            tilt: 0.0,
            noise: 0.0,
        }
    }
}

/// Utterance counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub source_train: usize,
    pub target_train: usize,
    pub source_eval: usize,
    pub target_eval: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub sample_rate: u32,
    pub num_classes: usize,
    /// Source-domain fundamental in Hz.
    pub base_f0: f64,
    /// Relative per-utterance F0 spread, uniform in `±f0_jitter`.
    pub f0_jitter: f64,
    /// Relative per-utterance formant spread.
    pub formant_jitter: f64,
    /// Formant bandwidth as a fraction of Nyquist.
    pub formant_bandwidth: f64,
    pub shift: DomainShift,
    pub utterance_ms: u32,
    pub counts: SplitCounts,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            sample_rate: 16_000,
            num_classes: 4,
            base_f0: 120.0,
            f0_jitter: 0.1,
            formant_jitter: 0.03,
            formant_bandwidth: 0.06,
            shift: DomainShift {
                f0_scale: 1.6,
                tilt: 3.0,
                noise: 0.3,
            },
            utterance_ms: 400,
            counts: SplitCounts {
                source_train: 200,
                target_train: 200,
                source_eval: 100,
                target_eval: 100,
            },
            seed: 0,
        }
    }
}

/// Train and eval corpora. Target-domain training utterances carry no class
/// labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub train: Corpus,
    pub eval: Corpus,
}

#[derive(Debug, Clone, Copy)]
enum Split {
    SourceTrain = 0,
    TargetTrain = 1,
    SourceEval = 2,
    TargetEval = 3,
}

impl CorpusSpec {
    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    /// Formant frequencies (Hz) of each class template.
    pub fn templates(&self) -> Vec<[f64; 2]> {
        let nyq = self.nyquist();
        let k = self.num_classes.max(2);
        (0..self.num_classes)
            .map(|c| {
                let f1 = nyq * (0.10 + 0.35 * c as f64 / (k - 1) as f64);
                [f1, f1 + 0.3 * nyq]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::arg(format!(
                "corpus needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.sample_rate == 0 || self.utterance_ms == 0 {
            return Err(Error::arg("sample_rate and utterance_ms must be positive"));
        }
        let finite = [
            self.base_f0,
            self.f0_jitter,
            self.formant_jitter,
            self.formant_bandwidth,
            self.shift.f0_scale,
            self.shift.tilt,
            self.shift.noise,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("corpus parameters must be finite"));
        }
        if self.base_f0 <= 0.0 || self.shift.f0_scale <= 0.0 || self.formant_bandwidth <= 0.0 {
            return Err(Error::arg("base_f0, f0_scale and formant_bandwidth must be positive"));
        }
        if !(0.0..1.0).contains(&self.f0_jitter) || self.shift.noise < 0.0 {
            return Err(Error::arg("f0_jitter must lie in [0, 1) and noise must be >= 0"));
        }
        Ok(())
    }

    fn samples_per_utterance(&self) -> usize {
        (self.utterance_ms as u64 * self.sample_rate as u64 / 1000) as usize
    }

    fn synthesize(&self, class: usize, domain: Domain, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let nyq = self.nyquist();
        let sr = self.sample_rate as f64;
        let shifted = domain == Domain::Target;
        let mut f0 = self.base_f0 * (1.0 + self.f0_jitter * rng.random_range(-1.0..=1.0));
        if shifted {
            f0 *= self.shift.f0_scale;
        }
        let formants = self.templates()[class]
            .map(|f| f * (1.0 + self.formant_jitter * rng.random_range(-1.0..=1.0)));
        let bw = self.formant_bandwidth * nyq;

        let mut partials = Vec::new();
        let mut h = 1.0;
        while h * f0 < 0.95 * nyq {
            let freq = h * f0;
            let mut amp: f64 = formants
                .iter()
                .map(|&f| (-0.5 * ((freq - f) / bw).powi(2)).exp())
                .sum();
            if shifted {
                amp *= (-self.shift.tilt * freq / nyq).exp();
            }
            let phase = rng.random_range(0.0..2.0 * PI);
            partials.push((2.0 * PI * freq / sr, amp, phase));
            h += 1.0;
        }

        let n = self.samples_per_utterance();
        let mut samples: Vec<f64> = (0..n)
            .map(|i| {
                partials
                    .iter()
                    .map(|&(w, a, p)| a * (w * i as f64 + p).sin())
                    .sum()
            })
            .collect();
        let rms = (samples.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
        if rms > 0.0 {
            samples.iter_mut().for_each(|x| *x /= rms);
        }
        if shifted && self.shift.noise > 0.0 {
            let noise = Normal::new(0.0, self.shift.noise).expect("validated noise level");
            samples.iter_mut().for_each(|x| *x += noise.sample(rng));
        }
        // stored as f32 on disk; keep the in-memory corpus identical
        samples.iter().map(|&x| x as f32 as f64).collect()
    }

    fn split(&self, split: Split, count: usize) -> Vec<Utterance> {
        let (domain, labeled) = match split {
            Split::SourceTrain | Split::SourceEval => (Domain::Source, true),
            Split::TargetTrain => (Domain::Target, false),
            Split::TargetEval => (Domain::Target, true),
        };
        (0..count)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(((split as u64) << 40) | i as u64);
                let class = i % self.num_classes;
                Utterance {
                    samples: self.synthesize(class, domain, &mut rng),
                    class_label: labeled.then_some(class),
                    domain,
                }
            })
            .collect()
    }
}

/// Generates all four splits. Each utterance draws from its own RNG stream
/// keyed by split and index, so splits never share randomness.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<CorpusSplits> {
    spec.validate()?;
    let c = spec.counts;
    let mut train = spec.split(Split::SourceTrain, c.source_train);
    train.extend(spec.split(Split::TargetTrain, c.target_train));
    let mut eval = spec.split(Split::SourceEval, c.source_eval);
    eval.extend(spec.split(Split::TargetEval, c.target_eval));
    Ok(CorpusSplits {
        train: Corpus {
            sample_rate: spec.sample_rate,
            utterances: train,
        },
        eval: Corpus {
            sample_rate: spec.sample_rate,
            utterances: eval,
        },
    })
}
