//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. `preset` (`desk` or `full`)
//! is applied first wherever it appears; every other key overrides a field
//! of the preset. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::{CorpusSpec, FrameConfig};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, ConvSpec};
use crate::optim::{Mode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// `input_len` is recomputed from the corpus sample rate and framing.
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub corpus: CorpusSpec,
    pub framing: FrameConfig,
    pub mode: Mode,
    pub log_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// 1.6 kHz corpus, small network; a full run takes seconds.
    pub fn desk() -> Self {
        let corpus = CorpusSpec {
            sample_rate: 1600,
            base_f0: 60.0,
            ..CorpusSpec::default()
        };
        let framing = FrameConfig::default();
        ExperimentConfig {
            preset: Preset::Desk,
            arch: ArchConfig::desk(framing.frame_len(corpus.sample_rate), corpus.num_classes),
            train: TrainConfig {
                total_steps: 1000,
                batch_size: 32,
                ..TrainConfig::default()
            },
            corpus,
            framing,
            mode: Mode::Dann,
            log_every: 10,
        }
    }

    /// 16 kHz, 310 ms frames and the full-size network.
    pub fn full() -> Self {
        let corpus = CorpusSpec::default();
        ExperimentConfig {
            preset: Preset::Full,
            arch: ArchConfig::full(corpus.num_classes),
            train: TrainConfig::default(),
            corpus,
            framing: FrameConfig::default(),
            mode: Mode::Dann,
            log_every: 10,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.corpus.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.framing.validate(self.corpus.sample_rate)?;
        self.train.validate()?;
        let mut arch = self.arch.clone();
        arch.input_len = self.framing.frame_len(self.corpus.sample_rate);
        arch.validate()?;
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            entries.push((lineno + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let preset = match entries.iter().find(|(_, k, _)| k == "preset") {
            Some((_, _, v)) => v.parse()?,
            None => Preset::Desk,
        };
        let mut cfg = match preset {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        };
        for (lineno, key, value) in &entries {
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        fn conv(convs: &mut [ConvSpec], i: usize) -> &mut ConvSpec {
            &mut convs[i]
        }
        let arch = &mut self.arch;
        let c = &mut self.corpus;
        let t = &mut self.train;
        match key {
            "preset" => {}
            "seed" => {
                let s = num(key, value)?;
                c.seed = s;
                t.seed = s;
            }
            "mode" => self.mode = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "sample_rate" => c.sample_rate = num(key, value)?,
            "num_classes" => {
                c.num_classes = num(key, value)?;
                arch.num_classes = c.num_classes;
            }
            "base_f0" => c.base_f0 = num(key, value)?,
            "f0_jitter" => c.f0_jitter = num(key, value)?,
            "formant_jitter" => c.formant_jitter = num(key, value)?,
            "formant_bandwidth" => c.formant_bandwidth = num(key, value)?,
            "f0_scale" => c.shift.f0_scale = num(key, value)?,
            "tilt" => c.shift.tilt = num(key, value)?,
            "noise" => c.shift.noise = num(key, value)?,
            "utterance_ms" => c.utterance_ms = num(key, value)?,
            "source_train" => c.counts.source_train = num(key, value)?,
            "target_train" => c.counts.target_train = num(key, value)?,
            "source_eval" => c.counts.source_eval = num(key, value)?,
            "target_eval" => c.counts.target_eval = num(key, value)?,
            "window_ms" => self.framing.window_ms = num(key, value)?,
            "shift_ms" => self.framing.shift_ms = num(key, value)?,
            "context_frames" => self.framing.context_frames = num(key, value)?,
            "conv1_width" => conv(&mut arch.convs, 0).width = num(key, value)?,
            "conv1_maps" => conv(&mut arch.convs, 0).maps = num(key, value)?,
            "conv1_stride" => conv(&mut arch.convs, 0).stride = num(key, value)?,
            "conv2_width" => conv(&mut arch.convs, 1).width = num(key, value)?,
            "conv2_maps" => conv(&mut arch.convs, 1).maps = num(key, value)?,
            "conv2_stride" => conv(&mut arch.convs, 1).stride = num(key, value)?,
            "pool" => arch.pool = num(key, value)?,
            "head_depth" => arch.head_depth = num(key, value)?,
            "head_width" => arch.head_width = num(key, value)?,
            "mu0" => t.mu0 = num(key, value)?,
            "alpha" => t.alpha = num(key, value)?,
            "beta" => t.beta = num(key, value)?,
            "gamma" => t.gamma = num(key, value)?,
            "momentum" => t.momentum = num(key, value)?,
            "flip_prob" => t.flip_prob = num(key, value)?,
            "total_steps" => t.total_steps = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Serialises every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let c = &self.corpus;
        let t = &self.train;
        let a = &self.arch;
        let f = &self.framing;
        let mut s = String::new();
        let preset = match self.preset {
            Preset::Desk => "desk",
            Preset::Full => "full",
        };
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("preset", &preset);
        kv("seed", &c.seed);
        kv("mode", &self.mode);
        kv("sample_rate", &c.sample_rate);
        kv("num_classes", &c.num_classes);
        kv("base_f0", &c.base_f0);
        kv("f0_jitter", &c.f0_jitter);
        kv("formant_jitter", &c.formant_jitter);
        kv("formant_bandwidth", &c.formant_bandwidth);
        kv("f0_scale", &c.shift.f0_scale);
        kv("tilt", &c.shift.tilt);
        kv("noise", &c.shift.noise);
        kv("utterance_ms", &c.utterance_ms);
        kv("source_train", &c.counts.source_train);
        kv("target_train", &c.counts.target_train);
        kv("source_eval", &c.counts.source_eval);
        kv("target_eval", &c.counts.target_eval);
        kv("window_ms", &f.window_ms);
        kv("shift_ms", &f.shift_ms);
        kv("context_frames", &f.context_frames);
        for (i, cv) in a.convs.iter().enumerate().take(2) {
            kv(&format!("conv{}_width", i + 1), &cv.width);
            kv(&format!("conv{}_maps", i + 1), &cv.maps);
            kv(&format!("conv{}_stride", i + 1), &cv.stride);
        }
        kv("pool", &a.pool);
        kv("head_depth", &a.head_depth);
        kv("head_width", &a.head_width);
        kv("mu0", &t.mu0);
        kv("alpha", &t.alpha);
        kv("beta", &t.beta);
        kv("gamma", &t.gamma);
        kv("momentum", &t.momentum);
        kv("flip_prob", &t.flip_prob);
        kv("total_steps", &t.total_steps);
        kv("batch_size", &t.batch_size);
        kv("log_every", &self.log_every);
        s
    }
}
