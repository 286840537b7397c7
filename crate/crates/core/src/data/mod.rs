//! Frame extraction, normalisation, the synthetic two-domain corpus and
//! mini-batch streaming.

mod batches;
mod corpus;
mod io;

pub use batches::{make_batches, Batch, BatchStream};
pub use corpus::{generate_corpus, CorpusSpec, CorpusSplits, DomainShift, SplitCounts};
pub use io::{read_corpus, read_stats, write_corpus, write_stats, CORPUS_VERSION};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class-label sentinel for unlabeled (target-domain) data.
pub const ABSENT_LABEL: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Source = 0,
    Target = 1,
}

impl Domain {
    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<Domain> {
        match label {
            0 => Some(Domain::Source),
            1 => Some(Domain::Target),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub class_label: Option<usize>,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sample_rate: u32,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.domain == domain)
    }
}

/// Rectangular windowing with a centred context of neighbouring frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameConfig {
    pub window_ms: u32,
    pub shift_ms: u32,
    pub context_frames: u32,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            window_ms: 10,
            shift_ms: 10,
            context_frames: 31,
        }
    }
}

impl FrameConfig {
    fn samples(ms: u32, sample_rate: u32) -> usize {
        (ms as u64 * sample_rate as u64 / 1000) as usize
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        Self::samples(self.window_ms, sample_rate)
    }

    pub fn shift_samples(&self, sample_rate: u32) -> usize {
        Self::samples(self.shift_ms, sample_rate)
    }

    /// Samples per context-stacked frame.
    pub fn frame_len(&self, sample_rate: u32) -> usize {
        self.context_frames as usize * self.window_samples(sample_rate)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.window_samples(sample_rate) == 0 || self.shift_samples(sample_rate) == 0 {
            return Err(Error::Config(format!(
                "window {} ms / shift {} ms is below one sample at {sample_rate} Hz",
                self.window_ms, self.shift_ms
            )));
        }
        if self.context_frames == 0 {
            return Err(Error::Config("context_frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cuts a signal into context-stacked frames of `frame_len` samples.
///
/// The signal is split into rectangular windows every `shift_ms`; each output
/// concatenates `context_frames` consecutive windows (the centre window plus
/// its neighbours on both sides). Signals too short for one output give an
/// empty list.
pub fn frame_signal(samples: &[f64], sample_rate: u32, cfg: &FrameConfig) -> Vec<Tensor> {
    let win = cfg.window_samples(sample_rate);
    let shift = cfg.shift_samples(sample_rate);
    let ctx = cfg.context_frames as usize;
    if win == 0 || shift == 0 || ctx == 0 || samples.len() < win {
        return Vec::new();
    }
    let n_windows = (samples.len() - win) / shift + 1;
    if n_windows < ctx {
        return Vec::new();
    }
    (0..=n_windows - ctx)
        .map(|first| {
            let mut frame = Vec::with_capacity(ctx * win);
            for w in first..first + ctx {
                frame.extend_from_slice(&samples[w * shift..w * shift + win]);
            }
            Tensor::new(&[1, ctx * win], frame).expect("frame length is positive")
        })
        .collect()
}

/// Per-dimension mean and standard deviation of a frame matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const NORM_EPS: f64 = 1e-8;

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Population statistics over the rows of an `[N, T]` matrix.
    pub fn estimate(frames: &Tensor) -> Result<NormStats> {
        let (n, t) = matrix_dims(frames)?;
        let data = frames.data();
        let mut mean = vec![0.0; t];
        let mut std = vec![0.0; t];
        for j in 0..t {
            let col = || (0..n).map(|i| data[i * t + j]);
            let first = data[j];
            let m = if col().all(|v| v == first) {
                first
            } else {
                let m0 = col().sum::<f64>() / n as f64;
                // second pass removes most of the first pass's rounding error
                m0 + col().map(|v| v - m0).sum::<f64>() / n as f64
            };
            mean[j] = m;
            std[j] = (col().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        }
        Ok(NormStats { mean, std })
    }

    pub fn apply(&self, frames: &Tensor) -> Result<Tensor> {
        let (_, t) = matrix_dims(frames)?;
        if t != self.dim() {
            return Err(Error::dim(format!(
                "normalisation stats cover {} dims, frames have {t}",
                self.dim()
            )));
        }
        let mut out = frames.clone();
        for row in out.data_mut().chunks_exact_mut(t) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s.max(NORM_EPS);
            }
        }
        Ok(out)
    }
}

fn matrix_dims(frames: &Tensor) -> Result<(usize, usize)> {
    match *frames.shape() {
        [n, t] => Ok((n, t)),
        [n, 1, t] => Ok((n, t)),
        ref s => Err(Error::dim(format!("expected [N, T] frames, got {s:?}"))),
    }
}

/// Mean/variance normalisation. With `stats == None` the statistics are
/// estimated from `frames` and returned for reuse.
pub fn normalize(frames: &Tensor, stats: Option<&NormStats>) -> Result<(Tensor, NormStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::estimate(frames)?,
    };
    Ok((stats.apply(frames)?, stats))
}

/// Framed utterances as a dense `[N, T]` matrix with per-row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub frame_len: usize,
    pub frames: Vec<f64>,
    pub class_labels: Vec<i32>,
    pub domain_labels: Vec<u8>,
}

impl FrameSet {
    pub fn empty(frame_len: usize) -> Self {
        FrameSet {
            frame_len,
            frames: Vec::new(),
            class_labels: Vec::new(),
            domain_labels: Vec::new(),
        }
    }

    pub fn from_utterances<'a>(
        utterances: impl IntoIterator<Item = &'a Utterance>,
        sample_rate: u32,
        cfg: &FrameConfig,
    ) -> Self {
        let mut set = FrameSet::empty(cfg.frame_len(sample_rate));
        for u in utterances {
            let label = u.class_label.map_or(ABSENT_LABEL, |c| c as i32);
            for frame in frame_signal(&u.samples, sample_rate, cfg) {
                set.frames.extend_from_slice(frame.data());
                set.class_labels.push(label);
                set.domain_labels.push(u.domain.label());
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.class_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.frames[i * self.frame_len..(i + 1) * self.frame_len]
    }

    /// `[N, T]` view; fails on an empty set.
    pub fn matrix(&self) -> Result<Tensor> {
        Tensor::new(&[self.len(), self.frame_len], self.frames.clone())
    }

    pub fn normalize_with(&mut self, stats: &NormStats) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        self.frames = stats.apply(&self.matrix()?)?.into_data();
        Ok(())
    }

    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> FrameSet {
        let mut out = FrameSet::empty(self.frame_len);
        for i in (0..self.len()).filter(|&i| keep(i)) {
            out.frames.extend_from_slice(self.row(i));
            out.class_labels.push(self.class_labels[i]);
            out.domain_labels.push(self.domain_labels[i]);
        }
        out
    }

    pub fn domain(&self, domain: Domain) -> FrameSet {
        self.filter(|i| self.domain_labels[i] == domain.label())
    }

    /// Rows `indices` as a `[B, 1, T]` tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.frame_len);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(&[indices.len(), 1, self.frame_len], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn default_framing_at_16k_is_310ms() {
        let cfg = FrameConfig::default();
        assert_eq!(cfg.frame_len(16_000), 4960);
        let frames = frame_signal(&ramp(4960), 16_000, &cfg);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].shape(), &[1, 4960]);
    }

    #[test]
    fn small_rate_small_context() {
        let cfg = FrameConfig {
            window_ms: 10,
            shift_ms: 10,
            context_frames: 3,
        };
        assert_eq!(cfg.frame_len(1000), 30);
        let frames = frame_signal(&ramp(50), 1000, &cfg);
        // five 10-sample windows, three per output
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[1].data(), &ramp(40)[10..40]);
    }

    #[test]
    fn too_short_signal_gives_no_frames() {
        assert!(frame_signal(&ramp(4959), 16_000, &FrameConfig::default()).is_empty());
        assert!(frame_signal(&[], 16_000, &FrameConfig::default()).is_empty());
    }

    #[test]
    fn normalize_standardises_columns() {
        let frames = Tensor::from_rows(&[
            vec![1.0, 10.0, 0.1],
            vec![2.0, -3.0, 0.1],
            vec![4.0, 7.5, 0.1],
            vec![-0.5, 2.0, 0.1],
        ])
        .unwrap();
        let (out, stats) = normalize(&frames, None).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| out.data()[i * 3 + j]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
        // constant column maps to zeros
        assert!((0..4).all(|i| out.data()[i * 3 + 2] == 0.0));
        let (again, _) = normalize(&frames, Some(&stats)).unwrap();
        assert_eq!(again, out);
    }
}
