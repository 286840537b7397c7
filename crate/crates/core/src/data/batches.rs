use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FrameSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One mini-batch. `class_labels[i]` is `ABSENT_LABEL` exactly when
/// `domain_labels[i] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub frames: Tensor,
    pub class_labels: Vec<i32>,
    pub domain_labels: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.domain_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain_labels.is_empty()
    }

    pub fn source_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.domain_labels[i] == 0).collect()
    }
}

/// Epoch-wise shuffled cursor over one frame set.
#[derive(Debug)]
struct Sampler<'a> {
    set: &'a FrameSet,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Sampler<'a> {
    fn new(set: &'a FrameSet, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(rng);
        Sampler { set, order, pos: 0 }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Endless batch stream. With a target set each batch holds `ceil(B/2)`
/// source and `floor(B/2)` target frames, source rows first; without one it
/// is source only.
#[derive(Debug)]
pub struct BatchStream<'a> {
    source: Sampler<'a>,
    target: Option<Sampler<'a>>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

pub fn make_batches<'a>(
    source: &'a FrameSet,
    target: Option<&'a FrameSet>,
    batch_size: usize,
    seed: u64,
) -> Result<BatchStream<'a>> {
    if source.is_empty() {
        return Err(Error::arg("source split is empty"));
    }
    if target.is_some_and(FrameSet::is_empty) {
        return Err(Error::arg("target split is empty"));
    }
    if batch_size == 0 {
        return Err(Error::arg("batch size must be >= 1"));
    }
    if let Some(t) = target {
        if t.frame_len != source.frame_len {
            return Err(Error::dim(format!(
                "source frames have {} samples, target frames {}",
                source.frame_len, t.frame_len
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = Sampler::new(source, &mut rng);
    let target = target.map(|t| Sampler::new(t, &mut rng));
    Ok(BatchStream {
        source,
        target,
        batch_size,
        rng,
    })
}

impl BatchStream<'_> {
    fn take(sampler: &mut Sampler<'_>, n: usize, rng: &mut ChaCha8Rng, batch: &mut Vec<f64>, classes: &mut Vec<i32>, domains: &mut Vec<u8>) {
        for _ in 0..n {
            let i = sampler.next(rng);
            batch.extend_from_slice(sampler.set.row(i));
            classes.push(sampler.set.class_labels[i]);
            domains.push(sampler.set.domain_labels[i]);
        }
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let b = self.batch_size;
        let n_source = if self.target.is_some() { b.div_ceil(2) } else { b };
        let t = self.source.set.frame_len;
        let mut data = Vec::with_capacity(b * t);
        let mut classes = Vec::with_capacity(b);
        let mut domains = Vec::with_capacity(b);
        Self::take(&mut self.source, n_source, &mut self.rng, &mut data, &mut classes, &mut domains);
        if let Some(target) = self.target.as_mut() {
            Self::take(target, b - n_source, &mut self.rng, &mut data, &mut classes, &mut domains);
        }
        let frames = Tensor::new(&[domains.len(), 1, t], data).expect("batch is non-empty");
        Some(Batch {
            frames,
            class_labels: classes,
            domain_labels: domains,
        })
    }
}
