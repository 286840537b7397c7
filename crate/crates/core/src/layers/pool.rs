use super::{check_same_shape, Layer, LayerState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-overlapping average pooling along the last axis of `[B, C, T]`.
/// Trailing samples that do not fill a window are dropped.
#[derive(Debug, Clone)]
pub struct AvgPool1d {
    state: LayerState,
    pool: usize,
    input_shape: Option<[usize; 3]>,
}

impl AvgPool1d {
    pub fn new(pool: usize) -> Result<Self> {
        if pool == 0 {
            return Err(Error::arg("pool size must be >= 1"));
        }
        Ok(AvgPool1d {
            state: LayerState::default(),
            pool,
            input_shape: None,
        })
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        if self.pool > len {
            return Err(Error::dim(format!(
                "pool size {} exceeds input length {len}",
                self.pool
            )));
        }
        Ok(len / self.pool)
    }
}

fn dims(input: &Tensor) -> Result<(usize, usize, usize)> {
    match *input.shape() {
        [b, c, t] => Ok((b, c, t)),
        ref s => Err(Error::dim(format!("avgpool1d expects [B, C, T], got {s:?}"))),
    }
}

impl Layer for AvgPool1d {
    fn kind(&self) -> &'static str {
        "avgpool1d"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (b, c, t) = dims(input)?;
        let out_len = self.output_len(t)?;
        let inv = 1.0 / self.pool as f64;
        let x = input.data();
        let mut out = Vec::with_capacity(b * c * out_len);
        for row in x.chunks_exact(t) {
            out.extend(
                row.chunks_exact(self.pool)
                    .take(out_len)
                    .map(|w| w.iter().sum::<f64>() * inv),
            );
        }
        self.input_shape = Some([b, c, t]);
        Tensor::new(&[b, c, out_len], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let [b, c, t] = self
            .input_shape
            .ok_or_else(|| Error::State("avgpool1d: backward called before forward".into()))?;
        let out_len = t / self.pool;
        check_same_shape("avgpool1d", &[b, c, out_len], grad_out)?;
        let inv = 1.0 / self.pool as f64;
        let mut dx = vec![0.0; b * c * t];
        for (drow, grow) in dx.chunks_exact_mut(t).zip(grad_out.data().chunks_exact(out_len)) {
            for (m, &g) in grow.iter().enumerate() {
                drow[m * self.pool..(m + 1) * self.pool].fill(g * inv);
            }
        }
        Tensor::new(&[b, c, t], dx)
    }

    fn state(&self) -> &LayerState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut LayerState {
        &mut self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool_row(x: &[f64], pool: usize) -> Vec<f64> {
        let mut p = AvgPool1d::new(pool).unwrap();
        p.forward(&Tensor::new(&[1, 1, x.len()], x.to_vec()).unwrap())
            .unwrap()
            .into_data()
    }

    #[test]
    fn pairs_are_averaged() {
        assert_eq!(pool_row(&[1.0, 3.0, 5.0, 7.0], 2), vec![2.0, 6.0]);
    }

    #[test]
    fn pool_one_is_identity() {
        let x = [0.3, -1.2, 4.0];
        assert_eq!(pool_row(&x, 1), x.to_vec());
    }

    #[test]
    fn remainder_is_dropped() {
        assert_eq!(pool_row(&[1.0, 2.0, 3.0], 2), vec![1.5]);
    }

    #[test]
    fn oversized_pool_is_dimension_error() {
        let mut p = AvgPool1d::new(4).unwrap();
        assert!(matches!(
            p.forward(&Tensor::zeros(&[1, 1, 3])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn backward_spreads_uniformly_and_zeroes_remainder() {
        let mut p = AvgPool1d::new(2).unwrap();
        p.forward(&Tensor::zeros(&[1, 1, 5])).unwrap();
        let dx = p
            .backward(&Tensor::new(&[1, 1, 2], vec![1.0, -4.0]).unwrap())
            .unwrap();
        assert_eq!(dx.data(), &[0.5, 0.5, -2.0, -2.0, 0.0]);
    }

    #[test]
    fn backward_then_forward_preserves_constant() {
        let mut p = AvgPool1d::new(3).unwrap();
        p.forward(&Tensor::zeros(&[2, 2, 9])).unwrap();
        let spread = p.backward(&Tensor::full(&[2, 2, 3], 1.5)).unwrap();
        // Each upstream value c becomes c/pool per position; re-pooling and
        // rescaling by pool recovers c.
        let back = p.forward(&spread).unwrap().scale(3.0);
        assert!(back.data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }
}
