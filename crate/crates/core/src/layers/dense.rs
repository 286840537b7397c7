use rand::Rng;

use super::{check_same_shape, Layer, LayerState};
use crate::error::{Error, Result};
use crate::tensor::{glorot_init, matmul, Tensor};

/// Fully connected layer, `out = input * W + b` with `W: [D_in, D_out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    state: LayerState,
    in_features: usize,
    out_features: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Result<Self> {
        let w = glorot_init(in_features, out_features, &[in_features, out_features], rng)?;
        Self::from_params(w, Tensor::zeros(&[out_features]))
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        let &[in_features, out_features] = weight.shape() else {
            return Err(Error::dim(format!(
                "dense weight must be 2-D, got {:?}",
                weight.shape()
            )));
        };
        if bias.shape() != [out_features] {
            return Err(Error::dim(format!(
                "dense bias must be [{out_features}], got {:?}",
                bias.shape()
            )));
        }
        Ok(Dense {
            state: LayerState::with_params([("weight", weight), ("bias", bias)]),
            in_features,
            out_features,
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }
}

impl Layer for Dense {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        match *input.shape() {
            [_, d] if d == self.in_features => {}
            ref s => {
                return Err(Error::dim(format!(
                    "dense expects [B, {}], got {s:?}",
                    self.in_features
                )))
            }
        }
        let mut out = matmul(input, self.state.param("weight"))?;
        let bias = self.state.param("bias").data();
        for row in out.data_mut().chunks_exact_mut(self.out_features) {
            for (o, b) in row.iter_mut().zip(bias) {
                *o += b;
            }
        }
        self.state.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.state.take_cache("dense")?;
        check_same_shape("dense", &[input.shape()[0], self.out_features], grad_out)?;
        let dw = matmul(&input.transpose()?, grad_out)?;
        let mut db = vec![0.0; self.out_features];
        for row in grad_out.data().chunks_exact(self.out_features) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        let dx = matmul(grad_out, &self.state.param("weight").transpose()?)?;
        self.state.param_grads.insert("weight".into(), dw);
        self.state
            .param_grads
            .insert("bias".into(), Tensor::new(&[self.out_features], db)?);
        Ok(dx)
    }

    fn state(&self) -> &LayerState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut LayerState {
        &mut self.state
    }
}
