//! Differentiable layer primitives.
//!
//! Each layer caches whatever its backward rule needs during `forward` and
//! overwrites its parameter gradients on every `backward`.

mod conv;
mod dense;
mod grl;
mod loss;
mod pool;
mod relu;

use std::collections::BTreeMap;

pub use conv::Conv1d;
pub use dense::Dense;
pub use grl::GradientReversal;
pub use loss::softmax_cross_entropy;
pub use pool::AvgPool1d;
pub use relu::Relu;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters, their gradients and the forward cache of one layer.
#[derive(Debug, Clone, Default)]
pub struct LayerState {
    pub params: BTreeMap<String, Tensor>,
    pub param_grads: BTreeMap<String, Tensor>,
    pub cached_input: Option<Tensor>,
}

impl LayerState {
    pub fn with_params(params: impl IntoIterator<Item = (&'static str, Tensor)>) -> Self {
        let params: BTreeMap<String, Tensor> =
            params.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let param_grads = params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros_like(v)))
            .collect();
        LayerState {
            params,
            param_grads,
            cached_input: None,
        }
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.param_grads[name]
    }

    pub(crate) fn take_cache(&self, layer: &str) -> Result<&Tensor> {
        self.cached_input
            .as_ref()
            .ok_or_else(|| Error::State(format!("{layer}: backward called before forward")))
    }

    pub fn zero_grads(&mut self) {
        for g in self.param_grads.values_mut() {
            g.data_mut().fill(0.0);
        }
    }
}

pub trait Layer {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;

    /// Returns the gradient with respect to the last forward input and fills
    /// `state().param_grads`.
    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor>;

    fn state(&self) -> &LayerState;

    fn state_mut(&mut self) -> &mut LayerState;
}

/// Closed set of layers a model is assembled from.
#[derive(Debug, Clone)]
pub enum AnyLayer {
    Conv1d(Conv1d),
    AvgPool1d(AvgPool1d),
    Relu(Relu),
    Dense(Dense),
}

macro_rules! dispatch {
    ($self:ident, $l:ident => $e:expr) => {
        match $self {
            AnyLayer::Conv1d($l) => $e,
            AnyLayer::AvgPool1d($l) => $e,
            AnyLayer::Relu($l) => $e,
            AnyLayer::Dense($l) => $e,
        }
    };
}

impl Layer for AnyLayer {
    fn kind(&self) -> &'static str {
        dispatch!(self, l => l.kind())
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.forward(input))
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        dispatch!(self, l => l.backward(grad_out))
    }

    fn state(&self) -> &LayerState {
        dispatch!(self, l => l.state())
    }

    fn state_mut(&mut self) -> &mut LayerState {
        dispatch!(self, l => l.state_mut())
    }
}

pub(crate) fn check_same_shape(what: &str, expected: &[usize], got: &Tensor) -> Result<()> {
    if expected != got.shape() {
        return Err(Error::dim(format!(
            "{what}: gradient shape {:?} does not match forward output {:?}",
            got.shape(),
            expected
        )));
    }
    Ok(())
}
