use super::{Layer, LayerState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identity on the way forward; multiplies incoming gradients by `-lambda`
/// on the way back.
#[derive(Debug, Clone, Default)]
pub struct GradientReversal {
    state: LayerState,
    lambda: f64,
}

impl GradientReversal {
    pub fn new(lambda: f64) -> Result<Self> {
        let mut grl = Self::default();
        grl.set_lambda(lambda)?;
        Ok(grl)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::arg(format!("GRL lambda must be finite and >= 0, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(())
    }
}

impl Layer for GradientReversal {
    fn kind(&self) -> &'static str {
        "grl"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        Ok(input.clone())
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        Ok(grad_out.scale(-self.lambda))
    }

    fn state(&self) -> &LayerState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut LayerState {
        &mut self.state
    }
}
