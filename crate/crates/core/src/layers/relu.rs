use super::{check_same_shape, Layer, LayerState};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    state: LayerState,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.state.cached_input = Some(input.clone());
        Ok(input.map(|x| x.max(0.0)))
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.state.take_cache("relu")?;
        check_same_shape("relu", input.shape(), grad_out)?;
        let data = input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        Tensor::new(input.shape(), data)
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

    #[test]
    fn clamps_negatives() {
        let mut r = Relu::new();
        let out = r.forward(&Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn positive_input_is_identity() {
        let x = Tensor::new(&[2, 2], vec![0.1, 3.0, 2.5, 7.0]).unwrap();
        let mut r = Relu::new();
        assert_eq!(r.forward(&x).unwrap(), x);
        assert_eq!(r.backward(&x).unwrap(), x);
    }

    #[test]
    fn backward_masks() {
        let mut r = Relu::new();
        r.forward(&Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
        let g = r.backward(&Tensor::new(&[3], vec![5.0, 5.0, 5.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }
}
