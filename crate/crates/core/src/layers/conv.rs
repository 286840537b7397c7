use rand::Rng;

use super::{check_same_shape, Layer, LayerState};
use crate::error::{Error, Result};
use crate::tensor::{glorot_init, Tensor};

/// Valid (unpadded) strided 1-D convolution over `[B, C_in, T]` inputs.
///
/// `weight` is `[C_out, C_in, k]`, `bias` is `[C_out]`. No activation.
#[derive(Debug, Clone)]
pub struct Conv1d {
    state: LayerState,
    in_channels: usize,
    out_channels: usize,
    width: usize,
    stride: usize,
}

pub fn conv_output_len(len: usize, width: usize, stride: usize) -> Result<usize> {
    if stride == 0 || width == 0 {
        return Err(Error::arg("conv1d width and stride must be positive"));
    }
    if len < width {
        return Err(Error::dim(format!(
            "conv1d input length {len} is shorter than filter width {width}"
        )));
    }
    Ok((len - width) / stride + 1)
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        width: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::arg("conv1d stride must be >= 1"));
        }
        let weight = glorot_init(
            in_channels * width,
            out_channels * width,
            &[out_channels, in_channels, width],
            rng,
        )?;
        Self::from_params(weight, Tensor::zeros(&[out_channels]), stride)
    }

    pub fn from_params(weight: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        let &[out_channels, in_channels, width] = weight.shape() else {
            return Err(Error::dim(format!(
                "conv1d weight must be [C_out, C_in, k], got {:?}",
                weight.shape()
            )));
        };
        if bias.shape() != [out_channels] {
            return Err(Error::dim(format!(
                "conv1d bias must be [{out_channels}], got {:?}",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::arg("conv1d stride must be >= 1"));
        }
        Ok(Conv1d {
            state: LayerState::with_params([("weight", weight), ("bias", bias)]),
            in_channels,
            out_channels,
            width,
            stride,
        })
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        conv_output_len(len, self.width, self.stride)
    }

    fn dims(&self, input: &Tensor) -> Result<(usize, usize)> {
        match input.shape() {
            &[b, c, t] if c == self.in_channels => Ok((b, t)),
            s => Err(Error::dim(format!(
                "conv1d expects [B, {}, T], got {s:?}",
                self.in_channels
            ))),
        }
    }
}

impl Layer for Conv1d {
    fn kind(&self) -> &'static str {
        "conv1d"
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (batch, len) = self.dims(input)?;
        let out_len = self.output_len(len)?;
        let (cin, cout, k, s) = (self.in_channels, self.out_channels, self.width, self.stride);
        let w = self.state.param("weight").data();
        let bias = self.state.param("bias").data();
        let x = input.data();
        let mut out = vec![0.0; batch * cout * out_len];
        for b in 0..batch {
            for co in 0..cout {
                let row = &mut out[(b * cout + co) * out_len..(b * cout + co + 1) * out_len];
                row.fill(bias[co]);
                for ci in 0..cin {
                    let xin = &x[(b * cin + ci) * len..(b * cin + ci + 1) * len];
                    let kern = &w[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                    for (m, o) in row.iter_mut().enumerate() {
                        let window = &xin[m * s..m * s + k];
                        *o += kern.iter().zip(window).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        self.state.cached_input = Some(input.clone());
        Tensor::new(&[batch, cout, out_len], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.state.take_cache("conv1d")?;
        let (batch, len) = self.dims(input)?;
        let out_len = self.output_len(len)?;
        let (cin, cout, k, s) = (self.in_channels, self.out_channels, self.width, self.stride);
        check_same_shape("conv1d", &[batch, cout, out_len], grad_out)?;
        let w = self.state.param("weight").data();
        let x = input.data();
        let g = grad_out.data();
        let mut dx = vec![0.0; x.len()];
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; cout];
        for b in 0..batch {
            for co in 0..cout {
                let grow = &g[(b * cout + co) * out_len..(b * cout + co + 1) * out_len];
                db[co] += grow.iter().sum::<f64>();
                for ci in 0..cin {
                    let base = (b * cin + ci) * len;
                    let kbase = (co * cin + ci) * k;
                    for (m, &gv) in grow.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let start = base + m * s;
                        for j in 0..k {
                            dw[kbase + j] += gv * x[start + j];
                            dx[start + j] += gv * w[kbase + j];
                        }
                    }
                }
            }
        }
        let dx = Tensor::new(input.shape(), dx)?;
        let wshape = [cout, cin, k];
        self.state
            .param_grads
            .insert("weight".into(), Tensor::new(&wshape, dw)?);
        self.state
            .param_grads
            .insert("bias".into(), Tensor::new(&[cout], db)?);
        Ok(dx)
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

    /// Direct transcription of the convolution sum, one output at a time.
    fn reference_conv(x: &[f64], kernel: &[f64], stride: usize, bias: f64) -> Vec<f64> {
        let n = (x.len() - kernel.len()) / stride + 1;
        (0..n)
            .map(|m| {
                bias + (0..kernel.len())
                    .map(|j| kernel[j] * x[m * stride + j])
                    .sum::<f64>()
            })
            .collect()
    }

    fn single(kernel: &[f64], stride: usize) -> Conv1d {
        Conv1d::from_params(
            Tensor::new(&[1, 1, kernel.len()], kernel.to_vec()).unwrap(),
            Tensor::zeros(&[1]),
            stride,
        )
        .unwrap()
    }

    #[test]
    fn shift_kernel_matches_reference() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let expected = reference_conv(&x, &[1.0, 0.0], 1, 0.0);
        assert_eq!(expected, vec![1.0, 2.0, 3.0]);
        let mut conv = single(&[1.0, 0.0], 1);
        let out = conv.forward(&Tensor::new(&[1, 1, 4], x.to_vec()).unwrap()).unwrap();
        assert_eq!(out.data(), &expected[..]);
    }

    #[test]
    fn strided_matches_reference() {
        let x: Vec<f64> = (0..23).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let kernel = [0.5, -1.0, 0.25, 2.0];
        let mut conv = Conv1d::from_params(
            Tensor::new(&[1, 1, 4], kernel.to_vec()).unwrap(),
            Tensor::new(&[1], vec![0.3]).unwrap(),
            3,
        )
        .unwrap();
        let out = conv.forward(&Tensor::new(&[1, 1, 23], x.clone()).unwrap()).unwrap();
        let expected = reference_conv(&x, &kernel, 3, 0.3);
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_kernel_gives_zeros() {
        let mut conv = single(&[0.0; 3], 2);
        let out = conv
            .forward(&Tensor::new(&[1, 1, 9], (0..9).map(f64::from).collect()).unwrap())
            .unwrap();
        assert_eq!(out, Tensor::zeros(&[1, 1, 4]));
    }

    #[test]
    fn full_scale_output_length() {
        assert_eq!(conv_output_len(4960, 64, 31).unwrap(), 158);
    }

    #[test]
    fn too_short_input_is_dimension_error() {
        let mut conv = single(&[1.0; 5], 1);
        let err = conv.forward(&Tensor::zeros(&[1, 1, 4])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut conv = single(&[1.0], 1);
        assert!(matches!(
            conv.backward(&Tensor::zeros(&[1, 1, 3])),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut conv = single(&[0.4, -0.2], 1);
        let x = Tensor::new(&[1, 1, 5], vec![1.0, -2.0, 3.0, 0.5, 1.0]).unwrap();
        conv.forward(&x).unwrap();
        let dx = conv.backward(&Tensor::zeros(&[1, 1, 4])).unwrap();
        assert_eq!(dx, Tensor::zeros_like(&x));
        assert!(conv.state().param_grads.values().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn unit_kernel_passes_gradient_through() {
        let mut conv = single(&[1.0], 1);
        let x = Tensor::new(&[1, 1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        conv.forward(&x).unwrap();
        let g = Tensor::new(&[1, 1, 4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(conv.backward(&g).unwrap(), g);
    }
}
