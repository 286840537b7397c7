//! The Y-shaped domain-adversarial network.
//!
//! A shared 1-D CNN feature extractor feeds a label head directly and a
//! domain head through a gradient reversal layer. Only the feature
//! extractor and label head take part in prediction.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{AnyLayer, AvgPool1d, Conv1d, Dense, GradientReversal, Layer, Relu};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub width: usize,
    pub maps: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    /// Samples per input frame.
    pub input_len: usize,
    /// Each entry is one conv -> avgpool -> relu block.
    pub convs: Vec<ConvSpec>,
    pub pool: usize,
    /// Number of dense layers in each head, output layer included.
    pub head_depth: usize,
    pub head_width: usize,
    pub num_classes: usize,
}

impl ArchConfig {
    /// 310 ms frames at 16 kHz with the full-size convolution stack.
    pub fn full(num_classes: usize) -> Self {
        ArchConfig {
            input_len: 4960,
            convs: vec![
                ConvSpec { width: 64, maps: 256, stride: 31 },
                ConvSpec { width: 15, maps: 128, stride: 1 },
            ],
            pool: 2,
            head_depth: 4,
            head_width: 1024,
            num_classes,
        }
    }

    /// Small configuration sized for 1.6 kHz frames; trains in seconds.
    pub fn desk(input_len: usize, num_classes: usize) -> Self {
        ArchConfig {
            input_len,
            convs: vec![
                ConvSpec { width: 8, maps: 16, stride: 3 },
                ConvSpec { width: 5, maps: 16, stride: 1 },
            ],
            pool: 2,
            head_depth: 3,
            head_width: 32,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() {
            return Err(Error::Config("at least one conv block is required".into()));
        }
        let dims = [self.input_len, self.pool, self.head_depth, self.head_width, self.num_classes];
        let conv_dims = self.convs.iter().flat_map(|c| [c.width, c.maps, c.stride]);
        if dims.into_iter().chain(conv_dims).any(|d| d == 0) {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        self.feature_dim().map(|_| ())
    }

    /// `(channels, length)` after every conv/pool/relu block.
    pub fn block_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut len = self.input_len;
        let mut shapes = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            if len < c.width {
                return Err(Error::Config(format!(
                    "block {i}: length {len} is shorter than filter width {}",
                    c.width
                )));
            }
            len = (len - c.width) / c.stride + 1;
            if len < self.pool {
                return Err(Error::Config(format!(
                    "block {i}: length {len} is shorter than pool size {}",
                    self.pool
                )));
            }
            len /= self.pool;
            shapes.push((c.maps, len));
        }
        Ok(shapes)
    }

    /// Width of the flattened feature vector.
    pub fn feature_dim(&self) -> Result<usize> {
        let &(c, t) = self.block_shapes()?.last().expect("validated non-empty");
        Ok(c * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Features,
    Label,
    Domain,
}

impl ParamGroup {
    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Features => "features",
            ParamGroup::Label => "label",
            ParamGroup::Domain => "domain",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DannModel {
    arch: ArchConfig,
    feature_extractor: Vec<AnyLayer>,
    label_head: Vec<AnyLayer>,
    domain_head: Vec<AnyLayer>,
    grl: GradientReversal,
    conv_out_shape: Option<[usize; 3]>,
}

fn build_head<R: Rng + ?Sized>(
    input: usize,
    width: usize,
    depth: usize,
    out: usize,
    rng: &mut R,
) -> Result<Vec<AnyLayer>> {
    let mut layers = Vec::with_capacity(2 * depth - 1);
    let mut fan_in = input;
    for i in 0..depth {
        let last = i + 1 == depth;
        let fan_out = if last { out } else { width };
        layers.push(AnyLayer::Dense(Dense::new(fan_in, fan_out, rng)?));
        if !last {
            layers.push(AnyLayer::Relu(Relu::new()));
        }
        fan_in = fan_out;
    }
    Ok(layers)
}

fn run_forward(layers: &mut [AnyLayer], input: &Tensor) -> Result<Tensor> {
    let mut x = input.clone();
    for layer in layers.iter_mut() {
        x = layer.forward(&x)?;
    }
    Ok(x)
}

fn run_backward(layers: &mut [AnyLayer], grad: &Tensor) -> Result<Tensor> {
    let mut g = grad.clone();
    for layer in layers.iter_mut().rev() {
        g = layer.backward(&g)?;
    }
    Ok(g)
}

impl DannModel {
    pub fn new<R: Rng + ?Sized>(arch: ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut feature_extractor = Vec::new();
        let mut channels = 1;
        for c in &arch.convs {
            feature_extractor.push(AnyLayer::Conv1d(Conv1d::new(
                channels, c.maps, c.width, c.stride, rng,
            )?));
            feature_extractor.push(AnyLayer::AvgPool1d(AvgPool1d::new(arch.pool)?));
            feature_extractor.push(AnyLayer::Relu(Relu::new()));
            channels = c.maps;
        }
        let dim = arch.feature_dim()?;
        let label_head = build_head(dim, arch.head_width, arch.head_depth, arch.num_classes, rng)?;
        let domain_head = build_head(dim, arch.head_width, arch.head_depth, 2, rng)?;
        Ok(DannModel {
            arch,
            feature_extractor,
            label_head,
            domain_head,
            grl: GradientReversal::new(0.0)?,
            conv_out_shape: None,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn lambda(&self) -> f64 {
        self.grl.lambda()
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        self.grl.set_lambda(lambda)
    }

    /// Maps `[B, 1, T]` frames to flattened `[B, D]` features.
    pub fn extract_features(&mut self, x: &Tensor) -> Result<Tensor> {
        match *x.shape() {
            [_, 1, t] if t == self.arch.input_len => {}
            ref s => {
                return Err(Error::dim(format!(
                    "expected frames of shape [B, 1, {}], got {s:?}",
                    self.arch.input_len
                )))
            }
        }
        let out = run_forward(&mut self.feature_extractor, x)?;
        let &[b, c, t] = out.shape() else {
            unreachable!("conv blocks emit rank-3 tensors")
        };
        self.conv_out_shape = Some([b, c, t]);
        out.reshape(&[b, c * t])
    }

    /// Backpropagates a `[B, D]` feature gradient through the extractor,
    /// filling its parameter gradients. Returns the gradient at the input.
    pub fn backward_features(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self
            .conv_out_shape
            .ok_or_else(|| Error::State("feature backward called before forward".into()))?;
        let g = grad.reshape(&shape)?;
        run_backward(&mut self.feature_extractor, &g)
    }

    pub fn label_logits(&mut self, features: &Tensor) -> Result<Tensor> {
        run_forward(&mut self.label_head, features)
    }

    pub fn backward_label(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        run_backward(&mut self.label_head, grad_logits)
    }

    /// Domain logits for already extracted features, routed through the GRL.
    pub fn domain_logits(&mut self, features: &Tensor) -> Result<Tensor> {
        let f = self.grl.forward(features)?;
        run_forward(&mut self.domain_head, &f)
    }

    /// Gradient of the domain loss with respect to the features, after the
    /// GRL has scaled it by `-lambda`.
    pub fn backward_domain(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let g = self.backward_domain_head(grad_logits)?;
        self.grl.backward(&g)
    }

    /// Gradient of the domain loss with respect to the features with the GRL
    /// bypassed.
    pub fn backward_domain_head(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        run_backward(&mut self.domain_head, grad_logits)
    }

    pub fn forward_label(&mut self, x: &Tensor) -> Result<Tensor> {
        let f = self.extract_features(x)?;
        self.label_logits(&f)
    }

    pub fn forward_domain(&mut self, x: &Tensor) -> Result<Tensor> {
        let f = self.extract_features(x)?;
        self.domain_logits(&f)
    }

    /// Class ids from the label path only; the domain head is never touched.
    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward_label(x)?))
    }

    fn groups(&self) -> [(ParamGroup, &Vec<AnyLayer>); 3] {
        [
            (ParamGroup::Features, &self.feature_extractor),
            (ParamGroup::Label, &self.label_head),
            (ParamGroup::Domain, &self.domain_head),
        ]
    }

    fn groups_mut(&mut self) -> [(ParamGroup, &mut Vec<AnyLayer>); 3] {
        [
            (ParamGroup::Features, &mut self.feature_extractor),
            (ParamGroup::Label, &mut self.label_head),
            (ParamGroup::Domain, &mut self.domain_head),
        ]
    }

    /// All parameters in canonical order: features, label head, domain head;
    /// layer order within each; parameter name order within each layer.
    pub fn named_params(&self) -> Vec<(String, ParamGroup, &Tensor)> {
        let mut out = Vec::new();
        for (group, layers) in self.groups() {
            for (i, layer) in layers.iter().enumerate() {
                for (pname, t) in &layer.state().params {
                    out.push((format!("{}.{i}.{pname}", group.prefix()), group, t));
                }
            }
        }
        out
    }

    /// Visits every `(name, group, value, grad)` with mutable access to the value.
    pub fn for_each_param_mut(
        &mut self,
        mut f: impl FnMut(&str, ParamGroup, &mut Tensor, &Tensor) -> Result<()>,
    ) -> Result<()> {
        for (group, layers) in self.groups_mut() {
            for (i, layer) in layers.iter_mut().enumerate() {
                let state = layer.state_mut();
                for ((pname, value), grad) in state.params.iter_mut().zip(state.param_grads.values()) {
                    f(&format!("{}.{i}.{pname}", group.prefix()), group, value, grad)?;
                }
            }
        }
        Ok(())
    }

    fn locate(&self, name: &str) -> Option<(ParamGroup, usize, String)> {
        let mut parts = name.splitn(3, '.');
        let group = match parts.next()? {
            "features" => ParamGroup::Features,
            "label" => ParamGroup::Label,
            "domain" => ParamGroup::Domain,
            _ => return None,
        };
        let idx = parts.next()?.parse().ok()?;
        Some((group, idx, parts.next()?.to_string()))
    }

    fn layer(&self, group: ParamGroup, idx: usize) -> Option<&AnyLayer> {
        match group {
            ParamGroup::Features => self.feature_extractor.get(idx),
            ParamGroup::Label => self.label_head.get(idx),
            ParamGroup::Domain => self.domain_head.get(idx),
        }
    }

    fn layer_mut(&mut self, group: ParamGroup, idx: usize) -> Option<&mut AnyLayer> {
        match group {
            ParamGroup::Features => self.feature_extractor.get_mut(idx),
            ParamGroup::Label => self.label_head.get_mut(idx),
            ParamGroup::Domain => self.domain_head.get_mut(idx),
        }
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        let (g, i, p) = self.locate(name)?;
        self.layer(g, i)?.state().params.get(&p)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let (g, i, p) = self.locate(name)?;
        self.layer_mut(g, i)?.state_mut().params.get_mut(&p)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        let (g, i, p) = self.locate(name)?;
        self.layer(g, i)?.state().param_grads.get(&p)
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .param_mut(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter {name}: expected shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for (_, layers) in self.groups_mut() {
            for layer in layers.iter_mut() {
                layer.state_mut().zero_grads();
            }
        }
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            input_len: 40,
            convs: vec![
                ConvSpec { width: 6, maps: 3, stride: 2 },
                ConvSpec { width: 3, maps: 2, stride: 1 },
            ],
            pool: 2,
            head_depth: 2,
            head_width: 5,
            num_classes: 3,
        }
    }

    fn frames(b: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(&[b, 1, t], data).unwrap()
    }

    #[test]
    fn full_preset_feature_width() {
        let arch = ArchConfig::full(10);
        assert_eq!(arch.block_shapes().unwrap(), vec![(256, 79), (128, 32)]);
        assert_eq!(arch.feature_dim().unwrap(), 4096);
    }

    #[test]
    fn tiny_feature_width() {
        // 40 -> conv(6,s2) 18 -> pool 9 -> conv(3) 7 -> pool 3; 2 maps
        assert_eq!(tiny_arch().feature_dim().unwrap(), 6);
    }

    #[test]
    fn wrong_frame_length_is_rejected() {
        let mut m = DannModel::new(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(
            m.extract_features(&frames(1, 41, 0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_input_and_biases_give_zero_features() {
        let mut m = DannModel::new(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let f = m.extract_features(&Tensor::zeros(&[2, 1, 40])).unwrap();
        assert_eq!(f, Tensor::zeros(&[2, 6]));
    }

    #[test]
    fn batch_decomposes_into_rows() {
        let mut m = DannModel::new(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = frames(2, 40, 9);
        let both = m.extract_features(&x).unwrap();
        for r in 0..2 {
            let one = m.extract_features(&x.select_rows(&[r]).unwrap()).unwrap();
            for (a, b) in one.data().iter().zip(&both.data()[r * 6..(r + 1) * 6]) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn domain_forward_ignores_lambda() {
        let mut m = DannModel::new(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = frames(3, 40, 4);
        m.set_lambda(0.0).unwrap();
        let a = m.forward_domain(&x).unwrap();
        m.set_lambda(1.0).unwrap();
        let b = m.forward_domain(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[3, 2]);
        assert_eq!(m.forward_label(&x).unwrap().shape(), &[3, 3]);
    }

    #[test]
    fn argmax_picks_largest() {
        let t = Tensor::new(&[1, 3], vec![0.1, 2.0, -1.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1]);
    }

    #[test]
    fn predict_ignores_domain_head() {
        let mut m = DannModel::new(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let x = frames(8, 40, 6);
        let before = m.predict(&x).unwrap();
        let names: Vec<String> = m
            .named_params()
            .into_iter()
            .filter(|(_, g, _)| *g == ParamGroup::Domain)
            .map(|(n, _, _)| n)
            .collect();
        for n in names {
            let p = m.param_mut(&n).unwrap();
            p.data_mut().iter_mut().for_each(|v| *v = 1e6);
        }
        assert_eq!(m.predict(&x).unwrap(), before);
        assert_eq!(m.predict(&x).unwrap(), before);
    }

    #[test]
    fn param_names_round_trip() {
        let m = DannModel::new(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        for (name, _, t) in m.named_params() {
            assert_eq!(m.param(&name).unwrap(), t);
            assert_eq!(m.grad(&name).unwrap().shape(), t.shape());
        }
        assert!(m.param("features.0.weight").is_some());
        assert!(m.param("domain.4.bias").is_none());
    }
}
