use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2d, Linear, MaxPool, Relu, RmdnLayer, SoftmaxXent};
use super::{AutonetError, Tensor};
use crate::matrix::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d { out_channels: usize, kernel: usize },
    Relu,
    MaxPool { kernel: usize, stride: usize },
    Flatten,
    Linear { out_dim: usize },
    Rmdn { epsilon: f64, lambda: f64 },
    SoftmaxXent,
}

/// Where residualization layers go in the synthetic-experiment CNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placement {
    None,
    AfterEachConvAndPrelogits,
    PrelogitsOnly,
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Placement::None => "none",
            Placement::AfterEachConvAndPrelogits => "after_each_conv_and_prelogits",
            Placement::PrelogitsOnly => "prelogits_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "baseline" => Some(Placement::None),
            "after_each_conv_and_prelogits" | "all" => Some(Placement::AfterEachConvAndPrelogits),
            "prelogits_only" | "prelogits" => Some(Placement::PrelogitsOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn rmdn_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Rmdn { .. }))
            .count()
    }

    /// The same spec with every residualization layer dropped.
    pub fn without_rmdn(&self) -> ModelSpec {
        ModelSpec {
            layers: self
                .layers
                .iter()
                .copied()
                .filter(|l| !matches!(l, LayerSpec::Rmdn { .. }))
                .collect(),
        }
    }
}

/// conv16k5 → [rmdn] → relu → pool → conv32k5 → [rmdn] → relu → pool →
/// flatten → fc84 → [rmdn] → fc2 → softmax cross-entropy.
pub fn build_synth_cnn(placement: Placement, epsilon: f64, lambda: f64) -> ModelSpec {
    let rmdn = LayerSpec::Rmdn { epsilon, lambda };
    let conv_rmdn = placement == Placement::AfterEachConvAndPrelogits;
    let head_rmdn = placement != Placement::None;
    let mut layers = vec![
        LayerSpec::Conv2d {
            out_channels: 16,
            kernel: 5,
        },
    ];
    if conv_rmdn {
        layers.push(rmdn);
    }
    layers.extend([
        LayerSpec::Relu,
        LayerSpec::MaxPool {
            kernel: 2,
            stride: 2,
        },
        LayerSpec::Conv2d {
            out_channels: 32,
            kernel: 5,
        },
    ]);
    if conv_rmdn {
        layers.push(rmdn);
    }
    layers.extend([
        LayerSpec::Relu,
        LayerSpec::MaxPool {
            kernel: 2,
            stride: 2,
        },
        LayerSpec::Flatten,
        LayerSpec::Linear { out_dim: 84 },
    ]);
    if head_rmdn {
        layers.push(rmdn);
    }
    layers.extend([LayerSpec::Linear { out_dim: 2 }, LayerSpec::SoftmaxXent]);
    ModelSpec { layers }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu(Relu),
    MaxPool(MaxPool),
    Flatten { in_shape: Vec<usize> },
    Linear(Linear),
    Rmdn(RmdnLayer),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::Flatten { .. } => "flatten",
            Layer::Linear(_) => "linear",
            Layer::Rmdn(_) => "rmdn",
        }
    }
}

/// A sequential network with an optional trailing softmax cross-entropy.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    input_shape: Vec<usize>,
    num_confounders: usize,
    layers: Vec<Layer>,
    loss: Option<SoftmaxXent>,
    prelogits_index: Option<usize>,
    prelogits: Option<Mat>,
    backward_ready: bool,
}

impl Model {
    /// Instantiates `spec` for per-sample `input_shape` (`[C, H, W]`) with
    /// fan-in scaled uniform initialization drawn from `seed`.
    pub fn new(
        spec: &ModelSpec,
        input_shape: &[usize],
        num_confounders: usize,
        seed: u64,
    ) -> Result<Self, AutonetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::new();
        let mut loss = None;
        for (i, ls) in spec.layers.iter().enumerate() {
            if loss.is_some() {
                return Err(AutonetError::Shape(format!(
                    "layer {i} follows the loss layer"
                )));
            }
            let layer = match *ls {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                } => {
                    if shape.len() != 3 {
                        return Err(AutonetError::Shape(format!(
                            "conv2d at layer {i} needs [C, H, W], got {shape:?}"
                        )));
                    }
                    let mut c =
                        Conv2d::new(shape[0], out_channels, kernel, (shape[1], shape[2]), &mut rng)?;
                    c.need_input_grad = !layers.is_empty();
                    shape = c.out_shape();
                    Layer::Conv2d(c)
                }
                LayerSpec::Relu => Layer::Relu(Relu::default()),
                LayerSpec::MaxPool { kernel, stride } => {
                    let p = MaxPool::new(kernel, stride, &shape)?;
                    shape = p.out_shape();
                    Layer::MaxPool(p)
                }
                LayerSpec::Flatten => {
                    let in_shape = shape.clone();
                    shape = vec![shape.iter().product()];
                    Layer::Flatten { in_shape }
                }
                LayerSpec::Linear { out_dim } => {
                    if shape.len() != 1 {
                        return Err(AutonetError::Shape(format!(
                            "linear at layer {i} needs flat input, got {shape:?}"
                        )));
                    }
                    let l = Linear::new(shape[0], out_dim, &mut rng)?;
                    shape = vec![out_dim];
                    Layer::Linear(l)
                }
                LayerSpec::Rmdn { epsilon, lambda } => {
                    Layer::Rmdn(RmdnLayer::new(&shape, num_confounders, epsilon, lambda)?)
                }
                LayerSpec::SoftmaxXent => {
                    if shape.len() != 1 {
                        return Err(AutonetError::Shape(format!(
                            "loss needs flat logits, got {shape:?}"
                        )));
                    }
                    loss = Some(SoftmaxXent::default());
                    continue;
                }
            };
            layers.push(layer);
        }
        let prelogits_index = layers.iter().rposition(|l| matches!(l, Layer::Linear(_)));
        Ok(Model {
            spec: spec.clone(),
            input_shape: input_shape.to_vec(),
            num_confounders,
            layers,
            loss,
            prelogits_index,
            prelogits: None,
            backward_ready: false,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_confounders(&self) -> usize {
        self.num_confounders
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn rmdn_layers(&self) -> impl Iterator<Item = &RmdnLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Rmdn(r) => Some(r),
            _ => None,
        })
    }

    pub fn rmdn_layers_mut(&mut self) -> impl Iterator<Item = &mut RmdnLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Rmdn(r) => Some(r),
            _ => None,
        })
    }

    /// Weights and biases in layer order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv2d(c) => out.extend([&c.weight, &c.bias]),
                Layer::Linear(c) => out.extend([&c.weight, &c.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv2d(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::Linear(c) => out.extend([&mut c.weight, &mut c.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Pre-logits activations (input of the last linear layer) from the most
    /// recent forward pass.
    pub fn prelogits(&self) -> Option<&Mat> {
        self.prelogits.as_ref()
    }

    /// Runs the network on `batch` (`[B, C, H, W]`). `design` rows are
    /// `[confounders…, label, 1]`; labels feed the loss, and residualization
    /// layers absorb the full rows only in training mode. Returns logits and
    /// the mean loss (`None` without a loss layer).
    pub fn forward(
        &mut self,
        batch: &Tensor,
        design: &Mat,
        train: bool,
    ) -> Result<(Tensor, Option<f64>), AutonetError> {
        self.backward_ready = false;
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != self.input_shape[..]
        {
            return Err(AutonetError::Shape(format!(
                "input {:?} does not match model input {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        let b = batch.batch();
        if design.rows() != b || design.cols() != self.num_confounders + 2 {
            return Err(AutonetError::Shape(format!(
                "design {:?} for batch {b} with {} confounders",
                design.shape(),
                self.num_confounders
            )));
        }
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if Some(i) == self.prelogits_index {
                self.prelogits = Some(Mat::new(b, x.sample_len(), x.data().to_vec())?);
            }
            x = match layer {
                Layer::Conv2d(c) => c.forward(&x, train)?,
                Layer::Relu(r) => r.forward(&x, train)?,
                Layer::MaxPool(p) => p.forward(&x, train)?,
                Layer::Flatten { .. } => {
                    let n = x.sample_len();
                    x.reshape(vec![b, n])?
                }
                Layer::Linear(l) => l.forward(&x, train)?,
                Layer::Rmdn(r) => r.forward(&x, design, train)?,
            };
        }
        let loss = match self.loss.as_mut() {
            Some(l) => {
                let labels = labels_from_design(design, self.num_confounders)?;
                Some(l.forward(&x, &labels, train)?)
            }
            None => None,
        };
        self.backward_ready = train;
        Ok((x, loss))
    }

    /// Back-propagates the loss of the last training forward pass,
    /// accumulating parameter gradients.
    pub fn backward(&mut self) -> Result<(), AutonetError> {
        if !std::mem::take(&mut self.backward_ready) {
            return Err(AutonetError::State(
                "backward requires a preceding training-mode forward".into(),
            ));
        }
        let loss = self
            .loss
            .as_mut()
            .ok_or_else(|| AutonetError::State("model has no loss layer".into()))?;
        let grad = loss.backward()?;
        self.backward_from(grad)
    }

    /// Back-propagates an explicit gradient w.r.t. the network output.
    pub fn backward_from(&mut self, mut grad: Tensor) -> Result<(), AutonetError> {
        for layer in self.layers.iter_mut().rev() {
            grad = match layer {
                Layer::Conv2d(c) => c.backward(&grad)?,
                Layer::Relu(r) => r.backward(&grad)?,
                Layer::MaxPool(p) => p.backward(&grad)?,
                Layer::Flatten { in_shape } => {
                    let mut s = vec![grad.batch()];
                    s.extend_from_slice(in_shape);
                    grad.reshape(s)?
                }
                Layer::Linear(l) => l.backward(&grad)?,
                Layer::Rmdn(r) => r.backward(&grad)?,
            };
        }
        Ok(())
    }
}

/// Reads the label column of a design matrix as class indices.
pub fn labels_from_design(design: &Mat, num_confounders: usize) -> Result<Vec<usize>, AutonetError> {
    (0..design.rows())
        .map(|i| {
            let y = design[(i, num_confounders)];
            if y >= 0.0 && y.fract() == 0.0 {
                Ok(y as usize)
            } else {
                Err(AutonetError::Shape(format!("label {y} at row {i} is not a class index")))
            }
        })
        .collect()
}
