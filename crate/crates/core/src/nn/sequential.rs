use rand::Rng;

use super::{
    BatchNorm2d, Conv2d, Dropout, Init, MaxPool2, Mode, NnError, Relu, Scalar, Sigmoid, Tensor, Upsample2,
};

/// Layer description used to build a [`Sequential`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm { channels: usize },
    Relu,
    Sigmoid,
    MaxPool,
    Upsample,
    Dropout { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    Sigmoid,
    MaxPool,
    Upsample,
    Dropout,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::BatchNorm => "bn",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Upsample => "upsample",
            LayerKind::Dropout => "dropout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu(Relu<T>),
    Sigmoid(Sigmoid<T>),
    MaxPool(MaxPool2),
    Upsample(Upsample2),
    Dropout(Dropout<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn build(spec: LayerSpec, rng: &mut impl Rng) -> Result<Self, NnError> {
        Self::build_with(spec, Init::FanIn, rng)
    }

    pub fn build_with(spec: LayerSpec, init: Init, rng: &mut impl Rng) -> Result<Self, NnError> {
        Ok(match spec {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv(Conv2d::with_init(in_channels, out_channels, kernel, stride, padding, init, rng)),
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm2d::new(channels)),
            LayerSpec::Relu => Layer::Relu(Relu::new()),
            LayerSpec::Sigmoid => Layer::Sigmoid(Sigmoid::new()),
            LayerSpec::MaxPool => Layer::MaxPool(MaxPool2::new()),
            LayerSpec::Upsample => Layer::Upsample(Upsample2::new()),
            LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)?),
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::Sigmoid(_) => LayerKind::Sigmoid,
            Layer::MaxPool(_) => LayerKind::MaxPool,
            Layer::Upsample(_) => LayerKind::Upsample,
            Layer::Dropout(_) => LayerKind::Dropout,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(l) => l.forward(x, mode),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Relu(l) => Ok(l.forward(x, mode)),
            Layer::Sigmoid(l) => Ok(l.forward(x, mode)),
            Layer::MaxPool(l) => l.forward(x, mode),
            Layer::Upsample(l) => l.forward(x, mode),
            Layer::Dropout(l) => l.forward(x, mode),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Relu(l) => Ok(l.infer(x)),
            Layer::Sigmoid(l) => Ok(l.infer(x)),
            Layer::MaxPool(l) => l.infer(x),
            Layer::Upsample(l) => l.infer(x),
            Layer::Dropout(_) => Ok(x.clone()),
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::Sigmoid(l) => l.backward(grad),
            Layer::MaxPool(l) => l.backward(grad),
            Layer::Upsample(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
        }
    }
}

/// Ordered stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn build(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self, NnError> {
        Self::build_with(specs, Init::FanIn, rng)
    }

    pub fn build_with(specs: &[LayerSpec], init: Init, rng: &mut impl Rng) -> Result<Self, NnError> {
        Ok(Self {
            layers: specs
                .iter()
                .map(|&s| Layer::build_with(s, init, rng))
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, mode)?;
        }
        Ok(cur)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.infer(&cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(cur)
    }

    /// Trainable tensors in layer order; conv contributes weight then bias,
    /// batch norm gamma then beta.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(l) => out.extend(l.params_mut()),
                Layer::BatchNorm(l) => out.extend(l.params_mut()),
                _ => {}
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(l) => out.extend(l.params()),
                Layer::BatchNorm(l) => out.extend(l.params()),
                _ => {}
            }
        }
        out
    }

    /// `(name, tensor)` for every trainable tensor, names prefixed by `prefix`.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(l) => {
                    out.push((format!("{prefix}.{i}.conv.weight"), &l.weight));
                    out.push((format!("{prefix}.{i}.conv.bias"), &l.bias));
                }
                Layer::BatchNorm(l) => {
                    out.push((format!("{prefix}.{i}.bn.gamma"), &l.gamma));
                    out.push((format!("{prefix}.{i}.bn.beta"), &l.beta));
                }
                _ => {}
            }
        }
        out
    }

    /// Non-trainable state (batch-norm running mean and variance).
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(l) = layer {
                out.push((format!("{i}.bn.running_mean"), &mut l.running_mean));
                out.push((format!("{i}.bn.running_var"), &mut l.running_var));
            }
        }
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(l) = layer {
                out.push((format!("{i}.bn.running_mean"), &l.running_mean));
                out.push((format!("{i}.bn.running_var"), &l.running_var));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Give each dropout layer its own seed derived from `seed`.
    pub fn reseed_dropout(&mut self, seed: u64) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Dropout(d) = layer {
                d.reseed(crate::seed::mix(seed, &[i as u64]));
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
