//! Dual-encoder, single-decoder network mapping a conjugate speckle pair to
//! the sample image.
//!
//! Each encoder is `BN -> conv1 -> (conv, pool) x 4`; the decoder takes the
//! difference of the two latents (reference minus test) through
//! `(upsample, conv) x 4 -> dropout -> conv -> conv/2 -> conv x 4`. Every
//! layer except the last is followed by ReLU; the last by sigmoid.

mod checkpoint;
mod stability;
mod train;

pub use checkpoint::{
    load_checkpoint, load_training_state, save_checkpoint, save_training_state, CheckpointError,
    TrainingState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use stability::{stability_experiment, StabilityError, StabilityResult};
pub use train::{
    evaluate_set, EpochStats, LrSchedule, SetEvaluation, TrainConfig, TrainError, TrainReport,
    TrainSet, Trainer,
};

use std::fmt::Write as _;

use ndarray::Array2;
use thiserror::Error;

use crate::nn::{conv_output_size, Init, LayerSpec, Mode, NnError, Scalar, Sequential, Tensor};
use crate::optics::{IntensityImage, SampleImage};
use crate::seed;

#[derive(Debug, Error)]
pub enum YNetError {
    #[error("layer geometry does not close at {expected}x{expected}:\n{table}")]
    Geometry { expected: usize, table: String },
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("input {got:?} does not match network input {expected}x{expected}")]
    Input { got: (usize, usize), expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct YNetConfig {
    pub encoder_channels: [usize; 5],
    pub decoder_channels: [usize; 10],
    pub dropout_rate: f64,
    pub input_n: usize,
    pub output_n: usize,
    /// Zero padding of the last four convolutions.
    pub final_padding: usize,
    pub kernel: usize,
    pub padding: usize,
    /// Diagnostic: initialize the test encoder as a copy of the reference one.
    pub mirror_encoders: bool,
    /// Convolution weight initialization; not part of the architecture.
    pub init: Init,
}

impl YNetConfig {
    /// Full-width channel plan.
    pub fn full() -> Self {
        Self {
            encoder_channels: [16, 32, 64, 128, 128],
            decoder_channels: [128, 64, 32, 16, 16, 16, 16, 16, 16, 1],
            dropout_rate: 0.6,
            input_n: 64,
            output_n: 28,
            final_padding: 3,
            kernel: 4,
            padding: 1,
            mirror_encoders: false,
            init: Init::He,
        }
    }

    /// Halved channel plan used for desk-scale training.
    pub fn desk() -> Self {
        Self {
            encoder_channels: [8, 16, 32, 64, 64],
            decoder_channels: [64, 32, 16, 8, 8, 8, 8, 8, 8, 1],
            ..Self::full()
        }
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = vec![LayerSpec::BatchNorm { channels: 1 }];
        let mut c = 1;
        for (i, &o) in self.encoder_channels.iter().enumerate() {
            specs.push(self.conv(c, o, 1, self.padding));
            specs.push(LayerSpec::Relu);
            if i > 0 {
                specs.push(LayerSpec::MaxPool);
            }
            c = o;
        }
        specs
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let d = &self.decoder_channels;
        let mut specs = Vec::new();
        let mut c = self.encoder_channels[4];
        for &o in &d[..4] {
            specs.push(LayerSpec::Upsample);
            specs.push(self.conv(c, o, 1, self.padding));
            specs.push(LayerSpec::Relu);
            c = o;
        }
        specs.push(LayerSpec::Dropout {
            rate: self.dropout_rate,
        });
        specs.push(self.conv(c, d[4], 1, self.padding));
        specs.push(LayerSpec::Relu);
        specs.push(self.conv(d[4], d[5], 2, self.padding));
        specs.push(LayerSpec::Relu);
        c = d[5];
        for (i, &o) in d[6..].iter().enumerate() {
            specs.push(self.conv(c, o, 1, self.final_padding));
            specs.push(if i == 3 { LayerSpec::Sigmoid } else { LayerSpec::Relu });
            c = o;
        }
        specs
    }

    fn conv(&self, in_channels: usize, out_channels: usize, stride: usize, padding: usize) -> LayerSpec {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: self.kernel,
            stride,
            padding,
        }
    }

    /// Layer-by-layer `(stage, layer, channels, size)` trace; `size` is `None`
    /// once the geometry breaks.
    pub fn geometry(&self) -> Vec<GeometryRow> {
        let mut rows = vec![GeometryRow {
            stage: "input",
            layer: "-".into(),
            channels: 1,
            size: Some(self.input_n),
        }];
        let mut trace = |stage: &'static str, specs: &[LayerSpec], mut size: Option<usize>, mut channels: usize| {
            for spec in specs {
                let layer = match *spec {
                    LayerSpec::Conv { out_channels, kernel, stride, padding, .. } => {
                        size = size.and_then(|s| conv_output_size(s, kernel, stride, padding)).filter(|&s| s > 0);
                        channels = out_channels;
                        format!("conv k{kernel} s{stride} p{padding}")
                    }
                    LayerSpec::MaxPool => {
                        size = size.map(|s| s / 2).filter(|&s| s > 0);
                        "maxpool 2".into()
                    }
                    LayerSpec::Upsample => {
                        size = size.map(|s| s * 2);
                        "upsample 2".into()
                    }
                    LayerSpec::Dropout { rate } => format!("dropout {rate}"),
                    LayerSpec::BatchNorm { .. } => "batchnorm".into(),
                    LayerSpec::Relu | LayerSpec::Sigmoid => continue,
                };
                rows.push(GeometryRow {
                    stage,
                    layer,
                    channels,
                    size,
                });
            }
            (size, channels)
        };
        let (size, channels) = trace("encoder", &self.encoder_specs(), Some(self.input_n), 1);
        trace("decoder", &self.decoder_specs(), size, channels);
        rows
    }

    pub fn geometry_table(&self) -> String {
        let mut out = String::from("stage    layer               channels  size\n");
        for r in self.geometry() {
            let size = r.size.map_or("invalid".to_string(), |s| format!("{s}x{s}"));
            let _ = writeln!(out, "{:<8} {:<19} {:>8}  {}", r.stage, r.layer, r.channels, size);
        }
        out
    }

    pub fn validate(&self) -> Result<(), YNetError> {
        if self.decoder_channels[9] != 1 {
            return Err(YNetError::Config("last decoder layer must have one channel".into()));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return Err(YNetError::Config("channel counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(YNetError::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        let rows = self.geometry();
        if rows.last().and_then(|r| r.size) != Some(self.output_n) {
            return Err(YNetError::Geometry {
                expected: self.output_n,
                table: self.geometry_table(),
            });
        }
        Ok(())
    }

    /// Trainable parameter count derived from the channel plan.
    pub fn parameter_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let count = |specs: Vec<LayerSpec>| -> usize {
            specs
                .iter()
                .map(|s| match *s {
                    LayerSpec::Conv { in_channels, out_channels, .. } => out_channels * (in_channels * k2 + 1),
                    LayerSpec::BatchNorm { channels } => 2 * channels,
                    _ => 0,
                })
                .sum()
        };
        2 * count(self.encoder_specs()) + count(self.decoder_specs())
    }

    /// Canonical text used for the architecture fingerprint and config echo.
    pub fn describe(&self) -> String {
        format!(
            "encoder={:?} decoder={:?} dropout={} input={} output={} final_padding={} kernel={} padding={}",
            self.encoder_channels,
            self.decoder_channels,
            self.dropout_rate,
            self.input_n,
            self.output_n,
            self.final_padding,
            self.kernel,
            self.padding
        )
    }
}

impl Default for YNetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeometryRow {
    pub stage: &'static str,
    pub layer: String,
    pub channels: usize,
    pub size: Option<usize>,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct YNet<T> {
    pub config: YNetConfig,
    pub encoder_ref: Sequential<T>,
    pub encoder_test: Sequential<T>,
    pub decoder: Sequential<T>,
}

const ENCODER_REF: u64 = 0;
const ENCODER_TEST: u64 = 1;
const DECODER: u64 = 2;

impl<T: Scalar> YNet<T> {
    pub fn build(config: &YNetConfig, seed_: u64) -> Result<Self, YNetError> {
        config.validate()?;
        let encoder_ref = Sequential::build_with(&config.encoder_specs(), config.init, &mut seed::rng(seed::mix(seed_, &[ENCODER_REF])))?;
        let encoder_test = if config.mirror_encoders {
            encoder_ref.clone()
        } else {
            Sequential::build_with(&config.encoder_specs(), config.init, &mut seed::rng(seed::mix(seed_, &[ENCODER_TEST])))?
        };
        let decoder = Sequential::build_with(&config.decoder_specs(), config.init, &mut seed::rng(seed::mix(seed_, &[DECODER])))?;
        Ok(Self {
            config: config.clone(),
            encoder_ref,
            encoder_test,
            decoder,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), YNetError> {
        let (_, c, h, w) = x.dims4()?;
        let n = self.config.input_n;
        if c != 1 || h != n || w != n {
            return Err(YNetError::Input { got: (h, w), expected: n });
        }
        Ok(())
    }

    /// Merged latent `E_ref(reference) - E_test(test)` in evaluation mode.
    pub fn latent(&self, reference: &Tensor<T>, test: &Tensor<T>) -> Result<Tensor<T>, YNetError> {
        self.check_input(reference)?;
        self.check_input(test)?;
        let a = self.encoder_ref.infer(reference)?;
        let b = self.encoder_test.infer(test)?;
        Ok(a.zip_map(&b, |x, y| x - y)?)
    }

    /// Evaluation-mode forward pass: `[N, 1, n, n]` pair to `[N, 1, out, out]`.
    pub fn infer(&self, reference: &Tensor<T>, test: &Tensor<T>) -> Result<Tensor<T>, YNetError> {
        let z = self.latent(reference, test)?;
        Ok(self.decoder.infer(&z)?)
    }

    /// Training-mode forward pass; dropout masks derive from `dropout_seed`.
    pub fn forward_train(
        &mut self,
        reference: &Tensor<T>,
        test: &Tensor<T>,
        dropout_seed: u64,
    ) -> Result<Tensor<T>, YNetError> {
        self.check_input(reference)?;
        self.check_input(test)?;
        self.decoder.reseed_dropout(dropout_seed);
        let a = self.encoder_ref.forward(reference, Mode::Train)?;
        let b = self.encoder_test.forward(test, Mode::Train)?;
        let z = a.zip_map(&b, |x, y| x - y)?;
        Ok(self.decoder.forward(&z, Mode::Train)?)
    }

    /// Accumulates parameter gradients for the last training forward pass.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<(), YNetError> {
        let gz = self.decoder.backward(grad_out)?;
        self.encoder_ref.backward(&gz)?;
        self.encoder_test.backward(&gz.map(|g| -g))?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.encoder_ref.zero_grad();
        self.encoder_test.zero_grad();
        self.decoder.zero_grad();
    }

    /// Reference encoder, test encoder, decoder; each in layer order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.encoder_ref.params_mut();
        out.extend(self.encoder_test.params_mut());
        out.extend(self.decoder.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = self.encoder_ref.params();
        out.extend(self.encoder_test.params());
        out.extend(self.decoder.params());
        out
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.encoder_ref.named_params("encoder_ref");
        out.extend(self.encoder_test.named_params("encoder_test"));
        out.extend(self.decoder.named_params("decoder"));
        out
    }

    pub fn named_buffers(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = Vec::new();
        for (prefix, net) in [
            ("encoder_ref", &self.encoder_ref),
            ("encoder_test", &self.encoder_test),
            ("decoder", &self.decoder),
        ] {
            out.extend(net.buffers().into_iter().map(|(n, b)| (format!("{prefix}.{n}"), b)));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for (prefix, net) in [
            ("encoder_ref", &mut self.encoder_ref),
            ("encoder_test", &mut self.encoder_test),
            ("decoder", &mut self.decoder),
        ] {
            out.extend(net.buffers_mut().into_iter().map(|(n, b)| (format!("{prefix}.{n}"), b)));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// FNV-1a over the config description and every parameter name and shape.
    pub fn fingerprint(&self) -> u64 {
        let mut s = self.config.describe();
        for (name, t) in self.named_params() {
            let _ = write!(s, ";{name}{:?}", t.shape());
        }
        for (name, b) in self.named_buffers() {
            let _ = write!(s, ";{name}[{}]", b.len());
        }
        fnv1a64(s.as_bytes())
    }

    pub fn cast<U: Scalar>(&self) -> YNet<U> {
        fn cast_seq<T: Scalar, U: Scalar>(s: &Sequential<T>, specs: Vec<LayerSpec>) -> Sequential<U> {
            let mut out = Sequential::<U>::build(&specs, &mut seed::rng(0)).expect("validated config");
            for (dst, src) in out.params_mut().into_iter().zip(s.params()) {
                let grad = dst.grad().map(|g| g.to_vec());
                *dst = src.cast();
                if let Some(g) = grad {
                    dst.grad_mut().copy_from_slice(&g);
                }
            }
            for ((_, dst), (_, src)) in out.buffers_mut().into_iter().zip(s.buffers()) {
                *dst = src.iter().map(|v| U::from_f64(v.as_f64())).collect();
            }
            out
        }
        YNet {
            config: self.config.clone(),
            encoder_ref: cast_seq(&self.encoder_ref, self.config.encoder_specs()),
            encoder_test: cast_seq(&self.encoder_test, self.config.encoder_specs()),
            decoder: cast_seq(&self.decoder, self.config.decoder_specs()),
        }
    }
}

/// Per-image min-max scaling to `[0, 1]`; a constant image maps to zeros.
pub fn normalize_input<T: Scalar>(values: &Array2<f64>) -> Vec<T> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    values.iter().map(|&v| T::from_f64((v - lo) * scale)).collect()
}

impl YNet<f32> {
    /// Single-pair prediction from raw detector intensities.
    pub fn predict(&self, reference: &IntensityImage, test: &IntensityImage, pitch: f64) -> Result<SampleImage, YNetError> {
        let n = self.config.input_n;
        for img in [reference, test] {
            if img.values.dim() != (n, n) {
                return Err(YNetError::Input { got: img.values.dim(), expected: n });
            }
        }
        let r = Tensor::from_vec(&[1, 1, n, n], normalize_input(&reference.values))?;
        let t = Tensor::from_vec(&[1, 1, n, n], normalize_input(&test.values))?;
        let y = self.infer(&r, &t)?;
        let m = self.config.output_n;
        let values = Array2::from_shape_vec((m, m), y.data().iter().map(|&v| v as f64).collect())
            .expect("output shape checked by geometry");
        Ok(SampleImage::new(values, pitch).expect("sigmoid output lies in [0, 1]"))
    }
}
