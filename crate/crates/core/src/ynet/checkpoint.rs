//! `YNC1` checkpoints (little-endian):
//!
//! ```text
//! magic "YNC1", version u32, fingerprint u64
//! config   u32 x 5 encoder channels, u32 x 10 decoder channels, f64 dropout,
//!          u32 input_n, output_n, final_padding, kernel, padding, u8 mirror
//! params   u32 count, then { u32 name_len, name, u32 ndim, u32 dims, f32 values }
//! buffers  u32 count, then { u32 name_len, name, u32 len, f32 values }
//! state    u8 0 (weights only) or 1 followed by the optimizer and report
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::train::{LrSchedule, TrainConfig, TrainReport, Trainer};
use super::{YNet, YNetConfig, YNetError};
use crate::nn::{AdamConfig, AdamState, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"YNC1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a YNC1 checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("architecture fingerprint mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Fingerprint { stored: u64, computed: u64 },
    #[error("checkpoint layout mismatch: {0}")]
    Layout(String),
    #[error("{0} trailing bytes after checkpoint")]
    Trailing(usize),
    #[error(transparent)]
    Model(#[from] YNetError),
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub model: YNet<f32>,
    pub config: TrainConfig,
    pub adam: AdamState<f32>,
    pub epoch: usize,
    pub report: TrainReport,
}

impl TrainingState {
    pub fn into_trainer(self, best: Option<YNet<f32>>) -> Trainer {
        Trainer {
            model: self.model,
            adam: self.adam,
            config: self.config,
            epoch: self.epoch,
            report: self.report,
            best,
        }
    }
}

#[derive(Default)]
struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len());
        for &x in v {
            self.f64(x);
        }
    }
}

struct In<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Layout("non-UTF-8 name".into()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated(self.bytes.len()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.u32()?;
        (0..n).map(|_| self.f64()).collect()
    }
}

fn write_config(out: &mut Out, c: &YNetConfig) {
    c.encoder_channels.iter().for_each(|&v| out.u32(v));
    c.decoder_channels.iter().for_each(|&v| out.u32(v));
    out.f64(c.dropout_rate);
    for v in [c.input_n, c.output_n, c.final_padding, c.kernel, c.padding] {
        out.u32(v);
    }
    out.u8(c.mirror_encoders as u8);
}

fn read_config(inp: &mut In) -> Result<YNetConfig, CheckpointError> {
    let mut c = YNetConfig::desk();
    for v in c.encoder_channels.iter_mut() {
        *v = inp.u32()?;
    }
    for v in c.decoder_channels.iter_mut() {
        *v = inp.u32()?;
    }
    c.dropout_rate = inp.f64()?;
    c.input_n = inp.u32()?;
    c.output_n = inp.u32()?;
    c.final_padding = inp.u32()?;
    c.kernel = inp.u32()?;
    c.padding = inp.u32()?;
    c.mirror_encoders = inp.u8()? != 0;
    Ok(c)
}

fn encode_model(model: &YNet<f32>) -> Out {
    let mut out = Out::default();
    out.0.extend_from_slice(&CHECKPOINT_MAGIC);
    out.u32(CHECKPOINT_VERSION as usize);
    out.u64(model.fingerprint());
    write_config(&mut out, &model.config);
    let params = model.named_params();
    out.u32(params.len());
    for (name, t) in params {
        out.str(&name);
        out.u32(t.shape().len());
        t.shape().iter().for_each(|&d| out.u32(d));
        out.f32s(t.data());
    }
    let buffers = model.named_buffers();
    out.u32(buffers.len());
    for (name, b) in buffers {
        out.str(&name);
        out.u32(b.len());
        out.f32s(b);
    }
    out
}

fn decode_model(inp: &mut In) -> Result<YNet<f32>, CheckpointError> {
    if inp.take(4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = inp.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let stored = inp.u64()?;
    let config = read_config(inp)?;
    let mut model = YNet::<f32>::build(&config, 0)?;
    let computed = model.fingerprint();
    if stored != computed {
        return Err(CheckpointError::Fingerprint { stored, computed });
    }
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let count = inp.u32()?;
    if count != names.len() {
        return Err(CheckpointError::Layout(format!("{count} parameter tensors, expected {}", names.len())));
    }
    for (expect, dst) in names.iter().zip(model.params_mut()) {
        let name = inp.str()?;
        if &name != expect {
            return Err(CheckpointError::Layout(format!("found {name}, expected {expect}")));
        }
        let ndim = inp.u32()?;
        let shape = (0..ndim).map(|_| inp.u32()).collect::<Result<Vec<_>, _>>()?;
        if shape != dst.shape() {
            return Err(CheckpointError::Layout(format!("{name}: shape {shape:?} vs {:?}", dst.shape())));
        }
        let values = inp.f32s(dst.len())?;
        *dst = Tensor::param(&shape, values).expect("shape checked");
    }
    let mut buffers = model.buffers_mut();
    let count = inp.u32()?;
    if count != buffers.len() {
        return Err(CheckpointError::Layout(format!("{count} buffers, expected {}", buffers.len())));
    }
    for (expect, dst) in buffers.iter_mut() {
        let name = inp.str()?;
        if &name != expect {
            return Err(CheckpointError::Layout(format!("found buffer {name}, expected {expect}")));
        }
        let len = inp.u32()?;
        if len != dst.len() {
            return Err(CheckpointError::Layout(format!("{name}: {len} values vs {}", dst.len())));
        }
        **dst = inp.f32s(len)?;
    }
    Ok(model)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_checkpoint(model: &YNet<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut out = encode_model(model);
    out.u8(0);
    write_file(path.as_ref(), &out.0)
}

/// Loads the weights of a checkpoint (any optimizer section is skipped).
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<YNet<f32>, CheckpointError> {
    let bytes = read_file(path.as_ref())?;
    let mut inp = In { bytes: &bytes, pos: 0 };
    let model = decode_model(&mut inp)?;
    match inp.u8()? {
        0 => finish(&inp)?,
        1 => {
            decode_state(&mut inp, &model)?;
            finish(&inp)?;
        }
        flag => return Err(CheckpointError::Layout(format!("unknown state flag {flag}"))),
    }
    Ok(model)
}

fn finish(inp: &In) -> Result<(), CheckpointError> {
    match inp.bytes.len() - inp.pos {
        0 => Ok(()),
        n => Err(CheckpointError::Trailing(n)),
    }
}

pub fn save_training_state(trainer: &Trainer, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut out = encode_model(&trainer.model);
    out.u8(1);
    let c = &trainer.config;
    out.u64(trainer.epoch as u64);
    out.u64(c.epochs as u64);
    out.u64(c.batch_size as u64);
    out.u64(c.seed);
    for v in [c.adam.learning_rate, c.adam.beta1, c.adam.beta2, c.adam.epsilon] {
        out.f64(v);
    }
    match c.schedule {
        LrSchedule::Constant => {
            out.u8(0);
            out.f64(0.0);
        }
        LrSchedule::Cosine { final_fraction } => {
            out.u8(1);
            out.f64(final_fraction);
        }
    }
    let a = &trainer.adam;
    out.u64(a.step);
    out.u32(a.m.len());
    for (m, v) in a.m.iter().zip(&a.v) {
        out.u32(m.len());
        out.f32s(m);
        out.f32s(v);
    }
    let r = &trainer.report;
    out.f64s(&r.train_loss);
    out.f64s(&r.val_loss);
    out.f64s(&r.val_ssim);
    out.f64s(&r.val_psnr);
    out.f64(r.wall_seconds);
    out.u64(r.seed);
    out.u64(r.best_epoch.map_or(u64::MAX, |e| e as u64));
    write_file(path.as_ref(), &out.0)
}

fn decode_state(inp: &mut In, model: &YNet<f32>) -> Result<(TrainConfig, AdamState<f32>, usize, TrainReport), CheckpointError> {
    let epoch = inp.u64()? as usize;
    let epochs = inp.u64()? as usize;
    let batch_size = inp.u64()? as usize;
    let seed = inp.u64()?;
    let adam_cfg = AdamConfig {
        learning_rate: inp.f64()?,
        beta1: inp.f64()?,
        beta2: inp.f64()?,
        epsilon: inp.f64()?,
    };
    let tag = inp.u8()?;
    let fraction = inp.f64()?;
    let schedule = match tag {
        0 => LrSchedule::Constant,
        1 => LrSchedule::Cosine { final_fraction: fraction },
        t => return Err(CheckpointError::Layout(format!("unknown schedule tag {t}"))),
    };
    let step = inp.u64()?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let count = inp.u32()?;
    if count != sizes.len() {
        return Err(CheckpointError::Layout(format!("{count} moment buffers, expected {}", sizes.len())));
    }
    let mut adam = AdamState::new(adam_cfg, &sizes);
    adam.step = step;
    for (i, &size) in sizes.iter().enumerate() {
        let len = inp.u32()?;
        if len != size {
            return Err(CheckpointError::Layout(format!("moment {i}: {len} values vs {size}")));
        }
        adam.m[i] = inp.f32s(len)?;
        adam.v[i] = inp.f32s(len)?;
    }
    let mut report = TrainReport {
        train_loss: inp.f64s()?,
        val_loss: inp.f64s()?,
        val_ssim: inp.f64s()?,
        val_psnr: inp.f64s()?,
        wall_seconds: inp.f64()?,
        seed: inp.u64()?,
        best_epoch: None,
    };
    let best = inp.u64()?;
    report.best_epoch = (best != u64::MAX).then_some(best as usize);
    let config = TrainConfig {
        epochs,
        batch_size,
        adam: adam_cfg,
        schedule,
        seed,
    };
    Ok((config, adam, epoch, report))
}

pub fn load_training_state(path: impl AsRef<Path>) -> Result<TrainingState, CheckpointError> {
    let bytes = read_file(path.as_ref())?;
    let mut inp = In { bytes: &bytes, pos: 0 };
    let model = decode_model(&mut inp)?;
    if inp.u8()? != 1 {
        return Err(CheckpointError::Layout("checkpoint carries no training state".into()));
    }
    let (config, adam, epoch, report) = decode_state(&mut inp, &model)?;
    finish(&inp)?;
    Ok(TrainingState {
        model,
        config,
        adam,
        epoch,
        report,
    })
}
