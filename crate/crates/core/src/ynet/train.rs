use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use super::{normalize_input, YNet, YNetError};
use crate::dataset::DatasetRecord;
use crate::metrics::{psnr, ssim};
use crate::nn::{bce_loss, AdamConfig, AdamState, NnError, Tensor};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("record {index} has shape {got:?}, expected {expected:?}")]
    RecordShape {
        index: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: u64, loss: f64 },
    #[error("batch size must be positive")]
    BatchSize,
    #[error(transparent)]
    Model(#[from] YNetError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Learning rate as a function of the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the initial rate to `final_fraction` of it over the run.
    Cosine { final_fraction: f64 },
}

impl LrSchedule {
    pub fn rate(self, initial: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => initial,
            LrSchedule::Cosine { final_fraction } => {
                let t = if epochs > 1 { epoch as f64 / (epochs - 1) as f64 } else { 0.0 };
                let w = 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos());
                initial * (final_fraction + (1.0 - final_fraction) * w)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            adam: AdamConfig::default(),
            schedule: LrSchedule::Constant,
            seed: 0,
        }
    }
}

/// Network-ready pairs: speckles min-max scaled per image, targets as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub n_in: usize,
    pub n_out: usize,
    pub sample_ids: Vec<u64>,
    reference: Vec<f32>,
    test: Vec<f32>,
    target: Vec<f32>,
}

impl TrainSet {
    pub fn from_records(records: &[DatasetRecord]) -> Result<Self, TrainError> {
        let first = records.first().ok_or(TrainError::EmptySet("record"))?;
        let n_in = first.reference.nrows();
        let n_out = first.target.nrows();
        let mut set = Self {
            n_in,
            n_out,
            sample_ids: Vec::with_capacity(records.len()),
            reference: Vec::with_capacity(records.len() * n_in * n_in),
            test: Vec::with_capacity(records.len() * n_in * n_in),
            target: Vec::with_capacity(records.len() * n_out * n_out),
        };
        for (index, r) in records.iter().enumerate() {
            for (got, expected) in [
                (r.reference.dim(), (n_in, n_in)),
                (r.test.dim(), (n_in, n_in)),
                (r.target.dim(), (n_out, n_out)),
            ] {
                if got != expected {
                    return Err(TrainError::RecordShape { index, got, expected });
                }
            }
            set.reference.extend(normalize_input::<f32>(&r.reference.mapv(f64::from)));
            set.test.extend(normalize_input::<f32>(&r.test.mapv(f64::from)));
            set.target.extend(r.target.iter().copied());
            set.sample_ids.push(r.sample_id);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// First `count` pairs.
    pub fn truncate(mut self, count: usize) -> Self {
        let count = count.min(self.len());
        self.sample_ids.truncate(count);
        self.reference.truncate(count * self.n_in * self.n_in);
        self.test.truncate(count * self.n_in * self.n_in);
        self.target.truncate(count * self.n_out * self.n_out);
        self
    }

    /// `(reference, test, target)` tensors for the given indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
        let (a, b) = (self.n_in * self.n_in, self.n_out * self.n_out);
        let gather = |src: &[f32], len: usize| -> Vec<f32> {
            indices.iter().flat_map(|&i| src[i * len..(i + 1) * len].iter().copied()).collect()
        };
        let k = indices.len();
        (
            Tensor::from_vec(&[k, 1, self.n_in, self.n_in], gather(&self.reference, a)).unwrap(),
            Tensor::from_vec(&[k, 1, self.n_in, self.n_in], gather(&self.test, a)).unwrap(),
            Tensor::from_vec(&[k, 1, self.n_out, self.n_out], gather(&self.target, b)).unwrap(),
        )
    }

    pub fn target_image(&self, i: usize) -> Array2<f64> {
        let b = self.n_out * self.n_out;
        Array2::from_shape_vec(
            (self.n_out, self.n_out),
            self.target[i * b..(i + 1) * b].iter().map(|&v| v as f64).collect(),
        )
        .unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ssim: f64,
    pub val_psnr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_ssim: Vec<f64>,
    pub val_psnr: Vec<f64>,
    pub wall_seconds: f64,
    pub seed: u64,
    /// Epoch (0-based) whose weights were kept as best.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn best_val_ssim(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.val_ssim[e])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_ssim,val_psnr\n");
        for e in 0..self.epochs() {
            out.push_str(&format!(
                "{e},{:.10},{:.10},{:.10},{:.10}\n",
                self.train_loss[e], self.val_loss[e], self.val_ssim[e], self.val_psnr[e]
            ));
        }
        out
    }
}

/// Per-sample loss, SSIM and PSNR plus the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEvaluation {
    pub loss: Vec<f64>,
    pub ssim: Vec<f64>,
    pub psnr: Vec<f64>,
    pub outputs: Vec<Array2<f64>>,
}

impl SetEvaluation {
    pub fn mean_loss(&self) -> f64 {
        mean(&self.loss)
    }
    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Evaluation-mode pass over a whole set; batches run in parallel and results
/// come back in set order.
pub fn evaluate_set(model: &YNet<f32>, set: &TrainSet, batch_size: usize) -> Result<SetEvaluation, TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let n_out = set.n_out;
    let per_batch: Vec<Vec<(f64, f64, f64, Array2<f64>)>> = indices
        .par_chunks(batch_size.max(1))
        .map(|chunk| -> Result<_, TrainError> {
            let (r, t, y) = set.batch(chunk);
            let p = model.infer(&r, &t)?;
            let len = n_out * n_out;
            let mut out = Vec::with_capacity(chunk.len());
            for k in 0..chunk.len() {
                let pk = Tensor::from_vec(&[len], p.data()[k * len..(k + 1) * len].to_vec())?;
                let yk = Tensor::from_vec(&[len], y.data()[k * len..(k + 1) * len].to_vec())?;
                let (loss, _) = bce_loss(&pk, &yk)?;
                let pred = Array2::from_shape_vec((n_out, n_out), pk.data().iter().map(|&v| v as f64).collect()).unwrap();
                let target = Array2::from_shape_vec((n_out, n_out), yk.data().iter().map(|&v| v as f64).collect()).unwrap();
                let s = ssim(&pred, &target).expect("same shape");
                let q = psnr(&pred, &target).expect("same shape").value();
                out.push((loss, s, q, pred));
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let mut eval = SetEvaluation {
        loss: Vec::new(),
        ssim: Vec::new(),
        psnr: Vec::new(),
        outputs: Vec::new(),
    };
    for (l, s, q, o) in per_batch.into_iter().flatten() {
        eval.loss.push(l);
        eval.ssim.push(s);
        eval.psnr.push(q);
        eval.outputs.push(o);
    }
    Ok(eval)
}

const SHUFFLE: u64 = 0x5348_5546;
const DROPOUT: u64 = 0x4452_4f50;

/// Mini-batch Adam on the BCE loss with per-epoch validation. Shuffling is
/// seeded by `(seed, epoch)` and dropout by `(seed, step)`, so a run resumed
/// from a saved state continues the same curve.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: YNet<f32>,
    pub adam: AdamState<f32>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub report: TrainReport,
    /// Weights of the best validation-SSIM epoch so far.
    pub best: Option<YNet<f32>>,
}

impl Trainer {
    pub fn new(model: YNet<f32>, config: TrainConfig) -> Self {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        let adam = AdamState::new(config.adam, &sizes);
        let report = TrainReport {
            seed: config.seed,
            ..TrainReport::default()
        };
        Self {
            model,
            adam,
            config,
            epoch: 0,
            report,
            best: None,
        }
    }

    /// One optimizer step on the given indices; returns the batch loss.
    pub fn step(&mut self, set: &TrainSet, indices: &[usize], learning_rate: f64) -> Result<f64, TrainError> {
        let (r, t, y) = set.batch(indices);
        let dropout_seed = seed::mix(self.config.seed, &[DROPOUT, self.adam.step + 1]);
        self.model.zero_grad();
        let p = self.model.forward_train(&r, &t, dropout_seed)?;
        let (loss, grad) = bce_loss(&p, &y)?;
        if !loss.is_finite() || !p.all_finite() {
            return Err(TrainError::Diverged {
                epoch: self.epoch,
                step: self.adam.step + 1,
                loss,
            });
        }
        self.model.backward(&grad)?;
        let mut params = self.model.params_mut();
        self.adam.step(&mut params, learning_rate)?;
        Ok(loss)
    }

    /// Shuffled pass over `train`; returns the sample-weighted mean loss.
    pub fn train_epoch(&mut self, train: &TrainSet) -> Result<f64, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptySet("training"));
        }
        if self.config.batch_size == 0 {
            return Err(TrainError::BatchSize);
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(seed::mix(self.config.seed, &[SHUFFLE, self.epoch as u64])));
        let lr = self.learning_rate();
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            total += self.step(train, chunk, lr)? * chunk.len() as f64;
        }
        Ok(total / train.len() as f64)
    }

    pub fn learning_rate(&self) -> f64 {
        self.config
            .schedule
            .rate(self.config.adam.learning_rate, self.epoch, self.config.epochs)
    }

    pub fn run_epoch(&mut self, train: &TrainSet, val: &TrainSet) -> Result<EpochStats, TrainError> {
        if val.is_empty() {
            return Err(TrainError::EmptySet("validation"));
        }
        let start = Instant::now();
        let learning_rate = self.learning_rate();
        let train_loss = self.train_epoch(train)?;
        let eval = evaluate_set(&self.model, val, self.config.batch_size)?;
        let stats = EpochStats {
            epoch: self.epoch,
            learning_rate,
            train_loss,
            val_loss: eval.mean_loss(),
            val_ssim: eval.mean_ssim(),
            val_psnr: eval.mean_psnr(),
            seconds: start.elapsed().as_secs_f64(),
        };
        let r = &mut self.report;
        r.train_loss.push(stats.train_loss);
        r.val_loss.push(stats.val_loss);
        r.val_ssim.push(stats.val_ssim);
        r.val_psnr.push(stats.val_psnr);
        r.wall_seconds += stats.seconds;
        if r.best_val_ssim().map_or(true, |b| stats.val_ssim > b) {
            r.best_epoch = Some(self.epoch);
            self.best = Some(self.model.clone());
        }
        self.epoch += 1;
        Ok(stats)
    }

    /// Runs until `config.epochs` epochs are complete.
    pub fn run(
        &mut self,
        train: &TrainSet,
        val: &TrainSet,
        mut on_epoch: impl FnMut(&EpochStats, &Trainer),
    ) -> Result<(), TrainError> {
        while self.epoch < self.config.epochs {
            let stats = self.run_epoch(train, val)?;
            on_epoch(&stats, self);
        }
        Ok(())
    }

    /// Best-validation weights, or the current ones before any epoch.
    pub fn best_model(&self) -> &YNet<f32> {
        self.best.as_ref().unwrap_or(&self.model)
    }
}
