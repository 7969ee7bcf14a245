use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use super::{YNet, YNetError};
use crate::dataset::{derive_seed, DatasetSample};
use crate::metrics::ssim;
use crate::optics::{IlluminationMode, OpticsError, SampleImage, SpeckleSimulator};

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("repetition count must be at least 2")]
    Repetitions,
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Model(#[from] YNetError),
}

/// Outputs for repeated dynamic exposures of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityResult {
    pub sample_id: u64,
    pub seeds: Vec<u64>,
    pub outputs: Vec<SampleImage>,
    /// `ssim_matrix[(i, j)] = SSIM(output_i, output_j)`.
    pub ssim_matrix: Array2<f64>,
    /// SSIM of each output against the sample.
    pub target_ssim: Vec<f64>,
}

impl StabilityResult {
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.outputs.len();
        let mut sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                sum += self.ssim_matrix[(i, j)];
            }
        }
        sum / (n * (n - 1) / 2) as f64
    }

    pub fn mean_target_ssim(&self) -> f64 {
        self.target_ssim.iter().sum::<f64>() / self.target_ssim.len() as f64
    }
}

/// Simulates `repetitions` dynamic pairs of `sample`, runs each through the
/// model and compares the outputs pairwise.
pub fn stability_experiment(
    model: &YNet<f32>,
    simulator: &SpeckleSimulator,
    sample: &DatasetSample,
    repetitions: usize,
    base_seed: u64,
) -> Result<StabilityResult, StabilityError> {
    if repetitions < 2 {
        return Err(StabilityError::Repetitions);
    }
    let transmittance = simulator.transmittance(&sample.image)?;
    let seeds: Vec<u64> = (0..repetitions as u64)
        .map(|rep| derive_seed(base_seed, sample.sample_id, rep, IlluminationMode::Dynamic))
        .collect();
    let pitch = sample.image.pitch;
    let outputs = seeds
        .par_iter()
        .map(|&s| -> Result<SampleImage, StabilityError> {
            let pair = simulator.simulate_with_transmittance(&transmittance, s)?;
            Ok(model.predict(&pair.reference, &pair.test, pitch)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = outputs.len();
    let mut matrix = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                1.0
            } else {
                ssim(&outputs[i].values, &outputs[j].values).expect("same shape")
            };
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    let target_ssim = outputs
        .iter()
        .map(|o| ssim(&o.values, &sample.image.values).expect("same shape"))
        .collect();
    Ok(StabilityResult {
        sample_id: sample.sample_id,
        seeds,
        outputs,
        ssim_matrix: matrix,
        target_ssim,
    })
}
