use rand::Rng;

use super::{shape_err, Mode, NnError, Scalar, Tensor};
use crate::seed;

/// Inverted-dropout mask of `len` values: each is `0` with probability `rate`
/// and `1 / (1 - rate)` otherwise.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, seed_: u64) -> Result<Vec<T>, NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::DropoutRate(rate));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mut rng = seed::rng(seed_);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect())
}

/// Element-wise dropout; identity in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout<T> {
    pub rate: f64,
    seed: u64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::DropoutRate(rate));
        }
        Ok(Self {
            rate,
            seed: 0,
            mask: None,
        })
    }

    /// Seed for the next training-mode mask.
    pub fn reseed(&mut self, seed_: u64) {
        self.seed = seed_;
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        if mode == Mode::Eval || self.rate == 0.0 {
            if mode == Mode::Train {
                self.mask = Some(vec![T::one(); x.len()]);
            }
            return Ok(x.clone());
        }
        let mask = dropout_mask::<T>(x.len(), self.rate, self.seed)?;
        let mut out = x.clone();
        out.data_mut().iter_mut().zip(mask.iter()).for_each(|(v, &m)| *v = *v * m);
        self.mask = Some(mask);
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mask = self.mask.take().ok_or(NnError::NoCache("dropout"))?;
        if mask.len() != grad.len() {
            return Err(shape_err("dropout backward", format!("{} vs {}", mask.len(), grad.len())));
        }
        let mut out = grad.clone();
        out.data_mut().iter_mut().zip(mask.iter()).for_each(|(v, &m)| *v = *v * m);
        Ok(out)
    }
}
