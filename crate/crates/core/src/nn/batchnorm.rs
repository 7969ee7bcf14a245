use super::{shape_err, Mode, NnError, Scalar, Tensor};

/// Per-channel batch normalization over `(N, H, W)` with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    /// Unbiased running variance.
    pub running_var: Vec<T>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: 0.1,
            epsilon: 1e-5,
            gamma: Tensor::param(&[channels], vec![T::one(); channels]).unwrap(),
            beta: Tensor::param(&[channels], vec![T::zero(); channels]).unwrap(),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(shape_err(
                "batchnorm",
                format!("expected {} channels, got {c}", self.channels),
            ));
        }
        Ok((n, c, h * w))
    }

    /// Evaluation mode: normalize with the running statistics.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, c, hw) = self.check(x)?;
        let mut out = x.clone();
        let eps = T::from_f64(self.epsilon);
        for ch in 0..c {
            let scale = self.gamma.data()[ch] / (self.running_var[ch] + eps).sqrt();
            let shift = self.beta.data()[ch] - self.running_mean[ch] * scale;
            for s in 0..n {
                let off = (s * c + ch) * hw;
                out.data_mut()[off..off + hw]
                    .iter_mut()
                    .for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        let (n, c, hw) = self.check(x)?;
        let count = n * hw;
        if count < 2 {
            return Err(NnError::SingletonBatch);
        }
        let m = count as f64;
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let mut inv_stds = Vec::with_capacity(c);
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for &v in &x.data()[off..off + hw] {
                    let v = v.as_f64();
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / m;
            let var = (sq / m - mean * mean).max(0.0);
            let inv_std = 1.0 / (var + self.epsilon).sqrt();
            let mom = self.momentum;
            self.running_mean[ch] = T::from_f64((1.0 - mom) * self.running_mean[ch].as_f64() + mom * mean);
            self.running_var[ch] =
                T::from_f64((1.0 - mom) * self.running_var[ch].as_f64() + mom * var * m / (m - 1.0));
            let (mean_t, inv_t) = (T::from_f64(mean), T::from_f64(inv_std));
            let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (x.data()[i] - mean_t) * inv_t;
                    xhat.data_mut()[i] = xh;
                    out.data_mut()[i] = xh * g + b;
                }
            }
            inv_stds.push(inv_t);
        }
        self.cache = Some(Cache {
            xhat,
            inv_std: inv_stds,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoCache("batchnorm"))?;
        if grad.shape() != cache.xhat.shape() {
            return Err(shape_err(
                "batchnorm backward",
                format!("{:?} vs {:?}", grad.shape(), cache.xhat.shape()),
            ));
        }
        let (n, c, hw) = self.check(grad)?;
        let m = T::from_f64((n * hw) as f64);
        let mut dx = Tensor::zeros(grad.shape());
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xh = T::zero();
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    sum_dy = sum_dy + grad.data()[i];
                    sum_dy_xh = sum_dy_xh + grad.data()[i] * cache.xhat.data()[i];
                }
            }
            self.gamma.grad_mut()[ch] = self.gamma.grad_mut()[ch] + sum_dy_xh;
            self.beta.grad_mut()[ch] = self.beta.grad_mut()[ch] + sum_dy;
            let k = self.gamma.data()[ch] * cache.inv_std[ch] / m;
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    dx.data_mut()[i] =
                        k * (m * grad.data()[i] - sum_dy - cache.xhat.data()[i] * sum_dy_xh);
                }
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Tensor<T>; 2] {
        [&self.gamma, &self.beta]
    }
}
