use super::{shape_err, Mode, NnError, Scalar, Tensor};

/// 2x2 max pooling with stride 2; odd trailing rows and columns are dropped.
/// Ties go to the first element in row-major window order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaxPool2 {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self { cache: None }
    }

    fn pool<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NnError> {
        let (n, c, h, w) = x.dims4()?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(shape_err("maxpool", format!("input {h}x{w} too small")));
        }
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let mut argmax = vec![0usize; n * c * ho * wo];
        let xd = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    let o = (plane * ho + i) * wo + j;
                    out.data_mut()[o] = xd[best];
                    argmax[o] = best;
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(Self::pool(x)?.0)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let (out, argmax) = Self::pool(x)?;
        if mode == Mode::Train {
            self.cache = Some((argmax, x.shape().to_vec()));
        }
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (argmax, shape) = self.cache.take().ok_or(NnError::NoCache("maxpool"))?;
        if grad.len() != argmax.len() {
            return Err(shape_err("maxpool backward", format!("{} vs {}", grad.len(), argmax.len())));
        }
        let mut dx = Tensor::zeros(&shape);
        for (&g, &i) in grad.data().iter().zip(argmax.iter()) {
            dx.data_mut()[i] = dx.data_mut()[i] + g;
        }
        Ok(dx)
    }
}

/// Nearest-neighbour upsampling by 2 in each spatial dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Upsample2 {
    input_shape: Option<Vec<usize>>,
}

impl Upsample2 {
    pub fn new() -> Self {
        Self { input_shape: None }
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, c, h, w) = x.dims4()?;
        let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        let od = out.data_mut();
        for plane in 0..n * c {
            for i in 0..2 * h {
                let src = &x.data()[(plane * h + i / 2) * w..(plane * h + i / 2 + 1) * w];
                let dst = &mut od[(plane * 2 * h + i) * 2 * w..(plane * 2 * h + i + 1) * 2 * w];
                for (j, v) in dst.iter_mut().enumerate() {
                    *v = src[j / 2];
                }
            }
        }
        Ok(out)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        if mode == Mode::Train {
            self.input_shape = Some(x.shape().to_vec());
        }
        self.infer(x)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self.input_shape.take().ok_or(NnError::NoCache("upsample"))?;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if grad.shape() != [n, c, 2 * h, 2 * w] {
            return Err(shape_err("upsample backward", format!("{:?}", grad.shape())));
        }
        let mut dx = Tensor::zeros(&shape);
        let gd = grad.data();
        for plane in 0..n * c {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    let o = (plane * h + i / 2) * w + j / 2;
                    dx.data_mut()[o] = dx.data_mut()[o] + gd[(plane * 2 * h + i) * 2 * w + j];
                }
            }
        }
        Ok(dx)
    }
}
