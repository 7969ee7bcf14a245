use super::{shape_err, Mode, NnError, Scalar, Tensor};

pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Rectified linear unit. The derivative at exactly zero is taken as zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relu<T> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { input: None }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(relu)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        self.infer(x)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.take().ok_or(NnError::NoCache("relu"))?;
        x.zip_map(grad, |x, g| if x > T::zero() { g } else { T::zero() })
            .map_err(|_| shape_err("relu backward", format!("{:?} vs {:?}", x.shape(), grad.shape())))
    }
}

/// Logistic sigmoid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sigmoid<T> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(sigmoid)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = self.infer(x);
        if mode == Mode::Train {
            self.output = Some(y.clone());
        }
        y
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let y = self.output.take().ok_or(NnError::NoCache("sigmoid"))?;
        y.zip_map(grad, |y, g| g * y * (T::one() - y))
            .map_err(|_| shape_err("sigmoid backward", format!("{:?} vs {:?}", y.shape(), grad.shape())))
    }
}
