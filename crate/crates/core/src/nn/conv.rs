use rand::Rng;

use super::{shape_err, Mode, NnError, Scalar, Tensor};

/// `floor((size + 2 padding - kernel) / stride) + 1`, or `None` if the kernel
/// does not fit.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Weight initialization for convolutions; both scale with the fan-in
/// `in_channels * kernel^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// Weights and biases from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn,
    /// Weights from `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    #[default]
    He,
}

impl Init {
    pub fn as_str(self) -> &'static str {
        match self {
            Init::FanIn => "fan-in",
            Init::He => "he",
        }
    }
}

impl std::str::FromStr for Init {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fan-in" => Ok(Init::FanIn),
            "he" => Ok(Init::He),
            other => Err(format!("unknown init {other:?}, expected \"he\" or \"fan-in\"")),
        }
    }
}

/// 2-D cross-correlation with zero padding, lowered to GEMM via im2col.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, k, k]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in out.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *v = if iw >= 0 && iw < g.w as isize {
                            src[iw as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] = dst[iw as usize] + src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    /// [`Init::FanIn`] initialization.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::with_init(in_channels, out_channels, kernel, stride, padding, Init::FanIn, rng)
    }

    pub fn with_init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = match init {
            Init::FanIn => 1.0 / fan_in.sqrt(),
            Init::He => (6.0 / fan_in).sqrt(),
        };
        let weight: Vec<T> = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        let bias: Vec<T> = match init {
            Init::FanIn => (0..out_channels).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect(),
            Init::He => vec![T::zero(); out_channels],
        };
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Tensor::param(&[out_channels, in_channels, kernel, kernel], weight).unwrap(),
            bias: Tensor::param(&[out_channels], bias).unwrap(),
            input: None,
        }
    }

    pub fn output_size(&self, size: usize) -> Option<usize> {
        conv_output_size(size, self.kernel, self.stride, self.padding)
    }

    fn geometry(&self, input: &Tensor<T>) -> Result<(usize, Geometry), NnError> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.in_channels {
            return Err(shape_err(
                "conv2d",
                format!("expected {} input channels, got {c}", self.in_channels),
            ));
        }
        let ho = self.output_size(h);
        let wo = self.output_size(w);
        match (ho, wo) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok((
                n,
                Geometry {
                    c,
                    h,
                    w,
                    ho,
                    wo,
                    k: self.kernel,
                    stride: self.stride,
                    pad: self.padding,
                },
            )),
            _ => Err(shape_err(
                "conv2d",
                format!("kernel {} does not fit input {h}x{w}", self.kernel),
            )),
        }
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, g) = self.geometry(input)?;
        let (k_rows, p) = (g.rows(), g.cols());
        let m = self.out_channels;
        let in_len = g.c * g.h * g.w;
        let mut out = Tensor::zeros(&[n, m, g.ho, g.wo]);
        let mut cols = vec![T::zero(); k_rows * p];
        for s in 0..n {
            im2col(&input.data()[s * in_len..(s + 1) * in_len], &g, &mut cols);
            let y = &mut out.data_mut()[s * m * p..(s + 1) * m * p];
            for (o, row) in y.chunks_exact_mut(p).enumerate() {
                let b = self.bias.data()[o];
                row.iter_mut().for_each(|v| *v = b);
            }
            T::gemm(m, k_rows, p, T::one(), self.weight.data(), false, &cols, false, T::one(), y);
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let out = self.infer(input)?;
        if mode == Mode::Train {
            self.input = Some(input.clone());
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let input = self.input.take().ok_or(NnError::NoCache("conv2d"))?;
        let (n, g) = self.geometry(&input)?;
        let (k_rows, p) = (g.rows(), g.cols());
        let m = self.out_channels;
        if grad_out.shape() != [n, m, g.ho, g.wo] {
            return Err(shape_err(
                "conv2d backward",
                format!("grad {:?} vs output [{n}, {m}, {}, {}]", grad_out.shape(), g.ho, g.wo),
            ));
        }
        let in_len = g.c * g.h * g.w;
        let mut grad_in = Tensor::zeros(input.shape());
        let mut cols = vec![T::zero(); k_rows * p];
        let mut dcols = vec![T::zero(); k_rows * p];
        let weight = self.weight.data().to_vec();
        for s in 0..n {
            let dy = &grad_out.data()[s * m * p..(s + 1) * m * p];
            im2col(&input.data()[s * in_len..(s + 1) * in_len], &g, &mut cols);
            T::gemm(m, p, k_rows, T::one(), dy, false, &cols, true, T::one(), self.weight.grad_mut());
            let db = self.bias.grad_mut();
            for (o, row) in dy.chunks_exact(p).enumerate() {
                db[o] = db[o] + row.iter().copied().sum::<T>();
            }
            T::gemm(k_rows, m, p, T::one(), &weight, true, dy, false, T::zero(), &mut dcols);
            col2im(&dcols, &g, &mut grad_in.data_mut()[s * in_len..(s + 1) * in_len]);
        }
        Ok(grad_in)
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Tensor<T>; 2] {
        [&self.weight, &self.bias]
    }
}
