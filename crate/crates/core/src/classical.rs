//! Fourier-transform ghost imaging baselines.
//!
//! The reference/test intensity cross-correlation as a function of the
//! detector offset `x_r - x_t` estimates the squared Fourier modulus of the
//! sample at spatial frequency `(x_r - x_t) / (lambda d2)`. Phase retrieval
//! then turns the modulus into an image.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::fft::{fftshift, ifftshift, Fft2};
use crate::optics::{OpticalConfig, SampleImage, SpecklePair};
use crate::seed;

#[derive(Debug, Error)]
pub enum ClassicalError {
    #[error("no speckle pairs supplied")]
    NoPairs,
    #[error("pair {index} has shape {got:?}, expected {expected:?}")]
    Geometry {
        index: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("shift radius {radius} leaves no valid rows in a {n}x{n} frame")]
    ShiftRadius { radius: usize, n: usize },
    #[error("sensing matrix is identically zero")]
    ZeroMatrix,
    #[error("iteration count must be at least 1")]
    NoIterations,
    #[error("beta must lie in (0, 1], got {0}")]
    Beta(f64),
    #[error("support {support} does not fit a {n}x{n} modulus")]
    Support { support: usize, n: usize },
    #[error("restart count must be at least 1")]
    NoRestarts,
}

/// Squared Fourier modulus sampled on an `n x n` grid with zero frequency at
/// index `(n / 2, n / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierModulus {
    pub n: usize,
    /// Frequency step between neighbouring samples, 1/m.
    pub freq_pitch: f64,
    pub values: Array2<f64>,
}

impl FourierModulus {
    /// Value at integer frequency offset `(ky, kx)` from the centre.
    pub fn at(&self, ky: isize, kx: isize) -> f64 {
        let c = (self.n / 2) as isize;
        self.values[((c + ky) as usize, (c + kx) as usize)]
    }

    /// Exact squared DFT modulus of an image zero-padded (centred) to `n x n`.
    pub fn from_image(image: &Array2<f64>, n: usize, freq_pitch: f64) -> Self {
        let (h, w) = image.dim();
        assert!(h <= n && w <= n, "image larger than modulus grid");
        let mut buf = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
        let (oy, ox) = ((n - h) / 2, (n - w) / 2);
        for ((i, j), &v) in image.indexed_iter() {
            buf[(oy + i, ox + j)] = Complex64::new(v, 0.0);
        }
        Fft2::new(n).forward(&mut buf);
        Self {
            n,
            freq_pitch,
            values: fftshift(&buf.mapv(|z| z.norm_sqr())),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Pixel size of the image this modulus describes on an `n`-point DFT.
    pub fn image_pitch(&self) -> f64 {
        1.0 / (self.n as f64 * self.freq_pitch)
    }
}

fn check_pairs(pairs: &[SpecklePair]) -> Result<usize, ClassicalError> {
    let first = pairs.first().ok_or(ClassicalError::NoPairs)?;
    let dim = first.reference.values.dim();
    for (index, p) in pairs.iter().enumerate() {
        for got in [p.reference.values.dim(), p.test.values.dim()] {
            if got != dim || got.0 != got.1 {
                return Err(ClassicalError::Geometry {
                    index,
                    got,
                    expected: dim,
                });
            }
        }
    }
    Ok(dim.0)
}

/// Correlation `<dI_r(x_t + d) dI_t(x_t)>` averaged over all in-frame pixel
/// pairs and all frames, indexed by `d` with `d = 0` at `(n / 2, n / 2)`.
/// Fluctuations are taken about each frame's spatial mean, each lag is
/// normalized by its overlap count, and negative values are clamped to zero.
pub fn fgi_correlate(pairs: &[SpecklePair], config: &OpticalConfig) -> Result<FourierModulus, ClassicalError> {
    let n = check_pairs(pairs)?;
    let m = 2 * n;
    let plan = Fft2::new(m);
    let lift = |img: &Array2<f64>| {
        let mean = img.mean().unwrap_or(0.0);
        let mut buf = Array2::from_elem((m, m), Complex64::new(0.0, 0.0));
        for ((i, j), &v) in img.indexed_iter() {
            buf[(i, j)] = Complex64::new(v - mean, 0.0);
        }
        plan.forward(&mut buf);
        buf
    };
    let mut acc = Array2::from_elem((m, m), Complex64::new(0.0, 0.0));
    for p in pairs {
        let r = lift(&p.reference.values);
        let t = lift(&p.test.values);
        // R conj(T) is the transform of sum_x dR(x + d) dT(x).
        ndarray::Zip::from(&mut acc)
            .and(&r)
            .and(&t)
            .for_each(|a, &r, &t| *a += r * t.conj());
    }
    plan.inverse(&mut acc);
    let half = (n / 2) as isize;
    let frames = pairs.len() as f64;
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        let dy = i as isize - half;
        let dx = j as isize - half;
        let overlap = ((n as isize - dy.abs()) * (n as isize - dx.abs())) as f64;
        let v = acc[(dy.rem_euclid(m as isize) as usize, dx.rem_euclid(m as isize) as usize)].re;
        (v / (overlap * frames)).max(0.0)
    });
    Ok(FourierModulus {
        n,
        freq_pitch: config.freq_pitch(),
        values,
    })
}

/// Discretized `y = A b`: row `j` is a test pixel `x_j`, column `k` a shift
/// `d_k` on the `(2r + 1) x (2r + 1)` grid, `A[j, k] = I_r(x_j + d_k)` and
/// `y[j] = I_t(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSystem {
    pub matrix: Array2<f64>,
    pub observation: Array1<f64>,
    pub shift_radius: usize,
    pub freq_pitch: f64,
}

/// Rows whose shifted samples would leave the frame are dropped, so the test
/// pixels are those at least `shift_radius` from every edge.
pub fn build_sensing_system(
    pair: &SpecklePair,
    shift_radius: usize,
    config: &OpticalConfig,
) -> Result<SensingSystem, ClassicalError> {
    let n = check_pairs(std::slice::from_ref(pair))?;
    let r = shift_radius;
    if 2 * r >= n {
        return Err(ClassicalError::ShiftRadius { radius: r, n });
    }
    let side = 2 * r + 1;
    let span = n - 2 * r;
    let mut matrix = Array2::zeros((span * span, side * side));
    let mut observation = Array1::zeros(span * span);
    let (ir, it) = (&pair.reference.values, &pair.test.values);
    for y in 0..span {
        for x in 0..span {
            let row = y * span + x;
            let (py, px) = (y + r, x + r);
            observation[row] = it[(py, px)];
            for sy in 0..side {
                for sx in 0..side {
                    matrix[(row, sy * side + sx)] = ir[(py + sy - r, px + sx - r)];
                }
            }
        }
    }
    Ok(SensingSystem {
        matrix,
        observation,
        shift_radius: r,
        freq_pitch: config.freq_pitch(),
    })
}

impl SensingSystem {
    pub fn objective(&self, b: &Array1<f64>) -> f64 {
        let r = self.matrix.dot(b) - &self.observation;
        r.dot(&r).sqrt()
    }

    /// Largest eigenvalue of `A^T A` by power iteration.
    pub fn lipschitz(&self) -> f64 {
        let cols = self.matrix.ncols();
        let mut v = Array1::from_elem(cols, 1.0 / (cols as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = self.matrix.t().dot(&self.matrix.dot(&v));
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = v.dot(&w);
            v = w / norm;
        }
        lambda
    }
}

/// Nonnegative least squares solution and the objective `||A b - y||` after
/// every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSolution {
    pub modulus: FourierModulus,
    pub objective: Vec<f64>,
}

/// `min ||A b - y||` subject to `b >= 0` by projected gradient with step `1 / L`.
pub fn solve_sensing(system: &SensingSystem, iterations: usize) -> Result<SensingSolution, ClassicalError> {
    if iterations == 0 {
        return Err(ClassicalError::NoIterations);
    }
    if system.matrix.iter().all(|&v| v == 0.0) {
        return Err(ClassicalError::ZeroMatrix);
    }
    let step = 1.0 / system.lipschitz();
    let cols = system.matrix.ncols();
    let mut b = Array1::<f64>::zeros(cols);
    let mut objective = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let residual = system.matrix.dot(&b) - &system.observation;
        let grad = system.matrix.t().dot(&residual);
        b.zip_mut_with(&grad, |v, &g| *v = (*v - step * g).max(0.0));
        objective.push(system.objective(&b));
    }
    let side = 2 * system.shift_radius + 1;
    Ok(SensingSolution {
        modulus: FourierModulus {
            n: side,
            freq_pitch: system.freq_pitch,
            values: b.into_shape_with_order((side, side)).expect("side^2 columns"),
        },
        objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseAlgorithm {
    /// Fienup hybrid input-output.
    Hio,
    /// Error reduction: zero outside the constraint set.
    ErrorReduction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HioConfig {
    pub support_n: usize,
    pub beta: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    pub algorithm: PhaseAlgorithm,
}

impl Default for HioConfig {
    fn default() -> Self {
        Self {
            support_n: 28,
            beta: 0.9,
            iterations: 1000,
            restarts: 20,
            seed: 0,
            algorithm: PhaseAlgorithm::Hio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRetrieval {
    /// `support_n x support_n`, min-max normalized to `[0, 1]`.
    pub image: SampleImage,
    /// `|| |F g| - M || / ||M||` for the returned object.
    pub residual: f64,
    /// Residual after every iteration of the selected restart.
    pub history: Vec<f64>,
    pub restart: usize,
    /// The modulus was identically zero; the image is all zeros.
    pub degenerate: bool,
}

/// Replace the magnitude of every coefficient by `magnitude`, keeping the
/// phase (zero phase where the coefficient vanishes).
pub fn project_magnitude(spectrum: &mut Array2<Complex64>, magnitude: &Array2<f64>) {
    spectrum.zip_mut_with(magnitude, |z, &m| {
        let a = z.norm();
        *z = if a > 0.0 { *z * (m / a) } else { Complex64::new(m, 0.0) };
    });
}

struct Retrieval<'a> {
    plan: &'a Fft2,
    magnitude: &'a Array2<f64>,
    mag_norm: f64,
    support: &'a Array2<bool>,
    cfg: &'a HioConfig,
}

impl Retrieval<'_> {
    fn residual(&self, g: &Array2<f64>) -> f64 {
        let mut spec = g.mapv(|v| Complex64::new(v, 0.0));
        self.plan.forward(&mut spec);
        let mut acc = 0.0;
        ndarray::Zip::from(&spec)
            .and(self.magnitude)
            .for_each(|z, &m| acc += (z.norm() - m).powi(2));
        acc.sqrt() / self.mag_norm
    }

    /// Object-domain constraint set: nonnegative inside the support, zero outside.
    fn constrain(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = g.clone();
        out.zip_mut_with(self.support, |v, &s| {
            if !s || *v < 0.0 {
                *v = 0.0;
            }
        });
        out
    }

    fn run(&self, restart: usize) -> (Array2<f64>, f64, Vec<f64>) {
        let n = self.plan.n();
        let mut rng = seed::rng(seed::mix(self.cfg.seed, &[restart as u64]));
        let mut spec = Array2::from_shape_fn((n, n), |(i, j)| {
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Complex64::from_polar(self.magnitude[(i, j)], phase)
        });
        self.plan.inverse(&mut spec);
        let mut g = spec.mapv(|z| z.re);
        let mut history = Vec::with_capacity(self.cfg.iterations);
        let beta = self.cfg.beta;
        for _ in 0..self.cfg.iterations {
            let mut spec = g.mapv(|v| Complex64::new(v, 0.0));
            self.plan.forward(&mut spec);
            project_magnitude(&mut spec, self.magnitude);
            self.plan.inverse(&mut spec);
            ndarray::Zip::from(&mut g)
                .and(&spec)
                .and(self.support)
                .for_each(|g, z, &inside| {
                    let gp = z.re;
                    *g = if inside && gp >= 0.0 {
                        gp
                    } else {
                        match self.cfg.algorithm {
                            PhaseAlgorithm::Hio => *g - beta * gp,
                            PhaseAlgorithm::ErrorReduction => 0.0,
                        }
                    };
                });
            history.push(self.residual(&self.constrain(&g)));
        }
        let object = self.constrain(&g);
        let residual = history.last().copied().unwrap_or_else(|| self.residual(&object));
        (object, residual, history)
    }
}

fn min_max(values: &Array2<f64>) -> Array2<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array2::zeros(values.dim())
    }
}

/// Phase retrieval on the full modulus grid with a centred square support.
/// Restarts run in parallel; the lowest residual wins, ties to the lower index.
pub fn hio_phase_retrieval(modulus: &FourierModulus, cfg: &HioConfig) -> Result<PhaseRetrieval, ClassicalError> {
    if cfg.iterations == 0 {
        return Err(ClassicalError::NoIterations);
    }
    if cfg.restarts == 0 {
        return Err(ClassicalError::NoRestarts);
    }
    if !(cfg.beta > 0.0 && cfg.beta <= 1.0) {
        return Err(ClassicalError::Beta(cfg.beta));
    }
    let n = modulus.n;
    if cfg.support_n == 0 || cfg.support_n > n {
        return Err(ClassicalError::Support {
            support: cfg.support_n,
            n,
        });
    }
    let pitch = modulus.image_pitch();
    if modulus.is_zero() {
        return Ok(PhaseRetrieval {
            image: SampleImage::new(Array2::zeros((cfg.support_n, cfg.support_n)), pitch)
                .expect("zero image is valid"),
            residual: 0.0,
            history: Vec::new(),
            restart: 0,
            degenerate: true,
        });
    }
    let magnitude = ifftshift(&modulus.values.mapv(|v| v.max(0.0).sqrt()));
    let mag_norm = magnitude.iter().map(|m| m * m).sum::<f64>().sqrt();
    let off = (n - cfg.support_n) / 2;
    let support = Array2::from_shape_fn((n, n), |(i, j)| {
        (off..off + cfg.support_n).contains(&i) && (off..off + cfg.support_n).contains(&j)
    });
    let plan = Fft2::new(n);
    let job = Retrieval {
        plan: &plan,
        magnitude: &magnitude,
        mag_norm,
        support: &support,
        cfg,
    };
    let runs: Vec<_> = (0..cfg.restarts).into_par_iter().map(|r| job.run(r)).collect();
    let (restart, (object, residual, history)) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .expect("at least one restart");
    let crop = object
        .slice(ndarray::s![off..off + cfg.support_n, off..off + cfg.support_n])
        .to_owned();
    Ok(PhaseRetrieval {
        image: SampleImage::new(min_max(&crop), pitch).expect("normalized image"),
        residual,
        history,
        restart,
        degenerate: false,
    })
}

/// Single-pair correlation followed by phase retrieval with default settings.
pub fn classical_pipeline(
    pair: &SpecklePair,
    config: &OpticalConfig,
    hio: &HioConfig,
) -> Result<(PhaseRetrieval, FourierModulus), ClassicalError> {
    let modulus = fgi_correlate(std::slice::from_ref(pair), config)?;
    Ok((hio_phase_retrieval(&modulus, hio)?, modulus))
}
