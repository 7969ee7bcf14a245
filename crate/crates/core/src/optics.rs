//! Two-arm pseudo-thermal speckle simulation.
//!
//! A unit-amplitude disc with delta-correlated random phase stands in for the
//! rotating ground glass. The reference arm propagates it over `d1 + d2`
//! straight to its detector; the test arm propagates over `d1`, multiplies by
//! the sample transmittance and propagates the remaining `d2`. Both detectors
//! see the same source realization.
//!
//! Fields live on a periodic computational window of
//! `sim_grid_n * pad_factor` cells. The physical window (`sim_grid_n` cells,
//! where the detectors sit) is the centre of it; the surrounding zero border
//! absorbs diffraction that would otherwise wrap around. Because the window is
//! periodic, Fresnel propagation by transfer function is exactly unitary and
//! obeys `H(a) H(b) = H(a + b)` for every field.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::fft::Fft2;
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("invalid optical configuration: {0}")]
    InvalidConfig(String),
    #[error("source aperture {diameter:e} m is smaller than one grid cell ({pitch:e} m)")]
    DegenerateSource { diameter: f64, pitch: f64 },
    #[error("propagation distance must be >= 0, got {0}")]
    NegativeDistance(f64),
    #[error("sample extent {sample:e} m exceeds the field window {window:e} m")]
    SampleTooLarge { sample: f64, window: f64 },
    #[error("detector window of {needed} cells exceeds the {available}-cell field grid")]
    DetectorOutsideGrid { needed: usize, available: usize },
    #[error("field pitch {field:e} m does not match configured simulation pitch {config:e} m")]
    PitchMismatch { field: f64, config: f64 },
    #[error("image mean must be positive for g2 normalization")]
    NonPositiveMean,
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

/// Geometry of the two-arm setup and of the simulation grids. Lengths in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalConfig {
    pub wavelength: f64,
    /// Source to sample.
    pub d1: f64,
    /// Sample to test detector.
    pub d2: f64,
    pub source_diameter: f64,
    /// Cells across the physical simulation window.
    pub sim_grid_n: usize,
    pub sim_pitch: f64,
    pub detector_n: usize,
    pub detector_pitch: f64,
    /// Computational window = `sim_grid_n * pad_factor` cells.
    pub pad_factor: usize,
}

impl Default for OpticalConfig {
    /// 532 nm, d1 = 5 cm, d2 = 20.1 cm, 1 mm source, 64 x 64 detector with
    /// 46.88 um pixels, simulated on a 128-cell grid at half the pixel pitch.
    fn default() -> Self {
        Self {
            wavelength: 532e-9,
            d1: 0.05,
            d2: 0.201,
            source_diameter: 1e-3,
            sim_grid_n: 128,
            sim_pitch: 23.44e-6,
            detector_n: 64,
            detector_pitch: 46.88e-6,
            pad_factor: 2,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<(), OpticsError> {
        let positive = [
            ("wavelength", self.wavelength),
            ("d1", self.d1),
            ("d2", self.d2),
            ("source_diameter", self.source_diameter),
            ("sim_pitch", self.sim_pitch),
            ("detector_pitch", self.detector_pitch),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(OpticsError::InvalidConfig(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.sim_grid_n == 0 || self.detector_n == 0 || self.pad_factor == 0 {
            return Err(OpticsError::InvalidConfig(
                "sim_grid_n, detector_n and pad_factor must be >= 1".into(),
            ));
        }
        self.bin_ratio()?;
        let detector_extent = self.detector_n as f64 * self.detector_pitch;
        let sim_extent = self.sim_grid_n as f64 * self.sim_pitch;
        if detector_extent > sim_extent * (1.0 + 1e-9) {
            return Err(OpticsError::InvalidConfig(format!(
                "detector extent {detector_extent:e} m exceeds simulation window {sim_extent:e} m"
            )));
        }
        Ok(())
    }

    /// Integer number of simulation cells per detector pixel along one axis.
    pub fn bin_ratio(&self) -> Result<usize, OpticsError> {
        let ratio = self.detector_pitch / self.sim_pitch;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * rounded {
            return Err(OpticsError::InvalidConfig(format!(
                "detector_pitch / sim_pitch = {ratio} is not an integer >= 1"
            )));
        }
        Ok(rounded as usize)
    }

    pub fn field_grid_n(&self) -> usize {
        self.sim_grid_n * self.pad_factor
    }

    /// Spatial-frequency spacing of the correlation map, `detector_pitch / (wavelength * d2)`.
    pub fn freq_pitch(&self) -> f64 {
        self.detector_pitch / (self.wavelength * self.d2)
    }

    /// Expected speckle grain at the reference detector, `wavelength * (d1 + d2) / source_diameter`.
    pub fn speckle_size(&self) -> f64 {
        self.wavelength * (self.d1 + self.d2) / self.source_diameter
    }
}

/// Sampled complex amplitude on a square grid centred on the optical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub pitch: f64,
    pub values: Array2<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid_n: usize, pitch: f64) -> Self {
        Self {
            pitch,
            values: Array2::zeros((grid_n, grid_n)),
        }
    }

    pub fn grid_n(&self) -> usize {
        self.values.nrows()
    }

    /// Sum of `|E|^2 * pitch^2`.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.pitch * self.pitch
    }
}

/// Sample transmittance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleImage {
    pub pitch: f64,
    pub values: Array2<f64>,
}

impl SampleImage {
    pub fn new(values: Array2<f64>, pitch: f64) -> Result<Self, OpticsError> {
        if values.nrows() != values.ncols() || values.is_empty() {
            return Err(OpticsError::InvalidImage(format!(
                "sample must be square and non-empty, got {:?}",
                values.dim()
            )));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(OpticsError::InvalidImage(format!("bad pitch {pitch}")));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OpticsError::InvalidImage(format!(
                "transmittance {v} outside [0, 1]"
            )));
        }
        Ok(Self { pitch, values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn extent(&self) -> f64 {
        self.n() as f64 * self.pitch
    }
}

/// Detector intensity, non-negative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    pub pitch: f64,
    pub values: Array2<f64>,
}

impl IntensityImage {
    pub fn new(values: Array2<f64>, pitch: f64) -> Result<Self, OpticsError> {
        if values.nrows() != values.ncols() || values.is_empty() {
            return Err(OpticsError::InvalidImage(format!(
                "intensity image must be square and non-empty, got {:?}",
                values.dim()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(OpticsError::InvalidImage(format!("intensity {v} is not >= 0")));
        }
        Ok(Self { pitch, values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn mean(&self) -> f64 {
        self.values.mean().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IlluminationMode {
    /// One fixed illumination: the forward operator is deterministic.
    Static,
    /// Fresh illumination for every exposure.
    Dynamic,
}

impl IlluminationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            IlluminationMode::Static => "static",
            IlluminationMode::Dynamic => "dynamic",
        }
    }
}

impl std::str::FromStr for IlluminationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Self::Static),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(format!("unknown illumination mode {other:?} (static|dynamic)")),
        }
    }
}

impl std::fmt::Display for IlluminationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reference/test intensities produced from one source realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecklePair {
    pub reference: IntensityImage,
    pub test: IntensityImage,
    pub seed: u64,
    pub sample_id: u64,
    pub mode: IlluminationMode,
}

/// Unit-amplitude disc of random phase on the padded computational window.
pub fn make_source_field(config: &OpticalConfig, seed: u64) -> Result<ComplexField, OpticsError> {
    config.validate()?;
    let n = config.field_grid_n();
    let mask = aperture_mask(config)?;
    let mut rng = seed::rng(seed);
    let mut field = ComplexField::zeros(n, config.sim_pitch);
    for (v, &inside) in field.values.iter_mut().zip(mask.iter()) {
        if inside {
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            *v = Complex64::from_polar(1.0, phase);
        }
    }
    Ok(field)
}

/// Cells of the computational window whose centres lie inside the source disc.
pub fn aperture_mask(config: &OpticalConfig) -> Result<Array2<bool>, OpticsError> {
    if config.source_diameter < config.sim_pitch {
        return Err(OpticsError::DegenerateSource {
            diameter: config.source_diameter,
            pitch: config.sim_pitch,
        });
    }
    let n = config.field_grid_n();
    let r2 = (config.source_diameter / 2.0).powi(2);
    let c = cell_centers(n, config.sim_pitch);
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        c[i] * c[i] + c[j] * c[j] <= r2
    }))
}

/// Cell-centre coordinates of a grid centred on the axis.
fn cell_centers(n: usize, pitch: f64) -> Vec<f64> {
    (0..n)
        .map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * pitch)
        .collect()
}

/// Fresnel transfer function `exp(ikz) exp(-i pi lambda z (fx^2 + fy^2))` in
/// FFT (unshifted) order.
pub fn transfer_function(n: usize, pitch: f64, wavelength: f64, distance: f64) -> Array2<Complex64> {
    let freqs: Vec<f64> = (0..n)
        .map(|i| {
            let k = if i < n.div_ceil(2) { i as f64 } else { i as f64 - n as f64 };
            k / (n as f64 * pitch)
        })
        .collect();
    let piston = 2.0 * PI / wavelength * distance;
    let chirp = PI * wavelength * distance;
    Array2::from_shape_fn((n, n), |(i, j)| {
        let f2 = freqs[i] * freqs[i] + freqs[j] * freqs[j];
        Complex64::from_polar(1.0, piston - chirp * f2)
    })
}

/// Free-space Fresnel propagation over `distance` on the field's own grid.
pub fn propagate(
    field: &ComplexField,
    distance: f64,
    config: &OpticalConfig,
) -> Result<ComplexField, OpticsError> {
    config.validate()?;
    if !(distance >= 0.0) {
        return Err(OpticsError::NegativeDistance(distance));
    }
    if distance == 0.0 {
        return Ok(field.clone());
    }
    let n = field.grid_n();
    let h = transfer_function(n, field.pitch, config.wavelength, distance);
    Ok(propagate_with(field, &h, &Fft2::new(n)))
}

fn propagate_with(field: &ComplexField, h: &Array2<Complex64>, plan: &Fft2) -> ComplexField {
    let mut values = field.values.clone();
    plan.forward(&mut values);
    values *= h;
    plan.inverse(&mut values);
    ComplexField {
        pitch: field.pitch,
        values,
    }
}

/// Nearest-neighbour resampling of the sample onto the field grid, centred,
/// with an opaque surround.
pub fn transmittance_on_grid(
    sample: &SampleImage,
    grid_n: usize,
    pitch: f64,
) -> Result<Array2<f64>, OpticsError> {
    let window = grid_n as f64 * pitch;
    let extent = sample.extent();
    if extent > window * (1.0 + 1e-12) {
        return Err(OpticsError::SampleTooLarge {
            sample: extent,
            window,
        });
    }
    let c = cell_centers(grid_n, pitch);
    let n_s = sample.n();
    let index: Vec<Option<usize>> = c
        .iter()
        .map(|&x| {
            let u = (x + extent / 2.0) / sample.pitch;
            (u >= 0.0 && u < n_s as f64).then(|| (u.floor() as usize).min(n_s - 1))
        })
        .collect();
    Ok(Array2::from_shape_fn((grid_n, grid_n), |(i, j)| {
        match (index[i], index[j]) {
            (Some(a), Some(b)) => sample.values[(a, b)],
            _ => 0.0,
        }
    }))
}

pub fn apply_transmittance(
    field: &ComplexField,
    sample: &SampleImage,
) -> Result<ComplexField, OpticsError> {
    let t = transmittance_on_grid(sample, field.grid_n(), field.pitch)?;
    let mut out = field.clone();
    out.values.zip_mut_with(&t, |e, &t| *e *= t);
    Ok(out)
}

/// `|E|^2` over the central detector window, mean-binned into detector pixels.
pub fn detect(field: &ComplexField, config: &OpticalConfig) -> Result<IntensityImage, OpticsError> {
    let ratio = config.bin_ratio()?;
    if ((field.pitch - config.sim_pitch) / config.sim_pitch).abs() > 1e-9 {
        return Err(OpticsError::PitchMismatch {
            field: field.pitch,
            config: config.sim_pitch,
        });
    }
    let n = field.grid_n();
    let region = config.detector_n * ratio;
    if region > n {
        return Err(OpticsError::DetectorOutsideGrid {
            needed: region,
            available: n,
        });
    }
    let start = (n - region) / 2;
    let scale = 1.0 / (ratio * ratio) as f64;
    let values = Array2::from_shape_fn((config.detector_n, config.detector_n), |(p, q)| {
        let mut acc = 0.0;
        for a in 0..ratio {
            for b in 0..ratio {
                acc += field.values[(start + p * ratio + a, start + q * ratio + b)].norm_sqr();
            }
        }
        acc * scale
    });
    Ok(IntensityImage {
        pitch: field.pitch * ratio as f64,
        values,
    })
}

/// Pre-planned simulator for many pairs sharing one geometry.
#[derive(Debug, Clone)]
pub struct SpeckleSimulator {
    config: OpticalConfig,
    plan: Fft2,
    aperture: Array2<bool>,
    h_d1: Array2<Complex64>,
    h_d2: Array2<Complex64>,
    h_total: Array2<Complex64>,
}

impl SpeckleSimulator {
    pub fn new(config: OpticalConfig) -> Result<Self, OpticsError> {
        config.validate()?;
        let n = config.field_grid_n();
        let aperture = aperture_mask(&config)?;
        let tf = |d| transfer_function(n, config.sim_pitch, config.wavelength, d);
        Ok(Self {
            plan: Fft2::new(n),
            aperture,
            h_d1: tf(config.d1),
            h_d2: tf(config.d2),
            h_total: tf(config.d1 + config.d2),
            config,
        })
    }

    pub fn config(&self) -> &OpticalConfig {
        &self.config
    }

    /// Resamples a sample onto this simulator's computational grid.
    pub fn transmittance(&self, sample: &SampleImage) -> Result<Array2<f64>, OpticsError> {
        transmittance_on_grid(sample, self.config.field_grid_n(), self.config.sim_pitch)
    }

    pub fn simulate(&self, sample: &SampleImage, seed: u64) -> Result<SpecklePair, OpticsError> {
        let t = self.transmittance(sample)?;
        self.simulate_with_transmittance(&t, seed)
    }

    pub fn simulate_with_transmittance(
        &self,
        transmittance: &Array2<f64>,
        seed: u64,
    ) -> Result<SpecklePair, OpticsError> {
        let n = self.config.field_grid_n();
        if transmittance.dim() != (n, n) {
            return Err(OpticsError::InvalidImage(format!(
                "transmittance grid {:?} does not match {n}x{n}",
                transmittance.dim()
            )));
        }
        let mut rng = seed::rng(seed);
        let mut spectrum = Array2::<Complex64>::zeros((n, n));
        for (v, &inside) in spectrum.iter_mut().zip(self.aperture.iter()) {
            if inside {
                let phase: f64 = rng.gen_range(0.0..2.0 * PI);
                *v = Complex64::from_polar(1.0, phase);
            }
        }
        self.plan.forward(&mut spectrum);

        let mut reference = &spectrum * &self.h_total;
        self.plan.inverse(&mut reference);

        let mut test = &spectrum * &self.h_d1;
        self.plan.inverse(&mut test);
        test.zip_mut_with(transmittance, |e, &t| *e *= t);
        self.plan.forward(&mut test);
        test *= &self.h_d2;
        self.plan.inverse(&mut test);

        let pitch = self.config.sim_pitch;
        Ok(SpecklePair {
            reference: detect(&ComplexField { pitch, values: reference }, &self.config)?,
            test: detect(&ComplexField { pitch, values: test }, &self.config)?,
            seed,
            sample_id: 0,
            mode: IlluminationMode::Dynamic,
        })
    }
}

/// One conjugate speckle pair for `sample` from the source realization `seed`.
pub fn simulate_pair(
    sample: &SampleImage,
    config: &OpticalConfig,
    seed: u64,
) -> Result<SpecklePair, OpticsError> {
    SpeckleSimulator::new(*config)?.simulate(sample, seed)
}

/// Normalized intensity autocorrelation on lags `-max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Map {
    pub max_lag: usize,
    /// `(2 max_lag + 1)^2`, zero lag at `(max_lag, max_lag)`.
    pub values: Array2<f64>,
}

impl G2Map {
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let c = self.max_lag as isize;
        self.values[((c + dx) as usize, (c + dy) as usize)]
    }

    pub fn peak(&self) -> f64 {
        self.at(0, 0)
    }

    /// Full width (in pixels) of `g2 - 1` at half of its zero-lag value,
    /// averaged over the four axis directions with linear interpolation.
    pub fn correlation_width(&self) -> f64 {
        let level = (self.peak() + 1.0) / 2.0;
        let dirs = [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)];
        let mut total = 0.0;
        for (sx, sy) in dirs {
            let mut crossing = self.max_lag as f64;
            for k in 1..=self.max_lag as isize {
                let prev = self.at(sx * (k - 1), sy * (k - 1));
                let cur = self.at(sx * k, sy * k);
                if cur <= level {
                    crossing = (k - 1) as f64 + (prev - level) / (prev - cur);
                    break;
                }
            }
            total += crossing;
        }
        2.0 * total / dirs.len() as f64
    }
}

/// `g2(d) = <I(x) I(x + d)>_x / <I>^2` over every in-frame pixel pair.
pub fn autocorrelation_g2(image: &IntensityImage) -> Result<G2Map, OpticsError> {
    autocorrelation_g2_lags(image, image.n() - 1)
}

pub fn autocorrelation_g2_lags(image: &IntensityImage, max_lag: usize) -> Result<G2Map, OpticsError> {
    let n = image.n();
    let max_lag = max_lag.min(n - 1);
    let mean = image.mean();
    if !(mean > 0.0) {
        return Err(OpticsError::NonPositiveMean);
    }
    let v = &image.values;
    let m = 2 * max_lag + 1;
    let lag = |k: usize| k as isize - max_lag as isize;
    let values = Array2::from_shape_fn((m, m), |(a, b)| {
        let (dx, dy) = (lag(a), lag(b));
        let xr = dx.max(0) as usize..(n as isize + dx.min(0)) as usize;
        let yr = dy.max(0) as usize..(n as isize + dy.min(0)) as usize;
        let count = (xr.len() * yr.len()) as f64;
        let mut acc = 0.0;
        for x in xr {
            let x2 = (x as isize - dx) as usize;
            for y in yr.clone() {
                acc += v[(x, y)] * v[(x2, (y as isize - dy) as usize)];
            }
        }
        acc / count / (mean * mean)
    });
    Ok(G2Map { max_lag, values })
}
