//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 6 to 8 train two desk-scale models. Datasets and training state
//! are cached under `target/acceptance-cache`, keyed by a hash of the MNIST
//! file and every configuration value, so later runs only evaluate. An
//! interrupted run resumes from its last completed epoch.
//!
//! Positional arguments select criteria (`cargo test --test acceptance -- 1 4`).
//! Environment:
//! * `YNET_MNIST`: IDX image file (default `data/mnist-images-idx3-ubyte`).
//! * `ACCEPTANCE_RERUN_EPOCHS`: epochs retrained from scratch for the
//!   loss-curve comparison of criterion 9 (default 1, `40` for a full rerun).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use ynet_gi::classical::{classical_pipeline, fgi_correlate, hio_phase_retrieval, FourierModulus, HioConfig};
use ynet_gi::dataset::{generate_dataset, load_idx_images, read_all, DatasetRecord, DatasetSample};
use ynet_gi::metrics::{psnr, ssim};
use ynet_gi::nn::{bce_loss, Init, LayerSpec, Mode, Sequential, Tensor};
use ynet_gi::optics::{autocorrelation_g2_lags, propagate, SpeckleSimulator};
use ynet_gi::seed;
use ynet_gi::ynet::{
    fnv1a64, load_checkpoint, load_training_state, save_checkpoint, save_training_state,
    stability_experiment, TrainConfig, TrainSet, Trainer, YNet, YNetConfig,
};
use ynet_gi::{ComplexField, IlluminationMode, OpticalConfig, SampleImage, SpecklePair};

/// Bumped whenever training or data generation changes behaviour.
const CACHE_VERSION: u32 = 1;
const TRAIN_PAIRS: usize = 4000;
const VALIDATION_PAIRS: usize = 500;
const TEST_PAIRS: usize = 100;
const EPOCHS: usize = 40;
const DATA_SEED: u64 = 1;
const MODEL_SEED: u64 = 1;
const TRAIN_SEED: u64 = 1;
const HIO_SEED: u64 = 1;
const STABILITY_SEED: u64 = 2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn say(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn digest_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn pearson(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma).powi(2);
        bb += (y - mb).powi(2);
    }
    ab / (aa * bb).sqrt()
}

// ---------------------------------------------------------------- 1

fn speckle_statistics() -> (Outcome, Vec<u8>) {
    let start = Instant::now();
    let cfg = OpticalConfig::default();
    let sim = SpeckleSimulator::new(cfg).unwrap();
    let n = cfg.field_grid_n();
    let t = Array2::ones((n, n));
    let frames = 10;
    let stats: Vec<(f64, f64)> = (0..frames)
        .into_par_iter()
        .map(|s| {
            let pair = sim.simulate_with_transmittance(&t, 1000 + s).unwrap();
            let g = autocorrelation_g2_lags(&pair.reference, 8).unwrap();
            (g.peak(), g.correlation_width())
        })
        .collect();
    let peak = stats.iter().map(|s| s.0).sum::<f64>() / frames as f64;
    let width = stats.iter().map(|s| s.1).sum::<f64>() / frames as f64;
    let expected = cfg.wavelength * (cfg.d1 + cfg.d2) / cfg.source_diameter / cfg.detector_pitch;
    let secs = start.elapsed().as_secs_f64();
    let rel = (width - expected).abs() / expected;
    let pass = (1.7..=2.0).contains(&peak) && rel <= 0.3 && secs < 10.0;
    let detail = format!(
        "g2(0) = {peak:.4} (1.7..2.0), half-width {width:.3} px vs {expected:.3} px ({:.1}% of 30%), {secs:.1} s of 10 s",
        rel * 100.0
    );
    (outcome(pass, detail), digest_f64(&[peak, width]))
}

// ---------------------------------------------------------------- 2

fn physics_invariants() -> (Outcome, Vec<u8>) {
    let start = Instant::now();
    let cfg = OpticalConfig::default();
    let n = cfg.field_grid_n();
    let cases: Vec<(f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(seed::mix(77, &[k]));
            let values = Array2::from_shape_fn((n, n), |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let f = ComplexField { pitch: cfg.sim_pitch, values };
            let (a, b) = (rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3));
            let g = propagate(&f, a + b, &cfg).unwrap();
            let energy = (g.energy() - f.energy()).abs() / f.energy();
            let two = propagate(&propagate(&f, a, &cfg).unwrap(), b, &cfg).unwrap();
            let scale = g.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let semi = g.values.iter().zip(two.values.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale;
            (energy, semi)
        })
        .collect();
    let energy = cases.iter().map(|c| c.0).fold(0.0, f64::max);
    let semi = cases.iter().map(|c| c.1).fold(0.0, f64::max);
    let sim = SpeckleSimulator::new(cfg).unwrap();
    let ones = Array2::ones((n, n));
    let mut arms: f64 = 0.0;
    for s in 0..8 {
        let pair = sim.simulate_with_transmittance(&ones, s).unwrap();
        {
            let scale = pair.reference.values.iter().copied().fold(0.0, f64::max);
            let d = pair
                .reference
                .values
                .iter()
                .zip(pair.test.values.iter())
                .map(|(r, t)| (r - t).abs())
                .fold(0.0, f64::max);
            arms = arms.max(d / scale);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = energy < 1e-6 && semi < 1e-6 && arms < 1e-6 && secs < 30.0;
    let detail = format!(
        "100 cases: max energy error {energy:.2e}, max semigroup error {semi:.2e}; t = 1 arm difference {arms:.2e} (all < 1e-6), {secs:.1} s of 30 s"
    );
    (outcome(pass, detail), digest_f64(&[energy, semi, arms]))
}

// ---------------------------------------------------------------- 3

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn layer_error(specs: &[LayerSpec], shape: &[usize], s: u64) -> f64 {
    let mut rng = seed::rng(s);
    let mut net = Sequential::<f64>::build(specs, &mut rng).unwrap();
    net.reseed_dropout(s);
    let x = random_tensor(shape, &mut rng);
    let y = net.forward(&x, Mode::Train).unwrap();
    let w = random_tensor(y.shape(), &mut rng);
    net.zero_grad();
    let dx = net.backward(&w).unwrap();
    let objective = |net: &Sequential<f64>, x: &Tensor<f64>| -> f64 {
        let y = net.clone().forward(x, Mode::Train).unwrap();
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let (mut a, mut b) = (x.clone(), x.clone());
        a.data_mut()[i] += h;
        b.data_mut()[i] -= h;
        worst = worst.max(rel_err(dx.data()[i], (objective(&net, &a) - objective(&net, &b)) / (2.0 * h)));
    }
    let grads: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad().unwrap().to_vec()).collect();
    for (k, g) in grads.iter().enumerate() {
        for (i, &gi) in g.iter().enumerate() {
            let (mut a, mut b) = (net.clone(), net.clone());
            a.params_mut()[k].data_mut()[i] += h;
            b.params_mut()[k].data_mut()[i] -= h;
            worst = worst.max(rel_err(gi, (objective(&a, &x) - objective(&b, &x)) / (2.0 * h)));
        }
    }
    worst
}

fn end_to_end_error() -> f64 {
    let cfg = YNetConfig {
        encoder_channels: [2, 2, 2, 2, 2],
        decoder_channels: [2, 2, 2, 2, 2, 2, 2, 2, 2, 1],
        init: Init::FanIn,
        ..YNetConfig::desk()
    };
    let mut model = YNet::<f64>::build(&cfg, 12).unwrap();
    let mut rng = seed::rng(13);
    let r = Tensor::from_vec(&[2, 1, 64, 64], (0..8192).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let t = Tensor::from_vec(&[2, 1, 64, 64], (0..8192).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let y = Tensor::from_vec(&[2, 1, 28, 28], (0..1568).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let loss = |m: &YNet<f64>| {
        let mut m = m.clone();
        let p = m.forward_train(&r, &t, 99).unwrap();
        bce_loss(&p, &y).unwrap().0
    };
    model.zero_grad();
    let p = model.forward_train(&r, &t, 99).unwrap();
    model.backward(&bce_loss(&p, &y).unwrap().1).unwrap();
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut index: Vec<(usize, usize)> = sizes.iter().enumerate().flat_map(|(k, &n)| (0..n).map(move |i| (k, i))).collect();
    index.shuffle(&mut rng);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for &(k, i) in index.iter().take(100) {
        let analytic = model.params()[k].grad().unwrap()[i];
        let (mut a, mut b) = (model.clone(), model.clone());
        a.params_mut()[k].data_mut()[i] += h;
        b.params_mut()[k].data_mut()[i] -= h;
        let fd = (loss(&a) - loss(&b)) / (2.0 * h);
        worst = worst.max((analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6));
    }
    worst
}

fn gradient_suite() -> (Outcome, Vec<u8>) {
    let start = Instant::now();
    let conv = |i, o, k, s, p| LayerSpec::Conv {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
    };
    let cases: Vec<(&str, Vec<LayerSpec>, Vec<usize>)> = vec![
        ("conv", vec![conv(2, 3, 4, 1, 1)], vec![2, 2, 7, 7]),
        ("conv/s2", vec![conv(2, 2, 4, 2, 1)], vec![1, 2, 8, 8]),
        ("conv/p3", vec![conv(1, 2, 4, 1, 3)], vec![2, 1, 5, 5]),
        ("batchnorm", vec![LayerSpec::BatchNorm { channels: 3 }], vec![2, 3, 4, 4]),
        ("maxpool", vec![LayerSpec::MaxPool], vec![2, 2, 5, 5]),
        ("upsample", vec![LayerSpec::Upsample], vec![2, 2, 3, 3]),
        ("dropout", vec![LayerSpec::Dropout { rate: 0.6 }], vec![1, 2, 4, 4]),
        ("relu", vec![LayerSpec::Relu], vec![1, 2, 4, 4]),
        ("sigmoid", vec![LayerSpec::Sigmoid], vec![1, 2, 4, 4]),
    ];
    let mut errors = Vec::new();
    let mut worst_name = "";
    let mut worst: f64 = 0.0;
    for (name, specs, shape) in &cases {
        let e = layer_error(specs, shape, 17);
        if e >= worst {
            worst = e;
            worst_name = name;
        }
        errors.push(e);
    }
    // BCE against its own central difference.
    let mut rng = seed::rng(5);
    let p = Tensor::from_vec(&[16], (0..16).map(|_| rng.gen_range(0.05..0.95)).collect()).unwrap();
    let q = Tensor::from_vec(&[16], (0..16).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let g = bce_loss(&p, &q).unwrap().1;
    let mut bce: f64 = 0.0;
    for i in 0..16 {
        let (mut a, mut b) = (p.clone(), p.clone());
        a.data_mut()[i] += 1e-6;
        b.data_mut()[i] -= 1e-6;
        bce = bce.max(rel_err(g.data()[i], (bce_loss(&a, &q).unwrap().0 - bce_loss(&b, &q).unwrap().0) / 2e-6));
    }
    errors.push(bce);
    let e2e = end_to_end_error();
    errors.push(e2e);
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && bce < 1e-4 && e2e < 1e-3 && secs < 120.0;
    let detail = format!(
        "{} layers, worst {worst:.2e} ({worst_name}) of 1e-4; bce {bce:.2e}; end-to-end on 100 parameters {e2e:.2e} of 1e-3; {secs:.1} s of 120 s",
        cases.len()
    );
    (outcome(pass, detail), digest_f64(&errors))
}

// ---------------------------------------------------------------- 4

fn metric_oracles() -> (Outcome, Vec<u8>) {
    let start = Instant::now();
    let fixture = |s: u64| {
        let mut rng = seed::rng(s);
        Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..1.0))
    };
    let mut worst: f64 = 0.0;
    let mut values = Vec::new();
    for k in 0..4 {
        let (u, v) = (fixture(2 * k), fixture(2 * k + 1));
        let n = 64.0f64;
        let (mu, mv) = (u.sum() / n, v.sum() / n);
        let su = u.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / n;
        let sv = v.iter().map(|b| (b - mv).powi(2)).sum::<f64>() / n;
        let suv = u.iter().zip(v.iter()).map(|(a, b)| (a - mu) * (b - mv)).sum::<f64>() / n;
        let (c1, c2) = (1e-4, 9e-4);
        let direct = (2.0 * mu * mv + c1) * (2.0 * suv + c2) / ((mu * mu + mv * mv + c1) * (su + sv + c2));
        let mse = u.iter().zip(v.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let direct_psnr = 10.0 * (1.0 / mse).log10();
        let (s, p) = (ssim(&u, &v).unwrap(), psnr(&u, &v).unwrap().value());
        worst = worst.max((s - direct).abs()).max((p - direct_psnr).abs());
        values.extend([s, p]);
    }
    let half = psnr(&Array2::zeros((4, 4)), &Array2::from_elem((4, 4), 0.5)).unwrap().value();
    let b = Tensor::<f64>::full(&[3, 3], 0.5);
    let l = bce_loss(&b, &b).unwrap().0;
    values.extend([half, l]);
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-12 && (half - 6.0206).abs() < 5e-5 && (l - 0.34657).abs() < 5e-6 && secs < 1.0;
    let detail = format!(
        "direct-formula deviation {worst:.1e} of 1e-12; PSNR(0.5 offset) = {half:.4} dB; BCE(0.5, 0.5) = {l:.5}; {secs:.3} s of 1 s"
    );
    (outcome(pass, detail), digest_f64(&values))
}

// ---------------------------------------------------------------- 5

const SLIT_WIDTH: f64 = 100e-6;
const SLIT_SEPARATION: f64 = 400e-6;

fn double_slit() -> SampleImage {
    let n = 100;
    let pitch = 1e-3 / n as f64;
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        let y = (i as f64 + 0.5) * pitch - 0.5e-3;
        let x = (j as f64 + 0.5) * pitch - 0.5e-3;
        let slit = (x.abs() - SLIT_SEPARATION / 2.0).abs() < SLIT_WIDTH / 2.0 && y.abs() < 300e-6;
        if slit { 1.0 } else { 0.0 }
    });
    SampleImage::new(values, pitch).unwrap()
}

fn registered_correlation(output: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let n = target.nrows() as isize;
    let mut best = f64::NEG_INFINITY;
    for twin in [false, true] {
        for dy in -n / 2..=n / 2 {
            for dx in -n / 2..=n / 2 {
                let moved = Array2::from_shape_fn(target.dim(), |(i, j)| {
                    let (mut y, mut x) = (i as isize - dy, j as isize - dx);
                    if twin {
                        y = n - 1 - y;
                        x = n - 1 - x;
                    }
                    if (0..n).contains(&y) && (0..n).contains(&x) {
                        output[(y as usize, x as usize)]
                    } else {
                        0.0
                    }
                });
                best = best.max(pearson(&moved, target));
            }
        }
    }
    best
}

fn classical_baseline() -> (Outcome, Vec<u8>) {
    let start = Instant::now();
    let cfg = OpticalConfig::default();
    let sim = SpeckleSimulator::new(cfg).unwrap();
    let slit = double_slit();
    let t = sim.transmittance(&slit).unwrap();
    let pairs: Vec<SpecklePair> = (0..500u64)
        .into_par_iter()
        .map(|k| sim.simulate_with_transmittance(&t, seed::mix(21, &[k])).unwrap())
        .collect();
    let m = fgi_correlate(&pairs, &cfg).unwrap();
    let profile: Vec<f64> = (0..m.n as isize / 2).map(|k| m.at(0, k)).collect();
    let expected_k = 1.0 / SLIT_SEPARATION / m.freq_pitch;
    let (lo, hi) = ((expected_k * 0.5).floor() as usize, (expected_k * 1.5).ceil() as usize);
    let k = (lo..=hi).max_by(|&a, &b| profile[a].total_cmp(&profile[b])).unwrap();
    let (l, c, r) = (profile[k - 1], profile[k], profile[k + 1]);
    let peak = k as f64 + 0.5 * (l - r) / (l - 2.0 * c + r);
    let period = 1.0 / (peak * m.freq_pitch);
    let fringe_err = (period - SLIT_SEPARATION).abs() / SLIT_SEPARATION;

    let object = Array2::from_shape_fn((28, 28), |(i, j)| {
        let (y, x) = (i as f64 - 12.0, j as f64 - 15.0);
        let ring = ((x * x + y * y).sqrt() - 6.0).abs() < 2.0;
        let bar = (18..23).contains(&i) && (4..20).contains(&j);
        if ring || bar { 1.0 } else { 0.0 }
    });
    let modulus = FourierModulus::from_image(&object, 64, m.freq_pitch);
    let hio = hio_phase_retrieval(&modulus, &HioConfig::default()).unwrap();
    let corr = registered_correlation(&hio.image.values, &object);
    let secs = start.elapsed().as_secs_f64();
    let pass = fringe_err <= 0.1 && corr >= 0.9 && secs < 300.0;
    let detail = format!(
        "fringe period {:.1} um vs {:.1} um ({:.1}% of 10%); HIO registered correlation {corr:.4} (>= 0.9); {secs:.1} s of 300 s",
        period * 1e6,
        SLIT_SEPARATION * 1e6,
        fringe_err * 100.0
    );
    let mut digest = digest_f64(&[period, corr, hio.residual]);
    digest.extend(digest_f64(m.values.as_slice().unwrap()));
    (outcome(pass, detail), digest)
}

// ---------------------------------------------------------------- 6 to 8

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_path() -> PathBuf {
    std::env::var_os("YNET_MNIST")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data/mnist-images-idx3-ubyte"))
}

struct Experiment {
    optics: OpticalConfig,
    network: YNetConfig,
    training: TrainConfig,
    cache: PathBuf,
    samples: Vec<DatasetSample>,
}

impl Experiment {
    fn prepare() -> Result<Self, String> {
        let path = mnist_path();
        let bytes = fs::read(&path).map_err(|e| {
            format!("{}: {e}; create it with scripts/mnist_from_npm.py or set YNET_MNIST", path.display())
        })?;
        let images = load_idx_images(&path).map_err(|e| e.to_string())?;
        let needed = TRAIN_PAIRS + VALIDATION_PAIRS + TEST_PAIRS;
        if images.len() < needed {
            return Err(format!("{} holds {} images, {needed} needed", path.display(), images.len()));
        }
        let optics = OpticalConfig::default();
        let network = YNetConfig::desk();
        let training = TrainConfig {
            epochs: EPOCHS,
            seed: TRAIN_SEED,
            ..TrainConfig::default()
        };
        let key = format!(
            "v{CACHE_VERSION} mnist={:016x} optics={optics:?} network={network:?} training={training:?} \
             pairs={TRAIN_PAIRS}/{VALIDATION_PAIRS}/{TEST_PAIRS} seeds={DATA_SEED}/{MODEL_SEED}",
            fnv1a64(&bytes)
        );
        let cache = workspace().join("target/acceptance-cache").join(format!("{:016x}", fnv1a64(key.as_bytes())));
        fs::create_dir_all(&cache).map_err(|e| e.to_string())?;
        fs::write(cache.join("key.txt"), &key).map_err(|e| e.to_string())?;
        let samples = DatasetSample::enumerate(&images[..needed], 0);
        Ok(Self {
            optics,
            network,
            training,
            cache,
            samples,
        })
    }

    fn split(&self, mode: IlluminationMode, name: &str) -> Result<Vec<DatasetRecord>, String> {
        let range = match name {
            "train" => 0..TRAIN_PAIRS,
            "validation" => TRAIN_PAIRS..TRAIN_PAIRS + VALIDATION_PAIRS,
            _ => TRAIN_PAIRS + VALIDATION_PAIRS..self.samples.len(),
        };
        let path = self.cache.join(format!("{}_{name}.ygi", mode.as_str()));
        if !path.exists() {
            let start = Instant::now();
            let tmp = path.with_extension("partial");
            generate_dataset(&self.samples[range], &self.optics, mode, DATA_SEED, &tmp).map_err(|e| e.to_string())?;
            fs::rename(&tmp, &path).map_err(|e| e.to_string())?;
            say(&format!("  generated {} {name} split in {:.1} s", mode.as_str(), start.elapsed().as_secs_f64()));
        }
        Ok(read_all(&path).map_err(|e| e.to_string())?.1)
    }

    fn sets(&self, mode: IlluminationMode) -> Result<(TrainSet, TrainSet, Vec<DatasetRecord>), String> {
        let train = TrainSet::from_records(&self.split(mode, "train")?).map_err(|e| e.to_string())?;
        let val = TrainSet::from_records(&self.split(mode, "validation")?).map_err(|e| e.to_string())?;
        Ok((train, val, self.split(mode, "test")?))
    }

    /// Trains (or resumes, or loads) the model for `mode`; returns the
    /// best-validation model and the full trainer state.
    fn train(&self, mode: IlluminationMode, train: &TrainSet, val: &TrainSet) -> Result<(YNet<f32>, Trainer), String> {
        let dir = self.cache.join(mode.as_str());
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let (last, best) = (dir.join("last.ync"), dir.join("best.ync"));
        let mut trainer = if last.exists() {
            let state = load_training_state(&last).map_err(|e| e.to_string())?;
            let best_model = if best.exists() { Some(load_checkpoint(&best).map_err(|e| e.to_string())?) } else { None };
            state.into_trainer(best_model)
        } else {
            let model = YNet::build(&self.network, MODEL_SEED).map_err(|e| e.to_string())?;
            Trainer::new(model, self.training.clone())
        };
        if trainer.epoch < EPOCHS {
            say(&format!("  training {} model from epoch {} of {EPOCHS}", mode.as_str(), trainer.epoch));
        }
        while trainer.epoch < EPOCHS {
            let stats = trainer.run_epoch(train, val).map_err(|e| e.to_string())?;
            say(&format!(
                "    epoch {:>2}  loss {:.5}  val loss {:.5}  val SSIM {:.4}  {:.0} s",
                stats.epoch, stats.train_loss, stats.val_loss, stats.val_ssim, stats.seconds
            ));
            if trainer.report.best_epoch == Some(stats.epoch) {
                save_checkpoint(&trainer.model, &best).map_err(|e| e.to_string())?;
            }
            save_training_state(&trainer, &last).map_err(|e| e.to_string())?;
        }
        Ok((trainer.best_model().clone(), trainer))
    }
}

struct Heldout {
    ynet_ssim: Vec<f64>,
    gi_ssim: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn heldout(model: &YNet<f32>, records: &[DatasetRecord], optics: &OpticalConfig, classical: bool) -> Heldout {
    let hio = HioConfig {
        seed: HIO_SEED,
        ..HioConfig::default()
    };
    let rows: Vec<(f64, f64)> = records
        .par_iter()
        .map(|rec| {
            let target = rec.target_image();
            let (r, t) = (rec.reference_image(optics.detector_pitch), rec.test_image(optics.detector_pitch));
            let y = model.predict(&r, &t, target.pitch).unwrap();
            let ys = ssim(&y.values, &target.values).unwrap();
            let gs = if classical {
                let pair = SpecklePair {
                    reference: r,
                    test: t,
                    seed: rec.seed,
                    sample_id: rec.sample_id,
                    mode: IlluminationMode::Dynamic,
                };
                let g = classical_pipeline(&pair, optics, &hio).unwrap().0;
                ssim(&g.image.values, &target.values).unwrap()
            } else {
                f64::NAN
            };
            (ys, gs)
        })
        .collect();
    Heldout {
        ynet_ssim: rows.iter().map(|r| r.0).collect(),
        gi_ssim: rows.iter().map(|r| r.1).collect(),
    }
}

struct Trained {
    model: YNet<f32>,
    trainer: Trainer,
    train: TrainSet,
    val: TrainSet,
    test: Vec<DatasetRecord>,
}

fn trained(exp: &Experiment, mode: IlluminationMode) -> Result<Trained, String> {
    let (train, val, test) = exp.sets(mode)?;
    let (model, trainer) = exp.train(mode, &train, &val)?;
    Ok(Trained {
        model,
        trainer,
        train,
        val,
        test,
    })
}

fn comparative_claim(exp: &Experiment, dynamic: &Trained) -> (Outcome, f64) {
    let start = Instant::now();
    let h = heldout(&dynamic.model, &dynamic.test, &exp.optics, true);
    let wins = h.ynet_ssim.iter().zip(&h.gi_ssim).filter(|(y, g)| y > g).count();
    let m = mean(&h.ynet_ssim);
    let gi = mean(&h.gi_ssim);
    let fraction = wins as f64 / h.ynet_ssim.len() as f64;
    let train_secs = dynamic.trainer.report.wall_seconds;
    let total = train_secs + start.elapsed().as_secs_f64();
    let best = dynamic.trainer.report.best_epoch.unwrap_or(0);
    let pass = (0.5..=0.95).contains(&m) && fraction >= 0.9 && total < 4.0 * 3600.0;
    let detail = format!(
        "held-out mean SSIM {m:.4} (0.5..0.95), GI {gi:.4}; Y-net ahead on {wins}/{} ({:.0}% of 90%); best epoch {best}; {:.2} h of 4 h",
        h.ynet_ssim.len(),
        fraction * 100.0,
        total / 3600.0
    );
    (outcome(pass, detail), m)
}

fn static_claim(exp: &Experiment, stat: &Trained, dynamic_mean: f64) -> Outcome {
    let h = heldout(&stat.model, &stat.test, &exp.optics, false);
    let m = mean(&h.ynet_ssim);
    let hours = stat.trainer.report.wall_seconds / 3600.0;
    outcome(
        m >= dynamic_mean && hours < 4.0,
        format!("static held-out mean SSIM {m:.4} vs dynamic {dynamic_mean:.4}; training {hours:.2} h of 4 h"),
    )
}

fn stability(exp: &Experiment, dynamic: &Trained) -> Outcome {
    let start = Instant::now();
    let sim = SpeckleSimulator::new(exp.optics).unwrap();
    let first = TRAIN_PAIRS + VALIDATION_PAIRS;
    let mut pairwise = Vec::new();
    let mut worst_spread: f64 = 0.0;
    for sample in &exp.samples[first..first + 10] {
        let r = stability_experiment(&dynamic.model, &sim, sample, 10, STABILITY_SEED).unwrap();
        pairwise.push(r.mean_off_diagonal());
        let m = r.mean_target_ssim();
        worst_spread = r.target_ssim.iter().map(|s| (s - m).abs()).fold(worst_spread, f64::max);
    }
    let m = mean(&pairwise);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        m >= 0.7 && worst_spread <= 0.15 && secs < 300.0,
        format!(
            "10 digits x 10 realizations: mean pairwise SSIM {m:.4} (>= 0.7), worst deviation from digit mean {worst_spread:.4} (<= 0.15); {secs:.1} s of 300 s"
        ),
    )
}

fn loss_curve_rerun(exp: &Experiment, dynamic: &Trained) -> (bool, String) {
    let epochs = std::env::var("ACCEPTANCE_RERUN_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1usize)
        .clamp(1, EPOCHS);
    let model = YNet::build(&exp.network, MODEL_SEED).unwrap();
    let mut t = Trainer::new(model, exp.training.clone());
    for _ in 0..epochs {
        t.run_epoch(&dynamic.train, &dynamic.val).unwrap();
    }
    let r = &dynamic.trainer.report;
    let same = t.report.train_loss[..] == r.train_loss[..epochs]
        && t.report.val_loss[..] == r.val_loss[..epochs]
        && t.report.val_ssim[..] == r.val_ssim[..epochs];
    (same, format!("dynamic loss curve {} over {epochs} retrained epoch(s)", if same { "identical" } else { "differs" }))
}

// ---------------------------------------------------------------- driver

type Check = fn() -> (Outcome, Vec<u8>);

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let report = |k: usize, name: &'static str, o: Outcome, results: &mut Vec<(usize, &str, Outcome)>| {
        say(&format!("{} {k} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail));
        results.push((k, name, o));
    };

    let quick: [(usize, &str, Check); 5] = [
        (1, "speckle statistics", speckle_statistics),
        (2, "physics invariants", physics_invariants),
        (3, "gradient suite", gradient_suite),
        (4, "metric oracles", metric_oracles),
        (5, "classical baseline", classical_baseline),
    ];
    let mut digests = Vec::new();
    for &(k, name, check) in &quick {
        if wanted(k) || wanted(9) {
            let (o, d) = check();
            digests.push((k, d));
            if wanted(k) {
                report(k, name, o, &mut results);
            }
        }
    }

    let mut rerun_note = None;
    if (6..=9).any(wanted) {
        match Experiment::prepare() {
            Err(e) => {
                for (k, name) in [(6, "comparative claim"), (7, "static mode"), (8, "stability")] {
                    if wanted(k) {
                        report(k, name, outcome(false, e.clone()), &mut results);
                    }
                }
                if wanted(9) {
                    rerun_note = Some((false, e));
                }
            }
            Ok(exp) => {
                let dynamic = trained(&exp, IlluminationMode::Dynamic);
                let mut dynamic_mean = None;
                match &dynamic {
                    Ok(d) => {
                        if wanted(6) || wanted(7) {
                            let (o, m) = comparative_claim(&exp, d);
                            dynamic_mean = Some(m);
                            if wanted(6) {
                                report(6, "comparative claim", o, &mut results);
                            }
                        }
                    }
                    Err(e) if wanted(6) => report(6, "comparative claim", outcome(false, e.clone()), &mut results),
                    Err(_) => {}
                }
                if wanted(7) {
                    let o = match (trained(&exp, IlluminationMode::Static), dynamic_mean) {
                        (Ok(s), Some(m)) => static_claim(&exp, &s, m),
                        (Err(e), _) => outcome(false, e),
                        (_, None) => outcome(false, "dynamic model unavailable".into()),
                    };
                    report(7, "static mode", o, &mut results);
                }
                if wanted(8) {
                    let o = match &dynamic {
                        Ok(d) => stability(&exp, d),
                        Err(e) => outcome(false, e.clone()),
                    };
                    report(8, "stability", o, &mut results);
                }
                if wanted(9) {
                    rerun_note = Some(match &dynamic {
                        Ok(d) => loss_curve_rerun(&exp, d),
                        Err(e) => (false, e.clone()),
                    });
                }
            }
        }
    }

    if wanted(9) {
        let start = Instant::now();
        let mut stable = Vec::new();
        for &(k, _, check) in &quick {
            let again = check().1;
            let first = &digests.iter().find(|(j, _)| *j == k).unwrap().1;
            stable.push((k, *first == again));
        }
        let all = stable.iter().all(|s| s.1);
        let unstable: Vec<String> = stable.iter().filter(|s| !s.1).map(|s| s.0.to_string()).collect();
        let (curve_ok, curve) = rerun_note.unwrap_or((false, "not run".into()));
        let detail = format!(
            "criteria 1-5 {} across reruns; {curve}; {:.1} s",
            if all { "byte-identical".to_string() } else { format!("differ in {}", unstable.join(", ")) },
            start.elapsed().as_secs_f64()
        );
        report(9, "reproducibility", outcome(all && curve_ok, detail), &mut results);
    }

    let passed = results.iter().filter(|r| r.2.pass).count();
    say(&format!("acceptance: {passed}/{} criteria passed", results.len()));
    if passed != results.len() {
        std::process::exit(1);
    }
}
