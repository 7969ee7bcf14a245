use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use ynet_gi::classical::{classical_pipeline, FourierModulus};
use ynet_gi::dataset::{generate_dataset, load_idx_images, read_all, DatasetRecord, DatasetSample, SAMPLE_EXTENT};
use ynet_gi::metrics::{compare_methods, psnr, ssim};
use ynet_gi::optics::{autocorrelation_g2_lags, G2Map, SpeckleSimulator};
use ynet_gi::ynet::{
    load_checkpoint, load_training_state, save_checkpoint, save_training_state, stability_experiment,
    Trainer, TrainSet, YNet,
};
use ynet_gi::{IlluminationMode, OpticalConfig, SampleImage};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::images::{tile, write_image};
use crate::manifest::Manifest;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str, manifest: &mut Manifest) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    manifest.artifact(path);
    Ok(())
}

fn emit(stem: &Path, values: &Array2<f64>, cfg: &ExperimentConfig, manifest: &mut Manifest) -> Result<(), CliError> {
    let (paths, scaling) = write_image(stem, values, cfg.output.png)?;
    manifest.image(&paths, scaling);
    Ok(())
}

fn split_paths(cfg: &ExperimentConfig) -> [(&'static str, PathBuf); 3] {
    let dir = cfg.data_dir();
    [
        ("train", dir.join("train.ygi")),
        ("validation", dir.join("validation.ygi")),
        ("test", dir.join("test.ygi")),
    ]
}

fn read_split(path: &Path) -> Result<Vec<DatasetRecord>, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!(
            "{} not found; run `ynet-gi generate` with the same --out first",
            path.display()
        )));
    }
    Ok(read_all(path)?.1)
}

fn load_model(path: Option<&Path>, cfg: &ExperimentConfig) -> Result<(YNet<f32>, PathBuf), CliError> {
    let path = path.map_or_else(|| cfg.model_dir().join("best.ync"), Path::to_path_buf);
    if !path.exists() {
        return Err(CliError::Io(format!(
            "checkpoint {} not found; run `ynet-gi train` first or pass --checkpoint",
            path.display()
        )));
    }
    Ok((load_checkpoint(&path)?, path))
}

pub fn generate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let path = &cfg.data.mnist_images;
    if !path.exists() {
        return Err(CliError::Io(format!(
            "MNIST images not found at {}; point data.mnist_images (or --data.mnist_images) at an IDX3 image file such as train-images-idx3-ubyte",
            path.display()
        )));
    }
    let images = load_idx_images(path)?;
    let counts = [cfg.data.train_pairs, cfg.data.validation_pairs, cfg.data.test_pairs];
    let need: usize = counts.iter().sum();
    if images.len() < need {
        return Err(CliError::Config(format!(
            "{} holds {} images but the splits need {need}",
            path.display(),
            images.len()
        )));
    }
    let samples = DatasetSample::enumerate(&images[..need], 0);
    let mode = cfg.mode()?;
    let optics = cfg.optical();
    let dir = cfg.data_dir();
    ensure_dir(&dir)?;
    let mut manifest = Manifest::new("generate", &dir);
    manifest.seed("data.seed", cfg.data.seed);
    let mut start = 0;
    for ((name, out), count) in split_paths(cfg).into_iter().zip(counts) {
        if count == 0 {
            continue;
        }
        let t0 = Instant::now();
        let header = generate_dataset(&samples[start..start + count], &optics, mode, cfg.data.seed, &out)?;
        println!(
            "{name:<10} {} records, sample ids {}..{}, mode {}, base seed {}, detector {}x{}, target {}x{} -> {} ({:.1} s)",
            header.record_count,
            start,
            start + count,
            header.mode,
            header.base_seed,
            header.detector_n,
            header.detector_n,
            header.target_n,
            header.target_n,
            out.display(),
            t0.elapsed().as_secs_f64()
        );
        manifest.artifact(&out);
        start += count;
    }
    let m = manifest.write(cfg)?;
    println!("manifest {}", m.display());
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, resume: bool) -> Result<(), CliError> {
    let [(_, train_path), (_, val_path), _] = split_paths(cfg);
    let train = TrainSet::from_records(&read_split(&train_path)?)?;
    let val = TrainSet::from_records(&read_split(&val_path)?)?;
    let dir = cfg.model_dir();
    ensure_dir(&dir)?;
    let (last, best) = (dir.join("last.ync"), dir.join("best.ync"));
    let train_cfg = cfg.train_config()?;
    let mut trainer = if resume && last.exists() {
        let state = load_training_state(&last)?;
        let best_model = if best.exists() { Some(load_checkpoint(&best)?) } else { None };
        let mut t = state.into_trainer(best_model);
        t.config.epochs = train_cfg.epochs;
        println!("resuming from {} at epoch {}", last.display(), t.epoch);
        t
    } else {
        let model = YNet::<f32>::build(&cfg.network()?, cfg.network.seed)?;
        println!(
            "{} parameters, fingerprint {:#018x}\n{}",
            model.parameter_count(),
            model.fingerprint(),
            model.config.geometry_table()
        );
        Trainer::new(model, train_cfg)
    };
    println!("training on {} pairs, validating on {}", train.len(), val.len());
    while trainer.epoch < trainer.config.epochs {
        let stats = trainer.run_epoch(&train, &val)?;
        println!(
            "epoch {:>3}  lr {:.2e}  train {:.5}  val {:.5}  ssim {:.4}  psnr {:.3}  {:.1} s",
            stats.epoch, stats.learning_rate, stats.train_loss, stats.val_loss, stats.val_ssim, stats.val_psnr, stats.seconds
        );
        save_training_state(&trainer, &last)?;
        if trainer.report.best_epoch == Some(stats.epoch) {
            save_checkpoint(trainer.best_model(), &best)?;
        }
        fs::write(dir.join("report.csv"), trainer.report.to_csv()).map_err(|e| CliError::io(&dir, e))?;
    }
    if !best.exists() {
        save_checkpoint(trainer.best_model(), &best)?;
    }
    let mut manifest = Manifest::new("train", &dir);
    manifest.seed("network.seed", cfg.network.seed);
    manifest.seed("training.seed", cfg.training.seed);
    for p in [&best, &last, &dir.join("report.csv")] {
        manifest.artifact(p);
    }
    let r = &trainer.report;
    println!(
        "best epoch {:?} val ssim {:.4}; {:.1} s total",
        r.best_epoch,
        r.best_val_ssim().unwrap_or(f64::NAN),
        r.wall_seconds
    );
    manifest.write(cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Ynet,
    Classical,
}

fn log_modulus(m: &FourierModulus) -> Array2<f64> {
    let max = m.values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        m.values.mapv(|v| (1.0 + 1e3 * v / max).ln())
    } else {
        m.values.clone()
    }
}

pub fn reconstruct(
    cfg: &ExperimentConfig,
    method: Method,
    input: Option<&Path>,
    index: usize,
    checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let input = input.map_or_else(|| split_paths(cfg)[2].1.clone(), Path::to_path_buf);
    let records = read_split(&input)?;
    let record = records.get(index).ok_or_else(|| {
        CliError::Config(format!("index {index} out of range: {} holds {} records", input.display(), records.len()))
    })?;
    let dir = cfg.output.dir.join("reconstruct");
    ensure_dir(&dir)?;
    let mut manifest = Manifest::new("reconstruct", &dir);
    manifest.artifact(&input);
    let optics = cfg.optical();
    let target = record.target_image();
    let pitch = SAMPLE_EXTENT / target.n() as f64;
    let (reference, test) = (record.reference_image(optics.detector_pitch), record.test_image(optics.detector_pitch));
    let name = match method {
        Method::Ynet => "ynet",
        Method::Classical => "classical",
    };
    let output = match method {
        Method::Ynet => {
            let (model, path) = load_model(checkpoint, cfg)?;
            manifest.artifact(&path);
            model.predict(&reference, &test, pitch)?
        }
        Method::Classical => {
            manifest.seed("classical.seed", cfg.classical.seed);
            let pair = ynet_gi::SpecklePair {
                reference,
                test,
                seed: record.seed,
                sample_id: record.sample_id,
                mode: IlluminationMode::Dynamic,
            };
            let (hio, modulus) = classical_pipeline(&pair, &optics, &cfg.hio())?;
            emit(&dir.join(format!("modulus_{index}")), &log_modulus(&modulus), cfg, &mut manifest)?;
            println!("phase retrieval residual {:.4} (restart {}){}", hio.residual, hio.restart, if hio.degenerate { ", degenerate modulus" } else { "" });
            hio.image
        }
    };
    emit(&dir.join(format!("{name}_{index}")), &output.values, cfg, &mut manifest)?;
    emit(&dir.join(format!("target_{index}")), &target.values, cfg, &mut manifest)?;
    println!(
        "record {index} (sample {}): {name} {}x{} output, SSIM {:.4}, PSNR {} dB",
        record.sample_id,
        output.n(),
        output.n(),
        ssim(&output.values, &target.values)?,
        psnr(&output.values, &target.values)?
    );
    manifest.write(cfg)?;
    Ok(())
}

/// Simulation-geometry speckle against an independently seeded surrogate
/// sampled twice as finely on a window twice as wide, then binned 4x4.
pub fn autocorr_panels(cfg: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> Result<String, CliError> {
    const MAX_LAG: usize = 10;
    let sim_cfg = cfg.optical();
    let surrogate_cfg = OpticalConfig {
        sim_grid_n: sim_cfg.sim_grid_n * 2,
        sim_pitch: sim_cfg.sim_pitch / 2.0,
        pad_factor: sim_cfg.pad_factor * 2,
        ..sim_cfg
    };
    let seed = cfg.data.seed;
    manifest.seed("autocorr.simulation", seed);
    manifest.seed("autocorr.surrogate", seed ^ 0x5eed);
    let mut text = String::from("panel,g2_zero,correlation_width_px,expected_width_px\n");
    let expected = sim_cfg.wavelength * (sim_cfg.d1 + sim_cfg.d2) / sim_cfg.source_diameter / sim_cfg.detector_pitch;
    let mut maps: Vec<(&str, G2Map)> = Vec::new();
    for (name, optics, s) in [("simulation", sim_cfg, seed), ("surrogate", surrogate_cfg, seed ^ 0x5eed)] {
        let sim = SpeckleSimulator::new(optics)?;
        let n = optics.field_grid_n();
        let pair = sim.simulate_with_transmittance(&Array2::ones((n, n)), s)?;
        let g2 = autocorrelation_g2_lags(&pair.reference, MAX_LAG)?;
        emit(&dir.join(format!("speckle_{name}")), &pair.reference.values, cfg, manifest)?;
        emit(&dir.join(format!("g2_{name}")), &g2.values, cfg, manifest)?;
        let _ = writeln!(text, "{name},{:.6},{:.4},{:.4}", g2.peak(), g2.correlation_width(), expected);
        maps.push((name, g2));
    }
    let mut profile = String::from("lag");
    for (name, _) in &maps {
        let _ = write!(profile, ",{name}");
    }
    profile.push('\n');
    for lag in -(MAX_LAG as isize)..=MAX_LAG as isize {
        let _ = write!(profile, "{lag}");
        for (_, g2) in &maps {
            let _ = write!(profile, ",{:.6}", g2.at(lag, 0));
        }
        profile.push('\n');
    }
    write_text(&dir.join("g2_summary.csv"), &text, manifest)?;
    write_text(&dir.join("g2_profile.csv"), &profile, manifest)?;
    Ok(text)
}

pub fn autocorr(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = cfg.output.dir.join("autocorr");
    ensure_dir(&dir)?;
    let mut manifest = Manifest::new("autocorr", &dir);
    print!("{}", autocorr_panels(cfg, &dir, &mut manifest)?);
    manifest.write(cfg)?;
    Ok(())
}

pub fn stability_panels(
    cfg: &ExperimentConfig,
    model: &YNet<f32>,
    records: &[DatasetRecord],
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<String, CliError> {
    let digits = cfg.stability.digits.min(records.len());
    let reps = cfg.stability.repetitions;
    let sim = SpeckleSimulator::new(cfg.optical())?;
    manifest.seed("stability.seed", cfg.stability.seed);
    let mut outputs = Vec::new();
    let mut matrices = String::from("digit,sample_id,i,j,ssim\n");
    let mut summary = String::from("digit,sample_id,mean_pairwise_ssim,mean_target_ssim,min_target_ssim,max_target_ssim\n");
    for (d, rec) in records[..digits].iter().enumerate() {
        let sample = DatasetSample {
            sample_id: rec.sample_id,
            image: rec.target_image(),
        };
        let result = stability_experiment(model, &sim, &sample, reps, cfg.stability.seed)?;
        for ((i, j), v) in result.ssim_matrix.indexed_iter() {
            let _ = writeln!(matrices, "{d},{},{i},{j},{v:.10}", rec.sample_id);
        }
        let lo = result.target_ssim.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = result.target_ssim.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            summary,
            "{d},{},{:.6},{:.6},{lo:.6},{hi:.6}",
            rec.sample_id,
            result.mean_off_diagonal(),
            result.mean_target_ssim()
        );
        outputs.extend(result.outputs.into_iter().map(|o: SampleImage| o.values));
    }
    emit(&dir.join("stability_grid"), &tile(&outputs, reps, 2, 0.0), cfg, manifest)?;
    write_text(&dir.join("stability_ssim_matrices.csv"), &matrices, manifest)?;
    write_text(&dir.join("stability_summary.csv"), &summary, manifest)?;
    Ok(summary)
}

pub fn stability(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let (model, path) = load_model(checkpoint, cfg)?;
    let records = read_split(&split_paths(cfg)[2].1)?;
    let dir = cfg.output.dir.join("stability");
    ensure_dir(&dir)?;
    let mut manifest = Manifest::new("stability", &dir);
    manifest.artifact(&path);
    print!("{}", stability_panels(cfg, &model, &records, &dir, &mut manifest)?);
    manifest.write(cfg)?;
    Ok(())
}

pub fn evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>, limit: Option<usize>) -> Result<(), CliError> {
    let (model, path) = load_model(checkpoint, cfg)?;
    let mut records = read_split(&split_paths(cfg)[2].1)?;
    if let Some(l) = limit {
        records.truncate(l);
    }
    let dir = cfg.output.dir.join("evaluate");
    ensure_dir(&dir)?;
    let mut manifest = Manifest::new("evaluate", &dir);
    manifest.artifact(&path);
    manifest.seed("classical.seed", cfg.classical.seed);
    let optics = cfg.optical();
    let hio = cfg.hio();
    let t0 = Instant::now();
    let mut targets = Vec::new();
    let mut ynet_out = Vec::new();
    let mut classical_out = Vec::new();
    for rec in &records {
        let target = rec.target_image();
        let pitch = target.pitch;
        let (r, t) = (rec.reference_image(optics.detector_pitch), rec.test_image(optics.detector_pitch));
        ynet_out.push(model.predict(&r, &t, pitch)?.values);
        let pair = ynet_gi::SpecklePair {
            reference: r,
            test: t,
            seed: rec.seed,
            sample_id: rec.sample_id,
            mode: IlluminationMode::Dynamic,
        };
        classical_out.push(classical_pipeline(&pair, &optics, &hio)?.0.image.values);
        targets.push(target.values);
    }
    let report = compare_methods(
        &targets,
        &[("Y-net".to_string(), ynet_out.clone()), ("GI".to_string(), classical_out.clone())],
    )?;
    let (txt, csv) = (dir.join("report.txt"), dir.join("report.csv"));
    report.write(&txt, &csv)?;
    manifest.artifact(&txt);
    manifest.artifact(&csv);
    let wins = report.ssim[0].iter().zip(&report.ssim[1]).filter(|(a, b)| a > b).count();
    println!("{}", report.to_text_table());
    println!(
        "Y-net SSIM above GI on {wins}/{} samples ({:.1} s)",
        records.len(),
        t0.elapsed().as_secs_f64()
    );
    let shown = records.len().min(10);
    let mut panel = Vec::new();
    for k in 0..shown {
        panel.push(targets[k].clone());
        panel.push(ynet_out[k].clone());
        panel.push(classical_out[k].clone());
    }
    if shown > 0 {
        emit(&dir.join("comparison_grid"), &tile(&panel, 3, 2, 0.0), cfg, &mut manifest)?;
    }
    print!("{}", autocorr_panels(cfg, &dir, &mut manifest)?);
    print!("{}", stability_panels(cfg, &model, &records, &dir, &mut manifest)?);
    manifest.write(cfg)?;
    Ok(())
}
