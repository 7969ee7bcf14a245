use std::fs;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use ynet_gi::dataset::{simulate_records, DatasetSample, SAMPLE_EXTENT};
use ynet_gi::nn::{bce_loss, Init, LayerSpec, Tensor};
use ynet_gi::optics::SpeckleSimulator;
use ynet_gi::seed;
use ynet_gi::ynet::{
    evaluate_set, load_checkpoint, load_training_state, save_checkpoint, save_training_state, stability_experiment,
    CheckpointError, TrainConfig, TrainSet, Trainer, YNet, YNetConfig,
};
use ynet_gi::{IlluminationMode, OpticalConfig, SampleImage};

fn narrow() -> YNetConfig {
    YNetConfig {
        encoder_channels: [4, 8, 8, 16, 16],
        decoder_channels: [16, 8, 8, 4, 4, 4, 4, 4, 4, 1],
        ..YNetConfig::desk()
    }
}

fn shape(k: usize) -> SampleImage {
    let values = Array2::from_shape_fn((28, 28), |(i, j)| {
        let (y, x) = (i as f64 - 13.5, j as f64 - 13.5);
        let on = match k % 4 {
            0 => (x * x + y * y).sqrt() < 4.0 + k as f64 % 5.0,
            1 => x.abs() < 2.0 + (k % 3) as f64 && y.abs() < 10.0,
            2 => y.abs() < 2.0 && x.abs() < 6.0 + (k % 5) as f64,
            _ => (x - y).abs() < 3.0 && x.abs() < 9.0,
        };
        if on { 1.0 } else { 0.0 }
    });
    SampleImage::new(values, SAMPLE_EXTENT / 28.0).unwrap()
}

fn train_set(count: usize, base: u64) -> TrainSet {
    let images: Vec<_> = (0..count).map(shape).collect();
    let samples = DatasetSample::enumerate(&images, 0);
    let sim = SpeckleSimulator::new(OpticalConfig::default()).unwrap();
    let records = simulate_records(&sim, &samples, IlluminationMode::Dynamic, base, 0).unwrap();
    TrainSet::from_records(&records).unwrap()
}

fn pair_tensor<T: ynet_gi::nn::Scalar>(n: usize, s: u64) -> (Tensor<T>, Tensor<T>) {
    let mut rng = seed::rng(s);
    let mut make = || Tensor::from_vec(&[n, 1, 64, 64], (0..n * 4096).map(|_| T::from_f64(rng.gen_range(0.0..1.0))).collect()).unwrap();
    (make(), make())
}

#[test]
fn default_geometry_closes_at_twenty_eight() {
    let sizes: Vec<usize> = YNetConfig::full().geometry().iter().filter_map(|r| r.size).collect();
    let expected = [
        64, 63, 62, 31, 30, 15, 14, 7, 6, 3, 6, 5, 10, 9, 18, 17, 34, 33, 33, 32, 16, 19, 22, 25, 28,
    ];
    let mut dedup = sizes.clone();
    dedup.dedup();
    let mut want = expected.to_vec();
    want.dedup();
    assert_eq!(dedup, want);
    assert_eq!(*sizes.last().unwrap(), 28);
}

#[test]
fn parameter_count_matches_channel_arithmetic() {
    for cfg in [YNetConfig::desk(), YNetConfig::full(), narrow()] {
        let k2 = cfg.kernel * cfg.kernel;
        let conv = |i: usize, o: usize| k2 * i * o + o;
        let e = cfg.encoder_channels;
        let mut encoder = 2; // input batch norm
        let mut c = 1;
        for &o in &e {
            encoder += conv(c, o);
            c = o;
        }
        let mut decoder = 0;
        for &o in &cfg.decoder_channels {
            decoder += conv(c, o);
            c = o;
        }
        let expected = 2 * encoder + decoder;
        let model = YNet::<f32>::build(&cfg, 1).unwrap();
        assert_eq!(model.parameter_count(), expected);
        assert_eq!(cfg.parameter_count(), expected);
    }
}

#[test]
fn zero_input_gives_outputs_strictly_inside_unit_interval() {
    let model = YNet::<f32>::build(&narrow(), 3).unwrap();
    let z = Tensor::<f32>::zeros(&[2, 1, 64, 64]);
    let y = model.infer(&z, &z).unwrap();
    assert_eq!(y.shape(), &[2, 1, 28, 28]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn builds_are_seed_deterministic() {
    let a = YNet::<f32>::build(&narrow(), 9).unwrap();
    let b = YNet::<f32>::build(&narrow(), 9).unwrap();
    let c = YNet::<f32>::build(&narrow(), 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn inference_is_pure_and_role_sensitive() {
    let model = YNet::<f32>::build(&narrow(), 4).unwrap();
    let (r, t) = pair_tensor::<f32>(1, 6);
    let a = model.infer(&r, &t).unwrap();
    assert_eq!(a, model.infer(&r, &t).unwrap());
    assert_ne!(a, model.infer(&t, &r).unwrap());
    assert!(model.infer(&Tensor::zeros(&[1, 1, 32, 32]), &t).is_err());
}

#[test]
fn shared_encoders_cancel_identical_inputs() {
    let cfg = YNetConfig {
        mirror_encoders: true,
        ..narrow()
    };
    let model = YNet::<f32>::build(&cfg, 2).unwrap();
    let (r, _) = pair_tensor::<f32>(2, 1);
    let z = model.latent(&r, &r).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let cfg = YNetConfig {
        encoder_channels: [2, 2, 2, 2, 2],
        decoder_channels: [2, 2, 2, 2, 2, 2, 2, 2, 2, 1],
        // Zero biases put dead-input pixels exactly on the ReLU kink.
        init: Init::FanIn,
        ..YNetConfig::desk()
    };
    let mut model = YNet::<f64>::build(&cfg, 12).unwrap();
    let (r, t) = pair_tensor::<f64>(2, 13);
    let mut rng = seed::rng(14);
    let y = Tensor::from_vec(&[2, 1, 28, 28], (0..2 * 784).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let loss = |m: &YNet<f64>| -> f64 {
        let mut m = m.clone();
        let p = m.forward_train(&r, &t, 99).unwrap();
        bce_loss(&p, &y).unwrap().0
    };
    model.zero_grad();
    let p = model.forward_train(&r, &t, 99).unwrap();
    let (_, g) = bce_loss(&p, &y).unwrap();
    model.backward(&g).unwrap();

    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut index: Vec<(usize, usize)> = sizes.iter().enumerate().flat_map(|(k, &n)| (0..n).map(move |i| (k, i))).collect();
    index.shuffle(&mut rng);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for &(k, i) in index.iter().take(100) {
        let analytic = model.params()[k].grad().unwrap()[i];
        let mut a = model.clone();
        a.params_mut()[k].data_mut()[i] += h;
        let mut b = model.clone();
        b.params_mut()[k].data_mut()[i] -= h;
        let fd = (loss(&a) - loss(&b)) / (2.0 * h);
        let scale = analytic.abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic - fd).abs() / scale);
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ync");
    let model = YNet::<f32>::build(&narrow(), 21).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, model);
    let (r, t) = pair_tensor::<f32>(1, 2);
    assert_eq!(loaded.infer(&r, &t).unwrap(), model.infer(&r, &t).unwrap());

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint(&path).is_err());

    let mut bad = bytes.clone();
    bad[8] ^= 0xff;
    fs::write(&path, &bad).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Fingerprint { .. })));

    let mut bad = bytes.clone();
    bad[4] = 7;
    fs::write(&path, &bad).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadVersion(_))));
}

fn no_dropout() -> YNetConfig {
    YNetConfig {
        dropout_rate: 0.0,
        ..narrow()
    }
}

#[test]
fn overfits_a_tiny_set() {
    let set = train_set(10, 3);
    let model = YNet::<f32>::build(&no_dropout(), 5).unwrap();
    let before = evaluate_set(&model, &set, 10).unwrap().mean_ssim();
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            epochs: 300,
            batch_size: 10,
            seed: 5,
            ..TrainConfig::default()
        },
    );
    let mut loss = f64::INFINITY;
    for _ in 0..300 {
        loss = trainer.train_epoch(&set).unwrap();
        trainer.epoch += 1;
    }
    assert!(loss < 0.05, "final loss {loss}");
    let after = evaluate_set(&trainer.model, &set, 10).unwrap().mean_ssim();
    assert!(after > before, "ssim {before} -> {after}");
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (train, val) = (train_set(12, 1), train_set(4, 2));
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 8,
        ..TrainConfig::default()
    };
    let run = || {
        let mut t = Trainer::new(YNet::<f32>::build(&narrow(), 8).unwrap(), config.clone());
        t.run(&train, &val, |_, _| {}).unwrap();
        t
    };
    let (a, b) = (run(), run());
    assert_eq!(a.report.train_loss, b.report.train_loss);
    assert_eq!(a.report.val_ssim, b.report.val_ssim);
    assert_eq!(a.report.train_loss.len(), 2);
    assert_eq!(a.report.val_psnr.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.ync");
    let mut first = Trainer::new(YNet::<f32>::build(&narrow(), 8).unwrap(), config.clone());
    first.run_epoch(&train, &val).unwrap();
    save_training_state(&first, &path).unwrap();
    let mut resumed = load_training_state(&path).unwrap().into_trainer(first.best.clone());
    resumed.run_epoch(&train, &val).unwrap();
    assert_eq!(resumed.model, a.model);
    assert_eq!(resumed.report.train_loss, a.report.train_loss);
    assert_eq!(resumed.report.val_loss, a.report.val_loss);
}

#[test]
fn stability_matrix_is_symmetric_with_unit_diagonal() {
    let model = YNet::<f32>::build(&narrow(), 1).unwrap();
    let sim = SpeckleSimulator::new(OpticalConfig::default()).unwrap();
    let sample = DatasetSample { sample_id: 3, image: shape(2) };
    let r = stability_experiment(&model, &sim, &sample, 10, 4).unwrap();
    assert_eq!(r.outputs.len(), 10);
    let mut off = 0;
    for i in 0..10 {
        assert_eq!(r.ssim_matrix[(i, i)], 1.0);
        for j in 0..10 {
            assert_eq!(r.ssim_matrix[(i, j)], r.ssim_matrix[(j, i)]);
            off += usize::from(j > i);
        }
    }
    assert_eq!(off, 45);
    let mut seeds = r.seeds.clone();
    seeds.dedup();
    assert_eq!(seeds.len(), 10);
    assert!(stability_experiment(&model, &sim, &sample, 1, 4).is_err());
}

#[test]
fn decoder_ends_in_sigmoid() {
    let specs = YNetConfig::desk().decoder_specs();
    assert_eq!(specs.last(), Some(&LayerSpec::Sigmoid));
    assert_eq!(specs.iter().filter(|s| matches!(s, LayerSpec::Sigmoid)).count(), 1);
    assert_eq!(specs.iter().filter(|s| matches!(s, LayerSpec::Conv { .. })).count(), 10);
    assert_eq!(specs.iter().filter(|s| matches!(s, LayerSpec::Upsample)).count(), 4);
}
