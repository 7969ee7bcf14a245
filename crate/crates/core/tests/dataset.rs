use std::fs;

use ndarray::Array2;
use proptest::prelude::*;
use ynet_gi::dataset::{
    derive_seed, generate_dataset, load_idx_images, normalize_speckle, read_all, read_dataset, simulate_records,
    DatasetError, DatasetSample, SAMPLE_EXTENT,
};
use ynet_gi::optics::SpeckleSimulator;
use ynet_gi::{IlluminationMode, IntensityImage, OpticalConfig, SampleImage};

fn small_config() -> OpticalConfig {
    OpticalConfig {
        sim_grid_n: 32,
        detector_n: 16,
        ..OpticalConfig::default()
    }
}

fn digit(k: usize) -> SampleImage {
    let values = Array2::from_shape_fn((28, 28), |(i, j)| if (i + j + k) % 5 < 2 && i > 4 && i < 24 { 1.0 } else { 0.0 });
    SampleImage::new(values, SAMPLE_EXTENT / 28.0).unwrap()
}

fn samples(n: usize) -> Vec<DatasetSample> {
    let images: Vec<_> = (0..n).map(digit).collect();
    DatasetSample::enumerate(&images, 0)
}

#[test]
fn generation_is_counted_and_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ygi"), dir.path().join("b.ygi"));
    let s = samples(10);
    let header = generate_dataset(&s, &small_config(), IlluminationMode::Dynamic, 9, &a).unwrap();
    generate_dataset(&s, &small_config(), IlluminationMode::Dynamic, 9, &b).unwrap();
    assert_eq!(header.record_count, 10);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn round_trip_preserves_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ygi");
    let s = samples(6);
    let cfg = small_config();
    let header = generate_dataset(&s, &cfg, IlluminationMode::Static, 4, &path).unwrap();
    let expected = simulate_records(&SpeckleSimulator::new(cfg).unwrap(), &s, IlluminationMode::Static, 4, 0).unwrap();
    let (read_header, reader) = read_dataset(&path).unwrap();
    assert_eq!(read_header, header);
    let records: Vec<_> = reader.collect::<Result<_, _>>().unwrap();
    assert_eq!(records, expected);
}

#[test]
fn static_mode_reuses_illumination_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ygi");
    let img = digit(3);
    let s = vec![
        DatasetSample { sample_id: 7, image: img.clone() },
        DatasetSample { sample_id: 7, image: img },
    ];
    generate_dataset(&s, &small_config(), IlluminationMode::Static, 1, &path).unwrap();
    let (_, records) = read_all(&path).unwrap();
    assert_eq!(records[0].reference, records[1].reference);
    assert_eq!(records[0].seed, records[1].seed);
}

#[test]
fn corrupt_files_are_rejected_with_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ygi");
    generate_dataset(&samples(3), &small_config(), IlluminationMode::Dynamic, 2, &path).unwrap();
    let good = fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    fs::write(&path, &bad).unwrap();
    assert!(matches!(read_dataset(&path), Err(DatasetError::BadMagic { .. })));

    let mut bad = good.clone();
    bad[4..8].copy_from_slice(&99u32.to_le_bytes());
    fs::write(&path, &bad).unwrap();
    assert!(matches!(read_dataset(&path), Err(DatasetError::BadVersion { .. })));

    let mut bad = good.clone();
    bad[8..16].copy_from_slice(&5u64.to_le_bytes());
    fs::write(&path, &bad).unwrap();
    assert!(matches!(read_dataset(&path), Err(DatasetError::CountMismatch { declared: 5, actual: 3, .. })));

    fs::write(&path, &good[..good.len() - 10]).unwrap();
    assert!(read_dataset(&path).is_err());
}

#[test]
fn truncated_idx_file_returns_no_images() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("images-idx3-ubyte");
    let mut bytes = Vec::new();
    for v in [0x0803u32, 2, 28, 28] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend(std::iter::repeat(255u8).take(28 * 28 + 100));
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_idx_images(&path), Err(DatasetError::Truncated { .. })));
    bytes.extend(std::iter::repeat(0u8).take(28 * 28 - 100));
    fs::write(&path, &bytes).unwrap();
    let images = load_idx_images(&path).unwrap();
    assert_eq!(images.len(), 2);
    assert_eq!(images[0].values[(0, 0)], 1.0);
    assert_eq!(images[1].values[(27, 27)], 0.0);
    assert!((images[0].extent() - SAMPLE_EXTENT).abs() < 1e-15);
}

#[test]
fn speckle_normalization_endpoints() {
    let img = IntensityImage::new(Array2::from_shape_vec((2, 2), vec![2.0, 4.0, 6.0, 4.0]).unwrap(), 1.0).unwrap();
    assert_eq!(normalize_speckle(&img).unwrap().values.as_slice().unwrap(), &[0.0, 0.5, 1.0, 0.5]);
    let canonical = IntensityImage::new(Array2::from_shape_vec((2, 2), vec![0.0, 0.25, 1.0, 0.5]).unwrap(), 1.0).unwrap();
    assert_eq!(normalize_speckle(&canonical).unwrap(), canonical);
    let flat = IntensityImage::new(Array2::from_elem((2, 2), 3.0), 1.0).unwrap();
    assert!(normalize_speckle(&flat).is_err());
}

proptest! {
    #[test]
    fn normalization_is_scale_invariant(vals in prop::collection::vec(0.0f64..10.0, 16), c in 0.1f64..100.0) {
        prop_assume!(vals.iter().any(|&v| (v - vals[0]).abs() > 1e-3));
        let a = IntensityImage::new(Array2::from_shape_vec((4, 4), vals.clone()).unwrap(), 1.0).unwrap();
        let b = IntensityImage::new(a.values.mapv(|v| v * c), 1.0).unwrap();
        let (na, nb) = (normalize_speckle(&a).unwrap(), normalize_speckle(&b).unwrap());
        for (x, y) in na.values.iter().zip(nb.values.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_modes_honour_their_contracts(base in any::<u64>(), id in any::<u64>(), r1 in any::<u64>(), r2 in any::<u64>()) {
        prop_assert_eq!(
            derive_seed(base, id, r1, IlluminationMode::Static),
            derive_seed(base, id, r2, IlluminationMode::Static)
        );
        if r1 != r2 {
            prop_assert_ne!(
                derive_seed(base, id, r1, IlluminationMode::Dynamic),
                derive_seed(base, id, r2, IlluminationMode::Dynamic)
            );
        }
    }
}
