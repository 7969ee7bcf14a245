//! MNIST IDX ingestion, illumination seeding and the `YGI1` corpus format.
//!
//! `YGI1` layout (all little-endian):
//!
//! ```text
//! magic        4 bytes  "YGI1"
//! version      u32      1
//! record_count u64
//! detector_n   u32
//! target_n     u32
//! mode         u32      0 = static, 1 = dynamic
//! base_seed    u64
//! optics       f64 x 6  wavelength, d1, d2, source_diameter, sim_pitch, detector_pitch
//!              u32 x 3  sim_grid_n, detector_n, pad_factor
//! records      record_count x {
//!                reference f32[detector_n^2], test f32[detector_n^2],
//!                target f32[target_n^2], seed u64, sample_id u64 }
//! ```
//!
//! Arrays are row-major. Intensities are stored raw; per-image min-max
//! normalization happens when the network consumes them.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::optics::{
    IlluminationMode, IntensityImage, OpticalConfig, OpticsError, SampleImage, SpeckleSimulator,
};
use crate::seed;

pub const DATASET_MAGIC: [u8; 4] = *b"YGI1";
pub const DATASET_VERSION: u32 = 1;
pub const IDX3_MAGIC: u32 = 0x0000_0803;
/// Physical side length of an MNIST sample.
pub const SAMPLE_EXTENT: f64 = 1e-3;

const HEADER_LEN: u64 = 4 + 4 + 8 + 4 + 4 + 4 + 8 + 6 * 8 + 3 * 4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadIdxMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: IDX images are {rows}x{cols}, expected 28x28")]
    BadIdxDimensions { path: PathBuf, rows: u32, cols: u32 },
    #[error("{path}: truncated: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: not a YGI1 dataset (magic {found:?})")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported dataset version {found}")]
    BadVersion { path: PathBuf, found: u32 },
    #[error("{path}: header announces {declared} records but the file holds {actual}")]
    CountMismatch {
        path: PathBuf,
        declared: u64,
        actual: u64,
    },
    #[error("{path}: record {index} is corrupt: {reason}")]
    CorruptRecord {
        path: PathBuf,
        index: u64,
        reason: String,
    },
    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: PathBuf, reason: String },
    #[error("no samples supplied")]
    Empty,
    #[error("image is constant; min-max normalization undefined")]
    ConstantImage,
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads an IDX3 unsigned-byte image file. Pixels are divided by 255 and the
/// 28 pixels span [`SAMPLE_EXTENT`].
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<SampleImage>, DatasetError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    parse_idx_images(&bytes, path)
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<SampleImage>, DatasetError> {
    let truncated = |expected: u64| DatasetError::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len() as u64,
    };
    if bytes.len() < 16 {
        return Err(truncated(16));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let magic = word(0);
    if magic != IDX3_MAGIC {
        return Err(DatasetError::BadIdxMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: IDX3_MAGIC,
        });
    }
    let (count, rows, cols) = (word(1), word(2), word(3));
    if rows != 28 || cols != 28 {
        return Err(DatasetError::BadIdxDimensions {
            path: path.to_path_buf(),
            rows,
            cols,
        });
    }
    let px = 28 * 28;
    let expected = 16 + count as u64 * px as u64;
    if (bytes.len() as u64) < expected {
        return Err(truncated(expected));
    }
    bytes[16..expected as usize]
        .chunks_exact(px)
        .map(|chunk| {
            let values = Array2::from_shape_fn((28, 28), |(i, j)| chunk[i * 28 + j] as f64 / 255.0);
            SampleImage::new(values, SAMPLE_EXTENT / 28.0).map_err(DatasetError::from)
        })
        .collect()
}

/// Illumination seed for one exposure of one sample.
///
/// * static: `mix(base_seed, [STATIC])`, the same source realization for every
///   sample and every repetition, so the forward operator is fixed.
/// * dynamic: `mix(base_seed, [DYNAMIC, sample_id, repetition])`, a fresh
///   realization per sample and per repetition.
///
/// `mix` folds each word with the SplitMix64 finalizer (see [`seed::mix`]).
pub fn derive_seed(base_seed: u64, sample_id: u64, repetition: u64, mode: IlluminationMode) -> u64 {
    const STATIC: u64 = 0x5354_4154; // "STAT"
    const DYNAMIC: u64 = 0x4459_4e41; // "DYNA"
    match mode {
        IlluminationMode::Static => seed::mix(base_seed, &[STATIC]),
        IlluminationMode::Dynamic => seed::mix(base_seed, &[DYNAMIC, sample_id, repetition]),
    }
}

/// Target image plus the identifier used for seeding.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub sample_id: u64,
    pub image: SampleImage,
}

impl DatasetSample {
    /// Numbers samples by their position in `images`, starting at `first_id`.
    pub fn enumerate(images: &[SampleImage], first_id: u64) -> Vec<DatasetSample> {
        images
            .iter()
            .enumerate()
            .map(|(i, image)| DatasetSample {
                sample_id: first_id + i as u64,
                image: image.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub record_count: u64,
    pub detector_n: u32,
    pub target_n: u32,
    pub mode: IlluminationMode,
    pub base_seed: u64,
    pub optics: OpticalConfig,
}

impl DatasetHeader {
    pub fn record_len(&self) -> u64 {
        let d = self.detector_n as u64;
        let t = self.target_n as u64;
        4 * (2 * d * d + t * t) + 16
    }

    fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&DATASET_MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&self.record_count.to_le_bytes())?;
        w.write_all(&self.detector_n.to_le_bytes())?;
        w.write_all(&self.target_n.to_le_bytes())?;
        let mode: u32 = match self.mode {
            IlluminationMode::Static => 0,
            IlluminationMode::Dynamic => 1,
        };
        w.write_all(&mode.to_le_bytes())?;
        w.write_all(&self.base_seed.to_le_bytes())?;
        let o = &self.optics;
        for v in [
            o.wavelength,
            o.d1,
            o.d2,
            o.source_diameter,
            o.sim_pitch,
            o.detector_pitch,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [o.sim_grid_n, o.detector_n, o.pad_factor] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        Ok(())
    }

    fn read_from(r: &mut impl Read, path: &Path) -> Result<Self, DatasetError> {
        let mut buf = [0u8; HEADER_LEN as usize];
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => DatasetError::Truncated {
                path: path.to_path_buf(),
                expected: HEADER_LEN,
                found: 0,
            },
            _ => io_err(path)(e),
        })?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        let magic: [u8; 4] = cur.take(4).try_into().unwrap();
        if magic != DATASET_MAGIC {
            return Err(DatasetError::BadMagic {
                path: path.to_path_buf(),
                found: magic,
            });
        }
        let version = cur.u32();
        if version != DATASET_VERSION {
            return Err(DatasetError::BadVersion {
                path: path.to_path_buf(),
                found: version,
            });
        }
        let record_count = cur.u64();
        let detector_n = cur.u32();
        let target_n = cur.u32();
        let mode = match cur.u32() {
            0 => IlluminationMode::Static,
            1 => IlluminationMode::Dynamic,
            m => {
                return Err(DatasetError::BadHeader {
                    path: path.to_path_buf(),
                    reason: format!("unknown mode tag {m}"),
                })
            }
        };
        let base_seed = cur.u64();
        let optics = OpticalConfig {
            wavelength: cur.f64(),
            d1: cur.f64(),
            d2: cur.f64(),
            source_diameter: cur.f64(),
            sim_pitch: cur.f64(),
            detector_pitch: cur.f64(),
            sim_grid_n: cur.u32() as usize,
            detector_n: cur.u32() as usize,
            pad_factor: cur.u32() as usize,
        };
        if optics.detector_n != detector_n as usize || detector_n == 0 || target_n == 0 {
            return Err(DatasetError::BadHeader {
                path: path.to_path_buf(),
                reason: format!(
                    "inconsistent sizes: detector_n {detector_n}, optics.detector_n {}, target_n {target_n}",
                    optics.detector_n
                ),
            });
        }
        Ok(Self {
            version,
            record_count,
            detector_n,
            target_n,
            mode,
            base_seed,
            optics,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        s
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take(8).try_into().unwrap())
    }
    fn f32s(&mut self, n: usize) -> Vec<f32> {
        self.take(4 * n)
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

/// One stored speckle pair with its target, at storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub reference: Array2<f32>,
    pub test: Array2<f32>,
    pub target: Array2<f32>,
    pub seed: u64,
    pub sample_id: u64,
}

impl DatasetRecord {
    pub fn reference_image(&self, pitch: f64) -> IntensityImage {
        IntensityImage {
            pitch,
            values: self.reference.mapv(f64::from),
        }
    }

    pub fn test_image(&self, pitch: f64) -> IntensityImage {
        IntensityImage {
            pitch,
            values: self.test.mapv(f64::from),
        }
    }

    pub fn target_image(&self) -> SampleImage {
        let n = self.target.nrows();
        SampleImage {
            pitch: SAMPLE_EXTENT / n as f64,
            values: self.target.mapv(f64::from),
        }
    }

    fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        for arr in [&self.reference, &self.test, &self.target] {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.sample_id.to_le_bytes())
    }

    fn validate(&self) -> Result<(), String> {
        for (name, arr) in [("reference", &self.reference), ("test", &self.test)] {
            if let Some(v) = arr.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(format!("{name} intensity {v} is not finite and >= 0"));
            }
        }
        if let Some(v) = self.target.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(format!("target value {v} outside [0, 1]"));
        }
        Ok(())
    }
}

/// Options for [`generate_dataset`] beyond the required arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    /// Mixed into dynamic seeds; ignored in static mode.
    pub repetition: u64,
    /// Records simulated per parallel batch before being written.
    pub chunk: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            repetition: 0,
            chunk: 256,
        }
    }
}

/// Simulates one pair per sample (in order) and returns it as a record.
pub fn simulate_records(
    simulator: &SpeckleSimulator,
    samples: &[DatasetSample],
    mode: IlluminationMode,
    base_seed: u64,
    repetition: u64,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    samples
        .par_iter()
        .map(|s| {
            let seed = derive_seed(base_seed, s.sample_id, repetition, mode);
            let pair = simulator.simulate(&s.image, seed)?;
            Ok(DatasetRecord {
                reference: pair.reference.values.mapv(|v| v as f32),
                test: pair.test.values.mapv(|v| v as f32),
                target: s.image.values.mapv(|v| v as f32),
                seed,
                sample_id: s.sample_id,
            })
        })
        .collect()
}

/// Writes one `YGI1` file with a record per sample, in sample order.
pub fn generate_dataset(
    samples: &[DatasetSample],
    config: &OpticalConfig,
    mode: IlluminationMode,
    base_seed: u64,
    out_path: impl AsRef<Path>,
) -> Result<DatasetHeader, DatasetError> {
    generate_dataset_with(samples, config, mode, base_seed, out_path, GenerateOptions::default())
}

pub fn generate_dataset_with(
    samples: &[DatasetSample],
    config: &OpticalConfig,
    mode: IlluminationMode,
    base_seed: u64,
    out_path: impl AsRef<Path>,
    options: GenerateOptions,
) -> Result<DatasetHeader, DatasetError> {
    let path = out_path.as_ref();
    let first = samples.first().ok_or(DatasetError::Empty)?;
    let target_n = first.image.n();
    if let Some(bad) = samples.iter().find(|s| s.image.n() != target_n) {
        return Err(DatasetError::Optics(OpticsError::InvalidImage(format!(
            "sample {} is {}x{}, expected {target_n}x{target_n}",
            bad.sample_id,
            bad.image.n(),
            bad.image.n()
        ))));
    }
    let simulator = SpeckleSimulator::new(*config)?;
    let header = DatasetHeader {
        version: DATASET_VERSION,
        record_count: samples.len() as u64,
        detector_n: config.detector_n as u32,
        target_n: target_n as u32,
        mode,
        base_seed,
        optics: *config,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    header.write_to(&mut w).map_err(io_err(path))?;
    for chunk in samples.chunks(options.chunk.max(1)) {
        let records = simulate_records(&simulator, chunk, mode, base_seed, options.repetition)?;
        for r in &records {
            r.write_to(&mut w).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(header)
}

/// Streaming reader over a `YGI1` file.
pub struct DatasetReader {
    path: PathBuf,
    header: DatasetHeader,
    reader: BufReader<File>,
    next: u64,
    buf: Vec<u8>,
}

impl std::fmt::Debug for DatasetReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DatasetReader")
            .field("path", &self.path)
            .field("header", &self.header)
            .field("next", &self.next)
            .finish()
    }
}

impl DatasetReader {
    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }
}

impl Iterator for DatasetReader {
    type Item = Result<DatasetRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.header.record_count {
            return None;
        }
        let index = self.next;
        self.next += 1;
        if let Err(e) = self.reader.read_exact(&mut self.buf) {
            self.next = self.header.record_count;
            return Some(Err(io_err(&self.path)(e)));
        }
        let d = self.header.detector_n as usize;
        let t = self.header.target_n as usize;
        let mut cur = Cursor { buf: &self.buf, pos: 0 };
        let reference = Array2::from_shape_vec((d, d), cur.f32s(d * d)).unwrap();
        let test = Array2::from_shape_vec((d, d), cur.f32s(d * d)).unwrap();
        let target = Array2::from_shape_vec((t, t), cur.f32s(t * t)).unwrap();
        let record = DatasetRecord {
            reference,
            test,
            target,
            seed: cur.u64(),
            sample_id: cur.u64(),
        };
        Some(match record.validate() {
            Ok(()) => Ok(record),
            Err(reason) => Err(DatasetError::CorruptRecord {
                path: self.path.clone(),
                index,
                reason,
            }),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.header.record_count - self.next) as usize;
        (left, Some(left))
    }
}

/// Opens a dataset, validating the header and the file length against the
/// declared record count.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, DatasetReader), DatasetError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(io_err(path))?;
    let len = file.metadata().map_err(io_err(path))?.len();
    let header = DatasetHeader::read_from(&mut file, path)?;
    let payload = len - HEADER_LEN;
    let record_len = header.record_len();
    let actual = payload / record_len;
    if payload % record_len != 0 || actual != header.record_count {
        return Err(DatasetError::CountMismatch {
            path: path.to_path_buf(),
            declared: header.record_count,
            actual,
        });
    }
    file.seek(SeekFrom::Start(HEADER_LEN)).map_err(io_err(path))?;
    let reader = DatasetReader {
        path: path.to_path_buf(),
        buf: vec![0u8; record_len as usize],
        header: header.clone(),
        reader: BufReader::new(file),
        next: 0,
    };
    Ok((header, reader))
}

/// Reads every record of a dataset into memory.
pub fn read_all(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<DatasetRecord>), DatasetError> {
    let (header, reader) = read_dataset(path)?;
    let records = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, records))
}

/// Affine min-max map of an image onto `[0, 1]`.
pub fn normalize_speckle(image: &IntensityImage) -> Result<IntensityImage, DatasetError> {
    let values = normalize_min_max(&image.values)?;
    Ok(IntensityImage {
        pitch: image.pitch,
        values,
    })
}

pub fn normalize_min_max(values: &Array2<f64>) -> Result<Array2<f64>, DatasetError> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Err(DatasetError::ConstantImage);
    }
    let span = hi - lo;
    Ok(values.mapv(|v| (v - lo) / span))
}

/// Disjoint, exhaustive index partition: the first `train` indices train, the
/// remainder validate. `train` is `total * train_fraction` rounded to nearest.
pub fn train_validation_split(total: usize, train_fraction: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let train = ((total as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
    (0..train, train..total)
}
