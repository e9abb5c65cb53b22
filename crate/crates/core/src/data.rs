//! Datasets: CIFAR-10 binary ingestion, synthetic Gaussian blobs, and
//! epoch-keyed batching.
//!
//! CIFAR-10 binary records are 3073 bytes: one label byte followed by a
//! 32×32 image stored channel-planar (1024 red, 1024 green, 1024 blue
//! bytes, row-major within each plane).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::augment::keyed_rng;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Single-channel square if `dim` is a perfect square, else a `1 × dim` strip.
    pub fn for_flat_dim(dim: usize) -> Self {
        let side = (dim as f64).sqrt().round() as usize;
        if side * side == dim {
            ImageShape {
                height: side,
                width: side,
                channels: 1,
            }
        } else {
            ImageShape {
                height: 1,
                width: dim,
                channels: 1,
            }
        }
    }

    pub fn cifar() -> Self {
        ImageShape {
            height: CIFAR_SIDE,
            width: CIFAR_SIDE,
            channels: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub shape: ImageShape,
    pub class_count: usize,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        let (m, d) = images.expect_matrix("Dataset")?;
        if m == 0 {
            return Err(Error::Contract("dataset must hold at least one image".into()));
        }
        if d != meta.shape.pixels() {
            return Err(Error::dim(
                "Dataset",
                format!("{d} values per image but shape {:?}", meta.shape),
            ));
        }
        if labels.len() != m {
            return Err(Error::dim("Dataset", format!("{} labels for {m} images", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= meta.class_count) {
            return Err(Error::Contract(format!(
                "label {l} out of range for {} classes",
                meta.class_count
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InputRange("image values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// Rows at `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.images.select_rows(idx)?,
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.meta.clone(),
        )
    }
}

/// Parses one CIFAR-10 binary batch.
pub fn parse_cifar10_batch(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format(format!(
            "length {} is not a multiple of the {CIFAR_RECORD}-byte record",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!("record {r}: label byte {label} > 9")));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((labels, pixels))
}

fn read_cifar_files(paths: &[&Path], max_per_class: Option<usize>, name: &str) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    let mut counts = [0usize; CIFAR_CLASSES];
    for path in paths {
        let bytes = fs::read(path).map_err(|e| Error::io(*path, e))?;
        let (l, p) = parse_cifar10_batch(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        for (i, &label) in l.iter().enumerate() {
            if let Some(cap) = max_per_class {
                if counts[label] >= cap {
                    continue;
                }
            }
            counts[label] += 1;
            labels.push(label);
            pixels.extend_from_slice(&p[i * CIFAR_PIXELS..(i + 1) * CIFAR_PIXELS]);
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, CIFAR_PIXELS], pixels)?,
        labels,
        DatasetMeta {
            shape: ImageShape::cifar(),
            class_count: CIFAR_CLASSES,
            name: name.to_string(),
        },
    )
}

/// Loads the train batches present in `dir` (at least one of
/// `data_batch_{1..5}.bin`) and `test_batch.bin`. With `max_per_class`, only
/// the first `max_per_class` images of each class in file order are kept,
/// separately for train and test.
pub fn load_cifar10(dir: &Path, max_per_class: Option<usize>) -> Result<(Dataset, Dataset)> {
    let train_paths: Vec<_> = CIFAR_TRAIN_FILES
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.is_file())
        .collect();
    if train_paths.is_empty() {
        return Err(Error::io(
            dir.join(CIFAR_TRAIN_FILES[0]),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no CIFAR-10 train batches found"),
        ));
    }
    let train_refs: Vec<&Path> = train_paths.iter().map(|p| p.as_path()).collect();
    let train = read_cifar_files(&train_refs, max_per_class, "cifar10-train")?;
    let test_path = dir.join(CIFAR_TEST_FILE);
    let test = read_cifar_files(&[test_path.as_path()], max_per_class, "cifar10-test")?;
    Ok((train, test))
}

/// Serializes a dataset in the CIFAR-10 binary layout. Pixels are quantized
/// with `round(v·255)`.
pub fn encode_cifar10(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.dim() != CIFAR_PIXELS || ds.meta.class_count > CIFAR_CLASSES {
        return Err(Error::Format(format!(
            "CIFAR-10 layout needs {CIFAR_PIXELS} pixels and at most {CIFAR_CLASSES} classes"
        )));
    }
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (i, &label) in ds.labels.iter().enumerate() {
        out.push(label as u8);
        out.extend(ds.images.row(i).iter().map(|v| (v * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_cifar10(path: &Path, ds: &Dataset) -> Result<()> {
    let bytes = encode_cifar10(ds)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Gaussian blobs squashed into `[0, 1]`.
///
/// Class `c` is centered at `separation · u_c`, where the `u_c` are
/// orthonormal directions (Gram-Schmidt on Gaussian draws; when
/// `classes > dim` the extra directions are random unit vectors). Each
/// sample adds unit Gaussian noise, then every coordinate is mapped by
/// `v ↦ clamp(0.5 + v / (2·(separation + 4)), 0, 1)`.
pub fn make_synthetic(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    generate_blobs(classes, per_class, dim, separation, seed, seed)
}

fn generate_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    direction_seed: u64,
    noise_seed: u64,
) -> Result<Dataset> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Parameter("classes, per_class and dim must be positive".into()));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Parameter(format!("separation must be >= 0, got {separation}")));
    }
    let centers = class_directions(classes, dim, direction_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let half_range = 2.0 * (separation + 4.0);
    let mut pixels = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for u in center {
                let noise: f64 = StandardNormal.sample(&mut rng);
                pixels.push((0.5 + (separation * u + noise) / half_range).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, dim], pixels)?,
        labels,
        DatasetMeta {
            shape: ImageShape::for_flat_dim(dim),
            class_count: classes,
            name: format!("synthetic-{classes}x{per_class}-d{dim}-s{separation}"),
        },
    )
}

/// Class directions depend on `(classes, dim, seed)` only, so train and test
/// splits drawn with different noise seeds share them when the caller passes
/// the same `seed` here.
fn class_directions(classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = keyed_rng(&[0x4449_5253, seed, classes as u64, dim as u64]);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while dirs.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if dirs.len() < dim {
            for d in &dirs {
                let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(d).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        dirs.push(v);
    }
    dirs
}

/// Train/test pair of synthetic splits sharing class directions but with
/// independent noise.
pub fn make_synthetic_split(
    classes: usize,
    per_class_train: usize,
    per_class_test: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let train = make_synthetic(classes, per_class_train, dim, separation, seed)?;
    let noise_seed = crate::augment::stream_seed(&[0x5445_5354, seed]);
    let mut test = generate_blobs(classes, per_class_test, dim, separation, seed, noise_seed)?;
    test.meta.name.push_str("-test");
    Ok((train, test))
}

/// Epoch-keyed shuffle of `0..len` cut into full batches; the final partial
/// batch is dropped.
pub fn batches(len: usize, batch_size: usize, epoch: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Contract(format!("batch size must be >= 2, got {batch_size}")));
    }
    if batch_size > len {
        return Err(Error::Contract(format!(
            "batch size {batch_size} exceeds dataset size {len}"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = keyed_rng(&[0x4241_5443, seed, epoch as u64]);
    order.shuffle(&mut rng);
    Ok(order
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect())
}
