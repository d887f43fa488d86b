//! Datasets, augmentation and deterministic batching.

mod formats;
mod synthetic;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use formats::{read_idx, read_mat_numeric, IdxArray, MatArray};
pub use synthetic::SyntheticSpec;

use crate::error::{Error, Result};
use crate::model::Shape3;
use crate::rng::shuffle_rng;
use crate::scalar::Scalar;

/// One image with values in `[0, 1]` and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    /// Channel-major `(c, h, w)` values.
    pub image: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub shape: Shape3,
    pub num_classes: usize,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    /// Validates shapes, labels and the `[0, 1]` pixel range.
    pub fn new(name: impl Into<String>, shape: Shape3, num_classes: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        let name = name.into();
        let len = shape[0] * shape[1] * shape[2];
        for (i, ex) in examples.iter().enumerate() {
            if ex.image.len() != len {
                return Err(Error::Shape(format!(
                    "{name}: example {i} has {} values, expected {len}",
                    ex.image.len()
                )));
            }
            if ex.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    num_classes,
                });
            }
            if ex.image.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("{name}: example {i} has pixels outside [0, 1]")));
            }
        }
        Ok(Self {
            name,
            shape,
            num_classes,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    /// Keeps the first `per_class` examples of every class, in file order.
    pub fn take_per_class(self, per_class: usize) -> Result<Self> {
        let mut kept = vec![0; self.num_classes];
        let mut examples = Vec::with_capacity(per_class * self.num_classes);
        for ex in self.examples {
            if kept[ex.label] < per_class {
                kept[ex.label] += 1;
                examples.push(ex);
            }
        }
        if let Some(c) = kept.iter().position(|&k| k < per_class) {
            return Err(Error::Config(format!(
                "{}: class {c} has only {} examples, {per_class} requested",
                self.name, kept[c]
            )));
        }
        Ok(Self { examples, ..self })
    }

    /// Flat images for `indices`, converted to `T`.
    pub fn gather_images<T: Scalar>(&self, indices: &[usize]) -> Vec<T> {
        let mut out = Vec::with_capacity(indices.len() * self.examples.first().map_or(0, |e| e.image.len()));
        for &i in indices {
            out.extend(self.examples[i].image.iter().map(|&v| T::from_f32(v)));
        }
        out
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.examples[i].label).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Cifar10,
    Svhn,
    MnistSubset,
    SyntheticGaussians,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Cap on training examples per class (first in file order).
    #[serde(default)]
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub test_per_class: Option<usize>,
    /// Generative distribution for `synthetic-gaussians`.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        match self.kind {
            DatasetKind::SyntheticGaussians => self.synthetic.as_ref().map_or(2, |s| s.means.len()),
            _ => 10,
        }
    }

    pub fn image_shape(&self) -> Shape3 {
        match self.kind {
            DatasetKind::Cifar10 | DatasetKind::Svhn => [3, 32, 32],
            DatasetKind::MnistSubset => [1, 28, 28],
            DatasetKind::SyntheticGaussians => [1, self.synthetic.as_ref().map_or(2, |s| s.dim()), 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_per_class == Some(0) || self.test_per_class == Some(0) {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        match (self.kind, &self.synthetic) {
            (DatasetKind::SyntheticGaussians, Some(s)) => {
                s.validate()?;
                if self.train_per_class.is_none() || self.test_per_class.is_none() {
                    return Err(Error::Config("synthetic datasets need train_per_class and test_per_class".into()));
                }
                Ok(())
            }
            (DatasetKind::SyntheticGaussians, None) => {
                Err(Error::Config("synthetic-gaussians needs a [synthetic] section".into()))
            }
            (_, Some(_)) => Err(Error::Config("[synthetic] only applies to synthetic-gaussians".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

fn missing(path: &Path, hint: &str) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        message: format!("not found; {hint}"),
    }
}

fn find_file(dir: &Path, stem: &str, hint: &str) -> Result<PathBuf> {
    for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(missing(&dir.join(stem), hint))
}

const MNIST_HINT: &str = "run scripts/fetch_mnist.sh or place the MNIST IDX files under <data root>/mnist";
const CIFAR_HINT: &str = "extract the CIFAR-10 binary version (cifar-10-binary.tar.gz) under <data root>";
const SVHN_HINT: &str = "place train_32x32.mat and test_32x32.mat under <data root>/svhn";

fn load_mnist(root: &Path, train: bool) -> Result<Dataset> {
    let dir = root.join("mnist");
    let prefix = if train { "train" } else { "t10k" };
    let images_path = find_file(&dir, &format!("{prefix}-images-idx3-ubyte"), MNIST_HINT)?;
    let labels_path = find_file(&dir, &format!("{prefix}-labels-idx1-ubyte"), MNIST_HINT)?;
    let images = read_idx(&images_path)?;
    let labels = read_idx(&labels_path)?;
    let bad = |message: String| Error::Dataset {
        path: images_path.clone(),
        message,
    };
    if images.dims.len() != 3 || labels.dims.len() != 1 || images.dims[0] != labels.dims[0] {
        return Err(bad(format!(
            "unexpected IDX dimensions {:?} / {:?}",
            images.dims, labels.dims
        )));
    }
    let (h, w) = (images.dims[1], images.dims[2]);
    let examples = images
        .data
        .chunks_exact(h * w)
        .zip(&labels.data)
        .map(|(px, &y)| LabeledExample {
            image: px.iter().map(|&v| f32::from(v) / 255.0).collect(),
            label: usize::from(y),
        })
        .collect();
    Dataset::new(format!("mnist-{prefix}"), [1, h, w], 10, examples)
}

fn load_cifar10(root: &Path, train: bool) -> Result<Dataset> {
    let dir = root.join("cifar-10-batches-bin");
    let files: Vec<String> = if train {
        (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
    } else {
        vec!["test_batch.bin".to_string()]
    };
    const RECORD: usize = 1 + 3072;
    let mut examples = Vec::new();
    for f in files {
        let path = dir.join(&f);
        let bytes = std::fs::read(&path).map_err(|_| missing(&path, CIFAR_HINT))?;
        if bytes.len() % RECORD != 0 {
            return Err(Error::Dataset {
                path,
                message: format!("{} bytes is not a whole number of {RECORD}-byte records", bytes.len()),
            });
        }
        for rec in bytes.chunks_exact(RECORD) {
            examples.push(LabeledExample {
                image: rec[1..].iter().map(|&v| f32::from(v) / 255.0).collect(),
                label: usize::from(rec[0]),
            });
        }
    }
    Dataset::new(if train { "cifar10-train" } else { "cifar10-test" }, [3, 32, 32], 10, examples)
}

fn load_svhn(root: &Path, train: bool) -> Result<Dataset> {
    let path = root.join("svhn").join(if train { "train_32x32.mat" } else { "test_32x32.mat" });
    if !path.is_file() {
        return Err(missing(&path, SVHN_HINT));
    }
    let vars = read_mat_numeric(&path)?;
    let find = |name: &str| {
        vars.iter().find(|v| v.name == name).ok_or_else(|| Error::Dataset {
            path: path.clone(),
            message: format!("variable {name} missing"),
        })
    };
    let x = find("X")?;
    let y = find("y")?;
    if x.dims.len() != 4 || x.dims[..3] != [32, 32, 3] || y.data.len() != x.dims[3] {
        return Err(Error::Dataset {
            path: path.clone(),
            message: format!("unexpected dimensions X {:?}, y {:?}", x.dims, y.dims),
        });
    }
    // Column-major X(row, col, channel, index).
    let n = x.dims[3];
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let mut image = vec![0.0f32; 3 * 32 * 32];
        for ch in 0..3 {
            for r in 0..32 {
                for c in 0..32 {
                    let v = x.data[r + 32 * (c + 32 * (ch + 3 * i))];
                    image[(ch * 32 + r) * 32 + c] = (v / 255.0) as f32;
                }
            }
        }
        let label = y.data[i] as usize % 10;
        examples.push(LabeledExample { image, label });
    }
    Dataset::new(if train { "svhn-train" } else { "svhn-test" }, [3, 32, 32], 10, examples)
}

/// Loads train and test splits; real datasets read from `root`.
pub fn load(spec: &DatasetSpec, root: &Path, seed: u64) -> Result<Splits> {
    spec.validate()?;
    let (train, test) = match spec.kind {
        DatasetKind::SyntheticGaussians => {
            let s = spec.synthetic.as_ref().expect("validated");
            let train = s.generate(spec.train_per_class.expect("validated"), seed, 0)?;
            let test = s.generate(spec.test_per_class.expect("validated"), seed, 1)?;
            return Ok(Splits { train, test });
        }
        DatasetKind::MnistSubset => (load_mnist(root, true)?, load_mnist(root, false)?),
        DatasetKind::Cifar10 => (load_cifar10(root, true)?, load_cifar10(root, false)?),
        DatasetKind::Svhn => (load_svhn(root, true)?, load_svhn(root, false)?),
    };
    let train = match spec.train_per_class {
        Some(n) => train.take_per_class(n)?,
        None => train,
    };
    let test = match spec.test_per_class {
        Some(n) => test.take_per_class(n)?,
        None => test,
    };
    Ok(Splits { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Zero padding before the random crop back to the original size.
    pub random_crop_padding: usize,
    pub horizontal_flip: bool,
}

impl AugmentationConfig {
    pub fn none() -> Self {
        Self {
            random_crop_padding: 0,
            horizontal_flip: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.random_crop_padding == 0 && !self.horizontal_flip
    }
}

/// Mirrors every row of a `(c, h, w)` image.
pub fn hflip(image: &[f32], shape: Shape3) -> Vec<f32> {
    let w = shape[2];
    image
        .chunks_exact(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

/// Shifts by `(dy, dx)` inside a zero-padded canvas of `padding` pixels.
fn crop(image: &[f32], shape: Shape3, padding: usize, dy: usize, dx: usize) -> Vec<f32> {
    let [c, h, w] = shape;
    let mut out = vec![0.0f32; image.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - padding as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - padding as isize;
                if sx >= 0 && sx < w as isize {
                    out[(ch * h + y) * w + x] = image[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    out
}

/// Random pad-and-crop, then a horizontal flip with probability 1/2.
pub fn augment<R: Rng + ?Sized>(example: &LabeledExample, shape: Shape3, config: &AugmentationConfig, rng: &mut R) -> LabeledExample {
    let mut image = example.image.clone();
    let p = config.random_crop_padding;
    if p > 0 {
        let dy = rng.random_range(0..=2 * p);
        let dx = rng.random_range(0..=2 * p);
        image = crop(&image, shape, p, dy, dx);
    }
    if config.horizontal_flip && rng.random_bool(0.5) {
        image = hflip(&image, shape);
    }
    LabeledExample {
        image,
        label: example.label,
    }
}

/// Index batches for one epoch; the permutation depends only on `(seed, epoch)`.
///
/// The final short batch is kept, so there are `ceil(len / batch_size)` batches.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut shuffle_rng(seed, epoch));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(shape: Shape3) -> LabeledExample {
        let n = shape[0] * shape[1] * shape[2];
        LabeledExample {
            image: (0..n).map(|i| (i + 1) as f32 / n as f32).collect(),
            label: 0,
        }
    }

    #[test]
    fn identity_augmentation() {
        let ex = ramp([2, 4, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&ex, [2, 4, 5], &AugmentationConfig::none(), &mut rng), ex);
    }

    #[test]
    fn double_flip_is_identity() {
        let ex = ramp([3, 4, 6]);
        assert_eq!(hflip(&hflip(&ex.image, [3, 4, 6]), [3, 4, 6]), ex.image);
        assert_ne!(hflip(&ex.image, [3, 4, 6]), ex.image);
    }

    #[test]
    fn crop_offsets_are_uniform() {
        // A single lit pixel reveals the crop offset.
        let shape = [1, 9, 9];
        let padding = 2;
        let mut img = vec![0.0f32; 81];
        img[4 * 9 + 4] = 1.0;
        let ex = LabeledExample { image: img, label: 0 };
        let cfg = AugmentationConfig {
            random_crop_padding: padding,
            horizontal_flip: false,
        };
        let side = 2 * padding + 1;
        let mut counts = vec![0usize; side * side];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 10_000;
        for _ in 0..draws {
            let out = augment(&ex, shape, &cfg, &mut rng);
            let pos = out.image.iter().position(|&v| v == 1.0).unwrap();
            let (y, x) = (pos / 9, pos % 9);
            // output y = 4 + padding - dy
            let dy = 4 + padding - y;
            let dx = 4 + padding - x;
            counts[dy * side + dx] += 1;
        }
        let expected = draws as f64 / counts.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 24 degrees of freedom, 99.9% quantile ~ 51.2
        assert!(chi2 < 51.2, "chi2 = {chi2}");
    }

    #[test]
    fn augmented_pixels_stay_in_range() {
        let shape = [3, 8, 8];
        let ex = ramp(shape);
        let cfg = AugmentationConfig {
            random_crop_padding: 4,
            horizontal_flip: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let out = augment(&ex, shape, &cfg, &mut rng);
            assert!(out.image.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn batches_partition_the_collection() {
        let b = batches(103, 10, 5, 2).unwrap();
        assert_eq!(b.len(), 11);
        assert_eq!(b.last().unwrap().len(), 3);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert_eq!(b, batches(103, 10, 5, 2).unwrap());
        assert_ne!(b, batches(103, 10, 5, 3).unwrap());
    }

    #[test]
    fn oversized_batch_gives_single_batch() {
        let b = batches(7, 100, 0, 0).unwrap();
        assert_eq!(b.len(), 1);
        let mut v = b[0].clone();
        v.sort();
        assert_eq!(v, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        assert!(batches(5, 0, 0, 0).is_err());
    }

    #[test]
    fn dataset_rejects_bad_pixels() {
        let r = Dataset::new(
            "x",
            [1, 1, 2],
            2,
            vec![LabeledExample {
                image: vec![0.5, 1.5],
                label: 0,
            }],
        );
        assert!(r.is_err());
    }

    #[test]
    fn missing_mnist_names_the_fix() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            kind: DatasetKind::MnistSubset,
            train_per_class: Some(10),
            test_per_class: Some(10),
            synthetic: None,
        };
        let err = load(&spec, dir.path(), 0).unwrap_err().to_string();
        assert!(err.contains("fetch_mnist"), "{err}");
    }
}
