//! Datasets: MNIST IDX files, synthetic Gaussian blobs and Poisson
//! subsampling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStreams};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labelled examples. `features` has shape `[n, example_shape...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    /// Copies the listed examples into a batch tensor.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.features.row(i)).collect();
        let batch = Tensor::from_rows(self.example_shape(), &rows).expect("rows share a shape");
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (batch, labels)
    }

    /// The first `n` examples after a seeded shuffle.
    pub fn shuffled_subset(&self, n: usize, seed: u64) -> Dataset {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = RngStreams::new(seed).stream(Purpose::Shuffle, 0);
        order.shuffle(&mut rng);
        order.truncate(n.min(self.len()));
        let (features, labels) = self.gather(&order);
        Dataset {
            features,
            labels,
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

/// A parsed IDX file: dimension sizes and the raw unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| Error::Format(format!("IDX header truncated at word {i}")))
        };
        let magic = word(0)?;
        if magic >> 8 != 0x08 {
            return Err(Error::Format(format!(
                "magic {magic:#010x} is not an unsigned-byte IDX array"
            )));
        }
        let ndims = (magic & 0xff) as usize;
        let dims = (1..=ndims)
            .map(|i| word(i).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let start = 4 * (ndims + 1);
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("IDX dimensions {dims:?} overflow")))?;
        let body = &bytes[start..];
        if body.len() < len {
            return Err(Error::Format(format!(
                "IDX body truncated: header promises {len} bytes, found {}",
                body.len()
            )));
        }
        if body.len() > len {
            return Err(Error::Format(format!(
                "IDX body has {} trailing bytes",
                body.len() - len
            )));
        }
        Ok(Self {
            magic,
            dims,
            data: body.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * (self.dims.len() + 1) + self.data.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair. Pixels are scaled by 1/255 into `[0, 1]`;
/// images keep their `[1, rows, cols]` shape.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = IdxArray::parse(&read_file(images_path)?)?;
    let labels = IdxArray::parse(&read_file(labels_path)?)?;
    from_idx(&images, &labels, split)
}

/// Builds a dataset from already-parsed IDX arrays.
pub fn from_idx(images: &IdxArray, labels: &IdxArray, split: Split) -> Result<Dataset> {
    if images.magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("image magic {:#010x}", images.magic)));
    }
    if labels.magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("label magic {:#010x}", labels.magic)));
    }
    let (n, rows, cols) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::Format(format!("{n} images but {} labels", labels.dims[0])));
    }
    if let Some(&bad) = labels.data.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {bad} outside 0..=9")));
    }
    let pixels = images.data.iter().map(|&b| b as f64 / 255.0).collect();
    let features = Tensor::new(vec![n, 1, rows, cols], pixels)?;
    let labels = labels.data.iter().map(|&l| l as usize).collect();
    Dataset::new(features, labels, 10, split)
}

/// Inverse of [`from_idx`] for `[n, 1, rows, cols]` datasets with pixels on
/// the 1/255 grid.
pub fn to_idx(ds: &Dataset) -> Result<(IdxArray, IdxArray)> {
    let shape = ds.features.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::Shape(format!("cannot encode shape {shape:?} as IDX images")));
    }
    let images = IdxArray {
        magic: IDX_IMAGES_MAGIC,
        dims: vec![shape[0], shape[2], shape[3]],
        data: ds
            .features
            .data()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect(),
    };
    let labels = IdxArray {
        magic: IDX_LABELS_MAGIC,
        dims: vec![ds.len()],
        data: ds.labels.iter().map(|&l| l as u8).collect(),
    };
    Ok((images, labels))
}

/// Loads `train-*` or `t10k-*` files from an MNIST directory.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

/// Includes every index independently with probability `p`.
pub fn poisson_subsample<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("inclusion probability {p}")));
    }
    if p == 1.0 {
        return Ok((0..len).collect());
    }
    Ok((0..len).filter(|_| rng.random::<f64>() < p).collect())
}

/// `K` isotropic unit-variance Gaussian clusters in `dim` dimensions whose
/// centres are `separation` apart. Labels cycle through the classes, so the
/// classes are balanced. Features are flat `[n, dim]`.
pub fn synthetic_gaussian_blobs(
    classes: usize,
    n: usize,
    dim: usize,
    separation: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if classes < 2 || n < classes || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "blobs need K >= 2, n >= K, dim >= 1 (got K={classes}, n={n}, dim={dim})"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation {separation}")));
    }
    let streams = RngStreams::new(seed);
    let centres = blob_centres(classes, dim, separation, &streams);
    // Train and test draws come from disjoint streams around the same centres.
    let split_index = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = streams.stream(Purpose::Data, split_index);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        for c in &centres[k] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(c + z);
        }
        labels.push(k);
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, classes, split)
}

fn blob_centres(classes: usize, dim: usize, separation: f64, streams: &RngStreams) -> Vec<Vec<f64>> {
    if dim >= classes {
        // Scaled one-hot corners: every pair is exactly `separation` apart.
        let s = separation / std::f64::consts::SQRT_2;
        (0..classes)
            .map(|k| {
                let mut c = vec![0.0; dim];
                c[k] = s;
                c
            })
            .collect()
    } else {
        let mut rng = streams.stream(Purpose::Data, 0);
        (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| x / norm * separation / 2.0).collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_idx() -> (IdxArray, IdxArray) {
        let images = IdxArray {
            magic: IDX_IMAGES_MAGIC,
            dims: vec![2, 2, 3],
            data: vec![0, 1, 2, 3, 4, 255, 10, 20, 30, 40, 50, 60],
        };
        let labels = IdxArray {
            magic: IDX_LABELS_MAGIC,
            dims: vec![2],
            data: vec![7, 3],
        };
        (images, labels)
    }

    #[test]
    fn idx_bytes_round_trip() {
        let (images, labels) = tiny_idx();
        let bytes = images.to_bytes();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(IdxArray::parse(&bytes).unwrap(), images);
        let ds = from_idx(&images, &labels, Split::Test).unwrap();
        assert_eq!(ds.example_shape(), &[1, 2, 3]);
        assert_eq!(ds.features().row(0)[5], 1.0);
        assert_eq!(ds.labels(), &[7, 3]);
        let (i2, l2) = to_idx(&ds).unwrap();
        assert_eq!((i2, l2), (images, labels));
    }

    #[test]
    fn malformed_idx_is_rejected() {
        let (images, labels) = tiny_idx();
        let bytes = images.to_bytes();
        assert!(IdxArray::parse(&bytes[..16]).is_err());
        assert!(IdxArray::parse(&bytes[..6]).is_err());
        assert!(IdxArray::parse(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[2] = 9;
        assert!(IdxArray::parse(&wrong).is_err());
        // labels file passed as images
        assert!(from_idx(&labels, &labels, Split::Train).is_err());
        let short = IdxArray {
            magic: IDX_LABELS_MAGIC,
            dims: vec![1],
            data: vec![1],
        };
        assert!(matches!(from_idx(&images, &short, Split::Train), Err(Error::Format(_))));
        let bad_label = IdxArray {
            magic: IDX_LABELS_MAGIC,
            dims: vec![2],
            data: vec![1, 10],
        };
        assert!(from_idx(&images, &bad_label, Split::Train).is_err());
    }

    #[test]
    fn subsample_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(poisson_subsample(100, 0.0, &mut rng).unwrap().is_empty());
        assert_eq!(poisson_subsample(5, 1.0, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(poisson_subsample(5, 1.5, &mut rng).is_err());
        let a = poisson_subsample(1000, 0.3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = poisson_subsample(1000, 0.3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = synthetic_gaussian_blobs(3, 30, 4, 5.0, 1, Split::Train).unwrap();
        let b = synthetic_gaussian_blobs(3, 30, 4, 5.0, 1, Split::Train).unwrap();
        assert_eq!(a, b);
        let t = synthetic_gaussian_blobs(3, 30, 4, 5.0, 1, Split::Test).unwrap();
        assert_ne!(a.features(), t.features());
        for k in 0..3 {
            assert_eq!(a.labels().iter().filter(|&&l| l == k).count(), 10);
        }
        assert!(synthetic_gaussian_blobs(1, 30, 4, 5.0, 1, Split::Train).is_err());
        assert!(synthetic_gaussian_blobs(3, 2, 4, 5.0, 1, Split::Train).is_err());
        // fewer dimensions than classes still works
        assert!(synthetic_gaussian_blobs(5, 50, 2, 5.0, 1, Split::Train).is_ok());
    }

    #[test]
    fn gather_and_subset() {
        let ds = synthetic_gaussian_blobs(2, 10, 3, 1.0, 7, Split::Train).unwrap();
        let (batch, labels) = ds.gather(&[3, 0]);
        assert_eq!(batch.shape(), &[2, 3]);
        assert_eq!(batch.row(0), ds.features().row(3));
        assert_eq!(labels, vec![ds.labels()[3], ds.labels()[0]]);
        let sub = ds.shuffled_subset(4, 1);
        assert_eq!(sub.len(), 4);
        assert_eq!(sub, ds.shuffled_subset(4, 1));
    }
}
