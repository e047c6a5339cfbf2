//! Image datasets held in memory: the CIFAR-10 binary format and a seeded
//! synthetic set whose classes are separable from patch means alone.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Element, Tensor};
use crate::{Error, Result};

/// Bytes per CIFAR-10 record: one label byte, then 32x32 R, G and B planes.
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug, PartialEq)]
enum Pixels {
    /// Scaled by `1/255` on read.
    Bytes(Vec<u8>),
    Floats(Vec<f32>),
}

/// Square images `[channels, size, size]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    channels: usize,
    size: usize,
    classes: usize,
    pixels: Pixels,
    labels: Vec<usize>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn image_size(&self) -> usize {
        self.size
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn image_len(&self) -> usize {
        self.channels * self.size * self.size
    }

    /// Pixel values of image `index` in channel-major order.
    pub fn pixels(&self, index: usize) -> Vec<f32> {
        let n = self.image_len();
        let range = index * n..(index + 1) * n;
        match &self.pixels {
            Pixels::Bytes(b) => b[range].iter().map(|&v| v as f32 / 255.0).collect(),
            Pixels::Floats(f) => f[range].to_vec(),
        }
    }

    pub fn image<T: Element>(&self, index: usize) -> Tensor<T> {
        let data = self.pixels(index).into_iter().map(|v| T::of(v as f64)).collect();
        Tensor::new(&[self.channels, self.size, self.size], data).expect("image length")
    }

    /// Stacks `indices` into `[batch, channels, size, size]`, mirroring the
    /// images whose `flip` entry is set.
    pub fn batch<T: Element>(&self, indices: &[usize], flip: Option<&[bool]>) -> (Tensor<T>, Vec<usize>) {
        let (c, s) = (self.channels, self.size);
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for (k, &i) in indices.iter().enumerate() {
            let px = self.pixels(i);
            let mirrored = flip.is_some_and(|f| f[k]);
            for row in px.chunks(s) {
                if mirrored {
                    data.extend(row.iter().rev().map(|&v| T::of(v as f64)));
                } else {
                    data.extend(row.iter().map(|&v| T::of(v as f64)));
                }
            }
        }
        let images = Tensor::new(&[indices.len(), c, s, s], data).expect("batch length");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` images.
    pub fn truncate(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        let keep = n * self.image_len();
        self.labels.truncate(n);
        match &mut self.pixels {
            Pixels::Bytes(b) => b.truncate(keep),
            Pixels::Floats(f) => f.truncate(keep),
        }
        self
    }

    fn concat(parts: Vec<ImageSet>) -> ImageSet {
        let mut bytes = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            labels.extend(p.labels);
            if let Pixels::Bytes(b) = p.pixels {
                bytes.extend(b);
            }
        }
        ImageSet {
            channels: 3,
            size: 32,
            classes: 10,
            pixels: Pixels::Bytes(bytes),
            labels,
        }
    }
}

/// Parses one CIFAR-10 binary batch file.
pub fn read_cifar_file(path: &Path) -> Result<ImageSet> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let raw = fs::read(path)?;
    parse_cifar_records(&raw, path)
}

pub fn parse_cifar_records(raw: &[u8], path: &Path) -> Result<ImageSet> {
    if !raw.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::TruncatedRecord {
            path: path.to_path_buf(),
            len: raw.len() as u64,
            record: CIFAR_RECORD,
        });
    }
    let mut labels = Vec::with_capacity(raw.len() / CIFAR_RECORD);
    let mut bytes = Vec::with_capacity(raw.len() / CIFAR_RECORD * (CIFAR_RECORD - 1));
    for rec in raw.chunks(CIFAR_RECORD) {
        labels.push(rec[0] as usize);
        bytes.extend_from_slice(&rec[1..]);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(Error::Config(format!("{}: label {bad} outside 0..10", path.display())));
    }
    Ok(ImageSet {
        channels: 3,
        size: 32,
        classes: 10,
        pixels: Pixels::Bytes(bytes),
        labels,
    })
}

/// Accepts either the batch directory itself or its parent.
pub fn resolve_cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(CIFAR_TEST_FILE).exists() && nested.join(CIFAR_TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads the five training batches and the test batch.
pub fn load_cifar10(dir: &Path) -> Result<(ImageSet, ImageSet)> {
    let dir = resolve_cifar_dir(dir);
    let train = CIFAR_TRAIN_FILES
        .iter()
        .map(|f| read_cifar_file(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let test = read_cifar_file(&dir.join(CIFAR_TEST_FILE))?;
    Ok((ImageSet::concat(train), test))
}

/// Loads the test batch only.
pub fn load_cifar10_test(dir: &Path) -> Result<ImageSet> {
    read_cifar_file(&resolve_cifar_dir(dir).join(CIFAR_TEST_FILE))
}

/// Geometry and seed of the synthetic set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub channels: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub seed: u64,
}

const WALSH_AMPLITUDE: f64 = 0.2;
const GRATING_AMPLITUDE: f64 = 0.15;
const NOISE: f64 = 0.08;
/// Distinct integer wave vectors, one per class.
const WAVES: [(i32, i32); 16] = [
    (1, 0),
    (0, 1),
    (1, 1),
    (1, -1),
    (2, 0),
    (0, 2),
    (2, 1),
    (1, 2),
    (2, -1),
    (1, -2),
    (2, 2),
    (2, -2),
    (3, 0),
    (0, 3),
    (3, 1),
    (1, 3),
];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > WAVES.len() {
            return Err(Error::Config(format!("synthetic classes {} outside 2..=16", self.classes)));
        }
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config("synthetic image_size must be a multiple of patch_size".into()));
        }
        Ok(())
    }

    pub fn label(&self, index: usize) -> usize {
        index % self.classes
    }

    /// Sample `index`: a per-patch sign code of the class on top of a
    /// class-specific grating (whole periods per patch) and uniform noise.
    pub fn sample(&self, index: usize) -> (Vec<f32>, usize) {
        let label = self.label(index);
        let (c_n, size, p) = (self.channels, self.image_size, self.patch_size);
        let grid = size / p;
        let (kx, ky) = WAVES[label];
        let phase = 0.7 * label as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let mut out = Vec::with_capacity(c_n * size * size);
        for c in 0..c_n {
            for y in 0..size {
                for x in 0..size {
                    let feature = ((y / p) * grid + x / p) * c_n + c;
                    let sign = if (feature & label).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
                    let wave = 2.0 * PI * (kx as f64 * x as f64 + ky as f64 * y as f64) / p as f64 + phase;
                    let noise = rng.random_range(-NOISE..NOISE);
                    let v = 0.5 + WALSH_AMPLITUDE * sign + GRATING_AMPLITUDE * wave.sin() + noise;
                    out.push(v as f32);
                }
            }
        }
        (out, label)
    }

    /// Samples `start..start + count` materialized in memory.
    pub fn generate(&self, start: usize, count: usize) -> Result<ImageSet> {
        self.validate()?;
        let mut pixels = Vec::with_capacity(count * self.channels * self.image_size * self.image_size);
        let mut labels = Vec::with_capacity(count);
        for i in start..start + count {
            let (px, label) = self.sample(i);
            pixels.extend(px);
            labels.push(label);
        }
        Ok(ImageSet {
            channels: self.channels,
            size: self.image_size,
            classes: self.classes,
            pixels: Pixels::Floats(pixels),
            labels,
        })
    }
}

/// Mean of every `p x p` patch per channel, in (patch, channel) order.
pub fn patch_means(pixels: &[f32], channels: usize, size: usize, patch: usize) -> Vec<f64> {
    let grid = size / patch;
    let mut out = vec![0.0; grid * grid * channels];
    for c in 0..channels {
        for y in 0..size {
            for x in 0..size {
                let f = ((y / patch) * grid + x / patch) * channels + c;
                out[f] += pixels[(c * size + y) * size + x] as f64;
            }
        }
    }
    let inv = 1.0 / (patch * patch) as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Nearest-centroid classifier over patch means, fitted and scored on `set`.
pub fn centroid_probe_accuracy(set: &ImageSet, patch: usize) -> f64 {
    let feats: Vec<Vec<f64>> = (0..set.len())
        .map(|i| patch_means(&set.pixels(i), set.channels, set.size, patch))
        .collect();
    let dim = feats.first().map_or(0, Vec::len);
    let mut centroids = vec![vec![0.0; dim]; set.classes];
    let mut counts = vec![0usize; set.classes];
    for (f, &l) in feats.iter().zip(&set.labels) {
        counts[l] += 1;
        for (c, v) in centroids[l].iter_mut().zip(f) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let correct = feats
        .iter()
        .zip(&set.labels)
        .filter(|(f, &l)| {
            let dist = |c: &Vec<f64>| c.iter().zip(f.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..set.classes)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap_or(0);
            best == l
        })
        .count();
    correct as f64 / set.len() as f64
}

/// Seeded per-epoch order plus optional horizontal flips.
#[derive(Clone, Debug)]
pub struct EpochPlan {
    pub order: Vec<usize>,
    pub flips: Option<Vec<bool>>,
}

pub fn epoch_plan(len: usize, seed: u64, epoch: usize, flip: bool) -> EpochPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32 | epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    let flips = flip.then(|| (0..len).map(|_| rng.random_bool(0.5)).collect());
    EpochPlan { order, flips }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 10,
            channels: 3,
            image_size: 32,
            patch_size: 8,
            seed: 42,
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let s = spec();
        assert_eq!(s.sample(17), s.sample(17));
        assert_ne!(s.sample(17).0, s.sample(27).0);
        let set = s.generate(0, 100).unwrap();
        for c in 0..10 {
            assert_eq!(set.labels().iter().filter(|&&l| l == c).count(), 10);
        }
        assert!(SyntheticSpec { classes: 17, ..s }.validate().is_err());
    }

    #[test]
    fn synthetic_is_separable_by_patch_means() {
        let set = spec().generate(0, 512).unwrap();
        assert_eq!(centroid_probe_accuracy(&set, 8), 1.0);
        let hard = SyntheticSpec { classes: 16, ..spec() }.generate(0, 512).unwrap();
        assert_eq!(centroid_probe_accuracy(&hard, 8), 1.0);
    }

    #[test]
    fn cifar_records() {
        let mut raw = vec![0u8; 2 * CIFAR_RECORD];
        raw[CIFAR_RECORD] = 7;
        raw[CIFAR_RECORD + 1] = 255;
        let set = parse_cifar_records(&raw, Path::new("x.bin")).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.labels(), &[0, 7]);
        assert!(set.pixels(0).iter().all(|&v| v == 0.0));
        assert_eq!(set.pixels(1)[0], 1.0);
        let img = set.image::<f32>(1);
        assert_eq!(img.shape(), &[3, 32, 32]);
        assert!(matches!(
            parse_cifar_records(&raw[..100], Path::new("x.bin")),
            Err(Error::TruncatedRecord { len: 100, .. })
        ));
        assert!(matches!(
            read_cifar_file(Path::new("/nonexistent/data_batch_1.bin")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn batches_and_flips() {
        let set = spec().generate(0, 4).unwrap();
        let (imgs, labels) = set.batch::<f32>(&[2, 0], None);
        assert_eq!(imgs.shape(), &[2, 3, 32, 32]);
        assert_eq!(labels, vec![2, 0]);
        let (flipped, _) = set.batch::<f32>(&[2], Some(&[true]));
        assert_eq!(flipped.at(&[0, 1, 5, 0]), imgs.at(&[0, 1, 5, 31]));
        let a = epoch_plan(10, 3, 0, true);
        let b = epoch_plan(10, 3, 0, true);
        assert_eq!(a.order, b.order);
        assert_ne!(a.order, epoch_plan(10, 3, 1, false).order);
        let mut sorted = a.order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }
}
