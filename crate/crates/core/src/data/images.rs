//! CIFAR-style image corpora in the standard binary archive layout.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;
const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;
const CROP_PAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Which archive flavour was found on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveLayout {
    /// `data_batch_{1..5}.bin` + `test_batch.bin`, one label byte.
    Cifar10,
    /// `train.bin` + `test.bin`, coarse and fine label bytes.
    Cifar100,
}

impl ArchiveLayout {
    fn record_len(self) -> usize {
        match self {
            ArchiveLayout::Cifar10 => 1 + PIXELS,
            ArchiveLayout::Cifar100 => 2 + PIXELS,
        }
    }

    fn classes(self) -> usize {
        match self {
            ArchiveLayout::Cifar10 => 10,
            ArchiveLayout::Cifar100 => 100,
        }
    }

    fn files(self, split: Split) -> Vec<String> {
        match (self, split) {
            (ArchiveLayout::Cifar10, Split::Train) => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            (ArchiveLayout::Cifar10, Split::Val) => vec!["test_batch.bin".into()],
            (ArchiveLayout::Cifar100, Split::Train) => vec!["train.bin".into()],
            (ArchiveLayout::Cifar100, Split::Val) => vec!["test.bin".into()],
        }
    }
}

/// Raw 8-bit images in CHW order with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    fn select(&self, idx: &[usize]) -> ImageSet {
        let mut pixels = Vec::with_capacity(idx.len() * PIXELS);
        for &i in idx {
            pixels.extend_from_slice(self.image(i));
        }
        ImageSet {
            pixels,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Class-balanced subset with `round(fraction · count)` images per class
    /// (at least one), chosen deterministically from `seed`.
    pub fn stratified_subset(&self, fraction: f64, seed: u64) -> Result<ImageSet> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("subset_fraction must lie in (0, 1], got {fraction}")));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let mut keep = Vec::new();
        for mut members in by_class {
            if members.is_empty() {
                continue;
            }
            let n = ((fraction * members.len() as f64).round() as usize).max(1);
            members.shuffle(&mut rng);
            keep.extend_from_slice(&members[..n]);
        }
        keep.sort_unstable();
        Ok(self.select(&keep))
    }
}

/// Per-channel normalization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f32; IMAGE_CHANNELS],
    pub std: [f32; IMAGE_CHANNELS],
}

impl ChannelStats {
    pub fn of(set: &ImageSet) -> Self {
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        let mut sum = [0f64; IMAGE_CHANNELS];
        let mut sq = [0f64; IMAGE_CHANNELS];
        for img in set.pixels.chunks(PIXELS) {
            for c in 0..IMAGE_CHANNELS {
                for &p in &img[c * plane..(c + 1) * plane] {
                    let v = p as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let n = (set.len() * plane).max(1) as f64;
        let mut mean = [0f32; IMAGE_CHANNELS];
        let mut std = [1f32; IMAGE_CHANNELS];
        for c in 0..IMAGE_CHANNELS {
            let m = sum[c] / n;
            mean[c] = m as f32;
            let var = (sq[c] / n - m * m).max(0.0);
            if var > 0.0 {
                std[c] = var.sqrt() as f32;
            }
        }
        ChannelStats { mean, std }
    }
}

/// One split ready for batching.
#[derive(Debug, Clone)]
pub struct ImageDatasetHandle {
    pub split: Split,
    pub set: ImageSet,
    pub stats: ChannelStats,
    pub subset_fraction: f64,
    pub augment: bool,
}

#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl ImageDatasetHandle {
    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.set.classes
    }

    fn write_image<R: Rng>(&self, i: usize, out: &mut [f32], rng: Option<&mut R>) {
        let img = self.set.image(i);
        let side = IMAGE_SIDE;
        let (dy, dx, flip) = match rng {
            Some(r) => (
                r.random_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize,
                r.random_range(0..=2 * CROP_PAD) as isize - CROP_PAD as isize,
                r.random_bool(0.5),
            ),
            None => (0, 0, false),
        };
        for c in 0..IMAGE_CHANNELS {
            let (m, s) = (self.stats.mean[c], self.stats.std[c]);
            for y in 0..side {
                for x in 0..side {
                    let sy = y as isize + dy;
                    let sx0 = if flip { side - 1 - x } else { x };
                    let sx = sx0 as isize + dx;
                    let raw = if sy >= 0 && sx >= 0 && (sy as usize) < side && (sx as usize) < side {
                        img[(c * side + sy as usize) * side + sx as usize] as f32 / 255.0
                    } else {
                        0.0
                    };
                    out[(c * side + y) * side + x] = (raw - m) / s;
                }
            }
        }
    }

    fn batch_of<R: Rng>(&self, idx: &[usize], mut rng: Option<&mut R>) -> ImageBatch {
        let mut data = vec![0f32; idx.len() * PIXELS];
        for (slot, &i) in data.chunks_mut(PIXELS).zip(idx) {
            self.write_image(i, slot, rng.as_deref_mut());
        }
        ImageBatch {
            x: Tensor::from_vec(&[idx.len(), IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], data).expect("batch shape"),
            labels: idx.iter().map(|&i| self.set.labels[i]).collect(),
        }
    }

    /// Shuffled, augmented (train split) batches for one epoch. A trailing
    /// batch of a single image is dropped because batch statistics need two.
    pub fn epoch_batches<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<ImageBatch> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order
            .chunks(batch_size)
            .filter(|c| c.len() > 1 || self.len() == 1)
            .map(|c| {
                if self.augment {
                    self.batch_of(c, Some(&mut *rng))
                } else {
                    self.batch_of::<R>(c, None)
                }
            })
            .collect()
    }

    /// Unaugmented batches in storage order.
    pub fn eval_batches(&self, batch_size: usize) -> Vec<ImageBatch> {
        let order: Vec<usize> = (0..self.len()).collect();
        order.chunks(batch_size).map(|c| self.batch_of::<ChaCha8Rng>(c, None)).collect()
    }
}

fn locate(root: &Path) -> Result<(PathBuf, ArchiveLayout)> {
    for dir in [root.to_path_buf(), root.join("cifar-10-batches-bin"), root.join("cifar-100-binary")] {
        if dir.join("data_batch_1.bin").is_file() {
            return Ok((dir, ArchiveLayout::Cifar10));
        }
        if dir.join("train.bin").is_file() {
            return Ok((dir, ArchiveLayout::Cifar100));
        }
    }
    Err(Error::ingest(root, "no CIFAR binary archive found (expected data_batch_1.bin or train.bin)"))
}

fn read_split(dir: &Path, layout: ArchiveLayout, split: Split) -> Result<ImageSet> {
    let rec = layout.record_len();
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in layout.files(split) {
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(|e| Error::ingest(&path, e.to_string()))?;
        if bytes.is_empty() || bytes.len() % rec != 0 {
            return Err(Error::ingest(&path, format!("length {} is not a multiple of {rec}", bytes.len())));
        }
        for r in bytes.chunks(rec) {
            let label = r[rec - PIXELS - 1] as usize;
            if label >= layout.classes() {
                return Err(Error::ingest(&path, format!("label {label} out of range")));
            }
            labels.push(label);
            pixels.extend_from_slice(&r[rec - PIXELS..]);
        }
    }
    Ok(ImageSet {
        pixels,
        labels,
        classes: layout.classes(),
    })
}

/// Loads both splits. The subset applies to the training split only, and
/// normalization statistics come from the (subset) training images.
pub fn load_image_splits(root: &Path, subset_fraction: f64, seed: u64) -> Result<(ImageDatasetHandle, ImageDatasetHandle)> {
    let (dir, layout) = locate(root)?;
    let train = read_split(&dir, layout, Split::Train)?.stratified_subset(subset_fraction, seed)?;
    let val = read_split(&dir, layout, Split::Val)?;
    let stats = ChannelStats::of(&train);
    log::info!("loaded {} train / {} val images ({} classes)", train.len(), val.len(), train.classes);
    Ok((
        ImageDatasetHandle {
            split: Split::Train,
            set: train,
            stats,
            subset_fraction,
            augment: true,
        },
        ImageDatasetHandle {
            split: Split::Val,
            set: val,
            stats,
            subset_fraction,
            augment: false,
        },
    ))
}

pub fn load_images(root: &Path, split: Split, subset_fraction: f64, seed: u64) -> Result<ImageDatasetHandle> {
    let (train, val) = load_image_splits(root, subset_fraction, seed)?;
    Ok(match split {
        Split::Train => train,
        Split::Val => val,
    })
}
