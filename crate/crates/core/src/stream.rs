//! Batched input streams for training and evaluation.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::augment::{self, AugmentConfig};
use crate::imgproc::{self, RawImage};
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// One labelled batch of normalized `[n, s, s, 3]` inputs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// A finite, restartable sequence of batches.
pub trait BatchStream {
    /// Items per epoch.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rewinds to the first batch of `epoch` (0-based).
    fn start_epoch(&mut self, epoch: usize);

    fn next_batch(&mut self) -> Result<Option<Batch>>;
}

/// How training items are augmented.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentMode {
    None,
    /// Every original is re-augmented each epoch (copy index `epoch + 1`).
    RealTime(AugmentConfig),
    /// Each original appears once plus `multiplier` fixed augmented copies.
    Offline(AugmentConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    /// Uniformly placed window, redrawn per item and epoch.
    Random,
    Center,
}

/// Stream over images already reduced to the storage size.
#[derive(Debug, Clone)]
pub struct InMemoryStream {
    images: Vec<RawImage>,
    labels: Vec<usize>,
    sample_ids: Vec<usize>,
    /// `(image index, copy index)`
    items: Vec<(usize, usize)>,
    augment: AugmentMode,
    crop: CropMode,
    input_size: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
    epoch: usize,
    order: Vec<usize>,
    cursor: usize,
}

const SHUFFLE_TAG: u64 = 0x5348_5546;
const CROP_TAG: u64 = 0x4352_4f50;

impl InMemoryStream {
    /// `sample_ids` identify each image for seeded augmentation streams.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        images: Vec<RawImage>,
        labels: Vec<usize>,
        sample_ids: Vec<usize>,
        augment: AugmentMode,
        crop: CropMode,
        input_size: usize,
        batch_size: usize,
        seed: u64,
        shuffle: bool,
    ) -> Result<Self> {
        if images.len() != labels.len() || images.len() != sample_ids.len() {
            return Err(Error::shape(
                format!("{} labels and ids", images.len()),
                format!("{} labels, {} ids", labels.len(), sample_ids.len()),
            ));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(img) = images.iter().find(|i| i.height() < input_size || i.width() < input_size || i.channels() != 3) {
            return Err(Error::shape(
                format!("RGB images of at least {input_size}x{input_size}"),
                format!("{}x{}x{}", img.height(), img.width(), img.channels()),
            ));
        }
        let copies = match &augment {
            AugmentMode::None | AugmentMode::RealTime(_) => 0,
            AugmentMode::Offline(cfg) => {
                cfg.validate()?;
                cfg.multiplier
            }
        };
        if let AugmentMode::RealTime(cfg) = &augment {
            cfg.validate()?;
        }
        let items = (0..images.len()).flat_map(|i| (0..=copies).map(move |c| (i, c))).collect();
        let mut s = Self {
            images,
            labels,
            sample_ids,
            items,
            augment,
            crop,
            input_size,
            batch_size,
            seed,
            shuffle,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.start_epoch(0);
        Ok(s)
    }

    /// Deterministic evaluation stream: no augmentation, centre crop, fixed order.
    pub fn evaluation(images: Vec<RawImage>, labels: Vec<usize>, input_size: usize, batch_size: usize) -> Result<Self> {
        let ids = (0..images.len()).collect();
        Self::new(images, labels, ids, AugmentMode::None, CropMode::Center, input_size, batch_size, 0, false)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn render(&self, item: (usize, usize)) -> Result<Vec<f32>> {
        let (idx, copy) = item;
        let sid = self.sample_ids[idx];
        let src = &self.images[idx];
        let augmented;
        let img = match (&self.augment, copy) {
            (AugmentMode::RealTime(cfg), _) => {
                augmented = augment::apply_params(src, &augment::params_for(cfg, sid, self.epoch + 1));
                &augmented
            }
            (AugmentMode::Offline(cfg), c) if c > 0 => {
                augmented = augment::apply_params(src, &augment::params_for(cfg, sid, c));
                &augmented
            }
            _ => src,
        };
        let s = self.input_size;
        let cropped = match self.crop {
            CropMode::Center => imgproc::center_crop(img, s)?,
            CropMode::Random => {
                let mut r = rng::stream(self.seed, &[CROP_TAG, sid as u64, copy as u64, self.epoch as u64]);
                let top = r.random_range(0..=img.height() - s);
                let left = r.random_range(0..=img.width() - s);
                imgproc::crop(img, top, left, s)?
            }
        };
        Ok(cropped.pixels().iter().map(|&v| v as f32 / 255.0).collect())
    }
}

impl BatchStream for InMemoryStream {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn start_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.cursor = 0;
        self.order = (0..self.items.len()).collect();
        if self.shuffle {
            self.order.shuffle(&mut rng::stream(self.seed, &[SHUFFLE_TAG, epoch as u64]));
        }
    }

    fn next_batch(&mut self) -> Result<Option<Batch>> {
        if self.cursor >= self.order.len() {
            return Ok(None);
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let s = self.input_size;
        let mut data = Vec::with_capacity((end - self.cursor) * s * s * 3);
        let mut labels = Vec::with_capacity(end - self.cursor);
        for &k in &self.order[self.cursor..end] {
            let item = self.items[k];
            data.extend(self.render(item)?);
            labels.push(self.labels[item.0]);
        }
        let n = labels.len();
        self.cursor = end;
        Ok(Some(Batch {
            images: Tensor::from_vec([n, s, s, 3], data)?,
            labels,
        }))
    }
}
