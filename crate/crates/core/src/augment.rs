//! Seeded geometric and photometric augmentation.
//!
//! A draw for sample `s`, copy `k` always comes from the stream
//! `(seed, s, k)`, so offline materialization (`k = 1..=multiplier`) and
//! on-the-fly augmentation during training (`k = epoch + 1`) share one
//! draw sequence and are independent of processing order.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Split, SplitAssignment};
use crate::imgproc::RawImage;
use crate::rng::{self, SeededRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Rotation is drawn from `[-max_rotation, max_rotation]` degrees.
    pub max_rotation: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    /// Scale factors; values above 1 magnify.
    pub zoom_range: (f64, f64),
    pub brightness_range: (f64, f64),
    /// Augmented copies generated per training original.
    pub multiplier: usize,
    pub seed: u64,
    /// Train on the materialized expansion instead of fresh per-epoch draws.
    pub offline: bool,
    /// Also augment the evaluation stream.
    pub eval_augment: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation: 30.0,
            horizontal_flip: true,
            vertical_flip: true,
            zoom_range: (0.8, 1.2),
            brightness_range: (0.8, 1.2),
            multiplier: 6,
            seed: 0,
            offline: false,
            eval_augment: false,
        }
    }
}

impl AugmentConfig {
    /// A configuration whose draws are always the identity transform.
    pub fn identity() -> Self {
        Self {
            max_rotation: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
            zoom_range: (1.0, 1.0),
            brightness_range: (1.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.max_rotation) {
            return Err(Error::Config(format!(
                "augment.max_rotation must lie in [0, 180], got {}",
                self.max_rotation
            )));
        }
        for (name, (lo, hi)) in [("zoom_range", self.zoom_range), ("brightness_range", self.brightness_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "augment.{name} must satisfy 0 < low <= high, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// Concrete parameters of one augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation: f64,
    pub h_flip: bool,
    pub v_flip: bool,
    pub zoom: f64,
    pub brightness: f64,
}

impl AugmentParams {
    pub fn within(&self, config: &AugmentConfig) -> bool {
        let in_range = |v: f64, (lo, hi): (f64, f64)| lo <= v && v <= hi;
        self.rotation.abs() <= config.max_rotation
            && (config.horizontal_flip || !self.h_flip)
            && (config.vertical_flip || !self.v_flip)
            && in_range(self.zoom, config.zoom_range)
            && in_range(self.brightness, config.brightness_range)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub source_sample_id: usize,
    pub copy_index: usize,
    pub applied: AugmentParams,
}

fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws rotation, flips, zoom and brightness in that fixed order.
pub fn draw_params(config: &AugmentConfig, rng: &mut SeededRng) -> AugmentParams {
    let rotation = uniform(rng, -config.max_rotation, config.max_rotation);
    let h_flip = config.horizontal_flip && rng.random_bool(0.5);
    let v_flip = config.vertical_flip && rng.random_bool(0.5);
    let zoom = uniform(rng, config.zoom_range.0, config.zoom_range.1);
    let brightness = uniform(rng, config.brightness_range.0, config.brightness_range.1);
    AugmentParams {
        rotation,
        h_flip,
        v_flip,
        zoom,
        brightness,
    }
}

/// Parameters for copy `copy_index` of sample `sample_id`.
pub fn params_for(config: &AugmentConfig, sample_id: usize, copy_index: usize) -> AugmentParams {
    draw_params(config, &mut rng::stream(config.seed, &[sample_id as u64, copy_index as u64]))
}

/// Applies flips, then rotation and zoom about the image centre, then the
/// brightness multiplier. Samples outside the source replicate the border.
pub fn apply_params(image: &RawImage, p: &AugmentParams) -> RawImage {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let theta = p.rotation.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let mut sx = (cos * dx + sin * dy) / p.zoom + cx;
            let mut sy = (-sin * dx + cos * dy) / p.zoom + cy;
            if p.h_flip {
                sx = w as f64 - sx;
            }
            if p.v_flip {
                sy = h as f64 - sy;
            }
            let fx = (sx - 0.5).clamp(0.0, (w - 1) as f64);
            let fy = (sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (libm::floor(fx) as usize, libm::floor(fy) as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            for ch in 0..c {
                let top = image.at(y0, x0, ch) as f64 * (1.0 - ax) + image.at(y0, x1, ch) as f64 * ax;
                let bot = image.at(y1, x0, ch) as f64 * (1.0 - ax) + image.at(y1, x1, ch) as f64 * ax;
                let v = libm::round(top * (1.0 - ay) + bot * ay) * p.brightness;
                out.push(libm::round(v).clamp(0.0, 255.0) as u8);
            }
        }
    }
    RawImage::new(h, w, c, out).expect("shape preserved")
}

/// Draws parameters from `draw` and applies them.
pub fn augment_image(
    image: &RawImage,
    config: &AugmentConfig,
    draw: &mut SeededRng,
    source_sample_id: usize,
) -> Result<(RawImage, AugmentRecord)> {
    config.validate()?;
    let applied = draw_params(config, draw);
    Ok((
        apply_params(image, &applied),
        AugmentRecord {
            source_sample_id,
            copy_index: 0,
            applied,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedEntry {
    pub source_sample_id: usize,
    pub class_id: usize,
    /// 0 for the original, `1..=multiplier` for generated copies.
    pub copy_index: usize,
    pub record: Option<AugmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSet {
    pub entries: Vec<AugmentedEntry>,
}

impl AugmentedSet {
    pub fn records(&self) -> impl Iterator<Item = &AugmentRecord> {
        self.entries.iter().filter_map(|e| e.record.as_ref())
    }
}

/// Plans the expanded training set: every train original followed by its
/// `multiplier` augmented copies. Test and validation samples are never used.
pub fn expand_training_set(
    manifest: &DatasetManifest,
    split: &SplitAssignment,
    config: &AugmentConfig,
) -> Result<AugmentedSet> {
    config.validate()?;
    let assigned = manifest.samples.iter().all(|s| s.split != Split::Unassigned);
    let consistent = split
        .train_ids
        .iter()
        .all(|&i| manifest.samples.get(i).is_some_and(|s| s.split == Split::Train));
    if manifest.samples.is_empty() || !assigned || !consistent {
        return Err(Error::State(
            "manifest split is unassigned or disagrees with the split assignment".into(),
        ));
    }
    let mut entries = Vec::with_capacity(split.train_ids.len() * (1 + config.multiplier));
    for &id in &split.train_ids {
        let class_id = manifest.samples[id].class_id;
        entries.push(AugmentedEntry {
            source_sample_id: id,
            class_id,
            copy_index: 0,
            record: None,
        });
        for copy in 1..=config.multiplier {
            entries.push(AugmentedEntry {
                source_sample_id: id,
                class_id,
                copy_index: copy,
                record: Some(AugmentRecord {
                    source_sample_id: id,
                    copy_index: copy,
                    applied: params_for(config, id, copy),
                }),
            });
        }
    }
    Ok(AugmentedSet { entries })
}

/// Renders one entry of an expanded set from its source image.
pub fn materialize(entry: &AugmentedEntry, source: &RawImage) -> RawImage {
    match &entry.record {
        Some(r) => apply_params(source, &r.applied),
        None => source.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::stratified_split;
    use alloc::string::String;

    fn test_image() -> RawImage {
        let px = (0..20 * 16 * 3).map(|i| (i * 7 % 251) as u8).collect();
        RawImage::new(20, 16, 3, px).unwrap()
    }

    fn manifest(classes: usize, per_class: usize) -> DatasetManifest {
        let listing: Vec<(String, Vec<String>)> = (0..classes)
            .map(|c| (format!("c{c}"), (0..per_class).map(|i| format!("{i}.png")).collect()))
            .collect();
        DatasetManifest::from_listing("root", listing).unwrap()
    }

    #[test]
    fn identity_config_is_pixel_identical() {
        let img = test_image();
        let (out, rec) = augment_image(&img, &AugmentConfig::identity(), &mut rng::seeded(4), 0).unwrap();
        assert_eq!(out, img);
        assert_eq!(rec.applied.rotation, 0.0);
    }

    #[test]
    fn flips_are_exact_mirrors() {
        let img = test_image();
        let p = AugmentParams {
            rotation: 0.0,
            h_flip: true,
            v_flip: false,
            zoom: 1.0,
            brightness: 1.0,
        };
        let out = apply_params(&img, &p);
        for y in 0..20 {
            for x in 0..16 {
                assert_eq!(out.at(y, x, 1), img.at(y, 15 - x, 1));
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let img = test_image();
        let cfg = AugmentConfig::default();
        let a = augment_image(&img, &cfg, &mut rng::seeded(11), 3).unwrap();
        let b = augment_image(&img, &cfg, &mut rng::seeded(11), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config() {
        let cfg = AugmentConfig {
            zoom_range: (1.2, 0.8),
            ..AugmentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = AugmentConfig {
            max_rotation: 200.0,
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn expansion_counts() {
        let mut m = manifest(2, 50);
        let split = stratified_split(&m, 0.8, 1).unwrap();
        assert!(matches!(
            expand_training_set(&m, &split, &AugmentConfig::default()),
            Err(Error::State(_))
        ));
        m.apply_split(&split).unwrap();
        let cfg = AugmentConfig {
            multiplier: 2,
            ..AugmentConfig::default()
        };
        let set = expand_training_set(&m, &split, &cfg).unwrap();
        assert_eq!(set.entries.len(), 240);
        assert_eq!(set.records().count(), 160);
        let none = expand_training_set(
            &m,
            &split,
            &AugmentConfig {
                multiplier: 0,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(none.entries.len(), 80);
        assert_eq!(none.records().count(), 0);
        assert!(set
            .entries
            .iter()
            .all(|e| m.samples[e.source_sample_id].split == Split::Train));
    }

    #[test]
    fn expansion_matches_realtime_draws() {
        let mut m = manifest(1, 4);
        let split = stratified_split(&m, 0.5, 2).unwrap();
        m.apply_split(&split).unwrap();
        let cfg = AugmentConfig::default();
        let set = expand_training_set(&m, &split, &cfg).unwrap();
        for e in set.entries.iter().filter(|e| e.copy_index > 0) {
            assert_eq!(e.record.unwrap().applied, params_for(&cfg, e.source_sample_id, e.copy_index));
        }
    }
}
