//! Generated class-per-directory corpora for smoke runs and tests.

use std::path::Path;

use leafscope_core::imgproc::RawImage;
use leafscope_core::rng;
use rand::Rng;

use crate::{io, Result};

/// Directory names of the eight mango-leaf categories.
pub const MANGO_CLASSES: [&str; 8] = [
    "Anthracnose",
    "Bacterial_Canker",
    "Cutting_Weevil",
    "Die_Back",
    "Gall_Midge",
    "Healthy",
    "Powdery_Mildew",
    "Sooty_Mould",
];

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// One textured image whose dominant hue encodes `class_id` (45 degrees
/// apart), with per-image hue and value jitter, darker spots and pixel noise.
pub fn class_image(class_id: usize, index: usize, size: usize, seed: u64) -> RawImage {
    let mut r = rng::stream(seed, &[class_id as u64, index as u64]);
    let hue = class_id as f64 * 45.0 + r.random_range(-8.0..8.0);
    let value = r.random_range(0.6..0.85);
    let base = hsv_to_rgb(hue, 0.75, value);
    let spot_color = hsv_to_rgb(hue, 0.9, value * 0.6);
    let spots: Vec<(f64, f64, f64)> = (0..r.random_range(2..6))
        .map(|_| {
            (
                r.random_range(0.0..size as f64),
                r.random_range(0.0..size as f64),
                r.random_range(0.05..0.15) * size as f64,
            )
        })
        .collect();
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let in_spot = spots.iter().any(|&(sx, sy, rad)| {
                let (dx, dy) = (x as f64 - sx, y as f64 - sy);
                dx * dx + dy * dy <= rad * rad
            });
            let c = if in_spot { spot_color } else { base };
            for v in c {
                let noisy = v + r.random_range(-12.0..12.0);
                pixels.push(noisy.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RawImage::new(size, size, 3, pixels).expect("buffer sized for the image")
}

/// Writes `per_class` PNG images of side `size` for each class under
/// `root/<class>/`.
pub fn generate_dataset(root: &Path, classes: &[&str], per_class: usize, size: usize, seed: u64) -> Result<()> {
    for (c, name) in classes.iter().enumerate() {
        for i in 0..per_class {
            let path = root.join(name).join(format!("{name}_{i:04}.png"));
            io::save_png(&path, &class_image(c, i, size, seed))?;
        }
    }
    Ok(())
}
