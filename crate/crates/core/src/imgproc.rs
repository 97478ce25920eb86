//! Deterministic per-image preprocessing: Gaussian blur, CLAHE, bilinear
//! resize, cropping and [0, 1] normalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Interleaved 8-bit image, row-major, `channels` values per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("non-empty image", format!("{height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::shape("1 or 3 channels", format!("{channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} bytes", height * width * channels),
                format!("{} bytes", pixels.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    fn same_shape(&self, pixels: Vec<u8>) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels,
        }
    }
}

/// Image with intensities scaled into [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub blur_kernel: usize,
    pub blur_sigma: f64,
    pub clahe_clip_limit: f64,
    pub clahe_tile_grid: (usize, usize),
    pub storage_size: usize,
    pub model_input_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            blur_kernel: 3,
            blur_sigma: 1.0,
            clahe_clip_limit: 2.0,
            clahe_tile_grid: (8, 8),
            storage_size: 240,
            model_input_size: 224,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blur_kernel == 0 || self.blur_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "preprocess.blur_kernel must be odd and >= 1, got {}",
                self.blur_kernel
            )));
        }
        if self.blur_sigma.is_nan() || self.blur_sigma <= 0.0 {
            return Err(Error::Config("preprocess.blur_sigma must be > 0".into()));
        }
        if self.clahe_clip_limit.is_nan() || self.clahe_clip_limit <= 0.0 {
            return Err(Error::Config("preprocess.clahe_clip_limit must be > 0".into()));
        }
        if self.clahe_tile_grid.0 == 0 || self.clahe_tile_grid.1 == 0 {
            return Err(Error::Config("preprocess.clahe_tile_grid entries must be >= 1".into()));
        }
        if self.storage_size == 0 || self.model_input_size == 0 {
            return Err(Error::Config("preprocess sizes must be >= 1".into()));
        }
        if self.model_input_size > self.storage_size {
            return Err(Error::Config(format!(
                "preprocess.model_input_size {} exceeds storage_size {}",
                self.model_input_size, self.storage_size
            )));
        }
        Ok(())
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    libm::round(v).clamp(0.0, 255.0) as u8
}

/// Normalized 1-D Gaussian weights of odd length `kernel`.
pub fn gaussian_kernel(kernel: usize, sigma: f64) -> Vec<f64> {
    let r = (kernel / 2) as f64;
    let mut w: Vec<f64> = (0..kernel)
        .map(|i| {
            let d = i as f64 - r;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(image: &RawImage, kernel: usize, sigma: f64) -> Result<RawImage> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Config(format!("blur kernel must be odd, got {kernel}")));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::Config(format!("blur sigma must be > 0, got {sigma}")));
    }
    let (h, w, c) = (image.height, image.width, image.channels);
    let k = gaussian_kernel(kernel, sigma);
    let r = (kernel / 2) as isize;
    let clampi = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

    let mut tmp = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, wt) in k.iter().enumerate() {
                    let sx = clampi(x as isize + i as isize - r, w);
                    acc += wt * image.at(y, sx, ch) as f64;
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0u8; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, wt) in k.iter().enumerate() {
                    let sy = clampi(y as isize + i as isize - r, h);
                    acc += wt * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = to_u8(acc);
            }
        }
    }
    Ok(image.same_shape(out))
}

const BINS: usize = 256;

fn reflect101(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Contrast-limited adaptive histogram equalization of one 8-bit plane.
///
/// Tiles that do not divide the plane evenly are completed by mirrored
/// (reflect-101) padding at the bottom/right edge. Each tile histogram is
/// clipped at `clip_limit * tile_area / 256`, the excess spread uniformly,
/// and pixels are mapped through a bilinear blend of the four nearest tile
/// lookup tables.
pub fn clahe_plane(
    plane: &[u8],
    height: usize,
    width: usize,
    clip_limit: f64,
    tile_grid: (usize, usize),
) -> Result<Vec<u8>> {
    let (tiles_y, tiles_x) = tile_grid;
    if tiles_y == 0 || tiles_x == 0 {
        return Err(Error::Config("CLAHE tile grid entries must be >= 1".into()));
    }
    if tiles_y > height || tiles_x > width {
        return Err(Error::Config(format!(
            "CLAHE tile grid {tiles_y}x{tiles_x} is larger than the {height}x{width} image"
        )));
    }
    if clip_limit.is_nan() || clip_limit <= 0.0 {
        return Err(Error::Config(format!("CLAHE clip limit must be > 0, got {clip_limit}")));
    }
    let tile_h = height.div_ceil(tiles_y);
    let tile_w = width.div_ceil(tiles_x);
    let tile_area = tile_h * tile_w;
    let clip = ((clip_limit * tile_area as f64 / BINS as f64) as usize).max(1);
    let lut_scale = (BINS - 1) as f32 / tile_area as f32;

    let mut luts = vec![0u8; tiles_y * tiles_x * BINS];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let mut hist = [0usize; BINS];
            for y in ty * tile_h..(ty + 1) * tile_h {
                let sy = reflect101(y, height);
                for x in tx * tile_w..(tx + 1) * tile_w {
                    hist[plane[sy * width + reflect101(x, width)] as usize] += 1;
                }
            }
            let mut clipped = 0;
            for h in hist.iter_mut() {
                if *h > clip {
                    clipped += *h - clip;
                    *h = clip;
                }
            }
            let batch = clipped / BINS;
            let mut residual = clipped - batch * BINS;
            hist.iter_mut().for_each(|h| *h += batch);
            if let Some(step) = BINS.checked_div(residual) {
                let step = step.max(1);
                let mut i = 0;
                while i < BINS && residual > 0 {
                    hist[i] += 1;
                    i += step;
                    residual -= 1;
                }
            }
            let lut = &mut luts[(ty * tiles_x + tx) * BINS..][..BINS];
            let mut sum = 0usize;
            for (v, h) in lut.iter_mut().zip(hist) {
                sum += h;
                *v = libm::rintf(sum as f32 * lut_scale).clamp(0.0, 255.0) as u8;
            }
        }
    }

    // Tile-centre interpolation coordinates, shared by every row/column.
    let axis = |n: usize, tile: usize, tiles: usize| -> Vec<(usize, usize, f32)> {
        let inv = 1.0f32 / tile as f32;
        (0..n)
            .map(|i| {
                let f = i as f32 * inv - 0.5;
                let t1 = libm::floorf(f);
                let a = f - t1;
                let t1 = t1 as isize;
                let lo = t1.max(0) as usize;
                let hi = ((t1 + 1) as usize).min(tiles - 1);
                (lo, hi, a)
            })
            .collect()
    };
    let xs = axis(width, tile_w, tiles_x);
    let ys = axis(height, tile_h, tiles_y);
    let lut = |ty: usize, tx: usize, v: u8| luts[(ty * tiles_x + tx) * BINS + v as usize] as f32;

    let mut out = vec![0u8; height * width];
    for (y, &(ty1, ty2, ya)) in ys.iter().enumerate() {
        for (x, &(tx1, tx2, xa)) in xs.iter().enumerate() {
            let v = plane[y * width + x];
            let top = lut(ty1, tx1, v) * (1.0 - xa) + lut(ty1, tx2, v) * xa;
            let bottom = lut(ty2, tx1, v) * (1.0 - xa) + lut(ty2, tx2, v) * xa;
            out[y * width + x] = libm::rintf(top * (1.0 - ya) + bottom * ya).clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// CLAHE on the luminance of a full-range YCbCr (BT.601) decomposition for
/// colour images, or directly on the plane for grayscale.
pub fn clahe(image: &RawImage, clip_limit: f64, tile_grid: (usize, usize)) -> Result<RawImage> {
    let (h, w) = (image.height, image.width);
    if image.channels == 1 {
        let out = clahe_plane(&image.pixels, h, w, clip_limit, tile_grid)?;
        return Ok(image.same_shape(out));
    }
    let n = h * w;
    let mut luma = Vec::with_capacity(n);
    let mut chroma = Vec::with_capacity(n);
    for px in image.pixels.chunks_exact(3) {
        let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        chroma.push((b - y, r - y));
        luma.push(to_u8(y));
    }
    let eq = clahe_plane(&luma, h, w, clip_limit, tile_grid)?;
    let mut out = Vec::with_capacity(n * 3);
    for (&y, &(db, dr)) in eq.iter().zip(&chroma) {
        let y = y as f64;
        let r = y + dr;
        let b = y + db;
        let g = (y - 0.299 * r - 0.114 * b) / 0.587;
        out.extend([to_u8(r), to_u8(g), to_u8(b)]);
    }
    Ok(image.same_shape(out))
}

/// Bilinear resize to `target x target` with half-pixel centres.
pub fn resize(image: &RawImage, target: usize) -> Result<RawImage> {
    resize_to(image, target, target)
}

pub fn resize_to(image: &RawImage, out_h: usize, out_w: usize) -> Result<RawImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resize target must be >= 1".into()));
    }
    let (h, w, c) = (image.height, image.width, image.channels);
    let coords = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = libm::floor(s) as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = coords(out_h, h);
    let xs = coords(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = image.at(y0, x0, ch) as f64 * (1.0 - fx) + image.at(y0, x1, ch) as f64 * fx;
                let bot = image.at(y1, x0, ch) as f64 * (1.0 - fx) + image.at(y1, x1, ch) as f64 * fx;
                out.push(to_u8(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    RawImage::new(out_h, out_w, c, out)
}

/// Copies the `size x size` window whose top-left corner is `(top, left)`.
pub fn crop(image: &RawImage, top: usize, left: usize, size: usize) -> Result<RawImage> {
    if size == 0 || top + size > image.height || left + size > image.width {
        return Err(Error::shape(
            format!("{size}x{size} window at ({top},{left}) inside the image"),
            format!("{}x{}", image.height, image.width),
        ));
    }
    let c = image.channels;
    let mut out = Vec::with_capacity(size * size * c);
    for y in top..top + size {
        let start = (y * image.width + left) * c;
        out.extend_from_slice(&image.pixels[start..start + size * c]);
    }
    RawImage::new(size, size, c, out)
}

pub fn center_crop(image: &RawImage, size: usize) -> Result<RawImage> {
    if size > image.height || size > image.width {
        return Err(Error::shape(
            format!("image at least {size}x{size}"),
            format!("{}x{}", image.height, image.width),
        ));
    }
    crop(image, (image.height - size) / 2, (image.width - size) / 2, size)
}

/// Divides every intensity by 255.
pub fn normalize(image: &RawImage) -> NormalizedTensor {
    NormalizedTensor {
        height: image.height,
        width: image.width,
        channels: image.channels,
        values: image.pixels.iter().map(|&v| v as f64 / 255.0).collect(),
    }
}

/// Blur, CLAHE and resize to the storage size; the cached 8-bit form that
/// augmentation and cropping operate on.
pub fn preprocess_raw(image: &RawImage, config: &PreprocessConfig) -> Result<RawImage> {
    config.validate()?;
    let blurred = gaussian_blur(image, config.blur_kernel, config.blur_sigma)?;
    let equalized = clahe(&blurred, config.clahe_clip_limit, config.clahe_tile_grid)?;
    resize(&equalized, config.storage_size)
}

/// Full deterministic pipeline: blur, CLAHE, resize, normalize.
pub fn preprocess(image: &RawImage, config: &PreprocessConfig) -> Result<NormalizedTensor> {
    Ok(normalize(&preprocess_raw(image, config)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> u8) -> RawImage {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.push(f(y, x));
            }
        }
        RawImage::new(h, w, 1, px).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(RawImage::new(0, 3, 3, vec![]).is_err());
        assert!(RawImage::new(1, 1, 2, vec![0, 0]).is_err());
        assert!(RawImage::new(2, 2, 3, vec![0; 11]).is_err());
    }

    #[test]
    fn blur_preserves_constants_and_rejects_even_kernels() {
        let img = RawImage::filled(9, 7, 3, 100).unwrap();
        assert_eq!(gaussian_blur(&img, 5, 1.3).unwrap(), img);
        assert!(matches!(gaussian_blur(&img, 4, 1.0), Err(Error::Config(_))));
        assert!(matches!(gaussian_blur(&img, 3, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn blur_impulse_reproduces_kernel() {
        let img = gray(7, 7, |y, x| if y == 3 && x == 3 { 255 } else { 0 });
        let out = gaussian_blur(&img, 3, 1.0).unwrap();
        let k = gaussian_kernel(3, 1.0);
        for dy in 0..3 {
            for dx in 0..3 {
                let expect = libm::round(255.0 * k[dy] * k[dx]) as u8;
                assert_eq!(out.at(2 + dy, 2 + dx, 0), expect);
            }
        }
        assert_eq!(out.at(0, 0, 0), 0);
    }

    #[test]
    fn clahe_constant_is_spatially_constant() {
        for ch in [1, 3] {
            let img = RawImage::filled(32, 24, ch, 77).unwrap();
            let out = clahe(&img, 2.0, (4, 3)).unwrap();
            let first = &out.pixels()[..ch];
            assert!(out.pixels().chunks(ch).all(|p| p == first));
        }
    }

    #[test]
    fn clahe_rejects_oversized_grid() {
        let img = RawImage::filled(4, 4, 1, 0).unwrap();
        assert!(matches!(clahe(&img, 2.0, (5, 1)), Err(Error::Config(_))));
        assert!(matches!(clahe(&img, 0.0, (2, 2)), Err(Error::Config(_))));
    }

    #[test]
    fn clahe_lut_is_monotone() {
        // a ramp image exercises every intensity; per-tile output must not
        // decrease with input within one tile position
        let img = gray(16, 16, |y, x| ((y * 16 + x) % 256) as u8);
        let out = clahe(&img, 3.0, (1, 1)).unwrap();
        let mut pairs: Vec<(u8, u8)> = img.pixels().iter().copied().zip(out.pixels().iter().copied()).collect();
        pairs.sort();
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn resize_contracts() {
        let img = gray(5, 8, |y, x| (y * 30 + x * 7) as u8);
        assert_eq!(resize_to(&img, 5, 8).unwrap(), img);
        let flat = RawImage::filled(13, 9, 3, 42).unwrap();
        let out = resize(&flat, 20).unwrap();
        assert_eq!((out.height(), out.width(), out.channels()), (20, 20, 3));
        assert!(out.pixels().iter().all(|&v| v == 42));
    }

    #[test]
    fn normalize_values() {
        let img = RawImage::new(1, 3, 1, vec![0, 255, 51]).unwrap();
        let t = normalize(&img);
        assert_eq!(t.values[0], 0.0);
        assert_eq!(t.values[1], 1.0);
        assert!((t.values[2] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn crops() {
        let img = gray(6, 6, |y, x| (y * 6 + x) as u8);
        let c = center_crop(&img, 4).unwrap();
        assert_eq!(c.at(0, 0, 0), 7);
        assert!(crop(&img, 3, 3, 4).is_err());
    }

    #[test]
    fn preprocess_validates_config() {
        let img = RawImage::filled(16, 16, 3, 9).unwrap();
        let bad = PreprocessConfig {
            model_input_size: 300,
            ..PreprocessConfig::default()
        };
        assert!(matches!(preprocess(&img, &bad), Err(Error::Config(_))));
    }
}
