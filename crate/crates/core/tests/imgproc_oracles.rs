//! Preprocessing checked against independent oracles: a direct 2-D
//! convolution for the blur and reference CLAHE outputs computed with
//! OpenCV's `createCLAHE(...).apply` on the same deterministic inputs.

use leafscope_core::imgproc::{
    clahe, gaussian_blur, gaussian_kernel, normalize, preprocess, preprocess_raw, resize, PreprocessConfig, RawImage,
};
use leafscope_core::rng;
use rand::Rng;

// Generated with OpenCV 4 from `pattern(h, w)` below.
const OPENCV_16X16_T2X2_CLIP2: [u8; 256] = [8, 52, 88, 124, 159, 186, 224, 10, 50, 81, 113, 142, 187, 223, 16, 44, 104, 155, 191, 239, 36, 89, 127, 173, 217, 20, 61, 102, 147, 60, 104, 151, 183, 255, 68, 112, 171, 222, 30, 200, 255, 61, 116, 176, 231, 139, 207, 24, 28, 100, 167, 235, 64, 230, 50, 112, 179, 100, 173, 248, 56, 243, 48, 120, 116, 195, 24, 108, 40, 126, 197, 141, 215, 45, 229, 55, 135, 72, 155, 239, 208, 46, 141, 95, 175, 14, 214, 60, 253, 83, 180, 127, 218, 165, 12, 88, 41, 147, 251, 214, 71, 18, 114, 78, 176, 136, 240, 197, 46, 8, 96, 207, 135, 248, 224, 82, 52, 158, 128, 244, 214, 71, 40, 146, 118, 78, 206, 184, 227, 96, 78, 201, 181, 160, 26, 15, 134, 115, 91, 229, 203, 187, 50, 34, 66, 198, 186, 179, 68, 60, 46, 183, 174, 163, 47, 33, 29, 26, 151, 142, 149, 34, 40, 49, 57, 203, 211, 213, 216, 89, 93, 93, 100, 104, 7, 13, 242, 133, 156, 171, 190, 208, 227, 114, 129, 144, 156, 183, 194, 206, 95, 116, 84, 251, 12, 32, 72, 93, 110, 135, 167, 200, 228, 254, 20, 44, 219, 247, 163, 219, 243, 16, 60, 96, 126, 166, 211, 250, 22, 57, 76, 131, 171, 207, 255, 48, 104, 139, 199, 247, 25, 79, 120, 180, 235, 16, 60, 239, 20, 64, 96, 151, 227, 8, 76, 124, 193, 100, 159, 232, 25, 70, 139, 56, 108, 187];
const OPENCV_13X11_T3X2_CLIP3: [u8; 143] = [8, 51, 76, 136, 160, 193, 230, 14, 58, 94, 128, 102, 153, 204, 246, 34, 85, 144, 173, 227, 26, 85, 187, 255, 68, 119, 175, 224, 30, 207, 255, 76, 136, 25, 96, 168, 238, 58, 233, 45, 121, 188, 110, 181, 123, 207, 17, 110, 34, 132, 205, 150, 223, 48, 241, 212, 38, 136, 94, 171, 10, 216, 61, 251, 98, 200, 31, 138, 252, 218, 63, 15, 117, 85, 186, 159, 240, 122, 246, 228, 91, 43, 151, 125, 244, 220, 77, 35, 237, 110, 85, 205, 181, 157, 22, 16, 145, 125, 105, 68, 196, 190, 175, 71, 56, 41, 189, 177, 165, 44, 144, 26, 38, 51, 54, 205, 208, 212, 217, 81, 89, 244, 139, 154, 170, 192, 209, 230, 106, 122, 144, 156, 94, 253, 17, 32, 76, 92, 103, 135, 164, 190, 237];

fn pattern(h: usize, w: usize) -> RawImage {
    let px = (0..h)
        .flat_map(|y| (0..w).map(move |x| ((x * 37 + y * 91 + ((x * y) % 13) * 11) % 256) as u8))
        .collect();
    RawImage::new(h, w, 1, px).unwrap()
}

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> RawImage {
    let mut r = rng::seeded(seed);
    RawImage::new(h, w, c, (0..h * w * c).map(|_| r.random::<u8>()).collect()).unwrap()
}

#[test]
fn clahe_matches_opencv_on_divisible_grid() {
    let out = clahe(&pattern(16, 16), 2.0, (2, 2)).unwrap();
    assert_eq!(out.pixels(), &OPENCV_16X16_T2X2_CLIP2[..]);
}

#[test]
fn clahe_matches_opencv_with_padded_tiles() {
    let out = clahe(&pattern(13, 11), 3.0, (3, 2)).unwrap();
    assert_eq!(out.pixels(), &OPENCV_13X11_T3X2_CLIP3[..]);
}

fn std_dev(v: &[u8]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    (v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn clahe_spreads_low_contrast_two_level_image() {
    let px = (0..64 * 64).map(|i| if (i / 64 + i % 64) % 3 == 0 { 110 } else { 100 }).collect();
    let img = RawImage::new(64, 64, 1, px).unwrap();
    let out = clahe(&img, 2.0, (8, 8)).unwrap();
    assert!(std_dev(out.pixels()) >= std_dev(img.pixels()));
    let rgb = RawImage::new(64, 64, 3, img.pixels().iter().flat_map(|&v| [v, v, v]).collect()).unwrap();
    let out = clahe(&rgb, 2.0, (8, 8)).unwrap();
    assert_eq!((out.height(), out.width(), out.channels()), (64, 64, 3));
    assert!(std_dev(out.pixels()) >= std_dev(rgb.pixels()));
}

#[test]
fn clahe_keeps_gray_pixels_gray() {
    let img = random_image(24, 24, 1, 5);
    let rgb = RawImage::new(24, 24, 3, img.pixels().iter().flat_map(|&v| [v, v, v]).collect()).unwrap();
    let out = clahe(&rgb, 2.0, (3, 3)).unwrap();
    for px in out.pixels().chunks(3) {
        assert!(px[0].abs_diff(px[1]) <= 1 && px[1].abs_diff(px[2]) <= 1, "{px:?}");
    }
}

fn brute_force_blur(img: &RawImage, kernel: usize, sigma: f64) -> Vec<f64> {
    // 2-D kernel built directly from the Gaussian density.
    let r = (kernel / 2) as isize;
    let mut k2 = vec![0.0; kernel * kernel];
    for i in 0..kernel {
        for j in 0..kernel {
            let (dy, dx) = (i as f64 - r as f64, j as f64 - r as f64);
            k2[i * kernel + j] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = k2.iter().sum();
    k2.iter_mut().for_each(|v| *v /= s);
    let (h, w, c) = (img.height() as isize, img.width() as isize, img.channels());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for i in -r..=r {
                    for j in -r..=r {
                        let sy = (y + i).clamp(0, h - 1) as usize;
                        let sx = (x + j).clamp(0, w - 1) as usize;
                        acc += k2[((i + r) * kernel as isize + j + r) as usize] * img.at(sy, sx, ch) as f64;
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

#[test]
fn blur_matches_nested_loop_convolution() {
    for (kernel, sigma, seed) in [(3, 1.0, 1), (5, 1.7, 2), (7, 0.8, 3)] {
        let img = random_image(16, 16, 3, seed);
        let out = gaussian_blur(&img, kernel, sigma).unwrap();
        let oracle = brute_force_blur(&img, kernel, sigma);
        for (o, e) in out.pixels().iter().zip(&oracle) {
            assert!((*o as f64 - e).abs() <= 1.0, "{o} vs {e}");
        }
    }
    assert_eq!(gaussian_kernel(3, 1.0).len(), 3);
}

#[test]
fn resize_paper_capture_resolution() {
    let img = RawImage::filled(3024, 4032, 3, 17).unwrap();
    let out = resize(&img, 240).unwrap();
    assert_eq!((out.height(), out.width(), out.channels()), (240, 240, 3));
    assert!(out.pixels().iter().all(|&v| v == 17));
}

#[test]
fn preprocess_is_the_composition_of_its_stages() {
    let cfg = PreprocessConfig {
        storage_size: 40,
        model_input_size: 32,
        clahe_tile_grid: (4, 4),
        ..PreprocessConfig::default()
    };
    let img = random_image(50, 60, 3, 9);
    let manual = normalize(
        &resize(
            &clahe(&gaussian_blur(&img, 3, 1.0).unwrap(), 2.0, (4, 4)).unwrap(),
            40,
        )
        .unwrap(),
    );
    let out = preprocess(&img, &cfg).unwrap();
    assert_eq!(out, manual);
    assert_eq!(preprocess(&img, &cfg).unwrap(), out);
    assert_eq!(normalize(&preprocess_raw(&img, &cfg).unwrap()), out);
}

#[test]
fn preprocess_constant_image_stays_constant() {
    let cfg = PreprocessConfig::default();
    let img = RawImage::filled(300, 280, 3, 128).unwrap();
    let out = preprocess(&img, &cfg).unwrap();
    assert_eq!((out.height, out.width, out.channels), (240, 240, 3));
    let first = &out.values[..3];
    assert!(out.values.chunks(3).all(|p| p == first));
    assert!(out.values.iter().all(|v| (0.0..=1.0).contains(v)));
}
