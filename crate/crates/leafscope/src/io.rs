//! Filesystem access: dataset discovery, image codecs and JSON documents.

use std::fs;
use std::path::Path;

use leafscope_core::dataset::DatasetManifest;
use leafscope_core::imgproc::RawImage;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Accepted image extensions, compared case-insensitively.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

fn utf8_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_owned)
        .ok_or_else(|| {
            Error::Core(leafscope_core::Error::Structural(format!(
                "non UTF-8 entry name {}",
                path.display()
            )))
        })
}

/// Discovers a class-per-directory corpus. Every immediate subdirectory of
/// `root` is a class; non-image files are ignored.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Path {
            path: root.to_path_buf(),
            message: "dataset root does not exist or is not a directory".into(),
        });
    }
    let mut listing = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if !path.is_dir() {
            continue;
        }
        let class = utf8_name(&path)?;
        let mut files = Vec::new();
        for f in fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
            let fp = f.map_err(|e| Error::io(&path, e))?.path();
            if fp.is_file() && is_image_file(&fp) {
                files.push(utf8_name(&fp)?);
            }
        }
        listing.push((class, files));
    }
    Ok(DatasetManifest::from_listing(root.display().to_string(), listing)?)
}

/// Decodes any supported image into 8-bit RGB.
pub fn load_image(path: &Path) -> Result<RawImage> {
    let img = image::open(path).map_err(|e| Error::format(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RawImage::new(h as usize, w as usize, 3, img.into_raw())?)
}

/// PNG bytes of a 1- or 3-channel image.
pub fn encode_png(image: &RawImage) -> Vec<u8> {
    use image::ImageEncoder;
    let color = if image.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(image.pixels(), image.width() as u32, image.height() as u32, color)
        .expect("in-memory PNG encoding of a validated buffer");
    out
}

pub fn save_png(path: &Path, image: &RawImage) -> Result<()> {
    write_bytes(path, &encode_png(image))
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::Path {
            path: path.to_path_buf(),
            message: "file not found".into(),
        });
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable document");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
