//! PPM (P5/P6) and PNG images and masks.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use mtjrd_core::{ImagePlane, Mask};

use crate::error::{Error, Result};

fn format_of(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm" | "pgm" | "pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::format(path, "expected a .ppm, .pgm or .png file")),
    }
}

/// Reads an 8-bit grey or RGB image; alpha is dropped.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let fmt = format_of(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, fmt).map_err(|e| Error::format(path, e.to_string()))?;
    let plane = match img {
        DynamicImage::ImageLuma8(g) => ImagePlane::new(g.width() as usize, g.height() as usize, 1, g.into_raw()),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            ImagePlane::new(g.width() as usize, g.height() as usize, 1, g.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            ImagePlane::new(rgb.width() as usize, rgb.height() as usize, 3, rgb.into_raw())
        }
    };
    plane.map_err(|e| Error::format(path, e.to_string()))
}

/// Writes binary PPM/PGM or PNG, chosen by extension.
pub fn write_image(path: impl AsRef<Path>, image: &ImagePlane) -> Result<()> {
    let path = path.as_ref();
    let fmt = format_of(path)?;
    let (w, h) = (image.width() as u32, image.height() as u32);
    let dynamic = if image.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, image.samples().to_vec()).expect("plane size"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, image.samples().to_vec()).expect("plane size"))
    };
    let mut out = std::io::Cursor::new(Vec::new());
    dynamic.write_to(&mut out, fmt).map_err(|e| Error::format(path, e.to_string()))?;
    write_bytes(path, &out.into_inner())
}

/// Writes `bytes`, creating missing parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a 0/255 PNG mask; any sample of 128 or more is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, format_of(path)?)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_luma8();
    let bits = img.pixels().map(|p| p.0[0] >= 128).collect();
    Ok(Mask::new(img.width() as usize, img.height() as usize, bits)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let raw = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("mask size");
    img.save_with_format(path, ImageFormat::Png).map_err(|e| Error::format(path, e.to_string()))
}

/// Finds `<dir>/<id>.ppm`, `.pgm` or `.png`.
pub fn find_image(dir: &Path, id: &str) -> Result<PathBuf> {
    for ext in ["ppm", "png", "pgm"] {
        let p = dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::format(dir, format!("no image named {id}.ppm/.png/.pgm")))
}
