use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::types::{attribute_triplet, BoundingBox, ImagePlane};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Normalized `size x size x 3` tensor, row-major, channels last.
    pub input: Vec<f64>,
    pub attrs: [f64; 3],
    /// Ground-truth JRD per task; `None` when the task has no label.
    pub jrd: [Option<u8>; 3],
}

/// Crops `bbox`, resizes it bilinearly to `size x size` and normalizes
/// with the ImageNet statistics. Grey images are replicated to RGB.
pub fn prepare_input(image: &ImagePlane, bbox: &BoundingBox, size: usize) -> Result<Vec<f64>> {
    if size == 0 {
        return Err(Error::invalid("input size must be positive"));
    }
    bbox.validate()?;
    let (x0, y0, x1, y1) = bbox.pixel_rect(image.width(), image.height());
    let (cw, ch) = ((x1 - x0) as f64, (y1 - y0) as f64);
    let c = image.channels();
    let mut out = Vec::with_capacity(size * size * 3);
    for oy in 0..size {
        let sy = ((oy as f64 + 0.5) * ch / size as f64 - 0.5).clamp(0.0, ch - 1.0);
        let (ya, fy) = (math::floor(sy) as usize, sy - math::floor(sy));
        let yb = (ya + 1).min(y1 - y0 - 1);
        for ox in 0..size {
            let sx = ((ox as f64 + 0.5) * cw / size as f64 - 0.5).clamp(0.0, cw - 1.0);
            let (xa, fx) = (math::floor(sx) as usize, sx - math::floor(sx));
            let xb = (xa + 1).min(x1 - x0 - 1);
            for k in 0..3 {
                let ch_ = if c == 3 { k } else { 0 };
                let px = |x: usize, y: usize| image.get(x0 + x, y0 + y, ch_) as f64;
                let top = px(xa, ya) * (1.0 - fx) + px(xb, ya) * fx;
                let bot = px(xa, yb) * (1.0 - fx) + px(xb, yb) * fx;
                let v = (top * (1.0 - fy) + bot * fy) / 255.0;
                out.push((v - IMAGENET_MEAN[k]) / IMAGENET_STD[k]);
            }
        }
    }
    Ok(out)
}

/// Number of examples in the toy set.
pub const TOY_SAMPLES: usize = 32;
const TOY_LEVELS: usize = 16;

/// JRDs of scale level `level` for the three tasks.
pub fn toy_jrd(level: usize) -> [u8; 3] {
    let l = 3 * level as u8;
    [12 + l, 10 + l, 6 + l]
}

/// Coloured disks, squares and ring patterns on a plain background. The
/// JRD of every task is a fixed function of the pattern's scale level.
pub fn toy_dataset(size: usize, seed: u64) -> Result<Vec<Sample>> {
    if size < 16 {
        return Err(Error::invalid("toy images need at least 16 pixels per side"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut out = Vec::with_capacity(TOY_SAMPLES);
    for i in 0..TOY_SAMPLES {
        let level = i % TOY_LEVELS;
        let shape = (i / TOY_LEVELS + level) % 3;
        let r = s * (0.08 + 0.025 * level as f64);
        let cx = rng.random_range(r..s - r);
        let cy = rng.random_range(r..s - r);
        let bg: [f64; 3] = core::array::from_fn(|_| rng.random_range(0.0..90.0));
        let fg: [f64; 3] = core::array::from_fn(|_| rng.random_range(140.0..255.0));
        let mut px = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let d = math::sqrt(dx * dx + dy * dy);
                let inside = match shape {
                    0 => d <= r,
                    1 => math::abs(dx) <= r && math::abs(dy) <= r,
                    _ => d <= r && d >= 0.5 * r,
                };
                let col = if inside { fg } else { bg };
                px.extend(col.iter().map(|&v| math::round(v) as u8));
            }
        }
        let image = ImagePlane::new(size, size, 3, px)?;
        let bbox = BoundingBox::new((cx - r).max(0.0), (cy - r).max(0.0), 2.0 * r, 2.0 * r)?;
        let attrs = attribute_triplet(&bbox, size, size)?.as_array();
        let full = BoundingBox::new(0.0, 0.0, s, s)?;
        out.push(Sample {
            input: prepare_input(&image, &full, size)?,
            attrs,
            jrd: toy_jrd(level).map(Some),
        });
    }
    Ok(out)
}
