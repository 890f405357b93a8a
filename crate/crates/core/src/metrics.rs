//! Similarity and fidelity metrics: box IoU, mask IoU, OKS, PSNR, SSIM.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::types::{BoundingBox, ImagePlane, KeypointSet, Mask, TaskOutput, NUM_KEYPOINTS};

/// PSNR reported for identical inputs, and the ceiling for all PSNR values.
pub const PSNR_CAP: f64 = 99.0;

/// Per-keypoint falloff constants `k_i = 2 * sigma_i` from the COCO toolkit.
pub const COCO_KAPPAS: [f64; NUM_KEYPOINTS] = [
    0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144, 0.124, 0.124, 0.214, 0.214,
    0.174, 0.174, 0.178, 0.178,
];

/// Similarity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub const ZERO: SimilarityScore = SimilarityScore(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("similarity {value} not in [0,1]")));
        }
        Ok(SimilarityScore(value))
    }

    // Clamps away float noise from ratios that are mathematically in range.
    fn clamped(value: f64) -> Self {
        SimilarityScore(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FidelityReport {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> SimilarityScore {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return SimilarityScore::ZERO;
    }
    let inter = iw * ih;
    SimilarityScore::clamped(inter / (a.area() + b.area() - inter))
}

pub fn mask_iou(a: &Mask, b: &Mask) -> Result<SimilarityScore> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid(format!(
            "mask size mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.bits().iter().zip(b.bits()) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        return Ok(SimilarityScore(1.0));
    }
    Ok(SimilarityScore::clamped(inter as f64 / union as f64))
}

/// Object keypoint similarity. The reference's labeled keypoints (`v > 0`)
/// select which points are compared; its area is the object scale.
pub fn oks(reference: &KeypointSet, candidate: &KeypointSet, kappas: &[f64; NUM_KEYPOINTS]) -> Result<SimilarityScore> {
    let area = reference.area();
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((r, c), &k) in reference.points().iter().zip(candidate.points()).zip(kappas) {
        if r.v == 0 {
            continue;
        }
        let dx = r.x - c.x;
        let dy = r.y - c.y;
        sum += math::exp(-(dx * dx + dy * dy) / (2.0 * area * k * k));
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedSimilarity("reference has no labeled keypoints".into()));
    }
    Ok(SimilarityScore::clamped(sum / n as f64))
}

/// Task similarity between two outputs of the same kind.
pub fn output_similarity(reference: &TaskOutput, candidate: &TaskOutput, kappas: &[f64; NUM_KEYPOINTS]) -> Result<SimilarityScore> {
    match (reference, candidate) {
        (TaskOutput::Box(a), TaskOutput::Box(b)) => Ok(box_iou(a, b)),
        (TaskOutput::Mask(a), TaskOutput::Mask(b)) => mask_iou(a, b),
        (TaskOutput::Keypoints(a), TaskOutput::Keypoints(b)) => oks(a, b, kappas),
        _ => Err(Error::invalid("outputs belong to different tasks")),
    }
}

fn check_same_shape(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "image shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Converts a mean squared error to PSNR, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (20.0 * math::log10(255.0) - 10.0 * math::log10(mse)).min(PSNR_CAP)
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_same_shape(a, b)?;
    let sse: u64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&p, &q)| {
            let d = p as i64 - q as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sse as f64 / a.samples().len() as f64)
}

/// Mean squared error over the pixel rectangle `[x0, x1) x [y0, y1)`.
pub fn mse_region(a: &ImagePlane, b: &ImagePlane, rect: (usize, usize, usize, usize)) -> Result<f64> {
    check_same_shape(a, b)?;
    let (x0, y0, x1, y1) = rect;
    if x1 > a.width() || y1 > a.height() || x0 >= x1 || y0 >= y1 {
        return Err(Error::invalid("region outside image"));
    }
    let c = a.channels();
    let mut sse = 0u64;
    for y in y0..y1 {
        let s = (y * a.width() + x0) * c;
        let e = (y * a.width() + x1) * c;
        for (&p, &q) in a.samples()[s..e].iter().zip(&b.samples()[s..e]) {
            let d = p as i64 - q as i64;
            sse += (d * d) as u64;
        }
    }
    Ok(sse as f64 / ((x1 - x0) * (y1 - y0) * c) as f64)
}

pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Mean SSIM over every 8x8 window position (stride 1, uniform weights,
/// population statistics), averaged across channels.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_same_shape(a, b)?;
    let (w, h, c) = (a.width(), a.height(), a.channels());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid("ssim needs at least 8x8 pixels"));
    }
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.samples().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.samples().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
        total += ssim_plane(&pa, &pb, w, h);
    }
    Ok(total / c as f64)
}

// Windowed sums via summed-area tables.
fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let table = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut t = alloc::vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
            }
        }
        t
    };
    let sa = table(&|i| a[i]);
    let sb = table(&|i| b[i]);
    let saa = table(&|i| a[i] * a[i]);
    let sbb = table(&|i| b[i] * b[i]);
    let sab = table(&|i| a[i] * b[i]);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let win = |t: &[f64], x: usize, y: usize| -> f64 {
        let (x1, y1) = (x + SSIM_WINDOW, y + SSIM_WINDOW);
        t[y1 * (w + 1) + x1] - t[y * (w + 1) + x1] - t[y1 * (w + 1) + x] + t[y * (w + 1) + x]
    };
    let mut acc = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let ma = win(&sa, x, y) / n;
            let mb = win(&sb, x, y) / n;
            let va = (win(&saa, x, y) / n - ma * ma).max(0.0);
            let vb = (win(&sbb, x, y) / n - mb * mb).max(0.0);
            let cov = win(&sab, x, y) / n - ma * mb;
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn fidelity(a: &ImagePlane, b: &ImagePlane) -> Result<FidelityReport> {
    Ok(FidelityReport {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}
