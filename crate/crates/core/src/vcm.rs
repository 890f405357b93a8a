//! JRD-driven coding: per-object PSNR targets, QF search and the final
//! region-adaptive encode.

use alloc::format;
use alloc::vec::Vec;

use crate::codec::{self, rasterize_qfmap, Bitstream, QfMap, MACROBLOCK};
use crate::error::{Error, Result};
use crate::metrics::{mse_region, psnr, psnr_from_mse};
use crate::types::{BoundingBox, ImagePlane, Task, NUM_LEVELS};

/// Version tag of [`QP_TO_QF`]. Bump whenever the table is recalibrated.
pub const QP_TO_QF_VERSION: u32 = 1;

/// Stand-in mapping from a codec QP level to a JPEG quality factor.
///
/// Calibrated on the synthetic corpus under `fixtures/calibration` by
/// [`calibrate_qp_to_qf`]: PSNR targets run linearly from the mean PSNR at
/// QF 100 (QP 0) to the mean PSNR at QF 1 (QP 63), each QP takes the QF
/// whose mean PSNR is closest, and the result is forced non-increasing.
pub const QP_TO_QF: [u8; NUM_LEVELS] = [
    100,  99,  98,  98,  98,  97,  97,  96,  96,  95,  94,  94,  93,  92,  90,  89,
     88,  86,  84,  82,  79,  76,  72,  69,  65,  60,  54,  49,  43,  38,  34,  31,
     28,  26,  24,  22,  20,  18,  17,  15,  14,  13,  12,  11,  11,  10,   9,   8,
      8,   7,   7,   7,   6,   6,   5,   5,   5,   4,   4,   4,   4,   3,   3,   1,
];

pub fn qp_to_qf(qp: u8) -> Result<u8> {
    QP_TO_QF
        .get(qp as usize)
        .copied()
        .ok_or_else(|| Error::invalid(format!("qp {qp} not in 0..=63")))
}

/// Mean full-image PSNR of `corpus` at every QF in `1..=100`.
pub fn mean_psnr_by_qf(corpus: &[ImagePlane]) -> Result<[f64; 100]> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty calibration corpus"));
    }
    let mut out = [0.0; 100];
    for (i, slot) in out.iter_mut().enumerate() {
        let qf = i as u8 + 1;
        let mut sum = 0.0;
        for im in corpus {
            let map = QfMap::uniform(im.width(), im.height(), qf)?;
            let (_, rec) = codec::round_trip(im, &map)?;
            sum += psnr(im, &rec)?;
        }
        *slot = sum / corpus.len() as f64;
    }
    Ok(out)
}

/// Builds a QP-to-QF table from per-QF mean PSNRs (index 0 is QF 1).
pub fn qp_to_qf_from_curve(mean_psnr: &[f64; 100]) -> [u8; NUM_LEVELS] {
    let (hi, lo) = (mean_psnr[99], mean_psnr[0]);
    let mut table = [0u8; NUM_LEVELS];
    let mut prev = 100u8;
    for (qp, slot) in table.iter_mut().enumerate() {
        let target = hi + (lo - hi) * qp as f64 / (NUM_LEVELS - 1) as f64;
        let mut best = (f64::INFINITY, 100u8);
        for (i, &p) in mean_psnr.iter().enumerate() {
            let d = crate::math::abs(p - target);
            if d < best.0 {
                best = (d, i as u8 + 1);
            }
        }
        prev = prev.min(best.1);
        *slot = prev;
    }
    table
}

pub fn calibrate_qp_to_qf(corpus: &[ImagePlane]) -> Result<[u8; NUM_LEVELS]> {
    Ok(qp_to_qf_from_curve(&mean_psnr_by_qf(corpus)?))
}

/// Candidate quality factors, strictly increasing within `1..=100`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QfCandidates(Vec<u8>);

impl QfCandidates {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty QF candidate set"));
        }
        if values.iter().any(|q| !(1..=100).contains(q)) {
            return Err(Error::invalid("QF candidates must lie in 1..=100"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("QF candidates must be strictly increasing"));
        }
        Ok(QfCandidates(values))
    }

    pub fn full() -> Self {
        QfCandidates((1..=100).collect())
    }

    /// The detection and segmentation set used in the original experiments.
    pub fn detection() -> Self {
        QfCandidates(alloc::vec![42, 44, 46, 48, 50])
    }

    pub fn keypoints() -> Self {
        QfCandidates(alloc::vec![46, 48, 50, 52, 54])
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Od | Task::Is => Self::detection(),
            Task::Kpd => Self::keypoints(),
        }
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_box(image: &ImagePlane, bbox: &BoundingBox) -> Result<()> {
    bbox.validate()?;
    if !bbox.fits_within(image.width(), image.height()) {
        return Err(Error::invalid(format!(
            "box {:?} outside {}x{} image",
            bbox,
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// PSNR between `original` and `reference` over the pixels of `bbox`.
pub fn region_target_psnr(original: &ImagePlane, reference: &ImagePlane, bbox: &BoundingBox) -> Result<f64> {
    check_box(original, bbox)?;
    let rect = bbox.pixel_rect(original.width(), original.height());
    Ok(psnr_from_mse(mse_region(original, reference, rect)?))
}

/// Macroblock-aligned rectangle enclosing `bbox`, at least 8 pixels on a
/// side. Blocks inside it are coded exactly as in a full-image encode.
fn aligned_rect(image: &ImagePlane, bbox: &BoundingBox) -> (usize, usize, usize, usize) {
    let (w, h) = (image.width(), image.height());
    let (x0, y0, x1, y1) = bbox.pixel_rect(w, h);
    let mut ax0 = x0 / MACROBLOCK * MACROBLOCK;
    let mut ay0 = y0 / MACROBLOCK * MACROBLOCK;
    let ax1 = x1.div_ceil(MACROBLOCK) * MACROBLOCK;
    let ay1 = y1.div_ceil(MACROBLOCK) * MACROBLOCK;
    let (ax1, ay1) = (ax1.min(w), ay1.min(h));
    while ax1 - ax0 < 8 {
        ax0 -= MACROBLOCK;
    }
    while ay1 - ay0 < 8 {
        ay0 -= MACROBLOCK;
    }
    (ax0, ay0, ax1, ay1)
}

/// Copy of `image` whose region around `bbox` is replaced by its
/// reconstruction at a uniform `qf`.
pub fn encode_region_uniform(image: &ImagePlane, bbox: &BoundingBox, qf: u8) -> Result<ImagePlane> {
    check_box(image, bbox)?;
    let (x0, y0, x1, y1) = aligned_rect(image, bbox);
    let crop = image.crop(x0, y0, x1, y1)?;
    let (_, rec) = codec::round_trip(&crop, &QfMap::uniform(crop.width(), crop.height(), qf)?)?;
    let mut out = image.clone();
    out.paste(&rec, x0, y0)?;
    Ok(out)
}

/// PSNR of the box region after coding it at `qf`.
pub fn region_psnr_at(image: &ImagePlane, bbox: &BoundingBox, qf: u8) -> Result<f64> {
    check_box(image, bbox)?;
    let (x0, y0, x1, y1) = aligned_rect(image, bbox);
    let crop = image.crop(x0, y0, x1, y1)?;
    let (_, rec) = codec::round_trip(&crop, &QfMap::uniform(crop.width(), crop.height(), qf)?)?;
    let (bx0, by0, bx1, by1) = bbox.pixel_rect(image.width(), image.height());
    Ok(psnr_from_mse(mse_region(&crop, &rec, (bx0 - x0, by0 - y0, bx1 - x0, by1 - y0))?))
}

/// Result of a QF search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QfSearch {
    pub qf: u8,
    /// PSNR reached at `qf`.
    pub psnr: f64,
    /// Distinct candidates evaluated.
    pub probes: usize,
    /// Whether every candidate was evaluated.
    pub exhaustive: bool,
}

/// Candidate minimizing `|f(qf) - target|`, ties to the smallest QF.
///
/// Sets no larger than [`binary_probe_budget`] are scanned in full, which
/// costs no more probes and is exact even where `f` is not monotone.
/// Larger sets assume `f` non-decreasing: a lower-bound binary search
/// brackets the target, with both neighbours evaluated by then. If the
/// chosen value sits on a plateau, its left end is located. Should any
/// evaluated pair contradict monotonicity, every candidate is evaluated
/// instead.
pub fn search_argmin<F>(candidates: &QfCandidates, target: f64, mut f: F) -> Result<QfSearch>
where
    F: FnMut(u8) -> Result<f64>,
{
    if !target.is_finite() {
        return Err(Error::invalid("target PSNR must be finite"));
    }
    let c = candidates.as_slice();
    let n = c.len();
    let mut cache: Vec<Option<f64>> = alloc::vec![None; n];
    if n <= binary_probe_budget(n) {
        return scan(c, target, &mut cache, f);
    }
    let mut eval = |i: usize, cache: &mut Vec<Option<f64>>| -> Result<f64> {
        if let Some(v) = cache[i] {
            return Ok(v);
        }
        let v = f(c[i])?;
        cache[i] = Some(v);
        Ok(v)
    };

    // First index with f >= target.
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if eval(mid, &mut cache)? >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let i = lo;
    let mut best = if i == n {
        n - 1
    } else if i == 0 {
        0
    } else {
        let below = target - eval(i - 1, &mut cache)?;
        let above = eval(i, &mut cache)? - target;
        if below <= above { i - 1 } else { i }
    };
    // Only a value below the target can have equal values to its left.
    let v = eval(best, &mut cache)?;
    if v < target && best > 0 && eval(best - 1, &mut cache)? >= v {
        let (mut lo, mut hi) = (0, best - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if eval(mid, &mut cache)? >= v {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        best = lo;
    }

    let probed: Vec<f64> = cache.iter().flatten().copied().collect();
    let monotone = probed.windows(2).all(|w| w[0] <= w[1]);
    if monotone {
        return Ok(QfSearch {
            qf: c[best],
            psnr: cache[best].unwrap(),
            probes: probed.len(),
            exhaustive: false,
        });
    }
    scan(c, target, &mut cache, f)
}

/// Probes a bracketing binary search needs at most over `n` monotone
/// candidates: `ceil(log2 n) + 2`.
pub fn binary_probe_budget(n: usize) -> usize {
    let ceil_log2 = (usize::BITS - n.saturating_sub(1).leading_zeros()) as usize;
    ceil_log2 + 2
}

fn scan<F>(c: &[u8], target: f64, cache: &mut [Option<f64>], mut f: F) -> Result<QfSearch>
where
    F: FnMut(u8) -> Result<f64>,
{
    let mut best = (f64::INFINITY, 0usize);
    for (i, slot) in cache.iter_mut().enumerate() {
        let v = match *slot {
            Some(v) => v,
            None => {
                let v = f(c[i])?;
                *slot = Some(v);
                v
            }
        };
        let d = crate::math::abs(v - target);
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(QfSearch {
        qf: c[best.1],
        psnr: cache[best.1].unwrap(),
        probes: c.len(),
        exhaustive: true,
    })
}

/// Smallest-rate QF whose region PSNR is closest to `target`.
pub fn search_qf(original: &ImagePlane, bbox: &BoundingBox, target: f64, candidates: &QfCandidates) -> Result<QfSearch> {
    check_box(original, bbox)?;
    search_argmin(candidates, target, |qf| region_psnr_at(original, bbox, qf))
}

/// Supplies the quality reference an object's target PSNR is measured on.
pub trait ReferenceSource {
    /// Full-size reconstruction whose quality inside `bbox` corresponds to
    /// codec level `jrd_qp`.
    fn reference(&self, image: &ImagePlane, bbox: &BoundingBox, jrd_qp: u8) -> Result<ImagePlane>;
}

/// Self-contained stand-in: the region coded at `qp_to_qf(jrd_qp)`.
#[derive(Debug, Clone, Copy)]
pub struct InternalReference {
    pub table: [u8; NUM_LEVELS],
}

impl Default for InternalReference {
    fn default() -> Self {
        InternalReference { table: QP_TO_QF }
    }
}

impl InternalReference {
    pub fn qf_for(&self, jrd_qp: u8) -> Result<u8> {
        self.table
            .get(jrd_qp as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("qp {jrd_qp} not in 0..=63")))
    }
}

impl ReferenceSource for InternalReference {
    fn reference(&self, image: &ImagePlane, bbox: &BoundingBox, jrd_qp: u8) -> Result<ImagePlane> {
        encode_region_uniform(image, bbox, self.qf_for(jrd_qp)?)
    }
}

/// Quality requirement of one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectTarget {
    /// JRD as a codec level; the target is read off the reference.
    Jrd(u8),
    /// Target PSNR in dB, given directly.
    Psnr(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcmObject {
    pub bbox: BoundingBox,
    pub target: ObjectTarget,
}

/// One encode for one downstream task.
#[derive(Debug, Clone, PartialEq)]
pub struct VcmJob {
    pub image: ImagePlane,
    pub task: Task,
    pub objects: Vec<VcmObject>,
    pub delta_qf: i32,
    pub background_qf: u8,
}

impl VcmJob {
    pub fn validate(&self) -> Result<()> {
        if !(1..=100).contains(&self.background_qf) {
            return Err(Error::invalid(format!("background QF {} not in 1..=100", self.background_qf)));
        }
        for o in &self.objects {
            check_box(&self.image, &o.bbox)?;
            match o.target {
                ObjectTarget::Jrd(q) if q as usize >= NUM_LEVELS => {
                    return Err(Error::invalid(format!("jrd {q} not in 0..=63")));
                }
                ObjectTarget::Psnr(p) if !p.is_finite() => {
                    return Err(Error::invalid("target PSNR must be finite"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Per-object outcome of the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectPlan {
    pub target_psnr: f64,
    pub search: QfSearch,
    /// Searched QF plus the job offset, clamped to `1..=100`.
    pub applied_qf: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcmOutcome {
    pub bitstream: Bitstream,
    pub bpp: f64,
    pub qfmap: QfMap,
    pub objects: Vec<ObjectPlan>,
}

pub fn plan_object(
    job: &VcmJob,
    object: &VcmObject,
    candidates: &QfCandidates,
    reference: &dyn ReferenceSource,
) -> Result<ObjectPlan> {
    let target_psnr = match object.target {
        ObjectTarget::Psnr(p) => p,
        ObjectTarget::Jrd(q) => {
            let r = reference.reference(&job.image, &object.bbox, q)?;
            region_target_psnr(&job.image, &r, &object.bbox)?
        }
    };
    let search = search_qf(&job.image, &object.bbox, target_psnr, candidates)?;
    let applied_qf = (search.qf as i32 + job.delta_qf).clamp(1, 100) as u8;
    Ok(ObjectPlan { target_psnr, search, applied_qf })
}

/// Rasterizes the per-object QFs over the background and encodes.
pub fn encode_plans(job: &VcmJob, plans: Vec<ObjectPlan>) -> Result<VcmOutcome> {
    if plans.len() != job.objects.len() {
        return Err(Error::invalid("one plan per object required"));
    }
    let regions: Vec<(BoundingBox, u8)> = job.objects.iter().zip(&plans).map(|(o, p)| (o.bbox, p.applied_qf)).collect();
    let (w, h) = (job.image.width(), job.image.height());
    let qfmap = rasterize_qfmap(&regions, job.background_qf, w, h)?;
    let bitstream = codec::encode(&job.image, &qfmap)?;
    let bpp = codec::measure_rate(bitstream.len(), w, h);
    Ok(VcmOutcome { bitstream, bpp, qfmap, objects: plans })
}

pub fn vcm_encode(job: &VcmJob, candidates: &QfCandidates, reference: &dyn ReferenceSource) -> Result<VcmOutcome> {
    job.validate()?;
    let plans = job
        .objects
        .iter()
        .map(|o| plan_object(job, o, candidates, reference))
        .collect::<Result<Vec<_>>>()?;
    encode_plans(job, plans)
}

#[cfg(test)]
mod tests;
