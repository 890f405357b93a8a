//! Task accuracy, rate-accuracy curves, Bjontegaard deltas and quality
//! comparisons between two codings.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::codec::{measure_rate, Bitstream};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{output_similarity, psnr, ssim, COCO_KAPPAS};
use crate::types::{ImagePlane, Task, TaskResponse, NUM_KEYPOINTS};

/// `0.50:0.05:0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApParams {
    pub thresholds: Vec<f64>,
    pub kappas: [f64; NUM_KEYPOINTS],
    /// Keep only responses of this class.
    pub class_id: Option<i64>,
}

impl Default for ApParams {
    fn default() -> Self {
        ApParams {
            thresholds: coco_thresholds(),
            kappas: COCO_KAPPAS,
            class_id: Some(1),
        }
    }
}

impl ApParams {
    pub fn single(threshold: f64) -> Self {
        ApParams {
            thresholds: alloc::vec![threshold],
            ..Default::default()
        }
    }
}

/// 101-point interpolated precision at the given matching threshold.
fn ap_at(order: &[usize], sims: &[Vec<f64>], n_refs: usize, threshold: f64) -> f64 {
    let mut taken = alloc::vec![false; n_refs];
    let mut tp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(order.len());
    for (rank, &p) in order.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (r, &s) in sims[p].iter().enumerate() {
            if taken[r] || s < threshold {
                continue;
            }
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, r));
            }
        }
        if let Some((_, r)) = best {
            taken[r] = true;
            tp += 1;
        }
        curve.push((tp as f64 / n_refs as f64, tp as f64 / (rank + 1) as f64));
    }
    // Precision envelope from the right.
    for i in (0..curve.len().saturating_sub(1)).rev() {
        curve[i].1 = curve[i].1.max(curve[i + 1].1);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        while k < curve.len() && curve[k].0 < r {
            k += 1;
        }
        if k < curve.len() {
            sum += curve[k].1;
        }
    }
    sum / 101.0
}

/// Single-class average precision of `predictions` against `references`,
/// averaged over the matching thresholds.
///
/// Predictions are visited by descending confidence (ties keep input
/// order); each takes the unmatched reference of highest similarity at or
/// above the threshold.
pub fn average_precision(predictions: &[TaskResponse], references: &[TaskResponse], params: &ApParams) -> Result<f64> {
    let keep = |r: &&TaskResponse| params.class_id.is_none_or(|c| r.class_id == c);
    let refs: Vec<&TaskResponse> = references.iter().filter(keep).collect();
    let preds: Vec<&TaskResponse> = predictions.iter().filter(keep).collect();
    if refs.is_empty() {
        return Err(Error::invalid("no reference objects to evaluate against"));
    }
    if params.thresholds.is_empty() || params.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("AP thresholds must be a non-empty list in [0,1]"));
    }
    let mut sims = Vec::with_capacity(preds.len());
    for p in &preds {
        let mut row = Vec::with_capacity(refs.len());
        for r in &refs {
            if p.task() != r.task() {
                return Err(Error::invalid("predictions and references mix tasks"));
            }
            let s = match output_similarity(r.output(), p.output(), &params.kappas) {
                Ok(s) => s.value(),
                Err(Error::UndefinedSimilarity(_)) => 0.0,
                Err(e) => return Err(e),
            };
            row.push(s);
        }
        sims.push(row);
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let total: f64 = params
        .thresholds
        .iter()
        .map(|&t| ap_at(&order, &sims, refs.len(), t))
        .sum();
    Ok(total / params.thresholds.len() as f64)
}

/// Accuracy in `[0,1]` as a function of bits per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAccuracyCurve {
    pub label: String,
    pub task: Task,
    points: Vec<(f64, f64)>,
}

pub const MIN_CURVE_POINTS: usize = 4;

impl RateAccuracyCurve {
    /// Sorts by bpp and validates.
    pub fn new(label: impl Into<String>, task: Task, mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < MIN_CURVE_POINTS {
            return Err(Error::invalid(format!(
                "a rate-accuracy curve needs at least {MIN_CURVE_POINTS} points, got {}",
                points.len()
            )));
        }
        for &(b, a) in &points {
            if !(b.is_finite() && b > 0.0) || !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("curve point ({b}, {a}) out of range")));
            }
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = points.windows(2).find(|w| w[1].0 - w[0].0 <= 1e-9) {
            return Err(Error::invalid(format!("duplicate rate {} in curve", w[0].0)));
        }
        Ok(RateAccuracyCurve { label: label.into(), task, points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// One rung of an encoding ladder with the responses obtained on its
/// reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderPoint {
    pub bitstream: Bitstream,
    pub predictions: Vec<TaskResponse>,
    pub references: Vec<TaskResponse>,
}

pub fn rate_accuracy_curve(label: &str, task: Task, ladder: &[LadderPoint], params: &ApParams) -> Result<RateAccuracyCurve> {
    let mut pts = Vec::with_capacity(ladder.len());
    for p in ladder {
        let info = p.bitstream.info()?;
        let bpp = measure_rate(p.bitstream.len(), info.width, info.height);
        pts.push((bpp, average_precision(&p.predictions, &p.references, params)?));
    }
    RateAccuracyCurve::new(label, task, pts)
}

/// Monotone cubic Hermite interpolant (Fritsch-Carlson slopes with
/// three-point end conditions).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

fn same_sign(a: f64, b: f64) -> bool {
    (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::invalid("interpolation needs at least two points"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("interpolation abscissae must be strictly increasing"));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = alloc::vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
            return Ok(Pchip { x, y, d });
        }
        for k in 1..n - 1 {
            if same_sign(delta[k - 1], delta[k]) {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        let edge = |h0: f64, h1: f64, m0: f64, m1: f64| -> f64 {
            let e = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
            if !same_sign(e, m0) {
                0.0
            } else if !same_sign(m0, m1) && math::abs(e) > math::abs(3.0 * m0) {
                3.0 * m0
            } else {
                e
            }
        };
        d[0] = edge(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Ok(Pchip { x, y, d })
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    /// Value at `t`, extrapolating the end cubics outside the knots.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

/// Integrals of `f` and `g` over `[lo, hi]`, exact for functions that are
/// cubic between consecutive `breaks`.
fn integrate_pair(f: &Pchip, g: &Pchip, lo: f64, hi: f64) -> (f64, f64) {
    let mut b: Vec<f64> = f
        .knots()
        .iter()
        .chain(g.knots())
        .copied()
        .filter(|&v| v > lo && v < hi)
        .collect();
    b.push(lo);
    b.push(hi);
    b.sort_by(f64::total_cmp);
    b.dedup();
    let r = 1.0 / math::sqrt(3.0);
    let (mut sf, mut sg) = (0.0, 0.0);
    for w in b.windows(2) {
        let (m, half) = ((w[0] + w[1]) / 2.0, (w[1] - w[0]) / 2.0);
        let (t0, t1) = (m - half * r, m + half * r);
        sf += half * (f.eval(t0) + f.eval(t1));
        sg += half * (g.eval(t0) + g.eval(t1));
    }
    (sf, sg)
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let lo = a[0].max(b[0]);
    let hi = a[a.len() - 1].min(b[b.len() - 1]);
    if !(hi > lo) {
        return Err(Error::invalid("curves do not overlap"));
    }
    Ok((lo, hi))
}

/// Mean accuracy gain of `test` over `reference` at equal rate, in
/// percentage points, over the shared log-rate interval.
pub fn bd_metric(reference: &RateAccuracyCurve, test: &RateAccuracyCurve) -> Result<f64> {
    let fit = |c: &RateAccuracyCurve| {
        Pchip::new(
            c.points.iter().map(|p| math::ln(p.0)).collect(),
            c.points.iter().map(|p| 100.0 * p.1).collect(),
        )
    };
    let (fr, ft) = (fit(reference)?, fit(test)?);
    let (lo, hi) = overlap(fr.knots(), ft.knots())?;
    let (ir, it) = integrate_pair(&fr, &ft, lo, hi);
    Ok((it - ir) / (hi - lo))
}

/// Mean rate change of `test` relative to `reference` at equal accuracy,
/// in percent (negative is a saving). Accuracy must rise strictly with
/// rate on both curves.
pub fn bd_rate(reference: &RateAccuracyCurve, test: &RateAccuracyCurve) -> Result<f64> {
    let fit = |c: &RateAccuracyCurve| {
        if c.points.windows(2).any(|w| !(w[1].1 > w[0].1)) {
            return Err(Error::invalid(format!("accuracy of curve '{}' is not strictly increasing", c.label)));
        }
        Pchip::new(
            c.points.iter().map(|p| 100.0 * p.1).collect(),
            c.points.iter().map(|p| math::ln(p.0)).collect(),
        )
    };
    let (fr, ft) = (fit(reference)?, fit(test)?);
    let (lo, hi) = overlap(fr.knots(), ft.knots())?;
    let (ir, it) = integrate_pair(&fr, &ft, lo, hi);
    Ok((math::exp((it - ir) / (hi - lo)) - 1.0) * 100.0)
}

/// Agreement between codings driven by predicted and ground-truth JRDs.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QualityDeltaReport {
    pub mae_psnr: f64,
    pub mae_ssim: f64,
    pub r2_psnr: f64,
    pub r2_ssim: f64,
    pub objects: usize,
}

/// Coefficient of determination of the least-squares line through
/// `(x, y)`. Constant inputs give 1 if both are constant, else 0.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    match (sxx > 0.0, syy > 0.0) {
        (false, false) => 1.0,
        (true, true) => (sxy * sxy / (sxx * syy)).min(1.0),
        _ => 0.0,
    }
}

/// Report from per-object quality scores, `(ground truth, predicted)`.
pub fn quality_delta_from_scores(psnr_pairs: &[(f64, f64)], ssim_pairs: &[(f64, f64)]) -> Result<QualityDeltaReport> {
    if psnr_pairs.is_empty() || psnr_pairs.len() != ssim_pairs.len() {
        return Err(Error::invalid("quality report needs equally many PSNR and SSIM pairs"));
    }
    let mae = |v: &[(f64, f64)]| v.iter().map(|(g, p)| math::abs(p - g)).sum::<f64>() / v.len() as f64;
    let r2 = |v: &[(f64, f64)]| {
        if v.iter().all(|(g, p)| g == p) {
            return 1.0;
        }
        let (g, p): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
        r_squared(&g, &p)
    };
    Ok(QualityDeltaReport {
        mae_psnr: mae(psnr_pairs),
        mae_ssim: mae(ssim_pairs),
        r2_psnr: r2(psnr_pairs),
        r2_ssim: r2(ssim_pairs),
        objects: psnr_pairs.len(),
    })
}

/// One object: its original crop and the same crop from the two codings.
#[derive(Debug, Clone, Copy)]
pub struct ObjectRecons<'a> {
    pub original: &'a ImagePlane,
    pub ground_truth: &'a ImagePlane,
    pub predicted: &'a ImagePlane,
}

pub fn quality_delta_report(objects: &[ObjectRecons<'_>]) -> Result<QualityDeltaReport> {
    if objects.is_empty() {
        return Err(Error::invalid("no objects to compare"));
    }
    let mut ps = Vec::with_capacity(objects.len());
    let mut ss = Vec::with_capacity(objects.len());
    for o in objects {
        ps.push((psnr(o.original, o.ground_truth)?, psnr(o.original, o.predicted)?));
        ss.push((ssim(o.original, o.ground_truth)?, ssim(o.original, o.predicted)?));
    }
    quality_delta_from_scores(&ps, &ss)
}

#[cfg(test)]
mod tests;
