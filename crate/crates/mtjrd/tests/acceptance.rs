//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Each check compares against an oracle written here, independently of the
//! library code under test.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mtjrd::image_io::read_image;
use mtjrd::manifest::digest_path;
use mtjrd_core::annotation::{
    jrd_from_labels, make_label, threshold_sweep, AnnotationParams, LabelSequence, QualityTriple, ResponseLadder,
    SWEEP_THRESHOLDS,
};
use mtjrd_core::codec::{self, rasterize_qfmap, round_trip, QfMap};
use mtjrd_core::evaluation::{bd_metric, RateAccuracyCurve};
use mtjrd_core::metrics::{box_iou, mask_iou, oks, psnr_from_mse, ssim, SimilarityScore, COCO_KAPPAS};
use mtjrd_core::predictor::{
    error_metrics, gdsl_targets, grad_check, predict, toy_dataset, train, Model, ModelConfig, PredictMode, Sample,
    TrainConfig,
};
use mtjrd_core::synth::natural_image;
use mtjrd_core::vcm::{
    region_psnr_at, search_qf, vcm_encode, InternalReference, ObjectTarget, QfCandidates, VcmJob, VcmObject, QP_TO_QF,
};
use mtjrd_core::{BoundingBox, ImagePlane, Keypoint, KeypointSet, Mask, Task, TaskOutput, TaskResponse, NUM_LEVELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Direct scan: the first start of `w` zeros, or a zero tail shorter than `w`.
fn jrd_oracle(labels: &[bool; NUM_LEVELS], w: usize) -> i8 {
    for start in 0..NUM_LEVELS {
        let end = (start + w).min(NUM_LEVELS);
        if labels[start..end].iter().all(|l| !l) {
            return start as i8 - 1;
        }
    }
    NUM_LEVELS as i8 - 1
}

fn jrd_extraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for w in 1..=5 {
        for _ in 0..10_000 {
            // Mix of sparse, balanced and dense label densities.
            let p = [0.2, 0.5, 0.9, 0.97][rng.random_range(0..4)];
            let labels: [bool; NUM_LEVELS] = std::array::from_fn(|_| rng.random_bool(p));
            let got = jrd_from_labels(&LabelSequence { task: Task::Od, labels }, w).map_err(|e| e.to_string())?;
            let want = jrd_oracle(&labels, w);
            ensure!(got == want, "W={w} labels {labels:?}: {got} != {want}");
            checked += 1;
        }
    }
    Ok(format!("{checked} sequences, 0 mismatches"))
}

fn label_truth_table() -> Outcome {
    let t = 0.75;
    let s = |v: f64| SimilarityScore::new(v).unwrap();
    // (class, confidence, similarity, expected)
    let table = [
        (1, 0.90, 0.90, true),
        (2, 0.90, 0.90, false),
        (1, 0.50, 0.90, false),
        (1, 0.90, 0.50, false),
        (1, 0.75, 0.90, false),
        (1, 0.90, 0.75, false),
        (1, 0.7501, 0.7501, true),
        (2, 0.50, 0.50, false),
    ];
    for (class_id, confidence, sim, want) in table {
        let q = QualityTriple {
            class_id,
            confidence,
            similarity: s(sim),
        };
        ensure!(make_label(&q, 1, t) == want, "class {class_id} conf {confidence} sim {sim}: expected {want}");
    }
    Ok(format!("{} rows", table.len()))
}

fn keypoints(b: &BoundingBox, dx: f64, area: f64) -> KeypointSet {
    let pts: [Keypoint; 17] = std::array::from_fn(|i| Keypoint {
        x: b.x + b.w * ((i % 4) as f64 + 0.5) / 4.0 + dx,
        y: b.y + b.h * ((i / 4) as f64 + 0.5) / 5.0,
        v: 2,
    });
    KeypointSet::new(pts, area).unwrap()
}

fn rect_mask(w: usize, h: usize, b: &BoundingBox) -> Mask {
    let mut m = Mask::empty(w, h);
    for y in b.y as usize..(b.y + b.h) as usize {
        for x in b.x as usize..((b.x + b.w) as usize).min(w) {
            m.set(x, y, true);
        }
    }
    m
}

fn output(task: Task, b: &BoundingBox, dx: f64) -> TaskOutput {
    let shifted = BoundingBox::new(b.x + dx.round(), b.y, b.w, b.h).unwrap();
    match task {
        Task::Od => TaskOutput::Box(shifted),
        Task::Is => TaskOutput::Mask(rect_mask(96, 64, &shifted)),
        Task::Kpd => TaskOutput::Keypoints(keypoints(b, dx, b.w * b.h)),
    }
}

fn threshold_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ladders = Vec::new();
    for i in 0..200 {
        let task = Task::ALL[i % 3];
        let b = BoundingBox::new(16.0, 8.0, 40.0, 48.0).unwrap();
        let mut distorted = Vec::with_capacity(NUM_LEVELS);
        // Quality decays with the level at an object-specific pace.
        let pace = rng.random_range(0.3..1.5);
        for q in 0..NUM_LEVELS {
            let mut cands = Vec::new();
            if rng.random_bool(0.95) {
                let decay = (q as f64 * pace / 64.0).min(1.0);
                let conf = (1.0 - 0.5 * decay + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0);
                let dx = 12.0 * decay * rng.random_range(0.5..1.5);
                cands.push(TaskResponse::new(task, 1, conf, output(task, &b, dx)).unwrap());
            }
            distorted.push(cands);
        }
        ladders.push(ResponseLadder {
            image_id: format!("s{i}"),
            task,
            image_width: 96,
            image_height: 64,
            original: vec![TaskResponse::new(task, 1, 0.99, output(task, &b, 0.0)).unwrap()],
            original_ids: vec![None],
            distorted,
        });
    }
    let sweep = threshold_sweep(&ladders, &SWEEP_THRESHOLDS, &AnnotationParams::default()).map_err(|e| e.to_string())?;
    ensure!(sweep.objects.len() == 200, "{} objects swept", sweep.objects.len());
    for (i, (task, js)) in sweep.objects.iter().enumerate() {
        ensure!(js.windows(2).all(|w| w[1] <= w[0]), "object {i} ({task}) not non-increasing: {js:?}");
    }
    let means = sweep.means();
    let mut line = Vec::new();
    for task in Task::ALL {
        let m: Vec<f64> = means.iter().map(|p| p.mean_jrd[task.index()].unwrap_or(0.0)).collect();
        ensure!(m.windows(2).all(|w| w[1] <= w[0]), "{task} means not non-increasing: {m:?}");
        ensure!(m[0] > m[m.len() - 1], "{task} means flat: {m:?}");
        line.push(format!("{task} {:.1}->{:.1}", m[0], m[m.len() - 1]));
    }
    Ok(format!("200 objects; {}", line.join(", ")))
}

fn metric_identities() -> Outcome {
    let b = BoundingBox::new(3.0, 4.0, 20.0, 10.0).unwrap();
    ensure!(box_iou(&b, &b).value() == 1.0, "box IoU self");
    let m = rect_mask(32, 32, &b);
    ensure!(mask_iou(&m, &m).unwrap().value() == 1.0, "mask IoU self");
    let k = keypoints(&b, 0.0, 400.0);
    ensure!(oks(&k, &k, &COCO_KAPPAS).unwrap().value() == 1.0, "OKS self");
    let img = natural_image(64, 48, 3, 5).unwrap();
    let s = ssim(&img, &img).unwrap();
    ensure!((s - 1.0).abs() < 1e-12, "SSIM self {s}");

    // Every keypoint displaced so that d^2 = 2 * area * kappa^2.
    let area = 900.0;
    let base = keypoints(&b, 0.0, area);
    let mut moved = *base.points();
    for (p, kappa) in moved.iter_mut().zip(COCO_KAPPAS) {
        p.x += (2.0 * area * kappa * kappa).sqrt();
    }
    let v = oks(&base, &KeypointSet::new(moved, area).unwrap(), &COCO_KAPPAS).unwrap().value();
    ensure!((v - (-1.0f64).exp()).abs() < 1e-6 && (v - 0.3679).abs() < 1e-4, "OKS closed form {v}");

    let p = psnr_from_mse(1.0);
    let want = 10.0 * (255.0f64 * 255.0).log10();
    ensure!((p - 48.1308).abs() < 1e-3 && (p - want).abs() < 1e-12, "PSNR at MSE 1: {p}");
    Ok(format!("self-similarity 1; OKS {v:.6}; PSNR {p:.4} dB"))
}

fn mse_rect(a: &ImagePlane, b: &ImagePlane, inside: impl Fn(usize, usize) -> bool) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            if inside(x, y) {
                for c in 0..a.channels() {
                    let d = a.get(x, y, c) as f64 - b.get(x, y, c) as f64;
                    sum += d * d;
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

/// Frozen full-image PSNR (dB) of the checked-in test image per uniform QF.
const FROZEN_PSNR: [(u8, f64); 4] = [(30, 35.6314), (50, 37.0231), (75, 38.8056), (90, 41.1457)];

fn codec_conformance() -> Outcome {
    use zune_jpeg::zune_core::bytestream::ZCursor;
    let img = read_image(fixture_root().join("test_image.ppm")).map_err(|e| e.to_string())?;
    let (w, h) = (img.width(), img.height());
    let mut rates = Vec::new();
    for (qf, frozen) in FROZEN_PSNR {
        let (bits, rec) = round_trip(&img, &QfMap::uniform(w, h, qf).unwrap()).map_err(|e| e.to_string())?;
        let p = 10.0 * (255.0f64 * 255.0 / mse_rect(&img, &rec, |_, _| true)).log10();
        ensure!((p - frozen).abs() <= 0.05, "qf {qf}: {p:.4} dB, frozen {frozen}");
        let bytes = bits.bytes();
        ensure!(bytes.windows(2).any(|m| m == [0xFF, 0xC0]), "qf {qf}: no baseline SOF0 marker");
        ensure!(!bytes.windows(2).any(|m| m == [0xFF, 0xC2]), "qf {qf}: progressive marker present");
        let mut dec = zune_jpeg::JpegDecoder::new(ZCursor::new(bytes));
        let px = dec.decode().map_err(|e| format!("qf {qf}: independent decoder rejects stream: {e:?}"))?;
        ensure!(px.len() == w * h * 3, "qf {qf}: independent decode has {} samples", px.len());
        rates.push(codec::measure_rate(bytes.len(), w, h));
    }
    ensure!(rates.windows(2).all(|r| r[1] > r[0]), "bpp not strictly increasing: {rates:?}");
    Ok(format!(
        "PSNR within 0.05 dB of frozen; bpp {}",
        rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" < ")
    ))
}

fn adaptive_dominance() -> Outcome {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let img = natural_image(128, 128, 3, 100 + seed).unwrap();
        let block = BoundingBox::new(32.0, 32.0, 64.0, 64.0).unwrap();
        let map = rasterize_qfmap(&[(block, 95)], 30, 128, 128).unwrap();
        let (_, rec) = round_trip(&img, &map).map_err(|e| e.to_string())?;
        let inside = |x: usize, y: usize| (32..96).contains(&x) && (32..96).contains(&y);
        let mi = mse_rect(&img, &rec, inside);
        let mo = mse_rect(&img, &rec, |x, y| !inside(x, y));
        ensure!(mi < mo, "seed {seed}: in-block MSE {mi:.2} >= out-of-block {mo:.2}");
        ratios.push(mo / mi);
    }
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!("5/5 seeds; out/in MSE ratio >= {min:.1}"))
}

/// Exhaustive argmin of |psnr - target|, ties to the smallest QF.
fn argmin_oracle(psnrs: &[(u8, f64)], target: f64) -> u8 {
    let mut best = psnrs[0];
    for &(qf, p) in &psnrs[1..] {
        if (p - target).abs() < (best.1 - target).abs() {
            best = (qf, p);
        }
    }
    best.0
}

fn search_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut max_probes = (0, 0);
    let mut fallbacks = 0;
    for trial in 0..30 {
        let img = natural_image(96, 80, 3, 500 + trial).unwrap();
        let bw = rng.random_range(12..40) as f64;
        let bh = rng.random_range(12..40) as f64;
        let b = BoundingBox::new(rng.random_range(0.0..96.0 - bw), rng.random_range(0.0..80.0 - bh), bw, bh).unwrap();
        let cands = match trial % 3 {
            0 => QfCandidates::detection(),
            1 => QfCandidates::keypoints(),
            _ => {
                let mut v: Vec<u8> = (0..rng.random_range(3..16)).map(|_| rng.random_range(5..=98)).collect();
                v.sort();
                v.dedup();
                QfCandidates::new(v).unwrap()
            }
        };
        let psnrs: Vec<(u8, f64)> = cands
            .as_slice()
            .iter()
            .map(|&q| Ok((q, region_psnr_at(&img, &b, q)?)))
            .collect::<mtjrd_core::Result<_>>()
            .map_err(|e| e.to_string())?;
        let (lo, hi) = psnrs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
        let target = rng.random_range(lo - 1.0..hi + 1.0);
        let r = search_qf(&img, &b, target, &cands).map_err(|e| e.to_string())?;
        let want = argmin_oracle(&psnrs, target);
        ensure!(r.qf == want, "trial {trial}: search {} != oracle {want} (target {target:.3}, {psnrs:?})", r.qf);
        let monotone = psnrs.windows(2).all(|w| w[0].1 <= w[1].1);
        let bound = (cands.len() as f64).log2().ceil() as usize + 2;
        if monotone {
            ensure!(r.probes <= bound, "trial {trial}: {} probes > {bound} for |Q|={}", r.probes, cands.len());
            if r.probes > max_probes.0 {
                max_probes = (r.probes, bound);
            }
        } else {
            fallbacks += 1;
        }
    }
    Ok(format!(
        "30/30 match; max probes {} (bound {}); {fallbacks} non-monotone sets",
        max_probes.0, max_probes.1
    ))
}

fn vcm_self_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reference = InternalReference::default();
    let cands = QfCandidates::full();
    let mut hits = 0;
    let mut misses = Vec::new();
    for trial in 0..30 {
        let img = natural_image(112, 96, 3, 900 + trial).unwrap();
        let bw = rng.random_range(16..48) as f64;
        let bh = rng.random_range(16..48) as f64;
        let b = BoundingBox::new(rng.random_range(0.0..112.0 - bw), rng.random_range(0.0..96.0 - bh), bw, bh).unwrap();
        let j = rng.random_range(0..NUM_LEVELS as u8);
        let job = VcmJob {
            image: img.clone(),
            task: Task::ALL[trial as usize % 3],
            objects: vec![VcmObject {
                bbox: b,
                target: ObjectTarget::Jrd(j),
            }],
            delta_qf: 0,
            background_qf: 30,
        };
        let out = vcm_encode(&job, &cands, &reference).map_err(|e| e.to_string())?;
        let got = out.objects[0].search.qf;
        let want = QP_TO_QF[j as usize];
        let tie = got < want
            && region_psnr_at(&img, &b, got).map_err(|e| e.to_string())?
                == region_psnr_at(&img, &b, want).map_err(|e| e.to_string())?;
        if got == want || tie {
            hits += 1;
        } else {
            misses.push(format!("j={j}: {got} vs {want}"));
        }
    }
    ensure!(hits >= 28, "{hits}/30 recovered; misses {misses:?}");
    Ok(format!("{hits}/30 recovered; misses {}", misses.join(", ")))
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let model = Model::init(ModelConfig::tiny(seed)).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 40);
        let sample = Sample {
            input: (0..model.config().input_len()).map(|_| rng.random_range(-2.0..2.0)).collect(),
            attrs: [rng.random(), rng.random(), rng.random()],
            jrd: [Some(rng.random_range(0..64)), Some(rng.random_range(0..64)), Some(rng.random_range(0..64))],
        };
        let r = grad_check(&model, &sample, 3.0, 1e-5, None).map_err(|e| e.to_string())?;
        ensure!(r.groups.iter().all(|g| g.2 > 0), "seed {seed}: empty group");
        ensure!(r.max_relative_error <= 1e-4, "seed {seed}: {:.3e}", r.max_relative_error);
        worst = worst.max(r.max_relative_error);
    }
    Ok(format!("3 seeds, max relative error {worst:.2e}"))
}

fn gdsl_contract() -> Outcome {
    let sigma: f64 = 3.0;
    let peak: f64 = 1.0 / (0..64).map(|k| (-((k as f64 - 32.0).powi(2)) / (2.0 * sigma * sigma)).exp()).sum::<f64>();
    ensure!((peak - 0.13300).abs() < 1e-4, "oracle peak {peak}");
    for j in 0..64u8 {
        let t = gdsl_targets(j, sigma).map_err(|e| e.to_string())?;
        let sum: f64 = t.iter().sum();
        ensure!((sum - 1.0).abs() < 1e-9, "label {j}: sum {sum}");
        let arg = t.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        ensure!(arg == j as usize, "label {j}: argmax {arg}");
        if (12..=51).contains(&j) {
            ensure!((t[j as usize] - 0.13300).abs() < 1e-4, "label {j}: peak {}", t[j as usize]);
        }
        // Far from both ends the truncated tails are below rounding.
        if (24..=39).contains(&j) {
            ensure!((t[j as usize] - peak).abs() < 1e-12, "label {j}: peak {} vs oracle {peak}", t[j as usize]);
        }
    }
    Ok(format!("64 labels; interior peak {peak:.5}"))
}

fn toy_overfit() -> Outcome {
    // Hand-checked: errors [-2, 3, -10]; only the truth 27 lies in [27, 51].
    let r = error_metrics(&[10, 30, 50], &[12, 27, 60]).map_err(|e| e.to_string())?;
    ensure!(r.e_a == 5.0 && r.e_range == Some(3.0), "fixture 1: {r:?}");
    ensure!((r.sigma_e - (86.0f64 / 3.0).sqrt()).abs() < 1e-12, "fixture 1 sigma {}", r.sigma_e);
    let r = error_metrics(&[0, 63], &[5, 60]).map_err(|e| e.to_string())?;
    ensure!(r.e_a == 4.0 && r.e_range.is_none() && r.sigma_e == 4.0, "fixture 2: {r:?}");

    let cfg = ModelConfig::default();
    let data = toy_dataset(cfg.input_size, 0).map_err(|e| e.to_string())?;
    ensure!(data.len() == 32, "{} toy samples", data.len());
    let tc = TrainConfig::default();
    ensure!(tc.epochs <= 200, "{} epochs", tc.epochs);
    let start = Instant::now();
    let (model, _) = train(Model::init(cfg).map_err(|e| e.to_string())?, &data, &tc).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for s in &data {
        let p = predict(&model, &s.input, s.attrs, PredictMode::Argmax).map_err(|e| e.to_string())?;
        for (t, j) in s.jrd.iter().enumerate() {
            if let Some(j) = *j {
                pred.push(p[t]);
                truth.push(j);
            }
        }
    }
    let e = error_metrics(&pred, &truth).map_err(|e| e.to_string())?;
    ensure!(e.e_a < 1.0, "E_A {:.3} after {} epochs", e.e_a, tc.epochs);
    ensure!(secs < 60.0, "training took {secs:.1} s");
    Ok(format!("E_A {:.3} in {} epochs, {secs:.1} s; error fixtures exact", e.e_a, tc.epochs))
}

/// Cubic Hermite fit with Fritsch-Carlson slopes and three-point ends.
fn pchip_oracle(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if del[k - 1] * del[k] > 0.0 {
            let (w1, w2) = (2.0 * h[k] + h[k - 1], h[k] + 2.0 * h[k - 1]);
            d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
        }
    }
    let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let e = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if e.signum() != m0.signum() {
            0.0
        } else if m0.signum() != m1.signum() && e.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            e
        }
    };
    d[0] = end(h[0], h[1], del[0], del[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    let k = (0..n - 1).find(|&i| t <= x[i + 1]).unwrap_or(n - 2);
    let s = (t - x[k]) / h[k];
    let (c0, c1) = (2.0 * s.powi(3) - 3.0 * s * s + 1.0, -2.0 * s.powi(3) + 3.0 * s * s);
    c0 * y[k] + (s.powi(3) - 2.0 * s * s + s) * h[k] * d[k] + c1 * y[k + 1] + (s.powi(3) - s * s) * h[k] * d[k + 1]
}

fn trapezoid_bd(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let fit = |c: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) {
        (c.iter().map(|p| p.0.ln()).collect(), c.iter().map(|p| 100.0 * p.1).collect())
    };
    let (xa, ya) = fit(a);
    let (xb, yb) = fit(b);
    let lo = xa[0].max(xb[0]);
    let hi = xa[xa.len() - 1].min(xb[xb.len() - 1]);
    let n = 200_000;
    let step = (hi - lo) / n as f64;
    let g = |t: f64| pchip_oracle(&xb, &yb, t) - pchip_oracle(&xa, &ya, t);
    let mut sum = 0.5 * (g(lo) + g(hi));
    for i in 1..n {
        sum += g(lo + i as f64 * step);
    }
    sum * step / (hi - lo)
}

fn bd_machinery() -> Outcome {
    let curve = |label: &str, pts: &[(f64, f64)]| RateAccuracyCurve::new(label, Task::Od, pts.to_vec()).unwrap();
    let base = [(0.12, 0.301), (0.25, 0.402), (0.55, 0.468), (1.10, 0.503)];
    let a = curve("a", &base);
    let zero = bd_metric(&a, &a).map_err(|e| e.to_string())?;
    ensure!(zero == 0.0, "identical curves: {zero}");
    let up: Vec<(f64, f64)> = base.iter().map(|&(r, v)| (r, v + 0.02)).collect();
    let shift = bd_metric(&a, &curve("up", &up)).map_err(|e| e.to_string())?;
    ensure!((shift - 2.0).abs() < 1e-9, "+2 point shift: {shift}");
    let other = [(0.09, 0.262), (0.21, 0.391), (0.48, 0.47), (0.95, 0.512)];
    let got = bd_metric(&a, &curve("b", &other)).map_err(|e| e.to_string())?;
    let want = trapezoid_bd(&base, &other);
    ensure!((got - want).abs() < 0.05, "pair: {got:.4} vs trapezoid {want:.4}");
    Ok(format!("0 exactly; shift {shift:.12}; pair {got:.4} vs trapezoid {want:.4}"))
}

fn run_pipeline(work: &Path) -> Result<Vec<(String, String)>, String> {
    let fx = fixture_root();
    let f = |p: &str| fx.join(p).to_string_lossy().into_owned();
    let (responses, images) = (f("responses"), f("images"));
    let (ladder_u, ladder_j) = (f("ladders/uniform.json"), f("ladders/jrd.json"));
    let steps: Vec<Vec<&str>> = vec![
        vec!["annotate", "--responses", &responses, "-o", "ann.json"],
        vec!["train", "--annotations", "ann.json", "--images", &images, "--epochs", "15", "-o", "model.ckpt"],
        vec!["predict", "--checkpoint", "model.ckpt", "--annotations", "ann.json", "--images", &images, "-o", "pred.json"],
        vec![
            "vcm-encode", "--task", "od", "--annotations", "ann.json", "--images", &images, "--jrd-source", "predicted",
            "--checkpoint", "model.ckpt", "-o", "vcm",
        ],
        vec![
            "evaluate", "--annotations", "ann.json", "--predictions", "pred.json", "--quality", "--images", &images,
            "--ladder", &ladder_u, "--ladder", &ladder_j, "-o", "eval",
        ],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_mtjrd"))
            .current_dir(work)
            .args(["--seed", "7"])
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<PathBuf> = Vec::new();
    collect(work, &mut names);
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(work).unwrap().to_string_lossy().into_owned();
            digest_path(&p).map(|d| (rel, d)).map_err(|e| e.to_string())
        })
        .collect()
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(&p, out);
        } else {
            out.push(p);
        }
    }
}

fn end_to_end_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ha = run_pipeline(a.path())?;
    let hb = run_pipeline(b.path())?;
    ensure!(ha.len() >= 20, "only {} outputs", ha.len());
    ensure!(ha.iter().any(|(n, _)| n == "eval/quality_od.json"), "no quality report");
    for (x, y) in ha.iter().zip(&hb) {
        ensure!(x == y, "{} differs between runs ({} vs {})", x.0, x.1, y.1);
    }
    ensure!(ha.len() == hb.len(), "output sets differ");
    Ok(format!("{} output files identical across two runs", ha.len()))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 13] = [
        ("JRD extraction oracle equivalence", jrd_extraction),
        ("Label rule truth table", label_truth_table),
        ("Threshold monotonicity", threshold_monotonicity),
        ("Metric identities", metric_identities),
        ("Codec conformance and quality", codec_conformance),
        ("Adaptive quantization dominance", adaptive_dominance),
        ("QF search correctness", search_correctness),
        ("VCM self-consistency", vcm_self_consistency),
        ("Predictor gradient check", gradient_check),
        ("GDSL contract", gdsl_contract),
        ("Toy overfit and error metrics", toy_overfit),
        ("BD-mAP machinery", bd_machinery),
        ("End-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
