use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::codec::{encode, QfMap};
use crate::metrics::box_iou;
use crate::synth::natural_image;
use crate::types::{BoundingBox, TaskOutput};

fn det(x: f64, y: f64, w: f64, h: f64, conf: f64) -> TaskResponse {
    TaskResponse::new(Task::Od, 1, conf, TaskOutput::Box(BoundingBox::new(x, y, w, h).unwrap())).unwrap()
}

fn boxed(r: &TaskResponse) -> BoundingBox {
    match r.output() {
        TaskOutput::Box(b) => *b,
        _ => unreachable!(),
    }
}

/// Precision at each rank, then the best precision reachable at or beyond
/// each recall level, read directly off the definition.
fn brute_ap(preds: &[TaskResponse], refs: &[TaskResponse], t: f64) -> f64 {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| preds[b].confidence.partial_cmp(&preds[a].confidence).unwrap());
    let mut used = alloc::vec![false; refs.len()];
    let mut pr = Vec::new();
    let mut tp = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        let mut cand: Vec<(f64, usize)> = refs
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, r)| (box_iou(&boxed(r), &boxed(&preds[i])).value(), j))
            .filter(|(s, _)| *s >= t)
            .collect();
        cand.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        if let Some(&(_, j)) = cand.first() {
            used[j] = true;
            tp += 1.0;
        }
        pr.push((tp / refs.len() as f64, tp / (k + 1) as f64));
    }
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            pr.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

fn engineered() -> (Vec<TaskResponse>, Vec<TaskResponse>) {
    let refs = alloc::vec![det(0.0, 0.0, 10.0, 10.0, 1.0), det(20.0, 0.0, 10.0, 10.0, 1.0), det(40.0, 0.0, 10.0, 10.0, 1.0)];
    let preds = alloc::vec![
        det(0.0, 0.0, 10.0, 10.0, 0.9),
        det(22.5, 0.0, 10.0, 10.0, 0.8),
        det(60.0, 0.0, 10.0, 10.0, 0.7),
        det(40.0 + 10.0 / 9.0, 0.0, 10.0, 10.0, 0.6),
    ];
    (preds, refs)
}

#[test]
fn engineered_ranking() {
    let (preds, refs) = engineered();
    // IoUs 1.0, 0.6, 0.0, 0.8 against their targets.
    let ap = |t| average_precision(&preds, &refs, &ApParams::single(t)).unwrap();
    assert!((ap(0.5) - 92.5 / 101.0).abs() < 1e-12);
    assert!((ap(0.7) - 50.5 / 101.0).abs() < 1e-12);
    assert!((ap(0.9) - 34.0 / 101.0).abs() < 1e-12);
    for t in [0.5, 0.7, 0.9] {
        assert!((ap(t) - brute_ap(&preds, &refs, t)).abs() < 1e-12);
    }
}

#[test]
fn ap_trivial_cases() {
    let (_, refs) = engineered();
    let p = ApParams::default();
    assert_eq!(average_precision(&refs, &refs, &p).unwrap(), 1.0);
    let far = alloc::vec![det(100.0, 100.0, 5.0, 5.0, 0.9)];
    assert_eq!(average_precision(&far, &refs, &p).unwrap(), 0.0);
    assert_eq!(average_precision(&[], &refs, &p).unwrap(), 0.0);
    assert!(average_precision(&refs, &[], &p).is_err());
    // Other classes are ignored.
    let cat = TaskResponse::new(Task::Od, 17, 0.99, TaskOutput::Box(BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap())).unwrap();
    let mut with_cat = refs.clone();
    with_cat.push(cat);
    assert_eq!(average_precision(&with_cat, &refs, &p).unwrap(), 1.0);
}

#[test]
fn coco_threshold_list() {
    let t = coco_thresholds();
    assert_eq!(t.len(), 10);
    assert_eq!(t[0], 0.5);
    assert_eq!(t[9], 0.95);
}

fn random_set(rng: &mut ChaCha8Rng) -> (Vec<TaskResponse>, Vec<TaskResponse>) {
    let nr = rng.random_range(1..6);
    let refs: Vec<TaskResponse> = (0..nr)
        .map(|_| det(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), rng.random_range(5.0..20.0), rng.random_range(5.0..20.0), 1.0))
        .collect();
    let np = rng.random_range(0..8);
    let preds = (0..np)
        .map(|_| {
            let b = boxed(&refs[rng.random_range(0..nr)]);
            det(
                (b.x + rng.random_range(-4.0..4.0)).max(0.0),
                (b.y + rng.random_range(-4.0..4.0)).max(0.0),
                b.w * rng.random_range(0.7..1.3),
                b.h * rng.random_range(0.7..1.3),
                rng.random_range(0.01..1.0),
            )
        })
        .collect();
    (preds, refs)
}

proptest! {
    #[test]
    fn ap_matches_brute_force(seed in any::<u64>(), t in 0.3f64..0.95) {
        let (preds, refs) = random_set(&mut ChaCha8Rng::seed_from_u64(seed));
        let ap = average_precision(&preds, &refs, &ApParams::single(t)).unwrap();
        prop_assert!((ap - brute_ap(&preds, &refs, t)).abs() < 1e-12);
    }

    #[test]
    fn ap_ignores_rank_preserving_rescaling(seed in any::<u64>()) {
        let (preds, refs) = random_set(&mut ChaCha8Rng::seed_from_u64(seed));
        let squashed: Vec<TaskResponse> = preds
            .iter()
            .map(|p| TaskResponse::new(p.task(), p.class_id, p.confidence * p.confidence * 0.5, p.output().clone()).unwrap())
            .collect();
        let p = ApParams::default();
        prop_assert_eq!(average_precision(&preds, &refs, &p).unwrap(), average_precision(&squashed, &refs, &p).unwrap());
    }

    #[test]
    fn ap_non_increasing_in_threshold(seed in any::<u64>()) {
        let (preds, refs) = random_set(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut last = f64::INFINITY;
        for t in coco_thresholds() {
            let ap = average_precision(&preds, &refs, &ApParams::single(t)).unwrap();
            prop_assert!(ap <= last + 1e-12);
            last = ap;
        }
    }
}

fn curve(points: &[(f64, f64)]) -> RateAccuracyCurve {
    RateAccuracyCurve::new("c", Task::Od, points.to_vec()).unwrap()
}

const REF: [(f64, f64); 4] = [(0.2, 0.30), (0.4, 0.45), (0.8, 0.55), (1.6, 0.60)];
const TEST: [(f64, f64); 4] = [(0.18, 0.33), (0.35, 0.48), (0.75, 0.57), (1.5, 0.61)];

#[test]
fn curve_validation() {
    assert!(RateAccuracyCurve::new("c", Task::Od, REF[..3].to_vec()).is_err());
    assert!(RateAccuracyCurve::new("c", Task::Od, alloc::vec![(0.1, 0.1), (0.2, 0.2), (0.2 + 1e-12, 0.3), (0.4, 0.4)]).is_err());
    assert!(RateAccuracyCurve::new("c", Task::Od, alloc::vec![(0.1, 0.1), (0.2, 1.2), (0.3, 0.3), (0.4, 0.4)]).is_err());
    let c = RateAccuracyCurve::new("c", Task::Od, alloc::vec![(0.8, 0.5), (0.2, 0.3), (1.6, 0.6), (0.4, 0.4)]).unwrap();
    assert!(c.points().windows(2).all(|w| w[0].0 < w[1].0));
}

#[test]
fn pchip_matches_reference_values() {
    let p = Pchip::new(alloc::vec![0.0, 1.0, 3.0, 4.0, 7.0], alloc::vec![1.0, 3.0, 2.0, 5.0, 5.5]).unwrap();
    let expect = [
        (0.5, 2.3541666666666665),
        (2.0, 2.5),
        (3.5, 3.4536082474226806),
        (6.0, 5.4528445971744945),
        (-1.0, -0.3333333333333339),
        (8.0, 5.461244749904544),
    ];
    for (x, y) in expect {
        assert!((p.eval(x) - y).abs() < 1e-12, "{x}: {} vs {y}", p.eval(x));
    }
}

#[test]
fn bd_identities() {
    let a = curve(&REF);
    assert_eq!(bd_metric(&a, &a).unwrap(), 0.0);
    let up: Vec<(f64, f64)> = REF.iter().map(|&(b, y)| (b, y + 0.02)).collect();
    assert!((bd_metric(&a, &curve(&up)).unwrap() - 2.0).abs() < 1e-9);
    let apart = curve(&[(2.0, 0.1), (3.0, 0.2), (4.0, 0.3), (5.0, 0.4)]);
    assert!(bd_metric(&a, &apart).is_err());
}

#[test]
fn bd_matches_adaptive_quadrature_value() {
    let (a, b) = (curve(&REF), curve(&TEST));
    assert!((bd_metric(&a, &b).unwrap() - 3.8308511111172447).abs() < 1e-9);
    assert!((bd_metric(&b, &a).unwrap() + 3.8308511111172447).abs() < 1e-9);
    assert!((bd_rate(&a, &b).unwrap() + 25.168024647841968).abs() < 1e-9);
}

/// Trapezoid rule on a fine grid over independently evaluated monotone
/// cubic interpolants.
fn trapezoid_bd(r: &[(f64, f64)], t: &[(f64, f64)]) -> f64 {
    fn slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = x.len();
        let h: Vec<f64> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
        let m: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = alloc::vec![0.0; n];
        for k in 1..n - 1 {
            if m[k - 1] * m[k] > 0.0 {
                let (w1, w2) = (2.0 * h[k] + h[k - 1], h[k] + 2.0 * h[k - 1]);
                d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
            }
        }
        let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
            let e = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
            if e * m0 <= 0.0 {
                0.0
            } else if m0 * m1 <= 0.0 && e.abs() > 3.0 * m0.abs() {
                3.0 * m0
            } else {
                e
            }
        };
        d[0] = end(h[0], h[1], m[0], m[1]);
        d[n - 1] = end(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
        d
    }
    fn at(x: &[f64], y: &[f64], d: &[f64], v: f64) -> f64 {
        let k = (0..x.len() - 1).find(|&k| v <= x[k + 1]).unwrap_or(x.len() - 2);
        let h = x[k + 1] - x[k];
        let s = (v - x[k]) / h;
        let a = y[k];
        let b = d[k];
        let c = (3.0 * (y[k + 1] - y[k]) / h - 2.0 * d[k] - d[k + 1]) / h;
        let e = (d[k] + d[k + 1] - 2.0 * (y[k + 1] - y[k]) / h) / (h * h);
        let u = s * h;
        a + b * u + c * u * u + e * u * u * u
    }
    let prep = |c: &[(f64, f64)]| {
        let x: Vec<f64> = c.iter().map(|p| p.0.ln()).collect();
        let y: Vec<f64> = c.iter().map(|p| p.1 * 100.0).collect();
        let d = slopes(&x, &y);
        (x, y, d)
    };
    let (rx, ry, rd) = prep(r);
    let (tx, ty, td) = prep(t);
    let lo = rx[0].max(tx[0]);
    let hi = rx[rx.len() - 1].min(tx[tx.len() - 1]);
    let n = 20_000;
    let step = (hi - lo) / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let v = lo + step * i as f64;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        s += w * (at(&tx, &ty, &td, v) - at(&rx, &ry, &rd, v));
    }
    s * step / (hi - lo)
}

#[test]
fn bd_matches_trapezoid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    for _ in 0..20 {
        let mk = |rng: &mut ChaCha8Rng| {
            let mut b: f64 = rng.random_range(0.05..0.3);
            let mut a: f64 = rng.random_range(0.05..0.4);
            (0..rng.random_range(4..7))
                .map(|_| {
                    b *= rng.random_range(1.3..2.5);
                    a = (a + rng.random_range(-0.02..0.15)).clamp(0.0, 1.0);
                    (b, a)
                })
                .collect::<Vec<_>>()
        };
        let (r, t) = (mk(&mut rng), mk(&mut rng));
        let (Ok(rc), Ok(tc)) = (RateAccuracyCurve::new("r", Task::Od, r.clone()), RateAccuracyCurve::new("t", Task::Od, t.clone())) else {
            continue;
        };
        let Ok(bd) = bd_metric(&rc, &tc) else { continue };
        assert!((bd - trapezoid_bd(&r, &t)).abs() < 0.05);
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} overlapping pairs");
    assert!((bd_metric(&curve(&REF), &curve(&TEST)).unwrap() - trapezoid_bd(&REF, &TEST)).abs() < 0.05);
}

#[test]
fn ladder_of_uniform_encodings() {
    let im = natural_image(64, 64, 3, 3).unwrap();
    let (_, refs) = engineered();
    let ladder: Vec<LadderPoint> = [20u8, 40, 60, 80]
        .iter()
        .map(|&qf| LadderPoint {
            bitstream: encode(&im, &QfMap::uniform(64, 64, qf).unwrap()).unwrap(),
            predictions: refs.clone(),
            references: refs.clone(),
        })
        .collect();
    let c = rate_accuracy_curve("uniform", Task::Od, &ladder, &ApParams::default()).unwrap();
    assert!(c.points().windows(2).all(|w| w[0].0 < w[1].0));
    assert!(c.points().iter().all(|p| p.1 == 1.0));
    assert!(rate_accuracy_curve("short", Task::Od, &ladder[..3], &ApParams::default()).is_err());
}

#[test]
fn quality_report_cases() {
    let same = quality_delta_from_scores(&[(30.0, 30.0), (35.0, 35.0)], &[(0.9, 0.9), (0.8, 0.8)]).unwrap();
    assert_eq!((same.mae_psnr, same.mae_ssim, same.r2_psnr, same.r2_ssim), (0.0, 0.0, 1.0, 1.0));
    let shifted = quality_delta_from_scores(&[(30.0, 31.5), (35.0, 36.5), (33.0, 34.5)], &[(0.9, 0.9), (0.8, 0.8), (0.7, 0.7)]).unwrap();
    assert!((shifted.mae_psnr - 1.5).abs() < 1e-12);
    assert!((shifted.r2_psnr - 1.0).abs() < 1e-12);
    assert!(quality_delta_from_scores(&[], &[]).is_err());
    assert!(quality_delta_report(&[]).is_err());
}

#[test]
fn r_squared_equals_regression_residual_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = rng.random_range(3..12);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(25.0..45.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.8 * v + 5.0 + rng.random_range(-2.0..2.0)).collect();
        let mx = x.iter().sum::<f64>() / n as f64;
        let my = y.iter().sum::<f64>() / n as f64;
        let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
        let icpt = my - slope * mx;
        let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - (slope * a + icpt)).powi(2)).sum();
        let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        assert!((r_squared(&x, &y) - (1.0 - ss_res / ss_tot)).abs() < 1e-9);
    }
}

#[test]
fn quality_report_from_images() {
    let im = natural_image(48, 48, 3, 2).unwrap();
    let a = encode(&im, &QfMap::uniform(48, 48, 50).unwrap()).unwrap();
    let a = crate::codec::decode(&a).unwrap();
    let r = quality_delta_report(&[ObjectRecons { original: &im, ground_truth: &a, predicted: &a }]).unwrap();
    assert_eq!((r.mae_psnr, r.mae_ssim, r.r2_psnr, r.objects), (0.0, 0.0, 1.0, 1));
}
