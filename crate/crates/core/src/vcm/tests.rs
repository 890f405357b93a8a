use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::metrics::{mse_region, psnr};
use crate::synth::natural_image;

fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

fn exhaustive(image: &ImagePlane, b: &BoundingBox, target: f64, c: &QfCandidates) -> u8 {
    let mut best = (f64::INFINITY, 0u8);
    for &q in c.as_slice() {
        let d = (region_psnr_at(image, b, q).unwrap() - target).abs();
        if d < best.0 {
            best = (d, q);
        }
    }
    best.1
}

#[test]
fn target_psnr_of_identical_reference_is_capped() {
    let im = natural_image(64, 64, 3, 1).unwrap();
    assert_eq!(region_target_psnr(&im, &im, &bx(3.0, 5.0, 20.0, 30.0)).unwrap(), 99.0);
}

#[test]
fn target_psnr_of_uniform_offset() {
    let im = ImagePlane::filled(64, 64, 3, 100).unwrap();
    let mut r = im.clone();
    for y in 8..24 {
        for x in 16..48 {
            for c in 0..3 {
                r.set(x, y, c, 103);
            }
        }
    }
    let p = region_target_psnr(&im, &r, &bx(16.0, 8.0, 32.0, 16.0)).unwrap();
    let expect = 10.0 * (255.0f64 * 255.0 / 9.0).log10();
    assert!((p - expect).abs() < 1e-12);
}

#[test]
fn target_psnr_matches_crop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let im = natural_image(96, 80, 3, 2).unwrap();
    let noisy = {
        let s: Vec<u8> = im.samples().iter().map(|&v| v.saturating_add(rng.random_range(0..9))).collect();
        ImagePlane::new(96, 80, 3, s).unwrap()
    };
    for _ in 0..20 {
        let x = rng.random_range(0.0..70.0);
        let y = rng.random_range(0.0..60.0);
        let b = bx(x, y, rng.random_range(8.0..96.0 - x), rng.random_range(8.0..80.0 - y));
        let (x0, y0, x1, y1) = b.pixel_rect(96, 80);
        let oracle = psnr(&im.crop(x0, y0, x1, y1).unwrap(), &noisy.crop(x0, y0, x1, y1).unwrap()).unwrap();
        assert!((region_target_psnr(&im, &noisy, &b).unwrap() - oracle).abs() < 1e-12);
    }
    let other = ImagePlane::filled(64, 64, 3, 0).unwrap();
    assert!(region_target_psnr(&im, &other, &bx(0.0, 0.0, 10.0, 10.0)).is_err());
}

#[test]
fn region_coding_equals_full_image_coding() {
    let im = natural_image(100, 72, 3, 4).unwrap();
    for b in [bx(20.0, 10.0, 30.0, 25.0), bx(70.5, 50.2, 29.5, 21.8), bx(0.0, 0.0, 9.0, 9.0), bx(95.0, 66.0, 5.0, 6.0)] {
        for qf in [10, 47, 90] {
            let (_, full) = codec::round_trip(&im, &QfMap::uniform(100, 72, qf).unwrap()).unwrap();
            let rect = b.pixel_rect(100, 72);
            let expect = psnr_from_mse(mse_region(&im, &full, rect).unwrap());
            assert_eq!(region_psnr_at(&im, &b, qf).unwrap(), expect, "{b:?} qf {qf}");
        }
    }
}

#[test]
fn candidate_validation() {
    assert!(QfCandidates::new(alloc::vec![]).is_err());
    assert!(QfCandidates::new(alloc::vec![0, 5]).is_err());
    assert!(QfCandidates::new(alloc::vec![5, 5]).is_err());
    assert!(QfCandidates::new(alloc::vec![50, 40]).is_err());
    assert_eq!(QfCandidates::full().len(), 100);
    assert_eq!(QfCandidates::for_task(Task::Kpd).as_slice(), &[46, 48, 50, 52, 54]);
}

#[test]
fn search_boundaries() {
    let im = natural_image(64, 64, 3, 5).unwrap();
    let b = bx(10.0, 10.0, 40.0, 40.0);
    let one = QfCandidates::new(alloc::vec![37]).unwrap();
    assert_eq!(search_qf(&im, &b, 30.0, &one).unwrap().qf, 37);
    let c = QfCandidates::detection();
    assert_eq!(search_qf(&im, &b, 98.0, &c).unwrap().qf, 50);
    assert_eq!(search_qf(&im, &b, 1.0, &c).unwrap().qf, 42);
    assert!(search_qf(&im, &b, f64::NAN, &c).is_err());
}

#[test]
fn search_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..8 {
        let im = natural_image(80, 64, 3, 50 + trial).unwrap();
        let x = rng.random_range(0.0..50.0);
        let y = rng.random_range(0.0..40.0);
        let b = bx(x, y, rng.random_range(12.0..80.0 - x), rng.random_range(12.0..64.0 - y));
        let c = match trial % 3 {
            0 => QfCandidates::full(),
            1 => QfCandidates::detection(),
            _ => QfCandidates::keypoints(),
        };
        let target = rng.random_range(24.0..44.0);
        let s = search_qf(&im, &b, target, &c).unwrap();
        assert_eq!(s.qf, exhaustive(&im, &b, target, &c), "trial {trial}");
    }
}

fn brute(values: &[f64], target: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, v) in values.iter().enumerate() {
        let d = (v - target).abs();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn run(values: &[f64], target: f64) -> QfSearch {
    let c = QfCandidates::new((1..=values.len() as u8).collect()).unwrap();
    search_argmin(&c, target, |q| Ok(values[q as usize - 1])).unwrap()
}

#[test]
fn plateau_resolves_to_smallest() {
    let v = [20.0, 25.0, 25.0, 25.0, 30.0];
    assert_eq!(run(&v, 26.0).qf, 2);
    assert_eq!(run(&v, 24.0).qf, 2);
    assert_eq!(run(&[40.0; 7], 50.0).qf, 1);
    // Equidistant neighbours: lower QF wins.
    assert_eq!(run(&[10.0, 20.0], 15.0).qf, 1);
}

#[test]
fn non_monotone_falls_back_to_scan() {
    // The bracketing search probes 25 then 20 left of the target.
    let v = [10.0, 25.0, 20.0, 40.0, 50.0, 60.0, 70.0];
    let s = run(&v, 30.0);
    assert_eq!(s.qf, 2);
    assert!(s.exhaustive);
    assert_eq!(s.probes, 7);
}

#[test]
fn small_sets_are_scanned_in_full() {
    // A dip at the middle candidate hides the best one from a bisection.
    let v = [34.10, 34.26, 33.87, 34.38, 34.45];
    let s = run(&v, 34.193);
    assert_eq!(s.qf, 2);
    assert!(s.exhaustive);
    assert_eq!(s.probes, 5);
    assert_eq!(
        (1..=8).map(binary_probe_budget).collect::<Vec<_>>(),
        [2, 3, 4, 4, 5, 5, 5, 5]
    );
}

proptest! {
    #[test]
    fn argmin_equals_brute_force(steps in prop::collection::vec(0u8..4, 1..100), target in 0.0f64..120.0) {
        let mut v = Vec::new();
        let mut acc = 10.0;
        for s in steps {
            acc += s as f64;
            v.push(acc);
        }
        let s = run(&v, target);
        prop_assert_eq!(s.qf as usize - 1, brute(&v, target));
        prop_assert_eq!(s.exhaustive, v.len() <= binary_probe_budget(v.len()));
    }

    #[test]
    fn probe_bound_when_strictly_monotone(steps in prop::collection::vec(0.01f64..3.0, 1..100), target in 0.0f64..200.0) {
        let mut v = Vec::new();
        let mut acc = 10.0;
        for s in steps {
            acc += s;
            v.push(acc);
        }
        let n = v.len();
        let s = run(&v, target);
        prop_assert_eq!(s.qf as usize - 1, brute(&v, target));
        let bound = (n as f64).log2().ceil() as usize + 2;
        prop_assert!(s.probes <= bound, "{} probes for {} candidates", s.probes, n);
    }
}

#[test]
fn table_shape() {
    assert_eq!(qp_to_qf(0).unwrap(), 100);
    assert_eq!(qp_to_qf(63).unwrap(), 1);
    assert!(qp_to_qf(64).is_err());
    assert!(QP_TO_QF.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn table_from_curve() {
    let mut curve = [0.0; 100];
    for (i, c) in curve.iter_mut().enumerate() {
        *c = 20.0 + 0.25 * i as f64;
    }
    let t = qp_to_qf_from_curve(&curve);
    assert_eq!(t[0], 100);
    assert_eq!(t[63], 1);
    assert!(t.windows(2).all(|w| w[0] >= w[1]));
    // A linear curve maps QP linearly onto QF.
    for (qp, &qf) in t.iter().enumerate() {
        let ideal = 100.0 - 99.0 * qp as f64 / 63.0;
        assert!((qf as f64 - ideal).abs() <= 0.5 + 1e-9, "qp {qp}: {qf} vs {ideal}");
    }
}

#[test]
fn internal_reference_codes_region_at_table_qf() {
    let im = natural_image(64, 48, 3, 6).unwrap();
    let b = bx(5.0, 5.0, 30.0, 30.0);
    let r = InternalReference::default().reference(&im, &b, 30).unwrap();
    assert_eq!(r, encode_region_uniform(&im, &b, QP_TO_QF[30]).unwrap());
    let target = region_target_psnr(&im, &r, &b).unwrap();
    assert_eq!(target, region_psnr_at(&im, &b, QP_TO_QF[30]).unwrap());
    assert!(InternalReference::default().reference(&im, &b, 64).is_err());
}

fn job(image: ImagePlane, objects: Vec<VcmObject>, delta_qf: i32, background_qf: u8) -> VcmJob {
    VcmJob { image, task: Task::Od, objects, delta_qf, background_qf }
}

#[test]
fn no_objects_is_uniform_background() {
    let im = natural_image(64, 64, 3, 7).unwrap();
    let out = vcm_encode(&job(im.clone(), alloc::vec![], 0, 25), &QfCandidates::full(), &InternalReference::default()).unwrap();
    let plain = codec::encode(&im, &QfMap::uniform(64, 64, 25).unwrap()).unwrap();
    assert_eq!(out.bitstream, plain);
    assert!(out.objects.is_empty());
}

#[test]
fn search_recovers_reference_qf() {
    let im = natural_image(96, 96, 3, 8).unwrap();
    let b = bx(20.0, 24.0, 48.0, 40.0);
    for qp in [10u8, 25, 40] {
        let j = job(im.clone(), alloc::vec![VcmObject { bbox: b, target: ObjectTarget::Jrd(qp) }], 0, 10);
        let out = vcm_encode(&j, &QfCandidates::full(), &InternalReference::default()).unwrap();
        assert_eq!(out.objects[0].search.qf, QP_TO_QF[qp as usize]);
        assert_eq!(out.objects[0].applied_qf, QP_TO_QF[qp as usize]);
    }
}

#[test]
fn delta_raises_rate_and_clamps() {
    let im = natural_image(96, 96, 3, 9).unwrap();
    let objs = alloc::vec![
        VcmObject { bbox: bx(10.0, 10.0, 40.0, 30.0), target: ObjectTarget::Jrd(30) },
        VcmObject { bbox: bx(50.0, 60.0, 40.0, 30.0), target: ObjectTarget::Psnr(33.0) },
    ];
    let c = QfCandidates::full();
    let r = InternalReference::default();
    let a = vcm_encode(&job(im.clone(), objs.clone(), 0, 15), &c, &r).unwrap();
    let b = vcm_encode(&job(im.clone(), objs.clone(), 4, 15), &c, &r).unwrap();
    assert!(b.bpp >= a.bpp);
    for (x, y) in a.objects.iter().zip(&b.objects) {
        assert_eq!(y.applied_qf, (x.applied_qf + 4).min(100));
    }
    let top = vcm_encode(&job(im.clone(), alloc::vec![VcmObject { bbox: objs[0].bbox, target: ObjectTarget::Jrd(0) }], 4, 15), &c, &r).unwrap();
    assert_eq!(top.objects[0].applied_qf, 100);
    let again = vcm_encode(&job(im, objs, 4, 15), &c, &r).unwrap();
    assert_eq!(again, b);
}

#[test]
fn foreground_beats_background() {
    let im = natural_image(128, 96, 3, 10).unwrap();
    let b = bx(32.0, 32.0, 48.0, 32.0);
    let j = job(im.clone(), alloc::vec![VcmObject { bbox: b, target: ObjectTarget::Jrd(12) }], 0, 20);
    let out = vcm_encode(&j, &QfCandidates::full(), &InternalReference::default()).unwrap();
    assert!(out.objects[0].applied_qf >= 20);
    let rec = codec::decode(&out.bitstream).unwrap();
    let fg = mse_region(&im, &rec, b.pixel_rect(128, 96)).unwrap();
    let bg = mse_region(&im, &rec, (96, 0, 128, 96)).unwrap();
    assert!(psnr_from_mse(fg) >= psnr_from_mse(bg));
}

#[test]
fn invalid_jobs() {
    let im = natural_image(64, 64, 3, 11).unwrap();
    let c = QfCandidates::full();
    let r = InternalReference::default();
    assert!(vcm_encode(&job(im.clone(), alloc::vec![], 0, 0), &c, &r).is_err());
    let out = alloc::vec![VcmObject { bbox: bx(60.0, 0.0, 10.0, 10.0), target: ObjectTarget::Jrd(3) }];
    assert!(vcm_encode(&job(im.clone(), out, 0, 30), &c, &r).is_err());
    let bad = alloc::vec![VcmObject { bbox: bx(0.0, 0.0, 10.0, 10.0), target: ObjectTarget::Jrd(64) }];
    assert!(vcm_encode(&job(im, bad, 0, 30), &c, &r).is_err());
}
