//! Public-API walk from a synthetic image through JRD-driven coding.

use mtjrd_core::codec::{self, QfMap};
use mtjrd_core::metrics::psnr;
use mtjrd_core::synth::natural_image;
use mtjrd_core::vcm::{vcm_encode, InternalReference, ObjectTarget, QfCandidates, VcmJob, VcmObject};
use mtjrd_core::{BoundingBox, Task};

fn job(jrd: u8) -> VcmJob {
    VcmJob {
        image: natural_image(128, 96, 3, 4).unwrap(),
        task: Task::Od,
        objects: vec![VcmObject {
            bbox: BoundingBox::new(32.0, 16.0, 48.0, 48.0).unwrap(),
            target: ObjectTarget::Jrd(jrd),
        }],
        delta_qf: 0,
        background_qf: 30,
    }
}

#[test]
fn jrd_driven_stream_carries_its_qf_map() {
    let j = job(20);
    let out = vcm_encode(&j, &QfCandidates::full(), &InternalReference::default()).unwrap();
    let plan = out.objects[0];
    assert!(plan.search.exhaustive || plan.search.probes <= 9);

    let info = out.bitstream.info().unwrap();
    assert_eq!((info.width, info.height, info.components), (128, 96, 3));
    assert_eq!(info.qfmap.as_ref(), Some(&out.qfmap));
    // Blocks inside the object take the applied QF; corners keep the background.
    assert_eq!(out.qfmap.get(3, 2), plan.applied_qf);
    assert_eq!(out.qfmap.get(0, 0), 30);
    assert_eq!(out.bpp, codec::measure_rate(out.bitstream.len(), 128, 96));

    let decoded = codec::decode(&out.bitstream).unwrap();
    assert!(psnr(&j.image, &decoded).unwrap() > 20.0);
}

#[test]
fn lower_jrd_asks_for_more_bits() {
    let r = InternalReference::default();
    let c = QfCandidates::full();
    let coarse = vcm_encode(&job(50), &c, &r).unwrap();
    let fine = vcm_encode(&job(5), &c, &r).unwrap();
    assert!(fine.objects[0].target_psnr > coarse.objects[0].target_psnr);
    assert!(fine.bpp > coarse.bpp);
}

#[test]
fn uniform_map_round_trips_through_the_public_codec() {
    let img = natural_image(64, 64, 1, 9).unwrap();
    let map = QfMap::uniform(64, 64, 75).unwrap();
    let (stream, decoded) = codec::round_trip(&img, &map).unwrap();
    assert_eq!(decoded, codec::decode(&stream).unwrap());
    assert!(stream.info().unwrap().qfmap.is_none_or(|m| m.is_uniform()));
}
