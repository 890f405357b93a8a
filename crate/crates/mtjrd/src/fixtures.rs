//! Deterministic generators for the checked-in fixtures.
//!
//! The synthetic response set is engineered: every object's per-task JRD
//! is chosen first and the responses are built to flip exactly there, so
//! the expected annotations follow from the design without running the
//! annotator.

use std::collections::BTreeMap;
use std::path::Path;

use mtjrd_core::codec::{encode, rasterize_qfmap, QfMap};
use mtjrd_core::synth::natural_image;
use mtjrd_core::{attribute_triplet, BoundingBox, ImagePlane, JrdAnnotation, Mask, Task, NUM_KEYPOINTS, NUM_LEVELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image_io::{write_bytes, write_image};
use crate::pipeline::{LadderFile, LadderRung, LADDER_SCHEMA_VERSION};
use crate::responses::{write_annotations, write_json, Detection, Level, ResponseFile, RESPONSE_SCHEMA_VERSION};
use crate::rle::Rle;

pub const TEST_IMAGE_SEED: u64 = 7;
pub const TEST_IMAGE_SIZE: usize = 256;
pub const CALIBRATION_IMAGES: u64 = 10;
pub const CALIBRATION_SEED_BASE: u64 = 1000;
pub const FIXTURE_SEED: u64 = 2024;

pub fn test_image() -> mtjrd_core::Result<ImagePlane> {
    natural_image(TEST_IMAGE_SIZE, TEST_IMAGE_SIZE, 3, TEST_IMAGE_SEED)
}

pub fn calibration_corpus() -> mtjrd_core::Result<Vec<ImagePlane>> {
    (0..CALIBRATION_IMAGES)
        .map(|i| natural_image(160, 120, 3, CALIBRATION_SEED_BASE + i))
        .collect()
}

/// One engineered object: its box and the JRD it should get per task
/// (`-1` for never recognizable, `None` for not detected by that task).
#[derive(Debug, Clone)]
pub struct DesignedObject {
    pub id: String,
    pub class_id: i64,
    pub bbox: [f64; 4],
    pub jrd: [Option<i8>; 3],
    /// Levels below the JRD at which a single isolated miss is injected.
    pub glitches: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct DesignedImage {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub objects: Vec<DesignedObject>,
}

/// The synthetic response design: two images, seven objects.
pub fn response_design() -> Vec<DesignedImage> {
    let obj = |id: &str, class_id, bbox, jrd, glitches: &[u8]| DesignedObject {
        id: id.into(),
        class_id,
        bbox,
        jrd,
        glitches: glitches.to_vec(),
    };
    vec![
        DesignedImage {
            id: "img_000".into(),
            width: 160,
            height: 120,
            seed: 31,
            objects: vec![
                obj("p1", 1, [8.0, 10.0, 48.0, 64.0], [Some(31), Some(28), Some(25)], &[12]),
                obj("p2", 1, [70.0, 20.0, 56.0, 80.0], [Some(63), Some(45), Some(40)], &[5, 30]),
                obj("p3", 1, [120.0, 60.0, 36.0, 52.0], [Some(-1), Some(20), None], &[]),
                obj("car", 3, [10.0, 80.0, 40.0, 30.0], [Some(50), Some(50), None], &[]),
            ],
        },
        DesignedImage {
            id: "img_001".into(),
            width: 128,
            height: 96,
            seed: 32,
            objects: vec![
                obj("p1", 1, [16.0, 8.0, 40.0, 72.0], [Some(36), Some(33), Some(30)], &[20]),
                obj("p2", 1, [64.0, 16.0, 48.0, 64.0], [Some(18), Some(17), Some(12)], &[]),
                obj("p3", 1, [40.0, 50.0, 30.0, 40.0], [Some(55), None, Some(-1)], &[]),
            ],
        },
    ]
}

fn ellipse_mask(w: usize, h: usize, b: [f64; 4], dx: f64) -> Mask {
    let (cx, cy) = (b[0] + b[2] / 2.0 + dx, b[1] + b[3] / 2.0);
    let (rx, ry) = (b[2] / 2.0, b[3] / 2.0);
    let mut m = Mask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5 - cx) / rx;
            let v = (y as f64 + 0.5 - cy) / ry;
            if u * u + v * v <= 1.0 {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// 17 keypoints on a stick figure inside the box.
fn skeleton(b: [f64; 4], dx: f64, dy: f64) -> Vec<f64> {
    const LAYOUT: [(f64, f64); NUM_KEYPOINTS] = [
        (0.5, 0.08),
        (0.45, 0.06),
        (0.55, 0.06),
        (0.4, 0.08),
        (0.6, 0.08),
        (0.3, 0.25),
        (0.7, 0.25),
        (0.2, 0.42),
        (0.8, 0.42),
        (0.15, 0.58),
        (0.85, 0.58),
        (0.38, 0.6),
        (0.62, 0.6),
        (0.36, 0.78),
        (0.64, 0.78),
        (0.35, 0.95),
        (0.65, 0.95),
    ];
    LAYOUT
        .iter()
        .flat_map(|&(u, v)| [b[0] + u * b[2] + dx, b[1] + v * b[3] + dy, 2.0])
        .collect()
}

fn detection(task: Task, img: &DesignedImage, o: &DesignedObject, confidence: f64, shift: f64) -> Detection {
    let b = o.bbox;
    let mut d = Detection {
        class_id: o.class_id,
        confidence,
        bbox: None,
        rle: None,
        keypoints: None,
        area: None,
        object_id: None,
    };
    match task {
        Task::Od => d.bbox = Some([b[0] + shift, b[1], b[2], b[3]]),
        Task::Is => d.rle = Some(Rle::from_mask(&ellipse_mask(img.width, img.height, b, shift))),
        Task::Kpd => {
            d.keypoints = Some(skeleton(b, shift, shift * 0.5));
            d.area = Some(b[2] * b[3]);
        }
    }
    d
}

/// Whether the designed object is recognized at level `q`.
fn recognized(o: &DesignedObject, task: Task, q: usize) -> bool {
    match o.jrd[task.index()] {
        Some(j) => (q as i64) <= j as i64 && !o.glitches.contains(&(q as u8)),
        None => false,
    }
}

/// Named response files.
pub type ResponseSet = Vec<(String, ResponseFile)>;

/// A labelled ladder with its encoded streams by file name.
pub type Ladder = (String, LadderFile, Vec<(String, Vec<u8>)>);

/// Response files of the design plus the annotations they must produce.
pub fn synthetic_responses() -> Result<(ResponseSet, Vec<JrdAnnotation>)> {
    let mut files = Vec::new();
    let mut expected = Vec::new();
    for img in response_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(img.seed);
        for task in Task::ALL {
            let present: Vec<&DesignedObject> = img.objects.iter().filter(|o| o.jrd[task.index()].is_some()).collect();
            let original = present
                .iter()
                .map(|o| {
                    let mut d = detection(task, &img, o, 0.97, 0.0);
                    d.object_id = Some(o.id.clone());
                    d
                })
                .collect();
            files.push((
                format!("{}/{}/orig.json", img.id, task),
                ResponseFile {
                    schema_version: RESPONSE_SCHEMA_VERSION,
                    image_id: img.id.clone(),
                    image_width: img.width,
                    image_height: img.height,
                    qp: Level::Original,
                    task,
                    detections: original,
                },
            ));
            for q in 0..NUM_LEVELS {
                let mut dets = Vec::new();
                for o in &present {
                    if recognized(o, task, q) {
                        let conf = 0.8 + 0.15 * rng.random::<f64>();
                        dets.push(detection(task, &img, o, conf, 1.0));
                    } else {
                        // Misses alternate between a low-confidence hit and no hit.
                        match rng.random_range(0..3) {
                            0 => {}
                            1 => dets.push(detection(task, &img, o, 0.3 + 0.4 * rng.random::<f64>(), 1.0)),
                            _ => dets.push(detection(task, &img, o, 0.9, 9.0)),
                        }
                    }
                }
                files.push((
                    format!("{}/{}/q{q:02}.json", img.id, task),
                    ResponseFile {
                        schema_version: RESPONSE_SCHEMA_VERSION,
                        image_id: img.id.clone(),
                        image_width: img.width,
                        image_height: img.height,
                        qp: Level::Qp(q as u8),
                        task,
                        detections: dets,
                    },
                ));
            }
        }
        for o in img.objects.iter().filter(|o| o.class_id == 1) {
            let b = o.bbox;
            let bbox = BoundingBox::new(b[0], b[1], b[2], b[3])?;
            let jrd: BTreeMap<Task, u8> = Task::ALL
                .iter()
                .filter_map(|&t| match o.jrd[t.index()] {
                    Some(j) if j >= 0 => Some((t, j as u8)),
                    _ => None,
                })
                .collect();
            expected.push(JrdAnnotation {
                image_id: img.id.clone(),
                object_id: o.id.clone(),
                attrs: attribute_triplet(&bbox, img.width, img.height)?,
                bbox,
                jrd,
            });
        }
    }
    Ok((files, expected))
}

/// Detector outputs on a rung whose object region was coded at `qf`:
/// box error shrinks and confidence grows with quality.
fn ladder_predictions(refs: &[[f64; 4]], qf: impl Fn(usize) -> u8, rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let mut out = Vec::new();
    for (i, b) in refs.iter().enumerate() {
        let q = qf(i) as f64;
        let amp = 14.0 * (1.0 - q / 100.0).powi(2) + 0.5;
        let j = |rng: &mut ChaCha8Rng| rng.random_range(-amp..amp);
        out.push(Detection {
            class_id: 1,
            confidence: (0.4 + q / 200.0 + rng.random_range(0.0..0.05)).min(1.0),
            bbox: Some([b[0] + j(rng), b[1] + j(rng), (b[2] + j(rng)).max(4.0), (b[3] + j(rng)).max(4.0)]),
            rle: None,
            keypoints: None,
            area: None,
            object_id: None,
        });
        if q < 40.0 {
            out.push(Detection {
                class_id: 1,
                confidence: 0.3 + rng.random_range(0.0..0.2),
                bbox: Some([b[0] + 30.0, b[1] + 20.0, b[2] * 0.6, b[3] * 0.6]),
                rle: None,
                keypoints: None,
                area: None,
                object_id: None,
            });
        }
    }
    out
}

pub const LADDER_BOXES: [[f64; 4]; 3] = [[24.0, 32.0, 64.0, 96.0], [120.0, 40.0, 72.0, 80.0], [60.0, 160.0, 112.0, 64.0]];
pub const UNIFORM_LADDER: [u8; 5] = [42, 44, 46, 48, 50];

/// Two ladders over the test image: uniform QFs, and object QFs raised by
/// 20 over a background lowered by 20.
pub fn ladders(image: &ImagePlane) -> Result<Vec<Ladder>> {
    let mut rng = ChaCha8Rng::seed_from_u64(FIXTURE_SEED);
    let references: Vec<Detection> = LADDER_BOXES
        .iter()
        .map(|b| Detection {
            class_id: 1,
            confidence: 1.0,
            bbox: Some(*b),
            rle: None,
            keypoints: None,
            area: None,
            object_id: None,
        })
        .collect();
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::new();
    for label in ["uniform", "jrd"] {
        let mut points = Vec::new();
        let mut streams = Vec::new();
        for &qf in &UNIFORM_LADDER {
            let (map, fg) = if label == "uniform" {
                (QfMap::uniform(w, h, qf)?, qf)
            } else {
                let fg = qf + 20;
                let regions: Vec<(BoundingBox, u8)> = LADDER_BOXES
                    .iter()
                    .map(|b| Ok((BoundingBox::new(b[0], b[1], b[2], b[3])?, fg)))
                    .collect::<mtjrd_core::Result<_>>()?;
                (rasterize_qfmap(&regions, qf - 20, w, h)?, fg)
            };
            let name = format!("{label}_q{qf}.jpg");
            streams.push((name.clone(), encode(image, &map)?.into_bytes()));
            points.push(LadderRung {
                bitstream: name,
                predictions: ladder_predictions(&LADDER_BOXES, |_| fg, &mut rng),
            });
        }
        out.push((
            format!("{label}.json"),
            LadderFile {
                schema_version: LADDER_SCHEMA_VERSION,
                label: label.into(),
                task: Task::Od,
                image_width: w,
                image_height: h,
                references: references.clone(),
                points,
            },
            streams,
        ));
    }
    Ok(out)
}

/// Writes the whole fixture tree under `root`:
/// `test_image.ppm`, `calibration/`, `responses/`, `images/`,
/// `golden/annotations.json` and `ladders/`.
pub fn write_all(root: &Path) -> Result<()> {
    write_image(root.join("test_image.ppm"), &test_image()?)?;
    for (i, img) in calibration_corpus()?.iter().enumerate() {
        write_image(root.join("calibration").join(format!("cal_{i:02}.ppm")), img)?;
    }
    let (files, expected) = synthetic_responses()?;
    for (rel, f) in &files {
        write_json(&root.join("responses").join(rel), f)?;
    }
    for img in response_design() {
        write_image(
            root.join("images").join(format!("{}.ppm", img.id)),
            &natural_image(img.width, img.height, 3, img.seed)?,
        )?;
    }
    write_annotations(&root.join("golden").join("annotations.json"), &expected)?;
    for (name, ladder, streams) in ladders(&test_image()?)? {
        write_json(&root.join("ladders").join(name), &ladder)?;
        for (s, bytes) in streams {
            write_bytes(&root.join("ladders").join(s), &bytes)?;
        }
    }
    Ok(())
}
