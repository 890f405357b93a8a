//! File-level pipeline stages shared by the command line and the tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mtjrd_core::codec::{self, Bitstream};
use mtjrd_core::evaluation::{
    quality_delta_report, rate_accuracy_curve, ApParams, LadderPoint, ObjectRecons, QualityDeltaReport, RateAccuracyCurve,
};
use mtjrd_core::predictor::{error_metrics, predict, prepare_input, Model, PredictMode, PredictionErrorReport, Sample};
use mtjrd_core::vcm::{encode_plans, plan_object, InternalReference, ObjectPlan, ObjectTarget, QfCandidates, ReferenceSource, VcmJob, VcmObject};
use mtjrd_core::{BoundingBox, ImagePlane, JrdAnnotation, Task, TaskResponse};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::{find_image, read_image};
use crate::responses::{read_json, Detection};

/// Annotations grouped by image id, in id order.
pub fn by_image(annotations: &[JrdAnnotation]) -> BTreeMap<&str, Vec<&JrdAnnotation>> {
    let mut m: BTreeMap<&str, Vec<&JrdAnnotation>> = BTreeMap::new();
    for a in annotations {
        m.entry(a.image_id.as_str()).or_default().push(a);
    }
    m
}

fn load_images(ids: &[&str], dir: &Path) -> Result<BTreeMap<String, ImagePlane>> {
    ids.par_iter()
        .map(|id| Ok((id.to_string(), read_image(find_image(dir, id)?)?)))
        .collect()
}

/// One training sample per annotation that has at least one task label.
pub fn build_samples(annotations: &[JrdAnnotation], images: &Path, input_size: usize) -> Result<Vec<Sample>> {
    let groups = by_image(annotations);
    let ids: Vec<&str> = groups.keys().copied().collect();
    let planes = load_images(&ids, images)?;
    let mut out = Vec::new();
    for (id, anns) in groups {
        let img = &planes[id];
        for a in anns {
            if a.jrd.is_empty() {
                continue;
            }
            out.push(Sample {
                input: prepare_input(img, &a.bbox, input_size)?,
                attrs: a.attrs.as_array(),
                jrd: Task::ALL.map(|t| a.jrd.get(&t).copied()),
            });
        }
    }
    Ok(out)
}

/// Copies of `annotations` whose JRDs are the model's predictions.
pub fn predict_annotations(model: &Model, annotations: &[JrdAnnotation], images: &Path, mode: PredictMode) -> Result<Vec<JrdAnnotation>> {
    let groups = by_image(annotations);
    let ids: Vec<&str> = groups.keys().copied().collect();
    let planes = load_images(&ids, images)?;
    let size = model.config().input_size;
    let mut out = Vec::with_capacity(annotations.len());
    for (id, anns) in groups {
        let img = &planes[id];
        let preds = anns
            .par_iter()
            .map(|a| {
                let x = prepare_input(img, &a.bbox, size)?;
                Ok(predict(model, &x, a.attrs.as_array(), mode)?)
            })
            .collect::<Result<Vec<[u8; 3]>>>()?;
        for (a, p) in anns.into_iter().zip(preds) {
            let mut a = a.clone();
            a.jrd = Task::ALL.iter().map(|&t| (t, p[t.index()])).collect();
            out.push(a);
        }
    }
    Ok(out)
}

/// Per-task error of predicted against ground-truth JRDs, pairing objects
/// by image and object id.
pub fn prediction_errors(truth: &[JrdAnnotation], predicted: &[JrdAnnotation]) -> Result<BTreeMap<Task, PredictionErrorReport>> {
    let index: BTreeMap<(&str, &str), &JrdAnnotation> =
        predicted.iter().map(|a| ((a.image_id.as_str(), a.object_id.as_str()), a)).collect();
    let mut out = BTreeMap::new();
    for task in Task::ALL {
        let (mut p, mut t) = (Vec::new(), Vec::new());
        for a in truth {
            let Some(&gt) = a.jrd.get(&task) else { continue };
            let Some(pa) = index.get(&(a.image_id.as_str(), a.object_id.as_str())) else {
                return Err(Error::validation(
                    "predictions",
                    format!("no prediction for {}/{}", a.image_id, a.object_id),
                ));
            };
            let Some(&pj) = pa.jrd.get(&task) else {
                return Err(Error::validation(
                    "predictions",
                    format!("{}/{} lacks a {task} prediction", a.image_id, a.object_id),
                ));
            };
            p.push(pj);
            t.push(gt);
        }
        if !p.is_empty() {
            out.insert(task, error_metrics(&p, &t)?);
        }
    }
    Ok(out)
}

/// External reconstructions `<dir>/<image_id>/qpNN.{ppm,png}`, returned as
/// stored.
#[derive(Debug, Clone)]
pub struct FileReference {
    pub dir: PathBuf,
}

impl FileReference {
    pub fn for_image(root: &Path, image_id: &str) -> Self {
        FileReference { dir: root.join(image_id) }
    }

    pub fn path(&self, jrd_qp: u8) -> Result<PathBuf> {
        find_image(&self.dir, &format!("qp{jrd_qp:02}"))
    }
}

impl ReferenceSource for FileReference {
    fn reference(&self, image: &ImagePlane, _bbox: &BoundingBox, jrd_qp: u8) -> mtjrd_core::Result<ImagePlane> {
        let path = self.path(jrd_qp).map_err(|e| mtjrd_core::Error::InvalidArgument(e.to_string()))?;
        let r = read_image(&path).map_err(|e| mtjrd_core::Error::InvalidArgument(e.to_string()))?;
        if !r.same_shape(image) {
            return Err(mtjrd_core::Error::InvalidArgument(format!(
                "{}: reference is {}x{}x{}, image is {}x{}x{}",
                path.display(),
                r.width(),
                r.height(),
                r.channels(),
                image.width(),
                image.height(),
                image.channels()
            )));
        }
        Ok(r)
    }
}

/// Where object references come from.
#[derive(Debug, Clone, PartialEq)]
pub enum References {
    Internal,
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub object_id: String,
    pub jrd: u8,
    pub target_psnr: f64,
    pub searched_qf: u8,
    pub applied_qf: u8,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcmRecord {
    pub image_id: String,
    pub task: Task,
    pub delta_qf: i32,
    pub background_qf: u8,
    /// Bitstream file name inside the output directory.
    pub bitstream: String,
    pub bpp: f64,
    pub objects: Vec<ObjectRecord>,
}

pub struct VcmSettings<'a> {
    pub task: Task,
    pub deltas: &'a [i32],
    pub background_qf: u8,
    pub candidates: &'a QfCandidates,
    pub references: &'a References,
}

/// Searches every object of one image once and encodes one stream per
/// offset of the ladder.
pub fn vcm_image(
    image_id: &str,
    image: &ImagePlane,
    objects: &[&JrdAnnotation],
    s: &VcmSettings<'_>,
) -> Result<Vec<(VcmRecord, Bitstream)>> {
    let chosen: Vec<(&JrdAnnotation, u8)> = objects.iter().filter_map(|a| a.jrd.get(&s.task).map(|&j| (*a, j))).collect();
    let job = VcmJob {
        image: image.clone(),
        task: s.task,
        objects: chosen
            .iter()
            .map(|(a, j)| VcmObject {
                bbox: a.bbox,
                target: ObjectTarget::Jrd(*j),
            })
            .collect(),
        delta_qf: 0,
        background_qf: s.background_qf,
    };
    job.validate()?;
    let internal = InternalReference::default();
    let file_ref;
    let reference: &(dyn ReferenceSource + Sync) = match s.references {
        References::Internal => &internal,
        References::Directory(root) => {
            file_ref = FileReference::for_image(root, image_id);
            &file_ref
        }
    };
    let plans: Vec<ObjectPlan> = job
        .objects
        .par_iter()
        .map(|o| plan_object(&job, o, s.candidates, reference))
        .collect::<mtjrd_core::Result<_>>()?;
    let mut out = Vec::with_capacity(s.deltas.len());
    for &delta in s.deltas {
        let mut j = job.clone();
        j.delta_qf = delta;
        let adjusted: Vec<ObjectPlan> = plans
            .iter()
            .map(|p| ObjectPlan {
                applied_qf: (p.search.qf as i32 + delta).clamp(1, 100) as u8,
                ..*p
            })
            .collect();
        let outcome = encode_plans(&j, adjusted)?;
        let record = VcmRecord {
            image_id: image_id.into(),
            task: s.task,
            delta_qf: delta,
            background_qf: s.background_qf,
            bitstream: format!("{image_id}_{}_d{delta}.jpg", s.task),
            bpp: outcome.bpp,
            objects: chosen
                .iter()
                .zip(&outcome.objects)
                .map(|((a, j), p)| ObjectRecord {
                    object_id: a.object_id.clone(),
                    jrd: *j,
                    target_psnr: p.target_psnr,
                    searched_qf: p.search.qf,
                    applied_qf: p.applied_qf,
                    probes: p.search.probes,
                })
                .collect(),
        };
        out.push((record, outcome.bitstream));
    }
    Ok(out)
}

/// Runs [`vcm_image`] on every annotated image and writes the streams to
/// `out_dir`; records come back in image, then offset order.
pub fn run_vcm(annotations: &[JrdAnnotation], images: &Path, s: &VcmSettings<'_>, out_dir: &Path) -> Result<Vec<VcmRecord>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let groups = by_image(annotations);
    let per_image: Vec<Vec<VcmRecord>> = groups
        .par_iter()
        .map(|(id, anns)| {
            let image = read_image(find_image(images, id)?)?;
            let encoded = vcm_image(id, &image, anns, s)?;
            let mut records = Vec::with_capacity(encoded.len());
            for (rec, bits) in encoded {
                let path = out_dir.join(&rec.bitstream);
                std::fs::write(&path, bits.bytes()).map_err(|e| Error::io(&path, e))?;
                records.push(rec);
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Per-object fidelity of coding with predicted instead of ground-truth
/// JRDs, both at offset 0.
pub fn quality_delta(
    truth: &[JrdAnnotation],
    predicted: &[JrdAnnotation],
    images: &Path,
    s: &VcmSettings<'_>,
) -> Result<QualityDeltaReport> {
    let pred_index: BTreeMap<(&str, &str), &JrdAnnotation> =
        predicted.iter().map(|a| ((a.image_id.as_str(), a.object_id.as_str()), a)).collect();
    let zero = VcmSettings { deltas: &[0], ..*s };
    let mut crops: Vec<(ImagePlane, ImagePlane, ImagePlane)> = Vec::new();
    for (id, anns) in by_image(truth) {
        let gt: Vec<&JrdAnnotation> = anns.into_iter().filter(|a| a.jrd.contains_key(&s.task)).collect();
        if gt.is_empty() {
            continue;
        }
        let pr: Vec<&JrdAnnotation> = gt
            .iter()
            .map(|a| {
                pred_index.get(&(a.image_id.as_str(), a.object_id.as_str())).copied().ok_or_else(|| {
                    Error::validation("predictions", format!("no prediction for {}/{}", a.image_id, a.object_id))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(a) = pr.iter().find(|a| !a.jrd.contains_key(&s.task)) {
            return Err(Error::validation(
                "predictions",
                format!("{}/{} lacks a {} prediction", a.image_id, a.object_id, s.task),
            ));
        }
        let image = read_image(find_image(images, id)?)?;
        let rec_gt = codec::decode(&vcm_image(id, &image, &gt, &zero)?.remove(0).1)?;
        let rec_pr = codec::decode(&vcm_image(id, &image, &pr, &zero)?.remove(0).1)?;
        for a in &gt {
            let (x0, y0, x1, y1) = a.bbox.pixel_rect(image.width(), image.height());
            if x1 - x0 < 8 || y1 - y0 < 8 {
                log::warn!("{}/{}: box smaller than 8x8 skipped in quality comparison", a.image_id, a.object_id);
                continue;
            }
            crops.push((
                image.crop(x0, y0, x1, y1)?,
                rec_gt.crop(x0, y0, x1, y1)?,
                rec_pr.crop(x0, y0, x1, y1)?,
            ));
        }
    }
    let objects: Vec<ObjectRecons<'_>> = crops
        .iter()
        .map(|(o, g, p)| ObjectRecons {
            original: o,
            ground_truth: g,
            predicted: p,
        })
        .collect();
    Ok(quality_delta_report(&objects)?)
}

pub const LADDER_SCHEMA_VERSION: u32 = 1;

/// An encoding ladder of one image with the responses measured on each
/// rung. Bitstream paths are relative to the ladder file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderFile {
    pub schema_version: u32,
    pub label: String,
    pub task: Task,
    pub image_width: usize,
    pub image_height: usize,
    pub references: Vec<Detection>,
    pub points: Vec<LadderRung>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub bitstream: String,
    pub predictions: Vec<Detection>,
}

fn responses(path: &Path, dets: &[Detection], task: Task, w: usize, h: usize) -> Result<Vec<TaskResponse>> {
    dets.iter()
        .enumerate()
        .map(|(i, d)| d.to_response(task, w, h).map_err(|m| Error::format(path, format!("detection {i}: {m}"))))
        .collect()
}

/// Rate-accuracy curve of a ladder file, with the inputs it read.
pub fn ladder_curve(path: &Path, params: &ApParams) -> Result<(RateAccuracyCurve, Vec<PathBuf>)> {
    let f: LadderFile = read_json(path)?;
    if f.schema_version != LADDER_SCHEMA_VERSION {
        return Err(Error::format(path, format!("unsupported schema_version {}", f.schema_version)));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let refs = responses(path, &f.references, f.task, f.image_width, f.image_height)?;
    let mut inputs = vec![path.to_path_buf()];
    let mut ladder = Vec::with_capacity(f.points.len());
    for p in &f.points {
        let bp = base.join(&p.bitstream);
        let bytes = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        inputs.push(bp);
        ladder.push(LadderPoint {
            bitstream: Bitstream::from_bytes(bytes),
            predictions: responses(path, &p.predictions, f.task, f.image_width, f.image_height)?,
            references: refs.clone(),
        });
    }
    let curve = rate_accuracy_curve(&f.label, f.task, &ladder, params).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((curve, inputs))
}
