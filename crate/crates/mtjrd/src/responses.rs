//! Machine-vision response files and annotation building.
//!
//! A response directory holds, per image and task, one file for the
//! original image (`"qp": "orig"`) and one per distortion level 0..=63.
//! Files may sit in nested directories; names do not matter.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mtjrd_core::annotation::{annotate_image, threshold_sweep, AnnotationParams, ResponseLadder, SweepPoint};
use mtjrd_core::{BoundingBox, JrdAnnotation, Keypoint, KeypointSet, Task, TaskOutput, TaskResponse, NUM_KEYPOINTS, NUM_LEVELS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rle::Rle;

pub const RESPONSE_SCHEMA_VERSION: u32 = 1;
pub const ANNOTATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Original,
    Qp(u8),
}

impl Serialize for Level {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Level::Original => s.serialize_str("orig"),
            Level::Qp(q) => s.serialize_u8(*q),
        }
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(q) if (q as usize) < NUM_LEVELS => Ok(Level::Qp(q as u8)),
            Raw::Text(t) if t == "orig" => Ok(Level::Original),
            Raw::Num(q) => Err(serde::de::Error::custom(format!("qp {q} not in 0..=63"))),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("qp must be 0..=63 or \"orig\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: i64,
    pub confidence: f64,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rle: Option<Rle>,
    /// Flattened `x, y, v` triples, 17 of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<f64>>,
    /// Object area in pixels; the OKS scale of keypoint detections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    /// Identity joining the same object across tasks (originals only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFile {
    pub schema_version: u32,
    pub image_id: String,
    pub image_width: usize,
    pub image_height: usize,
    pub qp: Level,
    pub task: Task,
    pub detections: Vec<Detection>,
}

impl Detection {
    pub fn to_response(&self, task: Task, width: usize, height: usize) -> std::result::Result<TaskResponse, String> {
        let output = match task {
            Task::Od => {
                let [x, y, w, h] = self.bbox.ok_or("detection without box")?;
                TaskOutput::Box(BoundingBox::new(x, y, w, h).map_err(|e| e.to_string())?)
            }
            Task::Is => {
                let rle = self.rle.as_ref().ok_or("segmentation without rle")?;
                if rle.size != [height, width] {
                    return Err(format!("rle size {:?} differs from image {height}x{width}", rle.size));
                }
                TaskOutput::Mask(rle.to_mask().map_err(|e| e.to_string())?)
            }
            Task::Kpd => {
                let kp = self.keypoints.as_ref().ok_or("keypoint detection without keypoints")?;
                if kp.len() != 3 * NUM_KEYPOINTS {
                    return Err(format!("expected {} keypoint values, got {}", 3 * NUM_KEYPOINTS, kp.len()));
                }
                let area = self.area.ok_or("keypoint detection without area")?;
                let mut points = [Keypoint::default(); NUM_KEYPOINTS];
                for (p, c) in points.iter_mut().zip(kp.chunks_exact(3)) {
                    if !matches!(c[2], 0.0 | 1.0 | 2.0) {
                        return Err(format!("keypoint visibility {} not in {{0,1,2}}", c[2]));
                    }
                    *p = Keypoint {
                        x: c[0],
                        y: c[1],
                        v: c[2] as u8,
                    };
                }
                TaskOutput::Keypoints(KeypointSet::new(points, area).map_err(|e| e.to_string())?)
            }
        };
        TaskResponse::new(task, self.class_id, self.confidence, output).map_err(|e| e.to_string())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    crate::image_io::write_bytes(path, s.as_bytes())
}

fn json_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            json_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Every response file under `dir`, in path order.
pub fn response_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    json_files(dir, &mut files)?;
    files.sort();
    Ok(files)
}

/// One image with its per-task ladders, tasks in OD, IS, KPD order.
#[derive(Debug, Clone)]
pub struct ImageLadders {
    pub image_id: String,
    pub ladders: Vec<ResponseLadder>,
}

type Slots = (Option<(usize, usize)>, Option<Vec<TaskResponse>>, Vec<Option<String>>, Vec<Option<Vec<TaskResponse>>>);

/// Reads and groups a response directory.
pub fn load_ladders(dir: &Path) -> Result<Vec<ImageLadders>> {
    let files = response_files(dir)?;
    let parsed: Vec<(PathBuf, ResponseFile)> = files
        .into_par_iter()
        .map(|p| read_json::<ResponseFile>(&p).map(|f| (p, f)))
        .collect::<Result<_>>()?;
    let mut groups: BTreeMap<(String, Task), Slots> = BTreeMap::new();
    for (path, f) in parsed {
        if f.schema_version != RESPONSE_SCHEMA_VERSION {
            return Err(Error::format(&path, format!("unsupported schema_version {}", f.schema_version)));
        }
        let slot = groups
            .entry((f.image_id.clone(), f.task))
            .or_insert_with(|| (None, None, Vec::new(), vec![None; NUM_LEVELS]));
        let dims = (f.image_width, f.image_height);
        if slot.0.is_some_and(|d| d != dims) {
            return Err(Error::format(&path, format!("image {} size disagrees with other files", f.image_id)));
        }
        slot.0 = Some(dims);
        let responses = f
            .detections
            .iter()
            .enumerate()
            .map(|(i, d)| {
                d.to_response(f.task, f.image_width, f.image_height)
                    .map_err(|m| Error::format(&path, format!("detection {i}: {m}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match f.qp {
            Level::Original => {
                if slot.1.is_some() {
                    return Err(Error::format(&path, format!("duplicate original for image {} task {}", f.image_id, f.task)));
                }
                slot.2 = f.detections.iter().map(|d| d.object_id.clone()).collect();
                slot.1 = Some(responses);
            }
            Level::Qp(q) => {
                let cell = &mut slot.3[q as usize];
                if cell.is_some() {
                    return Err(Error::format(&path, format!("duplicate q {q} for image {} task {}", f.image_id, f.task)));
                }
                *cell = Some(responses);
            }
        }
    }
    let mut images: Vec<ImageLadders> = Vec::new();
    for ((image_id, task), (dims, original, ids, levels)) in groups {
        let original = original.ok_or_else(|| Error::format(dir, format!("image {image_id} task {task}: missing original responses")))?;
        let mut distorted = Vec::with_capacity(NUM_LEVELS);
        for (q, l) in levels.into_iter().enumerate() {
            distorted.push(l.ok_or_else(|| Error::format(dir, format!("image {image_id} task {task}: missing q {q}")))?);
        }
        let (w, h) = dims.expect("set with every file");
        let ladder = ResponseLadder {
            image_id: image_id.clone(),
            task,
            image_width: w,
            image_height: h,
            original,
            original_ids: ids,
            distorted,
        };
        match images.last_mut() {
            Some(img) if img.image_id == image_id => img.ladders.push(ladder),
            _ => images.push(ImageLadders {
                image_id,
                ladders: vec![ladder],
            }),
        }
    }
    Ok(images)
}

/// Annotations of every image, images in id order, parallel per image.
pub fn annotate_all(images: &[ImageLadders], params: &AnnotationParams) -> Result<Vec<JrdAnnotation>> {
    params.validate()?;
    let per_image: Vec<Vec<JrdAnnotation>> = images
        .par_iter()
        .map(|img| annotate_image(&img.ladders, params).map_err(Error::from))
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

pub fn build_annotations(dir: &Path, params: &AnnotationParams) -> Result<Vec<JrdAnnotation>> {
    annotate_all(&load_ladders(dir)?, params)
}

/// Per-task mean JRDs at each threshold of `thresholds`.
pub fn sweep_means(images: &[ImageLadders], thresholds: &[f64], params: &AnnotationParams) -> Result<Vec<SweepPoint>> {
    let ladders: Vec<ResponseLadder> = images.iter().flat_map(|i| i.ladders.iter().cloned()).collect();
    Ok(threshold_sweep(&ladders, thresholds, params)?.means())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub schema_version: u32,
    pub annotations: Vec<JrdAnnotation>,
}

pub fn write_annotations(path: &Path, annotations: &[JrdAnnotation]) -> Result<()> {
    write_json(
        path,
        &AnnotationFile {
            schema_version: ANNOTATION_SCHEMA_VERSION,
            annotations: annotations.to_vec(),
        },
    )
}

pub fn read_annotations(path: &Path) -> Result<Vec<JrdAnnotation>> {
    let f: AnnotationFile = read_json(path)?;
    if f.schema_version != ANNOTATION_SCHEMA_VERSION {
        return Err(Error::format(path, format!("unsupported schema_version {}", f.schema_version)));
    }
    for a in &f.annotations {
        a.validate().map_err(|e| Error::format(path, format!("object {}/{}: {e}", a.image_id, a.object_id)))?;
    }
    Ok(f.annotations)
}
