//! JRD annotation from machine-vision responses.
//!
//! For every object found in the original image, each of the 64 distorted
//! responses is matched back to it, turned into a binary recognizability
//! label, and the label sequence is reduced to a single JRD by a sliding
//! zero-window scan.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::{box_iou, output_similarity, SimilarityScore, COCO_KAPPAS};
use crate::types::{
    attribute_triplet, BoundingBox, JrdAnnotation, Task, TaskOutput, TaskResponse, NUM_KEYPOINTS,
    NUM_LEVELS,
};

pub const DEFAULT_THRESHOLD: f64 = 0.75;
pub const DEFAULT_WINDOW: usize = 3;
pub const SWEEP_THRESHOLDS: [f64; 5] = [0.65, 0.70, 0.75, 0.80, 0.85];

/// Quality of one distorted response relative to the original object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityTriple {
    pub class_id: i64,
    pub confidence: f64,
    pub similarity: SimilarityScore,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub task: Task,
    pub labels: [bool; NUM_LEVELS],
}

/// Recognizable iff the class matches and both confidence and similarity
/// strictly exceed `threshold`.
pub fn make_label(q: &QualityTriple, reference_class: i64, threshold: f64) -> bool {
    q.class_id == reference_class && q.confidence > threshold && q.similarity.value() > threshold
}

/// Reduces a label sequence to a JRD.
///
/// The first level `q_f` that opens a run of `window` zero labels (or a
/// shorter zero run that reaches the last level) marks the transition;
/// the JRD is `q_f - 1`. No such run gives 63, and `q_f = 0` gives -1.
pub fn jrd_from_labels(seq: &LabelSequence, window: usize) -> Result<i8> {
    if window == 0 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let mut run = 0usize;
    for (q, &label) in seq.labels.iter().enumerate() {
        if label {
            run = 0;
            continue;
        }
        run += 1;
        if run == window {
            return Ok((q + 1 - window) as i8 - 1);
        }
    }
    if run > 0 {
        return Ok((NUM_LEVELS - run) as i8 - 1);
    }
    Ok(NUM_LEVELS as i8 - 1)
}

/// Picks the candidate most similar to `original`. The first of several
/// equally similar candidates wins. Candidates whose similarity is
/// undefined are skipped.
pub fn match_response<'a>(
    original: &TaskResponse,
    candidates: &'a [TaskResponse],
    kappas: &[f64; NUM_KEYPOINTS],
) -> Result<(Option<&'a TaskResponse>, SimilarityScore)> {
    let mut best: Option<(&TaskResponse, SimilarityScore)> = None;
    for cand in candidates {
        if cand.task() != original.task() {
            return Err(Error::invalid(format!(
                "candidate task {} differs from original task {}",
                cand.task(),
                original.task()
            )));
        }
        let sim = match output_similarity(original.output(), cand.output(), kappas) {
            Ok(s) => s,
            Err(Error::UndefinedSimilarity(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(_, s)| sim.value() > s.value()) {
            best = Some((cand, sim));
        }
    }
    Ok(match best {
        Some((c, s)) => (Some(c), s),
        None => (None, SimilarityScore::ZERO),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationParams {
    pub threshold: f64,
    pub window: usize,
    pub kappas: [f64; NUM_KEYPOINTS],
    /// Keypoint objects whose area is below this are dropped.
    pub min_keypoint_area: f64,
    /// Only original detections of this class become objects.
    pub object_class: Option<i64>,
}

impl Default for AnnotationParams {
    fn default() -> Self {
        AnnotationParams {
            threshold: DEFAULT_THRESHOLD,
            window: DEFAULT_WINDOW,
            kappas: COCO_KAPPAS,
            min_keypoint_area: 32.0 * 32.0,
            object_class: Some(1),
        }
    }
}

impl AnnotationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {} not in (0,1)", self.threshold)));
        }
        if self.window == 0 {
            return Err(Error::invalid("window must be at least 1"));
        }
        Ok(())
    }
}

/// Original and per-level responses of one task on one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseLadder {
    pub image_id: String,
    pub task: Task,
    pub image_width: usize,
    pub image_height: usize,
    pub original: Vec<TaskResponse>,
    /// Optional caller-supplied identities used to join objects across tasks.
    pub original_ids: Vec<Option<String>>,
    /// Exactly [`NUM_LEVELS`] entries, index = distortion level.
    pub distorted: Vec<Vec<TaskResponse>>,
}

impl ResponseLadder {
    pub fn validate(&self) -> Result<()> {
        if self.distorted.len() != NUM_LEVELS {
            return Err(Error::invalid(format!(
                "image {} task {}: expected {NUM_LEVELS} levels, got {}",
                self.image_id,
                self.task,
                self.distorted.len()
            )));
        }
        if self.original_ids.len() != self.original.len() {
            return Err(Error::invalid("original_ids length differs from original"));
        }
        let all = self.original.iter().chain(self.distorted.iter().flatten());
        if let Some(r) = all.into_iter().find(|r| r.task() != self.task) {
            return Err(Error::invalid(format!(
                "image {}: {} response in {} ladder",
                self.image_id,
                r.task(),
                self.task
            )));
        }
        Ok(())
    }
}

/// Labels one original object across all levels of its ladder.
pub fn label_sequence(
    ladder: &ResponseLadder,
    original: &TaskResponse,
    threshold: f64,
    kappas: &[f64; NUM_KEYPOINTS],
) -> Result<LabelSequence> {
    let mut labels = [false; NUM_LEVELS];
    for (q, cands) in ladder.distorted.iter().enumerate() {
        let (m, sim) = match_response(original, cands, kappas)?;
        labels[q] = match m {
            Some(r) => make_label(
                &QualityTriple {
                    class_id: r.class_id,
                    confidence: r.confidence,
                    similarity: sim,
                },
                original.class_id,
                threshold,
            ),
            None => false,
        };
    }
    Ok(LabelSequence {
        task: ladder.task,
        labels,
    })
}

/// JRD of one original object of a ladder; -1 means never recognizable.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectJrd {
    /// Index into `ladder.original`.
    pub index: usize,
    pub id: Option<String>,
    pub bbox: BoundingBox,
    pub jrd: i8,
}

/// Whether an original detection qualifies as an annotated object.
fn keep_original(resp: &TaskResponse, params: &AnnotationParams) -> bool {
    if params.object_class.is_some_and(|c| c != resp.class_id) {
        return false;
    }
    match resp.output() {
        TaskOutput::Keypoints(k) => k.labeled_count() > 0 && k.area() >= params.min_keypoint_area,
        TaskOutput::Mask(m) => m.area() > 0,
        TaskOutput::Box(_) => true,
    }
}

pub fn annotate_ladder(ladder: &ResponseLadder, params: &AnnotationParams) -> Result<Vec<ObjectJrd>> {
    params.validate()?;
    ladder.validate()?;
    let mut out = Vec::new();
    for (index, orig) in ladder.original.iter().enumerate() {
        if !keep_original(orig, params) {
            continue;
        }
        let Some(bbox) = orig.output().extent() else {
            continue;
        };
        let seq = label_sequence(ladder, orig, params.threshold, &params.kappas)?;
        out.push(ObjectJrd {
            index,
            id: ladder.original_ids[index].clone(),
            bbox,
            jrd: jrd_from_labels(&seq, params.window)?,
        });
    }
    Ok(out)
}

/// Minimum box IoU for joining objects of different tasks without ids.
pub const LINK_IOU: f64 = 0.5;

/// Joins per-task object JRDs of one image into annotations.
///
/// Objects carrying an id are joined on it. The rest are joined greedily
/// by box IoU (at least [`LINK_IOU`]) against objects seen earlier, visiting
/// tasks in OD, IS, KPD order; leftovers open new objects named `o<n>`.
pub fn link_objects(
    image_id: &str,
    image_width: usize,
    image_height: usize,
    per_task: &[(Task, Vec<ObjectJrd>)],
) -> Result<Vec<JrdAnnotation>> {
    struct Slot {
        id: String,
        bbox: BoundingBox,
        jrd: BTreeMap<Task, u8>,
        claimed: Vec<Task>,
    }
    let mut ordered: Vec<&(Task, Vec<ObjectJrd>)> = per_task.iter().collect();
    ordered.sort_by_key(|(t, _)| *t);
    let mut slots: Vec<Slot> = Vec::new();
    let mut next = 0usize;
    for (task, objects) in ordered {
        for obj in objects {
            let found = match &obj.id {
                Some(id) => slots.iter().position(|s| &s.id == id),
                None => {
                    let mut best: Option<(usize, f64)> = None;
                    for (i, s) in slots.iter().enumerate() {
                        if s.claimed.contains(task) {
                            continue;
                        }
                        let iou = box_iou(&s.bbox, &obj.bbox).value();
                        if iou >= LINK_IOU && best.is_none_or(|(_, b)| iou > b) {
                            best = Some((i, iou));
                        }
                    }
                    best.map(|(i, _)| i)
                }
            };
            let slot = match found {
                Some(i) => &mut slots[i],
                None => {
                    let id = match &obj.id {
                        Some(id) => id.clone(),
                        None => {
                            next += 1;
                            format!("o{next}")
                        }
                    };
                    slots.push(Slot {
                        id,
                        bbox: obj.bbox,
                        jrd: BTreeMap::new(),
                        claimed: Vec::new(),
                    });
                    slots.last_mut().unwrap()
                }
            };
            slot.claimed.push(*task);
            if obj.jrd >= 0 {
                slot.jrd.insert(*task, obj.jrd as u8);
            }
        }
    }
    slots
        .into_iter()
        .map(|s| {
            let bbox = clip_box(&s.bbox, image_width, image_height)?;
            Ok(JrdAnnotation {
                image_id: image_id.into(),
                object_id: s.id,
                attrs: attribute_triplet(&bbox, image_width, image_height)?,
                bbox,
                jrd: s.jrd,
            })
        })
        .collect()
}

fn clip_box(b: &BoundingBox, w: usize, h: usize) -> Result<BoundingBox> {
    let x0 = b.x.clamp(0.0, w as f64);
    let y0 = b.y.clamp(0.0, h as f64);
    let x1 = b.right().clamp(0.0, w as f64);
    let y1 = b.bottom().clamp(0.0, h as f64);
    BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
}

/// Annotates every task ladder of one image.
pub fn annotate_image(ladders: &[ResponseLadder], params: &AnnotationParams) -> Result<Vec<JrdAnnotation>> {
    let Some(first) = ladders.first() else {
        return Ok(Vec::new());
    };
    let mut per_task = Vec::with_capacity(ladders.len());
    for l in ladders {
        if l.image_id != first.image_id
            || l.image_width != first.image_width
            || l.image_height != first.image_height
        {
            return Err(Error::invalid(format!(
                "ladders of image {} disagree on identity or size",
                first.image_id
            )));
        }
        per_task.push((l.task, annotate_ladder(l, params)?));
    }
    link_objects(&first.image_id, first.image_width, first.image_height, &per_task)
}

/// Mean JRD per task at one threshold.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    pub threshold: f64,
    pub mean_jrd: [Option<f64>; 3],
}

/// Per-object JRDs of every ladder object at each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub thresholds: Vec<f64>,
    /// `(task, per-threshold jrd)` per object, thresholds in input order.
    pub objects: Vec<(Task, Vec<i8>)>,
}

impl ThresholdSweep {
    /// Task means over objects recognizable at the lowest threshold; an
    /// object that becomes unrecognizable later counts as 0.
    pub fn means(&self) -> Vec<SweepPoint> {
        let lowest = self
            .thresholds
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        self.thresholds
            .iter()
            .enumerate()
            .map(|(ti, &threshold)| {
                let mut mean_jrd = [None; 3];
                for task in Task::ALL {
                    let vals: Vec<f64> = self
                        .objects
                        .iter()
                        .filter(|(t, js)| *t == task && lowest.is_some_and(|l| js[l] >= 0))
                        .map(|(_, js)| js[ti].max(0) as f64)
                        .collect();
                    if !vals.is_empty() {
                        mean_jrd[task.index()] = Some(vals.iter().sum::<f64>() / vals.len() as f64);
                    }
                }
                SweepPoint { threshold, mean_jrd }
            })
            .collect()
    }
}

pub fn threshold_sweep(ladders: &[ResponseLadder], thresholds: &[f64], params: &AnnotationParams) -> Result<ThresholdSweep> {
    let mut objects = Vec::new();
    for ladder in ladders {
        ladder.validate()?;
        for orig in &ladder.original {
            if !keep_original(orig, params) {
                continue;
            }
            let mut js = Vec::with_capacity(thresholds.len());
            for &t in thresholds {
                let seq = label_sequence(ladder, orig, t, &params.kappas)?;
                js.push(jrd_from_labels(&seq, params.window)?);
            }
            objects.push((ladder.task, js));
        }
    }
    Ok(ThresholdSweep {
        thresholds: thresholds.to_vec(),
        objects,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskStats {
    pub task: Task,
    pub count: usize,
    pub mean: Option<f64>,
    /// 64 bins, one per JRD value.
    pub histogram: Vec<u64>,
    /// Mean JRD per size decile (ascending size); needs 10 objects.
    pub size_deciles: Option<[f64; 10]>,
    /// Mean JRD per cell of a 3x3 grid over `(x0, y0)`, row-major.
    pub location_grid: [[Option<f64>; 3]; 3],
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetStats {
    pub tasks: Vec<TaskStats>,
    pub threshold_sweep: Option<Vec<SweepPoint>>,
}

pub const DECILES: usize = 10;

pub fn dataset_stats(annotations: &[JrdAnnotation], sweep: Option<Vec<SweepPoint>>) -> DatasetStats {
    let tasks = Task::ALL
        .iter()
        .map(|&task| {
            let mut items: Vec<(f64, f64, f64, u8)> = annotations
                .iter()
                .filter_map(|a| a.jrd.get(&task).map(|&j| (a.attrs.s, a.attrs.x0, a.attrs.y0, j)))
                .collect();
            let count = items.len();
            let mut histogram = alloc::vec![0u64; NUM_LEVELS];
            for it in &items {
                histogram[it.3 as usize] += 1;
            }
            let mean = (count > 0).then(|| items.iter().map(|i| i.3 as f64).sum::<f64>() / count as f64);

            let mut grid_sum = [[0.0f64; 3]; 3];
            let mut grid_n = [[0usize; 3]; 3];
            for &(_, x0, y0, j) in &items {
                let cx = ((x0 * 3.0) as usize).min(2);
                let cy = ((y0 * 3.0) as usize).min(2);
                grid_sum[cy][cx] += j as f64;
                grid_n[cy][cx] += 1;
            }
            let mut location_grid = [[None; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    if grid_n[r][c] > 0 {
                        location_grid[r][c] = Some(grid_sum[r][c] / grid_n[r][c] as f64);
                    }
                }
            }

            let size_deciles = (count >= DECILES).then(|| {
                items.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut d = [0.0; DECILES];
                for (i, slot) in d.iter_mut().enumerate() {
                    let (lo, hi) = (i * count / DECILES, (i + 1) * count / DECILES);
                    *slot = items[lo..hi].iter().map(|x| x.3 as f64).sum::<f64>() / (hi - lo) as f64;
                }
                d
            });

            TaskStats {
                task,
                count,
                mean,
                histogram,
                size_deciles,
                location_grid,
            }
        })
        .collect();
    DatasetStats {
        tasks,
        threshold_sweep: sweep,
    }
}
