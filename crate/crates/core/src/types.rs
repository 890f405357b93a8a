//! Domain types shared by every module.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Number of distortion levels in a JRD ladder (QP 0..=63).
pub const NUM_LEVELS: usize = 64;

/// COCO person skeleton size.
pub const NUM_KEYPOINTS: usize = 17;

/// Side of the square frame the attribute triplet is normalized to.
pub const ATTRIBUTE_FRAME: f64 = 224.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Task {
    /// Object detection, compared by box IoU.
    #[cfg_attr(feature = "serde", serde(alias = "OD"))]
    Od,
    /// Instance segmentation, compared by mask IoU.
    #[cfg_attr(feature = "serde", serde(alias = "IS"))]
    Is,
    /// Keypoint detection, compared by OKS.
    #[cfg_attr(feature = "serde", serde(alias = "KPD"))]
    Kpd,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Od, Task::Is, Task::Kpd];

    pub fn index(self) -> usize {
        match self {
            Task::Od => 0,
            Task::Is => 1,
            Task::Kpd => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Od => "od",
            Task::Is => "is",
            Task::Kpd => "kpd",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "od" | "OD" => Some(Task::Od),
            "is" | "IS" => Some(Task::Is),
            "kpd" | "KPD" => Some(Task::Kpd),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 8-bit image, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl ImagePlane {
    pub const MIN_SIDE: usize = 8;

    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("channels must be 1 or 3, got {channels}")));
        }
        if width < Self::MIN_SIDE || height < Self::MIN_SIDE {
            return Err(Error::invalid(format!(
                "image must be at least 8x8, got {width}x{height}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                samples.len()
            )));
        }
        Ok(ImagePlane {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, alloc::vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.samples[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &ImagePlane) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Copies the pixel rectangle `[x0, x1) x [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<ImagePlane> {
        if x1 > self.width || y1 > self.height || x0 >= x1 || y0 >= y1 {
            return Err(Error::invalid(format!(
                "crop [{x0},{x1})x[{y0},{y1}) outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0) * c);
        for y in y0..y1 {
            let row = (y * self.width + x0) * c;
            out.extend_from_slice(&self.samples[row..row + (x1 - x0) * c]);
        }
        ImagePlane::new(x1 - x0, y1 - y0, c, out)
    }

    /// Writes `patch` with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, patch: &ImagePlane, x0: usize, y0: usize) -> Result<()> {
        if patch.channels != self.channels
            || x0 + patch.width > self.width
            || y0 + patch.height > self.height
        {
            return Err(Error::invalid("paste region outside destination"));
        }
        let c = self.channels;
        for y in 0..patch.height {
            let dst = ((y0 + y) * self.width + x0) * c;
            let src = y * patch.width * c;
            self.samples[dst..dst + patch.width * c]
                .copy_from_slice(&patch.samples[src..src + patch.width * c]);
        }
        Ok(())
    }
}

/// Axis-aligned box in pixels, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite();
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!("degenerate box {:?}", self)));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        const EPS: f64 = 1e-6;
        self.x >= -EPS
            && self.y >= -EPS
            && self.right() <= width as f64 + EPS
            && self.bottom() <= height as f64 + EPS
    }

    /// Integer pixel rectangle `[x0, x1) x [y0, y1)` covered by the box,
    /// clipped to the image. Never empty for a valid in-bounds box.
    pub fn pixel_rect(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let clampi = |v: f64, hi: usize| -> usize {
            if v <= 0.0 {
                0
            } else if v >= hi as f64 {
                hi
            } else {
                v as usize
            }
        };
        let x0 = clampi(crate::math::floor(self.x), width.saturating_sub(1));
        let y0 = clampi(crate::math::floor(self.y), height.saturating_sub(1));
        let x1 = clampi(crate::math::ceil(self.right()), width).max(x0 + 1);
        let y1 = clampi(crate::math::ceil(self.bottom()), height).max(y0 + 1);
        (x0, y0, x1, y1)
    }
}

/// Binary mask, one bit per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask has {} bits, expected {width}x{height}",
                bits.len()
            )));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: alloc::vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box of the set pixels, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX).then(|| BoundingBox {
            x: x0 as f64,
            y: y0 as f64,
            w: (x1 - x0) as f64,
            h: (y1 - y0) as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// 0 = unlabeled, 1 = labeled but invisible, 2 = labeled and visible.
    pub v: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    points: [Keypoint; NUM_KEYPOINTS],
    area: f64,
}

impl KeypointSet {
    pub fn new(points: [Keypoint; NUM_KEYPOINTS], area: f64) -> Result<Self> {
        if !(area > 0.0) || !area.is_finite() {
            return Err(Error::invalid(format!("keypoint area must be positive, got {area}")));
        }
        if let Some(p) = points.iter().find(|p| p.v > 2) {
            return Err(Error::invalid(format!("keypoint visibility {} not in 0..=2", p.v)));
        }
        Ok(KeypointSet { points, area })
    }

    pub fn from_slice(points: &[Keypoint], area: f64) -> Result<Self> {
        let arr: [Keypoint; NUM_KEYPOINTS] = points.try_into().map_err(|_| {
            Error::invalid(format!("expected {NUM_KEYPOINTS} keypoints, got {}", points.len()))
        })?;
        Self::new(arr, area)
    }

    pub fn points(&self) -> &[Keypoint; NUM_KEYPOINTS] {
        &self.points
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn labeled_count(&self) -> usize {
        self.points.iter().filter(|p| p.v > 0).count()
    }

    /// Extent of the labeled keypoints.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut it = self.points.iter().filter(|p| p.v > 0);
        let first = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in it {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Some(BoundingBox {
            x: x0,
            y: y0,
            w: (x1 - x0).max(1.0),
            h: (y1 - y0).max(1.0),
        })
    }
}

// Keypoint sets dominate the size; responses are few and short-lived.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutput {
    Box(BoundingBox),
    Mask(Mask),
    Keypoints(KeypointSet),
}

impl TaskOutput {
    pub fn task(&self) -> Task {
        match self {
            TaskOutput::Box(_) => Task::Od,
            TaskOutput::Mask(_) => Task::Is,
            TaskOutput::Keypoints(_) => Task::Kpd,
        }
    }

    /// A box describing where the output lies in the image.
    pub fn extent(&self) -> Option<BoundingBox> {
        match self {
            TaskOutput::Box(b) => Some(*b),
            TaskOutput::Mask(m) => m.bounding_box(),
            TaskOutput::Keypoints(k) => k.bounding_box(),
        }
    }
}

/// One machine-vision result for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskResponse {
    task: Task,
    pub class_id: i64,
    pub confidence: f64,
    output: TaskOutput,
}

impl TaskResponse {
    pub fn new(task: Task, class_id: i64, confidence: f64, output: TaskOutput) -> Result<Self> {
        if output.task() != task {
            return Err(Error::invalid(format!(
                "{task} response carries a {} output",
                output.task()
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} not in [0,1]")));
        }
        Ok(TaskResponse {
            task,
            class_id,
            confidence,
            output,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn output(&self) -> &TaskOutput {
        &self.output
    }
}

/// Normalized object size and center, `(s, x0, y0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttributeTriplet {
    pub s: f64,
    pub x0: f64,
    pub y0: f64,
}

impl AttributeTriplet {
    pub fn new(s: f64, x0: f64, y0: f64) -> Result<Self> {
        if !(s > 0.0) || !(0.0..=1.0).contains(&x0) || !(0.0..=1.0).contains(&y0) {
            return Err(Error::invalid(format!("attribute triplet ({s}, {x0}, {y0}) out of range")));
        }
        Ok(AttributeTriplet { s, x0, y0 })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s, self.x0, self.y0]
    }
}

/// Maps a box into the 224x224 frame (anisotropic rescale) and returns
/// `s = w'h'/224^2` with the center expressed in `[0, 1]`.
pub fn attribute_triplet(bbox: &BoundingBox, image_w: usize, image_h: usize) -> Result<AttributeTriplet> {
    if image_w == 0 || image_h == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    bbox.validate()?;
    if !bbox.fits_within(image_w, image_h) {
        return Err(Error::invalid(format!(
            "box {:?} outside {image_w}x{image_h} image",
            bbox
        )));
    }
    let sx = ATTRIBUTE_FRAME / image_w as f64;
    let sy = ATTRIBUTE_FRAME / image_h as f64;
    let w = bbox.w * sx;
    let h = bbox.h * sy;
    let cx = (bbox.x + bbox.w / 2.0) * sx;
    let cy = (bbox.y + bbox.h / 2.0) * sy;
    let s = w * h / (ATTRIBUTE_FRAME * ATTRIBUTE_FRAME);
    let x0 = (cx / ATTRIBUTE_FRAME).clamp(0.0, 1.0);
    let y0 = (cy / ATTRIBUTE_FRAME).clamp(0.0, 1.0);
    AttributeTriplet::new(s, x0, y0)
}

/// Per-object ground truth: box, attributes and JRD per task.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JrdAnnotation {
    pub image_id: String,
    pub object_id: String,
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: BoundingBox,
    pub attrs: AttributeTriplet,
    pub jrd: BTreeMap<Task, u8>,
}

impl JrdAnnotation {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if let Some((t, j)) = self.jrd.iter().find(|(_, &j)| j as usize >= NUM_LEVELS) {
            return Err(Error::invalid(format!("jrd {j} for {t} exceeds 63")));
        }
        Ok(())
    }
}
