//! Resolved pipeline configuration: command-line flags override the
//! optional JSON config file, which overrides the defaults.

use std::path::{Path, PathBuf};

use mtjrd_core::annotation::{AnnotationParams, DEFAULT_THRESHOLD, DEFAULT_WINDOW};
use mtjrd_core::predictor::{ModelConfig, PredictMode, TrainConfig, DEFAULT_SIGMA};
use mtjrd_core::vcm::QfCandidates;
use mtjrd_core::metrics::COCO_KAPPAS;
use mtjrd_core::{Task, NUM_KEYPOINTS};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::responses::read_json;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub responses: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    /// Directory of external reference reconstructions; `None` selects the
    /// internal stand-in.
    pub references: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub threshold: f64,
    pub window: usize,
    pub min_keypoint_area: f64,
    /// Class of annotated objects; `None` keeps every class.
    pub object_class: Option<i64>,
    #[serde(with = "kappas")]
    pub kappas: [f64; NUM_KEYPOINTS],
    pub sigma: f64,
    /// QF candidates of the search; `None` uses the per-task defaults.
    pub candidates: Option<Vec<u8>>,
    pub delta_qf: Vec<i32>,
    pub background_qf: u8,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub predict_mode: PredictMode,
    /// Source of every random choice; copied into the model and trainer.
    pub seed: u64,
}

mod kappas {
    use mtjrd_core::NUM_KEYPOINTS;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(k: &[f64; NUM_KEYPOINTS], s: S) -> Result<S::Ok, S::Error> {
        k.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; NUM_KEYPOINTS], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::custom(format!("expected {NUM_KEYPOINTS} kappas, got {}", v.len())))
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            threshold: DEFAULT_THRESHOLD,
            window: DEFAULT_WINDOW,
            min_keypoint_area: 32.0 * 32.0,
            object_class: Some(1),
            kappas: COCO_KAPPAS,
            sigma: DEFAULT_SIGMA,
            candidates: None,
            delta_qf: vec![0, 1, 2, 3, 4],
            background_qf: 30,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            predict_mode: PredictMode::Argmax,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Propagates the single seed and sigma into the nested configs.
    pub fn finish(mut self) -> Self {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.train.sigma = self.sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let v = |field: &str, msg: String| Err(Error::validation(field, msg));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return v("threshold", format!("{} not in (0,1)", self.threshold));
        }
        if self.window == 0 {
            return v("window", "must be at least 1".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return v("sigma", format!("{} must be positive", self.sigma));
        }
        if !(1..=100).contains(&self.background_qf) {
            return v("background_qf", format!("{} not in 1..=100", self.background_qf));
        }
        if self.delta_qf.is_empty() {
            return v("delta_qf", "needs at least one offset".into());
        }
        if let Some(c) = &self.candidates {
            QfCandidates::new(c.clone()).map_err(|e| Error::validation("candidates", e.to_string()))?;
        }
        if self.kappas.iter().any(|k| !(*k > 0.0)) {
            return v("kappas", "must be positive".into());
        }
        self.model.validate().map_err(|e| Error::validation("model", e.to_string()))?;
        if self.train.batch_size == 0 || !(self.train.lr >= 0.0) {
            return v("train", "batch_size must be positive and lr non-negative".into());
        }
        for (name, p) in [
            ("paths.responses", &self.paths.responses),
            ("paths.images", &self.paths.images),
            ("paths.annotations", &self.paths.annotations),
            ("paths.predictions", &self.paths.predictions),
            ("paths.references", &self.paths.references),
            ("paths.checkpoint", &self.paths.checkpoint),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return v(name, format!("{} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    pub fn annotation_params(&self) -> AnnotationParams {
        AnnotationParams {
            threshold: self.threshold,
            window: self.window,
            kappas: self.kappas,
            min_keypoint_area: self.min_keypoint_area,
            object_class: self.object_class,
        }
    }

    pub fn candidates_for(&self, task: Task) -> Result<QfCandidates> {
        match &self.candidates {
            Some(c) => Ok(QfCandidates::new(c.clone())?),
            None => Ok(QfCandidates::for_task(task)),
        }
    }

    /// The path stored under `field`, or a validation error naming it.
    pub fn require<'a>(&self, field: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        p.as_deref().ok_or_else(|| Error::validation(field, "required for this command"))
    }
}
