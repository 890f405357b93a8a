//! Multi-task JRD predictor: a shared attention trunk, one branch per task,
//! attribute fusion and 64-way classification heads trained with
//! Gaussian-smoothed labels.
//!
//! Everything runs in `f64` with hand-written backpropagation over a flat
//! parameter vector whose named groups are described by [`Layout`].

mod checkpoint;
mod data;
mod layout;
mod model;
mod train;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::types::{Task, NUM_LEVELS};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{prepare_input, toy_dataset, Sample, IMAGENET_MEAN, IMAGENET_STD};
pub use layout::{Group, Layout};
pub use model::{Gradients, Logits, Model};
pub use train::{grad_check, train, GradCheckReport, GRAD_CHECK_FLOOR, TrainConfig, TrainReport};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    /// Side of the square network input.
    pub input_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub attr_dim: usize,
    pub trunk_depth: usize,
    pub branch_depth: usize,
    /// Give the three branches identical initial weights.
    pub shared_init: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            patch_size: 16,
            embed_dim: 32,
            attr_dim: 32,
            trunk_depth: 2,
            branch_depth: 1,
            shared_init: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A configuration small enough to finite-difference every weight.
    pub fn tiny(seed: u64) -> Self {
        ModelConfig {
            input_size: 16,
            patch_size: 8,
            embed_dim: 8,
            attr_dim: 8,
            trunk_depth: 1,
            branch_depth: 1,
            shared_init: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_size, self.patch_size, self.embed_dim, self.attr_dim];
        if dims.contains(&0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if !self.input_size.is_multiple_of(self.patch_size) {
            return Err(Error::invalid(format!(
                "input size {} is not a multiple of patch size {}",
                self.input_size, self.patch_size
            )));
        }
        if self.branch_depth == 0 && self.trunk_depth == 0 {
            return Err(Error::invalid("model needs at least one attention block"));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        let g = self.input_size / self.patch_size;
        g * g
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn input_len(&self) -> usize {
        self.input_size * self.input_size * 3
    }
}

pub const DEFAULT_SIGMA: f64 = 3.0;

/// Gaussian-smoothed label distribution over the 64 levels.
pub fn gdsl_targets(jrd: u8, sigma: f64) -> Result<[f64; NUM_LEVELS]> {
    if jrd as usize >= NUM_LEVELS {
        return Err(Error::invalid(format!("jrd {jrd} not in 0..=63")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma {sigma} must be positive")));
    }
    let mut p = [0.0; NUM_LEVELS];
    let mut sum = 0.0;
    for (i, v) in p.iter_mut().enumerate() {
        let d = i as f64 - jrd as f64;
        *v = math::exp(-d * d / (2.0 * sigma * sigma));
        sum += *v;
    }
    p.iter_mut().for_each(|v| *v /= sum);
    Ok(p)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| math::exp(z - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of `softmax(logits)` against `target`.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + math::ln(logits.iter().map(|&z| math::exp(z - m)).sum::<f64>());
    target.iter().zip(logits).map(|(q, z)| q * (lse - z)).sum()
}

/// Sum over present tasks of the cross-entropy against GDSL targets.
pub fn loss(logits: &Logits, targets: &[Option<[f64; NUM_LEVELS]>; 3]) -> f64 {
    Task::ALL
        .iter()
        .filter_map(|t| targets[t.index()].as_ref().map(|q| cross_entropy(&logits[t.index()], q)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PredictMode {
    #[default]
    Argmax,
    /// Rounded mean of the softmax distribution.
    Expectation,
}

/// Decodes one logit vector; argmax ties go to the lowest level.
pub fn decode_logits(logits: &[f64], mode: PredictMode) -> u8 {
    match mode {
        PredictMode::Argmax => {
            let mut best = 0;
            for (i, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = i;
                }
            }
            best as u8
        }
        PredictMode::Expectation => {
            let p = softmax(logits);
            let e: f64 = p.iter().enumerate().map(|(i, v)| i as f64 * v).sum();
            math::round(e).clamp(0.0, (NUM_LEVELS - 1) as f64) as u8
        }
    }
}

pub fn predict(model: &Model, input: &[f64], attrs: [f64; 3], mode: PredictMode) -> Result<[u8; 3]> {
    let logits = model.forward(input, attrs)?;
    Ok([0, 1, 2].map(|t| decode_logits(&logits[t], mode)))
}

/// Error statistics of predicted against ground-truth JRDs.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictionErrorReport {
    /// Mean absolute error over all samples.
    pub e_a: f64,
    /// Mean absolute error over samples whose truth lies in `[27, 51]`;
    /// `None` when there are none.
    pub e_range: Option<f64>,
    /// Population standard deviation of the signed error.
    pub sigma_e: f64,
    pub count: usize,
}

pub const ERROR_RANGE: (u8, u8) = (27, 51);

pub fn error_metrics(predictions: &[u8], truth: &[u8]) -> Result<PredictionErrorReport> {
    if predictions.is_empty() || predictions.len() != truth.len() {
        return Err(Error::invalid("need equally many predictions and ground-truth values"));
    }
    let n = predictions.len() as f64;
    let err: Vec<f64> = predictions.iter().zip(truth).map(|(&p, &t)| p as f64 - t as f64).collect();
    let e_a = err.iter().map(|e| math::abs(*e)).sum::<f64>() / n;
    let in_range: Vec<f64> = err
        .iter()
        .zip(truth)
        .filter(|(_, &t)| (ERROR_RANGE.0..=ERROR_RANGE.1).contains(&t))
        .map(|(e, _)| math::abs(*e))
        .collect();
    let e_range = (!in_range.is_empty()).then(|| in_range.iter().sum::<f64>() / in_range.len() as f64);
    let mean = err.iter().sum::<f64>() / n;
    let sigma_e = math::sqrt(err.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n);
    Ok(PredictionErrorReport {
        e_a,
        e_range,
        sigma_e,
        count: predictions.len(),
    })
}
