use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gdsl_targets, Model, Sample, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::math;
use crate::types::NUM_LEVELS;

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; decays to zero on a cosine schedule.
    pub lr: f64,
    pub momentum: f64,
    pub sigma: f64,
    /// Seed of the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            lr: 0.01,
            momentum: 0.9,
            sigma: DEFAULT_SIGMA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample loss of every epoch.
    pub epoch_loss: Vec<f64>,
}

pub(crate) fn targets(sample: &Sample, sigma: f64) -> Result<[Option<[f64; NUM_LEVELS]>; 3]> {
    let mut t = [None; 3];
    for (slot, j) in t.iter_mut().zip(sample.jrd) {
        if let Some(j) = j {
            *slot = Some(gdsl_targets(j, sigma)?);
        }
    }
    Ok(t)
}

/// Mini-batch SGD with momentum and cosine learning-rate decay.
pub fn train(mut model: Model, data: &[Sample], cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 || !(cfg.lr >= 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::invalid("invalid optimizer settings"));
    }
    let all_targets = data.iter().map(|s| targets(s, cfg.sigma)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = alloc::vec![0.0; model.params().len()];
    let mut grad = alloc::vec![0.0; model.params().len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = (cfg.epochs * steps_per_epoch).max(1) as f64;
    let mut step = 0usize;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let s = &data[i];
                let l = model
                    .loss_and_grad(&s.input, s.attrs, &all_targets[i], &mut grad)
                    .map_err(|e| match e {
                        Error::Numeric { .. } => Error::Diverged { epoch },
                        e => e,
                    })?;
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                sum += l;
            }
            let lr = cfg.lr * 0.5 * (1.0 + math::cos(core::f64::consts::PI * step as f64 / total));
            let scale = 1.0 / batch.len() as f64;
            for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g * scale;
                *p -= lr * *v;
            }
            step += 1;
        }
        epoch_loss.push(sum / data.len() as f64);
    }
    if model.params().iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { epoch: cfg.epochs.saturating_sub(1) });
    }
    Ok((model, TrainReport { epoch_loss }))
}

/// Per-group comparison of analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(group, ||a - n|| / max(||a|| + ||n||, GRAD_CHECK_FLOOR), entries checked)`.
    pub groups: Vec<(String, f64, usize)>,
    pub max_relative_error: f64,
}

/// Lower bound of the relative-error denominator, so that groups whose
/// true gradient is zero (key biases, for instance) are judged by the
/// absolute difference instead of by rounding noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Finite-difference check with step `h`. At most `max_per_group`
/// evenly spaced entries of each group are perturbed (`None` for all).
pub fn grad_check(model: &Model, sample: &Sample, sigma: f64, h: f64, max_per_group: Option<usize>) -> Result<GradCheckReport> {
    let t = targets(sample, sigma)?;
    let mut analytic = alloc::vec![0.0; model.params().len()];
    model.loss_and_grad(&sample.input, sample.attrs, &t, &mut analytic)?;
    let mut probe = model.clone();
    let eval = |m: &Model| -> Result<f64> { Ok(super::loss(&m.forward(&sample.input, sample.attrs)?, &t)) };
    let mut groups = Vec::new();
    let mut worst = 0.0f64;
    for g in model.layout().groups() {
        let len = g.range.len();
        let count = max_per_group.map_or(len, |m| m.min(len)).max(1);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for j in 0..count {
            let idx = g.range.start + j * len / count;
            let orig = probe.params()[idx];
            probe.params_mut()[idx] = orig + h;
            let up = eval(&probe)?;
            probe.params_mut()[idx] = orig - h;
            let down = eval(&probe)?;
            probe.params_mut()[idx] = orig;
            let num = (up - down) / (2.0 * h);
            let a = analytic[idx];
            diff += (a - num) * (a - num);
            na += a * a;
            nn += num * num;
        }
        let denom = (math::sqrt(na) + math::sqrt(nn)).max(GRAD_CHECK_FLOOR);
        let rel = math::sqrt(diff) / denom;
        worst = worst.max(rel);
        groups.push((g.name.clone(), rel, count));
    }
    Ok(GradCheckReport { groups, max_relative_error: worst })
}
