//! Learning-rate schedules and the exponential learning-rate finder.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{abs, floor, pow};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    #[default]
    Constant,
    /// `base_lr * gamma^floor(epoch / every)`.
    StepDecay { gamma: f64, every: usize },
    /// Triangular wave between `lr_base` and `lr_max`; `step_size` is the half period in steps.
    CyclicTriangular { lr_base: f64, lr_max: f64, step_size: usize },
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScheduleSpec::Constant => Ok(()),
            ScheduleSpec::StepDecay { gamma, every } => {
                if gamma > 0.0 && gamma < 1.0 && every >= 1 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("step decay needs 0 < gamma < 1 and every >= 1, got {self:?}")))
                }
            }
            ScheduleSpec::CyclicTriangular { lr_base, lr_max, step_size } => {
                if lr_base > 0.0 && lr_base < lr_max && step_size >= 1 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("cyclic schedule needs 0 < lr_base < lr_max, step_size >= 1, got {self:?}")))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleSpec::Constant => "constant",
            ScheduleSpec::StepDecay { .. } => "step_decay",
            ScheduleSpec::CyclicTriangular { .. } => "cyclic_triangular",
        }
    }
}

/// Learning rate for `epoch` (0-based) at global optimizer `step` (0-based).
pub fn lr_at(schedule: &ScheduleSpec, base_lr: f64, epoch: usize, step: usize) -> f64 {
    match *schedule {
        ScheduleSpec::Constant => base_lr,
        ScheduleSpec::StepDecay { gamma, every } => base_lr * pow(gamma, (epoch / every) as f64),
        ScheduleSpec::CyclicTriangular { lr_base, lr_max, step_size } => {
            let s = step_size as f64;
            let cycle = floor(1.0 + step as f64 / (2.0 * s));
            let x = abs(step as f64 / s - 2.0 * cycle + 1.0);
            lr_base + (lr_max - lr_base) * (1.0 - x).max(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrPoint {
    pub lr: f64,
    pub loss: f64,
    /// Bias-corrected exponential moving average of the loss.
    pub smoothed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrFinderConfig {
    pub lr_min: f64,
    pub lr_max: f64,
    pub n_steps: usize,
    pub smoothing: f64,
    pub divergence_factor: f64,
}

impl LrFinderConfig {
    pub fn new(lr_min: f64, lr_max: f64, n_steps: usize) -> Self {
        Self { lr_min, lr_max, n_steps, smoothing: 0.98, divergence_factor: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrFinderResult {
    pub suggested_lr: f64,
    pub best_index: usize,
    pub curve: Vec<LrPoint>,
}

/// Exponential learning-rate sweep.
///
/// `step` is called once per point with `(index, lr)`; it must take one
/// optimizer step at `lr` and return the mini-batch loss measured before
/// the step. The sweep stops early once the smoothed loss exceeds
/// `divergence_factor` times its best value (or turns non-finite). The
/// suggestion is the learning rate at the smoothed minimum divided by ten.
pub fn lr_finder<F>(config: &LrFinderConfig, mut step: F) -> Result<LrFinderResult>
where
    F: FnMut(usize, f64) -> Result<f64>,
{
    let LrFinderConfig { lr_min, lr_max, n_steps, smoothing, divergence_factor } = *config;
    if !(lr_min > 0.0 && lr_min < lr_max) {
        return Err(Error::invalid(format!("lr finder needs 0 < lr_min < lr_max, got {lr_min} and {lr_max}")));
    }
    if n_steps < 10 {
        return Err(Error::invalid("lr finder needs at least 10 steps"));
    }
    let ratio = lr_max / lr_min;
    let mut curve = Vec::with_capacity(n_steps);
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    let mut best_index = 0;
    let mut diverged = false;
    for i in 0..n_steps {
        let lr = lr_min * pow(ratio, i as f64 / (n_steps - 1) as f64);
        let loss = step(i, lr)?;
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        avg = smoothing * avg + (1.0 - smoothing) * loss;
        let smoothed = avg / (1.0 - pow(smoothing, (i + 1) as f64));
        curve.push(LrPoint { lr, loss, smoothed });
        if i > 0 && smoothed > divergence_factor * best {
            diverged = true;
            break;
        }
        if smoothed < best {
            best = smoothed;
            best_index = i;
        }
    }
    if diverged && (curve.len() < 2 || best_index == 0) {
        return Err(Error::LrFinderDiverged { curve });
    }
    Ok(LrFinderResult { suggested_lr: curve[best_index].lr / 10.0, best_index, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_decay() {
        assert_eq!(lr_at(&ScheduleSpec::Constant, 0.01, 77, 1234), 0.01);
        let decay = ScheduleSpec::StepDecay { gamma: 0.5, every: 10 };
        assert_eq!(lr_at(&decay, 1.0, 25, 0), 0.25);
        assert_eq!(lr_at(&decay, 1.0, 9, 0), 1.0);
    }

    #[test]
    fn triangle_peaks() {
        let s = ScheduleSpec::CyclicTriangular { lr_base: 0.001, lr_max: 0.01, step_size: 50 };
        assert_eq!(lr_at(&s, 0.0, 0, 0), 0.001);
        assert!((lr_at(&s, 0.0, 0, 50) - 0.01).abs() < 1e-15);
        assert!((lr_at(&s, 0.0, 0, 100) - 0.001).abs() < 1e-15);
        assert!((lr_at(&s, 0.0, 0, 25) - 0.0055).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        assert!(ScheduleSpec::StepDecay { gamma: 1.5, every: 3 }.validate().is_err());
        assert!(ScheduleSpec::CyclicTriangular { lr_base: 0.1, lr_max: 0.01, step_size: 3 }.validate().is_err());
    }

    #[test]
    fn monotone_loss_suggests_last_point() {
        let cfg = LrFinderConfig::new(1e-4, 1.0, 20);
        let r = lr_finder(&cfg, |i, _| Ok(10.0 - i as f64 * 0.1)).unwrap();
        assert_eq!(r.best_index, 19);
        assert!((r.suggested_lr - r.curve[19].lr / 10.0).abs() < 1e-18);
        assert!((r.curve[19].lr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_bounds() {
        let cfg = LrFinderConfig::new(0.1, 0.1, 20);
        assert!(lr_finder(&cfg, |_, _| Ok(1.0)).is_err());
        assert!(lr_finder(&LrFinderConfig::new(0.1, 1.0, 5), |_, _| Ok(1.0)).is_err());
    }

    #[test]
    fn immediate_divergence_keeps_curve() {
        let cfg = LrFinderConfig::new(0.1, 10.0, 20);
        let err = lr_finder(&cfg, |i, _| Ok(if i == 0 { 1.0 } else { 1e6 })).unwrap_err();
        match err {
            Error::LrFinderDiverged { curve } => assert_eq!(curve.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
