use alloc::format;

use serde::{Deserialize, Serialize};

use super::Logits;
use crate::math::{exp, ln};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    SoftmaxCrossEntropy,
    /// Weston-Watkins multiclass hinge loss.
    LinearSvmHinge,
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            HeadKind::LinearSvmHinge => "linear_svm_hinge",
        }
    }
}

/// Mean loss over the batch and its gradient with respect to the logits.
pub fn head_loss(kind: HeadKind, logits: &Logits, labels: &[usize]) -> Result<(f64, Logits)> {
    if labels.len() != logits.rows {
        return Err(Error::Shape(format!("{} labels for {} logit rows", labels.len(), logits.rows)));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= logits.cols) {
        return Err(Error::invalid(format!("label {l} out of range for {} classes", logits.cols)));
    }
    let b = logits.rows as f64;
    let mut grad = Logits::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let g = grad.row_mut(i);
        match kind {
            HeadKind::SoftmaxCrossEntropy => {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (gj, &s) in g.iter_mut().zip(row) {
                    *gj = exp(s - max);
                    z += *gj;
                }
                total += -(row[y] - max - ln(z));
                for gj in g.iter_mut() {
                    *gj /= z * b;
                }
                g[y] -= 1.0 / b;
            }
            HeadKind::LinearSvmHinge => {
                for (j, &s) in row.iter().enumerate() {
                    if j == y {
                        continue;
                    }
                    let margin = 1.0 + s - row[y];
                    if margin > 0.0 {
                        total += margin;
                        g[j] += 1.0 / b;
                        g[y] -= 1.0 / b;
                    }
                }
            }
        }
    }
    Ok((total / b, grad))
}
