use alloc::format;

use serde::{Deserialize, Serialize};

use super::special::{regularized_beta, regularized_gamma_p, regularized_gamma_q};
use crate::math::erfc;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Distribution {
    Normal,
    StudentT { df: f64 },
    F { d1: f64, d2: f64 },
    ChiSquared { df: f64 },
}

impl Distribution {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let valid = match *self {
            Distribution::Normal => true,
            Distribution::StudentT { df } | Distribution::ChiSquared { df } => ok(df),
            Distribution::F { d1, d2 } => ok(d1) && ok(d2),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid distribution parameters: {self:?}")))
        }
    }
}

/// `P(X <= x)`.
pub fn cdf(dist: Distribution, x: f64) -> Result<f64> {
    dist.validate()?;
    if x.is_nan() {
        return Err(Error::invalid("cdf abscissa is NaN"));
    }
    Ok(match dist {
        Distribution::Normal => 0.5 * erfc(-x / core::f64::consts::SQRT_2),
        Distribution::StudentT { df } => t_cdf(df, x),
        Distribution::F { d1, d2 } => {
            if x <= 0.0 {
                0.0
            } else if x.is_infinite() {
                1.0
            } else {
                regularized_beta(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))
            }
        }
        Distribution::ChiSquared { df } => {
            if x <= 0.0 {
                0.0
            } else {
                regularized_gamma_p(df / 2.0, x / 2.0)
            }
        }
    })
}

/// Survival function `P(X > x)`, evaluated without `1 - cdf` cancellation.
pub fn sf(dist: Distribution, x: f64) -> Result<f64> {
    dist.validate()?;
    if x.is_nan() {
        return Err(Error::invalid("sf abscissa is NaN"));
    }
    Ok(match dist {
        Distribution::Normal => 0.5 * erfc(x / core::f64::consts::SQRT_2),
        Distribution::StudentT { df } => t_cdf(df, -x),
        Distribution::F { d1, d2 } => {
            if x <= 0.0 {
                1.0
            } else if x.is_infinite() {
                0.0
            } else {
                regularized_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))
            }
        }
        Distribution::ChiSquared { df } => {
            if x <= 0.0 {
                1.0
            } else {
                regularized_gamma_q(df / 2.0, x / 2.0)
            }
        }
    })
}

fn t_cdf(df: f64, x: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    // tail = P(T > |x|)
    let tail = if x * x < df {
        // complement form is better conditioned near zero
        0.5 - 0.5 * regularized_beta(0.5, df / 2.0, x * x / (df + x * x))
    } else {
        0.5 * regularized_beta(df / 2.0, 0.5, df / (df + x * x))
    };
    if x >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}
