use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::sqrt;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemCurvePoint {
    pub n: usize,
    pub sem: f64,
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::UndefinedStatistic { statistic: "mean", n: 0 });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Bessel-corrected variance, `Σ(x - x̄)² / (n - 1)`.
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::UndefinedStatistic { statistic: "sample variance", n });
    }
    let m = values.iter().sum::<f64>() / n as f64;
    Ok(values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64)
}

pub fn sample_std(values: &[f64]) -> Result<f64> {
    sample_variance(values).map(sqrt).map_err(|_| Error::UndefinedStatistic {
        statistic: "sample standard deviation",
        n: values.len(),
    })
}

/// Estimated standard error of the mean, `s / √n`.
pub fn sem(values: &[f64]) -> Result<f64> {
    let s = sample_std(values).map_err(|_| Error::UndefinedStatistic {
        statistic: "standard error of the mean",
        n: values.len(),
    })?;
    Ok(s / sqrt(values.len() as f64))
}

/// SEM of every prefix of length `2..=n`, in collection order.
pub fn sem_curve(values: &[f64]) -> Result<Vec<SemCurvePoint>> {
    if values.len() < 2 {
        return Err(Error::UndefinedStatistic { statistic: "standard error of the mean", n: values.len() });
    }
    (2..=values.len()).map(|m| Ok(SemCurvePoint { n: m, sem: sem(&values[..m])? })).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn textbook_std() {
        assert_eq!(sample_std(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(sample_std(&[0.7; 9]).unwrap() < 1e-15);
        assert_eq!(sample_std(&[0.5; 9]).unwrap(), 0.0);
    }

    #[test]
    fn single_value_is_undefined() {
        assert!(matches!(sample_std(&[0.9]), Err(Error::UndefinedStatistic { n: 1, .. })));
        assert!(matches!(sem(&[0.9]), Err(Error::UndefinedStatistic { n: 1, .. })));
        assert!(sem_curve(&[0.9]).is_err());
    }

    #[test]
    fn sem_of_small_sample() {
        assert!((sem(&[1.0, 2.0, 3.0]).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sem_from_exact_std() {
        // 100 values at ±a around 0.8 with Bessel std exactly 0.03
        let a = 0.03 * (99.0f64 / 100.0).sqrt();
        let v: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.8 + a } else { 0.8 - a }).collect();
        assert!((sem(&v).unwrap() - 0.003).abs() < 1e-12);
    }

    #[test]
    fn quadrupling_n_halves_sem() {
        let base = [0.1, 0.5, 0.3, 0.9];
        let quad: Vec<f64> = base.iter().cycle().take(16).copied().collect();
        // same spread, Bessel factor differs: s_16 = s_4 * sqrt((3/4) * (16/15))
        let s4 = sample_std(&base).unwrap();
        let s16 = sample_std(&quad).unwrap();
        let ratio = sem(&quad).unwrap() / sem(&base).unwrap();
        assert!((ratio - 0.5 * s16 / s4).abs() < 1e-14);
    }

    #[test]
    fn curve_shape() {
        let c = sem_curve(&[1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        assert_eq!(c.iter().map(|p| p.n).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        let flat = sem_curve(&[0.5; 6]).unwrap();
        assert!(flat.iter().all(|p| p.sem == 0.0));
    }
}
