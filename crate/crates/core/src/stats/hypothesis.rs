use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::descriptive::sample_variance;
use super::dist::{sf, Distribution};
use super::special::inverse_normal_cdf;
use crate::math::{exp, ln, sqrt};
use crate::{Error, Result};

/// Significance level matching a 0.95 confidence level.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub label: String,
    pub values: Vec<f64>,
}

impl SampleGroup {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self { label: label.into(), values }
    }
}

impl AsRef<[f64]> for SampleGroup {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    /// `NaN` when only the p-value is known; serialized as `null`.
    #[serde(with = "nan_as_null")]
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject_null: bool,
}

impl TestResult {
    pub fn new(test: &str, statistic: f64, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self { test: test.to_string(), statistic, p_value, alpha, reject_null: p_value < alpha }
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")))
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("sample contains non-finite values"))
    }
}

fn group_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_groups<G: AsRef<[f64]>>(groups: &[G], min_n: usize, test: &str) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::invalid(format!("{test} needs at least 2 groups")));
    }
    for g in groups {
        let g = g.as_ref();
        if g.len() < min_n {
            return Err(Error::invalid(format!("{test} needs n >= {min_n} in every group, got {}", g.len())));
        }
        check_finite(g)?;
    }
    Ok(())
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro-Wilk W test (Royston 1995, AS R94). Rejecting means "not normal".
pub fn shapiro_wilk(values: &[f64], alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    check_finite(values)?;
    let n = values.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::invalid(format!("Shapiro-Wilk needs 3 <= n <= 5000, got {n}")));
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range <= 0.0 {
        return Err(Error::DegenerateSample("all values identical".to_string()));
    }

    let half = n / 2;
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = core::f64::consts::FRAC_1_SQRT_2;
    } else {
        const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
        const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
        let an25 = n as f64 + 0.25;
        let m: Vec<f64> = (1..=half).map(|i| inverse_normal_cdf((i as f64 - 0.375) / an25)).collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = sqrt(summ2);
        let rsn = 1.0 / sqrt(n as f64);
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            a[1] = a2;
            let fac = sqrt(
                (summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2),
            );
            (2, fac)
        } else {
            (1, sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)))
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    // scale by the range for conditioning; W is scale invariant
    let xs: Vec<f64> = x.iter().map(|v| (v - x[0]) / range).collect();
    let mean = group_mean(&xs);
    let ss: f64 = xs.iter().map(|v| (v - mean) * (v - mean)).sum();
    let b: f64 = (0..half).map(|i| a[i] * (xs[n - 1 - i] - xs[i])).sum();
    let w = (b * b / ss).min(1.0);

    let p = if n == 3 {
        const PI6: f64 = 1.909_859_317_102_744; // 6/π
        const STQR: f64 = core::f64::consts::FRAC_PI_3;
        (PI6 * (libm::asin(sqrt(w)) - STQR)).max(0.0)
    } else {
        let w1 = ln(1.0 - w);
        let nf = n as f64;
        if n <= 11 {
            let gamma = poly(&[-2.273, 0.459], nf);
            if w1 >= gamma {
                1e-99
            } else {
                let y = -ln(gamma - w1);
                let m = poly(&[0.5440, -0.39978, 0.025054, -6.714e-4], nf);
                let s = exp(poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf));
                sf(Distribution::Normal, (y - m) / s)?
            }
        } else {
            let xx = ln(nf);
            let m = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], xx);
            let s = exp(poly(&[-0.4803, -0.082676, 0.0030302], xx));
            sf(Distribution::Normal, (w1 - m) / s)?
        }
    };
    Ok(TestResult::new("shapiro_wilk", w, p, alpha))
}

/// Mean-centered Levene test for equal variances. Rejecting means heteroscedastic.
pub fn levene<G: AsRef<[f64]>>(groups: &[G], alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    check_groups(groups, 2, "Levene")?;
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let g = g.as_ref();
            let m = group_mean(g);
            g.iter().map(|v| (v - m).abs()).collect()
        })
        .collect();
    let k = z.len() as f64;
    let total: usize = z.iter().map(Vec::len).sum();
    let nt = total as f64;
    let means: Vec<f64> = z.iter().map(|g| group_mean(g)).collect();
    let grand = z.iter().flatten().sum::<f64>() / nt;
    let between: f64 = z.iter().zip(&means).map(|(g, m)| g.len() as f64 * (m - grand) * (m - grand)).sum();
    let within: f64 = z.iter().zip(&means).map(|(g, m)| g.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sum();
    if within == 0.0 {
        return Err(Error::DegenerateSample(
            "absolute deviations are constant within every group".to_string(),
        ));
    }
    let w = (nt - k) / (k - 1.0) * between / within;
    let p = sf(Distribution::F { d1: k - 1.0, d2: nt - k }, w)?;
    Ok(TestResult::new("levene", w, p, alpha))
}

/// Classic one-way ANOVA F test.
pub fn anova_oneway<G: AsRef<[f64]>>(groups: &[G], alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    check_groups(groups, 2, "ANOVA")?;
    let k = groups.len() as f64;
    let nt: f64 = groups.iter().map(|g| g.as_ref().len() as f64).sum();
    let grand = groups.iter().flat_map(|g| g.as_ref().iter()).sum::<f64>() / nt;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in groups {
        let g = g.as_ref();
        let m = group_mean(g);
        between += g.len() as f64 * (m - grand) * (m - grand);
        within += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    if within == 0.0 {
        return Err(Error::DegenerateSample("zero within-group variance in every group".to_string()));
    }
    let f = (between / (k - 1.0)) / (within / (nt - k));
    let p = sf(Distribution::F { d1: k - 1.0, d2: nt - k }, f)?;
    Ok(TestResult::new("anova_oneway", f, p, alpha))
}

/// Welch's heteroscedastic one-way ANOVA, used when Levene rejects.
pub fn welch_anova<G: AsRef<[f64]>>(groups: &[G], alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    check_groups(groups, 2, "Welch ANOVA")?;
    let k = groups.len() as f64;
    let mut w = Vec::with_capacity(groups.len());
    let mut m = Vec::with_capacity(groups.len());
    let mut n = Vec::with_capacity(groups.len());
    for g in groups {
        let g = g.as_ref();
        let var = sample_variance(g)?;
        if var == 0.0 {
            return Err(Error::DegenerateSample("Welch ANOVA needs non-zero variance in every group".to_string()));
        }
        n.push(g.len() as f64);
        m.push(group_mean(g));
        w.push(g.len() as f64 / var);
    }
    let sw: f64 = w.iter().sum();
    let mw = w.iter().zip(&m).map(|(wi, mi)| wi * mi).sum::<f64>() / sw;
    let num = w.iter().zip(&m).map(|(wi, mi)| wi * (mi - mw) * (mi - mw)).sum::<f64>() / (k - 1.0);
    let lambda: f64 = w.iter().zip(&n).map(|(wi, ni)| (1.0 - wi / sw) * (1.0 - wi / sw) / (ni - 1.0)).sum();
    let den = 1.0 + 2.0 * (k - 2.0) / (k * k - 1.0) * lambda;
    let f = num / den;
    let df2 = (k * k - 1.0) / (3.0 * lambda);
    let p = sf(Distribution::F { d1: k - 1.0, d2: df2 }, f)?;
    Ok(TestResult::new("welch_anova", f, p, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    #[default]
    Pooled,
    Welch,
}

/// One-tailed two-sample t test of `mean(a) > mean(b)`.
pub fn t_test_one_tailed(a: &[f64], b: &[f64], kind: TTestKind, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    check_groups(&[a, b], 2, "t-test")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a)?, sample_variance(b)?);
    let diff = group_mean(a) - group_mean(b);
    let (t, df, name) = match kind {
        TTestKind::Pooled => {
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            if sp2 == 0.0 {
                return Err(Error::DegenerateSample("zero pooled variance".to_string()));
            }
            (diff / sqrt(sp2 * (1.0 / na + 1.0 / nb)), na + nb - 2.0, "t_test_pooled")
        }
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            if qa + qb == 0.0 {
                return Err(Error::DegenerateSample("zero variance in both samples".to_string()));
            }
            let df = (qa + qb) * (qa + qb) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
            (diff / sqrt(qa + qb), df, "t_test_welch")
        }
    };
    let p = sf(Distribution::StudentT { df }, t)?;
    Ok(TestResult::new(name, t, p, alpha))
}

/// Average ranks (1-based) of the pooled sample, plus `Σ(t³ - t)` over tie blocks.
fn rank_pooled(pooled: &[f64]) -> (Vec<f64>, f64) {
    let n = pooled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; n];
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

/// One-tailed Mann-Whitney U test of `a` stochastically greater than `b`.
/// The statistic is `U_a`; the p-value uses the tie- and continuity-corrected
/// normal approximation.
pub fn mann_whitney_one_tailed(a: &[f64], b: &[f64], alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    check_groups(&[a, b], 2, "Mann-Whitney")?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = rank_pooled(&pooled);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let nt = na + nb;
    let ra: f64 = ranks[..a.len()].iter().sum();
    let u = ra - na * (na + 1.0) / 2.0;
    let var = na * nb / 12.0 * ((nt + 1.0) - ties / (nt * (nt - 1.0)));
    if var <= 0.0 {
        return Err(Error::DegenerateSample("all values identical".to_string()));
    }
    let z = (u - na * nb / 2.0 - 0.5) / sqrt(var);
    let p = sf(Distribution::Normal, z)?;
    Ok(TestResult::new("mann_whitney", u, p, alpha))
}

/// Kruskal-Wallis H test with tie correction.
pub fn kruskal_wallis<G: AsRef<[f64]>>(groups: &[G], alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    check_groups(groups, 1, "Kruskal-Wallis")?;
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.as_ref().iter().copied()).collect();
    let (ranks, ties) = rank_pooled(&pooled);
    let nt = pooled.len() as f64;
    let correction = 1.0 - ties / (nt * nt * nt - nt);
    if correction <= 0.0 {
        return Err(Error::DegenerateSample("all values identical".to_string()));
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let len = g.as_ref().len();
        let r: f64 = ranks[offset..offset + len].iter().sum();
        sum += r * r / len as f64;
        offset += len;
    }
    let h = (12.0 / (nt * (nt + 1.0)) * sum - 3.0 * (nt + 1.0)) / correction;
    let p = sf(Distribution::ChiSquared { df: groups.len() as f64 - 1.0 }, h)?;
    Ok(TestResult::new("kruskal_wallis", h, p, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reject_matches_alpha() {
        let r = TestResult::new("x", 1.0, 0.049, 0.05);
        assert!(r.reject_null);
        let r = TestResult::new("x", 1.0, 0.05, 0.05);
        assert!(!r.reject_null);
        assert_eq!(TestResult::new("x", 1.0, 1.0 + 1e-15, 0.05).p_value, 1.0);
    }

    #[test]
    fn shapiro_rejects_bad_sizes_and_constants() {
        assert!(shapiro_wilk(&[1.0, 2.0], DEFAULT_ALPHA).is_err());
        assert!(matches!(shapiro_wilk(&[0.8; 10], DEFAULT_ALPHA), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn levene_shifted_copies() {
        let a = [1.0, 2.0, 4.0, 8.0];
        let b = [11.0, 12.0, 14.0, 18.0];
        let r = levene(&[&a[..], &b[..]], DEFAULT_ALPHA).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(levene(&[&a[..], &[1.0][..]], DEFAULT_ALPHA).is_err());
    }

    #[test]
    fn levene_hand_computed_three_groups() {
        // Absolute deviations from group means, worked by hand:
        //   g1 = {1,2,4}, mean 7/3    -> z = {4/3, 1/3, 5/3},      z̄ = 10/9
        //   g2 = {2,5,9,10}, mean 6.5 -> z = {4.5, 1.5, 2.5, 3.5}, z̄ = 3
        //   g3 = {3,3.5,6}, mean 25/6 -> z = {7/6, 2/3, 11/6},     z̄ = 11/9
        let z: [&[f64]; 3] = [&[4.0 / 3.0, 1.0 / 3.0, 5.0 / 3.0], &[4.5, 1.5, 2.5, 3.5], &[7.0 / 6.0, 2.0 / 3.0, 11.0 / 6.0]];
        let zbar = [10.0 / 9.0, 3.0, 11.0 / 9.0];
        let grand = z.iter().flat_map(|g| g.iter()).sum::<f64>() / 10.0;
        let between: f64 = z.iter().zip(zbar).map(|(g, m)| g.len() as f64 * (m - grand) * (m - grand)).sum();
        let within: f64 = z.iter().zip(zbar).map(|(g, m)| g.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sum();
        let expected = (10.0 - 3.0) / 2.0 * between / within;
        let r = levene(&[&[1.0, 2.0, 4.0][..], &[2.0, 5.0, 9.0, 10.0], &[3.0, 3.5, 6.0]], DEFAULT_ALPHA).unwrap();
        assert!((r.statistic - expected).abs() < 1e-6);
        // scipy.stats.levene(..., center='mean')
        assert!((r.statistic - 4.256_545_961_002_787).abs() < 1e-6);
        assert!((r.p_value - 0.061_716_154_764_232_985).abs() < 1e-6);
    }

    #[test]
    fn anova_hand_fixture() {
        // means 2, 3, 11; grand 16/3; SSB = 146, SSW = 6 -> F = (146/2)/(6/6) = 73
        let r = anova_oneway(&[&[1.0, 2.0, 3.0][..], &[2.0, 3.0, 4.0], &[10.0, 11.0, 12.0]], DEFAULT_ALPHA).unwrap();
        assert!((r.statistic - 73.0).abs() < 1e-9);
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn anova_identical_groups() {
        let g = [0.8, 0.85, 0.9];
        let r = anova_oneway(&[&g[..], &g[..]], DEFAULT_ALPHA).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(anova_oneway(&[&[1.0, 1.0][..], &[2.0, 2.0]], DEFAULT_ALPHA).is_err());
    }

    #[test]
    fn t_test_symmetry_and_shift() {
        let a = [0.8, 0.82, 0.84];
        let b = [0.84, 0.82, 0.8];
        let r = t_test_one_tailed(&a, &b, TTestKind::Pooled, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.5);
        let shifted: Vec<f64> = b.iter().map(|v| v + 10.0).collect();
        let r = t_test_one_tailed(&shifted, &b, TTestKind::Pooled, DEFAULT_ALPHA).unwrap();
        assert!(r.p_value < 0.001);
        assert!(t_test_one_tailed(&[1.0, 1.0], &[2.0, 2.0], TTestKind::Pooled, DEFAULT_ALPHA).is_err());
    }

    #[test]
    fn mann_whitney_complete_separation() {
        let r = mann_whitney_one_tailed(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], DEFAULT_ALPHA).unwrap();
        assert_eq!(r.statistic, 0.0);
        // identical samples: only the continuity correction moves p off 0.5
        let a: Vec<f64> = (0..20).map(f64::from).collect();
        let b: Vec<f64> = a.iter().rev().copied().collect();
        let m = mann_whitney_one_tailed(&a, &b, DEFAULT_ALPHA).unwrap();
        assert_eq!(m.statistic, 200.0);
        assert!((m.p_value - 0.5).abs() < 0.02, "{}", m.p_value);
        assert!(mann_whitney_one_tailed(&[1.0, 1.0], &[1.0, 1.0], DEFAULT_ALPHA).is_err());
        assert!(kruskal_wallis(&[&[1.0, 1.0][..], &[1.0, 1.0]], DEFAULT_ALPHA).is_err());
    }
}
