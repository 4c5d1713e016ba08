//! Monte-Carlo properties of the statistics module.

use cvharness_core::rng::{derive_rng, RngStream};
use cvharness_core::stats::{
    anova_oneway, kruskal_wallis, levene, mann_whitney_one_tailed, sem, sem_curve, shapiro_wilk, t_test_one_tailed,
    welch_anova, TTestKind, TestResult,
};
use cvharness_core::Error;

const TRIALS: usize = 2000;
const ALPHA: f64 = 0.05;

fn normal(rng: &mut RngStream, n: usize, mu: f64, sigma: f64) -> Vec<f64> {
    (0..n).map(|_| mu + sigma * rng.gaussian()).collect()
}

fn rejection_rate(name: &str, mut trial: impl FnMut(&mut RngStream) -> TestResult) -> f64 {
    let mut rejected = 0;
    for t in 0..TRIALS {
        let mut rng = derive_rng(2024, &format!("null/{name}/{t}"));
        if trial(&mut rng).reject_null {
            rejected += 1;
        }
    }
    rejected as f64 / TRIALS as f64
}

#[test]
fn false_positive_rates_are_calibrated() {
    let k_groups = |rng: &mut RngStream| (0..4).map(|_| normal(rng, 15, 0.9, 0.02)).collect::<Vec<_>>();
    let rates = [
        ("shapiro_wilk", rejection_rate("sw", |r| shapiro_wilk(&normal(r, 20, 0.9, 0.02), ALPHA).unwrap())),
        ("levene", rejection_rate("lev", |r| levene(&k_groups(r), ALPHA).unwrap())),
        ("anova", rejection_rate("anova", |r| anova_oneway(&k_groups(r), ALPHA).unwrap())),
        ("welch_anova", rejection_rate("welch", |r| welch_anova(&k_groups(r), ALPHA).unwrap())),
        ("kruskal_wallis", rejection_rate("kw", |r| kruskal_wallis(&k_groups(r), ALPHA).unwrap())),
        (
            "t_pooled",
            rejection_rate("tp", |r| {
                let (a, b) = (normal(r, 15, 0.9, 0.02), normal(r, 15, 0.9, 0.02));
                t_test_one_tailed(&a, &b, TTestKind::Pooled, ALPHA).unwrap()
            }),
        ),
        (
            "t_welch",
            rejection_rate("tw", |r| {
                let (a, b) = (normal(r, 15, 0.9, 0.02), normal(r, 15, 0.9, 0.04));
                t_test_one_tailed(&a, &b, TTestKind::Welch, ALPHA).unwrap()
            }),
        ),
        (
            "mann_whitney",
            rejection_rate("mw", |r| {
                let (a, b) = (normal(r, 15, 0.9, 0.02), normal(r, 15, 0.9, 0.02));
                mann_whitney_one_tailed(&a, &b, ALPHA).unwrap()
            }),
        ),
    ];
    for (name, rate) in rates {
        assert!((0.03..=0.07).contains(&rate), "{name}: rate {rate}");
    }
}

#[test]
fn shapiro_wilk_detects_skew() {
    let rate = rejection_rate("sw-lognormal", |r| {
        let x: Vec<f64> = normal(r, 30, 0.0, 1.0).into_iter().map(f64::exp).collect();
        shapiro_wilk(&x, ALPHA).unwrap()
    });
    assert!(rate > 0.8, "power {rate}");
}

#[test]
fn levene_detects_unequal_spread() {
    let rate = rejection_rate("lev-spread", |r| {
        let g = vec![normal(r, 25, 0.0, 1.0), normal(r, 25, 0.0, 3.0)];
        levene(&g, ALPHA).unwrap()
    });
    assert!(rate > 0.8, "power {rate}");
}

#[test]
fn sem_follows_inverse_square_root_law() {
    let sigma = 0.03;
    let mut at_100: Vec<f64> = (0..50)
        .map(|s| {
            let mut r = derive_rng(s, "sem-law");
            let x = normal(&mut r, 100, 0.9, sigma);
            sem_curve(&x).unwrap().last().unwrap().sem
        })
        .collect();
    at_100.sort_by(f64::total_cmp);
    let median = (at_100[24] + at_100[25]) / 2.0;
    let expected = sigma / 10.0;
    assert!((median - expected).abs() <= 0.2 * expected, "median {median} vs {expected}");
}

#[test]
fn sem_of_one_sample_is_undefined() {
    assert!(matches!(sem(&[0.91]), Err(Error::UndefinedStatistic { n: 1, .. })));
}
