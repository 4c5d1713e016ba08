//! Descriptive statistics, distribution functions and the hypothesis tests
//! used to compare accuracy samples across split ratios.

mod descriptive;
mod dist;
mod hypothesis;
mod special;

pub use descriptive::{mean, sample_std, sample_variance, sem, sem_curve, SemCurvePoint};
pub use dist::{cdf, sf, Distribution};
pub use hypothesis::{
    anova_oneway, kruskal_wallis, levene, mann_whitney_one_tailed, shapiro_wilk, t_test_one_tailed,
    welch_anova, SampleGroup, TTestKind, TestResult, DEFAULT_ALPHA,
};
pub use special::{inverse_normal_cdf, regularized_beta, regularized_gamma_p, regularized_gamma_q};
