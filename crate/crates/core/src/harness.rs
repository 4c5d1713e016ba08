//! Decision procedures: sample size, split-ratio selection, parameter
//! sweeps, layer freezing and augmentation selection.
//!
//! Training itself is supplied by the caller as closures so the same logic
//! runs sequentially here and in parallel from the std crate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::math::round_half_up;
use crate::model::{FreezeMask, HeadKind};
use crate::optim::OptimizerSpec;
use crate::rng::RngStream;
use crate::schedule::ScheduleSpec;
use crate::stats::{
    anova_oneway, kruskal_wallis, levene, mann_whitney_one_tailed, mean, sample_std, sem, sem_curve, shapiro_wilk,
    t_test_one_tailed, welch_anova, SemCurvePoint, TTestKind, TestResult,
};
use crate::train::TrainConfig;
use crate::{Error, Result};

/// `0.1` → `"10%"`, `0.125` → `"12.5%"`.
pub fn ratio_label(ratio: f64) -> String {
    let pct = ratio * 100.0;
    let whole = round_half_up(pct);
    if (pct - whole).abs() < 1e-9 {
        format!("{}%", whole as i64)
    } else {
        format!("{}%", round_half_up(pct * 1000.0) / 1000.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSizeConfig {
    /// Stop once the standard error of the mean is at or below this.
    pub sem_threshold: f64,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for SampleSizeConfig {
    fn default() -> Self {
        Self { sem_threshold: 0.0035, n_min: 5, n_max: 60 }
    }
}

impl SampleSizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sem_threshold.is_nan() || self.sem_threshold <= 0.0 {
            return Err(Error::invalid("sem_threshold must be positive"));
        }
        if self.n_min < 3 {
            return Err(Error::invalid("n_min must be >= 3"));
        }
        if self.n_max < self.n_min {
            return Err(Error::invalid("n_max must be >= n_min"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCandidate {
    pub label: String,
    pub test_ratio: f64,
    /// Test accuracies in collection order.
    pub samples: Vec<f64>,
    pub chosen_n: usize,
    pub sem_curve: Vec<SemCurvePoint>,
    /// False when `n_max` was reached with the SEM still above threshold.
    pub converged: bool,
}

impl RatioCandidate {
    pub fn from_samples(test_ratio: f64, samples: Vec<f64>) -> Self {
        let curve = sem_curve(&samples).unwrap_or_default();
        Self {
            label: ratio_label(test_ratio),
            test_ratio,
            chosen_n: samples.len(),
            converged: true,
            sem_curve: curve,
            samples,
        }
    }
}

/// Repeats `trainer` (fresh split, train, test) for one ratio until the SEM
/// drops to the threshold with at least `n_min` samples, or `n_max` runs.
///
/// Run `i` gets the stream `<rng>/<label>/run/<i>`.
pub fn sample_size_for_ratio<F>(ratio: f64, config: &SampleSizeConfig, rng: &RngStream, mut trainer: F) -> Result<RatioCandidate>
where
    F: FnMut(f64, &mut RngStream) -> Result<f64>,
{
    config.validate()?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("test ratio must be in (0, 1), got {ratio}")));
    }
    let label = ratio_label(ratio);
    let mut samples = Vec::new();
    let mut converged = false;
    while samples.len() < config.n_max {
        let mut run_rng = rng.child(&format!("{label}/run/{}", samples.len()));
        samples.push(trainer(ratio, &mut run_rng)?);
        if samples.len() >= config.n_min && sem(&samples)? <= config.sem_threshold {
            converged = true;
            break;
        }
    }
    let curve = sem_curve(&samples)?;
    Ok(RatioCandidate { label, test_ratio: ratio, chosen_n: samples.len(), samples, sem_curve: curve, converged })
}

pub fn sample_size_procedure<F>(
    ratios: &[f64],
    config: &SampleSizeConfig,
    rng: &RngStream,
    mut trainer: F,
) -> Result<Vec<RatioCandidate>>
where
    F: FnMut(f64, &mut RngStream) -> Result<f64>,
{
    ratios.iter().map(|&r| sample_size_for_ratio(r, config, rng, &mut trainer)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Parametric,
    Nonparametric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum TrailStep {
    Normality { group: String },
    Homogeneity,
    Omnibus { branch: Branch },
    Pairwise { top: String, other: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailEntry {
    #[serde(flatten)]
    pub step: TrailStep,
    pub result: Option<TestResult>,
    /// Set when the test could not be computed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioDecision {
    pub alpha: f64,
    pub trail: Vec<TrailEntry>,
    pub branch: Branch,
    pub top: String,
    /// Labels of the statistically indistinguishable best ratios, ascending by ratio.
    pub candidates: Vec<String>,
    pub selected: String,
    pub selected_ratio: f64,
}

/// The tests a ratio decision may run, in any order the branch logic asks.
pub trait TestBattery {
    fn normality(&mut self, group: usize, alpha: f64) -> Result<TestResult>;
    fn homogeneity(&mut self, alpha: f64) -> Result<TestResult>;
    fn omnibus(&mut self, branch: Branch, equal_variance: bool, alpha: f64) -> Result<TestResult>;
    fn pairwise(&mut self, branch: Branch, equal_variance: bool, top: usize, other: usize, alpha: f64)
        -> Result<TestResult>;
}

/// Runs the tests on the candidates' accuracy samples.
pub struct ComputedBattery<'a> {
    groups: Vec<&'a [f64]>,
}

impl<'a> ComputedBattery<'a> {
    pub fn new(candidates: &'a [RatioCandidate]) -> Self {
        Self { groups: candidates.iter().map(|c| c.samples.as_slice()).collect() }
    }
}

impl TestBattery for ComputedBattery<'_> {
    fn normality(&mut self, group: usize, alpha: f64) -> Result<TestResult> {
        shapiro_wilk(self.groups[group], alpha)
    }

    fn homogeneity(&mut self, alpha: f64) -> Result<TestResult> {
        levene(&self.groups, alpha)
    }

    fn omnibus(&mut self, branch: Branch, equal_variance: bool, alpha: f64) -> Result<TestResult> {
        match (branch, equal_variance) {
            (Branch::Parametric, true) => anova_oneway(&self.groups, alpha),
            (Branch::Parametric, false) => welch_anova(&self.groups, alpha),
            (Branch::Nonparametric, _) => kruskal_wallis(&self.groups, alpha),
        }
    }

    fn pairwise(&mut self, branch: Branch, equal_variance: bool, top: usize, other: usize, alpha: f64) -> Result<TestResult> {
        let (a, b) = (self.groups[top], self.groups[other]);
        match (branch, equal_variance) {
            (Branch::Parametric, true) => t_test_one_tailed(a, b, TTestKind::Pooled, alpha),
            (Branch::Parametric, false) => t_test_one_tailed(a, b, TTestKind::Welch, alpha),
            (Branch::Nonparametric, _) => mann_whitney_one_tailed(a, b, alpha),
        }
    }
}

/// Replays previously published p-values; statistics are unknown (`NaN`).
/// Pairwise p-values are indexed by the non-top group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordedTrail {
    pub labels: Vec<String>,
    pub test_ratios: Vec<f64>,
    pub means: Vec<f64>,
    pub normality_p: Vec<f64>,
    pub homogeneity_p: Option<f64>,
    pub omnibus_p: f64,
    pub pairwise_p: Vec<Option<f64>>,
}

impl RecordedTrail {
    fn missing(what: &str) -> Error {
        Error::invalid(format!("recorded trail has no {what} p-value"))
    }
}

impl TestBattery for RecordedTrail {
    fn normality(&mut self, group: usize, alpha: f64) -> Result<TestResult> {
        let p = *self.normality_p.get(group).ok_or_else(|| Self::missing("normality"))?;
        Ok(TestResult::new("shapiro_wilk", f64::NAN, p, alpha))
    }

    fn homogeneity(&mut self, alpha: f64) -> Result<TestResult> {
        let p = self.homogeneity_p.ok_or_else(|| Self::missing("homogeneity"))?;
        Ok(TestResult::new("levene", f64::NAN, p, alpha))
    }

    fn omnibus(&mut self, branch: Branch, equal_variance: bool, alpha: f64) -> Result<TestResult> {
        let name = match (branch, equal_variance) {
            (Branch::Parametric, true) => "anova_oneway",
            (Branch::Parametric, false) => "welch_anova",
            (Branch::Nonparametric, _) => "kruskal_wallis",
        };
        Ok(TestResult::new(name, f64::NAN, self.omnibus_p, alpha))
    }

    fn pairwise(&mut self, branch: Branch, equal_variance: bool, _top: usize, other: usize, alpha: f64) -> Result<TestResult> {
        let p = self.pairwise_p.get(other).copied().flatten().ok_or_else(|| Self::missing("pairwise"))?;
        let name = match (branch, equal_variance) {
            (Branch::Parametric, true) => "t_test_pooled",
            (Branch::Parametric, false) => "t_test_welch",
            (Branch::Nonparametric, _) => "mann_whitney",
        };
        Ok(TestResult::new(name, f64::NAN, p, alpha))
    }
}

fn record(trail: &mut Vec<TrailEntry>, step: TrailStep, r: Result<TestResult>) -> Option<TestResult> {
    match r {
        Ok(t) => {
            trail.push(TrailEntry { step, result: Some(t.clone()), error: None });
            Some(t)
        }
        Err(e) => {
            trail.push(TrailEntry { step, result: None, error: Some(e.to_string()) });
            None
        }
    }
}

/// Picks a split ratio from accuracy samples (see [`decide_ratio`]).
pub fn select_split_ratio(candidates: &[RatioCandidate], alpha: f64) -> Result<RatioDecision> {
    if candidates.len() < 2 {
        return Err(Error::invalid("ratio selection needs at least 2 candidates"));
    }
    if let Some(c) = candidates.iter().find(|c| c.samples.len() < 3) {
        return Err(Error::invalid(format!("candidate {} has {} samples, need >= 3", c.label, c.samples.len())));
    }
    let labels: Vec<String> = candidates.iter().map(|c| c.label.clone()).collect();
    let ratios: Vec<f64> = candidates.iter().map(|c| c.test_ratio).collect();
    let means = candidates.iter().map(|c| mean(&c.samples)).collect::<Result<Vec<_>>>()?;
    decide_ratio(&labels, &ratios, &means, alpha, &mut ComputedBattery::new(candidates))
}

/// Branch logic:
///
/// 1. normality of every group;
/// 2. all normal: homogeneity, then classic ANOVA (homogeneous) or Welch
///    ANOVA; otherwise, or when any normality test fails to compute,
///    Kruskal-Wallis;
/// 3. significant omnibus: one-tailed comparisons of the top-mean group
///    against each other group; candidates are the top group plus every
///    group with `p >= alpha` (or whose comparison could not be computed).
///    A non-significant or uncomputable omnibus makes every group a
///    candidate;
/// 4. the candidate with the smallest test ratio is selected.
pub fn decide_ratio(
    labels: &[String],
    test_ratios: &[f64],
    means: &[f64],
    alpha: f64,
    battery: &mut dyn TestBattery,
) -> Result<RatioDecision> {
    let k = labels.len();
    if k < 2 || test_ratios.len() != k || means.len() != k {
        return Err(Error::invalid("ratio decision needs >= 2 groups with matching labels, ratios and means"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let mut trail = Vec::new();

    let mut all_normal = true;
    for (g, label) in labels.iter().enumerate() {
        let r = battery.normality(g, alpha);
        match record(&mut trail, TrailStep::Normality { group: label.clone() }, r) {
            Some(t) if !t.reject_null => {}
            _ => all_normal = false,
        }
    }

    let (branch, equal_variance) = if all_normal {
        let h = record(&mut trail, TrailStep::Homogeneity, battery.homogeneity(alpha));
        (Branch::Parametric, h.is_some_and(|t| !t.reject_null))
    } else {
        (Branch::Nonparametric, false)
    };

    let omnibus = record(&mut trail, TrailStep::Omnibus { branch }, battery.omnibus(branch, equal_variance, alpha));

    let mut top = 0;
    for g in 1..k {
        if means[g] > means[top] || (means[g] == means[top] && test_ratios[g] < test_ratios[top]) {
            top = g;
        }
    }

    let mut in_set = alloc::vec![true; k];
    if omnibus.is_some_and(|t| t.reject_null) {
        for g in (0..k).filter(|&g| g != top) {
            let step = TrailStep::Pairwise { top: labels[top].clone(), other: labels[g].clone() };
            let r = record(&mut trail, step, battery.pairwise(branch, equal_variance, top, g, alpha));
            in_set[g] = r.is_none_or(|t| !t.reject_null);
        }
    }

    let mut order: Vec<usize> = (0..k).filter(|&g| in_set[g]).collect();
    order.sort_by(|&a, &b| test_ratios[a].total_cmp(&test_ratios[b]).then(a.cmp(&b)));
    let selected = order[0];
    Ok(RatioDecision {
        alpha,
        trail,
        branch,
        top: labels[top].clone(),
        candidates: order.iter().map(|&g| labels[g].clone()).collect(),
        selected: labels[selected].clone(),
        selected_ratio: test_ratios[selected],
    })
}

/// One setting of a tunable training parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "param", content = "value", rename_all = "snake_case")]
pub enum ParamValue {
    Schedule(ScheduleSpec),
    Optimizer(OptimizerSpec),
    Patience(usize),
    Freeze(FreezeMask),
    Head(HeadKind),
    BatchSize(usize),
    LearningRate(f64),
}

impl ParamValue {
    pub fn param_name(&self) -> &'static str {
        match self {
            ParamValue::Schedule(_) => "schedule",
            ParamValue::Optimizer(_) => "optimizer",
            ParamValue::Patience(_) => "patience",
            ParamValue::Freeze(_) => "freeze",
            ParamValue::Head(_) => "head",
            ParamValue::BatchSize(_) => "batch_size",
            ParamValue::LearningRate(_) => "learning_rate",
        }
    }

    pub fn value_label(&self) -> String {
        match self {
            ParamValue::Schedule(s) => match s {
                ScheduleSpec::Constant => "constant".to_string(),
                ScheduleSpec::StepDecay { gamma, every } => format!("step_decay(gamma={gamma},every={every})"),
                ScheduleSpec::CyclicTriangular { lr_base, lr_max, step_size } => {
                    format!("cyclic({lr_base}..{lr_max},step={step_size})")
                }
            },
            ParamValue::Optimizer(o) => o.name().to_string(),
            ParamValue::Patience(p) => format!("{p}"),
            ParamValue::Freeze(m) => format!("trainable={}", m.label()),
            ParamValue::Head(h) => h.name().to_string(),
            ParamValue::BatchSize(b) => format!("{b}"),
            ParamValue::LearningRate(lr) => format!("{lr:e}"),
        }
    }

    pub fn apply(&self, config: &mut TrainConfig) {
        match self {
            ParamValue::Schedule(s) => config.schedule = *s,
            ParamValue::Optimizer(o) => config.optimizer = *o,
            ParamValue::Patience(p) => config.patience_epochs = *p,
            ParamValue::Freeze(m) => config.freeze = *m,
            ParamValue::Head(h) => config.head = *h,
            ParamValue::BatchSize(b) => config.batch_size = *b,
            ParamValue::LearningRate(lr) => config.learning_rate = *lr,
        }
    }
}

/// Outcome of one fold: validation accuracy or the failure message.
pub type FoldOutcome = core::result::Result<f64, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: ParamValue,
    pub label: String,
    /// Indexed by fold; `None` where training failed.
    pub fold_accuracies: Vec<Option<f64>>,
    pub failures: Vec<String>,
    /// Mean over successful folds; `None` when every fold failed.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl SweepRow {
    pub fn from_folds(value: ParamValue, folds: &[FoldOutcome]) -> Self {
        let ok: Vec<f64> = folds.iter().filter_map(|f| f.as_ref().ok().copied()).collect();
        Self {
            label: value.value_label(),
            value,
            fold_accuracies: folds.iter().map(|f| f.as_ref().ok().copied()).collect(),
            failures: folds
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.as_ref().err().map(|e| format!("fold {i}: {e}")))
                .collect(),
            mean: mean(&ok).ok(),
            std: sample_std(&ok).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: String,
    /// Mean fold accuracy of the configuration before this sweep, if known.
    pub baseline: Option<f64>,
    pub rows: Vec<SweepRow>,
    pub winner: usize,
}

impl SweepResult {
    pub fn winner_row(&self) -> &SweepRow {
        &self.rows[self.winner]
    }

    /// Winner mean minus baseline.
    pub fn gain(&self) -> Option<f64> {
        Some(self.winner_row().mean? - self.baseline?)
    }
}

/// Index of the largest `Some` mean; earlier entries win ties.
pub fn argmax_mean(means: impl IntoIterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in means.into_iter().enumerate() {
        if let Some(m) = m {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Builds a sweep result from per-value fold outcomes (in declared order).
pub fn summarize_sweep(values: Vec<ParamValue>, outcomes: &[Vec<FoldOutcome>], baseline: Option<f64>) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    if outcomes.len() != values.len() {
        return Err(Error::Shape(format!("{} values but {} outcome lists", values.len(), outcomes.len())));
    }
    let param = values[0].param_name().to_string();
    if let Some(v) = values.iter().find(|v| v.param_name() != param) {
        return Err(Error::invalid(format!("sweep over `{param}` also lists a `{}` value", v.param_name())));
    }
    let rows: Vec<SweepRow> = values.into_iter().zip(outcomes).map(|(v, o)| SweepRow::from_folds(v, o)).collect();
    let winner = argmax_mean(rows.iter().map(|r| r.mean))
        .ok_or_else(|| Error::invalid(format!("every value of `{param}` failed on every fold")))?;
    Ok(SweepResult { param, baseline, rows, winner })
}

/// Sequential sweep: `fold_eval(config, fold)` trains on the fold's
/// training view and returns validation accuracy.
pub fn sweep_parameter<F>(
    values: Vec<ParamValue>,
    base: &TrainConfig,
    folds: usize,
    baseline: Option<f64>,
    mut fold_eval: F,
) -> Result<SweepResult>
where
    F: FnMut(&TrainConfig, usize) -> Result<f64>,
{
    let outcomes: Vec<Vec<FoldOutcome>> = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            v.apply(&mut cfg);
            (0..folds).map(|f| fold_eval(&cfg, f).map_err(|e| e.to_string())).collect()
        })
        .collect();
    summarize_sweep(values, &outcomes, baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezePoint {
    pub mask: FreezeMask,
    pub label: String,
    pub fold_accuracies: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeCurve {
    pub points: Vec<FreezePoint>,
    pub best: usize,
}

/// Curve over cumulative unfreeze states, in the given order; the best
/// state is the highest mean (earlier, i.e. more frozen, wins ties).
pub fn freezing_curve(masks: &[FreezeMask], outcomes: &[Vec<FoldOutcome>]) -> Result<FreezeCurve> {
    if masks.is_empty() || masks.len() != outcomes.len() {
        return Err(Error::invalid("freezing sweep needs one outcome list per state"));
    }
    let points: Vec<FreezePoint> = masks
        .iter()
        .zip(outcomes)
        .map(|(m, o)| {
            let row = SweepRow::from_folds(ParamValue::Freeze(*m), o);
            FreezePoint { mask: *m, label: m.label(), fold_accuracies: row.fold_accuracies, mean: row.mean, std: row.std }
        })
        .collect();
    let best = argmax_mean(points.iter().map(|p| p.mean)).ok_or_else(|| Error::invalid("every freeze state failed"))?;
    Ok(FreezeCurve { points, best })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugFamily {
    Flip,
    Rotation,
    Shear,
    Zoom,
    Brightness,
}

impl AugFamily {
    pub const ALL: [AugFamily; 5] =
        [AugFamily::Flip, AugFamily::Rotation, AugFamily::Shear, AugFamily::Zoom, AugFamily::Brightness];

    pub fn name(&self) -> &'static str {
        match self {
            AugFamily::Flip => "flip",
            AugFamily::Rotation => "rotation",
            AugFamily::Shear => "shear",
            AugFamily::Zoom => "zoom",
            AugFamily::Brightness => "brightness",
        }
    }

    /// The single family a candidate spec belongs to.
    pub fn of(spec: &AugmentSpec) -> Result<AugFamily> {
        let mut found = Vec::new();
        if spec.horizontal_flip || spec.vertical_flip {
            found.push(AugFamily::Flip);
        }
        if spec.rotation_range > 0.0 {
            found.push(AugFamily::Rotation);
        }
        if spec.shear_range > 0.0 {
            found.push(AugFamily::Shear);
        }
        if spec.zoom_range > 0.0 {
            found.push(AugFamily::Zoom);
        }
        if spec.brightness_range > 0.0 {
            found.push(AugFamily::Brightness);
        }
        match found.as_slice() {
            [f] => Ok(*f),
            [] => Err(Error::invalid("augmentation candidate is the empty spec")),
            _ => Err(Error::invalid(format!("augmentation candidate mixes families: {spec:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugRow {
    pub family: AugFamily,
    pub spec: AugmentSpec,
    pub fold_accuracies: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyBest {
    pub family: AugFamily,
    /// Index into `AugSelection::rows`.
    pub row: usize,
    pub mean: f64,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugSelection {
    pub benchmark_mean: f64,
    /// A family is included only if its best mean exceeds the benchmark by more than this.
    pub min_gain: f64,
    pub rows: Vec<AugRow>,
    pub families: Vec<FamilyBest>,
    pub chosen: AugmentSpec,
}

/// Best magnitude per family, then the union of families whose best mean
/// beats the benchmark mean by more than `min_gain`.
pub fn select_augmentation(
    benchmark: &[FoldOutcome],
    candidates: &[AugmentSpec],
    outcomes: &[Vec<FoldOutcome>],
    min_gain: f64,
) -> Result<AugSelection> {
    if candidates.len() != outcomes.len() {
        return Err(Error::Shape(format!("{} candidates but {} outcome lists", candidates.len(), outcomes.len())));
    }
    if min_gain.is_nan() || min_gain < 0.0 {
        return Err(Error::invalid("min_gain must be >= 0"));
    }
    let bench: Vec<f64> = benchmark.iter().filter_map(|f| f.as_ref().ok().copied()).collect();
    let benchmark_mean = mean(&bench).map_err(|_| Error::invalid("benchmark failed on every fold"))?;
    let mut rows = Vec::with_capacity(candidates.len());
    for (spec, o) in candidates.iter().zip(outcomes) {
        spec.validate()?;
        let row = SweepRow::from_folds(ParamValue::Patience(0), o);
        rows.push(AugRow {
            family: AugFamily::of(spec)?,
            spec: *spec,
            fold_accuracies: row.fold_accuracies,
            mean: row.mean,
            std: row.std,
        });
    }
    let mut families = Vec::new();
    let mut chosen = AugmentSpec::default();
    for family in AugFamily::ALL {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].family == family).collect();
        if let Some(j) = argmax_mean(idx.iter().map(|&i| rows[i].mean)) {
            let row = idx[j];
            let m = rows[row].mean.unwrap_or(f64::NEG_INFINITY);
            let included = m - benchmark_mean > min_gain;
            if included {
                chosen = chosen.union(&rows[row].spec);
            }
            families.push(FamilyBest { family, row, mean: m, included });
        }
    }
    Ok(AugSelection { benchmark_mean, min_gain, rows, families, chosen })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    use crate::rng::derive_rng;

    #[test]
    fn labels() {
        assert_eq!(ratio_label(0.1), "10%");
        assert_eq!(ratio_label(0.25), "25%");
        assert_eq!(ratio_label(0.125), "12.5%");
    }

    #[test]
    fn constant_trainer_stops_at_n_min() {
        let cfg = SampleSizeConfig { sem_threshold: 0.003, n_min: 5, n_max: 40 };
        let c = sample_size_for_ratio(0.2, &cfg, &derive_rng(1, "s"), |_, _| Ok(0.9)).unwrap();
        assert_eq!(c.chosen_n, 5);
        assert!(c.converged);
        assert_eq!(c.sem_curve.last().unwrap().sem, 0.0);
    }

    #[test]
    fn unconverged_is_flagged() {
        let cfg = SampleSizeConfig { sem_threshold: 1e-6, n_min: 3, n_max: 8 };
        let c = sample_size_for_ratio(0.2, &cfg, &derive_rng(1, "s"), |_, r| Ok(r.uniform())).unwrap();
        assert_eq!(c.chosen_n, 8);
        assert!(!c.converged);
        assert_eq!(c.sem_curve.len(), 7);
    }

    fn paper_trail() -> RecordedTrail {
        RecordedTrail {
            labels: ["10%", "15%", "20%", "25%"].iter().map(|s| s.to_string()).collect(),
            test_ratios: vec![0.10, 0.15, 0.20, 0.25],
            means: vec![0.93, 0.925, 0.92, 0.91],
            normality_p: vec![0.53, 0.70, 0.44, 0.99],
            homogeneity_p: Some(0.27),
            omnibus_p: 0.0036,
            pairwise_p: vec![None, Some(0.059), Some(0.037), Some(0.0005)],
        }
    }

    #[test]
    fn recorded_trail_decision() {
        let t = paper_trail();
        let d = decide_ratio(&t.labels.clone(), &t.test_ratios.clone(), &t.means.clone(), 0.05, &mut t.clone()).unwrap();
        assert_eq!(d.branch, Branch::Parametric);
        assert_eq!(d.candidates, vec!["10%", "15%"]);
        assert_eq!(d.selected, "10%");
        // 4 normality + levene + anova + 3 pairwise
        assert_eq!(d.trail.len(), 9);
        assert_eq!(d.trail[5].result.as_ref().unwrap().test, "anova_oneway");
    }

    #[test]
    fn insignificant_omnibus_keeps_everything() {
        let mut t = paper_trail();
        t.omnibus_p = 0.4;
        let d = decide_ratio(&t.labels.clone(), &t.test_ratios.clone(), &t.means.clone(), 0.05, &mut t).unwrap();
        assert_eq!(d.candidates.len(), 4);
        assert_eq!(d.selected, "10%");
        assert_eq!(d.trail.len(), 6);
    }

    #[test]
    fn non_normal_group_takes_rank_branch() {
        let mut t = paper_trail();
        t.normality_p[2] = 0.001;
        let d = decide_ratio(&t.labels.clone(), &t.test_ratios.clone(), &t.means.clone(), 0.05, &mut t).unwrap();
        assert_eq!(d.branch, Branch::Nonparametric);
        assert!(!d.trail.iter().any(|e| e.step == TrailStep::Homogeneity));
        assert_eq!(d.trail[4].result.as_ref().unwrap().test, "kruskal_wallis");
    }

    #[test]
    fn degenerate_groups_are_recorded() {
        let cands = vec![
            RatioCandidate::from_samples(0.1, vec![0.9; 5]),
            RatioCandidate::from_samples(0.2, vec![0.9; 5]),
        ];
        let d = select_split_ratio(&cands, 0.05).unwrap();
        assert!(d.trail.iter().any(|e| e.error.is_some()));
        assert_eq!(d.selected, "10%");
    }

    #[test]
    fn sweep_single_value_wins() {
        let r = sweep_parameter(vec![ParamValue::BatchSize(8)], &TrainConfig::table1(), 3, None, |_, _| Ok(0.5)).unwrap();
        assert_eq!(r.winner, 0);
        assert_eq!(r.rows[0].mean, Some(0.5));
    }

    #[test]
    fn sweep_ties_go_to_earlier_value() {
        let values = vec![ParamValue::BatchSize(8), ParamValue::BatchSize(16), ParamValue::BatchSize(32)];
        let r = sweep_parameter(values, &TrainConfig::table1(), 2, Some(0.4), |c, _| {
            Ok(if c.batch_size == 8 { 0.5 } else { 0.6 })
        })
        .unwrap();
        assert_eq!(r.winner, 1);
        assert!((r.gain().unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn all_folds_failing_disqualifies() {
        let out = vec![vec![Err("boom".to_string()), Err("boom".to_string())], vec![Ok(0.1), Err("x".to_string())]];
        let r = summarize_sweep(vec![ParamValue::Patience(1), ParamValue::Patience(2)], &out, None).unwrap();
        assert_eq!(r.rows[0].mean, None);
        assert_eq!(r.winner, 1);
        assert_eq!(r.rows[1].failures.len(), 1);
    }

    #[test]
    fn augmentation_union_excludes_losers() {
        let flip = AugmentSpec { horizontal_flip: true, ..Default::default() };
        let rot90 = AugmentSpec { rotation_range: 90.0, ..Default::default() };
        let rot180 = AugmentSpec { rotation_range: 180.0, ..Default::default() };
        let bright = AugmentSpec { brightness_range: 0.3, ..Default::default() };
        let bench: Vec<FoldOutcome> = vec![Ok(0.6), Ok(0.6)];
        let out: Vec<Vec<FoldOutcome>> =
            vec![vec![Ok(0.7), Ok(0.7)], vec![Ok(0.65), Ok(0.65)], vec![Ok(0.8), Ok(0.8)], vec![Ok(0.59), Ok(0.6)]];
        let s = select_augmentation(&bench, &[flip, rot90, rot180, bright], &out, 0.0).unwrap();
        assert_eq!(s.chosen, AugmentSpec { horizontal_flip: true, rotation_range: 180.0, ..Default::default() });
        assert!(!s.families.iter().find(|f| f.family == AugFamily::Brightness).unwrap().included);
        // everything tying the benchmark leaves the chosen augmentation empty
        let tie: Vec<Vec<FoldOutcome>> = vec![bench.clone(); 4];
        let s = select_augmentation(&bench, &[flip, rot90, rot180, bright], &tie, 0.0).unwrap();
        assert!(s.chosen.is_identity());
    }

    #[test]
    fn mixed_candidate_rejected() {
        let mixed = AugmentSpec { horizontal_flip: true, zoom_range: 0.2, ..Default::default() };
        assert!(AugFamily::of(&mixed).is_err());
        assert!(AugFamily::of(&AugmentSpec::default()).is_err());
    }

    #[test]
    fn trail_round_trips_through_json() {
        let t = paper_trail();
        let d = decide_ratio(&t.labels.clone(), &t.test_ratios.clone(), &t.means.clone(), 0.05, &mut t.clone()).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        let back: RatioDecision = serde_json::from_str(&s).unwrap();
        assert_eq!(back.candidates, d.candidates);
        assert!(back.trail[0].result.as_ref().unwrap().statistic.is_nan());
    }
}
