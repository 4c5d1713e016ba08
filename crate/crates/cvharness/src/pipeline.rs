//! Campaign stages. Each stage reads its inputs from the artifact directory,
//! writes its outputs there, and returns them; `run_all` chains the stages.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use cvharness_core::augment::AugmentSpec;
use cvharness_core::dataset::{generate_synthetic, Dataset};
use cvharness_core::harness::{
    decide_ratio, freezing_curve, ratio_label, sample_size_for_ratio, select_augmentation, select_split_ratio,
    summarize_sweep, AugSelection, FoldOutcome, FreezeCurve, RatioCandidate, RatioDecision,
    RecordedTrail, SweepResult,
};
use cvharness_core::model::{init_model, Architecture, InitScheme, ModelParams};
use cvharness_core::rng::{derive_rng, RngStream};
use cvharness_core::schedule::LrFinderResult;
use cvharness_core::split::{fold_view, holdout_split_labels, kfold_partition, FoldAssignment, SamplingStrategy, SplitPlan};
use cvharness_core::train::{
    evaluate, find_learning_rate, pretrain_source, train_loop, ConfusionMatrix, EpochRecord, Evaluation, TrainConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{num, opt_num, ArtifactDir, Provenance};
use crate::checkpoint;
use crate::config::{CampaignConfig, DatasetSource};
use crate::dataset_io::{load_dataset, write_dataset, Manifest};
use crate::error::{HarnessError, Result};
use crate::report::{build_report, render_report, Report};

pub const SPLIT: &str = "split.json";
pub const START_CKPT: &str = "start.ckpt";
pub const SAMPLE_SIZE: &str = "sample_size.json";
pub const RATIO_DECISION: &str = "ratio_decision.json";
pub const LR_FINDER: &str = "lr_finder.json";
pub const FOLDS: &str = "folds.json";
pub const SWEEPS: &str = "sweeps.json";
pub const FREEZE: &str = "freeze_curve.json";
pub const FREEZE_CSV: &str = "freeze_curve.csv";
pub const TUNED: &str = "tuned.json";
pub const AUGMENT: &str = "augment_select.json";
pub const AUGMENT_CSV: &str = "augment_select.csv";
pub const REPORT: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const FAILURE: &str = "failure.json";

/// The two trainings whose models see the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStage {
    Benchmark,
    Final,
}

impl FitStage {
    pub fn name(&self) -> &'static str {
        match self {
            FitStage::Benchmark => "benchmark",
            FitStage::Final => "final",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "benchmark" => Some(FitStage::Benchmark),
            "final" => Some(FitStage::Final),
            _ => None,
        }
    }

    pub fn checkpoint(&self) -> String {
        format!("model_{}.ckpt", self.name())
    }

    pub fn fit_file(&self) -> String {
        format!("fit_{}.json", self.name())
    }

    pub fn history_file(&self) -> String {
        format!("history_{}.csv", self.name())
    }

    pub fn confusion_file(&self) -> String {
        format!("confusion_{}.json", self.name())
    }
}

pub fn sem_curve_file(ratio: f64) -> String {
    format!("sem_curve_{}.csv", ratio_label(ratio).replace('%', "pct"))
}

pub fn sweep_file(param: &str) -> String {
    format!("sweep_{param}.csv")
}

/// Every file a successful `run-all` leaves in the output directory.
pub fn declared_artifacts(config: &CampaignConfig) -> Vec<String> {
    let mut out: Vec<String> = ["provenance.json", SPLIT, START_CKPT, "start.ckpt.json", RATIO_DECISION, FOLDS, SWEEPS, TUNED]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(study) = &config.ratio_study {
        out.push(SAMPLE_SIZE.into());
        out.extend(study.ratios.iter().map(|&r| sem_curve_file(r)));
        out.push("report_sample_size.csv".into());
    }
    if config.lr_finder.is_some() {
        out.extend([LR_FINDER.to_string(), "lr_finder.csv".into()]);
    }
    for values in &config.sweeps {
        if let Some(v) = values.first() {
            out.push(sweep_file(v.param_name()));
        }
    }
    if !config.sweeps.is_empty() {
        out.push("report_sweeps.csv".into());
    }
    if !config.freeze_states.is_empty() {
        out.extend([FREEZE.to_string(), FREEZE_CSV.into(), "report_freeze.csv".into()]);
    }
    out.extend([AUGMENT.to_string(), AUGMENT_CSV.into(), "report_augment.csv".into()]);
    for stage in [FitStage::Benchmark, FitStage::Final] {
        let ckpt = stage.checkpoint();
        out.push(format!("{ckpt}.json"));
        out.extend([ckpt, stage.fit_file(), stage.history_file(), stage.confusion_file()]);
    }
    out.extend([REPORT.to_string(), REPORT_TXT.into(), "report_confusion.csv".into()]);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub source_accuracy: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub plan: SplitPlan,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub architecture: Architecture,
    pub pretrain: Option<PretrainSummary>,
}

/// Validation ratio used for the benchmark and final fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioChoice {
    pub validation_ratio: f64,
    /// Absent when no ratio study is configured.
    pub decision: Option<RatioDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrFinderRecord {
    pub result: LrFinderResult,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStage {
    pub start: TrainConfig,
    pub results: Vec<SweepResult>,
    pub config: TrainConfig,
}

/// Configuration after all sweeps, with its per-fold validation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub config: TrainConfig,
    pub folds: Vec<FoldEval>,
}

/// One fold's validation result: accuracy plus confusion, or the failure.
pub type FoldEval = std::result::Result<Evaluation, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentStage {
    pub selection: AugSelection,
    /// Validation confusion pooled over folds for the benchmark and each row.
    pub benchmark_confusion: Option<ConfusionMatrix>,
    pub row_confusions: Vec<Option<ConfusionMatrix>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub stage: FitStage,
    pub config: TrainConfig,
    pub validation_ratio: f64,
    pub train_count: usize,
    pub val_count: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub stage: FitStage,
    pub test_count: usize,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

fn stage_err(stage: &str, e: impl ToString) -> HarnessError {
    HarnessError::Stage { stage: stage.to_string(), message: e.to_string() }
}

/// Maps `split` (positions into `members`) back to dataset indices.
fn split_members(
    labels: &[usize],
    classes: usize,
    members: &[usize],
    ratio: f64,
    strategy: SamplingStrategy,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let sub: Vec<usize> = members.iter().map(|&i| labels[i]).collect();
    let plan = holdout_split_labels(&sub, classes, ratio, strategy, rng)?;
    let rest = plan.rest_indices.iter().map(|&p| members[p]).collect();
    let held = plan.test_indices.iter().map(|&p| members[p]).collect();
    Ok((rest, held))
}

/// Validation-side evaluation of `configs` on every fold, in parallel.
/// Fold `f` trains with stream `<rng>/fold/<f>` for every config, so
/// configs are compared on the same shuffles and augmentation draws.
pub fn cross_validate(
    pool: &rayon::ThreadPool,
    start: &ModelParams,
    dataset: &Dataset,
    folds: &FoldAssignment,
    configs: &[TrainConfig],
    rng: &RngStream,
) -> Result<Vec<Vec<FoldEval>>> {
    let views = (0..folds.k).map(|f| fold_view(folds, f)).collect::<cvharness_core::Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..folds.k).map(move |f| (c, f))).collect();
    let results: Vec<FoldEval> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, f)| {
                let (train, val) = &views[f];
                let out = train_loop(start, dataset, train, val, &configs[c], &rng.child(&format!("fold/{f}")))
                    .map_err(|e| e.to_string())?;
                evaluate(&out.params, dataset, val).map_err(|e| e.to_string())
            })
            .collect()
    });
    let mut it = results.into_iter();
    Ok(configs.iter().map(|_| it.by_ref().take(folds.k).collect()).collect())
}

fn mean_ok(outcomes: &[FoldOutcome]) -> Option<f64> {
    let ok: Vec<f64> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
    cvharness_core::stats::mean(&ok).ok()
}

pub fn accuracies(evals: &[FoldEval]) -> Vec<FoldOutcome> {
    evals.iter().map(|e| e.as_ref().map(|v| v.accuracy).map_err(Clone::clone)).collect()
}

/// Sum of the successful folds' confusion matrices.
pub fn pooled_confusion(evals: &[FoldEval]) -> Option<ConfusionMatrix> {
    let mut ok = evals.iter().filter_map(|e| e.as_ref().ok());
    let mut total = ok.next()?.confusion.clone();
    for e in ok {
        for (row, other) in total.counts.iter_mut().zip(&e.confusion.counts) {
            for (a, b) in row.iter_mut().zip(other) {
                *a += b;
            }
        }
    }
    Some(total)
}

pub fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| HarnessError::Config(e.to_string()))
}

pub struct Campaign {
    pub config: CampaignConfig,
    pub hash: String,
    pub dir: ArtifactDir,
    pool: rayon::ThreadPool,
    dataset: OnceLock<Dataset>,
    test_uses: AtomicUsize,
}

impl Campaign {
    pub fn new(config: CampaignConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let dir = ArtifactDir::open(out, Provenance { config_hash: hash.clone(), master_seed: config.master_seed })?;
        let pool = build_pool(config.parallelism)?;
        Ok(Self { config, hash, dir, pool, dataset: OnceLock::new(), test_uses: AtomicUsize::new(0) })
    }

    pub fn rng(&self, key: &str) -> RngStream {
        derive_rng(self.config.master_seed, key)
    }

    /// Number of test-set evaluations made by this campaign object.
    pub fn test_uses(&self) -> usize {
        self.test_uses.load(Ordering::SeqCst)
    }

    pub fn dataset(&self) -> Result<&Dataset> {
        if let Some(d) = self.dataset.get() {
            return Ok(d);
        }
        let d = match &self.config.dataset {
            DatasetSource::Synthetic { spec } => generate_synthetic(spec, &self.rng("data"))?,
            DatasetSource::Directory { path } => load_dataset(Path::new(path))?,
        };
        Ok(self.dataset.get_or_init(|| d))
    }

    fn architecture(&self) -> Result<Architecture> {
        let d = self.dataset()?;
        let (h, w, c) = d.image_dims().ok_or_else(|| HarnessError::Config("dataset is empty".into()))?;
        if h != w {
            return Err(HarnessError::Config(format!("images must be square, got {h}x{w}")));
        }
        Ok(Architecture::new(h, c, d.class_count())?)
    }

    fn save_model(&self, params: &ModelParams, name: &str) -> Result<PathBuf> {
        let path = self.dir.path(name);
        checkpoint::save(params, &path, Some(&self.hash), Some(self.config.master_seed))?;
        Ok(path)
    }

    fn load_model(&self, name: &str) -> Result<ModelParams> {
        let path = self.dir.path(name);
        if !path.exists() {
            return Err(HarnessError::MissingArtifact(path));
        }
        let (params, sidecar) = checkpoint::load(&path)?;
        if sidecar.config_hash.as_deref() != Some(self.hash.as_str()) {
            return Err(HarnessError::HashMismatch {
                path,
                expected: self.hash.clone(),
                found: sidecar.config_hash.unwrap_or_else(|| "none".into()),
            });
        }
        Ok(params)
    }

    /// Writes the dataset as image files under `dest`.
    pub fn gen_data(&self, dest: &Path) -> Result<Manifest> {
        let spec = match &self.config.dataset {
            DatasetSource::Synthetic { spec } => Some(spec),
            DatasetSource::Directory { .. } => None,
        };
        let seed = spec.map(|_| (self.config.master_seed, "data"));
        write_dataset(self.dataset()?, dest, spec, seed)
    }

    /// Hold-out split plus the starting weights (pretrained on the source
    /// task when one is configured).
    pub fn split(&self) -> Result<SplitRecord> {
        let dataset = self.dataset()?;
        let arch = self.architecture()?;
        let h = &self.config.holdout;
        let plan = holdout_split_labels(
            &dataset.labels(),
            dataset.class_count(),
            h.test_ratio,
            h.strategy,
            &mut self.rng("holdout"),
        )?;
        let (start, pretrain) = match &self.config.source {
            None => (init_model(&arch, &mut self.rng("init"), InitScheme::Kaiming)?, None),
            Some(src) => {
                let source = generate_synthetic(&src.spec, &self.rng("source"))?;
                let src_arch = Architecture::new(src.spec.side, src.spec.channels, src.spec.classes)?;
                let init = init_model(&src_arch, &mut self.rng("init"), InitScheme::Kaiming)?;
                let pre = pretrain_source(&init, &source, &src.train, dataset.class_count(), &self.rng("pretrain"))
                    .map_err(|e| stage_err("pretrain", e))?;
                let summary = PretrainSummary { source_accuracy: pre.source_accuracy, epochs: pre.history.len() };
                (pre.params, Some(summary))
            }
        };
        self.save_model(&start, START_CKPT)?;
        let record = SplitRecord {
            plan,
            class_names: dataset.class_names().to_vec(),
            class_counts: dataset.class_counts(),
            architecture: arch,
            pretrain,
        };
        self.dir.write_json(SPLIT, &record)?;
        Ok(record)
    }

    fn split_record(&self) -> Result<SplitRecord> {
        self.dir.read_json(SPLIT)
    }

    /// Every view must stay clear of the hold-out test set.
    fn check_clear_of_test(&self, split: &SplitRecord, views: &[&[usize]]) -> Result<()> {
        let test: BTreeSet<usize> = split.plan.test_indices.iter().copied().collect();
        for v in views {
            if let Some(i) = v.iter().find(|i| test.contains(i)) {
                return Err(stage_err("split", format!("test sample {i} leaked into a training or validation view")));
            }
        }
        Ok(())
    }

    /// Repeated split-train-test runs inside the non-test data, per ratio.
    pub fn sample_size(&self) -> Result<Vec<RatioCandidate>> {
        let study = self
            .config
            .ratio_study
            .as_ref()
            .ok_or_else(|| HarnessError::Config("no ratio_study configured".into()))?;
        let split = self.split_record()?;
        let start = self.load_model(START_CKPT)?;
        let dataset = self.dataset()?;
        let labels = dataset.labels();
        let classes = dataset.class_count();
        let rest = &split.plan.rest_indices;
        let root = self.rng("ratio-study");
        let run = |ratio: f64, rng: &mut RngStream| -> cvharness_core::Result<f64> {
            let sub: Vec<usize> = rest.iter().map(|&i| labels[i]).collect();
            let outer = holdout_split_labels(&sub, classes, ratio, study.strategy, &mut rng.child("outer"))?;
            let pool: Vec<usize> = outer.rest_indices.iter().map(|&p| rest[p]).collect();
            let held: Vec<usize> = outer.test_indices.iter().map(|&p| rest[p]).collect();
            let psub: Vec<usize> = pool.iter().map(|&i| labels[i]).collect();
            let inner = holdout_split_labels(&psub, classes, ratio, study.strategy, &mut rng.child("inner"))?;
            let train: Vec<usize> = inner.rest_indices.iter().map(|&p| pool[p]).collect();
            let val: Vec<usize> = inner.test_indices.iter().map(|&p| pool[p]).collect();
            let out = train_loop(&start, dataset, &train, &val, &study.train, &rng.child("train"))?;
            Ok(evaluate(&out.params, dataset, &held)?.accuracy)
        };
        let candidates: Vec<RatioCandidate> = self
            .pool
            .install(|| {
                study
                    .ratios
                    .par_iter()
                    .map(|&r| sample_size_for_ratio(r, &study.sample_size, &root, run))
                    .collect::<cvharness_core::Result<Vec<_>>>()
            })
            .map_err(|e| stage_err("sample-size", e))?;
        for c in &candidates {
            let rows: Vec<Vec<String>> = c
                .sem_curve
                .iter()
                .map(|p| vec![p.n.to_string(), num(c.samples[p.n - 1]), num(p.sem)])
                .collect();
            self.dir.write_csv(&sem_curve_file(c.test_ratio), &["n", "accuracy", "sem"], &rows)?;
        }
        self.dir.write_json(SAMPLE_SIZE, &candidates)?;
        Ok(candidates)
    }

    /// Ratio decision from the study's samples, or from a recorded trail.
    pub fn select_ratio(&self, recorded: Option<RecordedTrail>) -> Result<RatioChoice> {
        let choice = match (recorded, &self.config.ratio_study) {
            (Some(mut trail), _) => {
                let (labels, ratios, means) = (trail.labels.clone(), trail.test_ratios.clone(), trail.means.clone());
                let d = decide_ratio(&labels, &ratios, &means, self.config.alpha, &mut trail)?;
                RatioChoice { validation_ratio: d.selected_ratio, decision: Some(d) }
            }
            (None, Some(_)) => {
                let candidates: Vec<RatioCandidate> = self.dir.read_json(SAMPLE_SIZE)?;
                let d = select_split_ratio(&candidates, self.config.alpha).map_err(|e| stage_err("select-ratio", e))?;
                RatioChoice { validation_ratio: d.selected_ratio, decision: Some(d) }
            }
            (None, None) => RatioChoice { validation_ratio: self.config.holdout.test_ratio, decision: None },
        };
        self.dir.write_json(RATIO_DECISION, &choice)?;
        Ok(choice)
    }

    pub fn lr_find(&self) -> Result<Option<LrFinderRecord>> {
        let Some(stage) = &self.config.lr_finder else {
            return Ok(None);
        };
        let split = self.split_record()?;
        let start = self.load_model(START_CKPT)?;
        let result = find_learning_rate(
            &start,
            self.dataset()?,
            &split.plan.rest_indices,
            &self.config.train,
            &stage.finder,
            &self.rng("lr-finder"),
        )
        .map_err(|e| stage_err("lr-find", e))?;
        let rows: Vec<Vec<String>> =
            result.curve.iter().map(|p| vec![num(p.lr), num(p.loss), num(p.smoothed)]).collect();
        self.dir.write_csv("lr_finder.csv", &["lr", "loss", "smoothed"], &rows)?;
        let record = LrFinderRecord { result, applied: stage.apply };
        self.dir.write_json(LR_FINDER, &record)?;
        Ok(Some(record))
    }

    fn folds(&self, split: &SplitRecord) -> Result<FoldAssignment> {
        if let Some(f) = self.dir.read_json_opt::<FoldAssignment>(FOLDS)? {
            return Ok(f);
        }
        let dataset = self.dataset()?;
        let f = kfold_partition(
            &dataset.labels(),
            dataset.class_count(),
            &split.plan.rest_indices,
            self.config.folds.k,
            self.config.folds.strategy,
            &mut self.rng("folds"),
        )?;
        self.check_clear_of_test(split, &[&f.members])?;
        self.dir.write_json(FOLDS, &f)?;
        Ok(f)
    }

    fn cv(&self, start: &ModelParams, folds: &FoldAssignment, configs: &[TrainConfig]) -> Result<Vec<Vec<FoldEval>>> {
        cross_validate(&self.pool, start, self.dataset()?, folds, configs, &self.rng("train"))
    }

    fn sweep_start(&self) -> Result<TrainConfig> {
        let mut base = self.config.train.clone();
        if self.config.lr_finder.as_ref().is_some_and(|s| s.apply) {
            let record: LrFinderRecord = self.dir.read_json(LR_FINDER)?;
            base.learning_rate = record.result.suggested_lr;
        }
        Ok(base)
    }

    /// Greedy one-parameter sweeps over k-fold CV; each winner is kept for
    /// the following sweeps.
    pub fn sweep(&self) -> Result<SweepStage> {
        let split = self.split_record()?;
        let start = self.load_model(START_CKPT)?;
        let folds = self.folds(&split)?;
        let initial = self.sweep_start()?;
        let mut config = initial.clone();
        let mut results = Vec::new();
        let mut known: Option<(TrainConfig, Option<f64>)> = None;
        for values in &self.config.sweeps {
            let configs: Vec<TrainConfig> = values
                .iter()
                .map(|v| {
                    let mut c = config.clone();
                    v.apply(&mut c);
                    c
                })
                .collect();
            let evals = self.cv(&start, &folds, &configs)?;
            let outcomes: Vec<Vec<FoldOutcome>> = evals.iter().map(|e| accuracies(e)).collect();
            // Same config, same fold streams: an earlier result is reused.
            let baseline = match &known {
                Some((c, m)) if *c == config => *m,
                _ => match configs.iter().position(|c| *c == config) {
                    Some(i) => mean_ok(&outcomes[i]),
                    None => mean_ok(&accuracies(&self.cv(&start, &folds, std::slice::from_ref(&config))?[0])),
                },
            };
            let result = summarize_sweep(values.clone(), &outcomes, baseline).map_err(|e| stage_err("sweep", e))?;
            config = configs[result.winner].clone();
            known = Some((config.clone(), result.winner_row().mean));
            self.write_sweep_csv(&result)?;
            results.push(result);
        }
        let stage = SweepStage { start: initial, results, config };
        self.dir.write_json(SWEEPS, &stage)?;
        Ok(stage)
    }

    fn write_sweep_csv(&self, result: &SweepResult) -> Result<()> {
        let folds = result.rows.first().map_or(0, |r| r.fold_accuracies.len());
        let mut header = vec!["value".to_string(), "mean".into(), "std".into(), "gain_vs_baseline".into(), "winner".into()];
        header.extend((0..folds).map(|f| format!("fold_{f}")));
        let rows: Vec<Vec<String>> = result
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let gain = r.mean.zip(result.baseline).map(|(m, b)| m - b);
                let mut row = vec![r.label.clone(), opt_num(r.mean), opt_num(r.std), opt_num(gain), (i == result.winner).to_string()];
                row.extend(r.fold_accuracies.iter().map(|a| opt_num(*a)));
                row
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        self.dir.write_csv(&sweep_file(&result.param), &header, &rows)?;
        Ok(())
    }

    /// Cumulative unfreeze states from the output layer down; the best state
    /// is kept. Writes the tuned configuration with its fold results.
    pub fn freeze_sweep(&self) -> Result<(Option<FreezeCurve>, Tuned)> {
        let split = self.split_record()?;
        let start = self.load_model(START_CKPT)?;
        let folds = self.folds(&split)?;
        let sweeps: SweepStage = self.dir.read_json(SWEEPS)?;
        let mut config = sweeps.config.clone();
        let states = &self.config.freeze_states;
        let (curve, tuned_folds) = if states.is_empty() {
            let e = self.cv(&start, &folds, std::slice::from_ref(&config))?;
            (None, e.into_iter().next().unwrap_or_default())
        } else {
            let configs: Vec<TrainConfig> = states
                .iter()
                .map(|m| TrainConfig { freeze: *m, ..config.clone() })
                .collect();
            let evals = self.cv(&start, &folds, &configs)?;
            let outcomes: Vec<Vec<FoldOutcome>> = evals.iter().map(|e| accuracies(e)).collect();
            let curve = freezing_curve(states, &outcomes).map_err(|e| stage_err("freeze-sweep", e))?;
            config = configs[curve.best].clone();
            let rows: Vec<Vec<String>> = curve
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut row = vec![i.to_string(), p.label.clone(), opt_num(p.mean), opt_num(p.std), (i == curve.best).to_string()];
                    row.extend(p.fold_accuracies.iter().map(|a| opt_num(*a)));
                    row
                })
                .collect();
            let mut header = vec!["state".to_string(), "trainable".into(), "mean".into(), "std".into(), "best".into()];
            header.extend((0..folds.k).map(|f| format!("fold_{f}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            self.dir.write_csv(FREEZE_CSV, &header, &rows)?;
            self.dir.write_json(FREEZE, &curve)?;
            let best = evals.into_iter().nth(curve.best).unwrap_or_default();
            (Some(curve), best)
        };
        let tuned = Tuned { config, folds: tuned_folds };
        self.dir.write_json(TUNED, &tuned)?;
        Ok((curve, tuned))
    }

    /// Per-family magnitude search against the no-augmentation benchmark.
    pub fn augment_select(&self) -> Result<AugmentStage> {
        let split = self.split_record()?;
        let start = self.load_model(START_CKPT)?;
        let folds = self.folds(&split)?;
        let tuned: Tuned = self.dir.read_json(TUNED)?;
        let aug = &self.config.augmentation;
        let configs: Vec<TrainConfig> =
            aug.candidates.iter().map(|a| TrainConfig { augment: *a, ..tuned.config.clone() }).collect();
        let evals = self.cv(&start, &folds, &configs)?;
        let outcomes: Vec<Vec<FoldOutcome>> = evals.iter().map(|e| accuracies(e)).collect();
        let selection = select_augmentation(&accuracies(&tuned.folds), &aug.candidates, &outcomes, aug.min_gain)
            .map_err(|e| stage_err("augment-select", e))?;
        let stage = AugmentStage {
            benchmark_confusion: pooled_confusion(&tuned.folds),
            row_confusions: evals.iter().map(|e| pooled_confusion(e)).collect(),
            selection,
        };
        let sel = &stage.selection;
        let mut rows = vec![{
            let b = accuracies(&tuned.folds);
            let mut r = vec!["benchmark".to_string(), "{}".into(), num(sel.benchmark_mean), String::new(), String::new(), String::new()];
            r.extend(b.iter().map(|o| o.as_ref().ok().map(|v| num(*v)).unwrap_or_default()));
            r
        }];
        for (i, row) in sel.rows.iter().enumerate() {
            let fam = sel.families.iter().find(|f| f.family == row.family);
            let best = fam.is_some_and(|f| f.row == i);
            let included = fam.is_some_and(|f| f.row == i && f.included);
            let spec = serde_json::to_string(&row.spec).expect("spec serializes");
            let mut r = vec![row.family.name().to_string(), spec, opt_num(row.mean), opt_num(row.std), best.to_string(), included.to_string()];
            r.extend(row.fold_accuracies.iter().map(|a| opt_num(*a)));
            rows.push(r);
        }
        let mut header = vec!["family".to_string(), "spec".into(), "mean".into(), "std".into(), "family_best".into(), "included".into()];
        header.extend((0..folds.k).map(|f| format!("fold_{f}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        self.dir.write_csv(AUGMENT_CSV, &header, &rows)?;
        self.dir.write_json(AUGMENT, &stage)?;
        Ok(stage)
    }

    /// Resolved training configuration for a fit stage.
    pub fn fit_config(&self, stage: FitStage) -> Result<TrainConfig> {
        let tuned: Tuned = self.dir.read_json(TUNED)?;
        Ok(match stage {
            FitStage::Benchmark => tuned.config,
            FitStage::Final => {
                let aug: AugmentStage = self.dir.read_json(AUGMENT)?;
                TrainConfig { augment: aug.selection.chosen, ..tuned.config }
            }
        })
    }

    /// Trains on the non-test data with a validation hold-out at the selected
    /// ratio. Both fits use the same split and training stream.
    pub fn train_stage(&self, stage: FitStage) -> Result<FitRecord> {
        let split = self.split_record()?;
        let start = self.load_model(START_CKPT)?;
        let choice: RatioChoice = self.dir.read_json(RATIO_DECISION)?;
        let config = self.fit_config(stage)?;
        let dataset = self.dataset()?;
        let (train, val) = split_members(
            &dataset.labels(),
            dataset.class_count(),
            &split.plan.rest_indices,
            choice.validation_ratio,
            self.config.holdout.strategy,
            &mut self.rng("fit/split"),
        )?;
        self.check_clear_of_test(&split, &[&train, &val])?;
        let out = train_loop(&start, dataset, &train, &val, &config, &self.rng("fit/train"))
            .map_err(|e| stage_err(stage.name(), e))?;
        self.save_model(&out.params, &stage.checkpoint())?;
        let rows: Vec<Vec<String>> = out
            .history
            .iter()
            .map(|r| vec![r.epoch.to_string(), num(r.train_loss), num(r.val_accuracy), num(r.lr)])
            .collect();
        self.dir.write_csv(&stage.history_file(), &["epoch", "train_loss", "val_accuracy", "lr"], &rows)?;
        let record = FitRecord {
            stage,
            config,
            validation_ratio: choice.validation_ratio,
            train_count: train.len(),
            val_count: val.len(),
            best_epoch: out.best_epoch,
            best_val_accuracy: out.best_val_accuracy,
            epochs_run: out.history.len(),
            history: out.history,
        };
        self.dir.write_json(&stage.fit_file(), &record)?;
        Ok(record)
    }

    /// The only place the test set is read.
    pub fn evaluate_stage(&self, stage: FitStage) -> Result<TestEvaluation> {
        let split = self.split_record()?;
        let params = self.load_model(&stage.checkpoint())?;
        let evaluation = evaluate(&params, self.dataset()?, &split.plan.test_indices)?;
        self.test_uses.fetch_add(1, Ordering::SeqCst);
        let record = TestEvaluation { stage, test_count: split.plan.test_indices.len(), evaluation };
        self.dir.write_json(&stage.confusion_file(), &record)?;
        Ok(record)
    }

    /// Assembles `report.json` from whatever artifacts exist and renders it.
    pub fn report(&self) -> Result<Report> {
        let failure: Option<StageFailure> = self.dir.read_json_opt(FAILURE)?;
        let report = build_report(self, failure)?;
        self.write_report(&report)?;
        Ok(report)
    }

    fn write_report(&self, report: &Report) -> Result<()> {
        self.dir.write_json(REPORT, report)?;
        let rendered = render_report(report);
        self.dir.write_bytes(REPORT_TXT, rendered.text.as_bytes())?;
        for (name, body) in &rendered.csv {
            self.dir.write_bytes(name, (self.dir.csv_header_line() + body).as_bytes())?;
        }
        Ok(())
    }

    /// Every stage in order. A failing stage leaves `failure.json` and a
    /// partial report behind.
    pub fn run_all(&self) -> Result<Report> {
        match self.run_stages() {
            Ok(()) => self.report(),
            Err((stage, e)) => {
                let failure = StageFailure { stage: stage.to_string(), message: e.to_string() };
                self.dir.write_json(FAILURE, &failure)?;
                if let Ok(partial) = build_report(self, Some(failure)) {
                    self.write_report(&partial)?;
                }
                Err(match e {
                    HarnessError::Stage { .. } => e,
                    HarnessError::Config(_) => e,
                    other => stage_err(stage, other),
                })
            }
        }
    }

    fn run_stages(&self) -> std::result::Result<(), (&'static str, HarnessError)> {
        fn at<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, (&'static str, HarnessError)> {
            r.map_err(|e| (stage, e))
        }
        at("split", self.split())?;
        if self.config.ratio_study.is_some() {
            at("sample-size", self.sample_size())?;
        }
        at("select-ratio", self.select_ratio(None))?;
        at("lr-find", self.lr_find())?;
        at("sweep", self.sweep())?;
        at("freeze-sweep", self.freeze_sweep())?;
        at("train benchmark", self.train_stage(FitStage::Benchmark))?;
        at("evaluate benchmark", self.evaluate_stage(FitStage::Benchmark))?;
        at("augment-select", self.augment_select())?;
        at("train final", self.train_stage(FitStage::Final))?;
        at("evaluate final", self.evaluate_stage(FitStage::Final))?;
        Ok(())
    }
}

/// `run_all` on a fresh campaign.
pub fn run_full_pipeline(config: CampaignConfig, out: &Path) -> Result<Report> {
    Campaign::new(config, out)?.run_all()
}

/// Compact label for an augmentation spec.
pub fn spec_label(spec: &AugmentSpec) -> String {
    let mut parts = Vec::new();
    if spec.horizontal_flip {
        parts.push("hflip".to_string());
    }
    if spec.vertical_flip {
        parts.push("vflip".to_string());
    }
    for (name, v) in [
        ("rotation", spec.rotation_range),
        ("shear", spec.shear_range),
        ("zoom", spec.zoom_range),
        ("brightness", spec.brightness_range),
    ] {
        if v > 0.0 {
            parts.push(format!("{name}={}", num(v)));
        }
    }
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(" ")
    }
}
