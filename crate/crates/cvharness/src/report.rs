//! Campaign report: a JSON document assembled from the stage artifacts and
//! its text + CSV rendering.

use std::fmt::Write as _;

use cvharness_core::harness::{AugSelection, FreezeCurve, RatioCandidate, SweepResult};
use cvharness_core::train::{describe, ConfusionMatrix, Evaluation};
use serde::{Deserialize, Serialize};

use crate::artifacts::{csv_body, num, opt_num};
use crate::config::CampaignConfig;
use crate::error::{HarnessError, Result};
use crate::pipeline::{
    accuracies, spec_label, AugmentStage, Campaign, FitRecord, FitStage, LrFinderRecord, RatioChoice, SplitRecord,
    StageFailure, SweepStage, TestEvaluation, Tuned, AUGMENT, FREEZE, LR_FINDER, RATIO_DECISION, SAMPLE_SIZE, SPLIT,
    SWEEPS, TUNED,
};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSummary {
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub test_ratio: f64,
    pub test_count: usize,
    pub rest_count: usize,
    pub stream_key: String,
    pub source_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub run: String,
    pub validation_ratio: f64,
    pub train_count: usize,
    pub val_count: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSummary {
    pub test_count: usize,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSummary {
    pub selection: AugSelection,
    pub benchmark_confusion: Option<ConfusionMatrix>,
    pub row_confusions: Vec<Option<ConfusionMatrix>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub report_version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: CampaignConfig,
    pub failure: Option<StageFailure>,
    pub split: Option<SplitSummary>,
    pub sample_size: Option<Vec<RatioCandidate>>,
    pub ratio: Option<RatioChoice>,
    pub lr_finder: Option<LrFinderRecord>,
    pub sweeps: Vec<SweepResult>,
    pub freeze_curve: Option<FreezeCurve>,
    /// Mean fold accuracies of the tuned configuration.
    pub tuned_run: Option<String>,
    pub tuned_fold_accuracies: Vec<Option<f64>>,
    pub benchmark_fit: Option<FitSummary>,
    pub benchmark_test: Option<TestSummary>,
    pub augmentation: Option<AugmentSummary>,
    pub final_fit: Option<FitSummary>,
    pub final_test: Option<TestSummary>,
    /// Number of times a model was scored on the hold-out test set.
    pub test_evaluations: usize,
}

impl Report {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("report is not JSON: {e}")))?;
        let data = value.get("data").cloned().unwrap_or(value);
        let report: Report =
            serde_json::from_value(data).map_err(|e| HarnessError::Config(format!("report schema mismatch: {e}")))?;
        if report.report_version != REPORT_VERSION {
            return Err(HarnessError::Config(format!("unsupported report version {}", report.report_version)));
        }
        Ok(report)
    }

    pub fn benchmark_accuracy(&self) -> Option<f64> {
        self.benchmark_test.as_ref().map(|t| t.evaluation.accuracy)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.final_test.as_ref().map(|t| t.evaluation.accuracy)
    }
}

fn fit_summary(f: FitRecord) -> FitSummary {
    FitSummary {
        run: describe(&f.config),
        validation_ratio: f.validation_ratio,
        train_count: f.train_count,
        val_count: f.val_count,
        best_epoch: f.best_epoch,
        best_val_accuracy: f.best_val_accuracy,
        epochs_run: f.epochs_run,
    }
}

fn test_summary(t: TestEvaluation) -> TestSummary {
    TestSummary { test_count: t.test_count, evaluation: t.evaluation }
}

/// Reads every artifact that exists; missing stages stay empty.
pub fn build_report(campaign: &Campaign, failure: Option<StageFailure>) -> Result<Report> {
    let dir = &campaign.dir;
    let split: Option<SplitRecord> = dir.read_json_opt(SPLIT)?;
    let tuned: Option<Tuned> = dir.read_json_opt(TUNED)?;
    let sweeps: Option<SweepStage> = dir.read_json_opt(SWEEPS)?;
    let augment: Option<AugmentStage> = dir.read_json_opt(AUGMENT)?;
    let bench_test: Option<TestEvaluation> = dir.read_json_opt(&FitStage::Benchmark.confusion_file())?;
    let final_test: Option<TestEvaluation> = dir.read_json_opt(&FitStage::Final.confusion_file())?;
    let test_evaluations = bench_test.is_some() as usize + final_test.is_some() as usize;
    Ok(Report {
        report_version: REPORT_VERSION,
        config_hash: campaign.hash.clone(),
        master_seed: campaign.config.master_seed,
        config: campaign.config.canonical(),
        failure,
        split: split.map(|s| SplitSummary {
            test_count: s.plan.test_indices.len(),
            rest_count: s.plan.rest_indices.len(),
            test_ratio: s.plan.test_ratio,
            stream_key: s.plan.seed.stream_key,
            class_names: s.class_names,
            class_counts: s.class_counts,
            source_accuracy: s.pretrain.map(|p| p.source_accuracy),
        }),
        sample_size: dir.read_json_opt(SAMPLE_SIZE)?,
        ratio: dir.read_json_opt(RATIO_DECISION)?,
        lr_finder: dir.read_json_opt(LR_FINDER)?,
        sweeps: sweeps.map(|s| s.results).unwrap_or_default(),
        freeze_curve: dir.read_json_opt(FREEZE)?,
        tuned_run: tuned.as_ref().map(|t| describe(&t.config)),
        tuned_fold_accuracies: tuned
            .as_ref()
            .map(|t| accuracies(&t.folds).into_iter().map(|o| o.ok()).collect())
            .unwrap_or_default(),
        benchmark_fit: dir.read_json_opt(&FitStage::Benchmark.fit_file())?.map(fit_summary),
        benchmark_test: bench_test.map(test_summary),
        augmentation: augment.map(|a| AugmentSummary {
            selection: a.selection,
            benchmark_confusion: a.benchmark_confusion,
            row_confusions: a.row_confusions,
        }),
        final_fit: dir.read_json_opt(&FitStage::Final.fit_file())?.map(fit_summary),
        final_test: final_test.map(test_summary),
        test_evaluations,
    })
}

pub struct RenderedReport {
    pub text: String,
    /// `(file name, CSV body)` pairs.
    pub csv: Vec<(String, String)>,
}

fn pct(x: f64) -> String {
    format!("{}%", num(x * 100.0))
}

fn opt_pct(x: Option<f64>) -> String {
    x.map(pct).unwrap_or_else(|| "-".into())
}

/// Fixed-width text table.
fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        parts.join("  ").trim_end().to_string()
    };
    let _ = writeln!(out, "  {}", line(header));
    let _ = writeln!(out, "  {}", width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for r in rows {
        let _ = writeln!(out, "  {}", line(r));
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn confusion_rows(m: &ConfusionMatrix, names: &[String]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["true \\ predicted".to_string()];
    header.extend(names.iter().cloned());
    header.push("row_sum".into());
    let sums = m.row_sums();
    let mut rows: Vec<Vec<String>> = m
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = vec![names.get(i).cloned().unwrap_or_else(|| i.to_string())];
            r.extend(row.iter().map(u64::to_string));
            r.push(sums[i].to_string());
            r
        })
        .collect();
    let mut total = vec!["total".to_string()];
    total.extend((0..m.classes()).map(|j| m.counts.iter().map(|r| r[j]).sum::<u64>().to_string()));
    total.push(m.total().to_string());
    rows.push(total);
    (header, rows)
}

fn render_confusion(out: &mut String, m: &ConfusionMatrix, names: &[String]) {
    let (h, r) = confusion_rows(m, names);
    table(out, &h, &r);
}

fn class_names(report: &Report, classes: usize) -> Vec<String> {
    match &report.split {
        Some(s) if s.class_names.len() == classes => s.class_names.clone(),
        _ => (0..classes).map(|i| format!("class_{i}")).collect(),
    }
}

fn render_test(out: &mut String, title: &str, fit: Option<&FitSummary>, test: Option<&TestSummary>, report: &Report) {
    let _ = writeln!(out, "\n== {title} ==");
    match fit {
        Some(f) => {
            let _ = writeln!(out, "  run: {}", f.run);
            let _ = writeln!(
                out,
                "  train {} / validation {} (ratio {}), best epoch {} of {}, validation accuracy {}",
                f.train_count,
                f.val_count,
                num(f.validation_ratio),
                f.best_epoch,
                f.epochs_run,
                num(f.best_val_accuracy)
            );
        }
        None => {
            let _ = writeln!(out, "  not trained");
        }
    }
    match test {
        Some(t) => {
            let e = &t.evaluation;
            let _ = writeln!(out, "  test accuracy {} ({}) on {} samples", num(e.accuracy), pct(e.accuracy), t.test_count);
            let names = class_names(report, e.confusion.classes());
            render_confusion(out, &e.confusion, &names);
        }
        None => {
            let _ = writeln!(out, "  not evaluated");
        }
    }
}

/// Text tables for every section plus CSV files for the tabular parts.
/// Every number in the report appears in the text.
pub fn render_report(report: &Report) -> RenderedReport {
    let mut out = String::new();
    let mut csv = Vec::new();
    let _ = writeln!(out, "campaign report");
    let _ = writeln!(out, "  config_hash {}", report.config_hash);
    let _ = writeln!(out, "  master_seed {}", report.master_seed);
    let _ = writeln!(out, "  report_version {}", report.report_version);
    if let Some(f) = &report.failure {
        let _ = writeln!(out, "  FAILED at stage `{}`: {}", f.stage, f.message);
    }

    let _ = writeln!(out, "\n== data and hold-out ==");
    match &report.split {
        Some(s) => {
            let rows: Vec<Vec<String>> =
                s.class_names.iter().zip(&s.class_counts).map(|(n, c)| vec![n.clone(), c.to_string()]).collect();
            table(&mut out, &strings(&["class", "samples"]), &rows);
            let _ = writeln!(
                out,
                "  test ratio {} -> {} test / {} rest (stream {})",
                num(s.test_ratio),
                s.test_count,
                s.rest_count,
                s.stream_key
            );
            if let Some(a) = s.source_accuracy {
                let _ = writeln!(out, "  source-task accuracy after pretraining {}", num(a));
            }
        }
        None => {
            let _ = writeln!(out, "  not run");
        }
    }

    let _ = writeln!(out, "\n== sample size per ratio ==");
    match &report.sample_size {
        Some(cands) => {
            let mut csv_rows = Vec::new();
            for c in cands {
                let _ = writeln!(
                    out,
                    "  ratio {} ({}): n = {}{}",
                    c.label,
                    num(c.test_ratio),
                    c.chosen_n,
                    if c.converged { "" } else { " (SEM threshold not reached)" }
                );
                let rows: Vec<Vec<String>> = c
                    .samples
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let sem = c.sem_curve.iter().find(|p| p.n == i + 1).map(|p| num(p.sem)).unwrap_or_else(|| "-".into());
                        vec![(i + 1).to_string(), num(*a), sem]
                    })
                    .collect();
                table(&mut out, &strings(&["n", "accuracy", "sem"]), &rows);
                for r in rows {
                    csv_rows.push([vec![c.label.clone()], r].concat());
                }
            }
            csv.push(("report_sample_size.csv".to_string(), csv_body(&["ratio", "n", "accuracy", "sem"], &csv_rows)));
        }
        None => {
            let _ = writeln!(out, "  not run");
        }
    }

    let _ = writeln!(out, "\n== ratio decision ==");
    match &report.ratio {
        Some(choice) => {
            if let Some(d) = &choice.decision {
                let _ = writeln!(out, "  alpha {}, branch {:?}, top group {}", num(d.alpha), d.branch, d.top);
                let rows: Vec<Vec<String>> = d
                    .trail
                    .iter()
                    .map(|t| {
                        let step = serde_json::to_value(&t.step).expect("step serializes");
                        let what = step
                            .as_object()
                            .map(|o| o.iter().map(|(k, v)| format!("{k}={}", v.as_str().unwrap_or(&v.to_string()))).collect::<Vec<_>>().join(" "))
                            .unwrap_or_default();
                        match &t.result {
                            Some(r) => vec![
                                what,
                                r.test.clone(),
                                if r.statistic.is_nan() { "-".into() } else { num(r.statistic) },
                                num(r.p_value),
                                r.reject_null.to_string(),
                                num(r.alpha),
                            ],
                            None => vec![what, "error".into(), "-".into(), "-".into(), "-".into(), t.error.clone().unwrap_or_default()],
                        }
                    })
                    .collect();
                table(&mut out, &strings(&["step", "test", "statistic", "p", "reject", "alpha/error"]), &rows);
                let _ = writeln!(out, "  candidates {:?}, selected {} ({})", d.candidates, d.selected, num(d.selected_ratio));
            } else {
                let _ = writeln!(out, "  no ratio study; hold-out ratio reused");
            }
            let _ = writeln!(out, "  validation ratio for the benchmark and final fits: {}", num(choice.validation_ratio));
        }
        None => {
            let _ = writeln!(out, "  not run");
        }
    }

    let _ = writeln!(out, "\n== learning-rate finder ==");
    match &report.lr_finder {
        Some(lr) => {
            let _ = writeln!(
                out,
                "  suggested lr {} (point {}){}",
                num(lr.result.suggested_lr),
                lr.result.best_index,
                if lr.applied { ", applied to the sweeps" } else { ", advisory" }
            );
            let rows: Vec<Vec<String>> =
                lr.result.curve.iter().map(|p| vec![num(p.lr), num(p.loss), num(p.smoothed)]).collect();
            table(&mut out, &strings(&["lr", "loss", "smoothed"]), &rows);
        }
        None => {
            let _ = writeln!(out, "  not run");
        }
    }

    let _ = writeln!(out, "\n== parameter sweeps ==");
    if report.sweeps.is_empty() {
        let _ = writeln!(out, "  no sweeps run");
    } else {
        let mut csv_rows = Vec::new();
        for s in &report.sweeps {
            let _ = writeln!(
                out,
                "  {}: baseline {}, winner {}, increase {}",
                s.param,
                opt_num(s.baseline),
                s.winner_row().label,
                opt_pct(s.gain())
            );
            let rows: Vec<Vec<String>> = s
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let gain = r.mean.zip(s.baseline).map(|(m, b)| m - b);
                    let folds: Vec<String> = r.fold_accuracies.iter().map(|a| opt_num(*a)).collect();
                    vec![
                        r.label.clone(),
                        opt_num(r.mean),
                        opt_num(r.std),
                        opt_num(gain),
                        if i == s.winner { "*".into() } else { String::new() },
                        folds.join(" "),
                        r.failures.join("; "),
                    ]
                })
                .collect();
            table(&mut out, &strings(&["value", "mean", "std", "gain", "win", "folds", "failures"]), &rows);
            for r in rows {
                csv_rows.push([vec![s.param.clone()], r].concat());
            }
        }
        csv.push((
            "report_sweeps.csv".to_string(),
            csv_body(&["param", "value", "mean", "std", "gain", "winner", "folds", "failures"], &csv_rows),
        ));
    }

    let _ = writeln!(out, "\n== freezing sweep ==");
    match &report.freeze_curve {
        Some(c) => {
            let rows: Vec<Vec<String>> = c
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let folds: Vec<String> = p.fold_accuracies.iter().map(|a| opt_num(*a)).collect();
                    vec![
                        p.label.clone(),
                        opt_num(p.mean),
                        opt_num(p.std),
                        if i == c.best { "*".into() } else { String::new() },
                        folds.join(" "),
                    ]
                })
                .collect();
            table(&mut out, &strings(&["trainable", "mean", "std", "best", "folds"]), &rows);
            csv.push(("report_freeze.csv".to_string(), csv_body(&["trainable", "mean", "std", "best", "folds"], &rows)));
        }
        None => {
            let _ = writeln!(out, "  not run");
        }
    }
    if let Some(run) = &report.tuned_run {
        let folds: Vec<String> = report.tuned_fold_accuracies.iter().map(|a| opt_num(*a)).collect();
        let _ = writeln!(out, "  tuned run: {run}; fold accuracies {}", folds.join(" "));
    }

    render_test(&mut out, "benchmark", report.benchmark_fit.as_ref(), report.benchmark_test.as_ref(), report);

    let _ = writeln!(out, "\n== augmentation selection ==");
    match &report.augmentation {
        Some(a) => {
            let s = &a.selection;
            let _ = writeln!(out, "  benchmark mean {}, min gain {}", num(s.benchmark_mean), num(s.min_gain));
            let rows: Vec<Vec<String>> = s
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let fam = s.families.iter().find(|f| f.family == r.family);
                    let folds: Vec<String> = r.fold_accuracies.iter().map(|x| opt_num(*x)).collect();
                    vec![
                        r.family.name().to_string(),
                        spec_label(&r.spec),
                        opt_num(r.mean),
                        opt_num(r.std),
                        opt_num(r.mean.map(|m| m - s.benchmark_mean)),
                        if fam.is_some_and(|f| f.row == i) { "*".into() } else { String::new() },
                        folds.join(" "),
                    ]
                })
                .collect();
            table(&mut out, &strings(&["family", "spec", "mean", "std", "vs benchmark", "best", "folds"]), &rows);
            csv.push((
                "report_augment.csv".to_string(),
                csv_body(&["family", "spec", "mean", "std", "vs_benchmark", "family_best", "folds"], &rows),
            ));
            let fam_rows: Vec<Vec<String>> = s
                .families
                .iter()
                .map(|f| vec![f.family.name().to_string(), f.row.to_string(), num(f.mean), f.included.to_string()])
                .collect();
            table(&mut out, &strings(&["family", "best row", "mean", "included"]), &fam_rows);
            let _ = writeln!(out, "  chosen spec: {}", spec_label(&s.chosen));
            if let Some(bench) = &a.benchmark_confusion {
                let names = class_names(report, bench.classes());
                let mut header = vec!["class".to_string(), "benchmark".into()];
                let mut cols = vec![bench.per_class_error()];
                for f in &s.families {
                    if let Some(Some(m)) = a.row_confusions.get(f.row) {
                        header.push(f.family.name().to_string());
                        cols.push(m.per_class_error());
                    }
                }
                let _ = writeln!(out, "  validation error per class (pooled over folds):");
                let rows: Vec<Vec<String>> = names
                    .iter()
                    .enumerate()
                    .map(|(i, n)| {
                        let mut r = vec![n.clone()];
                        r.extend(cols.iter().map(|c| opt_pct(c[i])));
                        r
                    })
                    .collect();
                table(&mut out, &header, &rows);
                let _ = writeln!(out, "  benchmark validation confusion (pooled):");
                render_confusion(&mut out, bench, &names);
                for (i, m) in a.row_confusions.iter().enumerate() {
                    if let Some(m) = m {
                        let _ = writeln!(out, "  {} {} validation confusion (pooled):", s.rows[i].family.name(), spec_label(&s.rows[i].spec));
                        render_confusion(&mut out, m, &names);
                    }
                }
            }
        }
        None => {
            let _ = writeln!(out, "  not run");
        }
    }

    render_test(&mut out, "final", report.final_fit.as_ref(), report.final_test.as_ref(), report);

    let mut conf_csv = Vec::new();
    for (stage, t) in [("benchmark", &report.benchmark_test), ("final", &report.final_test)] {
        if let Some(t) = t {
            let names = class_names(report, t.evaluation.confusion.classes());
            let (_, rows) = confusion_rows(&t.evaluation.confusion, &names);
            for r in rows {
                conf_csv.push([vec![stage.to_string()], r].concat());
            }
        }
    }
    if let (Some(b), Some(f)) = (&report.benchmark_test, &report.final_test) {
        let names = class_names(report, b.evaluation.confusion.classes());
        let _ = writeln!(out, "\n== benchmark -> final ==");
        let _ = writeln!(
            out,
            "  test accuracy {} -> {} ({})",
            pct(b.evaluation.accuracy),
            pct(f.evaluation.accuracy),
            pct(f.evaluation.accuracy - b.evaluation.accuracy)
        );
        let rows: Vec<Vec<String>> = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let (eb, ef) = (b.evaluation.per_class_error[i], f.evaluation.per_class_error[i]);
                vec![n.clone(), opt_pct(eb), opt_pct(ef), opt_pct(eb.zip(ef).map(|(x, y)| y - x))]
            })
            .collect();
        table(&mut out, &strings(&["class", "benchmark error", "final error", "change"]), &rows);
    }
    if !conf_csv.is_empty() {
        let width = conf_csv.iter().map(Vec::len).max().unwrap_or(0);
        let mut header = vec!["stage".to_string(), "true".into()];
        header.extend((0..width.saturating_sub(3)).map(|j| format!("pred_{j}")));
        header.push("row_sum".into());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        csv.push(("report_confusion.csv".to_string(), csv_body(&header, &conf_csv)));
    }

    let _ = writeln!(out, "\n== test-set use ==");
    let _ = writeln!(out, "  evaluations on the hold-out test set: {}", report.test_evaluations);

    let _ = writeln!(out, "\n== configuration ==");
    let config = serde_json::to_string_pretty(&report.config).expect("config serializes");
    for line in config.lines() {
        let _ = writeln!(out, "  {line}");
    }
    RenderedReport { text: out, csv }
}
