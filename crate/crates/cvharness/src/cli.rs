//! Command-line driver: one subcommand per campaign stage plus `run-all`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use cvharness_core::harness::RecordedTrail;

use crate::config::{CampaignConfig, PRESETS};
use crate::error::{HarnessError, Result};
use crate::pipeline::{Campaign, FitStage};
use crate::report::{render_report, Report};

pub const OUT_ENV: &str = "CVHARNESS_OUT";
pub const DEFAULT_OUT: &str = "cvharness-out";

#[derive(Debug, Parser)]
#[command(name = "cvharness", version, about = "Transfer-learning experiment harness for image classifiers")]
pub struct Cli {
    /// Campaign config file (JSON).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in config: table1 or desk.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Input file for stages that accept one (recorded trail, report).
    #[arg(long, global = true)]
    pub stage_input: Option<PathBuf>,
    /// Print the resolved config and stop.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the dataset as PPM/PGM files (default: <out>/data).
    GenData {
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Hold-out test split and starting weights.
    Split,
    /// Repeated runs per candidate test ratio until the SEM settles.
    SampleSize,
    /// Statistical choice of the split ratio.
    SelectRatio,
    /// Learning-rate range test.
    LrFind,
    /// Greedy one-parameter sweeps over k-fold CV.
    Sweep,
    /// Cumulative unfreezing from the output layer down.
    FreezeSweep,
    /// Per-family augmentation search against the benchmark.
    AugmentSelect,
    /// Train the benchmark or final model.
    Train {
        #[arg(long, value_parser = ["benchmark", "final"])]
        stage: String,
    },
    /// Score a trained model on the hold-out test set.
    Evaluate {
        #[arg(long, value_parser = ["benchmark", "final"])]
        stage: String,
    },
    /// Build report.json from the artifacts (or render --stage-input) and print it.
    Report,
    /// Every stage in order.
    RunAll,
}

fn resolve_config(cli: &Cli) -> Result<CampaignConfig> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), _) => CampaignConfig::load(path)?,
        (None, Some(name)) => CampaignConfig::preset(name)?,
        (None, None) => {
            return Err(HarnessError::Config(format!("pass --config <file> or --preset <{}>", PRESETS.join("|"))))
        }
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(p) = cli.parallelism {
        config.parallelism = p;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli, config: &CampaignConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn read_input<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(HarnessError::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn say(out: &mut dyn Write, text: &str) {
    let _ = writeln!(out, "{text}");
}

fn stage(s: &str) -> FitStage {
    FitStage::parse(s).expect("clap restricts the stage names")
}

/// Runs a parsed command, writing human output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if let (Command::Report, Some(path)) = (&cli.command, &cli.stage_input) {
        if !path.exists() {
            return Err(HarnessError::MissingArtifact(path.clone()));
        }
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let report = Report::from_json(&text)?;
        say(out, &render_report(&report).text);
        return Ok(());
    }
    let config = resolve_config(cli)?;
    if cli.dry_run {
        say(out, &config.to_json());
        if let Command::Train { .. } = cli.command {
            say(out, &format!("train config before sweeps: {}", serde_json::to_string(&config.train).expect("serializes")));
        }
        return Ok(());
    }
    let dir = out_dir(cli, &config);
    let campaign = Campaign::new(config, &dir)?;
    match &cli.command {
        Command::GenData { dest } => {
            let dest = dest.clone().unwrap_or_else(|| dir.join("data"));
            let m = campaign.gen_data(&dest)?;
            let n: usize = m.classes.values().map(Vec::len).sum();
            say(out, &format!("wrote {n} images in {} classes to {}", m.classes.len(), dest.display()));
        }
        Command::Split => {
            let s = campaign.split()?;
            say(out, &format!("test {} / rest {}", s.plan.test_indices.len(), s.plan.rest_indices.len()));
            if let Some(p) = s.pretrain {
                say(out, &format!("source-task accuracy {}", p.source_accuracy));
            }
        }
        Command::SampleSize => {
            for c in campaign.sample_size()? {
                say(out, &format!("{}: n = {} converged = {}", c.label, c.chosen_n, c.converged));
            }
        }
        Command::SelectRatio => {
            let trail = match &cli.stage_input {
                Some(p) => Some(read_input::<RecordedTrail>(p)?),
                None => None,
            };
            let choice = campaign.select_ratio(trail)?;
            match &choice.decision {
                Some(d) => say(out, &format!("candidates {:?}; selected {}", d.candidates, d.selected)),
                None => say(out, &format!("no ratio study; validation ratio {}", choice.validation_ratio)),
            }
        }
        Command::LrFind => match campaign.lr_find()? {
            Some(r) => say(out, &format!("suggested learning rate {}", r.result.suggested_lr)),
            None => say(out, "no lr_finder configured"),
        },
        Command::Sweep => {
            let s = campaign.sweep()?;
            if s.results.is_empty() {
                say(out, "no sweeps run");
            }
            for r in &s.results {
                say(out, &format!("{}: winner {}", r.param, r.winner_row().label));
            }
        }
        Command::FreezeSweep => {
            let (curve, _) = campaign.freeze_sweep()?;
            match curve {
                Some(c) => say(out, &format!("best trainable set: {}", c.points[c.best].label)),
                None => say(out, "freezing sweep skipped"),
            }
        }
        Command::AugmentSelect => {
            let a = campaign.augment_select()?;
            say(out, &format!("chosen augmentation: {}", crate::pipeline::spec_label(&a.selection.chosen)));
        }
        Command::Train { stage: s } => {
            let st = stage(s);
            let cfg = campaign.fit_config(st)?;
            say(out, &format!("config: {}", serde_json::to_string(&cfg).expect("serializes")));
            let r = campaign.train_stage(st)?;
            say(out, &format!("{}: best epoch {} validation accuracy {}", st.name(), r.best_epoch, r.best_val_accuracy));
        }
        Command::Evaluate { stage: s } => {
            let st = stage(s);
            let e = campaign.evaluate_stage(st)?;
            say(out, &format!("{} test accuracy {}", st.name(), e.evaluation.accuracy));
        }
        Command::Report => {
            let r = campaign.report()?;
            say(out, &render_report(&r).text);
        }
        Command::RunAll => {
            let r = campaign.run_all()?;
            say(
                out,
                &format!(
                    "benchmark test accuracy {} / final {}; artifacts in {}",
                    r.benchmark_accuracy().map_or("-".into(), |a| a.to_string()),
                    r.final_accuracy().map_or("-".into(), |a| a.to_string()),
                    dir.display()
                ),
            );
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
