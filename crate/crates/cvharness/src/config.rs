//! Campaign configuration: JSON, versioned, unknown keys rejected.

use std::fs;
use std::path::Path;

use cvharness_core::augment::AugmentSpec;
use cvharness_core::dataset::{PoseSpec, SyntheticSpec};
use cvharness_core::harness::{AugFamily, ParamValue, SampleSizeConfig};
use cvharness_core::model::{unfreeze_sequence, FreezeMask, HeadKind};
use cvharness_core::optim::OptimizerSpec;
use cvharness_core::schedule::{LrFinderConfig, ScheduleSpec};
use cvharness_core::split::SamplingStrategy;
use cvharness_core::train::{Precision, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic { spec: SyntheticSpec },
    Directory { path: String },
}

/// Source task used to pretrain the network before any target training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceTask {
    pub spec: SyntheticSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutConfig {
    pub test_ratio: f64,
    pub strategy: SamplingStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioStudyConfig {
    pub ratios: Vec<f64>,
    pub strategy: SamplingStrategy,
    pub sample_size: SampleSizeConfig,
    /// Training used for each repetition of the study.
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldConfig {
    pub k: usize,
    pub strategy: SamplingStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Single-family candidates; the benchmark (no augmentation) is implicit.
    pub candidates: Vec<AugmentSpec>,
    #[serde(default)]
    pub min_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrFinderStage {
    pub finder: LrFinderConfig,
    /// Replace the base learning rate with the suggestion before sweeping.
    #[serde(default)]
    pub apply: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub version: u32,
    pub master_seed: u64,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub source: Option<SourceTask>,
    pub holdout: HoldoutConfig,
    /// Skipped when absent; the hold-out ratio is then used for validation too.
    #[serde(default)]
    pub ratio_study: Option<RatioStudyConfig>,
    pub alpha: f64,
    pub folds: FoldConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub lr_finder: Option<LrFinderStage>,
    /// Greedy one-parameter sweeps, run in this order.
    #[serde(default)]
    pub sweeps: Vec<Vec<ParamValue>>,
    /// Cumulative unfreeze states for the freezing sweep; empty skips it.
    #[serde(default = "unfreeze_sequence")]
    pub freeze_states: Vec<FreezeMask>,
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn check_ratio(r: f64, what: &str) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be in (0, 1), got {r}")))
    }
}

fn check_train(t: &TrainConfig, what: &str) -> Result<()> {
    t.validate().map_err(|e| invalid(format!("{what}: {e}")))
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CampaignConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        if let DatasetSource::Synthetic { spec } = &self.dataset {
            if spec.side % 4 != 0 {
                return Err(invalid(format!("synthetic side must be a multiple of 4, got {}", spec.side)));
            }
        }
        if let Some(src) = &self.source {
            check_train(&src.train, "source.train")?;
            if let DatasetSource::Synthetic { spec } = &self.dataset {
                if src.spec.side != spec.side || src.spec.channels != spec.channels {
                    return Err(invalid("source images must match the target image size and channels"));
                }
            }
        }
        check_ratio(self.holdout.test_ratio, "holdout.test_ratio")?;
        if let Some(study) = &self.ratio_study {
            if study.ratios.len() < 2 {
                return Err(invalid("ratio_study.ratios needs at least 2 ratios"));
            }
            for &r in &study.ratios {
                check_ratio(r, "ratio_study.ratios")?;
                if r >= 0.5 {
                    return Err(invalid(format!("ratio {r} leaves no training data next to an equal validation split")));
                }
            }
            study.sample_size.validate().map_err(|e| invalid(format!("ratio_study.sample_size: {e}")))?;
            check_train(&study.train, "ratio_study.train")?;
        }
        check_ratio(self.alpha, "alpha")?;
        if self.folds.k < 2 {
            return Err(invalid("folds.k must be >= 2"));
        }
        check_train(&self.train, "train")?;
        if !self.train.augment.is_identity() {
            return Err(invalid("train.augment must be empty; augmentation is chosen by its own stage"));
        }
        if let Some(lr) = &self.lr_finder {
            if !(lr.finder.lr_min > 0.0 && lr.finder.lr_min < lr.finder.lr_max) || lr.finder.n_steps < 10 {
                return Err(invalid("lr_finder needs 0 < lr_min < lr_max and n_steps >= 10"));
            }
        }
        for values in &self.sweeps {
            let Some(first) = values.first() else {
                return Err(invalid("every sweep needs at least one value"));
            };
            if matches!(first, ParamValue::Freeze(_)) {
                return Err(invalid("freeze masks are swept through `freeze_states`, not `sweeps`"));
            }
            if values.iter().any(|v| v.param_name() != first.param_name()) {
                return Err(invalid(format!("sweep over `{}` mixes parameters", first.param_name())));
            }
            for v in values {
                let mut t = self.train.clone();
                v.apply(&mut t);
                check_train(&t, &format!("sweep value {}", v.value_label()))?;
            }
        }
        for c in &self.augmentation.candidates {
            c.validate().map_err(|e| invalid(e.to_string()))?;
            AugFamily::of(c).map_err(|e| invalid(e.to_string()))?;
        }
        if self.augmentation.min_gain.is_nan() || self.augmentation.min_gain < 0.0 {
            return Err(invalid("augmentation.min_gain must be >= 0"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON, ignoring where output goes and how
    /// many threads run it.
    /// The config with the settings that cannot change results cleared
    /// (output location, thread count).
    pub fn canonical(&self) -> CampaignConfig {
        CampaignConfig { output_dir: None, parallelism: 0, ..self.clone() }
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(&self.canonical()).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "table1" => Ok(table1()),
            "desk" => Ok(desk()),
            other => Err(invalid(format!("unknown preset `{other}` (known: table1, desk)"))),
        }
    }
}

pub const PRESETS: [&str; 2] = ["table1", "desk"];

fn table1_train() -> TrainConfig {
    TrainConfig { freeze: FreezeMask::top_unfrozen(2), ..TrainConfig::table1() }
}

fn flips() -> AugmentSpec {
    AugmentSpec { horizontal_flip: true, vertical_flip: true, ..Default::default() }
}

fn family_candidates(rotations: &[f64], shears: &[f64], zooms: &[f64], brightness: &[f64]) -> Vec<AugmentSpec> {
    let mut out = vec![flips()];
    out.extend(rotations.iter().map(|&r| AugmentSpec { rotation_range: r, ..Default::default() }));
    out.extend(shears.iter().map(|&s| AugmentSpec { shear_range: s, ..Default::default() }));
    out.extend(zooms.iter().map(|&z| AugmentSpec { zoom_range: z, ..Default::default() }));
    out.extend(brightness.iter().map(|&b| AugmentSpec { brightness_range: b, ..Default::default() }));
    out
}

/// Final settings of the reference study: 10% hold-out, 10-fold CV with
/// simple random sampling, Adam at 2e-5, batch 16, patience 100, frozen
/// convolutional base.
pub fn table1() -> CampaignConfig {
    let mut spec = SyntheticSpec::new(200, 32, 0.05);
    spec.hue_jitter = 30.0;
    spec.pose = PoseSpec { variant_fraction: 0.5, rotation: 180.0, shear: 30.0, scale_jitter: 0.15, translate: 0.1 };
    let mut source = spec.clone();
    source.random_hue = true;
    let train = table1_train();
    CampaignConfig {
        version: CONFIG_VERSION,
        master_seed: 42,
        dataset: DatasetSource::Synthetic { spec },
        source: Some(SourceTask { spec: source, train: TrainConfig { learning_rate: 1e-3, ..TrainConfig::table1() } }),
        holdout: HoldoutConfig { test_ratio: 0.1, strategy: SamplingStrategy::SimpleRandom },
        ratio_study: Some(RatioStudyConfig {
            ratios: vec![0.10, 0.15, 0.20, 0.25],
            strategy: SamplingStrategy::SimpleRandom,
            sample_size: SampleSizeConfig { sem_threshold: 0.0035, n_min: 5, n_max: 60 },
            train: train.clone(),
        }),
        alpha: 0.05,
        folds: FoldConfig { k: 10, strategy: SamplingStrategy::SimpleRandom },
        train: train.clone(),
        lr_finder: Some(LrFinderStage { finder: LrFinderConfig::new(1e-7, 1.0, 100), apply: false }),
        sweeps: vec![
            vec![
                ParamValue::Schedule(ScheduleSpec::Constant),
                ParamValue::Schedule(ScheduleSpec::StepDecay { gamma: 0.5, every: 20 }),
                ParamValue::Schedule(ScheduleSpec::CyclicTriangular { lr_base: 1e-5, lr_max: 1e-4, step_size: 200 }),
            ],
            vec![
                ParamValue::Optimizer(OptimizerSpec::sgd()),
                ParamValue::Optimizer(OptimizerSpec::adam()),
                ParamValue::Optimizer(OptimizerSpec::adadelta()),
            ],
            vec![ParamValue::Patience(50), ParamValue::Patience(100)],
            vec![ParamValue::Head(HeadKind::SoftmaxCrossEntropy), ParamValue::Head(HeadKind::LinearSvmHinge)],
            vec![ParamValue::BatchSize(8), ParamValue::BatchSize(16), ParamValue::BatchSize(32)],
            vec![ParamValue::LearningRate(1e-5), ParamValue::LearningRate(2e-5), ParamValue::LearningRate(1e-4)],
        ],
        freeze_states: unfreeze_sequence(),
        augmentation: AugmentationConfig {
            candidates: family_candidates(&[45.0, 90.0, 180.0], &[30.0, 60.0, 89.0], &[0.25, 0.5, 1.0], &[0.2, 0.4]),
            min_gain: 0.0,
        },
        output_dir: None,
        parallelism: 0,
    }
}

/// Small synthetic campaign that runs end to end in a few minutes on one
/// core: pose-variant target shapes with uninformative hue, and a source
/// task without pose variation for pretraining.
pub fn desk() -> CampaignConfig {
    let mut spec = SyntheticSpec::new(200, 16, 0.1);
    spec.random_hue = true;
    spec.pose = PoseSpec { variant_fraction: 1.0, rotation: 180.0, shear: 30.0, scale_jitter: 0.15, translate: 0.1 };
    let mut source = SyntheticSpec::new(60, 16, 0.1);
    source.random_hue = true;
    source.pose = PoseSpec { scale_jitter: 0.2, translate: 0.15, ..PoseSpec::default() };
    let quick = TrainConfig {
        batch_size: 16,
        learning_rate: 3e-3,
        optimizer: OptimizerSpec::adam(),
        schedule: ScheduleSpec::Constant,
        head: HeadKind::SoftmaxCrossEntropy,
        freeze: FreezeMask::all_trainable(),
        patience_epochs: 5,
        max_epochs: 20,
        augment: AugmentSpec::default(),
        precision: Precision::F64,
    };
    CampaignConfig {
        version: CONFIG_VERSION,
        master_seed: 42,
        dataset: DatasetSource::Synthetic { spec },
        source: Some(SourceTask { spec: source, train: quick.clone() }),
        holdout: HoldoutConfig { test_ratio: 0.1, strategy: SamplingStrategy::StratifiedRandom },
        ratio_study: Some(RatioStudyConfig {
            ratios: vec![0.10, 0.15, 0.20, 0.25],
            strategy: SamplingStrategy::StratifiedRandom,
            sample_size: SampleSizeConfig { sem_threshold: 0.02, n_min: 4, n_max: 6 },
            train: TrainConfig { max_epochs: 6, patience_epochs: 3, ..quick.clone() },
        }),
        alpha: 0.05,
        folds: FoldConfig { k: 3, strategy: SamplingStrategy::StratifiedRandom },
        train: TrainConfig { patience_epochs: 8, max_epochs: 40, ..quick },
        lr_finder: Some(LrFinderStage { finder: LrFinderConfig::new(1e-5, 1.0, 40), apply: false }),
        sweeps: vec![
            vec![ParamValue::Optimizer(OptimizerSpec::adam()), ParamValue::Optimizer(OptimizerSpec::sgd())],
            vec![ParamValue::BatchSize(16), ParamValue::BatchSize(32)],
        ],
        freeze_states: unfreeze_sequence(),
        augmentation: AugmentationConfig {
            candidates: family_candidates(&[180.0], &[30.0], &[0.2], &[0.3]),
            min_gain: 0.02,
        },
        output_dir: None,
        parallelism: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = CampaignConfig::preset(name).unwrap();
            c.validate().unwrap();
            let back = CampaignConfig::from_json(&c.to_json()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&desk().to_json()).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(CampaignConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&desk().to_json()).unwrap();
        v["train"]["extra"] = serde_json::json!(true);
        assert!(CampaignConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn hash_ignores_output_and_threads() {
        let a = desk();
        let mut b = desk();
        b.output_dir = Some("elsewhere".into());
        b.parallelism = 7;
        assert_eq!(a.hash(), b.hash());
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn table1_echo() {
        let c = table1();
        assert_eq!(c.train.learning_rate, 2e-5);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.patience_epochs, 100);
        assert_eq!(c.train.optimizer, OptimizerSpec::adam());
        assert_eq!(c.train.schedule, ScheduleSpec::Constant);
        assert_eq!(c.folds.k, 10);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut c = desk();
        c.folds.k = 1;
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        let mut c = desk();
        c.version = 2;
        assert!(c.validate().is_err());
        let mut c = desk();
        c.augmentation.candidates.push(AugmentSpec { horizontal_flip: true, zoom_range: 0.1, ..Default::default() });
        assert!(c.validate().is_err());
    }
}
