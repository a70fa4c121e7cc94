use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use entseg::data::{ShiftParams, SynthConfig};
use entseg::losses::RegKind;
use entseg::metrics::DEFAULT_LOAD_THRESHOLDS_ML;
use entseg::model::TrainConfig;
use entseg::volume::Dims;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Training objective: cross-entropy alone or with one of the entropy regularizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Ce,
    CeMeall,
    CeMeep,
    CeKl,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Ce, Strategy::CeMeall, Strategy::CeMeep, Strategy::CeKl];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ce => "ce",
            Strategy::CeMeall => "ce+meall",
            Strategy::CeMeep => "ce+meep",
            Strategy::CeKl => "ce+kl",
        }
    }

    /// File-name friendly form of [`Strategy::name`].
    pub fn slug(self) -> &'static str {
        match self {
            Strategy::Ce => "ce",
            Strategy::CeMeall => "ce_meall",
            Strategy::CeMeep => "ce_meep",
            Strategy::CeKl => "ce_kl",
        }
    }

    pub fn reg_kind(self) -> RegKind {
        match self {
            Strategy::Ce => RegKind::None,
            Strategy::CeMeall => RegKind::MeAll,
            Strategy::CeMeep => RegKind::Meep,
            Strategy::CeKl => RegKind::Kl,
        }
    }

    pub fn is_regularized(self) -> bool {
        self != Strategy::Ce
    }

    /// Training configuration for this strategy at `lambda` (ignored for `ce`).
    pub fn train_config(self, base: &TrainConfig, lambda: f64) -> TrainConfig {
        let mut c = *base;
        c.loss.reg_kind = self.reg_kind();
        c.loss.lambda = if self.is_regularized() { lambda } else { 0.0 };
        c
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s || k.slug() == s)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown strategy {s:?}; expected one of ce, ce+meall, ce+meep, ce+kl"
                ))
            })
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub name: Strategy,
    /// Candidate regularization weights; `ce` uses `[0]` whatever is listed.
    pub lambda_grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    /// In-distribution test scans; the OOD test split holds their shifted twins.
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub threshold: f64,
    /// 100 is the classical Hausdorff distance, 95 the robust variant.
    pub hausdorff_percentile: f64,
    pub calibration_bins: usize,
    pub load_thresholds_ml: (f64, f64),
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            hausdorff_percentile: 100.0,
            calibration_bins: 10,
            load_thresholds_ml: DEFAULT_LOAD_THRESHOLDS_ML,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub predictions: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            checkpoints: "checkpoints".into(),
            predictions: "predictions".into(),
            reports: "reports".into(),
        }
    }
}

impl Paths {
    /// Resolves relative entries against `root`.
    pub fn under(&self, root: &Path) -> Paths {
        let j = |p: &PathBuf| if p.is_absolute() { p.clone() } else { root.join(p) };
        Paths {
            data: j(&self.data),
            checkpoints: j(&self.checkpoints),
            predictions: j(&self.predictions),
            reports: j(&self.reports),
        }
    }
}

/// Everything needed to regenerate an experiment from one root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Generator settings; its `seed` field is replaced by one derived from the root seed.
    pub synth: SynthConfig,
    pub splits: SplitSizes,
    pub shift: ShiftParams,
    /// Shared optimizer settings; loss kind and weight are set per strategy and
    /// the seed is derived from the root seed.
    pub train: TrainConfig,
    pub strategies: Vec<StrategyConfig>,
    /// Grid entries whose validation Dice is within this of the best are
    /// ranked by validation ECE.
    #[serde(default)]
    pub dice_tolerance: f64,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SynthConfig {
            dims: Dims::new(64, 64, 1),
            spacing_mm: [4.0, 4.0, 8.0],
            lesion_count: (1, 3),
            lesion_radius: (1.0, 7.0),
            fg_mean: 0.65,
            bg_mean: 0.25,
            noise_sigma: 0.12,
            blur_sigma: 0.7,
            contrast_jitter: 0.0,
            seed: 0,
        };
        let mut train = TrainConfig::default();
        train.learning_rate = 1e-2;
        train.epochs = 30;
        train.batch_size = 2;
        train.init_scale = 2.0;
        let grid = |g: &[f64]| g.to_vec();
        Self {
            seed: 20240601,
            synth,
            splits: SplitSizes {
                train: 40,
                val: 12,
                test: 40,
            },
            shift: ShiftParams::OOD_PRESET,
            train,
            strategies: vec![
                StrategyConfig {
                    name: Strategy::Ce,
                    lambda_grid: grid(&[0.0]),
                },
                StrategyConfig {
                    name: Strategy::CeMeall,
                    lambda_grid: grid(&[0.01, 0.03, 0.1]),
                },
                StrategyConfig {
                    name: Strategy::CeMeep,
                    lambda_grid: grid(&[0.5, 2.0, 5.0]),
                },
                StrategyConfig {
                    name: Strategy::CeKl,
                    lambda_grid: grid(&[0.5, 2.0, 5.0]),
                },
            ],
            dice_tolerance: 0.0,
            eval: EvalSettings::default(),
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        let cfg: Self = serde_json::from_slice(&bytes).map_err(|source| CliError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `--config` if given, else the defaults; `--seed` overrides the root seed.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::new();
        for s in &self.strategies {
            if seen.contains(&s.name) {
                return Err(CliError::Usage(format!("strategy {} listed twice", s.name)));
            }
            seen.push(s.name);
            if s.lambda_grid.is_empty() || s.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(CliError::Usage(format!(
                    "strategy {} needs a non-empty grid of non-negative lambdas",
                    s.name
                )));
            }
        }
        if self.splits.train == 0 || self.splits.val == 0 || self.splits.test == 0 {
            return Err(CliError::Usage("every split needs at least one scan".into()));
        }
        for p in [&self.paths.data, &self.paths.checkpoints, &self.paths.predictions, &self.paths.reports] {
            if p.as_os_str().is_empty() {
                return Err(CliError::Usage("empty path in config".into()));
            }
        }
        self.synth.validate()?;
        self.shift.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn strategy(&self, s: Strategy) -> Option<&StrategyConfig> {
        self.strategies.iter().find(|c| c.name == s)
    }
}
