//! Run configuration, loaded from a JSON file. Every section is optional
//! and falls back to its defaults; unknown keys are rejected.

use std::path::Path;

use openworld::losses::LossParams;
use openworld::ood::Ridge;
use openworld::simdata::HierarchySpec;
use openworld::trainer::TrainConfig;
use plates::synth::{PlateConfig, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into every section that takes one.
    pub seed: u64,
    pub simdata: HierarchySpec,
    pub n_per_leaf: usize,
    pub split: SplitConfig,
    pub loss: LossParams,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub ood: OodConfig,
    pub plates: PlateConfig,
    pub n_plates: usize,
    pub scenes: SceneConfig,
    pub n_scenes: usize,
    pub lpr: LprConfig,
    pub experiment: ExperimentConfig,
    pub system: SystemConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            simdata: HierarchySpec::default(),
            n_per_leaf: 20,
            split: SplitConfig::default(),
            loss: LossParams::default(),
            train: TrainConfig::default(),
            retrieval: RetrievalConfig::default(),
            ood: OodConfig::default(),
            plates: PlateConfig::default(),
            n_plates: 200,
            scenes: SceneConfig::default(),
            n_scenes: 200,
            lpr: LprConfig::default(),
            experiment: ExperimentConfig::default(),
            system: SystemConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the master seed to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.simdata.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.simdata.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.loss.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.plates.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.scenes.plate.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.n_per_leaf < 2 {
            return bad("n_per_leaf must be at least 2".into());
        }
        for f in [self.split.query_fraction, self.split.calibration_fraction] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("split fraction {f} outside [0, 1)"));
            }
        }
        if self.retrieval.k == 0 || self.ood.k_values.is_empty() || self.ood.k_values.contains(&0) {
            return bad("k values must be positive and non-empty".into());
        }
        if !(self.ood.tpr > 0.0 && self.ood.tpr <= 1.0) {
            return bad(format!("tpr {} outside (0, 1]", self.ood.tpr));
        }
        if self.experiment.runs == 0 || self.experiment.grid.is_empty() || self.experiment.grid.contains(&0) {
            return bad("experiment needs runs >= 1 and a non-empty positive grid".into());
        }
        if self.lpr.jitter < 0.0 || self.system.jitter < 0.0 {
            return bad("jitter must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-class partition of the generated embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of each class held out as queries.
    pub query_fraction: f64,
    /// Fraction of each seen class's remaining samples held out for OOD
    /// threshold calibration.
    pub calibration_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            query_fraction: 0.5,
            calibration_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    /// Levels to report; all levels when absent.
    pub levels: Option<Vec<usize>>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 1, levels: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodConfig {
    pub k_values: Vec<usize>,
    pub tpr: f64,
    pub ridge: Ridge,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            k_values: vec![1, 2, 4, 8],
            tpr: 0.95,
            ridge: Ridge::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecognizerKind {
    Template,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LprConfig {
    pub jitter: f64,
    pub recognizer: RecognizerKind,
}

impl Default for LprConfig {
    fn default() -> Self {
        Self {
            jitter: 0.0,
            recognizer: RecognizerKind::Template,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Random orderings or resamples averaged per curve point.
    pub runs: usize,
    /// Samples-per-class grid.
    pub grid: Vec<usize>,
    /// Largest ingested-sample count in the ingestion experiment.
    pub ingest_max: usize,
    pub k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs: 20,
            grid: vec![1, 2, 4, 8],
            ingest_max: 8,
            k: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    /// Reads ground truth.
    Oracle,
    /// The shipped implementation (kNN, KNN+, oracle detector with jitter
    /// plus template recognizer).
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub retrieval: StageKind,
    pub ood: StageKind,
    pub plates: StageKind,
    pub jitter: f64,
    pub cer_threshold: f64,
    /// Drop seen queries wrongly flagged OOD from the seen totals instead
    /// of counting them as errors.
    pub exclude_ood_false_positives: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            retrieval: StageKind::Model,
            ood: StageKind::Model,
            plates: StageKind::Model,
            jitter: 0.0,
            cer_threshold: 0.2,
            exclude_ood_false_positives: false,
        }
    }
}
