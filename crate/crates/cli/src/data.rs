//! On-disk dataset layout and the per-class protocol split.

use std::path::{Path, PathBuf};

use openworld::io::{load_head, load_samples, DatasetPaths, SplitFile};
use openworld::retrieval::Sample;
use openworld::simdata::split_per_class;
use openworld::trainer::ProjectionHead;
use serde::Serialize;

use crate::config::SplitConfig;
use crate::error::CliError;

/// `<stem>.emb`, `<stem>.jsonl` and `<stem>.split.json`.
#[derive(Debug, Clone)]
pub struct DataLocation {
    pub stem: PathBuf,
}

impl DataLocation {
    pub fn new(stem: impl Into<PathBuf>) -> Self {
        Self { stem: stem.into() }
    }

    pub fn in_dir(dir: &Path) -> Self {
        Self::new(dir.join("embeddings"))
    }

    pub fn paths(&self) -> DatasetPaths {
        DatasetPaths::from_stem(&self.stem)
    }

    pub fn split_path(&self) -> PathBuf {
        let mut s = self.stem.as_os_str().to_owned();
        s.push(".split.json");
        PathBuf::from(s)
    }

    pub fn load(&self) -> Result<(Vec<Sample>, SplitFile), CliError> {
        let samples = load_samples(&self.paths())?;
        let split = SplitFile::load(&self.split_path())?;
        if samples.is_empty() {
            return Err(CliError::Data(format!("{} holds no samples", self.stem.display())));
        }
        Ok((samples, split))
    }
}

/// Disjoint sample sets used by every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    /// Seen-class reference set; also the training set.
    pub seen_db: Vec<Sample>,
    /// Held-out seen samples for OOD threshold calibration.
    pub calibration: Vec<Sample>,
    pub seen_queries: Vec<Sample>,
    pub unseen_db: Vec<Sample>,
    pub unseen_queries: Vec<Sample>,
    pub unseen_classes: Vec<String>,
}

impl Partition {
    pub fn new(samples: &[Sample], split: &SplitFile, cfg: &SplitConfig, seed: u64) -> Self {
        let (unseen, seen): (Vec<Sample>, Vec<Sample>) =
            samples.iter().cloned().partition(|s| split.is_unseen(s.label.leaf()));
        let (seen_rest, seen_queries) = split_per_class(&seen, cfg.query_fraction, seed);
        let (seen_db, calibration) = if cfg.calibration_fraction > 0.0 {
            split_per_class(&seen_rest, cfg.calibration_fraction, seed.wrapping_add(1))
        } else {
            (seen_rest, Vec::new())
        };
        let (unseen_db, unseen_queries) = split_per_class(&unseen, cfg.query_fraction, seed.wrapping_add(2));
        let mut unseen_classes: Vec<String> = unseen.iter().map(|s| s.label.leaf().to_string()).collect();
        unseen_classes.sort();
        unseen_classes.dedup();
        Self {
            seen_db,
            calibration,
            seen_queries,
            unseen_db,
            unseen_queries,
            unseen_classes,
        }
    }

    /// Applies the head to every set.
    pub fn project(&self, head: &ProjectionHead) -> Result<Self, CliError> {
        let p = |s: &[Sample]| head.project_samples(s).map_err(CliError::from);
        Ok(Self {
            seen_db: p(&self.seen_db)?,
            calibration: p(&self.calibration)?,
            seen_queries: p(&self.seen_queries)?,
            unseen_db: p(&self.unseen_db)?,
            unseen_queries: p(&self.unseen_queries)?,
            unseen_classes: self.unseen_classes.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.seen_db.first().map_or(0, |s| s.embedding.len())
    }

    pub fn depth(&self) -> usize {
        self.seen_db.first().map_or(1, |s| s.label.depth())
    }
}

/// Loads the dataset, partitions it, and projects through the optional
/// head checkpoint.
pub fn load_partition(
    data: &DataLocation,
    head: Option<&Path>,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<Partition, CliError> {
    let (samples, split) = data.load()?;
    let parts = Partition::new(&samples, &split, cfg, seed);
    if parts.seen_db.is_empty() || parts.seen_queries.is_empty() {
        return Err(CliError::Data("dataset has no seen classes".into()));
    }
    match head {
        Some(path) => {
            let head = load_head(path)?;
            if head.in_dim() != parts.dim() {
                return Err(CliError::Data(format!(
                    "head expects dimension {}, data has {}",
                    head.in_dim(),
                    parts.dim()
                )));
            }
            parts.project(&head)
        }
        None => Ok(parts),
    }
}
