//! Full-system roll-up: OOD gate, retrieval and plate reading combined per
//! query.

use std::path::Path;

use openworld::ood::{calibrate_threshold, knn_ood_score};
use openworld::retrieval::{EmbeddingDatabase, Sample};
use plates::lpr::{evaluate_scene, LabeledScene, OracleDetector};
use plates::synth::{item_seed, random_scene};
use plates::TemplateRecognizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commands::{database, write_json};
use crate::config::{RunConfig, StageKind};
use crate::data::{load_partition, DataLocation, Partition};
use crate::error::CliError;

pub trait RetrievalStage {
    /// Predicted leaf key.
    fn predict(&self, db: &EmbeddingDatabase, sample: &Sample) -> Result<String, CliError>;
}

pub trait OodStage {
    fn is_ood(&self, db: &EmbeddingDatabase, sample: &Sample) -> Result<bool, CliError>;
}

pub struct KnnRetrieval {
    pub k: usize,
}

impl RetrievalStage for KnnRetrieval {
    fn predict(&self, db: &EmbeddingDatabase, sample: &Sample) -> Result<String, CliError> {
        Ok(db.classify(&sample.embedding, self.k, sample.label.depth())?)
    }
}

pub struct OracleRetrieval;

impl RetrievalStage for OracleRetrieval {
    fn predict(&self, _db: &EmbeddingDatabase, sample: &Sample) -> Result<String, CliError> {
        Ok(sample.label.leaf().to_string())
    }
}

pub struct KnnPlusGate {
    pub k: usize,
    pub threshold: f64,
}

impl OodStage for KnnPlusGate {
    fn is_ood(&self, db: &EmbeddingDatabase, sample: &Sample) -> Result<bool, CliError> {
        Ok(knn_ood_score(db, &sample.embedding, self.k)? > self.threshold)
    }
}

/// Flags exactly the classes absent from the database.
pub struct OracleGate;

impl OodStage for OracleGate {
    fn is_ood(&self, db: &EmbeddingDatabase, sample: &Sample) -> Result<bool, CliError> {
        let leaf = sample.label.leaf();
        Ok(!db.records().iter().any(|r| r.label.leaf() == leaf))
    }
}

/// Outcome of reading one vehicle's plate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateOutcome {
    pub exact: bool,
    pub cer: f64,
}

/// Reads plates of synthetic scenes; item `i` always gets the same scene.
pub struct PlateReader {
    kind: StageKind,
    base_seed: u64,
    jitter: f64,
    scenes: plates::synth::SceneConfig,
    recognizer: TemplateRecognizer,
}

impl PlateReader {
    pub fn new(cfg: &RunConfig, stream: u64) -> Self {
        Self {
            kind: cfg.system.plates,
            base_seed: item_seed(cfg.seed, stream),
            jitter: cfg.system.jitter,
            scenes: cfg.scenes.clone(),
            recognizer: TemplateRecognizer::default(),
        }
    }

    pub fn read(&mut self, index: usize) -> Result<PlateOutcome, CliError> {
        if self.kind == StageKind::Oracle {
            return Ok(PlateOutcome { exact: true, cer: 0.0 });
        }
        let seed = item_seed(self.base_seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, &self.scenes)?;
        let labeled = LabeledScene {
            image: scene.image,
            text: scene.plate.text,
            bbox: scene.bbox,
        };
        let mut detector = OracleDetector { jitter: self.jitter, rng };
        let item = evaluate_scene(&labeled, &mut detector, &mut self.recognizer)?;
        Ok(PlateOutcome {
            exact: item.exact(),
            cer: item.cer,
        })
    }
}

/// One row of the roll-up. Each accuracy is the fraction of `evaluated`
/// queries that the system gets right under that variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemRow {
    pub queries: usize,
    pub evaluated: usize,
    pub ood_flagged: usize,
    pub retrieval_accuracy: f64,
    pub plate_exact_accuracy: f64,
    pub total_exact: f64,
    pub total_cer_below: f64,
    pub total_no_lp: f64,
}

#[derive(Debug, Default)]
struct Tally {
    queries: usize,
    evaluated: usize,
    flagged: usize,
    retrieval: usize,
    plate: usize,
    exact: usize,
    cer_below: usize,
}

impl Tally {
    fn add(&mut self, retrieval_ok: bool, plate: PlateOutcome, cer_threshold: f64) {
        self.evaluated += 1;
        self.retrieval += retrieval_ok as usize;
        self.plate += plate.exact as usize;
        self.exact += (retrieval_ok && plate.exact) as usize;
        self.cer_below += (retrieval_ok && plate.cer < cer_threshold) as usize;
    }

    fn row(&self) -> SystemRow {
        let frac = |n: usize| if self.evaluated == 0 { 0.0 } else { n as f64 / self.evaluated as f64 };
        SystemRow {
            queries: self.queries,
            evaluated: self.evaluated,
            ood_flagged: self.flagged,
            retrieval_accuracy: frac(self.retrieval),
            plate_exact_accuracy: frac(self.plate),
            total_exact: frac(self.exact),
            total_cer_below: frac(self.cer_below),
            total_no_lp: frac(self.retrieval),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemOutput {
    pub cer_threshold: f64,
    pub exclude_ood_false_positives: bool,
    pub ood_threshold: Option<f64>,
    /// Seen queries against the seen database.
    pub seen: SystemRow,
    /// Unseen queries after OOD-flagged unseen arrivals were ingested.
    pub unseen: SystemRow,
    pub unseen_arrivals: usize,
    pub ingested: usize,
}

/// Runs the roll-up on a partition with the configured stages.
pub fn system_report(parts: &Partition, cfg: &RunConfig) -> Result<SystemOutput, CliError> {
    let sys = &cfg.system;
    let k = cfg.ood.k_values.first().copied().unwrap_or(1);
    let mut db = database(parts.dim(), &parts.seen_db)?;
    let retrieval: Box<dyn RetrievalStage> = match sys.retrieval {
        StageKind::Oracle => Box::new(OracleRetrieval),
        StageKind::Model => Box::new(KnnRetrieval { k: cfg.retrieval.k }),
    };
    let (gate, ood_threshold): (Box<dyn OodStage>, Option<f64>) = match sys.ood {
        StageKind::Oracle => (Box::new(OracleGate), None),
        StageKind::Model => {
            let held_in: Vec<Vec<f64>> = parts.calibration.iter().map(|s| s.embedding.clone()).collect();
            if held_in.is_empty() {
                return Err(CliError::Config("the KNN+ gate needs a calibration split".into()));
            }
            let threshold = calibrate_threshold(&db, &held_in, k, cfg.ood.tpr)?;
            (Box::new(KnnPlusGate { k, threshold }), Some(threshold))
        }
    };

    let mut seen = Tally::default();
    let mut reader = PlateReader::new(cfg, 0);
    for (i, q) in parts.seen_queries.iter().enumerate() {
        seen.queries += 1;
        let plate = reader.read(i)?;
        if gate.is_ood(&db, q)? {
            seen.flagged += 1;
            if !sys.exclude_ood_false_positives {
                seen.add(false, plate, sys.cer_threshold);
            }
            continue;
        }
        let ok = retrieval.predict(&db, q)? == q.label.leaf();
        seen.add(ok, plate, sys.cer_threshold);
    }

    // Arrivals come class-interleaved in id order; a flagged arrival goes
    // to a human and returns with its true label.
    let mut arrivals: Vec<&Sample> = parts.unseen_db.iter().collect();
    arrivals.sort_by(|a, b| a.id.cmp(&b.id));
    let mut ingested = 0usize;
    for s in &arrivals {
        if gate.is_ood(&db, s)? {
            db.ingest(vec![(*s).clone()])?;
            ingested += 1;
        }
    }
    let mut unseen = Tally::default();
    let mut reader = PlateReader::new(cfg, 1);
    for (i, q) in parts.unseen_queries.iter().enumerate() {
        unseen.queries += 1;
        let plate = reader.read(i)?;
        let ok = retrieval.predict(&db, q)? == q.label.leaf();
        unseen.add(ok, plate, sys.cer_threshold);
    }
    unseen.flagged = ingested;

    Ok(SystemOutput {
        cer_threshold: sys.cer_threshold,
        exclude_ood_false_positives: sys.exclude_ood_false_positives,
        ood_threshold,
        seen: seen.row(),
        unseen: unseen.row(),
        unseen_arrivals: arrivals.len(),
        ingested,
    })
}

pub fn cmd_eval_system(
    cfg: &RunConfig,
    data: &DataLocation,
    head: Option<&Path>,
    out: &Path,
) -> Result<SystemOutput, CliError> {
    std::fs::create_dir_all(out)?;
    let parts = load_partition(data, head, &cfg.split, cfg.seed)?;
    let report = system_report(&parts, cfg)?;
    write_json(&out.join("system.json"), &report)?;
    Ok(report)
}
