//! One function per subcommand. Each writes its artifacts under `out` and
//! returns the same data it wrote, so callers and tests can inspect it.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use openworld::io::{save_head, save_samples, write_history, SplitFile};
use openworld::losses::LossMode;
use openworld::ood::{
    auroc, fpr_at_tpr, knn_ood_score, mahalanobis_fit, mahalanobis_score, normalize_rows, threshold_at_tpr,
    write_score_csv, ScoreRecord,
};
use openworld::retrieval::{retrieval_report, EmbeddingDatabase, RetrievalReport, Sample};
use openworld::simdata::generate;
use openworld::trainer::train;
use plates::lpr::{evaluate_pipeline, LabeledScene, OracleDetector, OracleRecognizer, PipelineReport, Recognizer};
use plates::synth::{generate_plates, generate_scenes, read_manifest, write_plates, write_scenes, MANIFEST_FILE};
use plates::TemplateRecognizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RecognizerKind, RunConfig};
use crate::data::{load_partition, DataLocation, Partition};
use crate::error::CliError;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    Embeddings,
    Plates,
    Scenes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSummary {
    pub kind: GenKind,
    pub count: usize,
    pub seed: u64,
    pub output: PathBuf,
}

pub fn cmd_gen(kind: GenKind, cfg: &RunConfig, out: &Path) -> Result<GenSummary, CliError> {
    ensure_dir(out)?;
    let (count, output) = match kind {
        GenKind::Embeddings => {
            let data = generate(&cfg.simdata, cfg.n_per_leaf).map_err(|e| CliError::Config(e.to_string()))?;
            let loc = DataLocation::in_dir(out);
            save_samples(&loc.paths(), &data.samples)?;
            SplitFile {
                seen: data.seen.clone(),
                unseen: data.unseen.clone(),
            }
            .save(&loc.split_path())?;
            (data.samples.len(), loc.paths().labels)
        }
        GenKind::Plates => {
            let items = generate_plates(&cfg.plates, cfg.n_plates, cfg.seed).map_err(config_or_data)?;
            (items.len(), write_plates(&out.join("plates"), &items)?)
        }
        GenKind::Scenes => {
            let scenes = generate_scenes(&cfg.scenes, cfg.n_scenes, cfg.seed).map_err(config_or_data)?;
            (scenes.len(), write_scenes(&out.join("scenes"), &scenes)?)
        }
    };
    Ok(GenSummary {
        kind,
        count,
        seed: cfg.seed,
        output,
    })
}

fn config_or_data(e: plates::synth::SynthError) -> CliError {
    match e {
        plates::synth::SynthError::InvalidConfig(m) | plates::synth::SynthError::InvalidSpec(m) => CliError::Config(m),
        other => CliError::data(other),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub mode: LossMode,
    pub steps: usize,
    pub train_samples: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

/// Trains a head on the seen reference split and writes `head.bin` and
/// `history.csv`.
pub fn cmd_train(cfg: &RunConfig, data: &DataLocation, out: &Path) -> Result<TrainSummary, CliError> {
    ensure_dir(out)?;
    let parts = load_partition(data, None, &cfg.split, cfg.seed)?;
    let outcome = train(&parts.seen_db, &cfg.loss, &cfg.train)?;
    let checkpoint = out.join("head.bin");
    let history = out.join("history.csv");
    save_head(&checkpoint, &outcome.head)?;
    let mut w = BufWriter::new(fs::File::create(&history)?);
    write_history(&mut w, &outcome.history)?;
    w.flush()?;
    Ok(TrainSummary {
        mode: cfg.loss.mode,
        steps: outcome.history.len(),
        train_samples: parts.seen_db.len(),
        first_loss: outcome.history.first().map(|r| r.loss),
        final_loss: outcome.history.last().map(|r| r.loss),
        checkpoint,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Seen,
    Unseen,
    Combined,
    All,
}

/// Seen and unseen query results against one shared database.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedReport {
    pub seen: RetrievalReport,
    pub unseen: RetrievalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seen: Option<RetrievalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen: Option<RetrievalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combined: Option<CombinedReport>,
}

pub fn database(dim: usize, samples: &[Sample]) -> Result<EmbeddingDatabase, CliError> {
    Ok(EmbeddingDatabase::from_samples(dim, samples.to_vec())?)
}

/// Retrieval metrics for the seen-only, unseen-only and combined
/// database scenarios.
pub fn retrieval_scenarios(parts: &Partition, cfg: &RunConfig, scenario: Scenario) -> Result<RetrievalOutput, CliError> {
    let levels: Vec<usize> = cfg
        .retrieval
        .levels
        .clone()
        .unwrap_or_else(|| (1..=parts.depth()).collect());
    let k = cfg.retrieval.k;
    let dim = parts.dim();
    let want = |s: Scenario| scenario == s || scenario == Scenario::All;
    let has_unseen = !parts.unseen_queries.is_empty() && !parts.unseen_db.is_empty();
    let seen = if want(Scenario::Seen) {
        Some(retrieval_report(&database(dim, &parts.seen_db)?, &parts.seen_queries, k, &levels)?)
    } else {
        None
    };
    let unseen = if want(Scenario::Unseen) && has_unseen {
        Some(retrieval_report(&database(dim, &parts.unseen_db)?, &parts.unseen_queries, k, &levels)?)
    } else {
        None
    };
    let combined = if want(Scenario::Combined) && has_unseen {
        let db = database(dim, &[parts.seen_db.clone(), parts.unseen_db.clone()].concat())?;
        Some(CombinedReport {
            seen: retrieval_report(&db, &parts.seen_queries, k, &levels)?,
            unseen: retrieval_report(&db, &parts.unseen_queries, k, &levels)?,
        })
    } else {
        None
    };
    Ok(RetrievalOutput { seen, unseen, combined })
}

pub fn cmd_eval_retrieval(
    cfg: &RunConfig,
    data: &DataLocation,
    head: Option<&Path>,
    scenario: Scenario,
    out: &Path,
) -> Result<RetrievalOutput, CliError> {
    ensure_dir(out)?;
    let parts = load_partition(data, head, &cfg.split, cfg.seed)?;
    let report = retrieval_scenarios(&parts, cfg, scenario)?;
    write_json(&out.join("retrieval.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodRow {
    pub method: String,
    pub k: Option<usize>,
    pub fpr_at_tpr: f64,
    pub auroc: f64,
    /// FPR and ID recall under the threshold calibrated on the held-out
    /// seen split; absent without a calibration split.
    pub calibrated_fpr: Option<f64>,
    pub calibrated_tpr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodOutput {
    pub tpr: f64,
    pub id_queries: usize,
    pub ood_queries: usize,
    pub rows: Vec<OodRow>,
}

fn calibrated(cal: &[f64], id: &[f64], ood: &[f64], tpr: f64) -> Result<(Option<f64>, Option<f64>), CliError> {
    if cal.is_empty() {
        return Ok((None, None));
    }
    let t = threshold_at_tpr(cal, tpr)?;
    let frac = |v: &[f64]| v.iter().filter(|&&s| s <= t).count() as f64 / v.len() as f64;
    Ok((Some(frac(ood)), Some(frac(id))))
}

/// KNN+ for every configured `k` plus the Mahalanobis baseline. ID queries
/// are the held-out seen queries; OOD queries are every unseen sample.
pub fn ood_table(parts: &Partition, cfg: &RunConfig) -> Result<(OodOutput, Vec<ScoreRecord>), CliError> {
    let ood_samples: Vec<&Sample> = parts.unseen_db.iter().chain(&parts.unseen_queries).collect();
    if ood_samples.is_empty() {
        return Err(CliError::Data("no unseen samples to score".into()));
    }
    let tpr = cfg.ood.tpr;
    let db = database(parts.dim(), &parts.seen_db)?;
    let mut rows = Vec::new();
    let mut dump = Vec::new();
    for (i, &k) in cfg.ood.k_values.iter().enumerate() {
        let score = |s: &Sample| knn_ood_score(&db, &s.embedding, k);
        let id: Vec<f64> = parts.seen_queries.iter().map(score).collect::<Result<_, _>>()?;
        let ood: Vec<f64> = ood_samples.iter().map(|s| score(s)).collect::<Result<_, _>>()?;
        let cal: Vec<f64> = parts.calibration.iter().map(score).collect::<Result<_, _>>()?;
        let (calibrated_fpr, calibrated_tpr) = calibrated(&cal, &id, &ood, tpr)?;
        rows.push(OodRow {
            method: "knn+".into(),
            k: Some(k),
            fpr_at_tpr: fpr_at_tpr(&id, &ood, tpr)?,
            auroc: auroc(&id, &ood)?,
            calibrated_fpr,
            calibrated_tpr,
        });
        if i == 0 {
            dump.extend(parts.seen_queries.iter().zip(&id).map(|(s, &v)| ScoreRecord {
                id: s.id.clone(),
                score: v,
                is_id: true,
            }));
            dump.extend(ood_samples.iter().zip(&ood).map(|(s, &v)| ScoreRecord {
                id: s.id.clone(),
                score: v,
                is_id: false,
            }));
        }
    }

    let fit_rows = normalize_rows(&parts.seen_db.iter().map(|s| s.embedding.clone()).collect::<Vec<_>>())?;
    let labels: Vec<String> = parts.seen_db.iter().map(|s| s.label.leaf().to_string()).collect();
    let model = mahalanobis_fit(&fit_rows, &labels, cfg.ood.ridge)?;
    let maha = |set: &[&Sample]| -> Result<Vec<f64>, CliError> {
        let rows = normalize_rows(&set.iter().map(|s| s.embedding.clone()).collect::<Vec<_>>())?;
        Ok(rows.iter().map(|r| mahalanobis_score(&model, r)).collect::<Result<_, _>>()?)
    };
    let id = maha(&parts.seen_queries.iter().collect::<Vec<_>>())?;
    let ood = maha(&ood_samples)?;
    let cal = maha(&parts.calibration.iter().collect::<Vec<_>>())?;
    let (calibrated_fpr, calibrated_tpr) = calibrated(&cal, &id, &ood, tpr)?;
    rows.push(OodRow {
        method: "mahalanobis".into(),
        k: None,
        fpr_at_tpr: fpr_at_tpr(&id, &ood, tpr)?,
        auroc: auroc(&id, &ood)?,
        calibrated_fpr,
        calibrated_tpr,
    });
    Ok((
        OodOutput {
            tpr,
            id_queries: parts.seen_queries.len(),
            ood_queries: ood_samples.len(),
            rows,
        },
        dump,
    ))
}

/// Writes `ood.json`, the k-sweep curve `ood_k_sweep.csv`, and the first
/// k's score dump `ood_scores.csv`.
pub fn cmd_eval_ood(cfg: &RunConfig, data: &DataLocation, head: Option<&Path>, out: &Path) -> Result<OodOutput, CliError> {
    ensure_dir(out)?;
    let parts = load_partition(data, head, &cfg.split, cfg.seed)?;
    let (table, scores) = ood_table(&parts, cfg)?;
    write_json(&out.join("ood.json"), &table)?;
    let mut w = BufWriter::new(fs::File::create(out.join("ood_k_sweep.csv"))?);
    writeln!(w, "k,fpr_at_tpr,auroc")?;
    for r in table.rows.iter().filter(|r| r.k.is_some()) {
        writeln!(w, "{},{},{}", r.k.unwrap_or_default(), r.fpr_at_tpr, r.auroc)?;
    }
    w.flush()?;
    write_score_csv(BufWriter::new(fs::File::create(out.join("ood_scores.csv"))?), &scores)?;
    Ok(table)
}

/// Loads a scene manifest and its images.
pub fn load_scenes(dir: &Path) -> Result<Vec<LabeledScene>, CliError> {
    let records = read_manifest(&dir.join(MANIFEST_FILE))?;
    records
        .into_iter()
        .map(|r| {
            let bbox = r
                .bbox
                .ok_or_else(|| CliError::Data(format!("{}: scene record without a box", r.file)))?;
            let image = plates::image_ops::load_ppm(&dir.join(&r.file)).map_err(CliError::data)?;
            Ok(LabeledScene {
                image,
                text: r.text,
                bbox,
            })
        })
        .collect()
}

pub fn make_recognizer(kind: RecognizerKind) -> Box<dyn Recognizer> {
    match kind {
        RecognizerKind::Template => Box::new(TemplateRecognizer::default()),
        RecognizerKind::Oracle => Box::new(OracleRecognizer),
    }
}

pub fn cmd_eval_lpr(cfg: &RunConfig, scenes_dir: &Path, out: &Path) -> Result<PipelineReport, CliError> {
    ensure_dir(out)?;
    let scenes = load_scenes(scenes_dir)?;
    let mut detector = OracleDetector {
        jitter: cfg.lpr.jitter,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut recognizer = make_recognizer(cfg.lpr.recognizer);
    let (report, items) = evaluate_pipeline(&scenes, &mut detector, recognizer.as_mut())?;
    write_json(&out.join("lpr.json"), &report)?;
    report.write_csv(BufWriter::new(fs::File::create(out.join("lpr.csv"))?))?;
    let mut w = BufWriter::new(fs::File::create(out.join("lpr_items.csv"))?);
    writeln!(w, "truth,predicted,x,y,w,h,ds,iou,cer")?;
    for i in &items {
        let b = i.detected;
        writeln!(w, "{},{},{},{},{},{},{},{},{}", i.truth, i.predicted, b.x, b.y, b.w, b.h, i.ds, i.iou, i.cer)?;
    }
    w.flush()?;
    Ok(report)
}
