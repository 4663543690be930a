//! Incremental-database experiments: class addition, samples per class,
//! and per-class ingestion.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use openworld::ood::{auroc, calibrate_threshold, fpr_at_tpr, knn_ood_score};
use openworld::retrieval::{precision_at_k, EmbeddingDatabase, Sample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commands::{database, write_json};
use crate::config::RunConfig;
use crate::data::{load_partition, DataLocation, Partition};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    AddClasses,
    SamplesPerClass,
    OodIngest,
}

/// Rng for run `r` of an experiment.
fn run_rng(seed: u64, experiment: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((experiment << 32) | run as u64);
    rng
}

fn by_class(samples: &[Sample]) -> BTreeMap<String, Vec<Sample>> {
    let mut map: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        map.entry(s.label.leaf().to_string()).or_default().push(s.clone());
    }
    for v in map.values_mut() {
        v.sort_by(|a, b| a.id.cmp(&b.id));
    }
    map
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AddClassesRow {
    pub added: usize,
    pub prec_at_1: f64,
    /// OOD metrics with the not-yet-added classes as OOD; absent once every
    /// class is in the database.
    pub fpr_at_tpr: Option<f64>,
    pub auroc: Option<f64>,
}

/// Ingests unseen classes one at a time in random order, tracking leaf
/// Prec@1 over the queries of every present class and KNN+ detection of
/// the classes still missing.
pub fn add_classes(parts: &Partition, cfg: &RunConfig) -> Result<Vec<AddClassesRow>, CliError> {
    let k = cfg.experiment.k;
    let depth = parts.depth();
    let db_by = by_class(&parts.unseen_db);
    let q_by = by_class(&parts.unseen_queries);
    let classes: Vec<&String> = db_by.keys().filter(|c| q_by.contains_key(*c)).collect();
    let n = classes.len();
    let mut prec = vec![Vec::new(); n + 1];
    let mut fpr = vec![Vec::new(); n + 1];
    let mut roc = vec![Vec::new(); n + 1];
    for run in 0..cfg.experiment.runs {
        let mut order = classes.clone();
        order.shuffle(&mut run_rng(cfg.seed, 1, run));
        let mut db = database(parts.dim(), &parts.seen_db)?;
        let mut queries = parts.seen_queries.clone();
        for added in 0..=n {
            prec[added].push(precision_at_k(&db, &queries, 1, depth)?);
            if added < n {
                let id: Vec<f64> = queries
                    .iter()
                    .map(|q| knn_ood_score(&db, &q.embedding, k))
                    .collect::<Result<_, _>>()?;
                let mut ood = Vec::new();
                for c in &order[added..] {
                    for s in db_by[*c].iter().chain(&q_by[*c]) {
                        ood.push(knn_ood_score(&db, &s.embedding, k)?);
                    }
                }
                fpr[added].push(fpr_at_tpr(&id, &ood, cfg.ood.tpr)?);
                roc[added].push(auroc(&id, &ood)?);
                let c = order[added];
                db.ingest(db_by[c].clone())?;
                queries.extend(q_by[c].iter().cloned());
            }
        }
    }
    Ok((0..=n)
        .map(|added| AddClassesRow {
            added,
            prec_at_1: mean(&prec[added]),
            fpr_at_tpr: (!fpr[added].is_empty()).then(|| mean(&fpr[added])),
            auroc: (!roc[added].is_empty()).then(|| mean(&roc[added])),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplesPerClassRow {
    pub samples_per_class: usize,
    pub prec_at_1: f64,
    pub prec_at_1_std: f64,
    pub runs: usize,
}

/// Unseen-query leaf Prec@1 against the seen database plus `g` randomly
/// chosen reference samples of each unseen class, for each grid size `g`.
/// Each run shuffles every class's pool once and takes nested prefixes.
pub fn samples_per_class(parts: &Partition, cfg: &RunConfig) -> Result<Vec<SamplesPerClassRow>, CliError> {
    per_run_samples_per_class(parts, cfg).map(|runs| {
        cfg.experiment
            .grid
            .iter()
            .enumerate()
            .map(|(gi, &g)| {
                let values: Vec<f64> = runs.iter().map(|r| r[gi]).collect();
                SamplesPerClassRow {
                    samples_per_class: g,
                    prec_at_1: mean(&values),
                    prec_at_1_std: std_dev(&values),
                    runs: values.len(),
                }
            })
            .collect()
    })
}

/// Prec@1 per run (outer) and grid size (inner).
pub fn per_run_samples_per_class(parts: &Partition, cfg: &RunConfig) -> Result<Vec<Vec<f64>>, CliError> {
    let grid = &cfg.experiment.grid;
    let max = grid.iter().copied().max().unwrap_or(0);
    let pools = by_class(&parts.unseen_db);
    if pools.is_empty() || parts.unseen_queries.is_empty() {
        return Err(CliError::Data("samples-per-class needs unseen classes".into()));
    }
    if let Some((c, p)) = pools.iter().find(|(_, p)| p.len() < max) {
        return Err(CliError::Data(format!(
            "unseen class {c} has {} reference samples, grid needs {max}",
            p.len()
        )));
    }
    let depth = parts.depth();
    let mut out = Vec::with_capacity(cfg.experiment.runs);
    for run in 0..cfg.experiment.runs {
        let mut rng = run_rng(cfg.seed, 2, run);
        let shuffled: Vec<Vec<Sample>> = pools
            .values()
            .map(|p| {
                let mut p = p.clone();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let mut row = Vec::with_capacity(grid.len());
        for &g in grid {
            let mut db = database(parts.dim(), &parts.seen_db)?;
            db.ingest(shuffled.iter().flat_map(|p| p[..g].iter().cloned()).collect())?;
            row.push(precision_at_k(&db, &parts.unseen_queries, 1, depth)?);
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestRow {
    pub ingested: usize,
    /// Fraction of the new class's queries whose nearest leaf is correct.
    pub recall: f64,
    /// Fraction of the new class's queries the calibrated detector flags.
    pub ood_rate: f64,
}

/// For each unseen class separately, ingests its reference samples one at a
/// time and tracks recall and the OOD flag rate of its queries.
pub fn ood_ingest(parts: &Partition, cfg: &RunConfig) -> Result<Vec<IngestRow>, CliError> {
    let k = cfg.experiment.k;
    let base = database(parts.dim(), &parts.seen_db)?;
    let held_in: Vec<Vec<f64>> = parts.calibration.iter().map(|s| s.embedding.clone()).collect();
    if held_in.is_empty() {
        return Err(CliError::Config("ood-ingest needs a calibration split".into()));
    }
    let threshold = calibrate_threshold(&base, &held_in, k, cfg.ood.tpr)?;
    let pools = by_class(&parts.unseen_db);
    let q_by = by_class(&parts.unseen_queries);
    let max = cfg.experiment.ingest_max;
    if let Some((c, p)) = pools.iter().find(|(_, p)| p.len() < max) {
        return Err(CliError::Data(format!("unseen class {c} has {} samples, need {max}", p.len())));
    }
    let depth = parts.depth();
    let mut recall = vec![Vec::new(); max + 1];
    let mut flagged = vec![Vec::new(); max + 1];
    for run in 0..cfg.experiment.runs {
        let mut rng = run_rng(cfg.seed, 3, run);
        for (class, pool) in &pools {
            let Some(queries) = q_by.get(class) else { continue };
            let mut pool = pool.clone();
            pool.shuffle(&mut rng);
            let mut db: EmbeddingDatabase = base.clone();
            for n in 0..=max {
                let mut hits = 0usize;
                let mut ood = 0usize;
                for q in queries {
                    if db.classify(&q.embedding, 1, depth)? == *class {
                        hits += 1;
                    }
                    if knn_ood_score(&db, &q.embedding, k)? > threshold {
                        ood += 1;
                    }
                }
                recall[n].push(hits as f64 / queries.len() as f64);
                flagged[n].push(ood as f64 / queries.len() as f64);
                if n < max {
                    db.ingest(vec![pool[n].clone()])?;
                }
            }
        }
    }
    if recall[0].is_empty() {
        return Err(CliError::Data("no unseen class has queries".into()));
    }
    Ok((0..=max)
        .map(|n| IngestRow {
            ingested: n,
            recall: mean(&recall[n]),
            ood_rate: mean(&flagged[n]),
        })
        .collect())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header_done = false;
    for r in rows {
        let value = serde_json::to_value(r)?;
        let obj = value.as_object().ok_or_else(|| CliError::Data("row is not an object".into()))?;
        if !header_done {
            writeln!(w, "{}", obj.keys().cloned().collect::<Vec<_>>().join(","))?;
            header_done = true;
        }
        let cells: Vec<String> = obj
            .values()
            .map(|v| match v {
                serde_json::Value::Null => String::new(),
                other => other.to_string(),
            })
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one experiment and writes `<id>.csv` plus `<id>.json`.
pub fn cmd_experiment(
    id: ExperimentId,
    cfg: &RunConfig,
    data: &DataLocation,
    head: Option<&Path>,
    out: &Path,
) -> Result<serde_json::Value, CliError> {
    fs::create_dir_all(out)?;
    let parts = load_partition(data, head, &cfg.split, cfg.seed)?;
    let (name, value) = match id {
        ExperimentId::AddClasses => {
            let rows = add_classes(&parts, cfg)?;
            write_csv(&out.join("add_classes.csv"), &rows)?;
            ("add_classes", serde_json::to_value(rows)?)
        }
        ExperimentId::SamplesPerClass => {
            let rows = samples_per_class(&parts, cfg)?;
            write_csv(&out.join("samples_per_class.csv"), &rows)?;
            ("samples_per_class", serde_json::to_value(rows)?)
        }
        ExperimentId::OodIngest => {
            let rows = ood_ingest(&parts, cfg)?;
            write_csv(&out.join("ood_ingest.csv"), &rows)?;
            ("ood_ingest", serde_json::to_value(rows)?)
        }
    };
    write_json(&out.join(format!("{name}.json")), &value)?;
    Ok(value)
}
