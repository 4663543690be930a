//! Exact kNN retrieval over unit-normalized embeddings and the retrieval
//! metrics (Prec@k, mAP@R, hierarchical fallback accuracy).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{HierarchicalLabel, HierarchyError};

/// Tolerance on the stored norm.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding {0:?} has zero or non-finite norm")]
    DegenerateEmbedding(String),
    #[error("database is empty")]
    EmptyDatabase,
    #[error("k = {k} out of range for database of size {size}")]
    KOutOfRange { k: usize, size: usize },
    #[error("query set is empty")]
    EmptyQuerySet,
    #[error("no query has a relevant record in the database")]
    NoEvaluableQueries,
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// A labeled embedding, used both for ingestion and as a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub embedding: Vec<f64>,
    pub label: HierarchicalLabel,
}

impl Sample {
    pub fn new(id: impl Into<String>, embedding: Vec<f64>, label: HierarchicalLabel) -> Self {
        Self {
            id: id.into(),
            embedding,
            label,
        }
    }
}

/// Returns `v / ‖v‖`, or `None` for zero or non-finite vectors.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<'a> {
    pub id: &'a str,
    pub distance: f64,
    pub label: &'a HierarchicalLabel,
}

/// Append-only store of unit-norm embeddings with brute-force kNN.
///
/// Reads take `&self` and may run concurrently; [`ingest`](Self::ingest)
/// takes `&mut self`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDatabase {
    dim: usize,
    records: Vec<Sample>,
    ids: HashSet<String>,
}

impl EmbeddingDatabase {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn from_samples(dim: usize, samples: Vec<Sample>) -> Result<Self, RetrievalError> {
        let mut db = Self::new(dim);
        db.ingest(samples)?;
        Ok(db)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Sample] {
        &self.records
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    /// Normalizes and appends `samples`. Nothing is inserted if any sample
    /// is rejected.
    pub fn ingest(&mut self, samples: Vec<Sample>) -> Result<(), RetrievalError> {
        let mut fresh = HashSet::with_capacity(samples.len());
        let mut prepared = Vec::with_capacity(samples.len());
        for s in samples {
            if s.embedding.len() != self.dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: self.dim,
                    got: s.embedding.len(),
                });
            }
            if self.ids.contains(&s.id) || !fresh.insert(s.id.clone()) {
                return Err(RetrievalError::DuplicateId(s.id));
            }
            let embedding =
                normalize(&s.embedding).ok_or_else(|| RetrievalError::DegenerateEmbedding(s.id.clone()))?;
            prepared.push(Sample { embedding, ..s });
        }
        self.ids.extend(fresh);
        self.records.extend(prepared);
        Ok(())
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<Vec<f64>, RetrievalError> {
        if self.records.is_empty() {
            return Err(RetrievalError::EmptyDatabase);
        }
        if k == 0 || k > self.records.len() {
            return Err(RetrievalError::KOutOfRange {
                k,
                size: self.records.len(),
            });
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        normalize(query).ok_or_else(|| RetrievalError::DegenerateEmbedding("<query>".into()))
    }

    /// The `k` nearest records by Euclidean distance, ascending, ties broken
    /// by ascending id.
    pub fn knn_query(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor<'_>>, RetrievalError> {
        let q = self.check_query(query, k)?;
        let mut scored: Vec<(f64, usize)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (squared_distance(&q, &r.embedding), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.records[a.1].id.cmp(&self.records[b.1].id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(d2, i)| Neighbor {
                id: &self.records[i].id,
                distance: d2.sqrt(),
                label: &self.records[i].label,
            })
            .collect())
    }

    /// Majority level key among the `k` nearest; ties go to the key whose
    /// nearest member ranks first.
    pub fn classify(&self, query: &[f64], k: usize, level: usize) -> Result<String, RetrievalError> {
        let neighbors = self.knn_query(query, k)?;
        majority_key(&neighbors, level)
    }
}

fn majority_key(neighbors: &[Neighbor<'_>], level: usize) -> Result<String, RetrievalError> {
    // (key, count, first rank)
    let mut tally: Vec<(&str, usize, usize)> = Vec::new();
    for (rank, n) in neighbors.iter().enumerate() {
        let key = n.label.level_key(level)?;
        match tally.iter_mut().find(|t| t.0 == key) {
            Some(t) => t.1 += 1,
            None => tally.push((key, 1, rank)),
        }
    }
    let best = tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .expect("k >= 1");
    Ok(best.0.to_string())
}

/// Mean fraction of each query's top-`k` neighbors that share its level key.
pub fn precision_at_k(
    db: &EmbeddingDatabase,
    queries: &[Sample],
    k: usize,
    level: usize,
) -> Result<f64, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::EmptyQuerySet);
    }
    let mut total = 0.0;
    for q in queries {
        let key = q.label.level_key(level)?;
        let neighbors = db.knn_query(&q.embedding, k)?;
        let mut hits = 0usize;
        for n in &neighbors {
            if n.label.level_key(level)? == key {
                hits += 1;
            }
        }
        total += hits as f64 / k as f64;
    }
    Ok(total / queries.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapAtR {
    pub value: f64,
    pub evaluated: usize,
    /// Queries skipped because their class has no record in the database.
    pub excluded: usize,
}

/// Mean average precision at `R`, where `R` is the number of database
/// records sharing the query's level key.
pub fn map_at_r(
    db: &EmbeddingDatabase,
    queries: &[Sample],
    level: usize,
) -> Result<MapAtR, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::EmptyQuerySet);
    }
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for q in queries {
        let key = q.label.level_key(level)?;
        let mut r = 0usize;
        for rec in db.records() {
            if rec.label.level_key(level)? == key {
                r += 1;
            }
        }
        if r == 0 {
            excluded += 1;
            continue;
        }
        let neighbors = db.knn_query(&q.embedding, r)?;
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank, n) in neighbors.iter().enumerate() {
            if n.label.level_key(level)? == key {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        sum += ap / r as f64;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(RetrievalError::NoEvaluableQueries);
    }
    Ok(MapAtR {
        value: sum / evaluated as f64,
        evaluated,
        excluded,
    })
}

/// Ancestor-level accuracy over the queries whose 1-NN leaf is wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackReport {
    /// Number of queries misclassified at the leaf.
    pub failures: usize,
    pub total: usize,
    /// Prec@1 at levels `1..depth` over the failures; empty when
    /// `failures == 0`.
    pub per_level: Vec<f64>,
}

impl FallbackReport {
    pub fn is_empty(&self) -> bool {
        self.failures == 0
    }
}

pub fn fallback_accuracy(
    db: &EmbeddingDatabase,
    queries: &[Sample],
) -> Result<FallbackReport, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::EmptyQuerySet);
    }
    let depth = queries[0].label.depth();
    let ancestors = depth.saturating_sub(1);
    let mut hits = vec![0usize; ancestors];
    let mut failures = 0usize;
    for q in queries {
        let nn = db.knn_query(&q.embedding, 1)?;
        let predicted = nn[0].label;
        if predicted.level_key(depth)? == q.label.level_key(depth)? {
            continue;
        }
        failures += 1;
        for (l, h) in hits.iter_mut().enumerate() {
            if predicted.level_key(l + 1)? == q.label.level_key(l + 1)? {
                *h += 1;
            }
        }
    }
    let per_level = if failures == 0 {
        Vec::new()
    } else {
        hits.iter().map(|&h| h as f64 / failures as f64).collect()
    };
    Ok(FallbackReport {
        failures,
        total: queries.len(),
        per_level,
    })
}

/// Prec@k and mAP@R at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub level: usize,
    pub precision_at_k: f64,
    pub map_at_r: f64,
    pub map_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub k: usize,
    pub queries: usize,
    pub levels: Vec<LevelMetrics>,
    pub fallback: Option<FallbackReport>,
}

/// Computes the metrics at every requested level, plus the fallback
/// breakdown when labels have at least two levels.
pub fn retrieval_report(
    db: &EmbeddingDatabase,
    queries: &[Sample],
    k: usize,
    levels: &[usize],
) -> Result<RetrievalReport, RetrievalError> {
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let p = precision_at_k(db, queries, k, level)?;
        let m = map_at_r(db, queries, level)?;
        out.push(LevelMetrics {
            level,
            precision_at_k: p,
            map_at_r: m.value,
            map_excluded: m.excluded,
        });
    }
    let fallback = if queries[0].label.depth() >= 2 {
        Some(fallback_accuracy(db, queries)?)
    } else {
        None
    };
    Ok(RetrievalReport {
        k,
        queries: queries.len(),
        levels: out,
        fallback,
    })
}
