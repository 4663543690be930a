//! Distance-based out-of-distribution detection: k-th nearest neighbor
//! scoring with ID-recall threshold calibration, a class-conditional
//! Mahalanobis baseline, and the FPR@TPR / AUROC metrics.
//!
//! Scores follow one convention throughout: larger means more OOD, and a
//! query is flagged OOD iff its score is strictly above the threshold.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{normalize, EmbeddingDatabase, RetrievalError};

#[derive(Debug, Error)]
pub enum OodError {
    #[error("reference set has {size} records, need at least k = {k}")]
    DatabaseTooSmall { size: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("empty score list")]
    EmptyScores,
    #[error("target TPR {0} outside (0, 1]")]
    InvalidTpr(f64),
    #[error("covariance is singular (smallest eigenvalue {0:e})")]
    SingularCovariance(f64),
    #[error("mahalanobis fit needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ridge must be non-negative")]
    NegativeRidge,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Euclidean distance from the normalized query to its `k`-th nearest
/// database record.
pub fn knn_ood_score(db: &EmbeddingDatabase, query: &[f64], k: usize) -> Result<f64, OodError> {
    if k == 0 {
        return Err(OodError::ZeroK);
    }
    if db.len() < k {
        return Err(OodError::DatabaseTooSmall { size: db.len(), k });
    }
    let neighbors = db.knn_query(query, k)?;
    Ok(neighbors[k - 1].distance)
}

/// The `⌈tpr·N⌉`-th smallest score: the smallest threshold under which at
/// least a `tpr` fraction of `id_scores` are at or below it.
pub fn threshold_at_tpr(id_scores: &[f64], tpr: f64) -> Result<f64, OodError> {
    if id_scores.is_empty() {
        return Err(OodError::EmptyScores);
    }
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(OodError::InvalidTpr(tpr));
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // tpr·n can land a hair above an integer (0.95 * 20), so round first
    let rank = ((tpr * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

/// KNN+ detector: a reference database, the neighbor rank `k`, and a
/// calibrated distance threshold.
#[derive(Debug, Clone)]
pub struct KnnOodDetector {
    pub db: EmbeddingDatabase,
    pub k: usize,
    pub threshold: f64,
}

impl KnnOodDetector {
    /// Calibrates the threshold on held-in ID embeddings so that a
    /// `target_tpr` fraction of them score at or below it.
    pub fn calibrate(
        db: EmbeddingDatabase,
        held_in: &[Vec<f64>],
        k: usize,
        target_tpr: f64,
    ) -> Result<Self, OodError> {
        let threshold = calibrate_threshold(&db, held_in, k, target_tpr)?;
        Ok(Self { db, k, threshold })
    }

    pub fn score(&self, query: &[f64]) -> Result<f64, OodError> {
        knn_ood_score(&self.db, query, self.k)
    }

    pub fn is_ood(&self, query: &[f64]) -> Result<bool, OodError> {
        Ok(self.score(query)? > self.threshold)
    }
}

pub fn calibrate_threshold(
    db: &EmbeddingDatabase,
    held_in: &[Vec<f64>],
    k: usize,
    target_tpr: f64,
) -> Result<f64, OodError> {
    if held_in.is_empty() {
        return Err(OodError::EmptyScores);
    }
    let scores = held_in
        .iter()
        .map(|q| knn_ood_score(db, q, k))
        .collect::<Result<Vec<_>, _>>()?;
    threshold_at_tpr(&scores, target_tpr)
}

/// Fraction of OOD scores at or below the ID threshold calibrated at `tpr`.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<f64, OodError> {
    if ood_scores.is_empty() {
        return Err(OodError::EmptyScores);
    }
    let t = threshold_at_tpr(id_scores, tpr)?;
    let accepted = ood_scores.iter().filter(|&&s| s <= t).count();
    Ok(accepted as f64 / ood_scores.len() as f64)
}

/// Probability that a random OOD score exceeds a random ID score, ties
/// counted as one half. Computed from midranks in `O((n+m) log(n+m))`.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64, OodError> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(OodError::EmptyScores);
    }
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of (doubled) midranks of the OOD scores
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j, doubled midrank = i + 1 + j
        let mid2 = (i + 1 + j) as u128;
        let ood_in_group = all[i..j].iter().filter(|e| e.1).count() as u128;
        rank_sum2 += mid2 * ood_in_group;
        i = j;
    }
    let n = id_scores.len() as u128;
    let m = ood_scores.len() as u128;
    // U = R_ood - m(m+1)/2, in doubled units
    let u2 = rank_sum2 - m * (m + 1);
    Ok(u2 as f64 / (2 * n * m) as f64)
}

/// Ridge added to the pooled covariance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ridge {
    /// `1e-6 · trace(Σ) / D`.
    #[default]
    Auto,
    Fixed(f64),
}

/// Class means and the inverse of the shared (ridged) covariance.
#[derive(Debug, Clone)]
pub struct MahalanobisModel {
    pub classes: Vec<String>,
    pub means: Vec<DVector<f64>>,
    pub covariance: DMatrix<f64>,
    pub ridge: f64,
    precision: DMatrix<f64>,
}

impl MahalanobisModel {
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }
}

/// Fits per-class means and the pooled within-class covariance
/// `Σ = (1/N) Σ_c Σ_{x∈c} (x−μ_c)(x−μ_c)ᵀ`, then adds `ridge·I`.
pub fn mahalanobis_fit(
    embeddings: &[Vec<f64>],
    labels: &[String],
    ridge: Ridge,
) -> Result<MahalanobisModel, OodError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(OodError::TooFewSamples(n));
    }
    let dim = embeddings[0].len();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (e, l)) in embeddings.iter().zip(labels).enumerate() {
        if e.len() != dim {
            return Err(OodError::DimensionMismatch {
                expected: dim,
                got: e.len(),
            });
        }
        groups.entry(l.as_str()).or_default().push(i);
    }
    let mut classes = Vec::with_capacity(groups.len());
    let mut means = Vec::with_capacity(groups.len());
    let mut scatter = DMatrix::<f64>::zeros(dim, dim);
    for (class, idx) in &groups {
        let mut mu = DVector::<f64>::zeros(dim);
        for &i in idx {
            mu += DVector::from_column_slice(&embeddings[i]);
        }
        mu /= idx.len() as f64;
        for &i in idx {
            let d = DVector::from_column_slice(&embeddings[i]) - &mu;
            scatter.ger(1.0, &d, &d, 1.0);
        }
        classes.push(class.to_string());
        means.push(mu);
    }
    let pooled = scatter / n as f64;
    let ridge = match ridge {
        Ridge::Auto => 1e-6 * pooled.trace() / dim as f64,
        Ridge::Fixed(r) if r >= 0.0 => r,
        Ridge::Fixed(_) => return Err(OodError::NegativeRidge),
    };
    let covariance = &pooled + DMatrix::<f64>::identity(dim, dim) * ridge;
    let eig = SymmetricEigen::new(covariance.clone());
    let max_ev = eig.eigenvalues.max();
    let min_ev = eig.eigenvalues.min();
    if !(min_ev > 1e-12 * max_ev.max(f64::MIN_POSITIVE)) || !(max_ev > 0.0) {
        return Err(OodError::SingularCovariance(min_ev));
    }
    let precision = covariance
        .clone()
        .cholesky()
        .ok_or(OodError::SingularCovariance(min_ev))?
        .inverse();
    Ok(MahalanobisModel {
        classes,
        means,
        covariance,
        ridge,
        precision,
    })
}

/// Minimum over classes of `(z−μ_c)ᵀ Σ⁻¹ (z−μ_c)`.
pub fn mahalanobis_score(model: &MahalanobisModel, query: &[f64]) -> Result<f64, OodError> {
    if query.len() != model.dim() {
        return Err(OodError::DimensionMismatch {
            expected: model.dim(),
            got: query.len(),
        });
    }
    let z = DVector::from_column_slice(query);
    Ok(model
        .means
        .iter()
        .map(|mu| {
            let d = &z - mu;
            (d.transpose() * &model.precision * &d)[(0, 0)]
        })
        .fold(f64::INFINITY, f64::min))
}

/// Unit-normalizes every row; used so Mahalanobis sees the same geometry as
/// the kNN scores.
pub fn normalize_rows(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, OodError> {
    rows.iter()
        .map(|r| normalize(r).ok_or_else(|| RetrievalError::DegenerateEmbedding("<row>".into()).into()))
        .collect()
}

/// One row of a score dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub is_id: bool,
}

/// Writes `id,score,is_id` CSV rows.
pub fn write_score_csv<W: Write>(mut out: W, rows: &[ScoreRecord]) -> Result<(), OodError> {
    writeln!(out, "id,score,is_id")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.id, r.score, u8::from(r.is_id))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchicalLabel;
    use crate::retrieval::Sample;

    fn db(points: &[Vec<f64>]) -> EmbeddingDatabase {
        EmbeddingDatabase::from_samples(
            points[0].len(),
            points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    Sample::new(format!("r{i}"), p.clone(), HierarchicalLabel::parse_any("A").unwrap())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn knn_score_examples() {
        let d = db(&[vec![1.0, 0.0]]);
        assert_eq!(knn_ood_score(&d, &[1.0, 0.0], 1).unwrap(), 0.0);
        let s = knn_ood_score(&d, &[0.0, 1.0], 1).unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            knn_ood_score(&d, &[0.0, 1.0], 2),
            Err(OodError::DatabaseTooSmall { .. })
        ));
    }

    #[test]
    fn threshold_order_statistic() {
        let scores: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(threshold_at_tpr(&scores, 0.95).unwrap(), 19.0);
        assert_eq!(threshold_at_tpr(&[0.0; 5], 0.95).unwrap(), 0.0);
        assert!(threshold_at_tpr(&[], 0.95).is_err());
        assert!(threshold_at_tpr(&[1.0], 0.0).is_err());
    }

    #[test]
    fn zero_threshold_flags_any_positive_score() {
        let d = db(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let det = KnnOodDetector::calibrate(d, &[vec![1.0, 0.0], vec![0.0, 2.0]], 1, 0.95).unwrap();
        assert_eq!(det.threshold, 0.0);
        assert!(det.is_ood(&[1.0, 0.1]).unwrap());
        assert!(!det.is_ood(&[3.0, 0.0]).unwrap());
    }

    #[test]
    fn fpr_examples() {
        let id: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(fpr_at_tpr(&id, &[50.5], 0.95).unwrap(), 1.0);
        assert_eq!(fpr_at_tpr(&[0.1, 0.2], &[5.0, 6.0], 0.95).unwrap(), 0.0);
        assert!(fpr_at_tpr(&id, &[], 0.95).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.5, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3, 0.4, 0.3], &[0.3, 0.4, 0.3]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0], &[0.0]).unwrap(), 0.0);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn mahalanobis_identical_points() {
        let e = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![-1.0, 0.0], vec![-1.0, 0.0]];
        let l: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let m = mahalanobis_fit(&e, &l, Ridge::Fixed(0.5)).unwrap();
        assert_eq!(m.covariance, DMatrix::identity(2, 2) * 0.5);
        assert_eq!(m.means[0].as_slice(), &[1.0, 2.0]);
        assert_eq!(mahalanobis_score(&m, &[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            mahalanobis_fit(&e, &l, Ridge::Fixed(0.0)),
            Err(OodError::SingularCovariance(_))
        ));
    }

    #[test]
    fn mahalanobis_rank_deficient_without_ridge() {
        // D = 4 > N = 3
        let e = vec![
            vec![1.0, 0.0, 0.5, 0.2],
            vec![0.0, 1.0, 0.1, 0.9],
            vec![0.3, 0.3, 1.0, 0.0],
        ];
        let l = vec!["a".to_string(); 3];
        assert!(matches!(
            mahalanobis_fit(&e, &l, Ridge::Fixed(0.0)),
            Err(OodError::SingularCovariance(_))
        ));
    }

    #[test]
    fn mahalanobis_identity_covariance_reduces_to_squared_norm() {
        // one class at the origin with unit-variance, uncorrelated scatter
        let e = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let l = vec!["c".to_string(); 4];
        let m = mahalanobis_fit(&e, &l, Ridge::Fixed(0.5)).unwrap();
        assert_eq!(m.covariance, DMatrix::identity(2, 2));
        let s = mahalanobis_score(&m, &[0.0, 2.0]).unwrap();
        assert!((s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn score_csv_format() {
        let mut buf = Vec::new();
        write_score_csv(
            &mut buf,
            &[ScoreRecord {
                id: "q1".into(),
                score: 0.5,
                is_id: true,
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,score,is_id\nq1,0.5,1\n");
    }
}
