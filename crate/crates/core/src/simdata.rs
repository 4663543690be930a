//! Synthetic hierarchical Gaussian embeddings.
//!
//! Centers are built top-down: each child center is its parent's center plus
//! an isotropic Gaussian offset whose scale depends on the level. Samples are
//! leaf centers plus isotropic noise. A seeded ChaCha stream makes the output
//! a pure function of the spec.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::HierarchicalLabel;
use crate::retrieval::Sample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimDataError {
    #[error("invalid hierarchy spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchySpec {
    /// Children per node at each level, root first.
    pub branching: Vec<usize>,
    pub dim: usize,
    /// Standard deviation of the center offset introduced at each level.
    pub level_scales: Vec<f64>,
    pub leaf_noise: f64,
    /// Fraction of leaves held out as unseen classes.
    pub unseen_fraction: f64,
    pub seed: u64,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self {
            branching: vec![4, 2, 2, 2],
            dim: 32,
            level_scales: vec![4.0, 2.0, 1.0, 0.5],
            leaf_noise: 0.3,
            unseen_fraction: 0.1875,
            seed: 0,
        }
    }
}

impl HierarchySpec {
    pub fn depth(&self) -> usize {
        self.branching.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.branching.iter().product()
    }

    pub fn unseen_count(&self) -> usize {
        (self.unseen_fraction * self.leaf_count() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimDataError> {
        let bad = |m: &str| Err(SimDataError::InvalidSpec(m.to_string()));
        if self.branching.is_empty() || self.branching.contains(&0) {
            return bad("branching must be non-empty with entries >= 1");
        }
        if self.level_scales.len() != self.branching.len() {
            return bad("level_scales must have one entry per level");
        }
        if self.level_scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("level scales must be positive");
        }
        if !(self.leaf_noise >= 0.0 && self.leaf_noise.is_finite()) {
            return bad("leaf_noise must be non-negative");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.unseen_fraction) {
            return bad("unseen_fraction must be in [0, 1]");
        }
        Ok(())
    }
}

/// Labeled samples plus the seen/unseen leaf partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub samples: Vec<Sample>,
    /// Leaf keys, sorted.
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

impl Dataset {
    pub fn is_unseen(&self, leaf: &str) -> bool {
        self.unseen.binary_search_by(|u| u.as_str().cmp(leaf)).is_ok()
    }

    pub fn seen_samples(&self) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| !self.is_unseen(s.label.leaf()))
            .cloned()
            .collect()
    }

    pub fn unseen_samples(&self) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| self.is_unseen(s.label.leaf()))
            .cloned()
            .collect()
    }
}

/// Segment name for child `index` at zero-based `level`: `a0`, `b1`, ...
fn segment(level: usize, index: usize) -> String {
    let letter = (b'a' + (level % 26) as u8) as char;
    format!("{letter}{index}")
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// Generates `n_per_leaf` samples for every leaf of the tree.
pub fn generate(spec: &HierarchySpec, n_per_leaf: usize) -> Result<Dataset, SimDataError> {
    spec.validate()?;
    if n_per_leaf < 2 {
        return Err(SimDataError::InvalidSpec("n_per_leaf must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // breadth-first expansion of (segments, center)
    let mut nodes: Vec<(Vec<String>, Vec<f64>)> = vec![(Vec::new(), vec![0.0; spec.dim])];
    for (level, (&branch, &scale)) in spec.branching.iter().zip(&spec.level_scales).enumerate() {
        let mut next = Vec::with_capacity(nodes.len() * branch);
        for (path, center) in &nodes {
            for child in 0..branch {
                let offset = gaussian(&mut rng, spec.dim, scale);
                let c: Vec<f64> = center.iter().zip(&offset).map(|(a, b)| a + b).collect();
                let mut p = path.clone();
                p.push(segment(level, child));
                next.push((p, c));
            }
        }
        nodes = next;
    }

    let mut samples = Vec::with_capacity(nodes.len() * n_per_leaf);
    let mut leaves = Vec::with_capacity(nodes.len());
    for (path, center) in &nodes {
        let label = HierarchicalLabel::from_segments(path).expect("generated segments are valid");
        for n in 0..n_per_leaf {
            let noise = gaussian(&mut rng, spec.dim, spec.leaf_noise);
            let embedding = center.iter().zip(&noise).map(|(a, b)| a + b).collect();
            samples.push(Sample::new(
                format!("{}#{n}", path.join("-")),
                embedding,
                label.clone(),
            ));
        }
        leaves.push(label.leaf().to_string());
    }

    let unseen_idx = sample_indices(&mut rng, leaves.len(), spec.unseen_count()).into_vec();
    let mut unseen: Vec<String> = unseen_idx.iter().map(|&i| leaves[i].clone()).collect();
    unseen.sort();
    let mut seen: Vec<String> = leaves.into_iter().filter(|l| !unseen.contains(l)).collect();
    seen.sort();

    Ok(Dataset {
        dim: spec.dim,
        samples,
        seen,
        unseen,
    })
}

/// Splits samples class by class: the first `ceil(n·(1−query_fraction))`
/// of each leaf (in id order after a seeded shuffle) go to the database,
/// the rest to the query set. Every class keeps at least one sample on
/// each side when it has two or more.
pub fn split_per_class(samples: &[Sample], query_fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    use rand::seq::SliceRandom;
    use std::collections::BTreeMap;

    let mut by_leaf: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        by_leaf.entry(s.label.leaf()).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db = Vec::new();
    let mut queries = Vec::new();
    for (_, mut members) in by_leaf {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        let n = members.len();
        let mut n_query = (query_fraction * n as f64).round() as usize;
        if n >= 2 {
            n_query = n_query.clamp(1, n - 1);
        } else {
            n_query = 0;
        }
        let (q, d) = members.split_at(n_query);
        db.extend(d.iter().map(|s| (*s).clone()));
        queries.extend(q.iter().map(|s| (*s).clone()));
    }
    (db, queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_has_32_leaves_6_unseen() {
        let spec = HierarchySpec::default();
        assert_eq!(spec.leaf_count(), 32);
        assert_eq!(spec.unseen_count(), 6);
        let data = generate(&spec, 4).unwrap();
        assert_eq!(data.samples.len(), 128);
        assert_eq!(data.unseen.len(), 6);
        assert_eq!(data.seen.len(), 26);
        assert_eq!(data.samples[0].label.depth(), 4);
    }

    #[test]
    fn zero_noise_gives_identical_leaf_samples() {
        let spec = HierarchySpec {
            leaf_noise: 0.0,
            ..HierarchySpec::default()
        };
        let data = generate(&spec, 3).unwrap();
        assert_eq!(data.samples[0].embedding, data.samples[1].embedding);
        assert_eq!(data.samples[1].embedding, data.samples[2].embedding);
        assert_ne!(data.samples[2].embedding, data.samples[3].embedding);
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = HierarchySpec::default();
        assert_eq!(generate(&spec, 3).unwrap(), generate(&spec, 3).unwrap());
        let other = HierarchySpec {
            seed: 9,
            ..spec.clone()
        };
        assert_ne!(generate(&spec, 3).unwrap(), generate(&other, 3).unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&HierarchySpec::default(), 1).is_err());
        let spec = HierarchySpec {
            branching: vec![2, 0],
            level_scales: vec![1.0, 1.0],
            ..HierarchySpec::default()
        };
        assert!(generate(&spec, 2).is_err());
    }

    #[test]
    fn split_keeps_both_sides_per_class() {
        let data = generate(&HierarchySpec::default(), 5).unwrap();
        let (db, q) = split_per_class(&data.samples, 0.5, 1);
        assert_eq!(db.len() + q.len(), data.samples.len());
        for leaf in data.seen.iter().chain(&data.unseen) {
            assert!(db.iter().any(|s| s.label.leaf() == leaf));
            assert!(q.iter().any(|s| s.label.leaf() == leaf));
        }
    }
}
