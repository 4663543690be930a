//! Label taxonomy and per-level positive/negative pair sets.
//!
//! A [`HierarchicalLabel`] stores cumulative prefixes, so level `l` of
//! `"BMW/SUV/X5/2012"` is `"BMW/SUV"` when `l == 2`. Two labels belong to the
//! same class at level `l` iff their level-`l` keys are equal, which makes the
//! prefix property hold by construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator used by [`HierarchicalLabel::parse`] and the label manifest.
pub const DELIMITER: char = '/';

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("malformed label {spec:?}: expected {expected} non-empty segments")]
    MalformedLabel { spec: String, expected: usize },
    #[error("level {level} out of range for label of depth {depth}")]
    LevelOutOfRange { level: usize, depth: usize },
    #[error("pair sets need at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("labels have mixed depths ({0} and {1})")]
    MixedDepth(usize, usize),
}

/// A root-first path through the label tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HierarchicalLabel {
    path: Vec<String>,
}

impl HierarchicalLabel {
    /// Parses `"seg/seg/.../seg"` into a label with exactly `depth` levels.
    pub fn parse(spec: &str, depth: usize) -> Result<Self, HierarchyError> {
        let malformed = || HierarchyError::MalformedLabel {
            spec: spec.to_string(),
            expected: depth,
        };
        if depth == 0 {
            return Err(malformed());
        }
        let segments: Vec<&str> = spec.split(DELIMITER).collect();
        if segments.len() != depth || segments.iter().any(|s| s.is_empty()) {
            return Err(malformed());
        }
        Self::from_segments(&segments).ok_or_else(malformed)
    }

    /// Parses a label of whatever depth the string has.
    pub fn parse_any(spec: &str) -> Result<Self, HierarchyError> {
        let depth = spec.split(DELIMITER).count();
        Self::parse(spec, depth)
    }

    /// Builds a label from raw (non-cumulative) segments.
    pub fn from_segments<S: AsRef<str>>(segments: &[S]) -> Option<Self> {
        if segments.is_empty() {
            return None;
        }
        let mut path = Vec::with_capacity(segments.len());
        let mut acc = String::new();
        for seg in segments {
            let seg = seg.as_ref();
            if seg.is_empty() || seg.contains(DELIMITER) {
                return None;
            }
            if !acc.is_empty() {
                acc.push(DELIMITER);
            }
            acc.push_str(seg);
            path.push(acc.clone());
        }
        Some(Self { path })
    }

    pub fn depth(&self) -> usize {
        self.path.len()
    }

    /// Key at `level` (1 = root, `depth()` = leaf).
    pub fn level_key(&self, level: usize) -> Result<&str, HierarchyError> {
        if level == 0 || level > self.path.len() {
            return Err(HierarchyError::LevelOutOfRange {
                level,
                depth: self.path.len(),
            });
        }
        Ok(&self.path[level - 1])
    }

    pub fn leaf(&self) -> &str {
        self.path.last().expect("labels are non-empty")
    }

    /// All cumulative keys, root first.
    pub fn path(&self) -> &[String] {
        &self.path
    }

    /// `true` iff both labels have the same key at `level`.
    pub fn same_at(&self, other: &Self, level: usize) -> bool {
        match (self.level_key(level), other.level_key(level)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        }
    }
}

impl std::fmt::Display for HierarchicalLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.leaf())
    }
}

impl Serialize for HierarchicalLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.leaf())
    }
}

impl<'de> Deserialize<'de> for HierarchicalLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse_any(&raw).map_err(serde::de::Error::custom)
    }
}

/// Checks that every label has the same depth and returns it.
pub fn common_depth(labels: &[HierarchicalLabel]) -> Result<usize, HierarchyError> {
    let first = labels.first().map(|l| l.depth()).unwrap_or(0);
    for l in labels {
        if l.depth() != first {
            return Err(HierarchyError::MixedDepth(first, l.depth()));
        }
    }
    Ok(first)
}

/// Per-anchor positive and negative index sets at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSets {
    pub level: usize,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl PairSets {
    pub fn batch_size(&self) -> usize {
        self.positives.len()
    }
}

/// Splits each anchor's co-batch indices into same-key and different-key
/// sets at `level`. Index lists are ascending.
pub fn pair_sets(labels: &[HierarchicalLabel], level: usize) -> Result<PairSets, HierarchyError> {
    if labels.len() < 2 {
        return Err(HierarchyError::BatchTooSmall(labels.len()));
    }
    let keys = labels
        .iter()
        .map(|l| l.level_key(level))
        .collect::<Result<Vec<_>, _>>()?;
    let n = keys.len();
    let mut positives = vec![Vec::new(); n];
    let mut negatives = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if keys[i] == keys[j] {
                positives[i].push(j);
            } else {
                negatives[i].push(j);
            }
        }
    }
    Ok(PairSets {
        level,
        positives,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(s: &str) -> HierarchicalLabel {
        HierarchicalLabel::parse_any(s).unwrap()
    }

    #[test]
    fn parse_builds_cumulative_prefixes() {
        let l = HierarchicalLabel::parse("BMW/SUV/X5/2012", 4).unwrap();
        assert_eq!(l.path(), ["BMW", "BMW/SUV", "BMW/SUV/X5", "BMW/SUV/X5/2012"]);
        assert_eq!(l.level_key(2).unwrap(), "BMW/SUV");
        assert_eq!(l.level_key(4).unwrap(), l.leaf());
    }

    #[test]
    fn single_level_label() {
        let l = HierarchicalLabel::parse("Red", 1).unwrap();
        assert_eq!(l.depth(), 1);
        assert_eq!(l.leaf(), "Red");
    }

    #[test]
    fn malformed_labels_are_rejected() {
        assert!(matches!(
            HierarchicalLabel::parse("BMW//X5/2012", 4),
            Err(HierarchyError::MalformedLabel { .. })
        ));
        assert!(HierarchicalLabel::parse("BMW/SUV", 3).is_err());
        assert!(HierarchicalLabel::parse("", 1).is_err());
    }

    #[test]
    fn level_zero_is_out_of_range() {
        let l = lab("A/b");
        assert!(matches!(l.level_key(0), Err(HierarchyError::LevelOutOfRange { .. })));
        assert!(l.level_key(3).is_err());
    }

    #[test]
    fn reused_model_name_does_not_collide_across_makes() {
        let a = lab("BMW/SUV/M3");
        let b = lab("Audi/SUV/M3");
        assert!(!a.same_at(&b, 3));
        assert!(!a.same_at(&b, 2));
    }

    #[test]
    fn pair_sets_small_examples() {
        let labels = [lab("A/x"), lab("A/y"), lab("B/x")];
        let p = pair_sets(&labels, 1).unwrap();
        assert_eq!(p.positives[0], vec![1]);
        assert_eq!(p.negatives[0], vec![2]);
        assert!(p.positives[2].is_empty());
        assert_eq!(p.negatives[2], vec![0, 1]);

        let same = [lab("A/x"), lab("A/x")];
        let p = pair_sets(&same, 2).unwrap();
        assert_eq!(p.positives[0], vec![1]);
        assert!(p.negatives[0].is_empty());
    }

    #[test]
    fn pair_sets_errors() {
        assert!(matches!(pair_sets(&[lab("A")], 1), Err(HierarchyError::BatchTooSmall(1))));
        assert!(pair_sets(&[lab("A/x"), lab("B")], 2).is_err());
    }

    #[test]
    fn label_serde_round_trip() {
        let l = lab("A/b/c");
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(json, "\"A/b/c\"");
        let back: HierarchicalLabel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
    }
}
