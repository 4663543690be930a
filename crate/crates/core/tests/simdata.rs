use openworld::retrieval::{precision_at_k, EmbeddingDatabase};
use openworld::simdata::{generate, split_per_class, HierarchySpec};

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[test]
fn siblings_closer_than_non_siblings() {
    let mut wins = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let spec = HierarchySpec {
            seed,
            leaf_noise: 0.0,
            ..HierarchySpec::default()
        };
        let data = generate(&spec, 2).unwrap();
        // with zero noise every sample sits on its leaf center
        let centers: Vec<_> = data.samples.iter().step_by(2).collect();
        let depth = spec.depth();
        let (mut sib, mut n_sib, mut other, mut n_other) = (0.0, 0usize, 0.0, 0usize);
        for (i, a) in centers.iter().enumerate() {
            for b in &centers[i + 1..] {
                let d = sq(&a.embedding, &b.embedding);
                if a.label.same_at(&b.label, depth - 1) {
                    sib += d;
                    n_sib += 1;
                } else {
                    other += d;
                    n_other += 1;
                }
            }
        }
        if sib / (n_sib as f64) < other / (n_other as f64) {
            wins += 1;
        }
    }
    assert_eq!(wins, seeds);
}

#[test]
fn zero_noise_gives_perfect_precision() {
    let spec = HierarchySpec {
        leaf_noise: 0.0,
        ..HierarchySpec::default()
    };
    let data = generate(&spec, 4).unwrap();
    let (db, q) = split_per_class(&data.samples, 0.5, 3);
    let db = EmbeddingDatabase::from_samples(spec.dim, db).unwrap();
    assert_eq!(precision_at_k(&db, &q, 1, spec.depth()).unwrap(), 1.0);
}

#[test]
fn serialized_dataset_is_byte_identical() {
    let spec = HierarchySpec::default();
    let a = serde_json::to_vec(&generate(&spec, 3).unwrap()).unwrap();
    let b = serde_json::to_vec(&generate(&spec, 3).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unseen_partition_is_whole_leaves() {
    let data = generate(&HierarchySpec::default(), 3).unwrap();
    assert_eq!(data.seen.len() + data.unseen.len(), 32);
    assert!(data.unseen.iter().all(|u| !data.seen.contains(u)));
    assert_eq!(data.unseen_samples().len(), 6 * 3);
    assert_eq!(data.seen_samples().len(), 26 * 3);
}
