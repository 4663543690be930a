use openworld::hierarchy::HierarchicalLabel;
use openworld::retrieval::{map_at_r, precision_at_k, EmbeddingDatabase, Sample};
use oracles::retrieval as oracle;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_samples(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize, prefix: &str) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let c = rng.random_range(0..classes);
            // coarse grid coordinates make exact distance ties common
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2..=2) as f64).collect();
            let v = if v.iter().all(|x| *x == 0.0) { vec![1.0; dim] } else { v };
            Sample::new(
                format!("{prefix}{i:03}"),
                v,
                HierarchicalLabel::parse_any(&format!("g{}/c{c}", c % 2)).unwrap(),
            )
        })
        .collect()
}

fn as_oracle_db(samples: &[Sample], level: usize) -> Vec<(String, Vec<f64>, String)> {
    samples
        .iter()
        .map(|s| (s.id.clone(), s.embedding.clone(), s.label.level_key(level).unwrap().to_string()))
        .collect()
}

fn as_oracle_queries(samples: &[Sample], level: usize) -> Vec<(Vec<f64>, String)> {
    samples
        .iter()
        .map(|s| (s.embedding.clone(), s.label.level_key(level).unwrap().to_string()))
        .collect()
}

#[test]
fn knn_matches_exhaustive_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let n = rng.random_range(1..=200);
        let samples = random_samples(&mut rng, n, 3, 4, "r");
        let db = EmbeddingDatabase::from_samples(3, samples.clone()).unwrap();
        let odb = as_oracle_db(&samples, 2);
        for _ in 0..5 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = rng.random_range(1..=n);
            let got = db.knn_query(&q, k).unwrap();
            let want = oracle::sorted_neighbors(&odb, &q);
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.id, w.1);
            }
        }
    }
}

#[test]
fn metrics_match_oracle_on_fuzzed_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.random_range(4..=30);
        let dbs = random_samples(&mut rng, n, 3, 4, "d");
        let nq = rng.random_range(1..=10);
        let qs = random_samples(&mut rng, nq, 3, 4, "q");
        let db = EmbeddingDatabase::from_samples(3, dbs.clone()).unwrap();
        for level in 1..=2 {
            let k = rng.random_range(1..=n);
            let p = precision_at_k(&db, &qs, k, level).unwrap();
            let po = oracle::precision_at_k(&as_oracle_db(&dbs, level), &as_oracle_queries(&qs, level), k);
            assert!((p - po).abs() <= 1e-12);
            assert!((0.0..=1.0).contains(&p));

            let present: Vec<Sample> = qs
                .iter()
                .filter(|q| dbs.iter().any(|d| d.label.same_at(&q.label, level)))
                .cloned()
                .collect();
            match map_at_r(&db, &qs, level) {
                Ok(m) => {
                    assert_eq!(m.evaluated, present.len());
                    assert_eq!(m.excluded, qs.len() - present.len());
                    let mo = oracle::map_at_r(&as_oracle_db(&dbs, level), &as_oracle_queries(&present, level));
                    assert!((m.value - mo).abs() <= 1e-12);
                    assert!((0.0..=1.0).contains(&m.value));
                }
                Err(_) => assert!(present.is_empty()),
            }
        }
    }
}

#[test]
fn map_is_one_iff_classes_rank_first() {
    let lab = |s: &str| HierarchicalLabel::parse_any(s).unwrap();
    let db = EmbeddingDatabase::from_samples(
        2,
        vec![
            Sample::new("a1", vec![1.0, 0.0], lab("A")),
            Sample::new("a2", vec![1.0, 0.1], lab("A")),
            Sample::new("b1", vec![0.0, 1.0], lab("B")),
            Sample::new("b2", vec![0.1, 1.0], lab("B")),
        ],
    )
    .unwrap();
    let good = vec![Sample::new("qa", vec![1.0, 0.05], lab("A"))];
    assert_eq!(map_at_r(&db, &good, 1).unwrap().value, 1.0);
    let bad = vec![Sample::new("qa", vec![0.7, 0.75], lab("A"))];
    assert!(map_at_r(&db, &bad, 1).unwrap().value < 1.0);
}

#[test]
fn classify_ignores_record_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut samples = random_samples(&mut rng, 40, 3, 5, "d");
        let a = EmbeddingDatabase::from_samples(3, samples.clone()).unwrap();
        samples.shuffle(&mut rng);
        let b = EmbeddingDatabase::from_samples(3, samples).unwrap();
        for _ in 0..10 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            for k in [1, 3, 7] {
                for level in 1..=2 {
                    let x = a.classify(&q, k, level).unwrap();
                    assert_eq!(x, a.classify(&q, k, level).unwrap());
                    assert_eq!(x, b.classify(&q, k, level).unwrap());
                }
            }
        }
    }
}

#[test]
fn growth_equals_rebuild() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let first = random_samples(&mut rng, 30, 4, 6, "a");
    let second = random_samples(&mut rng, 20, 4, 6, "b");
    let queries = random_samples(&mut rng, 15, 4, 6, "q");
    let mut grown = EmbeddingDatabase::from_samples(4, first.clone()).unwrap();
    grown.ingest(second.clone()).unwrap();
    let merged = EmbeddingDatabase::from_samples(4, [first, second].concat()).unwrap();
    for level in 1..=2 {
        assert_eq!(
            precision_at_k(&grown, &queries, 3, level).unwrap(),
            precision_at_k(&merged, &queries, 3, level).unwrap()
        );
        assert_eq!(map_at_r(&grown, &queries, level).unwrap(), map_at_r(&merged, &queries, level).unwrap());
    }
}

#[test]
fn ingest_rejects_duplicates_atomically() {
    let lab = HierarchicalLabel::parse_any("A").unwrap();
    let mut db = EmbeddingDatabase::new(2);
    db.ingest(vec![Sample::new("x", vec![1.0, 0.0], lab.clone())]).unwrap();
    let err = db.ingest(vec![
        Sample::new("y", vec![0.0, 1.0], lab.clone()),
        Sample::new("x", vec![1.0, 1.0], lab),
    ]);
    assert!(err.is_err());
    assert_eq!(db.len(), 1);
}
