use nalgebra::DMatrix;
use openworld::hierarchy::{pair_sets, HierarchicalLabel};
use openworld::losses::{
    compute_loss, evaluate_frozen, hierarchical_loss, ms_loss, supcon_pair_terms, LossMode, LossParams,
};
use oracles::gradcheck::{central_difference, max_relative_error};
use oracles::loss as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MODES: [LossMode; 4] = [
    LossMode::FlatMs,
    LossMode::HiSupCon,
    LossMode::HiMsMax,
    LossMode::HiMsMin,
];

struct Batch {
    z: DMatrix<f64>,
    segments: Vec<Vec<String>>,
    labels: Vec<HierarchicalLabel>,
}

impl Batch {
    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.z.nrows())
            .map(|i| self.z.row(i).iter().copied().collect())
            .collect()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize, depth: usize, branch: usize) -> Batch {
    let z = DMatrix::from_fn(b, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let segments: Vec<Vec<String>> = (0..b)
        .map(|_| {
            (0..depth)
                .map(|l| format!("l{l}v{}", rng.random_range(0..branch)))
                .collect()
        })
        .collect();
    let labels = segments
        .iter()
        .map(|s| HierarchicalLabel::from_segments(s).unwrap())
        .collect();
    Batch { z, segments, labels }
}

fn oracle_params(p: &LossParams) -> oracle::Params {
    oracle::Params {
        alpha: p.alpha,
        beta: p.beta,
        margin: p.margin,
        epsilon: p.mining_epsilon,
        tau: p.tau,
    }
}

fn oracle_value(batch: &Batch, p: &LossParams) -> f64 {
    let op = oracle_params(p);
    match p.mode {
        LossMode::FlatMs => oracle::ms(&batch.rows(), &batch.segments, &op),
        LossMode::HiSupCon => oracle::hierarchical(&batch.rows(), &batch.segments, &op, oracle::Mode::HiSupCon).0,
        LossMode::HiMsMax => oracle::hierarchical(&batch.rows(), &batch.segments, &op, oracle::Mode::HiMsMax).0,
        LossMode::HiMsMin => oracle::hierarchical(&batch.rows(), &batch.segments, &op, oracle::Mode::HiMsMin).0,
    }
}

#[test]
fn ms_example_matches_oracle_and_finite_differences() {
    // 6x4 batch, 3 classes, alpha 2, beta 50, margin 1, eps 0.1
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut batch = random_batch(&mut rng, 6, 4, 1, 1);
    for (i, s) in batch.segments.iter_mut().enumerate() {
        s[0] = format!("c{}", i % 3);
    }
    batch.labels = batch
        .segments
        .iter()
        .map(|s| HierarchicalLabel::from_segments(s).unwrap())
        .collect();
    let params = LossParams::with_mode(LossMode::FlatMs);
    let pairs = pair_sets(&batch.labels, 1).unwrap();
    let out = ms_loss(&batch.z, &pairs, &params).unwrap();
    assert!((out.value - oracle_value(&batch, &params)).abs() < 1e-10);

    let x = batch.z.as_slice().to_vec();
    let numeric = central_difference(
        |v| {
            let z = DMatrix::from_column_slice(6, 4, v);
            evaluate_frozen(&z, &out.selection, &params).unwrap().0
        },
        &x,
        1e-5,
    );
    let err = max_relative_error(out.grad_embeddings.as_slice(), &numeric, 1e-6);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn gradients_match_finite_differences_every_mode() {
    for mode in MODES {
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let batch = random_batch(&mut rng, 12, 8, 3, 2);
            let params = LossParams::with_mode(mode);
            let out = compute_loss(&batch.z, &batch.labels, &params).unwrap();
            let x = batch.z.as_slice().to_vec();
            let numeric = central_difference(
                |v| {
                    let z = DMatrix::from_column_slice(12, 8, v);
                    evaluate_frozen(&z, &out.selection, &params).unwrap().0
                },
                &x,
                1e-5,
            );
            let err = max_relative_error(out.grad_embeddings.as_slice(), &numeric, 1e-6);
            assert!(err < 1e-4, "{mode:?} seed {seed}: relative error {err}");
            assert!(out.grad_embeddings.iter().all(|g| g.is_finite()));
        }
    }
}

#[test]
fn library_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let b = rng.random_range(2..=10);
        let d = rng.random_range(2..=6);
        let depth = rng.random_range(1..=3);
        let batch = random_batch(&mut rng, b, d, depth, 2);
        let mode = MODES[trial % 4];
        let params = LossParams {
            mining_epsilon: [0.0, 0.1, 0.5][trial % 3],
            ..LossParams::with_mode(mode)
        };
        let out = compute_loss(&batch.z, &batch.labels, &params).unwrap();
        let expected = oracle_value(&batch, &params);
        assert!(
            (out.value - expected).abs() < 1e-10,
            "trial {trial} {mode:?}: {} vs {expected}",
            out.value
        );
    }
}

#[test]
fn clamp_bounds_hold_on_every_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for trial in 0..60 {
        let batch = random_batch(&mut rng, 10, 5, 3, 2);
        let mode = [LossMode::HiSupCon, LossMode::HiMsMax, LossMode::HiMsMin][trial % 3];
        let params = LossParams::with_mode(mode);
        let out = hierarchical_loss(&batch.z, &batch.labels, &params).unwrap();
        for t in &out.per_pair_terms {
            match mode {
                LossMode::HiMsMin => assert!(t.clamped <= t.bound && t.clamped <= t.base),
                _ => assert!(t.clamped >= t.bound && t.clamped >= t.base),
            }
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn two_level_toy_batch_matches_oracle_terms() {
    // four 2D embeddings at hand-chosen angles
    let angles: [f64; 4] = [0.0, 0.3, 1.2, 1.6];
    let rows: Vec<f64> = angles.iter().flat_map(|a| [a.cos(), a.sin()]).collect();
    let z = DMatrix::from_row_slice(4, 2, &rows);
    let segments: Vec<Vec<String>> = [["A", "x"], ["A", "y"], ["B", "x"], ["B", "x"]]
        .iter()
        .map(|s| s.iter().map(|v| v.to_string()).collect())
        .collect();
    let labels: Vec<_> = segments.iter().map(|s| HierarchicalLabel::from_segments(s).unwrap()).collect();
    let batch = Batch { z, segments, labels };
    for mode in [LossMode::HiMsMin, LossMode::HiMsMax, LossMode::HiSupCon] {
        let params = LossParams {
            mining_epsilon: f64::INFINITY,
            ..LossParams::with_mode(mode)
        };
        let out = hierarchical_loss(&batch.z, &batch.labels, &params).unwrap();
        let om = match mode {
            LossMode::HiMsMin => oracle::Mode::HiMsMin,
            LossMode::HiMsMax => oracle::Mode::HiMsMax,
            _ => oracle::Mode::HiSupCon,
        };
        let (value, terms) = oracle::hierarchical(&batch.rows(), &batch.segments, &oracle_params(&params), om);
        assert!((out.value - value).abs() < 1e-12);
        assert_eq!(out.per_pair_terms.len(), terms.len());
        for (a, b) in out.per_pair_terms.iter().zip(&terms) {
            assert_eq!((a.level, a.anchor, a.other), (b.level, b.anchor, b.other));
            assert!((a.clamped - b.clamped).abs() < 1e-12);
        }
    }
}

#[test]
fn supcon_leaf_terms_lifted_to_root_maximum() {
    // Level 1 groups {0,1,2,3}; leaves split {0,1} and {2,3}. Samples of the
    // same leaf are nearly identical, so leaf SupCon terms are small while
    // root-level terms (which include cross-leaf positives) are large.
    let rows = [
        [1.0, 0.0, 0.0],
        [1.0, 0.01, 0.0],
        [0.0, 1.0, 0.0],
        [0.01, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.01, 1.0],
    ];
    let z = DMatrix::from_row_slice(6, 3, &rows.concat());
    let labels: Vec<_> = ["M/a", "M/a", "M/b", "M/b", "N/c", "N/c"]
        .iter()
        .map(|s| HierarchicalLabel::parse_any(s).unwrap())
        .collect();
    let params = LossParams::with_mode(LossMode::HiSupCon);
    let out = hierarchical_loss(&z, &labels, &params).unwrap();
    let level1_max = out
        .per_pair_terms
        .iter()
        .filter(|t| t.level == 1)
        .map(|t| t.clamped)
        .fold(f64::NEG_INFINITY, f64::max);
    let level2: Vec<_> = out.per_pair_terms.iter().filter(|t| t.level == 2).collect();
    assert!(!level2.is_empty());
    for t in level2 {
        assert!(t.base < level1_max);
        assert_eq!(t.clamped, level1_max);
    }
}

#[test]
fn supcon_terms_match_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = random_batch(&mut rng, 7, 4, 2, 2);
    let pairs = pair_sets(&batch.labels, 2).unwrap();
    let terms = supcon_pair_terms(&batch.z, &pairs, 0.1).unwrap();
    let s = oracle::cosine_matrix(&batch.rows());
    for i in 0..7 {
        let denom: f64 = (0..7).filter(|&a| a != i).map(|a| (s[i][a] / 0.1).exp()).sum();
        for p in 0..7 {
            match terms[i][p] {
                Some(t) => {
                    let direct = -((s[i][p] / 0.1).exp() / denom).ln();
                    assert!((t - direct).abs() < 1e-10);
                }
                None => assert!(p == i || !pairs.positives[i].contains(&p)),
            }
        }
    }
}

#[test]
fn unmined_ms_equals_plain_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let batch = random_batch(&mut rng, 8, 5, 2, 2);
        let params = LossParams {
            mining_epsilon: f64::INFINITY,
            ..LossParams::with_mode(LossMode::FlatMs)
        };
        let out = compute_loss(&batch.z, &batch.labels, &params).unwrap();
        let expected = oracle::ms_unmined(&batch.rows(), &batch.segments, &oracle_params(&params));
        assert!((out.value - expected).abs() < 1e-10);
    }
}

#[test]
fn permutation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = random_batch(&mut rng, 9, 4, 3, 2);
    let perm: Vec<usize> = vec![3, 0, 8, 1, 7, 2, 6, 5, 4];
    let zp = DMatrix::from_fn(9, 4, |r, c| batch.z[(perm[r], c)]);
    let lp: Vec<_> = perm.iter().map(|&i| batch.labels[i].clone()).collect();
    for mode in MODES {
        let params = LossParams::with_mode(mode);
        let a = compute_loss(&batch.z, &batch.labels, &params).unwrap();
        let b = compute_loss(&zp, &lp, &params).unwrap();
        // summation order changes, so compare to rounding level
        assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0), "{mode:?}");
        for r in 0..9 {
            for c in 0..4 {
                let ga = a.grad_embeddings[(perm[r], c)];
                let gb = b.grad_embeddings[(r, c)];
                assert!((ga - gb).abs() <= 1e-12 * ga.abs().max(1.0));
            }
        }
    }
}

#[test]
fn rotation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = random_batch(&mut rng, 10, 6, 3, 2);
    // random orthogonal matrix from a QR factorization
    let g = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let rotated = &batch.z * q;
    for mode in MODES {
        let params = LossParams::with_mode(mode);
        let a = compute_loss(&batch.z, &batch.labels, &params).unwrap();
        let b = compute_loss(&rotated, &batch.labels, &params).unwrap();
        assert!((a.value - b.value).abs() < 1e-10, "{mode:?}");
    }
}

#[test]
fn flat_mode_rejected_by_hierarchical_entry_point() {
    let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let labels = vec![HierarchicalLabel::parse_any("A").unwrap(); 2];
    assert!(hierarchical_loss(&z, &labels, &LossParams::with_mode(LossMode::FlatMs)).is_err());
    let pairs = pair_sets(&labels, 1).unwrap();
    assert!(ms_loss(&z, &pairs, &LossParams::with_mode(LossMode::HiMsMin)).is_err());
}
