//! Slow, direct reference implementations.
//!
//! Everything here is written from the defining formulas with plain
//! `Vec<f64>` arithmetic and shares no code with the library crates, so the
//! test suites can compare the two paths.

pub mod loss {
    //! Losses evaluated by materializing every pair and every clamp.

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Mode {
        Ms,
        HiSupCon,
        HiMsMax,
        HiMsMin,
    }

    #[derive(Debug, Clone, Copy)]
    pub struct Params {
        pub alpha: f64,
        pub beta: f64,
        pub margin: f64,
        pub epsilon: f64,
        pub tau: f64,
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    pub fn cosine_matrix(z: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let u: Vec<Vec<f64>> = z.iter().map(|r| unit(r)).collect();
        let b = u.len();
        let mut s = vec![vec![0.0; b]; b];
        for i in 0..b {
            for j in 0..b {
                s[i][j] = if i == j {
                    1.0
                } else {
                    u[i].iter().zip(&u[j]).map(|(a, c)| a * c).sum::<f64>()
                };
            }
        }
        s
    }

    /// Same class at `level` (1-based) iff the first `level` raw segments match.
    pub fn same(labels: &[Vec<String>], i: usize, j: usize, level: usize) -> bool {
        labels[i][..level] == labels[j][..level]
    }

    /// (mined positives, mined negatives) of anchor `i` at `level`.
    pub fn mine(
        s: &[Vec<f64>],
        labels: &[Vec<String>],
        i: usize,
        level: usize,
        eps: f64,
    ) -> (Vec<usize>, Vec<usize>) {
        let b = s.len();
        let pos: Vec<usize> = (0..b).filter(|&j| j != i && same(labels, i, j, level)).collect();
        let neg: Vec<usize> = (0..b).filter(|&j| j != i && !same(labels, i, j, level)).collect();
        if pos.is_empty() {
            return (vec![], vec![]);
        }
        if neg.is_empty() {
            return (pos, vec![]);
        }
        let mut min_p = f64::INFINITY;
        for &j in &pos {
            if s[i][j] < min_p {
                min_p = s[i][j];
            }
        }
        let mut max_n = f64::NEG_INFINITY;
        for &k in &neg {
            if s[i][k] > max_n {
                max_n = s[i][k];
            }
        }
        let mp = pos.into_iter().filter(|&j| s[i][j] < max_n + eps).collect();
        let mn = neg.into_iter().filter(|&k| s[i][k] > min_p - eps).collect();
        (mp, mn)
    }

    /// Flat multi-similarity loss on leaf classes.
    pub fn ms(z: &[Vec<f64>], labels: &[Vec<String>], p: &Params) -> f64 {
        let s = cosine_matrix(z);
        let b = z.len();
        let depth = labels[0].len();
        let mut total = 0.0;
        for i in 0..b {
            let (mp, mn) = mine(&s, labels, i, depth, p.epsilon);
            let mut sp = 0.0;
            for &j in &mp {
                sp += (-p.alpha * (s[i][j] - p.margin)).exp();
            }
            let mut sn = 0.0;
            for &k in &mn {
                sn += (p.beta * (s[i][k] - p.margin)).exp();
            }
            total += (1.0 + sp).ln() / p.alpha + (1.0 + sn).ln() / p.beta;
        }
        total / b as f64
    }

    /// One materialized term: (level, anchor, other, base, clamped, bound).
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Term {
        pub level: usize,
        pub anchor: usize,
        pub other: usize,
        pub base: f64,
        pub clamped: f64,
        pub bound: f64,
    }

    /// Hierarchical loss value plus every clamped term.
    pub fn hierarchical(z: &[Vec<f64>], labels: &[Vec<String>], p: &Params, mode: Mode) -> (f64, Vec<Term>) {
        assert!(mode != Mode::Ms);
        let s = cosine_matrix(z);
        let b = z.len();
        let depth = labels[0].len();
        let top_down = mode != Mode::HiMsMin;
        let order: Vec<usize> = if top_down {
            (1..=depth).collect()
        } else {
            (1..=depth).rev().collect()
        };
        let mut bound = if top_down { f64::NEG_INFINITY } else { f64::INFINITY };
        let mut value = 0.0;
        let mut all = Vec::new();
        for level in order {
            let weight = (1.0 / level as f64).exp();
            let mut level_terms: Vec<f64> = Vec::new();
            for i in 0..b {
                // (other, base)
                let mut set: Vec<(usize, f64)> = Vec::new();
                if mode == Mode::HiSupCon {
                    let mut denom = 0.0;
                    for a in 0..b {
                        if a != i {
                            denom += (s[i][a] / p.tau).exp();
                        }
                    }
                    for j in 0..b {
                        if j != i && same(labels, i, j, level) {
                            set.push((j, -((s[i][j] / p.tau).exp() / denom).ln()));
                        }
                    }
                } else {
                    let (mp, mn) = mine(&s, labels, i, level, p.epsilon);
                    for j in mp {
                        set.push((j, (1.0 + (-p.alpha * (s[i][j] - p.margin)).exp()).ln() / p.alpha));
                    }
                    for k in mn {
                        set.push((k, (1.0 + (p.beta * (s[i][k] - p.margin)).exp()).ln() / p.beta));
                    }
                }
                if set.is_empty() {
                    continue;
                }
                let n = set.len() as f64;
                for (other, base) in set {
                    let clamped = if top_down { base.max(bound) } else { base.min(bound) };
                    value += weight / depth as f64 / n * clamped;
                    level_terms.push(clamped);
                    all.push(Term {
                        level,
                        anchor: i,
                        other,
                        base,
                        clamped,
                        bound,
                    });
                }
            }
            for t in level_terms {
                if top_down && t > bound || !top_down && t < bound {
                    bound = t;
                }
            }
        }
        (value, all)
    }

    /// MS loss without mining, straight from the formula.
    pub fn ms_unmined(z: &[Vec<f64>], labels: &[Vec<String>], p: &Params) -> f64 {
        let s = cosine_matrix(z);
        let b = z.len();
        let depth = labels[0].len();
        let mut total = 0.0;
        for i in 0..b {
            let mut sp = 0.0;
            let mut sn = 0.0;
            let mut has_pos = false;
            for j in 0..b {
                if j == i {
                    continue;
                }
                if same(labels, i, j, depth) {
                    has_pos = true;
                    sp += (-p.alpha * (s[i][j] - p.margin)).exp();
                } else {
                    sn += (p.beta * (s[i][j] - p.margin)).exp();
                }
            }
            if has_pos {
                total += (1.0 + sp).ln() / p.alpha + (1.0 + sn).ln() / p.beta;
            }
        }
        total / b as f64
    }
}

pub mod retrieval {
    //! Metrics by sorting the full distance list for every query.

    /// (distance², id, label-key) sorted by distance then id.
    pub fn sorted_neighbors<'a>(
        db: &'a [(String, Vec<f64>, String)],
        q: &[f64],
    ) -> Vec<(f64, &'a str, &'a str)> {
        let qn = unit(q);
        let mut all: Vec<(f64, &str, &str)> = db
            .iter()
            .map(|(id, v, key)| {
                let vn = unit(v);
                let d: f64 = qn.iter().zip(&vn).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, id.as_str(), key.as_str())
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
        all
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    pub fn precision_at_k(db: &[(String, Vec<f64>, String)], queries: &[(Vec<f64>, String)], k: usize) -> f64 {
        let mut sum = 0.0;
        for (q, key) in queries {
            let nn = sorted_neighbors(db, q);
            let hits = nn.iter().take(k).filter(|n| n.2 == key).count();
            sum += hits as f64 / k as f64;
        }
        sum / queries.len() as f64
    }

    /// mAP@R over queries whose class is present.
    pub fn map_at_r(db: &[(String, Vec<f64>, String)], queries: &[(Vec<f64>, String)]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for (q, key) in queries {
            let r = db.iter().filter(|d| &d.2 == key).count();
            if r == 0 {
                continue;
            }
            let nn = sorted_neighbors(db, q);
            let mut ap = 0.0;
            for i in 1..=r {
                if nn[i - 1].2 == key {
                    let rel_so_far = nn[..i].iter().filter(|x| x.2 == key).count();
                    ap += rel_so_far as f64 / i as f64;
                }
            }
            sum += ap / r as f64;
            n += 1;
        }
        sum / n as f64
    }
}

pub mod ood {
    /// Pairwise-comparison AUROC, OOD = positive class with larger scores.
    pub fn auroc(id: &[f64], ood: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &o in ood {
            for &i in id {
                if o > i {
                    acc += 1.0;
                } else if o == i {
                    acc += 0.5;
                }
            }
        }
        acc / (id.len() * ood.len()) as f64
    }

    /// Smallest ID score `t` with `#{id ≤ t} / N ≥ tpr`, found by trying each.
    pub fn threshold(id: &[f64], tpr: f64) -> f64 {
        let mut candidates = id.to_vec();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = id.len() as f64;
        for &t in &candidates {
            let covered = id.iter().filter(|&&s| s <= t).count() as f64;
            // compare counts, not ratios, to stay exact
            if covered >= (tpr * n - 1e-9).ceil() {
                return t;
            }
        }
        *candidates.last().unwrap()
    }

    pub fn fpr(id: &[f64], ood: &[f64], tpr: f64) -> f64 {
        let t = threshold(id, tpr);
        ood.iter().filter(|&&s| s <= t).count() as f64 / ood.len() as f64
    }

    /// Inverse by Gauss–Jordan elimination with partial pivoting.
    pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = m.len();
        let mut a: Vec<Vec<f64>> = m
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            let p = a[col][col];
            for v in a[col].iter_mut() {
                *v /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = a[r][col];
                    if f != 0.0 {
                        for c in 0..2 * n {
                            a[r][c] -= f * a[col][c];
                        }
                    }
                }
            }
        }
        a.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    pub fn quad_form(inv: &[Vec<f64>], d: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..d.len() {
            for j in 0..d.len() {
                acc += d[i] * inv[i][j] * d[j];
            }
        }
        acc
    }
}

pub mod text {
    /// Exponential-time edit distance by direct recursion.
    pub fn edit_distance(a: &[char], b: &[char]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let sub = edit_distance(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
        let del = edit_distance(&a[1..], b) + 1;
        let ins = edit_distance(a, &b[1..]) + 1;
        sub.min(del).min(ins)
    }
}

pub mod boxes {
    /// (intersection, union) by enumerating pixels of `(x, y, w, h)` boxes.
    pub fn pixel_areas(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> (u64, u64) {
        let inside = |r: (u32, u32, u32, u32), x: u32, y: u32| x >= r.0 && x < r.0 + r.2 && y >= r.1 && y < r.1 + r.3;
        let x1 = a.0.min(b.0);
        let y1 = a.1.min(b.1);
        let x2 = (a.0 + a.2).max(b.0 + b.2);
        let y2 = (a.1 + a.3).max(b.1 + b.3);
        let mut inter = 0;
        let mut union = 0;
        for y in y1..y2 {
            for x in x1..x2 {
                let ia = inside(a, x, y);
                let ib = inside(b, x, y);
                if ia && ib {
                    inter += 1;
                }
                if ia || ib {
                    union += 1;
                }
            }
        }
        (inter, union)
    }
}

pub mod gradcheck {
    /// Central-difference gradient of `f` at `x`.
    pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = probe[i];
                probe[i] = orig + h;
                let up = f(&probe);
                probe[i] = orig - h;
                let down = f(&probe);
                probe[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// `max_i |a_i − n_i| / max(|a_i|, |n_i|, floor)`.
    pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_distance_basics() {
        let c = |s: &str| s.chars().collect::<Vec<_>>();
        assert_eq!(text::edit_distance(&c("kitten"), &c("sitting")), 3);
        assert_eq!(text::edit_distance(&c(""), &c("ab")), 2);
    }

    #[test]
    fn inverse_of_diagonal() {
        let inv = ood::invert(&[vec![2.0, 0.0], vec![0.0, 4.0]]);
        assert_eq!(inv, vec![vec![0.5, 0.0], vec![0.0, 0.25]]);
    }

    #[test]
    fn pixel_area_example() {
        assert_eq!(boxes::pixel_areas((0, 0, 2, 2), (1, 0, 2, 2)), (2, 6));
    }
}
