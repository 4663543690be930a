//! Multi-similarity and hierarchical metric losses with analytic gradients.
//!
//! Every loss is expressed as a function of the cosine-similarity matrix `S`
//! of the batch. Evaluation produces `∂L/∂S` (not necessarily symmetric, since
//! anchor `i` reads `s_ij` and anchor `j` reads `s_ji` independently), which is
//! then chained through `s_ij = ẑ_i·ẑ_j` and the row normalization.
//!
//! Pair mining and the hierarchical clamps are piecewise-constant selections.
//! They are recorded in a [`Selection`] so a loss can be re-evaluated with the
//! selection frozen, which is what the analytic gradient differentiates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{common_depth, pair_sets, HierarchicalLabel, HierarchyError, PairSets};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("embedding row {0} has zero norm")]
    DegenerateEmbedding(usize),
    #[error("need at least 2 embeddings, got {0}")]
    BatchTooSmall(usize),
    #[error("{rows} embeddings but {labels} labels")]
    ShapeMismatch { rows: usize, labels: usize },
    #[error("invalid loss parameters: {0}")]
    InvalidParams(String),
    #[error("loss mode {0:?} is not valid here")]
    WrongMode(LossMode),
    #[error("selection does not match the batch")]
    SelectionMismatch,
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Plain multi-similarity loss on leaf classes.
    FlatMs,
    /// Top-down clamp over per-pair SupCon terms.
    HiSupCon,
    /// Top-down clamp over per-pair binary MS terms.
    HiMsMax,
    /// Bottom-up clamp over per-pair binary MS terms.
    HiMsMin,
}

impl LossMode {
    pub fn is_hierarchical(self) -> bool {
        !matches!(self, LossMode::FlatMs)
    }

    fn clamps_up(self) -> bool {
        matches!(self, LossMode::HiSupCon | LossMode::HiMsMax)
    }
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ms" | "flat-ms" => Ok(LossMode::FlatMs),
            "hisupcon" | "hi-supcon" => Ok(LossMode::HiSupCon),
            "hims-max" | "hi-ms-max" => Ok(LossMode::HiMsMax),
            "hims-min" | "hi-ms-min" => Ok(LossMode::HiMsMin),
            other => Err(format!("unknown loss mode {other:?}")),
        }
    }
}

/// Per-level weight `λ_l` of the hierarchical losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelWeight {
    /// `exp(1/l)` with `l = 1` at the root.
    ExpInverseRootFirst,
    /// `exp(1/l)` with `l = 1` at the leaf.
    ExpInverseLeafFirst,
    Uniform,
}

impl LevelWeight {
    pub fn weight(self, level: usize, depth: usize) -> f64 {
        match self {
            LevelWeight::ExpInverseRootFirst => (1.0 / level as f64).exp(),
            LevelWeight::ExpInverseLeafFirst => (1.0 / (depth + 1 - level) as f64).exp(),
            LevelWeight::Uniform => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    pub alpha: f64,
    pub beta: f64,
    /// Similarity offset `λ` shared by positive and negative terms.
    pub margin: f64,
    /// Mining slack; `f64::INFINITY` keeps every pair.
    pub mining_epsilon: f64,
    pub tau: f64,
    pub mode: LossMode,
    pub level_weight: LevelWeight,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 50.0,
            margin: 1.0,
            mining_epsilon: 0.1,
            tau: 0.1,
            mode: LossMode::HiMsMin,
            level_weight: LevelWeight::ExpInverseRootFirst,
        }
    }
}

impl LossParams {
    pub fn with_mode(mode: LossMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |msg: &str| Err(LossError::InvalidParams(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.mining_epsilon >= 0.0) {
            return bad("mining_epsilon must be non-negative");
        }
        if !self.margin.is_finite() {
            return bad("margin must be finite");
        }
        Ok(())
    }
}

/// Cosine similarities of a batch, plus what is needed to chain gradients
/// back through the normalization.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    values: DMatrix<f64>,
    normalized: DMatrix<f64>,
    norms: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn normalized(&self) -> &DMatrix<f64> {
        &self.normalized
    }

    /// Chains `∂L/∂S` back to the raw embedding rows.
    pub fn backprop(&self, grad_sim: &DMatrix<f64>) -> DMatrix<f64> {
        let sym = grad_sim + grad_sim.transpose();
        let grad_hat = &sym * &self.normalized;
        let mut out = grad_hat.clone();
        for i in 0..out.nrows() {
            let zi = self.normalized.row(i);
            let gi = grad_hat.row(i);
            let radial = zi.dot(&gi);
            let inv = 1.0 / self.norms[i];
            for d in 0..out.ncols() {
                out[(i, d)] = (gi[d] - zi[d] * radial) * inv;
            }
        }
        out
    }
}

/// Normalizes each row and returns the pairwise dot products.
pub fn similarity_matrix(embeddings: &DMatrix<f64>) -> Result<SimilarityMatrix, LossError> {
    let b = embeddings.nrows();
    if b < 2 {
        return Err(LossError::BatchTooSmall(b));
    }
    let mut normalized = embeddings.clone();
    let mut norms = Vec::with_capacity(b);
    for i in 0..b {
        let n = embeddings.row(i).norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(LossError::DegenerateEmbedding(i));
        }
        normalized.row_mut(i).scale_mut(1.0 / n);
        norms.push(n);
    }
    let mut values = &normalized * normalized.transpose();
    for i in 0..b {
        values[(i, i)] = 1.0;
        for j in 0..i {
            let s = values[(i, j)].clamp(-1.0, 1.0);
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    Ok(SimilarityMatrix {
        values,
        normalized,
        norms,
    })
}

/// Pairs that survive hard mining for each anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedPairs {
    pub level: usize,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl MinedPairs {
    pub fn total(&self) -> usize {
        self.positives.iter().map(Vec::len).sum::<usize>()
            + self.negatives.iter().map(Vec::len).sum::<usize>()
    }

    /// Every pair kept, no mining.
    pub fn all(pairs: &PairSets) -> Self {
        Self {
            level: pairs.level,
            positives: pairs.positives.clone(),
            negatives: pairs.negatives.clone(),
        }
    }
}

/// Keeps negatives harder than the weakest positive and positives harder
/// than the strongest negative, each with slack `epsilon`.
///
/// Anchors without positives keep nothing; anchors without negatives keep
/// all their positives.
pub fn mine_pairs(sim: &SimilarityMatrix, pairs: &PairSets, epsilon: f64) -> MinedPairs {
    let b = pairs.batch_size();
    let mut positives = Vec::with_capacity(b);
    let mut negatives = Vec::with_capacity(b);
    for i in 0..b {
        let pos = &pairs.positives[i];
        let neg = &pairs.negatives[i];
        if pos.is_empty() {
            positives.push(Vec::new());
            negatives.push(Vec::new());
            continue;
        }
        if neg.is_empty() {
            positives.push(pos.clone());
            negatives.push(Vec::new());
            continue;
        }
        let hardest_pos = pos.iter().map(|&j| sim.get(i, j)).fold(f64::INFINITY, f64::min);
        let hardest_neg = neg
            .iter()
            .map(|&k| sim.get(i, k))
            .fold(f64::NEG_INFINITY, f64::max);
        negatives.push(
            neg.iter()
                .copied()
                .filter(|&k| sim.get(i, k) > hardest_pos - epsilon)
                .collect(),
        );
        positives.push(
            pos.iter()
                .copied()
                .filter(|&j| sim.get(i, j) < hardest_neg + epsilon)
                .collect(),
        );
    }
    MinedPairs {
        level: pairs.level,
        positives,
        negatives,
    }
}

/// One clamped per-pair term of a hierarchical loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub level: usize,
    pub anchor: usize,
    pub other: usize,
    pub positive: bool,
    pub base: f64,
    pub clamped: f64,
    /// Running extreme of the level visited before this one
    /// (`-inf` / `+inf` for the first level of the traversal).
    pub bound: f64,
}

/// The frozen discrete choices of one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Flat(MinedPairs),
    Hierarchical(HierarchicalPlan),
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    /// `∂L/∂z`, same shape as the input batch.
    pub grad_embeddings: DMatrix<f64>,
    /// Clamped per-pair terms for the hierarchical modes; empty for flat MS.
    pub per_pair_terms: Vec<PairTerm>,
    pub selection: Selection,
}

/// `ln(1 + Σ e^{x_k})` and its partial derivatives, computed stably.
fn log1p_sum_exp(xs: &[f64]) -> (f64, Vec<f64>) {
    let m = xs.iter().copied().fold(0.0_f64, f64::max);
    let mut acc = (-m).exp();
    for &x in xs {
        acc += (x - m).exp();
    }
    let value = m + acc.ln();
    let weights = xs.iter().map(|&x| (x - value).exp()).collect();
    (value, weights)
}

/// `ln Σ e^{x_k}` over a non-empty slice, with softmax weights.
fn log_sum_exp(xs: &[f64]) -> (f64, Vec<f64>) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let acc: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    let value = m + acc.ln();
    let weights = xs.iter().map(|&x| (x - value).exp()).collect();
    (value, weights)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_batch(embeddings: &DMatrix<f64>, n_labels: usize) -> Result<(), LossError> {
    if embeddings.nrows() != n_labels {
        return Err(LossError::ShapeMismatch {
            rows: embeddings.nrows(),
            labels: n_labels,
        });
    }
    Ok(())
}

/// Flat multi-similarity loss with mining on `pairs`.
pub fn ms_loss(
    embeddings: &DMatrix<f64>,
    pairs: &PairSets,
    params: &LossParams,
) -> Result<LossOutput, LossError> {
    params.validate()?;
    if params.mode != LossMode::FlatMs {
        return Err(LossError::WrongMode(params.mode));
    }
    check_batch(embeddings, pairs.batch_size())?;
    let sim = similarity_matrix(embeddings)?;
    let mined = mine_pairs(&sim, pairs, params.mining_epsilon);
    let (value, grad_sim) = ms_value_and_grad(&sim, &mined, params);
    Ok(LossOutput {
        value,
        grad_embeddings: sim.backprop(&grad_sim),
        per_pair_terms: Vec::new(),
        selection: Selection::Flat(mined),
    })
}

fn ms_value_and_grad(
    sim: &SimilarityMatrix,
    mined: &MinedPairs,
    params: &LossParams,
) -> (f64, DMatrix<f64>) {
    let b = sim.size();
    let scale = 1.0 / b as f64;
    let mut grad = DMatrix::zeros(b, b);
    let mut value = 0.0;
    for i in 0..b {
        let pos = &mined.positives[i];
        if !pos.is_empty() {
            let xs: Vec<f64> = pos
                .iter()
                .map(|&j| -params.alpha * (sim.get(i, j) - params.margin))
                .collect();
            let (v, w) = log1p_sum_exp(&xs);
            value += v / params.alpha;
            for (&j, wj) in pos.iter().zip(w) {
                grad[(i, j)] -= wj * scale;
            }
        }
        let neg = &mined.negatives[i];
        if !neg.is_empty() {
            let xs: Vec<f64> = neg
                .iter()
                .map(|&k| params.beta * (sim.get(i, k) - params.margin))
                .collect();
            let (v, w) = log1p_sum_exp(&xs);
            value += v / params.beta;
            for (&k, wk) in neg.iter().zip(w) {
                grad[(i, k)] += wk * scale;
            }
        }
    }
    (value * scale, grad)
}

/// Per-pair SupCon terms `-log(e^{s_ip/τ} / Σ_{a≠i} e^{s_ia/τ})` for every
/// positive `p` of every anchor. Entry `(i, p)` is `None` when `p ∉ P(i)`.
pub fn supcon_pair_terms(
    embeddings: &DMatrix<f64>,
    pairs: &PairSets,
    tau: f64,
) -> Result<Vec<Vec<Option<f64>>>, LossError> {
    if !(tau > 0.0) {
        return Err(LossError::InvalidParams("tau must be positive".into()));
    }
    check_batch(embeddings, pairs.batch_size())?;
    let sim = similarity_matrix(embeddings)?;
    let rows = SupConRows::new(&sim, tau);
    let b = sim.size();
    let mut out = vec![vec![None; b]; b];
    for i in 0..b {
        for &p in &pairs.positives[i] {
            out[i][p] = Some(rows.term(&sim, i, p));
        }
    }
    Ok(out)
}

/// Cached per-anchor log-partition of the SupCon denominator.
struct SupConRows {
    tau: f64,
    log_z: Vec<f64>,
    softmax: Vec<Vec<(usize, f64)>>,
}

impl SupConRows {
    fn new(sim: &SimilarityMatrix, tau: f64) -> Self {
        let b = sim.size();
        let mut log_z = Vec::with_capacity(b);
        let mut softmax = Vec::with_capacity(b);
        for i in 0..b {
            let others: Vec<usize> = (0..b).filter(|&a| a != i).collect();
            let xs: Vec<f64> = others.iter().map(|&a| sim.get(i, a) / tau).collect();
            let (lz, w) = log_sum_exp(&xs);
            log_z.push(lz);
            softmax.push(others.into_iter().zip(w).collect());
        }
        Self { tau, log_z, softmax }
    }

    fn term(&self, sim: &SimilarityMatrix, i: usize, p: usize) -> f64 {
        self.log_z[i] - sim.get(i, p) / self.tau
    }

    fn accumulate_grad(&self, grad: &mut DMatrix<f64>, i: usize, p: usize, coeff: f64) {
        for &(a, w) in &self.softmax[i] {
            grad[(i, a)] += coeff * w / self.tau;
        }
        grad[(i, p)] -= coeff / self.tau;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BaseKind {
    MsPositive,
    MsNegative,
    SupCon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PlannedTerm {
    level: usize,
    anchor: usize,
    other: usize,
    kind: BaseKind,
    /// Index of the term whose base value this clamped term takes.
    source: usize,
    weight: f64,
    bound: f64,
}

/// Mined pair sets and clamp branches of a hierarchical loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalPlan {
    batch: usize,
    terms: Vec<PlannedTerm>,
}

impl HierarchicalPlan {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

struct BaseEvaluator<'a> {
    sim: &'a SimilarityMatrix,
    params: &'a LossParams,
    supcon: Option<SupConRows>,
}

impl<'a> BaseEvaluator<'a> {
    fn new(sim: &'a SimilarityMatrix, params: &'a LossParams) -> Self {
        let supcon = (params.mode == LossMode::HiSupCon).then(|| SupConRows::new(sim, params.tau));
        Self {
            sim,
            params,
            supcon,
        }
    }

    fn value(&self, t: &PlannedTerm) -> f64 {
        let s = self.sim.get(t.anchor, t.other);
        let p = self.params;
        match t.kind {
            BaseKind::MsPositive => softplus(-p.alpha * (s - p.margin)) / p.alpha,
            BaseKind::MsNegative => softplus(p.beta * (s - p.margin)) / p.beta,
            BaseKind::SupCon => self
                .supcon
                .as_ref()
                .expect("supcon rows")
                .term(self.sim, t.anchor, t.other),
        }
    }

    fn accumulate_grad(&self, grad: &mut DMatrix<f64>, t: &PlannedTerm, coeff: f64) {
        let s = self.sim.get(t.anchor, t.other);
        let p = self.params;
        match t.kind {
            BaseKind::MsPositive => {
                grad[(t.anchor, t.other)] -= coeff * sigmoid(-p.alpha * (s - p.margin));
            }
            BaseKind::MsNegative => {
                grad[(t.anchor, t.other)] += coeff * sigmoid(p.beta * (s - p.margin));
            }
            BaseKind::SupCon => self.supcon.as_ref().expect("supcon rows").accumulate_grad(
                grad,
                t.anchor,
                t.other,
                coeff,
            ),
        }
    }
}

/// Hierarchical SupCon / HiMS-Max / HiMS-Min loss.
///
/// Levels are visited root to leaf for the max-clamped modes and leaf to
/// root for HiMS-Min. Each per-pair term is clamped against the running
/// extreme of the previously visited level, and the running extreme is
/// batch-global.
pub fn hierarchical_loss(
    embeddings: &DMatrix<f64>,
    labels: &[HierarchicalLabel],
    params: &LossParams,
) -> Result<LossOutput, LossError> {
    params.validate()?;
    if !params.mode.is_hierarchical() {
        return Err(LossError::WrongMode(params.mode));
    }
    check_batch(embeddings, labels.len())?;
    let sim = similarity_matrix(embeddings)?;
    let depth = common_depth(labels)?;
    let plan = plan_hierarchical(&sim, labels, depth, params)?;
    let eval = BaseEvaluator::new(&sim, params);
    let bases: Vec<f64> = plan.terms.iter().map(|t| eval.value(t)).collect();
    let per_pair_terms = plan
        .terms
        .iter()
        .enumerate()
        .map(|(idx, t)| PairTerm {
            level: t.level,
            anchor: t.anchor,
            other: t.other,
            positive: t.kind != BaseKind::MsNegative,
            base: bases[idx],
            clamped: bases[t.source],
            bound: t.bound,
        })
        .collect();
    let (value, grad_sim) = evaluate_plan(&eval, &plan, &bases);
    Ok(LossOutput {
        value,
        grad_embeddings: sim.backprop(&grad_sim),
        per_pair_terms,
        selection: Selection::Hierarchical(plan),
    })
}

fn plan_hierarchical(
    sim: &SimilarityMatrix,
    labels: &[HierarchicalLabel],
    depth: usize,
    params: &LossParams,
) -> Result<HierarchicalPlan, LossError> {
    let up = params.mode.clamps_up();
    let levels: Vec<usize> = if up {
        (1..=depth).collect()
    } else {
        (1..=depth).rev().collect()
    };
    let eval = BaseEvaluator::new(sim, params);
    let mut terms: Vec<PlannedTerm> = Vec::new();
    let mut bound = if up { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut bound_source: Option<usize> = None;

    for level in levels {
        let pairs = pair_sets(labels, level)?;
        let selected = if params.mode == LossMode::HiSupCon {
            MinedPairs {
                level,
                positives: pairs.positives.clone(),
                negatives: vec![Vec::new(); pairs.batch_size()],
            }
        } else {
            mine_pairs(sim, &pairs, params.mining_epsilon)
        };
        let lw = params.level_weight.weight(level, depth) / depth as f64;
        let pos_kind = if params.mode == LossMode::HiSupCon {
            BaseKind::SupCon
        } else {
            BaseKind::MsPositive
        };

        let mut extreme = bound;
        let mut extreme_source = bound_source;
        for anchor in 0..pairs.batch_size() {
            let members = selected.positives[anchor]
                .iter()
                .map(|&j| (j, pos_kind))
                .chain(selected.negatives[anchor].iter().map(|&k| (k, BaseKind::MsNegative)));
            let set_size = selected.positives[anchor].len() + selected.negatives[anchor].len();
            if set_size == 0 {
                continue;
            }
            let weight = lw / set_size as f64;
            for (other, kind) in members {
                let idx = terms.len();
                let mut term = PlannedTerm {
                    level,
                    anchor,
                    other,
                    kind,
                    source: idx,
                    weight,
                    bound,
                };
                let base = eval.value(&term);
                let keep_base = match bound_source {
                    None => true,
                    Some(_) if up => base >= bound,
                    Some(_) => base <= bound,
                };
                let clamped = if keep_base {
                    base
                } else {
                    term.source = bound_source.expect("bound has a source");
                    bound
                };
                let better = if up { clamped > extreme } else { clamped < extreme };
                if better || extreme_source.is_none() {
                    extreme = clamped;
                    extreme_source = Some(term.source);
                }
                terms.push(term);
            }
        }
        bound = extreme;
        bound_source = extreme_source;
    }
    Ok(HierarchicalPlan {
        batch: labels.len(),
        terms,
    })
}

fn evaluate_plan(
    eval: &BaseEvaluator<'_>,
    plan: &HierarchicalPlan,
    bases: &[f64],
) -> (f64, DMatrix<f64>) {
    let b = eval.sim.size();
    let mut coeff = vec![0.0; plan.terms.len()];
    let mut value = 0.0;
    for t in &plan.terms {
        value += t.weight * bases[t.source];
        coeff[t.source] += t.weight;
    }
    let mut grad = DMatrix::zeros(b, b);
    for (t, &c) in plan.terms.iter().zip(&coeff) {
        if c != 0.0 {
            eval.accumulate_grad(&mut grad, t, c);
        }
    }
    (value, grad)
}

/// Dispatches on `params.mode`: flat MS uses leaf-level pairs, the other
/// modes use the full hierarchy.
pub fn compute_loss(
    embeddings: &DMatrix<f64>,
    labels: &[HierarchicalLabel],
    params: &LossParams,
) -> Result<LossOutput, LossError> {
    if params.mode.is_hierarchical() {
        hierarchical_loss(embeddings, labels, params)
    } else {
        let depth = common_depth(labels)?;
        let pairs = pair_sets(labels, depth)?;
        ms_loss(embeddings, &pairs, params)
    }
}

/// Re-evaluates a loss with mining and clamp branches held fixed.
///
/// Returns the value and `∂L/∂z`; at the embeddings that produced
/// `selection` this equals the unfrozen evaluation exactly.
pub fn evaluate_frozen(
    embeddings: &DMatrix<f64>,
    selection: &Selection,
    params: &LossParams,
) -> Result<(f64, DMatrix<f64>), LossError> {
    params.validate()?;
    let sim = similarity_matrix(embeddings)?;
    match selection {
        Selection::Flat(mined) => {
            if mined.positives.len() != sim.size() {
                return Err(LossError::SelectionMismatch);
            }
            let (v, g) = ms_value_and_grad(&sim, mined, params);
            Ok((v, sim.backprop(&g)))
        }
        Selection::Hierarchical(plan) => {
            if plan.batch != sim.size() {
                return Err(LossError::SelectionMismatch);
            }
            let eval = BaseEvaluator::new(&sim, params);
            let bases: Vec<f64> = plan.terms.iter().map(|t| eval.value(t)).collect();
            let (v, g) = evaluate_plan(&eval, plan, &bases);
            Ok((v, sim.backprop(&g)))
        }
    }
}
