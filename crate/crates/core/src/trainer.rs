//! Linear projection head trained with Adam under a cyclic learning rate.
//!
//! The head maps unit-normalized inputs to `out_dim` outputs with no bias;
//! the loss re-normalizes the outputs, so train-time and retrieval-time
//! geometry is the same cosine geometry.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::HierarchicalLabel;
use crate::losses::{compute_loss, evaluate_frozen, LossError, LossParams, Selection};
use crate::retrieval::{normalize, Sample};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value at step {step}")]
    Divergence { step: usize, history: Vec<HistoryRow> },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need {needed} classes with at least {per_class} samples, found {found}")]
    InsufficientClasses {
        needed: usize,
        per_class: usize,
        found: usize,
    },
    #[error("samples_per_class must be at least 2 when the loss needs positives")]
    NoPositives,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    /// `out_dim × in_dim`.
    pub weight: DMatrix<f64>,
}

impl ProjectionHead {
    /// Gaussian init with standard deviation `1/√in_dim`.
    pub fn init(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (in_dim as f64).sqrt();
        let weight = DMatrix::from_fn(out_dim, in_dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        });
        Self { weight }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Projects one raw input (normalized first). The output is not
    /// normalized; retrieval normalizes on ingest.
    pub fn project(&self, x: &[f64]) -> Option<Vec<f64>> {
        if x.len() != self.in_dim() {
            return None;
        }
        let xn = normalize(x)?;
        Some(
            (0..self.out_dim())
                .map(|r| self.weight.row(r).iter().zip(&xn).map(|(w, v)| w * v).sum())
                .collect(),
        )
    }

    /// Projects every sample, keeping ids and labels.
    pub fn project_samples(&self, samples: &[Sample]) -> Result<Vec<Sample>, TrainError> {
        samples
            .iter()
            .map(|s| {
                self.project(&s.embedding)
                    .map(|e| Sample::new(s.id.clone(), e, s.label.clone()))
                    .ok_or_else(|| TrainError::Shape(format!("cannot project sample {}", s.id)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Triangular,
    /// Amplitude halves every cycle.
    Triangular2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_min: f64,
    pub lr_max: f64,
    pub cycle_steps: usize,
    pub schedule: Schedule,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub out_dim: usize,
    pub require_positives: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_min: 2e-6,
            lr_max: 2e-4,
            cycle_steps: 200,
            schedule: Schedule::Triangular,
            epochs: 10,
            steps_per_epoch: 20,
            classes_per_batch: 8,
            samples_per_class: 4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            out_dim: 128,
            require_positives: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad("need 0 < lr_min <= lr_max");
        }
        if self.cycle_steps < 2 {
            return bad("cycle_steps must be at least 2");
        }
        if self.classes_per_batch == 0 || self.samples_per_class == 0 {
            return bad("batch dimensions must be positive");
        }
        if self.out_dim == 0 {
            return bad("out_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if self.require_positives && self.samples_per_class < 2 {
            return Err(TrainError::NoPositives);
        }
        Ok(())
    }
}

/// Triangular cyclic learning rate: linear rise from `lr_min` to `lr_max`
/// over half a cycle, then linear fall.
pub fn cyclic_lr(step: usize, cfg: &TrainConfig) -> f64 {
    let period = cfg.cycle_steps.max(2);
    let cycle = step / period;
    let pos = (step % period) as f64;
    let half = period as f64 / 2.0;
    let x = pos / half;
    let tri = if x <= 1.0 { x } else { 2.0 - x };
    let amplitude = match cfg.schedule {
        Schedule::Triangular => 1.0,
        Schedule::Triangular2 => 0.5_f64.powi(cycle.min(i32::MAX as usize) as i32),
    };
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * tri * amplitude
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Shape(format!(
                "adam state has {} entries, params {}, grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient);
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Leaf classes mapped to sample indices, both in a storage-order
/// independent order (classes by key, members by id).
#[derive(Debug, Clone)]
pub struct ClassIndex {
    classes: Vec<(String, Vec<usize>)>,
}

impl ClassIndex {
    pub fn new(samples: &[Sample]) -> Self {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            map.entry(s.label.leaf()).or_default().push(i);
        }
        let classes = map
            .into_iter()
            .map(|(k, mut idx)| {
                idx.sort_by(|&a, &b| samples[a].id.cmp(&samples[b].id));
                (k.to_string(), idx)
            })
            .collect();
        Self { classes }
    }

    pub fn classes(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Draws `classes_per_batch` distinct classes uniformly among those with at
/// least `samples_per_class` members, then that many distinct members each.
pub fn sample_batch<R: Rng + ?Sized>(
    index: &ClassIndex,
    classes_per_batch: usize,
    samples_per_class: usize,
    rng: &mut R,
) -> Result<Vec<usize>, TrainError> {
    let eligible: Vec<&[usize]> = index
        .classes
        .iter()
        .filter(|(_, m)| m.len() >= samples_per_class)
        .map(|(_, m)| m.as_slice())
        .collect();
    if eligible.len() < classes_per_batch || samples_per_class == 0 {
        return Err(TrainError::InsufficientClasses {
            needed: classes_per_batch,
            per_class: samples_per_class,
            found: eligible.len(),
        });
    }
    let mut out = Vec::with_capacity(classes_per_batch * samples_per_class);
    for c in sample_indices(rng, eligible.len(), classes_per_batch) {
        let members = eligible[c];
        for m in sample_indices(rng, members.len(), samples_per_class) {
            out.push(members[m]);
        }
    }
    Ok(out)
}

/// Loss and `∂L/∂W` of the head on one batch of normalized inputs
/// (`B × in_dim`).
pub fn head_loss_and_grad(
    head: &ProjectionHead,
    inputs: &DMatrix<f64>,
    labels: &[HierarchicalLabel],
    params: &LossParams,
) -> Result<(f64, DMatrix<f64>, Selection), TrainError> {
    let projected = inputs * head.weight.transpose();
    let out = compute_loss(&projected, labels, params)?;
    let grad_w = out.grad_embeddings.transpose() * inputs;
    Ok((out.value, grad_w, out.selection))
}

/// Same as [`head_loss_and_grad`] with mining and clamps frozen.
pub fn head_loss_frozen(
    head: &ProjectionHead,
    inputs: &DMatrix<f64>,
    selection: &Selection,
    params: &LossParams,
) -> Result<(f64, DMatrix<f64>), TrainError> {
    let projected = inputs * head.weight.transpose();
    let (value, grad) = evaluate_frozen(&projected, selection, params)?;
    Ok((value, grad.transpose() * inputs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    pub history: Vec<HistoryRow>,
}

/// Trains a fresh head on `samples` (the seen training split).
pub fn train(samples: &[Sample], loss: &LossParams, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    loss.validate()?;
    let in_dim = samples
        .first()
        .map(|s| s.embedding.len())
        .ok_or_else(|| TrainError::InvalidConfig("empty training set".into()))?;
    let mut head = ProjectionHead::init(cfg.out_dim, in_dim, cfg.seed);
    let total = cfg.total_steps();
    if total == 0 {
        return Ok(TrainOutcome {
            head,
            history: Vec::new(),
        });
    }

    let normalized: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            if s.embedding.len() != in_dim {
                return Err(TrainError::Shape(format!("sample {} has wrong dimension", s.id)));
            }
            normalize(&s.embedding).ok_or_else(|| TrainError::Shape(format!("sample {} has zero norm", s.id)))
        })
        .collect::<Result<_, _>>()?;
    let index = ClassIndex::new(samples);
    // separate stream from the init so changing init does not shift batches
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = AdamState::new(
        head.weight.len(),
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut history = Vec::with_capacity(total);

    for step in 0..total {
        let batch = sample_batch(&index, cfg.classes_per_batch, cfg.samples_per_class, &mut rng)?;
        let inputs = DMatrix::from_fn(batch.len(), in_dim, |r, c| normalized[batch[r]][c]);
        let labels: Vec<HierarchicalLabel> = batch.iter().map(|&i| samples[i].label.clone()).collect();
        let lr = cyclic_lr(step, cfg);
        // Weights that overflowed project every input to a zero or NaN row.
        let (value, grad_w, _) = match head_loss_and_grad(&head, &inputs, &labels, loss) {
            Err(TrainError::Loss(LossError::DegenerateEmbedding(_))) if step > 0 => {
                return Err(TrainError::Divergence { step, history });
            }
            other => other?,
        };
        if !value.is_finite() {
            return Err(TrainError::Divergence { step, history });
        }
        history.push(HistoryRow {
            step,
            lr,
            loss: value,
        });
        if let Err(e) = adam.step(head.weight.as_mut_slice(), grad_w.as_slice(), lr) {
            return match e {
                TrainError::NonFiniteGradient => Err(TrainError::Divergence { step, history }),
                other => Err(other),
            };
        }
    }
    Ok(TrainOutcome { head, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cyclic_lr(0, &cfg), 2e-6);
        assert!((cyclic_lr(cfg.cycle_steps / 2, &cfg) - 2e-4).abs() < 1e-18);
        assert_eq!(cyclic_lr(cfg.cycle_steps, &cfg), 2e-6);
        let quarter = cyclic_lr(cfg.cycle_steps / 4, &cfg);
        assert!((quarter - (2e-6 + 2e-4) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn triangular2_halves_amplitude() {
        let cfg = TrainConfig {
            schedule: Schedule::Triangular2,
            ..TrainConfig::default()
        };
        let peak2 = cyclic_lr(cfg.cycle_steps + cfg.cycle_steps / 2, &cfg);
        assert!((peak2 - (2e-6 + (2e-4 - 2e-6) / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut st = AdamState::new(2, 0.9, 0.999, 1e-8);
        st.m = vec![1.0, -1.0];
        st.v = vec![1.0, 1.0];
        let mut p = vec![0.5, 0.5];
        st.t = 0;
        let mut zero_moments = AdamState::new(2, 0.9, 0.999, 1e-8);
        let mut q = p.clone();
        zero_moments.step(&mut q, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(q, vec![0.5, 0.5]);
        st.step(&mut p, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(st.m, vec![0.9, -0.9]);
        assert!((st.v[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut st = AdamState::new(3, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0; 3];
        let g = [0.5, -2.0, 1e-3];
        st.step(&mut p, &g, 0.01).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_constant_gradient_steps_near_lr() {
        let mut st = AdamState::new(1, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0];
        let lr = 1e-3;
        let mut prev = 0.0;
        for _ in 0..500 {
            st.step(&mut p, &[3.0], lr).unwrap();
            let delta: f64 = prev - p[0];
            assert!((delta - lr).abs() <= 0.05 * lr);
            prev = p[0];
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut st = AdamState::new(1, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0];
        assert!(matches!(
            st.step(&mut p, &[f64::NAN], 0.1),
            Err(TrainError::NonFiniteGradient)
        ));
    }

    fn toy_samples() -> Vec<Sample> {
        let mut out = Vec::new();
        for c in 0..3 {
            for k in 0..3 {
                let label = HierarchicalLabel::parse_any(&format!("m{}/c{c}", c / 2)).unwrap();
                out.push(Sample::new(
                    format!("s{c}{k}"),
                    vec![1.0 + c as f64, k as f64 * 0.1, 0.5],
                    label,
                ));
            }
        }
        out
    }

    #[test]
    fn sample_batch_shape_and_errors() {
        let samples = toy_samples();
        let index = ClassIndex::new(&samples);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&index, 2, 2, &mut rng).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(samples[b[0]].label, samples[b[1]].label);
        assert_eq!(samples[b[2]].label, samples[b[3]].label);
        assert_ne!(samples[b[0]].label, samples[b[2]].label);
        assert!(sample_batch(&index, 4, 2, &mut rng).is_err());
        assert!(sample_batch(&index, 1, 4, &mut rng).is_err());
    }

    #[test]
    fn single_sample_per_class_is_rejected() {
        let cfg = TrainConfig {
            samples_per_class: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(TrainError::NoPositives)));
        let relaxed = TrainConfig {
            require_positives: false,
            ..cfg
        };
        assert!(relaxed.validate().is_ok());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let cfg = TrainConfig {
            epochs: 0,
            out_dim: 4,
            classes_per_batch: 2,
            samples_per_class: 2,
            ..TrainConfig::default()
        };
        let out = train(&toy_samples(), &LossParams::default(), &cfg).unwrap();
        assert_eq!(out.head, ProjectionHead::init(4, 3, cfg.seed));
        assert!(out.history.is_empty());
    }
}
