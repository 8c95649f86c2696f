//! Visuo-tactile contrastive alignment.
//!
//! For sample `i` of a batch of `B` with unit embeddings `v` (visual) and
//! `t` (tactile), the loss is
//!
//! ```text
//! L_i = -ln( (e^{v_i.t_i/tau} + e^{v_{i+1}.t_i/tau})
//!          / (e^{v_i.t_i/tau} + e^{v_{i+1}.t_i/tau} + sum_{m in bank} e^{m.t_i/tau}) )
//! ```
//!
//! averaged over the batch. The next-step visual `v_{i+1}` is a second
//! positive; at the end of a trajectory it is absent and only `v_i`
//! remains in the numerator.

mod features;
mod head;
mod train;

pub use features::{augment, AugmentSpec, ToyFeatureExtractor, DEFAULT_FEATURE_DIM};
pub use head::{project_tactile, ProjectionHead, DEFAULT_EMBEDDING_DIM};
pub use train::{
    correlated_dataset, encoders, train_alignment, train_on_features, AlignmentConfig, AlignmentPair, EpochMetrics,
    PairFeatures, TrainedAlignment,
};

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_BANK_CAPACITY: usize = 1024;
pub const JOINTS: usize = 7;
/// Largest tolerated deviation of an embedding norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-4;

/// A real embedding vector, not necessarily normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Normalization("embedding has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    /// Normalizes `values` in one step.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        Self::new(values)?.normalize()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.values, &self.values))
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn normalize(&self) -> Result<Embedding> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Normalization("cannot normalize a zero vector".into()));
        }
        Ok(Embedding { values: self.values.iter().map(|v| v / n).collect() })
    }

    pub fn is_unit(&self) -> bool {
        libm::fabs(self.norm() - 1.0) <= UNIT_TOLERANCE
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_unit(e: &Embedding, what: &str, i: usize) -> Result<()> {
    if e.is_unit() {
        Ok(())
    } else {
        Err(Error::Normalization(format!("{what} {i} has norm {}", e.norm())))
    }
}

/// Seven joint positions scaled to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointVector {
    values: [f64; JOINTS],
}

impl JointVector {
    pub fn new(values: [f64; JOINTS]) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("joint {i} value {} outside [-1, 1]", values[i])));
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; JOINTS] = values
            .try_into()
            .map_err(|_| Error::Dimension(format!("expected {JOINTS} joint values, got {}", values.len())))?;
        Self::new(arr)
    }

    /// Maps raw joint positions into `[-1, 1]` using per-joint `(lower,
    /// upper)` limits; positions beyond a limit saturate.
    pub fn from_limits(raw: [f64; JOINTS], limits: &[(f64, f64); JOINTS]) -> Result<Self> {
        let mut values = [0.0; JOINTS];
        for (i, (&r, &(lo, hi))) in raw.iter().zip(limits).enumerate() {
            if !(hi > lo) || !r.is_finite() {
                return Err(Error::Config(format!("joint {i}: bad limits ({lo}, {hi}) or value {r}")));
            }
            values[i] = (2.0 * (r - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64; JOINTS] {
        &self.values
    }
}

/// First-in first-out queue of unit embeddings used as negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    entries: VecDeque<Embedding>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    /// A bank of the given capacity pre-filled with `entries`.
    pub fn with_entries<I: IntoIterator<Item = Embedding>>(capacity: usize, entries: I) -> Result<Self> {
        let mut bank = Self::new(capacity);
        bank.push(entries)?;
        Ok(bank)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Embedding> {
        self.entries.iter()
    }

    /// Appends `new` in order, evicting the oldest entries beyond capacity.
    /// Nothing is inserted if any entry is not unit-norm.
    pub fn push<I: IntoIterator<Item = Embedding>>(&mut self, new: I) -> Result<()> {
        let new: Vec<Embedding> = new.into_iter().collect();
        for (i, e) in new.iter().enumerate() {
            check_unit(e, "bank entry", i)?;
        }
        for e in new {
            if self.capacity == 0 {
                break;
            }
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(e);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub per_sample: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub loss: LossOutput,
    /// `dL/dt_i` for every tactile embedding.
    pub tactile: Vec<Vec<f64>>,
    /// `dL/dv_j` for every visual embedding, including the trailing one.
    pub visual: Vec<Vec<f64>>,
    pub tau: f64,
}

fn validate_batch(v: &[Embedding], t: &[Embedding], bank: &MemoryBank, tau: f64) -> Result<bool> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if t.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let has_tail_positive = match v.len() {
        n if n == t.len() + 1 => true,
        n if n == t.len() => false,
        n => {
            return Err(Error::Dimension(format!(
                "{} tactile embeddings need {} or {} visual ones, got {n}",
                t.len(),
                t.len() + 1,
                t.len()
            )))
        }
    };
    let dim = t[0].dim();
    for (what, set) in [("visual", v), ("tactile", t)] {
        for (i, e) in set.iter().enumerate() {
            if e.dim() != dim {
                return Err(Error::Dimension(format!("{what} {i} has dimension {}, expected {dim}", e.dim())));
            }
            check_unit(e, what, i)?;
        }
    }
    for (i, e) in bank.iter().enumerate() {
        if e.dim() != dim {
            return Err(Error::Dimension(format!("bank entry {i} has dimension {}, expected {dim}", e.dim())));
        }
    }
    Ok(has_tail_positive)
}

/// Softmax statistics of one sample: positive and negative logits, their
/// stabilized exponentials and the partial sums.
struct SampleTerms {
    positives: Vec<(usize, f64)>,
    negatives: Vec<f64>,
    max: f64,
    pos_sum: f64,
    neg_sum: f64,
}

impl SampleTerms {
    fn new(i: usize, v: &[Embedding], t: &Embedding, bank: &MemoryBank, tau: f64) -> Self {
        let mut positives = vec![(i, v[i].dot(t) / tau)];
        if i + 1 < v.len() {
            positives.push((i + 1, v[i + 1].dot(t) / tau));
        }
        let negatives: Vec<f64> = bank.iter().map(|m| m.dot(t) / tau).collect();
        let max = positives.iter().map(|p| p.1).chain(negatives.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
        let pos_sum = positives.iter().map(|p| libm::exp(p.1 - max)).sum();
        let neg_sum = negatives.iter().fold(0.0, |acc, s| acc + libm::exp(s - max));
        Self { positives, negatives, max, pos_sum, neg_sum }
    }

    fn loss(&self) -> f64 {
        libm::log1p(self.neg_sum / self.pos_sum)
    }
}

/// Mean dual-positive loss. `v` holds `B + 1` visual embeddings, or `B`
/// when the last tactile sample ends its trajectory.
pub fn dual_positive_loss(v: &[Embedding], t: &[Embedding], bank: &MemoryBank, tau: f64) -> Result<LossOutput> {
    validate_batch(v, t, bank, tau)?;
    let per_sample: Vec<f64> = t.iter().enumerate().map(|(i, ti)| SampleTerms::new(i, v, ti, bank, tau).loss()).collect();
    let loss = per_sample.iter().sum::<f64>() / t.len() as f64;
    Ok(LossOutput { loss, per_sample })
}

/// Loss and its analytic gradient with respect to every tactile and visual
/// embedding and the temperature. Bank entries are treated as constants.
pub fn dual_positive_grad(v: &[Embedding], t: &[Embedding], bank: &MemoryBank, tau: f64) -> Result<LossGradients> {
    validate_batch(v, t, bank, tau)?;
    let dim = t[0].dim();
    let b = t.len() as f64;
    let mut gt = vec![vec![0.0; dim]; t.len()];
    let mut gv = vec![vec![0.0; dim]; v.len()];
    let mut gtau = 0.0;
    let mut per_sample = Vec::with_capacity(t.len());
    for (i, ti) in t.iter().enumerate() {
        let terms = SampleTerms::new(i, v, ti, bank, tau);
        per_sample.push(terms.loss());
        let total = terms.pos_sum + terms.neg_sum;
        // dL_i/ds_j = p_j - q_j for positives, p_j for negatives, where p is
        // the softmax over all logits and q the softmax over positives.
        let mut apply = |weight: f64, logit: f64, vec: &[f64], gv_row: Option<&mut Vec<f64>>| {
            let w = weight / b;
            for (g, x) in gt[i].iter_mut().zip(vec) {
                *g += w * x / tau;
            }
            if let Some(row) = gv_row {
                for (g, x) in row.iter_mut().zip(ti.values()) {
                    *g += w * x / tau;
                }
            }
            gtau -= w * logit / tau;
        };
        for &(j, s) in &terms.positives {
            let e = libm::exp(s - terms.max);
            apply(e / total - e / terms.pos_sum, s, v[j].values(), Some(&mut gv[j]));
        }
        for (m, &s) in bank.iter().zip(&terms.negatives) {
            apply(libm::exp(s - terms.max) / total, s, m.values(), None);
        }
    }
    let loss = per_sample.iter().sum::<f64>() / b;
    Ok(LossGradients { loss: LossOutput { loss, per_sample }, tactile: gt, visual: gv, tau: gtau })
}

/// Gradient with respect to the unnormalized vector `x` given the gradient
/// `g` with respect to `x / |x|`.
pub fn normalize_backward(x: &[f64], g: &[f64]) -> Vec<f64> {
    let n = libm::sqrt(dot(x, x));
    let proj = dot(g, x) / (n * n);
    x.iter().zip(g).map(|(xi, gi)| (gi - proj * xi) / n).collect()
}

/// Fraction of tactile embeddings whose best-matching visual embedding is
/// their own partner. Ties resolve to the lower index.
pub fn retrieval_accuracy(v_set: &[Embedding], t_set: &[Embedding]) -> Result<f64> {
    if v_set.len() != t_set.len() {
        return Err(Error::Dimension(format!("{} visual vs {} tactile embeddings", v_set.len(), t_set.len())));
    }
    if v_set.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let hits = t_set
        .iter()
        .enumerate()
        .filter(|(i, ti)| {
            let mut best = (0, f64::NEG_INFINITY);
            for (j, vj) in v_set.iter().enumerate() {
                let s = ti.dot(vj);
                if s > best.1 {
                    best = (j, s);
                }
            }
            best.0 == *i
        })
        .count();
    Ok(hits as f64 / v_set.len() as f64)
}
