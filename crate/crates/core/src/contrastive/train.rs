use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{augment, AugmentSpec, ToyFeatureExtractor};
use super::head::{tactile_input, ProjectionHead, DEFAULT_EMBEDDING_DIM};
use super::{dual_positive_grad, retrieval_accuracy, Embedding, JointVector, MemoryBank, JOINTS};
use super::{DEFAULT_BANK_CAPACITY, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::frame::RasterFrame;

const MIN_TAU: f64 = 1e-3;
const MAX_TAU: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub bank_capacity: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub embedding_dim: usize,
    /// Share of bank pushes that are augmented visual views of other
    /// samples; the rest are stale tactile embeddings.
    pub augmented_fraction: f64,
    pub learn_tau: bool,
    pub train_visual_head: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            batch_size: 32,
            bank_capacity: DEFAULT_BANK_CAPACITY,
            learning_rate: 1.0,
            epochs: 10,
            seed: 0,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            augmented_fraction: 0.5,
            learn_tau: false,
            train_visual_head: false,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.batch_size == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("batch size and embedding dimension must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.augmented_fraction) {
            return Err(Error::Config("augmented fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One time step of a demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPair {
    pub visual: RasterFrame,
    pub tactile: RasterFrame,
    pub joints: JointVector,
}

/// Encoder outputs of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub visual: Vec<f64>,
    pub tactile: Vec<f64>,
    pub joints: JointVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Top-1 tactile-to-visual retrieval after the epoch.
    pub retrieval_top1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAlignment {
    pub tactile_head: ProjectionHead,
    pub visual_head: ProjectionHead,
    pub tau: f64,
    pub metrics: Vec<EpochMetrics>,
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Encoders used by [`train_alignment`] for a given seed.
pub fn encoders(seed: u64) -> (ToyFeatureExtractor, ToyFeatureExtractor) {
    (ToyFeatureExtractor::default_with_seed(sub_seed(seed, 1)), ToyFeatureExtractor::default_with_seed(sub_seed(seed, 2)))
}

/// Extracts features with the toy encoders and trains the tactile head.
pub fn train_alignment(pairs: &[AlignmentPair], config: &AlignmentConfig) -> Result<TrainedAlignment> {
    config.validate()?;
    check_size(pairs.len(), config)?;
    let (fv, ft) = encoders(config.seed);
    let features = pairs
        .iter()
        .map(|p| {
            Ok(PairFeatures { visual: fv.extract(&p.visual)?, tactile: ft.extract(&p.tactile)?, joints: p.joints })
        })
        .collect::<Result<Vec<_>>>()?;
    train_on_features(&features, config, |j, seed| {
        let frame = &pairs[j].visual;
        let spec = AugmentSpec::random(frame.width(), frame.height(), seed);
        fv.extract(&augment(frame, &spec, seed)?)
    })
}

fn check_size(n: usize, config: &AlignmentConfig) -> Result<()> {
    if n < 2 * config.batch_size {
        return Err(Error::InsufficientData { needed: 2 * config.batch_size, found: n });
    }
    Ok(())
}

struct Batch {
    start: usize,
    end: usize,
    /// `(sample, seed)` of augmented visual views pushed after the batch.
    augmented: Vec<(usize, u64)>,
    /// Batch samples whose tactile embedding is pushed after the batch.
    stale: Vec<usize>,
}

/// Bank whose entries remember the sample they came from so a batch never
/// sees its own samples as negatives.
struct SourcedBank {
    capacity: usize,
    entries: VecDeque<(usize, Embedding)>,
}

impl SourcedBank {
    fn push(&mut self, source: usize, e: Embedding) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((source, e));
    }

    fn excluding(&self, lo: usize, hi: usize) -> Result<MemoryBank> {
        MemoryBank::with_entries(
            self.capacity,
            self.entries.iter().filter(|(s, _)| *s < lo || *s > hi).map(|(_, e)| e.clone()),
        )
    }
}

/// Trains the tactile head (and optionally the visual head and the
/// temperature) on precomputed features. `augmented(j, seed)` returns the
/// visual features of an augmented view of sample `j`.
pub fn train_on_features<F>(features: &[PairFeatures], config: &AlignmentConfig, mut augmented: F) -> Result<TrainedAlignment>
where
    F: FnMut(usize, u64) -> Result<Vec<f64>>,
{
    config.validate()?;
    let n = features.len();
    check_size(n, config)?;
    let dv = features[0].visual.len();
    let dt = features[0].tactile.len();
    if let Some(i) = features.iter().position(|f| f.visual.len() != dv || f.tactile.len() != dt) {
        return Err(Error::Dimension(format!("sample {i} has inconsistent feature dimensions")));
    }
    let d = config.embedding_dim;
    let mut gv = ProjectionHead::random(dv, d, sub_seed(config.seed, 3))?;
    let mut gt = ProjectionHead::random(dt + JOINTS, d, sub_seed(config.seed, 4))?;
    let mut tau = config.tau;

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 5));
    let b = config.batch_size;
    let mut plan: Vec<Batch> = (0..n.div_ceil(b))
        .map(|k| {
            let (start, end) = (k * b, ((k + 1) * b).min(n) - 1);
            let len = end - start + 1;
            let n_aug = libm::round(len as f64 * config.augmented_fraction) as usize;
            let augmented = (0..n_aug)
                .map(|_| {
                    let mut j = rng.random_range(0..n - len);
                    if j >= start {
                        j += len;
                    }
                    (j, rng.random::<u64>())
                })
                .collect();
            Batch { start, end, augmented, stale: (start..start + len - n_aug).collect() }
        })
        .collect();
    plan.shuffle(&mut rng);

    let mut aug_cache = Vec::with_capacity(plan.len());
    for batch in &plan {
        let feats = batch
            .augmented
            .iter()
            .map(|&(j, seed)| augmented(j, seed))
            .collect::<Result<Vec<_>>>()?;
        if let Some(f) = feats.iter().find(|f| f.len() != dv) {
            return Err(Error::Dimension(format!("augmented features have dimension {}, expected {dv}", f.len())));
        }
        aug_cache.push(feats);
    }

    let inputs: Vec<Vec<f64>> = features.iter().map(|f| tactile_input(&f.tactile, &f.joints)).collect();
    let mut bank = SourcedBank { capacity: config.bank_capacity, entries: VecDeque::new() };
    let push_batch = |bank: &mut SourcedBank, k: usize, gv: &ProjectionHead, gt: &ProjectionHead| -> Result<()> {
        for (&(j, _), f) in plan[k].augmented.iter().zip(&aug_cache[k]) {
            bank.push(j, gv.project(f)?);
        }
        for &i in &plan[k].stale {
            bank.push(i, gt.project(&inputs[i])?);
        }
        Ok(())
    };
    // Prime the bank with whole epochs of pushes so every epoch starts from
    // the same bank state when the parameters do not move.
    let pushes_per_epoch: usize = plan.iter().map(|p| p.augmented.len() + p.stale.len()).sum();
    if pushes_per_epoch > 0 {
        for _ in 0..config.bank_capacity.div_ceil(pushes_per_epoch) {
            for k in 0..plan.len() {
                push_batch(&mut bank, k, &gv, &gt)?;
            }
        }
    }

    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        for k in 0..plan.len() {
            let Batch { start, end, .. } = plan[k];
            let t: Vec<Embedding> = (start..=end).map(|i| gt.project(&inputs[i])).collect::<Result<_>>()?;
            let v_end = (end + 1).min(n - 1);
            let v: Vec<Embedding> = (start..=v_end).map(|i| gv.project(&features[i].visual)).collect::<Result<_>>()?;
            let negatives = bank.excluding(start, v_end)?;
            let grads = dual_positive_grad(&v, &t, &negatives, tau)?;
            loss_sum += grads.loss.loss * (end - start + 1) as f64;

            let mut step_t = gt.zero_gradient();
            for (i, g) in (start..=end).zip(&grads.tactile) {
                gt.accumulate(&inputs[i], g, &mut step_t)?;
            }
            if config.train_visual_head {
                let mut step_v = gv.zero_gradient();
                for (i, g) in (start..=v_end).zip(&grads.visual) {
                    gv.accumulate(&features[i].visual, g, &mut step_v)?;
                }
                gv.descend(&step_v, config.learning_rate);
            }
            push_batch(&mut bank, k, &gv, &gt)?;
            gt.descend(&step_t, config.learning_rate);
            if config.learn_tau {
                tau = (tau - config.learning_rate * grads.tau).clamp(MIN_TAU, MAX_TAU);
            }
        }
        let v_all: Vec<Embedding> = features.iter().map(|f| gv.project(&f.visual)).collect::<Result<_>>()?;
        let t_all: Vec<Embedding> = inputs.iter().map(|x| gt.project(x)).collect::<Result<_>>()?;
        metrics.push(EpochMetrics {
            epoch,
            loss: loss_sum / n as f64,
            retrieval_top1: retrieval_accuracy(&v_all, &t_all)?,
        });
    }
    Ok(TrainedAlignment { tactile_head: gt, visual_head: gv, tau, metrics })
}

/// `n` time steps of a textured object under contact. The visual frame is
/// an 8x8 grid of random gray levels with a bright blob on top; the tactile
/// frame is the vertically mirrored negative of the visual frame and the
/// joints encode the blob state and mean surface level.
pub fn correlated_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<AlignmentPair>> {
    const GRID: usize = 8;
    if size < GRID {
        return Err(Error::Config(format!("frames of {size} px are smaller than the patch grid")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    (0..n)
        .map(|_| {
            let levels: Vec<f64> = (0..GRID * GRID).map(|_| rng.random_range(40.0..200.0)).collect();
            let cx: f64 = rng.random_range(0.1..0.9);
            let cy: f64 = rng.random_range(0.1..0.9);
            let radius: f64 = rng.random_range(0.06..0.2);
            let amp: f64 = rng.random_range(20.0..50.0);
            let mut visual = Vec::with_capacity(size * size);
            for y in 0..size {
                for x in 0..size {
                    let (u, w) = (x as f64 / s, y as f64 / s);
                    let d2 = (u - cx) * (u - cx) + (w - cy) * (w - cy);
                    let level = levels[(y * GRID / size) * GRID + x * GRID / size];
                    visual.push(crate::frame::quantize(level + amp * libm::exp(-d2 / (2.0 * radius * radius))));
                }
            }
            let mut tactile = Vec::with_capacity(size * size);
            for y in (0..size).rev() {
                tactile.extend(visual[y * size..(y + 1) * size].iter().map(|p| 255 - p));
            }
            let mean_level = levels.iter().sum::<f64>() / levels.len() as f64;
            let joints = JointVector::new([
                2.0 * cx - 1.0,
                2.0 * cy - 1.0,
                (radius - 0.13) / 0.07,
                (amp - 35.0) / 15.0,
                ((mean_level - 120.0) / 40.0).clamp(-1.0, 1.0),
                0.0,
                0.0,
            ])?;
            Ok(AlignmentPair {
                visual: RasterFrame::gray(size, size, visual)?,
                tactile: RasterFrame::gray(size, size, tactile)?,
                joints,
            })
        })
        .collect()
}
