use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{normalize_backward, Embedding, JointVector, JOINTS};
use crate::error::{Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 128;

/// Affine projection `y = W x + b` followed by normalization.
///
/// `weight` is stored row-major with `d_out` rows of `d_in` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    d_in: usize,
    d_out: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(d_in: usize, d_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Dimension("projection head dimensions must be non-zero".into()));
        }
        if weight.len() != d_in * d_out || bias.len() != d_out {
            return Err(Error::Dimension(format!(
                "head {d_in}->{d_out} needs {} weights and {d_out} biases, got {} and {}",
                d_in * d_out,
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Config("projection head has non-finite parameters".into()));
        }
        Ok(Self { d_in, d_out, weight, bias })
    }

    /// Uniform Glorot initialization, zero bias.
    pub fn random(d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = libm::sqrt(6.0 / (d_in + d_out) as f64);
        let weight = (0..d_in * d_out).map(|_| rng.random_range(-limit..limit)).collect();
        Self::new(d_in, d_out, weight, vec![0.0; d_out])
    }

    /// Weight equal to the first `d_out` rows of the identity, zero bias.
    pub fn identity(d_in: usize, d_out: usize) -> Result<Self> {
        let mut weight = vec![0.0; d_in * d_out];
        for r in 0..d_out.min(d_in) {
            weight[r * d_in + r] = 1.0;
        }
        Self::new(d_in, d_out, weight, vec![0.0; d_out])
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Unnormalized output `W x + b`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::Dimension(format!("head expects {} inputs, got {}", self.d_in, x.len())));
        }
        Ok(self
            .weight
            .chunks_exact(self.d_in)
            .zip(&self.bias)
            .map(|(row, b)| super::dot(row, x) + b)
            .collect())
    }

    pub fn project(&self, x: &[f64]) -> Result<Embedding> {
        Embedding::unit(self.forward(x)?)
    }

    /// Accumulates into `grad` the parameter gradient for one input `x`
    /// given the gradient `g` with respect to the normalized output.
    pub(crate) fn accumulate(&self, x: &[f64], g: &[f64], grad: &mut HeadGradient) -> Result<()> {
        let dy = normalize_backward(&self.forward(x)?, g);
        for (r, d) in dy.iter().enumerate() {
            let row = &mut grad.weight[r * self.d_in..(r + 1) * self.d_in];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += d * xi;
            }
            grad.bias[r] += d;
        }
        Ok(())
    }

    pub(crate) fn zero_gradient(&self) -> HeadGradient {
        HeadGradient { weight: vec![0.0; self.weight.len()], bias: vec![0.0; self.d_out] }
    }

    pub(crate) fn descend(&mut self, grad: &HeadGradient, learning_rate: f64) {
        for (w, g) in self.weight.iter_mut().zip(&grad.weight) {
            *w -= learning_rate * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= learning_rate * g;
        }
    }
}

pub(crate) struct HeadGradient {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn tactile_input(features: &[f64], q: &JointVector) -> Vec<f64> {
    let mut x = Vec::with_capacity(features.len() + JOINTS);
    x.extend_from_slice(features);
    x.extend_from_slice(q.values());
    x
}

/// Tactile embedding from features concatenated with the joint vector.
pub fn project_tactile(features: &[f64], q: &JointVector, head: &ProjectionHead) -> Result<Embedding> {
    if head.d_in() != features.len() + JOINTS {
        return Err(Error::Dimension(format!(
            "tactile head takes {} inputs, features plus joints give {}",
            head.d_in(),
            features.len() + JOINTS
        )));
    }
    head.project(&tactile_input(features, q))
}
