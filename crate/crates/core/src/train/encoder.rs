use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-layer perceptron `n_in -> hidden -> n_emb` with a ReLU between the layers.
///
/// Weights are stored row-major: `w1` is `hidden x n_in`, `w2` is `n_emb x hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub n_in: usize,
    pub hidden: usize,
    pub n_emb: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    hidden: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(enc: &EncoderParams) -> Self {
        Self {
            w1: vec![0.0; enc.w1.len()],
            b1: vec![0.0; enc.b1.len()],
            w2: vec![0.0; enc.w2.len()],
            b2: vec![0.0; enc.b2.len()],
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn into_tensors(self) -> [Vec<f64>; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

impl EncoderParams {
    /// He-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(n_in: usize, hidden: usize, n_emb: usize, rng: &mut R) -> Result<Self> {
        if n_in == 0 || hidden == 0 || n_emb == 0 {
            return Err(Error::Parameter("encoder layer sizes must be positive".into()));
        }
        let bound1 = (6.0 / n_in as f64).sqrt();
        let bound2 = (6.0 / hidden as f64).sqrt();
        let w1 = (0..hidden * n_in).map(|_| rng.random_range(-bound1..bound1)).collect();
        let w2 = (0..n_emb * hidden).map(|_| rng.random_range(-bound2..bound2)).collect();
        Ok(Self {
            n_in,
            hidden,
            n_emb,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; n_emb],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = [
            (self.w1.len(), self.hidden * self.n_in),
            (self.b1.len(), self.hidden),
            (self.w2.len(), self.n_emb * self.hidden),
            (self.b2.len(), self.n_emb),
        ];
        for (got, expected) in shapes {
            if got != expected {
                return Err(Error::Dimension { expected, got });
            }
        }
        for t in self.tensors() {
            crate::error::ensure_finite(t, "encoder parameters")?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, EncoderCache) {
        debug_assert_eq!(x.len(), self.n_in);
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.n_in..(j + 1) * self.n_in];
                let pre = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                // `f64::max` would turn a NaN into zero and hide it.
                if pre < 0.0 {
                    0.0
                } else {
                    pre
                }
            })
            .collect();
        let out = (0..self.n_emb)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                self.b2[k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        (out, EncoderCache { hidden })
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).0
    }

    /// Accumulates parameter gradients for one sample into `grads`.
    pub fn backward(&self, x: &[f64], cache: &EncoderCache, grad_out: &[f64], grads: &mut EncoderGrads) {
        let mut grad_hidden = vec![0.0; self.hidden];
        for (k, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.b2[k] += g;
            let base = k * self.hidden;
            for j in 0..self.hidden {
                grads.w2[base + j] += g * cache.hidden[j];
                grad_hidden[j] += g * self.w2[base + j];
            }
        }
        for j in 0..self.hidden {
            // ReLU gate; the subgradient at zero is taken as zero.
            if cache.hidden[j] <= 0.0 {
                continue;
            }
            let g = grad_hidden[j];
            grads.b1[j] += g;
            let base = j * self.n_in;
            for (i, &xi) in x.iter().enumerate() {
                grads.w1[base + i] += g * xi;
            }
        }
    }

    pub fn parameter_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
