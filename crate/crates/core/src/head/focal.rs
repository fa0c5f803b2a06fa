//! Sigmoid focal loss over independent per-class binary targets.

use serde::{Deserialize, Serialize};

use super::{LogitVector, Target};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalLossConfig {
    pub gamma: f64,
    pub alpha: f64,
    /// When false, background samples contribute nothing.
    #[serde(default = "default_true")]
    pub background_as_all_negative: bool,
}

fn default_true() -> bool {
    true
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
            background_as_all_negative: true,
        }
    }
}

impl FocalLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Parameter(format!(
                "focal alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FocalOutput {
    pub loss: f64,
    /// d loss / d logit, one entry per class.
    pub grad: Vec<f64>,
}

pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// Loss and gradient for one binary term.
fn binary_term(s: f64, positive: bool, cfg: &FocalLossConfig) -> (f64, f64) {
    let (z, sign, alpha_t) = if positive {
        (s, 1.0, cfg.alpha)
    } else {
        (-s, -1.0, 1.0 - cfg.alpha)
    };
    // p_t = sigmoid(z), q = 1 - p_t
    let neg_log_pt = softplus(-z);
    let p_t = sigmoid(z);
    let q = sigmoid(-z);
    let weight = q.powf(cfg.gamma);
    let loss = alpha_t * weight * neg_log_pt;
    let grad = sign * alpha_t * weight * (-cfg.gamma * p_t * neg_log_pt - q);
    (loss, grad)
}

/// Summed per-class focal loss for one sample with its analytic gradient.
pub fn focal_loss(logits: &LogitVector, target: Target, cfg: &FocalLossConfig) -> Result<FocalOutput> {
    focal_loss_masked(logits, target, cfg, None)
}

/// As [`focal_loss`], restricted to classes where `active[c]` is true.
pub fn focal_loss_masked(
    logits: &LogitVector,
    target: Target,
    cfg: &FocalLossConfig,
    active: Option<&[bool]>,
) -> Result<FocalOutput> {
    let scores = logits.scores();
    let c = scores.len();
    if let Target::Class(t) = target {
        if t >= c {
            return Err(Error::Parameter(format!("target class {t} out of range for {c} classes")));
        }
    }
    if let Some(mask) = active {
        if mask.len() != c {
            return Err(Error::Dimension {
                expected: c,
                got: mask.len(),
            });
        }
    }
    let mut grad = vec![0.0; c];
    if target == Target::Background && !cfg.background_as_all_negative {
        return Ok(FocalOutput { loss: 0.0, grad });
    }
    let mut loss = 0.0;
    for (k, &s) in scores.iter().enumerate() {
        if active.is_some_and(|m| !m[k]) {
            continue;
        }
        let positive = target == Target::Class(k);
        let (l, g) = binary_term(s, positive, cfg);
        loss += l;
        grad[k] = g;
    }
    Ok(FocalOutput { loss, grad })
}
