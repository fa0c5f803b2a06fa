//! Classification heads: distance-based hyperbolic logits and Euclidean baselines.
//!
//! A hyperbolic head maps a Euclidean feature onto the hyperboloid with the
//! exponential map at the origin, measures geodesic distances to one prototype
//! per class and converts them into logits with `s = delta - (delta / d_min) * d`.
//! The baseline heads score `W^T v` (linear) or scaled cosine similarity.

mod bank;
mod focal;
mod grad;

pub use bank::{min_pairwise_distance, BankFile, HeadMode, PrototypeBank};
pub use focal::{focal_loss, focal_loss_masked, FocalLossConfig, FocalOutput};
pub use grad::{head_backward, HeadGrad};

pub(crate) use focal::sigmoid;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::lorentz::{distance_unchecked, exp_map_origin};

pub const DEFAULT_DELTA: f64 = 1.4;
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Groundtruth for one sample: a class index or background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    Background,
}

impl Target {
    pub fn from_label(label: Option<usize>) -> Self {
        label.map_or(Target::Background, Target::Class)
    }

    pub fn class(self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(c),
            Target::Background => None,
        }
    }
}

/// Per-class classification scores.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        ensure_finite(&scores, "logits")?;
        Ok(Self(scores))
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Geodesic distance from `exp_0(feature)` to every class prototype.
pub fn distances_to_prototypes(feature: &[f64], bank: &PrototypeBank) -> Result<Vec<f64>> {
    if bank.mode() != HeadMode::Hyperbolic {
        return Err(Error::Contract(format!(
            "distances require a hyperbolic bank, got {}",
            bank.mode()
        )));
    }
    bank.check_feature(feature)?;
    let x = exp_map_origin(feature)?;
    Ok(bank
        .rows()
        .iter()
        .map(|t| distance_unchecked(x.coords(), t))
        .collect())
}

/// `s_c = delta - (delta / d_min) * d_c`, evaluated as `delta * (1 - d_c / d_min)`
/// so that `d = 0` gives exactly `delta` and `d = d_min` exactly zero.
pub fn shift_logits(distances: &[f64], delta: f64, d_min: f64) -> Result<LogitVector> {
    if !(d_min > 0.0 && d_min.is_finite()) {
        return Err(Error::Parameter(format!("d_min must be positive, got {d_min}")));
    }
    if let Some(d) = distances.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::Parameter(format!("distances must be non-negative, got {d}")));
    }
    LogitVector::new(distances.iter().map(|d| delta * (1.0 - d / d_min)).collect())
}

/// Euclidean baseline scores: `W^T v` (linear) or `cos(v, w_c) / tau` (cosine).
pub fn baseline_logits(feature: &[f64], bank: &PrototypeBank) -> Result<LogitVector> {
    bank.check_feature(feature)?;
    let scores = match bank.mode() {
        HeadMode::EuclideanLinear => bank.rows().iter().map(|w| dot(w, feature)).collect(),
        HeadMode::EuclideanCosine => {
            let fnorm = norm(feature);
            bank.rows()
                .iter()
                .map(|w| cosine(feature, fnorm, w) / bank.temperature())
                .collect()
        }
        HeadMode::Hyperbolic => {
            return Err(Error::Contract("baseline logits require a euclidean bank".into()))
        }
    };
    LogitVector::new(scores)
}

/// Logits for whichever mode the bank is in.
pub fn head_logits(feature: &[f64], bank: &PrototypeBank) -> Result<LogitVector> {
    match bank.mode() {
        HeadMode::Hyperbolic => {
            let d = distances_to_prototypes(feature, bank)?;
            shift_logits(&d, bank.delta(), bank.d_min())
        }
        _ => baseline_logits(feature, bank),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: usize,
    pub confidence: f64,
    /// `(class, confidence)` sorted by descending confidence.
    pub top_k: Vec<(usize, f64)>,
}

/// Predicted class, its sigmoid confidence and the `k` most confident classes.
///
/// Ties resolve to the lower class index.
pub fn classify(feature: &[f64], bank: &PrototypeBank, k: usize) -> Result<Classification> {
    let c = bank.num_classes();
    if k > c {
        return Err(Error::Parameter(format!("top-k of {k} exceeds {c} classes")));
    }
    let logits = head_logits(feature, bank)?;
    Ok(classify_logits(&logits, k))
}

pub(crate) fn classify_logits(logits: &LogitVector, k: usize) -> Classification {
    // Hyperbolic logits are strictly decreasing in distance, so the logit
    // argmax is the distance argmin.
    let scores = logits.scores();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let top_k = order
        .iter()
        .take(k)
        .map(|&i| (i, sigmoid(scores[i])))
        .collect();
    let class = order[0];
    Classification {
        class,
        confidence: sigmoid(scores[class]),
        top_k,
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine(v: &[f64], vnorm: f64, w: &[f64]) -> f64 {
    let wnorm = norm(w);
    if vnorm == 0.0 || wnorm == 0.0 {
        0.0
    } else {
        dot(v, w) / (vnorm * wnorm)
    }
}
