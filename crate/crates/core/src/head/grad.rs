//! Analytic backward pass through head logits and the focal loss.

use super::{dot, focal_loss_masked, norm, FocalLossConfig, HeadMode, LogitVector, PrototypeBank, Target};
use crate::error::Result;
use crate::lorentz::{distance_grad_x, distance_unchecked, exp_map_origin, exp_map_origin_vjp};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub loss: f64,
    pub logits: LogitVector,
    /// d loss / d feature.
    pub feature: Vec<f64>,
    /// d loss / d prototype row, in the row's own (ambient) coordinates.
    pub prototypes: Vec<Vec<f64>>,
}

/// Focal loss of one sample and its gradients with respect to the feature and
/// every prototype row.
pub fn head_backward(
    feature: &[f64],
    bank: &PrototypeBank,
    target: Target,
    cfg: &FocalLossConfig,
    active: Option<&[bool]>,
) -> Result<HeadGrad> {
    bank.check_feature(feature)?;
    match bank.mode() {
        HeadMode::Hyperbolic => hyperbolic_backward(feature, bank, target, cfg, active),
        HeadMode::EuclideanLinear => linear_backward(feature, bank, target, cfg, active),
        HeadMode::EuclideanCosine => cosine_backward(feature, bank, target, cfg, active),
    }
}

fn hyperbolic_backward(
    feature: &[f64],
    bank: &PrototypeBank,
    target: Target,
    cfg: &FocalLossConfig,
    active: Option<&[bool]>,
) -> Result<HeadGrad> {
    let x = exp_map_origin(feature)?;
    let x = x.coords();
    let distances: Vec<f64> = bank.rows().iter().map(|t| distance_unchecked(x, t)).collect();
    let logits = super::shift_logits(&distances, bank.delta(), bank.d_min())?;
    let focal = focal_loss_masked(&logits, target, cfg, active)?;
    let slope = bank.delta() / bank.d_min();

    let mut grad_x = vec![0.0; x.len()];
    let mut prototypes = Vec::with_capacity(bank.num_classes());
    for ((t, &d), &g_s) in bank.rows().iter().zip(&distances).zip(&focal.grad) {
        let g_d = -slope * g_s;
        if g_d == 0.0 {
            prototypes.push(vec![0.0; t.len()]);
            continue;
        }
        for (acc, gi) in grad_x.iter_mut().zip(distance_grad_x(x, t, d)) {
            *acc += g_d * gi;
        }
        prototypes.push(distance_grad_x(t, x, d).into_iter().map(|gi| g_d * gi).collect());
    }
    Ok(HeadGrad {
        loss: focal.loss,
        logits,
        feature: exp_map_origin_vjp(feature, &grad_x),
        prototypes,
    })
}

fn linear_backward(
    feature: &[f64],
    bank: &PrototypeBank,
    target: Target,
    cfg: &FocalLossConfig,
    active: Option<&[bool]>,
) -> Result<HeadGrad> {
    let logits = super::baseline_logits(feature, bank)?;
    let focal = focal_loss_masked(&logits, target, cfg, active)?;
    let mut grad_v = vec![0.0; feature.len()];
    let mut prototypes = Vec::with_capacity(bank.num_classes());
    for (w, &g) in bank.rows().iter().zip(&focal.grad) {
        for (acc, wi) in grad_v.iter_mut().zip(w) {
            *acc += g * wi;
        }
        prototypes.push(feature.iter().map(|v| g * v).collect());
    }
    Ok(HeadGrad {
        loss: focal.loss,
        logits,
        feature: grad_v,
        prototypes,
    })
}

fn cosine_backward(
    feature: &[f64],
    bank: &PrototypeBank,
    target: Target,
    cfg: &FocalLossConfig,
    active: Option<&[bool]>,
) -> Result<HeadGrad> {
    let logits = super::baseline_logits(feature, bank)?;
    let focal = focal_loss_masked(&logits, target, cfg, active)?;
    let tau = bank.temperature();
    let vnorm = norm(feature);
    let mut grad_v = vec![0.0; feature.len()];
    let mut prototypes = Vec::with_capacity(bank.num_classes());
    for (w, &g) in bank.rows().iter().zip(&focal.grad) {
        let wnorm = norm(w);
        if vnorm == 0.0 || wnorm == 0.0 || g == 0.0 {
            prototypes.push(vec![0.0; w.len()]);
            continue;
        }
        let cos = dot(feature, w) / (vnorm * wnorm);
        let scale = g / tau;
        // d cos / dv = (w/|w| - cos v/|v|) / |v|, and symmetrically for w.
        for ((acc, vi), wi) in grad_v.iter_mut().zip(feature).zip(w) {
            *acc += scale * (wi / wnorm - cos * vi / vnorm) / vnorm;
        }
        prototypes.push(
            feature
                .iter()
                .zip(w)
                .map(|(vi, wi)| scale * (vi / vnorm - cos * wi / wnorm) / wnorm)
                .collect(),
        );
    }
    Ok(HeadGrad {
        loss: focal.loss,
        logits,
        feature: grad_v,
        prototypes,
    })
}
