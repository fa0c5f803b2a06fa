//! Riemannian SGD for hyperboloid prototypes and AdamW for Euclidean parameters.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::lorentz::{exp_unchecked, project_to_manifold, tangent_project, HyperboloidPoint};

/// One Riemannian SGD step.
///
/// The ambient gradient is rescaled by the inverse metric (its time component
/// is negated), projected onto the tangent space at `x`, and followed along
/// the geodesic for `-lr` times its length. The result is re-projected.
pub fn riemannian_step(x: &HyperboloidPoint, ambient_grad: &[f64], lr: f64) -> Result<HyperboloidPoint> {
    if ambient_grad.len() != x.coords().len() {
        return Err(Error::Dimension {
            expected: x.coords().len(),
            got: ambient_grad.len(),
        });
    }
    ensure_finite(ambient_grad, "ambient gradient")?;
    if !lr.is_finite() {
        return Err(Error::Parameter(format!("learning rate must be finite, got {lr}")));
    }
    let mut scaled = ambient_grad.to_vec();
    scaled[0] = -scaled[0];
    let u = tangent_project(x, &scaled)?;
    let step: Vec<f64> = u.components().iter().map(|c| -lr * c).collect();
    let moved = exp_unchecked(x.coords(), &step);
    let out = project_to_manifold(moved.coords())?;
    ensure_finite(out.coords(), "riemannian step result")?;
    Ok(out)
}

/// Rescales every gradient by `max_norm / norm` when the global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Parameter(format!("clip norm must be positive, got {max_norm}")));
    }
    let total: f64 = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if total > max_norm {
        let scale = max_norm / total;
        for g in grads.iter_mut().flatten() {
            *g *= scale;
        }
    }
    Ok(total)
}

/// AdamW state with one moment buffer pair per parameter slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
    pub step_count: u64,
    pub first_moments: Vec<Vec<f64>>,
    pub second_moments: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, weight_decay: f64, grad_clip_norm: Option<f64>) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::Parameter(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        if let Some(c) = grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::Parameter(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            grad_clip_norm,
            step_count: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        })
    }

    /// Advances the shared step counter; call once per optimizer iteration.
    pub fn begin_step(&mut self) {
        self.step_count += 1;
    }

    /// Decoupled-weight-decay Adam update of one parameter tensor in place.
    pub fn euclidean_step(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::Dimension {
                expected: param.len(),
                got: grad.len(),
            });
        }
        ensure_finite(grad, "gradient")?;
        if self.step_count == 0 {
            self.begin_step();
        }
        while self.first_moments.len() <= slot {
            self.first_moments.push(Vec::new());
            self.second_moments.push(Vec::new());
        }
        let m = &mut self.first_moments[slot];
        let v = &mut self.second_moments[slot];
        if m.is_empty() {
            m.resize(param.len(), 0.0);
            v.resize(param.len(), 0.0);
        } else if m.len() != param.len() {
            return Err(Error::Dimension {
                expected: m.len(),
                got: param.len(),
            });
        }
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let decay = 1.0 - lr * self.weight_decay;
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            param[i] = param[i] * decay - lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::{exp_map_origin, manifold_violation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_keeps_point() {
        let x = exp_map_origin(&[0.3, -0.2]).unwrap();
        let y = riemannian_step(&x, &[0.0, 0.0, 0.0], 0.5).unwrap();
        for (a, b) in x.coords().iter().zip(y.coords()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_traced_step_at_origin() {
        let y = riemannian_step(&HyperboloidPoint::origin(2), &[0.0, 1.0, 0.0], 1.0).unwrap();
        let expected = [1f64.cosh(), -(1f64.sinh()), 0.0];
        for (a, b) in y.coords().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn steps_stay_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = exp_map_origin(&v).unwrap();
            let g: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = riemannian_step(&x, &g, 0.1).unwrap();
            assert!(manifold_violation(y.coords()) < 1e-9);
        }
    }

    #[test]
    fn clipping_examples() {
        let mut small = vec![vec![0.03, 0.04]];
        assert!((clip_gradients(&mut small, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(small, vec![vec![0.03, 0.04]]);

        let mut big = vec![vec![1.2, 0.0], vec![0.0, 1.6]];
        assert!((clip_gradients(&mut big, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((big[0][0] - 0.6).abs() < 1e-15 && (big[1][1] - 0.8).abs() < 1e-15);
        let norm: f64 = big.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm <= 1.0 + 1e-12);
        assert!(clip_gradients(&mut big, 0.0).is_err());
    }

    #[test]
    fn adamw_examples() {
        let mut state = OptimizerState::new(0.1, 0.0, None).unwrap();
        let mut p = vec![1.0];
        state.begin_step();
        state.euclidean_step(0, &mut p, &[0.0]).unwrap();
        assert_eq!(p, vec![1.0]);

        let mut state = OptimizerState::new(0.1, 0.0, None).unwrap();
        let mut p = vec![1.0];
        state.begin_step();
        state.euclidean_step(0, &mut p, &[1.0]).unwrap();
        assert!(p[0] < 1.0);
        assert!((p[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn adamw_slots_are_independent() {
        let mut joint = OptimizerState::new(0.05, 1e-4, None).unwrap();
        let mut a = vec![0.5, -0.5];
        let mut b = vec![2.0];
        let mut solo = OptimizerState::new(0.05, 1e-4, None).unwrap();
        let mut a_alone = a.clone();
        for k in 0..5 {
            let g = [0.1 * k as f64, -0.3];
            joint.begin_step();
            joint.euclidean_step(0, &mut a, &g).unwrap();
            joint.euclidean_step(1, &mut b, &[7.0]).unwrap();
            solo.begin_step();
            solo.euclidean_step(0, &mut a_alone, &g).unwrap();
        }
        assert_eq!(a, a_alone);
        assert!(joint.euclidean_step(0, &mut b, &[1.0]).is_err());
        assert!(joint.euclidean_step(0, &mut a, &[1.0]).is_err());
    }
}
