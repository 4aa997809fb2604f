use crate::error::{Error, Result};
use crate::mapping::AnalogClassifier;
use crate::tensor::{loss_and_input_grad, softmax_cross_entropy, Network, Tensor};

use super::AttackConfig;

/// Anything that yields `∇_x L(x, y)` for a batch.
pub trait GradientSource {
    fn input_gradient(&self, x: &Tensor<f64>, y: &[usize]) -> Result<Tensor<f64>>;
}

/// Exact digital gradient of the float network.
impl GradientSource for Network<f64> {
    fn input_gradient(&self, x: &Tensor<f64>, y: &[usize]) -> Result<Tensor<f64>> {
        Ok(loss_and_input_grad(self, x, y)?.1)
    }
}

/// Hardware-in-loop gradient: the forward pass runs on the crossbar model
/// with every activation recorded, and the backward pass applies the ideal
/// local derivatives at those recorded values.
pub fn hil_gradient(hw: &AnalogClassifier, x: &Tensor<f64>, y: &[usize]) -> Result<Tensor<f64>> {
    let (logits, cache) = hw.net.forward_with(x, &hw.hardware, true)?;
    let (_, g) = softmax_cross_entropy(&logits, y)?;
    Ok(hw.net.backward(&cache.expect("recorded"), &g, false)?.input)
}

impl GradientSource for AnalogClassifier {
    fn input_gradient(&self, x: &Tensor<f64>, y: &[usize]) -> Result<Tensor<f64>> {
        hil_gradient(self, x, y)
    }
}

/// Projection onto `[x0 − ε, x0 + ε] ∩ [0, 1]`.
pub(crate) fn project(v: f64, x0: f64, eps: f64) -> f64 {
    v.clamp(x0 - eps, x0 + eps).clamp(0.0, 1.0)
}

/// l∞ projected gradient ascent on the cross-entropy, without random start:
/// `x ← Π(x + α·sign(∇_x L))`, `sign(0) = 0`.
pub fn pgd_attack<G: GradientSource + ?Sized>(
    source: &G,
    x: &Tensor<f64>,
    y: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor<f64>> {
    cfg.validate()?;
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("attack inputs must lie in [0, 1]"));
    }
    let mut adv = x.clone();
    if cfg.epsilon == 0.0 {
        return Ok(adv);
    }
    for _ in 0..cfg.iters {
        let g = source.input_gradient(&adv, y)?;
        if g.shape() != x.shape() {
            return Err(Error::shape("gradient source returned a different shape"));
        }
        for ((a, &x0), &gi) in adv.data_mut().iter_mut().zip(x.data()).zip(g.data()) {
            let step = if gi > 0.0 {
                cfg.alpha
            } else if gi < 0.0 {
                -cfg.alpha
            } else {
                0.0
            };
            *a = project(*a + step, x0, cfg.epsilon);
        }
    }
    Ok(adv)
}
