//! Hybrid training objective: pixelwise binary cross-entropy blended with a
//! smoothed soft Dice loss, `alpha * bce + (1 - alpha) * dice`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Blend weight, Dice smoothing, and the probability clamp applied before
/// logarithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub dice_smooth: f64,
    pub prob_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            dice_smooth: 1.0,
            prob_clamp: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "alpha must lie in [0,1], got {}",
                self.alpha
            )));
        }
        if self.dice_smooth <= 0.0 {
            return Err(Error::config("dice_smooth must be > 0"));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return Err(Error::config(format!(
                "prob_clamp must lie in (0, 0.5), got {}",
                self.prob_clamp
            )));
        }
        Ok(())
    }
}

fn check_pair(p: &Tensor, g: &Tensor) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::shape(format!(
            "prediction shape {} does not match target shape {}",
            p.shape(),
            g.shape()
        )));
    }
    if !g.is_binary() {
        return Err(Error::shape(
            "target mask must contain only 0.0 and 1.0",
        ));
    }
    Ok(())
}

/// Mean over all pixels of `-[g ln p + (1-g) ln(1-p)]`, with `p` clamped
/// into `[eps, 1-eps]` before the logarithms.
pub fn bce_loss(p: &Tensor, g: &Tensor, cfg: &LossConfig) -> Result<f64> {
    Ok(bce_loss_grad(p, g, cfg)?.0)
}

/// Loss value plus its gradient w.r.t. `p`. Clamped pixels get zero gradient.
pub fn bce_loss_grad(p: &Tensor, g: &Tensor, cfg: &LossConfig) -> Result<(f64, Tensor)> {
    check_pair(p, g)?;
    let eps = cfg.prob_clamp;
    let inv_n = 1.0 / (p.shape().count() as f64);
    let mut grad = Tensor::zeros(p.shape());
    let mut total = 0.0;
    for ((&pi, &gi), d) in p.data().iter().zip(g.data()).zip(grad.data_mut()) {
        let pc = pi.clamp(eps, 1.0 - eps);
        total += -(gi * pc.ln() + (1.0 - gi) * (1.0 - pc).ln());
        if pi > eps && pi < 1.0 - eps {
            *d = (pc - gi) / (pc * (1.0 - pc)) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Soft Dice loss: per batch item `1 - (2*sum(p*g)+eps) / (sum p + sum g + eps)`
/// over all of that item's pixels, averaged across the batch.
pub fn dice_loss(p: &Tensor, g: &Tensor, cfg: &LossConfig) -> Result<f64> {
    Ok(dice_loss_grad(p, g, cfg)?.0)
}

pub fn dice_loss_grad(p: &Tensor, g: &Tensor, cfg: &LossConfig) -> Result<(f64, Tensor)> {
    check_pair(p, g)?;
    let s = p.shape();
    let eps = cfg.dice_smooth;
    let item_len = s.c * s.h * s.w;
    let inv_batch = 1.0 / (s.n as f64);
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0;
    for n in 0..s.n {
        let pi = &p.data()[n * item_len..(n + 1) * item_len];
        let gi = &g.data()[n * item_len..(n + 1) * item_len];
        let mut inter = 0.0;
        let mut psum = 0.0;
        let mut gsum = 0.0;
        for (&a, &b) in pi.iter().zip(gi) {
            inter += a * b;
            psum += a;
            gsum += b;
        }
        let num = 2.0 * inter + eps;
        let den = psum + gsum + eps;
        total += 1.0 - num / den;
        let dslice = &mut grad.data_mut()[n * item_len..(n + 1) * item_len];
        for (d, &b) in dslice.iter_mut().zip(gi) {
            // d/dp of -(num/den): quotient rule.
            *d = (num - 2.0 * b * den) / (den * den) * inv_batch;
        }
    }
    Ok((total * inv_batch, grad))
}

/// `alpha * bce + (1 - alpha) * dice`.
pub fn total_loss(p: &Tensor, g: &Tensor, cfg: &LossConfig) -> Result<f64> {
    Ok(total_loss_grad(p, g, cfg)?.0)
}

pub fn total_loss_grad(p: &Tensor, g: &Tensor, cfg: &LossConfig) -> Result<(f64, Tensor)> {
    let (bce, bce_grad) = bce_loss_grad(p, g, cfg)?;
    let (dice, dice_grad) = dice_loss_grad(p, g, cfg)?;
    let a = cfg.alpha;
    let loss = a * bce + (1.0 - a) * dice;
    let mut grad = bce_grad;
    for (gd, &dd) in grad.data_mut().iter_mut().zip(dice_grad.data()) {
        *gd = a * *gd + (1.0 - a) * dd;
    }
    Ok((loss, grad))
}
