//! Channel-attention fusion of the two branch feature maps, the final 1x1
//! projection to a per-pixel probability map, and mask binarization.
//!
//! The attention gate computes, per batch item,
//! `sigmoid(W2 * relu(W1 * gap(Z)))` over the concatenated features `Z` and
//! rescales each channel by its gate value before the projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init;
use crate::ops::{
    concat_channels, conv2d, conv2d_backward, global_avg_pool, sigmoid, sigmoid_backward,
    sigmoid_scalar, split_channels, ConvSpec,
};
use crate::tensor::{ParamStore, Shape, Tensor};

/// Binarization threshold and attention bottleneck ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub threshold: f64,
    pub reduction: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            threshold: 0.5,
            reduction: 4,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, fused_channels: usize) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!(
                "threshold must lie strictly in (0,1), got {}",
                self.threshold
            )));
        }
        if self.reduction == 0 || fused_channels % self.reduction != 0 {
            return Err(Error::config(format!(
                "fused channel count {fused_channels} must be divisible by reduction {}",
                self.reduction
            )));
        }
        Ok(())
    }
}

/// The attention gate weights: `w1: (C/r, C)` and `w2: (C, C/r)`, stored as
/// `(rows, cols, 1, 1)` tensors.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w1: Tensor,
    pub w2: Tensor,
    pub channels: usize,
    pub reduction: usize,
}

impl AttentionParams {
    pub fn new(w1: Tensor, w2: Tensor) -> Result<Self> {
        let (s1, s2) = (w1.shape(), w2.shape());
        if s1.h != 1 || s1.w != 1 || s2.h != 1 || s2.w != 1 {
            return Err(Error::shape("attention weights must be matrices"));
        }
        if s1.n != s2.c || s1.c != s2.n {
            return Err(Error::shape(format!(
                "attention weight shapes disagree: w1 {} vs w2 {}",
                s1, s2
            )));
        }
        let channels = s1.c;
        if channels % s1.n != 0 {
            return Err(Error::shape(format!(
                "channel count {} not divisible by bottleneck {}",
                channels, s1.n
            )));
        }
        Ok(AttentionParams {
            channels,
            reduction: channels / s1.n,
            w1,
            w2,
        })
    }
}

const ATTN_W1: &str = "fusion.attn.w1";
const ATTN_W2: &str = "fusion.attn.w2";
const PROJECT_WEIGHT: &str = "fusion.project.weight";
const PROJECT_BIAS: &str = "fusion.project.bias";

pub fn init_params(
    params: &mut ParamStore,
    fused_channels: usize,
    cfg: &FusionConfig,
    rng: &mut impl Rng,
) {
    let hidden = fused_channels / cfg.reduction;
    params.insert(ATTN_W1, init::dense_weight(hidden, fused_channels, rng));
    params.insert(ATTN_W2, init::dense_weight(fused_channels, hidden, rng));
    params.insert(
        PROJECT_WEIGHT,
        init::conv_weight(1, fused_channels, 1, 1, rng),
    );
    params.insert(PROJECT_BIAS, init::zero_bias(1));
}

/// `out[r] = m[r][:] . v`, for a `(rows, cols, 1, 1)` matrix.
fn matvec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    let s = m.shape();
    let mut out = vec![0.0; s.n];
    for r in 0..s.n {
        let row = &m.data()[r * s.c..(r + 1) * s.c];
        out[r] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

/// `out[c] = m[:][c] . v` (transposed product).
fn matvec_t(m: &Tensor, v: &[f64]) -> Vec<f64> {
    let s = m.shape();
    let mut out = vec![0.0; s.c];
    for r in 0..s.n {
        let row = &m.data()[r * s.c..(r + 1) * s.c];
        for c in 0..s.c {
            out[c] += row[c] * v[r];
        }
    }
    out
}

/// Per-channel gate values in (0,1), shape `(n, C, 1, 1)`.
pub fn channel_attention(x: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let s = x.shape();
    if s.c != p.channels {
        return Err(Error::shape(format!(
            "attention expects {} channels, got {}",
            p.channels, s.c
        )));
    }
    let pooled = global_avg_pool(x);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
    for n in 0..s.n {
        let g = &pooled.data()[n * s.c..(n + 1) * s.c];
        let hidden: Vec<f64> = matvec(&p.w1, g).iter().map(|&v| v.max(0.0)).collect();
        let gate = matvec(&p.w2, &hidden);
        for (c, &z) in gate.iter().enumerate() {
            out.data_mut()[n * s.c + c] = sigmoid_scalar(z);
        }
    }
    Ok(out)
}

/// Intermediates of [`fuse`] kept for the backward pass.
pub struct FuseCache {
    seg_channels: usize,
    fused: Tensor,
    pooled: Tensor,
    hidden_pre: Vec<Vec<f64>>,
    gates: Tensor,
    scaled: Tensor,
    prob: Tensor,
}

/// Concatenates the branch features, gates each channel by the attention
/// value, projects to one channel with a 1x1 conv, and applies a sigmoid.
/// Output values all lie in (0,1).
pub fn fuse(
    f_seg: &Tensor,
    f_dl: &Tensor,
    params: &ParamStore,
    cfg: &FusionConfig,
) -> Result<(Tensor, FuseCache)> {
    let (ss, ds) = (f_seg.shape(), f_dl.shape());
    if ss.n != ds.n || ss.h != ds.h || ss.w != ds.w {
        return Err(Error::shape(format!(
            "branch outputs disagree spatially: {ss} vs {ds}"
        )));
    }
    let fused = concat_channels(f_seg, f_dl)?;
    let s = fused.shape();
    cfg.validate(s.c)?;

    let w1 = params.value(ATTN_W1)?;
    let w2 = params.value(ATTN_W2)?;
    let pooled = global_avg_pool(&fused);
    let mut gates = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
    let mut hidden_pre = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let g = &pooled.data()[n * s.c..(n + 1) * s.c];
        let pre = matvec(w1, g);
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let gate = matvec(w2, &hidden);
        for (c, &z) in gate.iter().enumerate() {
            gates.data_mut()[n * s.c + c] = sigmoid_scalar(z);
        }
        hidden_pre.push(pre);
    }

    let mut scaled = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let gate = gates.data()[n * s.c + c];
            for (dst, &src) in scaled.plane_mut(n, c).iter_mut().zip(fused.plane(n, c)) {
                *dst = gate * src;
            }
        }
    }

    let pw = params.value(PROJECT_WEIGHT)?;
    let pb = params.value(PROJECT_BIAS)?;
    let logits = conv2d(&scaled, pw, pb.data(), &ConvSpec::new(1, 1, 0))?;
    let prob = sigmoid(&logits);
    Ok((
        prob.clone(),
        FuseCache {
            seg_channels: ss.c,
            fused,
            pooled,
            hidden_pre,
            gates,
            scaled,
            prob,
        },
    ))
}

/// Backward of [`fuse`]: accumulates gradients for the attention matrices and
/// the projection, and returns gradients for the two branch inputs.
pub fn fuse_backward(
    grad_prob: &Tensor,
    cache: &FuseCache,
    params: &mut ParamStore,
    _cfg: &FusionConfig,
) -> Result<(Tensor, Tensor)> {
    let s = cache.fused.shape();
    let dlogits = sigmoid_backward(&cache.prob, grad_prob);
    let proj = conv2d_backward(
        &cache.scaled,
        params.value(PROJECT_WEIGHT)?,
        &ConvSpec::new(1, 1, 0),
        &dlogits,
    )?;
    params.accumulate_grad(PROJECT_WEIGHT, &proj.dw)?;
    crate::segnet::accumulate_bias(params, PROJECT_BIAS, &proj.db)?;
    let dscaled = proj.dx;

    // Scaling path: dZ += gate * dZ'; gate path: dgate = sum(dZ' * Z).
    let mut dfused = Tensor::zeros(s);
    let mut dgates = vec![0.0; s.n * s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let gate = cache.gates.data()[n * s.c + c];
            let dzp = dscaled.plane(n, c);
            let z = cache.fused.plane(n, c);
            let dz = dfused.plane_mut(n, c);
            let mut acc = 0.0;
            for i in 0..dz.len() {
                dz[i] = gate * dzp[i];
                acc += dzp[i] * z[i];
            }
            dgates[n * s.c + c] = acc;
        }
    }

    // Through the gate: sigmoid, dense W2, relu, dense W1, then gap.
    let w1 = params.value(ATTN_W1)?.clone();
    let w2 = params.value(ATTN_W2)?.clone();
    let hidden_dim = w1.shape().n;
    let mut dw1 = Tensor::zeros(w1.shape());
    let mut dw2 = Tensor::zeros(w2.shape());
    let inv_plane = 1.0 / (s.plane() as f64);
    for n in 0..s.n {
        let gate_vals = &cache.gates.data()[n * s.c..(n + 1) * s.c];
        let dsig: Vec<f64> = (0..s.c)
            .map(|c| dgates[n * s.c + c] * gate_vals[c] * (1.0 - gate_vals[c]))
            .collect();
        let hidden: Vec<f64> = cache.hidden_pre[n].iter().map(|&v| v.max(0.0)).collect();
        // dW2[c][h] += dsig[c] * hidden[h]
        for c in 0..s.c {
            for h in 0..hidden_dim {
                dw2.data_mut()[c * hidden_dim + h] += dsig[c] * hidden[h];
            }
        }
        let dhidden_act = matvec_t(&w2, &dsig);
        let dhidden: Vec<f64> = dhidden_act
            .iter()
            .zip(&cache.hidden_pre[n])
            .map(|(&g, &pre)| if pre > 0.0 { g } else { 0.0 })
            .collect();
        let g = &cache.pooled.data()[n * s.c..(n + 1) * s.c];
        for h in 0..hidden_dim {
            for c in 0..s.c {
                dw1.data_mut()[h * s.c + c] += dhidden[h] * g[c];
            }
        }
        let dpooled = matvec_t(&w1, &dhidden);
        // gap backward: spread evenly over the plane.
        for c in 0..s.c {
            let add = dpooled[c] * inv_plane;
            for v in dfused.plane_mut(n, c) {
                *v += add;
            }
        }
    }
    params.accumulate_grad(ATTN_W1, &dw1)?;
    params.accumulate_grad(ATTN_W2, &dw2)?;

    split_channels(&dfused, cache.seg_channels)
}

/// Hard mask: 1 where `prob >= threshold`, else 0.
pub fn binarize(prob: &Tensor, threshold: f64) -> Tensor {
    prob.map(|p| if p >= threshold { 1.0 } else { 0.0 })
}
