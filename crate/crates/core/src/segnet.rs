//! The fine-detail branch: a convolutional encoder that records max-pooling
//! argmax indices and a mirrored decoder that reuses them for exact,
//! interpolation-free upsampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init;
use crate::ops::{
    conv2d, conv2d_backward, maxpool2x2, maxpool2x2_backward, maxunpool2x2,
    maxunpool2x2_backward, relu, relu_backward, ConvSpec, PoolIndexMap,
};
use crate::tensor::{ParamStore, Tensor};

/// Widths and kernel size of the encoder-decoder branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegNetConfig {
    pub in_channels: usize,
    pub stage_channels: Vec<usize>,
    pub kernel_size: usize,
    pub out_channels: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        SegNetConfig {
            in_channels: 1,
            stage_channels: vec![16, 32, 64],
            kernel_size: 3,
            out_channels: 16,
        }
    }
}

impl SegNetConfig {
    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    /// Input spatial dims must divide by this (one halving per stage).
    pub fn required_divisor(&self) -> usize {
        1 << self.stages()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(Error::config("segnet needs at least one stage"));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::config(format!(
                "segnet kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("segnet channel counts must be >= 1"));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::config("segnet stage channels must be >= 1"));
        }
        Ok(())
    }

    fn conv_spec(&self) -> ConvSpec {
        ConvSpec::same(self.kernel_size)
    }

    /// Input channels of encoder stage `i`.
    fn enc_in(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            self.stage_channels[i - 1]
        }
    }

    /// Output channels of decoder stage `i` (stages run in reverse order).
    fn dec_out(&self, i: usize) -> usize {
        if i == 0 {
            self.out_channels
        } else {
            self.stage_channels[i - 1]
        }
    }
}

fn enc_weight(i: usize) -> String {
    format!("segnet.enc{i}.weight")
}
fn enc_bias(i: usize) -> String {
    format!("segnet.enc{i}.bias")
}
fn dec_weight(i: usize) -> String {
    format!("segnet.dec{i}.weight")
}
fn dec_bias(i: usize) -> String {
    format!("segnet.dec{i}.bias")
}

pub fn init_params(params: &mut ParamStore, cfg: &SegNetConfig, rng: &mut impl Rng) {
    let k = cfg.kernel_size;
    for i in 0..cfg.stages() {
        let cout = cfg.stage_channels[i];
        params.insert(enc_weight(i), init::conv_weight(cout, cfg.enc_in(i), k, k, rng));
        params.insert(enc_bias(i), init::zero_bias(cout));
    }
    for i in (0..cfg.stages()).rev() {
        let cin = cfg.stage_channels[i];
        params.insert(dec_weight(i), init::conv_weight(cfg.dec_out(i), cin, k, k, rng));
        params.insert(dec_bias(i), init::zero_bias(cfg.dec_out(i)));
    }
}

fn check_divisible(x: &Tensor, cfg: &SegNetConfig) -> Result<()> {
    let s = x.shape();
    let div = cfg.required_divisor();
    if s.h % div != 0 || s.w % div != 0 {
        return Err(Error::shape(format!(
            "segnet with {} stages needs spatial dims divisible by {div}, got {}x{}",
            cfg.stages(),
            s.h,
            s.w
        )));
    }
    if s.c != cfg.in_channels {
        return Err(Error::shape(format!(
            "segnet expects {} input channels, got {}",
            cfg.in_channels, s.c
        )));
    }
    Ok(())
}

/// Per-stage intermediates kept for the backward pass.
struct ConvStage {
    input: Tensor,
    pre_act: Tensor,
}

/// Everything the branch backward pass needs.
pub struct SegNetCache {
    enc: Vec<ConvStage>,
    indices: Vec<PoolIndexMap>,
    dec: Vec<ConvStage>, // in decode execution order (deepest stage first)
}

fn encode_impl(
    x: &Tensor,
    params: &ParamStore,
    cfg: &SegNetConfig,
) -> Result<(Tensor, Vec<PoolIndexMap>, Vec<ConvStage>)> {
    check_divisible(x, cfg)?;
    let spec = cfg.conv_spec();
    let mut cur = x.clone();
    let mut indices = Vec::with_capacity(cfg.stages());
    let mut stages = Vec::with_capacity(cfg.stages());
    for i in 0..cfg.stages() {
        let w = params.value(&enc_weight(i))?;
        let b = params.value(&enc_bias(i))?;
        let pre = conv2d(&cur, w, b.data(), &spec)?;
        let act = relu(&pre);
        let (pooled, idx) = maxpool2x2(&act)?;
        stages.push(ConvStage {
            input: cur,
            pre_act: pre,
        });
        indices.push(idx);
        cur = pooled;
    }
    Ok((cur, indices, stages))
}

/// Encoder: per stage conv -> relu -> 2x2 max-pool, recording one index map
/// per stage in encoding order.
pub fn encode(
    x: &Tensor,
    params: &ParamStore,
    cfg: &SegNetConfig,
) -> Result<(Tensor, Vec<PoolIndexMap>)> {
    let (bottleneck, indices, _) = encode_impl(x, params, cfg)?;
    Ok((bottleneck, indices))
}

fn decode_impl(
    bottleneck: &Tensor,
    indices: &[PoolIndexMap],
    params: &ParamStore,
    cfg: &SegNetConfig,
) -> Result<(Tensor, Vec<ConvStage>)> {
    if indices.len() != cfg.stages() {
        return Err(Error::shape(format!(
            "index stack depth {} does not match stage count {}",
            indices.len(),
            cfg.stages()
        )));
    }
    let spec = cfg.conv_spec();
    let mut cur = bottleneck.clone();
    let mut stages = Vec::with_capacity(cfg.stages());
    for i in (0..cfg.stages()).rev() {
        let unpooled = maxunpool2x2(&cur, &indices[i])?;
        let w = params.value(&dec_weight(i))?;
        let b = params.value(&dec_bias(i))?;
        let pre = conv2d(&unpooled, w, b.data(), &spec)?;
        cur = relu(&pre);
        stages.push(ConvStage {
            input: unpooled,
            pre_act: pre,
        });
    }
    Ok((cur, stages))
}

/// Decoder: per stage (deepest first) index-driven unpool -> conv -> relu;
/// the last conv maps to `out_channels` at full input resolution.
pub fn decode(
    bottleneck: &Tensor,
    indices: &[PoolIndexMap],
    params: &ParamStore,
    cfg: &SegNetConfig,
) -> Result<Tensor> {
    let (out, _) = decode_impl(bottleneck, indices, params, cfg)?;
    Ok(out)
}

/// Full branch forward; the cache feeds [`backward`].
pub fn forward(
    x: &Tensor,
    params: &ParamStore,
    cfg: &SegNetConfig,
) -> Result<(Tensor, SegNetCache)> {
    let (bottleneck, indices, enc) = encode_impl(x, params, cfg)?;
    let (out, dec) = decode_impl(&bottleneck, &indices, params, cfg)?;
    Ok((out, SegNetCache { enc, indices, dec }))
}

/// Backward through decoder and encoder; accumulates parameter gradients into
/// `params` and returns the gradient w.r.t. the branch input.
pub fn backward(
    grad_out: &Tensor,
    cache: &SegNetCache,
    params: &mut ParamStore,
    cfg: &SegNetConfig,
) -> Result<Tensor> {
    let spec = cfg.conv_spec();
    let mut grad = grad_out.clone();

    // Decoder stages ran deepest-first; walk them in reverse (shallowest first).
    for (pos, stage) in cache.dec.iter().enumerate().rev() {
        let stage_idx = cfg.stages() - 1 - pos;
        let dpre = relu_backward(&stage.pre_act, &grad);
        let grads = conv2d_backward(&stage.input, params.value(&dec_weight(stage_idx))?, &spec, &dpre)?;
        params.accumulate_grad(&dec_weight(stage_idx), &grads.dw)?;
        accumulate_bias(params, &dec_bias(stage_idx), &grads.db)?;
        grad = maxunpool2x2_backward(&grads.dx, &cache.indices[stage_idx])?;
    }

    for i in (0..cfg.stages()).rev() {
        let stage = &cache.enc[i];
        let dact = maxpool2x2_backward(&grad, &cache.indices[i])?;
        let dpre = relu_backward(&stage.pre_act, &dact);
        let grads = conv2d_backward(&stage.input, params.value(&enc_weight(i))?, &spec, &dpre)?;
        params.accumulate_grad(&enc_weight(i), &grads.dw)?;
        accumulate_bias(params, &enc_bias(i), &grads.db)?;
        grad = grads.dx;
    }
    Ok(grad)
}

/// Adds a bias gradient vector into its `(1, cout, 1, 1)` store entry.
pub(crate) fn accumulate_bias(params: &mut ParamStore, name: &str, db: &[f64]) -> Result<()> {
    let t = Tensor::from_vec(crate::tensor::Shape::new(1, db.len(), 1, 1), db.to_vec())?;
    params.accumulate_grad(name, &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &SegNetConfig, seed: u64) -> ParamStore {
        let mut params = ParamStore::new();
        init_params(&mut params, cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        params
    }

    #[test]
    fn three_stage_shapes_on_64() {
        let cfg = SegNetConfig::default();
        let params = setup(&cfg, 1);
        let x = Tensor::zeros(Shape::new(1, 1, 64, 64));
        let (bottleneck, indices) = encode(&x, &params, &cfg).unwrap();
        assert_eq!(bottleneck.shape(), Shape::new(1, 64, 8, 8));
        assert_eq!(indices.len(), 3);
        assert_eq!(indices[0].shape(), Shape::new(1, 16, 32, 32));
        assert_eq!(indices[1].shape(), Shape::new(1, 32, 16, 16));
        assert_eq!(indices[2].shape(), Shape::new(1, 64, 8, 8));
        let out = decode(&bottleneck, &indices, &params, &cfg).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 16, 64, 64));
    }

    #[test]
    fn zero_input_with_zero_biases_stays_zero() {
        let cfg = SegNetConfig::default();
        let params = setup(&cfg, 2); // biases start at zero
        let x = Tensor::zeros(Shape::new(1, 1, 16, 16));
        let (bottleneck, indices) = encode(&x, &params, &cfg).unwrap();
        assert!(bottleneck.data().iter().all(|&v| v == 0.0));
        let out = decode(&bottleneck, &indices, &params, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indivisible_spatial_dims() {
        let cfg = SegNetConfig::default();
        let params = setup(&cfg, 3);
        let x = Tensor::zeros(Shape::new(1, 1, 20, 20)); // 20 % 8 != 0
        assert!(encode(&x, &params, &cfg).is_err());
    }

    #[test]
    fn decode_rejects_wrong_stack_depth() {
        let cfg = SegNetConfig::default();
        let params = setup(&cfg, 4);
        let x = Tensor::zeros(Shape::new(1, 1, 16, 16));
        let (bottleneck, indices) = encode(&x, &params, &cfg).unwrap();
        assert!(decode(&bottleneck, &indices[..2], &params, &cfg).is_err());
    }

    #[test]
    fn encoder_index_maps_match_per_stage_pooling() {
        let cfg = SegNetConfig {
            stage_channels: vec![3, 4],
            ..SegNetConfig::default()
        };
        let params = setup(&cfg, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = Shape::new(1, 1, 8, 8);
        let data: Vec<f64> = (0..s.count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(s, data).unwrap();

        let (_, indices) = encode(&x, &params, &cfg).unwrap();

        // Recompute each stage by hand and pool its activation independently.
        let spec = ConvSpec::same(cfg.kernel_size);
        let mut cur = x;
        for (i, idx) in indices.iter().enumerate() {
            let w = params.value(&enc_weight(i)).unwrap();
            let b = params.value(&enc_bias(i)).unwrap();
            let act = relu(&conv2d(&cur, w, b.data(), &spec).unwrap());
            let (pooled, oracle_idx) = maxpool2x2(&act).unwrap();
            assert_eq!(idx.indices(), oracle_idx.indices(), "stage {i}");
            cur = pooled;
        }
    }

    #[test]
    fn unpooled_nonzeros_only_at_recorded_positions() {
        let cfg = SegNetConfig {
            stage_channels: vec![2],
            ..SegNetConfig::default()
        };
        let params = setup(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = Shape::new(1, 1, 6, 6);
        let data: Vec<f64> = (0..s.count()).map(|_| rng.random_range(0.1..1.0)).collect();
        let x = Tensor::from_vec(s, data).unwrap();
        let (bottleneck, indices) = encode(&x, &params, &cfg).unwrap();
        let unpooled = maxunpool2x2(&bottleneck, &indices[0]).unwrap();
        let os = unpooled.shape();
        for c in 0..os.c {
            let plane = unpooled.plane(0, c);
            let plane_idx: Vec<usize> = indices[0]
                .indices()
                .iter()
                .skip(c * indices[0].shape().plane())
                .take(indices[0].shape().plane())
                .copied()
                .collect();
            for (pos, &v) in plane.iter().enumerate() {
                if !plane_idx.contains(&pos) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
}
