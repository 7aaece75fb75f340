//! The context branch: strided entry convolutions, a pyramid of parallel
//! dilated convolutions plus an image-level pooled path, and bilinear
//! upsampling back to input resolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init;
use crate::ops::{
    bilinear_resize_backward, bilinear_upsample, broadcast_spatial, broadcast_spatial_backward,
    conv2d, conv2d_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    ConvSpec,
};
use crate::tensor::{ParamStore, Shape, Tensor};

/// Dilation rates and widths of the pyramid branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsppConfig {
    pub in_channels: usize,
    pub dilation_rates: Vec<usize>,
    pub branch_channels: usize,
    pub entry_channels: usize,
    pub output_stride: usize,
    pub out_channels: usize,
}

impl Default for AsppConfig {
    fn default() -> Self {
        AsppConfig {
            in_channels: 1,
            dilation_rates: vec![1, 2, 4],
            branch_channels: 16,
            entry_channels: 32,
            output_stride: 4,
            out_channels: 16,
        }
    }
}

impl AsppConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dilation_rates.is_empty() {
            return Err(Error::config("aspp needs at least one dilation rate"));
        }
        if self.dilation_rates.iter().any(|&r| r == 0) {
            return Err(Error::config("aspp dilation rates must be >= 1"));
        }
        let mut sorted = self.dilation_rates.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.dilation_rates.len() {
            return Err(Error::config("aspp dilation rates must be distinct"));
        }
        if !self.output_stride.is_power_of_two() || self.output_stride < 2 {
            return Err(Error::config(format!(
                "output_stride must be a power of 2 >= 2, got {}",
                self.output_stride
            )));
        }
        if self.in_channels == 0
            || self.branch_channels == 0
            || self.entry_channels == 0
            || self.out_channels == 0
        {
            return Err(Error::config("aspp channel counts must be >= 1"));
        }
        Ok(())
    }

    pub fn entry_layers(&self) -> usize {
        self.output_stride.trailing_zeros() as usize
    }

    /// Output channels of entry layer `i` (0-based); the last reaches
    /// `entry_channels`, earlier layers halve down from it.
    fn entry_out(&self, i: usize) -> usize {
        let l = self.entry_layers();
        (self.entry_channels >> (l - 1 - i)).max(1)
    }

    fn entry_in(&self, i: usize) -> usize {
        if i == 0 {
            self.in_channels
        } else {
            self.entry_out(i - 1)
        }
    }
}

fn entry_weight(i: usize) -> String {
    format!("deeplab.entry{i}.weight")
}
fn entry_bias(i: usize) -> String {
    format!("deeplab.entry{i}.bias")
}
fn path_weight(i: usize) -> String {
    format!("deeplab.aspp.path{i}.weight")
}
fn path_bias(i: usize) -> String {
    format!("deeplab.aspp.path{i}.bias")
}
const IMAGE_WEIGHT: &str = "deeplab.aspp.image.weight";
const IMAGE_BIAS: &str = "deeplab.aspp.image.bias";
const PROJECT_WEIGHT: &str = "deeplab.aspp.project.weight";
const PROJECT_BIAS: &str = "deeplab.aspp.project.bias";

pub fn init_params(params: &mut ParamStore, cfg: &AsppConfig, rng: &mut impl Rng) {
    for i in 0..cfg.entry_layers() {
        params.insert(
            entry_weight(i),
            init::conv_weight(cfg.entry_out(i), cfg.entry_in(i), 3, 3, rng),
        );
        params.insert(entry_bias(i), init::zero_bias(cfg.entry_out(i)));
    }
    for i in 0..cfg.dilation_rates.len() {
        params.insert(
            path_weight(i),
            init::conv_weight(cfg.branch_channels, cfg.entry_channels, 3, 3, rng),
        );
        params.insert(path_bias(i), init::zero_bias(cfg.branch_channels));
    }
    params.insert(
        IMAGE_WEIGHT.to_string(),
        init::conv_weight(cfg.branch_channels, cfg.entry_channels, 1, 1, rng),
    );
    params.insert(IMAGE_BIAS.to_string(), init::zero_bias(cfg.branch_channels));
    let concat_c = (cfg.dilation_rates.len() + 1) * cfg.branch_channels;
    params.insert(
        PROJECT_WEIGHT.to_string(),
        init::conv_weight(cfg.out_channels, concat_c, 1, 1, rng),
    );
    params.insert(PROJECT_BIAS.to_string(), init::zero_bias(cfg.out_channels));
}

struct ConvStage {
    input: Tensor,
    pre_act: Tensor,
}

pub struct EncodeCache {
    stages: Vec<ConvStage>,
}

/// Entry stem: log2(output_stride) stride-2 conv+relu layers.
pub fn encode(
    x: &Tensor,
    params: &ParamStore,
    cfg: &AsppConfig,
) -> Result<(Tensor, EncodeCache)> {
    let s = x.shape();
    if s.h % cfg.output_stride != 0 || s.w % cfg.output_stride != 0 {
        return Err(Error::shape(format!(
            "deeplab needs spatial dims divisible by output_stride {}, got {}x{}",
            cfg.output_stride, s.h, s.w
        )));
    }
    if s.c != cfg.in_channels {
        return Err(Error::shape(format!(
            "deeplab expects {} input channels, got {}",
            cfg.in_channels, s.c
        )));
    }
    let spec = ConvSpec::new(2, 1, 1);
    let mut cur = x.clone();
    let mut stages = Vec::with_capacity(cfg.entry_layers());
    for i in 0..cfg.entry_layers() {
        let w = params.value(&entry_weight(i))?;
        let b = params.value(&entry_bias(i))?;
        let pre = conv2d(&cur, w, b.data(), &spec)?;
        let act = relu(&pre);
        let input = std::mem::replace(&mut cur, act);
        stages.push(ConvStage { input, pre_act: pre });
    }
    Ok((cur, EncodeCache { stages }))
}

fn encode_backward(
    grad: &Tensor,
    cache: &EncodeCache,
    params: &mut ParamStore,
    _cfg: &AsppConfig,
) -> Result<Tensor> {
    let spec = ConvSpec::new(2, 1, 1);
    let mut g = grad.clone();
    for (i, stage) in cache.stages.iter().enumerate().rev() {
        let dpre = relu_backward(&stage.pre_act, &g);
        let grads = conv2d_backward(&stage.input, params.value(&entry_weight(i))?, &spec, &dpre)?;
        params.accumulate_grad(&entry_weight(i), &grads.dw)?;
        crate::segnet::accumulate_bias(params, &entry_bias(i), &grads.db)?;
        g = grads.dx;
    }
    Ok(g)
}

pub struct AsppCache {
    input: Tensor,
    path_pre: Vec<Tensor>,
    pooled: Tensor,
    image_pre: Tensor,
    concat: Tensor,
}

/// Pyramid block: one 3x3 conv per dilation rate (padding = rate) plus an
/// image-level pooled path, all relu-activated at `branch_channels`, then
/// concatenated and projected to `out_channels` by a 1x1 conv.
pub fn aspp(x: &Tensor, params: &ParamStore, cfg: &AsppConfig) -> Result<(Tensor, AsppCache)> {
    let s = x.shape();
    let mut path_pre = Vec::with_capacity(cfg.dilation_rates.len());
    let mut concat = Tensor::zeros(Shape::new(
        s.n,
        (cfg.dilation_rates.len() + 1) * cfg.branch_channels,
        s.h,
        s.w,
    ));

    for (i, &rate) in cfg.dilation_rates.iter().enumerate() {
        let w = params.value(&path_weight(i))?;
        let b = params.value(&path_bias(i))?;
        let pre = conv2d(x, w, b.data(), &ConvSpec::new(1, rate, rate))?;
        let act = relu(&pre);
        for n in 0..s.n {
            for c in 0..cfg.branch_channels {
                concat
                    .plane_mut(n, i * cfg.branch_channels + c)
                    .copy_from_slice(act.plane(n, c));
            }
        }
        path_pre.push(pre);
    }

    let pooled = global_avg_pool(x);
    let iw = params.value(IMAGE_WEIGHT)?;
    let ib = params.value(IMAGE_BIAS)?;
    let image_pre = conv2d(&pooled, iw, ib.data(), &ConvSpec::new(1, 1, 0))?;
    let image_act = relu(&image_pre);
    // The pooled value is spatially constant, so constant expansion equals
    // any interpolating upsample here.
    let image_full = broadcast_spatial(&image_act, s.h, s.w)?;
    let image_base = cfg.dilation_rates.len() * cfg.branch_channels;
    for n in 0..s.n {
        for c in 0..cfg.branch_channels {
            concat
                .plane_mut(n, image_base + c)
                .copy_from_slice(image_full.plane(n, c));
        }
    }

    let pw = params.value(PROJECT_WEIGHT)?;
    let pb = params.value(PROJECT_BIAS)?;
    let out = conv2d(&concat, pw, pb.data(), &ConvSpec::new(1, 1, 0))?;
    Ok((
        out,
        AsppCache {
            input: x.clone(),
            path_pre,
            pooled,
            image_pre,
            concat,
        },
    ))
}

fn aspp_backward(
    grad: &Tensor,
    cache: &AsppCache,
    params: &mut ParamStore,
    cfg: &AsppConfig,
) -> Result<Tensor> {
    let s = cache.input.shape();
    let bc = cfg.branch_channels;

    let proj = conv2d_backward(
        &cache.concat,
        params.value(PROJECT_WEIGHT)?,
        &ConvSpec::new(1, 1, 0),
        grad,
    )?;
    params.accumulate_grad(PROJECT_WEIGHT, &proj.dw)?;
    crate::segnet::accumulate_bias(params, PROJECT_BIAS, &proj.db)?;
    let dconcat = proj.dx;

    let mut dx = Tensor::zeros(s);

    for (i, &rate) in cfg.dilation_rates.iter().enumerate() {
        let mut dact = Tensor::zeros(Shape::new(s.n, bc, s.h, s.w));
        for n in 0..s.n {
            for c in 0..bc {
                dact.plane_mut(n, c)
                    .copy_from_slice(dconcat.plane(n, i * bc + c));
            }
        }
        let dpre = relu_backward(&cache.path_pre[i], &dact);
        let grads = conv2d_backward(
            &cache.input,
            params.value(&path_weight(i))?,
            &ConvSpec::new(1, rate, rate),
            &dpre,
        )?;
        params.accumulate_grad(&path_weight(i), &grads.dw)?;
        crate::segnet::accumulate_bias(params, &path_bias(i), &grads.db)?;
        for (acc, g) in dx.data_mut().iter_mut().zip(grads.dx.data()) {
            *acc += g;
        }
    }

    let image_base = cfg.dilation_rates.len() * bc;
    let mut dimage_full = Tensor::zeros(Shape::new(s.n, bc, s.h, s.w));
    for n in 0..s.n {
        for c in 0..bc {
            dimage_full
                .plane_mut(n, c)
                .copy_from_slice(dconcat.plane(n, image_base + c));
        }
    }
    let dimage_act = broadcast_spatial_backward(&dimage_full);
    let dimage_pre = relu_backward(&cache.image_pre, &dimage_act);
    let grads = conv2d_backward(
        &cache.pooled,
        params.value(IMAGE_WEIGHT)?,
        &ConvSpec::new(1, 1, 0),
        &dimage_pre,
    )?;
    params.accumulate_grad(IMAGE_WEIGHT, &grads.dw)?;
    crate::segnet::accumulate_bias(params, IMAGE_BIAS, &grads.db)?;
    let dpooled = global_avg_pool_backward(&grads.dx, s.h, s.w);
    for (acc, g) in dx.data_mut().iter_mut().zip(dpooled.data()) {
        *acc += g;
    }

    Ok(dx)
}

pub struct DeeplabCache {
    enc: EncodeCache,
    aspp: AsppCache,
    reduced_h: usize,
    reduced_w: usize,
}

/// Full branch: entry stem, pyramid, then bilinear upsample back to input
/// resolution with `out_channels` channels.
pub fn forward(
    x: &Tensor,
    params: &ParamStore,
    cfg: &AsppConfig,
) -> Result<(Tensor, DeeplabCache)> {
    let (reduced, enc) = encode(x, params, cfg)?;
    let rs = reduced.shape();
    let (features, aspp_cache) = aspp(&reduced, params, cfg)?;
    let out = bilinear_upsample(&features, cfg.output_stride)?;
    Ok((
        out,
        DeeplabCache {
            enc,
            aspp: aspp_cache,
            reduced_h: rs.h,
            reduced_w: rs.w,
        },
    ))
}

/// Backward through upsample, pyramid, and stem; returns the input gradient.
pub fn backward(
    grad_out: &Tensor,
    cache: &DeeplabCache,
    params: &mut ParamStore,
    cfg: &AsppConfig,
) -> Result<Tensor> {
    let dfeat = bilinear_resize_backward(grad_out, cache.reduced_h, cache.reduced_w);
    let dreduced = aspp_backward(&dfeat, &cache.aspp, params, cfg)?;
    encode_backward(&dreduced, &cache.enc, params, cfg)
}
