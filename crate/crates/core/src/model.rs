//! The full two-branch segmentation network: both branches run independently
//! on the same input and their feature maps meet in the attention fusion
//! head, which emits a per-pixel spill probability map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deeplab::{self, AsppConfig, DeeplabCache};
use crate::error::{Error, Result};
use crate::fusion::{self, binarize, FuseCache, FusionConfig};
use crate::segnet::{self, SegNetCache, SegNetConfig};
use crate::seeds;
use crate::tensor::{ParamStore, Shape, Tensor};

/// Architecture description: both branch configs plus the fusion head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub segnet: SegNetConfig,
    pub deeplab: AsppConfig,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    pub fn fused_channels(&self) -> usize {
        self.segnet.out_channels + self.deeplab.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.segnet.validate()?;
        self.deeplab.validate()?;
        self.fusion.validate(self.fused_channels())?;
        if self.segnet.in_channels != self.deeplab.in_channels {
            return Err(Error::config(format!(
                "branch input channel counts disagree: segnet {} vs deeplab {}",
                self.segnet.in_channels, self.deeplab.in_channels
            )));
        }
        Ok(())
    }

    /// Spatial dims of any input must be divisible by this.
    pub fn input_divisor(&self) -> usize {
        let a = self.segnet.required_divisor();
        let b = self.deeplab.output_stride;
        // Both are powers of two.
        a.max(b)
    }
}

/// Trainable network: configuration plus parameter store.
#[derive(Clone, Debug)]
pub struct FusionNet {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

pub struct ForwardCache {
    segnet: SegNetCache,
    deeplab: DeeplabCache,
    fuse: FuseCache,
}

impl FusionNet {
    /// Builds a network with freshly initialized parameters.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, seeds::INIT));
        segnet::init_params(&mut params, &cfg.segnet, &mut rng);
        deeplab::init_params(&mut params, &cfg.deeplab, &mut rng);
        fusion::init_params(&mut params, cfg.fused_channels(), &cfg.fusion, &mut rng);
        Ok(FusionNet { cfg, params })
    }

    /// Rebuilds a network from existing parameters (checkpoint load).
    pub fn from_parts(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        // The parameter set must match what a fresh init would create.
        let probe = FusionNet::new(cfg.clone(), 0)?;
        let expect = probe.params.names();
        let got = params.names();
        if expect != got {
            return Err(Error::data(format!(
                "parameter names do not match the architecture: expected {} entries, got {}",
                expect.len(),
                got.len()
            )));
        }
        for name in &expect {
            let a = probe.params.value(name)?.shape();
            let b = params.value(name)?.shape();
            if a != b {
                return Err(Error::data(format!(
                    "parameter `{name}` has shape {b}, architecture expects {a}"
                )));
            }
        }
        Ok(FusionNet { cfg, params })
    }

    pub fn validate_input(&self, shape: Shape) -> Result<()> {
        let div = self.cfg.input_divisor();
        if shape.h % div != 0 || shape.w % div != 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::shape(format!(
                "input spatial dims must be divisible by {div}, got {}x{}",
                shape.h, shape.w
            )));
        }
        if shape.c != self.cfg.segnet.in_channels {
            return Err(Error::shape(format!(
                "input must have {} channels, got {}",
                self.cfg.segnet.in_channels, shape.c
            )));
        }
        Ok(())
    }

    /// Probability map in (0,1) with shape `(n, 1, h, w)`, plus the cache
    /// needed by [`FusionNet::backward`].
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.validate_input(x.shape())?;
        let (f_seg, seg_cache) = segnet::forward(x, &self.params, &self.cfg.segnet)?;
        let (f_dl, dl_cache) = deeplab::forward(x, &self.params, &self.cfg.deeplab)?;
        let (prob, fuse_cache) = fusion::fuse(&f_seg, &f_dl, &self.params, &self.cfg.fusion)?;
        prob.ensure_finite("fusion output")?;
        Ok((
            prob,
            ForwardCache {
                segnet: seg_cache,
                deeplab: dl_cache,
                fuse: fuse_cache,
            },
        ))
    }

    /// Accumulates parameter gradients for `d(loss)/d(prob)` and returns the
    /// gradient w.r.t. the input image.
    pub fn backward(&mut self, grad_prob: &Tensor, cache: &ForwardCache) -> Result<Tensor> {
        let (d_seg, d_dl) =
            fusion::fuse_backward(grad_prob, &cache.fuse, &mut self.params, &self.cfg.fusion)?;
        let dx_seg = segnet::backward(&d_seg, &cache.segnet, &mut self.params, &self.cfg.segnet)?;
        let dx_dl = deeplab::backward(&d_dl, &cache.deeplab, &mut self.params, &self.cfg.deeplab)?;
        let mut dx = dx_seg;
        for (a, b) in dx.data_mut().iter_mut().zip(dx_dl.data()) {
            *a += b;
        }
        Ok(dx)
    }

    /// Probability map and thresholded binary mask for one input.
    pub fn predict(&self, x: &Tensor, threshold: f64) -> Result<(Tensor, Tensor)> {
        let (prob, _) = self.forward(x)?;
        let mask = binarize(&prob, threshold);
        Ok((prob, mask))
    }
}
