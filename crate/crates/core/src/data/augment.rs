//! Training-time augmentation: shared quarter-turn rotations and flips on
//! image and mask, plus an image-only contrast jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub rotate_90s: bool,
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub contrast_range: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rotate_90s: true,
            hflip_p: 0.5,
            vflip_p: 0.5,
            contrast_range: (0.9, 1.1),
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("hflip_p", self.hflip_p), ("vflip_p", self.vflip_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        let (lo, hi) = self.contrast_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!(
                "contrast_range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    /// Identity configuration (all transforms off).
    pub fn disabled() -> Self {
        AugmentationConfig {
            rotate_90s: false,
            hflip_p: 0.0,
            vflip_p: 0.0,
            contrast_range: (1.0, 1.0),
        }
    }
}

/// A sampled geometric transform, applied identically to image and mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeomTransform {
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl GeomTransform {
    pub const IDENTITY: GeomTransform = GeomTransform {
        quarter_turns: 0,
        hflip: false,
        vflip: false,
    };
}

/// Draws a geometric transform and a contrast multiplier.
pub fn sample_transform(cfg: &AugmentationConfig, rng: &mut impl Rng) -> (GeomTransform, f64) {
    let quarter_turns = if cfg.rotate_90s {
        rng.random_range(0..4u8)
    } else {
        0
    };
    let hflip = rng.random_bool(cfg.hflip_p);
    let vflip = rng.random_bool(cfg.vflip_p);
    let (lo, hi) = cfg.contrast_range;
    let contrast = if lo == hi { lo } else { rng.random_range(lo..hi) };
    (
        GeomTransform {
            quarter_turns,
            hflip,
            vflip,
        },
        contrast,
    )
}

fn rotate90(x: &Tensor) -> Tensor {
    // (y, x) -> (x, h-1-y): 90 degrees counter-clockwise image rotation.
    let s = x.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.w, s.h));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    *out.at_mut(n, c, s.w - 1 - xx, y) = x.at(n, c, y, xx);
                }
            }
        }
    }
    out
}

fn flip_h(x: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    *out.at_mut(n, c, y, s.w - 1 - xx) = x.at(n, c, y, xx);
                }
            }
        }
    }
    out
}

fn flip_v(x: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                out.plane_mut(n, c)[(s.h - 1 - y) * s.w..(s.h - y) * s.w]
                    .copy_from_slice(&x.plane(n, c)[y * s.w..(y + 1) * s.w]);
            }
        }
    }
    out
}

/// Applies rotations then flips; exact (no interpolation), so binary masks
/// stay binary.
pub fn apply_geom(x: &Tensor, t: &GeomTransform) -> Tensor {
    let mut out = x.clone();
    for _ in 0..t.quarter_turns % 4 {
        out = rotate90(&out);
    }
    if t.hflip {
        out = flip_h(&out);
    }
    if t.vflip {
        out = flip_v(&out);
    }
    out
}

/// Samples one transform and applies it: geometry to both tensors, contrast
/// (then clamp to [0,1]) to the image only.
pub fn augment(
    image: &Tensor,
    mask: &Tensor,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Result<(Tensor, Tensor)> {
    let (si, sm) = (image.shape(), mask.shape());
    if si.h != sm.h || si.w != sm.w {
        return Err(Error::shape(format!(
            "image {si} and mask {sm} disagree spatially"
        )));
    }
    cfg.validate()?;
    let (geom, contrast) = sample_transform(cfg, rng);
    let image_out = apply_geom(image, &geom).map(|v| (v * contrast).clamp(0.0, 1.0));
    let mask_out = apply_geom(mask, &geom);
    Ok((image_out, mask_out))
}
