//! Data pipeline: tile I/O, resizing, augmentation, the synthetic scene
//! generator, and dataset manifests.

pub mod augment;
pub mod image_io;
pub mod manifest;
pub mod synth;

pub use augment::{apply_geom, augment, sample_transform, AugmentationConfig, GeomTransform};
pub use image_io::{load_mask, load_tile, save_mask, save_tile};
pub use manifest::{
    dataset_dirs, pair_paths, split_dataset, DatasetManifest, ManifestEntry, Split, MANIFEST_FILE,
};
pub use synth::{
    apply_speckle, render_clean, sample_geometry, scene_rng, synth_scene, Ellipse, SceneGeometry,
    SceneSpec, Wake,
};

use crate::error::Result;
use crate::ops::bilinear_resize;
use crate::tensor::Tensor;

/// Resamples a tile to `target x target` with the same half-pixel bilinear
/// convention as the upsampling operator; a no-op when already that size.
pub fn resize_tile(x: &Tensor, target: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.h == target && s.w == target {
        return Ok(x.clone());
    }
    bilinear_resize(x, target, target)
}
