//! Global-intensity threshold baseline: Otsu's method over a 256-bin
//! histogram, marking dark pixels as spill. Used as the reference the trained
//! model must beat on look-alike scenes.

use crate::tensor::Tensor;

/// Otsu threshold over intensities in [0,1], maximizing between-class
/// variance on a 256-bin histogram.
pub fn otsu_threshold(image: &Tensor) -> f64 {
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    for &v in image.data() {
        let bin = ((v.clamp(0.0, 1.0)) * (BINS as f64 - 1.0)).round() as usize;
        hist[bin] += 1;
    }
    let total = image.shape().count() as f64;
    let mut sum_all = 0.0;
    for (i, &h) in hist.iter().enumerate() {
        sum_all += i as f64 * h as f64;
    }

    let mut best_t = 0;
    let mut best_var = -1.0;
    let mut weight_bg = 0.0;
    let mut sum_bg = 0.0;
    for t in 0..BINS {
        weight_bg += hist[t] as f64;
        if weight_bg == 0.0 {
            continue;
        }
        let weight_fg = total - weight_bg;
        if weight_fg == 0.0 {
            break;
        }
        sum_bg += t as f64 * hist[t] as f64;
        let mean_bg = sum_bg / weight_bg;
        let mean_fg = (sum_all - sum_bg) / weight_fg;
        let between = weight_bg * weight_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
        if between > best_var {
            best_var = between;
            best_t = t;
        }
    }
    (best_t as f64 + 0.5) / (BINS as f64 - 1.0)
}

/// Baseline segmentation: spill where intensity falls below the Otsu cut
/// (dark regions in the imagery are the candidate spills).
pub fn threshold_baseline_mask(image: &Tensor) -> Tensor {
    let t = otsu_threshold(image);
    image.map(|v| if v < t { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn bimodal_image_splits_between_modes() {
        let mut data = vec![0.2; 32];
        data.extend(vec![0.8; 32]);
        let img = Tensor::from_vec(Shape::new(1, 1, 8, 8), data).unwrap();
        let t = otsu_threshold(&img);
        assert!(t > 0.2 && t < 0.8, "threshold {t}");
        let mask = threshold_baseline_mask(&img);
        assert_eq!(mask.data().iter().filter(|&&v| v == 1.0).count(), 32);
    }

    #[test]
    fn dark_pixels_are_marked_spill() {
        let mut data = vec![0.7; 64];
        data[10] = 0.05;
        data[11] = 0.06;
        let img = Tensor::from_vec(Shape::new(1, 1, 8, 8), data).unwrap();
        let mask = threshold_baseline_mask(&img);
        assert_eq!(mask.data()[10], 1.0);
        assert_eq!(mask.data()[12], 0.0);
    }

    #[test]
    fn wake_only_scenes_trap_the_intensity_baseline() {
        // The generator's look-alikes are dark but not spill, so a global
        // intensity threshold must produce false positives on them.
        use crate::data::{scene_rng, synth_scene, SceneSpec};
        let spec = SceneSpec {
            slick_count_range: (0, 0),
            wake_count_range: (1, 2),
            ..SceneSpec::default()
        };
        let mut trapped = 0;
        for index in 0..4 {
            let (image, mask) = synth_scene(&spec, &mut scene_rng(&spec, index)).unwrap();
            assert_eq!(mask.sum(), 0.0);
            if threshold_baseline_mask(&image).sum() > 0.0 {
                trapped += 1;
            }
        }
        assert!(trapped > 0, "baseline never fooled by look-alike wakes");
    }
}
