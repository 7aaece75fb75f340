//! Synthetic speckled-SAR scene generator.
//!
//! Scenes model the phenomenology of spaceborne radar over water: a bright
//! sea background with slow spatial variation, dark elliptical slicks (which
//! go into the ground-truth mask), dark thin ship wakes (look-alikes, which
//! deliberately do NOT go into the mask), and multiplicative multi-look
//! speckle drawn from a mean-one Gamma distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::bilinear_resize;
use crate::seeds;
use crate::tensor::{Shape, Tensor};

/// Knobs of the scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub size: usize,
    /// Inclusive range of slick ellipses per scene.
    pub slick_count_range: (usize, usize),
    /// Intensity multiplier inside a slick, in (0,1).
    pub slick_darkening: f64,
    /// Inclusive range of look-alike wakes per scene.
    pub wake_count_range: (usize, usize),
    pub wake_darkening: f64,
    /// Number of looks of the multiplicative Gamma speckle.
    pub speckle_looks: u32,
    pub background_level: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 64,
            slick_count_range: (0, 3),
            slick_darkening: 0.3,
            wake_count_range: (0, 2),
            wake_darkening: 0.45,
            speckle_looks: 4,
            background_level: 0.6,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::config("scene size must be >= 8"));
        }
        for (name, v) in [
            ("slick_darkening", self.slick_darkening),
            ("wake_darkening", self.wake_darkening),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if self.speckle_looks < 1 {
            return Err(Error::config("speckle_looks must be >= 1"));
        }
        if self.slick_count_range.0 > self.slick_count_range.1
            || self.wake_count_range.0 > self.wake_count_range.1
        {
            return Err(Error::config("count ranges must be (lo <= hi)"));
        }
        if !(self.background_level > 0.0 && self.background_level <= 1.0) {
            return Err(Error::config("background_level must lie in (0,1]"));
        }
        Ok(())
    }
}

/// One dark elliptical slick.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        u * u + v * v <= 1.0
    }
}

/// One thin dark line segment (ship wake look-alike).
#[derive(Clone, Debug, PartialEq)]
pub struct Wake {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub half_width: f64,
}

impl Wake {
    fn distance(&self, x: f64, y: f64) -> f64 {
        let (vx, vy) = (self.x1 - self.x0, self.y1 - self.y0);
        let len2 = vx * vx + vy * vy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((x - self.x0) * vx + (y - self.y0) * vy) / len2).clamp(0.0, 1.0)
        };
        let (px, py) = (self.x0 + t * vx, self.y0 + t * vy);
        ((x - px) * (x - px) + (y - py) * (y - py)).sqrt()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.distance(x, y) <= self.half_width
    }
}

/// Everything needed to re-render a scene's clean (pre-speckle) field.
#[derive(Clone, Debug)]
pub struct SceneGeometry {
    /// Coarse grid of the slow background modulation, values in [-1, 1].
    pub background_grid: Tensor,
    pub slicks: Vec<Ellipse>,
    pub wakes: Vec<Wake>,
}

const BACKGROUND_GRID: usize = 5;
const BACKGROUND_SWAY: f64 = 0.1;

/// Samples slick/wake geometry and the background modulation grid.
pub fn sample_geometry(spec: &SceneSpec, rng: &mut impl Rng) -> SceneGeometry {
    let size = spec.size as f64;
    let grid_data: Vec<f64> = (0..BACKGROUND_GRID * BACKGROUND_GRID)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let background_grid =
        Tensor::from_vec(Shape::new(1, 1, BACKGROUND_GRID, BACKGROUND_GRID), grid_data)
            .expect("grid size");

    let slick_count = rng.random_range(spec.slick_count_range.0..=spec.slick_count_range.1);
    let slicks = (0..slick_count)
        .map(|_| Ellipse {
            cx: rng.random_range(0.2..0.8) * size,
            cy: rng.random_range(0.2..0.8) * size,
            rx: rng.random_range(0.08..0.25) * size,
            ry: rng.random_range(0.08..0.25) * size,
            angle: rng.random_range(0.0..std::f64::consts::PI),
        })
        .collect();

    let wake_count = rng.random_range(spec.wake_count_range.0..=spec.wake_count_range.1);
    let wakes = (0..wake_count)
        .map(|_| {
            // A long line crossing most of the tile.
            let horizontal = rng.random_bool(0.5);
            let (x0, y0, x1, y1) = if horizontal {
                (
                    0.0,
                    rng.random_range(0.1..0.9) * size,
                    size,
                    rng.random_range(0.1..0.9) * size,
                )
            } else {
                (
                    rng.random_range(0.1..0.9) * size,
                    0.0,
                    rng.random_range(0.1..0.9) * size,
                    size,
                )
            };
            Wake {
                x0,
                y0,
                x1,
                y1,
                half_width: rng.random_range(0.5..1.0),
            }
        })
        .collect();

    SceneGeometry {
        background_grid,
        slicks,
        wakes,
    }
}

/// Renders the clean (speckle-free) intensity field and the ground-truth
/// mask from recorded geometry. Slick pixels have intensity exactly
/// `background * slick_darkening`; wakes darken only non-mask pixels and are
/// never added to the mask.
pub fn render_clean(geometry: &SceneGeometry, spec: &SceneSpec) -> Result<(Tensor, Tensor)> {
    let n = spec.size;
    let field = bilinear_resize(&geometry.background_grid, n, n)?;
    let mut image = Tensor::zeros(Shape::new(1, 1, n, n));
    let mut mask = Tensor::zeros(Shape::new(1, 1, n, n));
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let background =
                spec.background_level * (1.0 + BACKGROUND_SWAY * field.at(0, 0, y, x));
            let in_slick = geometry.slicks.iter().any(|e| e.contains(fx, fy));
            let mut value = background;
            if in_slick {
                value *= spec.slick_darkening;
                *mask.at_mut(0, 0, y, x) = 1.0;
            } else if geometry.wakes.iter().any(|w| w.contains(fx, fy)) {
                value *= spec.wake_darkening;
            }
            *image.at_mut(0, 0, y, x) = value;
        }
    }
    Ok((image, mask))
}

/// Multiplies every pixel by a mean-one Gamma factor (shape = looks,
/// scale = 1/looks) and clamps to [0,1].
pub fn apply_speckle(image: &Tensor, looks: u32, rng: &mut impl Rng) -> Tensor {
    let gamma = Gamma::new(looks as f64, 1.0 / looks as f64).expect("valid gamma");
    image.map(|v| (v * gamma.sample(rng)).clamp(0.0, 1.0))
}

/// Full generator: geometry, clean render, then speckle.
pub fn synth_scene(spec: &SceneSpec, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
    spec.validate()?;
    let geometry = sample_geometry(spec, rng);
    let (clean, mask) = render_clean(&geometry, spec)?;
    let image = apply_speckle(&clean, spec.speckle_looks, rng);
    Ok((image, mask))
}

/// Deterministic per-item scene stream: item `index` under master seed
/// `spec.seed`.
pub fn scene_rng(spec: &SceneSpec, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::mix3(spec.seed, seeds::SCENE, index, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_reproduces_scene_exactly() {
        let spec = SceneSpec::default();
        let (img_a, mask_a) = synth_scene(&spec, &mut scene_rng(&spec, 3)).unwrap();
        let (img_b, mask_b) = synth_scene(&spec, &mut scene_rng(&spec, 3)).unwrap();
        assert_eq!(img_a.data(), img_b.data());
        assert_eq!(mask_a.data(), mask_b.data());
    }

    #[test]
    fn empty_scene_mean_tracks_background() {
        let spec = SceneSpec {
            slick_count_range: (0, 0),
            wake_count_range: (0, 0),
            speckle_looks: 64, // tight speckle so the mean settles fast
            size: 64,
            ..SceneSpec::default()
        };
        let (img, mask) = synth_scene(&spec, &mut scene_rng(&spec, 1)).unwrap();
        assert!(mask.data().iter().all(|&v| v == 0.0));
        let mean = img.sum() / img.shape().count() as f64;
        // Background modulation and speckle are both mean-preserving.
        assert!((mean - spec.background_level).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn slick_pixels_have_exactly_darkened_clean_intensity() {
        let spec = SceneSpec {
            slick_count_range: (1, 1),
            ..SceneSpec::default()
        };
        let mut rng = scene_rng(&spec, 7);
        let geometry = sample_geometry(&spec, &mut rng);
        let (clean, mask) = render_clean(&geometry, &spec).unwrap();
        assert!(mask.sum() > 0.0, "mask must be nonempty");

        // Regenerate the background field alone and compare inside the mask.
        let field = bilinear_resize(&geometry.background_grid, spec.size, spec.size).unwrap();
        for y in 0..spec.size {
            for x in 0..spec.size {
                if mask.at(0, 0, y, x) == 1.0 {
                    let background =
                        spec.background_level * (1.0 + BACKGROUND_SWAY * field.at(0, 0, y, x));
                    let want = background * spec.slick_darkening;
                    assert!((clean.at(0, 0, y, x) - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn wakes_never_enter_the_mask() {
        let spec = SceneSpec {
            slick_count_range: (0, 0),
            wake_count_range: (1, 2),
            ..SceneSpec::default()
        };
        for index in 0..8 {
            let mut rng = scene_rng(&spec, index);
            let geometry = sample_geometry(&spec, &mut rng);
            let (clean, mask) = render_clean(&geometry, &spec).unwrap();
            assert!(mask.data().iter().all(|&v| v == 0.0));
            // But the wake did darken something.
            if !geometry.wakes.is_empty() {
                let dark = clean
                    .data()
                    .iter()
                    .filter(|&&v| v < spec.background_level * 0.6)
                    .count();
                assert!(dark > 0, "scene {index} has no dark wake pixels");
            }
        }
    }

    #[test]
    fn speckle_factor_mean_and_variance() {
        let spec = SceneSpec::default();
        let looks = 4u32;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let gamma = Gamma::new(looks as f64, 1.0 / looks as f64).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let v: f64 = gamma.sample(&mut rng);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let expect_var = 1.0 / looks as f64;
        assert!(
            (var - expect_var).abs() < 0.1 * expect_var,
            "variance {var} vs {expect_var}"
        );
        let _ = spec;
    }
}
