//! Bilinear resampling with the half-pixel (align-corners-false) convention:
//! source coordinate = (dst + 0.5) * (src/dst) - 0.5, clamped to the valid
//! range.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Per-output-position sampling weights along one axis.
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn axis_taps(src: usize, dst: usize) -> AxisTaps {
    let scale = src as f64 / dst as f64;
    let mut lo = Vec::with_capacity(dst);
    let mut hi = Vec::with_capacity(dst);
    let mut frac = Vec::with_capacity(dst);
    for d in 0..dst {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
        let l = s.floor() as usize;
        let h = (l + 1).min(src - 1);
        lo.push(l);
        hi.push(h);
        frac.push(s - l as f64);
    }
    AxisTaps { lo, hi, frac }
}

/// Resamples every spatial plane to `out_h x out_w`.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target must be non-zero".to_string()));
    }
    let s = x.shape();
    let ty = axis_taps(s.h, out_h);
    let tx = axis_taps(s.w, out_w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..out_h {
                let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
                let r0 = &src[y0 * s.w..(y0 + 1) * s.w];
                let r1 = &src[y1 * s.w..(y1 + 1) * s.w];
                let drow = &mut dst[oy * out_w..(oy + 1) * out_w];
                for ox in 0..out_w {
                    let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    drow[ox] = top + (bot - top) * fy;
                }
            }
        }
    }
    Ok(out)
}

/// Upsamples spatial dims by an integer factor (>= 2).
pub fn bilinear_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 2 {
        return Err(Error::shape(format!(
            "upsample factor must be >= 2, got {factor}"
        )));
    }
    let s = x.shape();
    bilinear_resize(x, s.h * factor, s.w * factor)
}

/// Backward of [`bilinear_resize`]: scatters each output gradient onto its
/// (up to) four source taps with the same interpolation weights.
pub fn bilinear_resize_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let gs = grad_out.shape();
    let ty = axis_taps(in_h, gs.h);
    let tx = axis_taps(in_w, gs.w);
    let mut dx = Tensor::zeros(Shape::new(gs.n, gs.c, in_h, in_w));
    for n in 0..gs.n {
        for c in 0..gs.c {
            let g = grad_out.plane(n, c);
            let d = dx.plane_mut(n, c);
            for oy in 0..gs.h {
                let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
                for ox in 0..gs.w {
                    let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                    let go = g[oy * gs.w + ox];
                    d[y0 * in_w + x0] += go * (1.0 - fy) * (1.0 - fx);
                    d[y0 * in_w + x1] += go * (1.0 - fy) * fx;
                    d[y1 * in_w + x0] += go * fy * (1.0 - fx);
                    d[y1 * in_w + x1] += go * fy * fx;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::filled(Shape::new(1, 2, 3, 3), 0.4);
        let y = bilinear_upsample(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 6, 6));
        assert!(y.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn two_pixel_row_interpolates_by_the_half_pixel_rule() {
        // Hand evaluation: src = (dst+0.5)/2 - 0.5 over [0, 1] gives
        // samples at -0.25, 0.25, 0.75, 1.25 -> [0, 0.25, 0.75, 1].
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let y = bilinear_resize(&x, 1, 4).unwrap();
        let want = [0.0, 0.25, 0.75, 1.0];
        for (g, w) in y.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-15, "{g} vs {w}");
        }
    }

    #[test]
    fn factor_below_two_is_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(bilinear_upsample(&x, 1).is_err());
    }

    #[test]
    fn block_average_of_upsample_preserves_mean_for_zero_border_inputs() {
        // Interior source pixels receive total tap weight factor^2 exactly;
        // only border pixels pick up clamp mass, so zeroing the border ring
        // makes the global mean invariant.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = Shape::new(1, 1, 8, 8);
        let mut x = Tensor::zeros(s);
        for y in 1..7 {
            for xx in 1..7 {
                *x.at_mut(0, 0, y, xx) = rng.random_range(-1.0..1.0);
            }
        }
        for factor in [2usize, 4] {
            let up = bilinear_upsample(&x, factor).unwrap();
            let mut block_mean_sum = 0.0;
            for by in 0..8 {
                for bx in 0..8 {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += up.at(0, 0, by * factor + dy, bx * factor + dx);
                        }
                    }
                    block_mean_sum += acc / (factor * factor) as f64;
                }
            }
            let input_mean = x.sum() / 64.0;
            assert!(
                (block_mean_sum / 64.0 - input_mean).abs() < 1e-9,
                "factor {factor}"
            );
        }
    }

    #[test]
    fn identity_resize_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = Shape::new(1, 1, 5, 7);
        let data: Vec<f64> = (0..s.count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(s, data).unwrap();
        let y = bilinear_resize(&x, 5, 7).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
