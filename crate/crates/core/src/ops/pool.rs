//! 2x2 max pooling with recorded argmax indices, the index-driven unpooling
//! that mirrors it, and global average pooling.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Argmax positions recorded by [`maxpool2x2`].
///
/// The shape mirrors the pooled output; each element is the flat row-major
/// index into the pre-pool `h x w` plane of the window maximum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndexMap {
    shape: Shape,
    indices: Vec<usize>,
}

impl PoolIndexMap {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    fn at(&self, n: usize, c: usize, oy: usize, ox: usize) -> usize {
        self.indices[((n * self.shape.c + c) * self.shape.h + oy) * self.shape.w + ox]
    }
}

/// 2x2 max pooling with stride 2. Ties resolve to the first maximal element
/// in row-major window order, so index maps are reproducible.
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, PoolIndexMap)> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2x2 requires even spatial dims, got h={} w={}",
            s.h, s.w
        )));
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut y = Tensor::zeros(os);
    let mut indices = vec![0usize; os.count()];
    let mut out_pos = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            let ydata = y.plane_mut(n, c);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let base = 2 * oy * s.w + 2 * ox;
                    let window = [base, base + 1, base + s.w, base + s.w + 1];
                    let mut best = window[0];
                    let mut best_val = plane[window[0]];
                    for &pos in &window[1..] {
                        if plane[pos] > best_val {
                            best_val = plane[pos];
                            best = pos;
                        }
                    }
                    ydata[oy * os.w + ox] = best_val;
                    indices[out_pos] = best;
                    out_pos += 1;
                }
            }
        }
    }
    Ok((y, PoolIndexMap { shape: os, indices }))
}

/// Places each pooled value back at its recorded argmax position; every other
/// position of the doubled-resolution output is zero.
pub fn maxunpool2x2(y: &Tensor, idx: &PoolIndexMap) -> Result<Tensor> {
    let s = y.shape();
    if s != idx.shape() {
        return Err(Error::shape(format!(
            "pooled tensor shape {} does not match index map shape {}",
            s,
            idx.shape()
        )));
    }
    let os = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = y.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..s.h {
                for ox in 0..s.w {
                    let flat = idx.at(n, c, oy, ox);
                    let (py, px) = (flat / os.w, flat % os.w);
                    if py / 2 != oy || px / 2 != ox {
                        return Err(Error::shape(format!(
                            "corrupt index map: index {flat} lies outside the 2x2 window of output cell ({oy},{ox})"
                        )));
                    }
                    dst[flat] = src[oy * s.w + ox];
                }
            }
        }
    }
    Ok(out)
}

/// Backward of max pooling: routes each pooled-cell gradient to its argmax.
/// This is exactly the unpooling scatter.
pub fn maxpool2x2_backward(grad_y: &Tensor, idx: &PoolIndexMap) -> Result<Tensor> {
    maxunpool2x2(grad_y, idx)
}

/// Backward of unpooling: gathers the output gradient at each recorded index.
pub fn maxunpool2x2_backward(grad_out: &Tensor, idx: &PoolIndexMap) -> Result<Tensor> {
    let s = idx.shape();
    let gs = grad_out.shape();
    let expected = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    if gs != expected {
        return Err(Error::shape(format!(
            "grad shape {gs} does not match unpooled shape {expected}"
        )));
    }
    let mut dy = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = grad_out.plane(n, c);
            let dst = dy.plane_mut(n, c);
            for oy in 0..s.h {
                for ox in 0..s.w {
                    dst[oy * s.w + ox] = src[idx.at(n, c, oy, ox)];
                }
            }
        }
    }
    Ok(dy)
}

/// Mean over each spatial plane; output shape `(n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let s = x.shape();
    let inv = 1.0 / (s.plane() as f64);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
    for n in 0..s.n {
        for c in 0..s.c {
            out.plane_mut(n, c)[0] = x.plane(n, c).iter().sum::<f64>() * inv;
        }
    }
    out
}

/// Backward of global average pooling: spreads each `(n, c)` gradient evenly
/// over the `h x w` plane.
pub fn global_avg_pool_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    let s = grad.shape();
    let inv = 1.0 / ((h * w) as f64);
    let mut dx = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad.plane(n, c)[0] * inv;
            dx.plane_mut(n, c).fill(g);
        }
    }
    dx
}

/// Expands a `(n, c, 1, 1)` tensor to `(n, c, h, w)` by constant replication.
pub fn broadcast_spatial(v: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = v.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::shape(format!(
            "broadcast source must be (n,c,1,1), got {s}"
        )));
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let val = v.plane(n, c)[0];
            out.plane_mut(n, c).fill(val);
        }
    }
    Ok(out)
}

/// Backward of the constant broadcast: sums gradients over each plane.
pub fn broadcast_spatial_backward(grad: &Tensor) -> Tensor {
    let s = grad.shape();
    let mut dv = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
    for n in 0..s.n {
        for c in 0..s.c {
            dv.plane_mut(n, c)[0] = grad.plane(n, c).iter().sum();
        }
    }
    dv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor_2x2(vals: [f64; 4]) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 2, 2), vals.to_vec()).unwrap()
    }

    #[test]
    fn unique_max_takes_value_and_position() {
        let (y, idx) = maxpool2x2(&tensor_2x2([1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.indices(), &[3]); // position (1,1)
    }

    #[test]
    fn ties_resolve_to_first_in_row_major_order() {
        let (y, idx) = maxpool2x2(&tensor_2x2([5.0, 5.0, 0.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[5.0]);
        assert_eq!(idx.indices(), &[0]); // position (0,0)
    }

    #[test]
    fn rejects_odd_spatial_dims() {
        let x = Tensor::zeros(Shape::new(1, 1, 3, 4));
        assert!(maxpool2x2(&x).is_err());
    }

    #[test]
    fn matches_per_window_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape::new(1, 2, 6, 6);
        let data: Vec<f64> = (0..shape.count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(shape, data).unwrap();
        let (y, idx) = maxpool2x2(&x).unwrap();
        for n in 0..1 {
            for c in 0..2 {
                let plane = x.plane(n, c);
                for oy in 0..3 {
                    for ox in 0..3 {
                        // Exhaustive scan over the window, first max wins.
                        let mut best_pos = 0;
                        let mut best = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let pos = (2 * oy + dy) * 6 + 2 * ox + dx;
                                if plane[pos] > best {
                                    best = plane[pos];
                                    best_pos = pos;
                                }
                            }
                        }
                        assert_eq!(y.at(n, c, oy, ox), best);
                        assert_eq!(idx.at(n, c, oy, ox), best_pos);
                    }
                }
            }
        }
    }

    #[test]
    fn pool_unpool_round_trip_places_maxima() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = Shape::new(1, 1, 4, 4);
        let data: Vec<f64> = (0..shape.count()).map(|_| rng.random_range(0.1..1.0)).collect();
        let x = Tensor::from_vec(shape, data).unwrap();
        let (y, idx) = maxpool2x2(&x).unwrap();
        let up = maxunpool2x2(&y, &idx).unwrap();
        // Non-zeros only at recorded indices, holding the window maxima.
        for n in 0..1 {
            let plane = up.plane(n, 0);
            let mut nonzero = 0;
            for (pos, &v) in plane.iter().enumerate() {
                if v != 0.0 {
                    nonzero += 1;
                    assert!(idx.indices().contains(&pos));
                    assert_eq!(v, x.plane(n, 0)[pos]);
                }
            }
            assert_eq!(nonzero, 4);
        }
        // Idempotence: pooling the unpooled tensor reproduces the pooled one.
        let (y2, _) = maxpool2x2(&up).unwrap();
        assert_eq!(y2.data(), y.data());
    }

    #[test]
    fn unpool_of_zeros_is_zero() {
        let x = tensor_2x2([1.0, 2.0, 3.0, 4.0]);
        let (_, idx) = maxpool2x2(&x).unwrap();
        let zeros = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let up = maxunpool2x2(&zeros, &idx).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unpool_rejects_corrupt_index() {
        let y = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let idx = PoolIndexMap {
            shape: Shape::new(1, 1, 1, 1),
            indices: vec![5], // outside the (0,0) window {0,1,2,3} of a 2x2 plane
        };
        let err = maxunpool2x2(&y, &idx).unwrap_err();
        assert!(err.to_string().contains("corrupt index map"));
    }

    #[test]
    fn global_avg_pool_of_constant_is_constant() {
        let x = Tensor::filled(Shape::new(2, 3, 4, 4), 0.7);
        let v = global_avg_pool(&x);
        assert!(v.data().iter().all(|&e| (e - 0.7).abs() < 1e-15));
    }

    #[test]
    fn global_avg_pool_small_case() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[2.5]);
    }

    #[test]
    fn global_avg_pool_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = Shape::new(2, 3, 5, 5);
        let data: Vec<f64> = (0..shape.count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(shape, data).unwrap();
        let v = global_avg_pool(&x);
        for n in 0..2 {
            for c in 0..3 {
                let mut sum = 0.0;
                for &e in x.plane(n, c) {
                    sum += e;
                }
                assert!((v.plane(n, c)[0] - sum / 25.0).abs() < 1e-12);
            }
        }
    }
}
