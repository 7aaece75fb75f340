//! Parameter initialization helpers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Shape, Tensor};

/// He-style normal init for a convolution kernel: std = sqrt(2 / fan_in).
pub fn conv_weight(
    cout: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    rng: &mut impl Rng,
) -> Tensor {
    let shape = Shape::new(cout, cin, kh, kw);
    let std = (2.0 / (cin * kh * kw) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let data = (0..shape.count()).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("length matches")
}

/// He-style init for a dense matrix stored as `(rows, cols, 1, 1)`.
pub fn dense_weight(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let shape = Shape::new(rows, cols, 1, 1);
    let std = (2.0 / cols as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let data = (0..shape.count()).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("length matches")
}

/// Zero bias stored as `(1, cout, 1, 1)`.
pub fn zero_bias(cout: usize) -> Tensor {
    Tensor::zeros(Shape::new(1, cout, 1, 1))
}
