//! Elementwise activations and channel concatenation.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Backward of relu given the pre-activation input. The subgradient at
/// exactly zero is taken as zero.
pub fn relu_backward(pre_act: &Tensor, grad: &Tensor) -> Tensor {
    let data = pre_act
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(grad.shape(), data).expect("shapes agree")
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Keep outputs strictly inside (0,1) even where exp saturates.
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Elementwise logistic function, strictly inside (0,1) for finite inputs.
pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid given its output: `g * y * (1 - y)`.
pub fn sigmoid_backward(out: &Tensor, grad: &Tensor) -> Tensor {
    let data = out
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&y, &g)| g * y * (1.0 - y))
        .collect();
    Tensor::from_vec(grad.shape(), data).expect("shapes agree")
}

/// Concatenates along the channel axis; `a`'s channels come first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::shape(format!(
            "concat requires matching batch and spatial dims, got {sa} vs {sb}"
        )));
    }
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut out = Tensor::zeros(os);
    for n in 0..sa.n {
        for c in 0..sa.c {
            out.plane_mut(n, c).copy_from_slice(a.plane(n, c));
        }
        for c in 0..sb.c {
            out.plane_mut(n, sa.c + c).copy_from_slice(b.plane(n, c));
        }
    }
    Ok(out)
}

/// Splits a tensor at channel `c_a`; inverse of [`concat_channels`] and its
/// backward pass.
pub fn split_channels(z: &Tensor, c_a: usize) -> Result<(Tensor, Tensor)> {
    let s = z.shape();
    if c_a == 0 || c_a >= s.c {
        return Err(Error::shape(format!(
            "split point {c_a} must lie strictly inside 1..{}",
            s.c
        )));
    }
    let mut a = Tensor::zeros(Shape::new(s.n, c_a, s.h, s.w));
    let mut b = Tensor::zeros(Shape::new(s.n, s.c - c_a, s.h, s.w));
    for n in 0..s.n {
        for c in 0..c_a {
            a.plane_mut(n, c).copy_from_slice(z.plane(n, c));
        }
        for c in c_a..s.c {
            b.plane_mut(n, c - c_a).copy_from_slice(z.plane(n, c));
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn sigmoid_stays_strictly_inside_unit_interval_at_extremes() {
        for x in [-1e9, -800.0, -20.0, 0.0, 20.0, 800.0, 1e9] {
            let y = sigmoid_scalar(x);
            assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");
        }
    }

    #[test]
    fn concat_keeps_first_input_channels_first() {
        let a = Tensor::filled(Shape::new(1, 2, 4, 4), 1.0);
        let b = Tensor::filled(Shape::new(1, 3, 4, 4), 2.0);
        let z = concat_channels(&a, &b).unwrap();
        assert_eq!(z.shape(), Shape::new(1, 5, 4, 4));
        assert!(z.plane(0, 1).iter().all(|&v| v == 1.0));
        assert!(z.plane(0, 2).iter().all(|&v| v == 2.0));
        let (ra, rb) = split_channels(&z, 2).unwrap();
        assert_eq!(ra.data(), a.data());
        assert_eq!(rb.data(), b.data());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor::zeros(Shape::new(1, 1, 4, 6));
        assert!(concat_channels(&a, &b).is_err());
    }
}
