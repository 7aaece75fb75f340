//! 2-D convolution (cross-correlation) with stride, dilation, and zero
//! padding, plus its backward pass.
//!
//! Images are lowered to column matrices one batch item at a time and the
//! contraction runs through the blocked kernels in [`super::matmul`]. The
//! backward pass produces gradients for the input, the kernel, and the bias.

use crate::error::{Error, Result};
use crate::ops::matmul::{gemm, gemm_abt, gemm_atb};
use crate::tensor::{Shape, Tensor};

/// Stride, dilation, and zero padding of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        ConvSpec {
            stride,
            dilation,
            padding,
        }
    }

    /// Unit stride and dilation with the padding that preserves spatial size
    /// for an odd kernel of extent `k`.
    pub fn same(kernel: usize) -> Self {
        ConvSpec::new(1, 1, (kernel - 1) / 2)
    }
}

/// Gradients of a convolution w.r.t. its three inputs.
pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Vec<f64>,
}

fn out_extent(input: usize, kernel: usize, spec: &ConvSpec) -> Result<usize> {
    let span = spec.dilation * (kernel - 1) + 1;
    let padded = input + 2 * spec.padding;
    if span > padded {
        return Err(Error::shape(format!(
            "dilated kernel extent {span} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - span) / spec.stride + 1)
}

fn validate(x: &Tensor, w: &Tensor, b: &[f64], spec: &ConvSpec) -> Result<(Shape, Shape)> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.c != ws.c {
        return Err(Error::shape(format!(
            "input channel count {} does not match kernel cin {}",
            xs.c, ws.c
        )));
    }
    if ws.h % 2 == 0 || ws.w % 2 == 0 {
        return Err(Error::shape(format!(
            "kernel spatial dims must be odd, got {}x{}",
            ws.h, ws.w
        )));
    }
    if b.len() != ws.n {
        return Err(Error::shape(format!(
            "bias length {} does not match cout {}",
            b.len(),
            ws.n
        )));
    }
    if spec.stride == 0 || spec.dilation == 0 {
        return Err(Error::shape(format!(
            "stride and dilation must be >= 1, got stride={} dilation={}",
            spec.stride, spec.dilation
        )));
    }
    let oh = out_extent(xs.h, ws.h, spec)?;
    let ow = out_extent(xs.w, ws.w, spec)?;
    Ok((xs, Shape::new(xs.n, ws.n, oh, ow)))
}

/// Copies one input item into a zero-padded plane buffer.
fn fill_padded(x: &Tensor, item: usize, padding: usize, buf: &mut [f64]) {
    let s = x.shape();
    let (ph, pw) = (s.h + 2 * padding, s.w + 2 * padding);
    buf.fill(0.0);
    for c in 0..s.c {
        let src = x.plane(item, c);
        for y in 0..s.h {
            let dst = (c * ph + y + padding) * pw + padding;
            buf[dst..dst + s.w].copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
        }
    }
}

/// Lowers one padded item into the `(cin*kh*kw) x (oh*ow)` column matrix.
fn im2col(
    padded: &[f64],
    cin: usize,
    ph: usize,
    pw: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: &ConvSpec,
    cols: &mut [f64],
) {
    let mut row = 0;
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let sy = oy * spec.stride + ky * spec.dilation;
                    let src_base = (c * ph + sy) * pw + kx * spec.dilation;
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if spec.stride == 1 {
                        out.copy_from_slice(&padded[src_base..src_base + ow]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            *o = padded[src_base + ox * spec.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatters a column-matrix gradient back onto the padded input plane.
fn col2im(
    cols: &[f64],
    cin: usize,
    ph: usize,
    pw: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: &ConvSpec,
    padded: &mut [f64],
) {
    let mut row = 0;
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let sy = oy * spec.stride + ky * spec.dilation;
                    let dst_base = (c * ph + sy) * pw + kx * spec.dilation;
                    for ox in 0..ow {
                        padded[dst_base + ox * spec.stride] += src[oy * ow + ox];
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation of `x` with kernel `w` plus per-output-channel bias.
///
/// `x: (n, cin, h, w)`, `w: (cout, cin, kh, kw)`, `b: [f64; cout]`. Output
/// spatial extent is `(padded - dilated_kernel) / stride + 1` per axis.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &[f64], spec: &ConvSpec) -> Result<Tensor> {
    let (xs, os) = validate(x, w, b, spec)?;
    let ws = w.shape();
    let (ph, pw) = (xs.h + 2 * spec.padding, xs.w + 2 * spec.padding);
    let k = ws.c * ws.h * ws.w;
    let cols_n = os.h * os.w;

    let mut y = Tensor::zeros(os);
    let mut padded = vec![0.0; xs.c * ph * pw];
    let mut cols = vec![0.0; k * cols_n];
    for item in 0..xs.n {
        fill_padded(x, item, spec.padding, &mut padded);
        im2col(&padded, xs.c, ph, pw, ws.h, ws.w, os.h, os.w, spec, &mut cols);
        for co in 0..os.c {
            y.plane_mut(item, co).fill(b[co]);
        }
        let base = item * os.c * cols_n;
        gemm(
            &mut y.data_mut()[base..base + os.c * cols_n],
            w.data(),
            &cols,
            os.c,
            k,
            cols_n,
        );
    }
    Ok(y)
}

/// Gradients of `sum(grad_out * conv2d(x, w, b))` w.r.t. `x`, `w`, and `b`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let ws = w.shape();
    let bias_probe = vec![0.0; ws.n];
    let (xs, os) = validate(x, w, &bias_probe, spec)?;
    if grad_out.shape() != os {
        return Err(Error::shape(format!(
            "grad_out shape {} does not match conv output shape {}",
            grad_out.shape(),
            os
        )));
    }
    let (ph, pw) = (xs.h + 2 * spec.padding, xs.w + 2 * spec.padding);
    let k = ws.c * ws.h * ws.w;
    let cols_n = os.h * os.w;

    let mut dx = Tensor::zeros(xs);
    let mut dw = Tensor::zeros(ws);
    let mut db = vec![0.0; ws.n];

    let mut padded = vec![0.0; xs.c * ph * pw];
    let mut cols = vec![0.0; k * cols_n];
    let mut dcols = vec![0.0; k * cols_n];
    for item in 0..xs.n {
        let gbase = item * os.c * cols_n;
        let gy = &grad_out.data()[gbase..gbase + os.c * cols_n];
        for co in 0..os.c {
            db[co] += gy[co * cols_n..(co + 1) * cols_n].iter().sum::<f64>();
        }

        fill_padded(x, item, spec.padding, &mut padded);
        im2col(&padded, xs.c, ph, pw, ws.h, ws.w, os.h, os.w, spec, &mut cols);
        gemm_abt(dw.data_mut(), gy, &cols, os.c, cols_n, k);

        dcols.fill(0.0);
        gemm_atb(&mut dcols, w.data(), gy, os.c, k, cols_n);
        padded.fill(0.0);
        col2im(&dcols, xs.c, ph, pw, ws.h, ws.w, os.h, os.w, spec, &mut padded);
        for c in 0..xs.c {
            for y in 0..xs.h {
                let src = (c * ph + y + spec.padding) * pw + spec.padding;
                dx.plane_mut(item, c)[y * xs.w..(y + 1) * xs.w]
                    .copy_from_slice(&padded[src..src + xs.w]);
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}
