//! Finite-difference verification of every backward pass.
//!
//! Each check builds a scalar objective (the sum of an operator's outputs),
//! computes the analytic gradient through the backward pass, and compares it
//! against central finite differences. Errors are reported relative to the
//! gradient's overall scale. Linear operators are probed with a larger step,
//! where central differences are exact up to rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deeplab::{self, AsppConfig};
use crate::error::Result;
use crate::fusion::{self, FusionConfig};
use crate::loss::{total_loss, total_loss_grad, LossConfig};
use crate::model::{FusionNet, ModelConfig};
use crate::ops::{
    bilinear_resize_backward, bilinear_upsample, concat_channels, conv2d, conv2d_backward,
    global_avg_pool, global_avg_pool_backward, maxpool2x2, maxpool2x2_backward, maxunpool2x2,
    maxunpool2x2_backward, relu, relu_backward, sigmoid, sigmoid_backward, split_channels,
    ConvSpec,
};
use crate::segnet::{self, SegNetConfig};
use crate::seeds;
use crate::tensor::{ParamStore, Shape, Tensor};

/// Default step for nonlinear operators.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Step for linear operators, where a larger step only reduces rounding noise.
const LINEAR_STEP: f64 = 1e-2;

/// Outcome of one operator check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Central finite differences of a scalar function at `x`.
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Max elementwise deviation relative to the gradient scale
/// `max(|analytic|_inf, |numeric|_inf)`.
pub fn max_scaled_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |acc, (&a, &n)| acc.max((a - n).abs() / scale))
}

fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("length matches")
}

/// Random tensor with every element bounded away from zero, for kinked ops.
fn random_tensor_away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.count())
        .map(|_| {
            let mag: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches")
}

/// Replaces every parameter (weights and biases) with generic random values.
/// Zero-initialized biases would park whole activation planes exactly on the
/// relu kink, where finite differences and the subgradient disagree.
fn randomize_params(params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for (_, param) in params.iter_mut() {
        for v in param.value.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
}

struct Check {
    name: &'static str,
    tolerance: f64,
    /// max error across all checked gradients for one seed
    run: Box<dyn Fn(u64) -> Result<f64>>,
}

/// `sum(f(x))` objective against analytic `backward(ones)` for one tensor
/// input; returns the scaled error.
fn check_input_grad(
    x: &Tensor,
    forward: impl Fn(&Tensor) -> Result<Tensor>,
    analytic: &[f64],
    h: f64,
) -> Result<f64> {
    let shape = x.shape();
    let mut objective = |flat: &[f64]| -> f64 {
        let t = Tensor::from_vec(shape, flat.to_vec()).expect("shape");
        forward(&t).expect("forward in finite-difference probe").sum()
    };
    let numeric = finite_diff_grad(&mut objective, x.data(), h);
    Ok(max_scaled_error(analytic, &numeric))
}

fn conv_check(seed: u64, spec: ConvSpec, shape: Shape, kernel: Shape) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(shape, &mut rng);
    let w = random_tensor(kernel, &mut rng);
    let b: Vec<f64> = (0..kernel.n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let out = conv2d(&x, &w, &b, &spec)?;
    let ones = Tensor::filled(out.shape(), 1.0);
    let grads = conv2d_backward(&x, &w, &spec, &ones)?;

    let ex = check_input_grad(&x, |t| conv2d(t, &w, &b, &spec), grads.dx.data(), LINEAR_STEP)?;
    let ew = check_input_grad(&w, |t| conv2d(&x, t, &b, &spec), grads.dw.data(), LINEAR_STEP)?;
    let mut bias_obj = |flat: &[f64]| conv2d(&x, &w, flat, &spec).expect("probe").sum();
    let nb = finite_diff_grad(&mut bias_obj, &b, LINEAR_STEP);
    let eb = max_scaled_error(&grads.db, &nb);
    Ok(ex.max(ew).max(eb))
}

fn branch_param_and_input_check<F>(
    params: &ParamStore,
    x: &Tensor,
    forward: F,
    analytic_input: &[f64],
    grads: &ParamStore,
    h: f64,
) -> Result<f64>
where
    F: Fn(&ParamStore, &Tensor) -> Result<Tensor>,
{
    let mut worst = check_input_grad(x, |t| forward(params, t), analytic_input, h)?;
    for name in params.names() {
        let value = params.value(&name)?.clone();
        let shape = value.shape();
        let mut objective = |flat: &[f64]| -> f64 {
            let mut probe = params.clone();
            *probe.value_mut(&name).expect("known name") =
                Tensor::from_vec(shape, flat.to_vec()).expect("shape");
            forward(&probe, x).expect("forward in probe").sum()
        };
        let numeric = finite_diff_grad(&mut objective, value.data(), h);
        let err = max_scaled_error(grads.grad(&name)?.data(), &numeric);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn all_checks() -> Vec<Check> {
    vec![
        Check {
            name: "conv2d",
            tolerance: 1e-6,
            run: Box::new(|seed| {
                conv_check(
                    seed,
                    ConvSpec::same(3),
                    Shape::new(1, 2, 5, 5),
                    Shape::new(3, 2, 3, 3),
                )
            }),
        },
        Check {
            name: "conv2d_strided_dilated",
            tolerance: 1e-6,
            run: Box::new(|seed| {
                conv_check(
                    seed,
                    ConvSpec::new(2, 2, 2),
                    Shape::new(2, 2, 8, 8),
                    Shape::new(2, 2, 3, 3),
                )
            }),
        },
        Check {
            name: "maxpool2x2",
            tolerance: 1e-4,
            run: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_tensor(Shape::new(1, 2, 6, 6), &mut rng);
                let (_, idx) = maxpool2x2(&x)?;
                let ones = Tensor::filled(idx.shape(), 1.0);
                let dx = maxpool2x2_backward(&ones, &idx)?;
                check_input_grad(
                    &x,
                    |t| maxpool2x2(t).map(|(y, _)| y),
                    dx.data(),
                    DEFAULT_STEP,
                )
            }),
        },
        Check {
            name: "maxunpool2x2",
            tolerance: 1e-10,
            run: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let src = random_tensor(Shape::new(1, 1, 4, 4), &mut rng);
                let (y, idx) = maxpool2x2(&src)?;
                let out = maxunpool2x2(&y, &idx)?;
                let ones = Tensor::filled(out.shape(), 1.0);
                let dy = maxunpool2x2_backward(&ones, &idx)?;
                // Linear in y: use a large step so rounding noise vanishes.
                check_input_grad(&y, |t| maxunpool2x2(t, &idx), dy.data(), 0.25)
            }),
        },
        Check {
            name: "global_avg_pool",
            tolerance: 1e-6,
            run: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_tensor(Shape::new(2, 3, 5, 5), &mut rng);
                let ones = Tensor::filled(Shape::new(2, 3, 1, 1), 1.0);
                let dx = global_avg_pool_backward(&ones, 5, 5);
                check_input_grad(&x, |t| Ok(global_avg_pool(t)), dx.data(), LINEAR_STEP)
            }),
        },
        Check {
            name: "bilinear_upsample",
            tolerance: 1e-6,
            run: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_tensor(Shape::new(1, 2, 5, 5), &mut rng);
                let out = bilinear_upsample(&x, 2)?;
                let ones = Tensor::filled(out.shape(), 1.0);
                let dx = bilinear_resize_backward(&ones, 5, 5);
                check_input_grad(&x, |t| bilinear_upsample(t, 2), dx.data(), LINEAR_STEP)
            }),
        },
        Check {
            name: "relu",
            tolerance: 1e-4,
            run: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_tensor_away_from_zero(Shape::new(1, 2, 5, 5), &mut rng);
                let ones = Tensor::filled(x.shape(), 1.0);
                let dx = relu_backward(&x, &ones);
                check_input_grad(&x, |t| Ok(relu(t)), dx.data(), DEFAULT_STEP)
            }),
        },
        Check {
            name: "sigmoid",
            tolerance: 1e-6,
            run: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_tensor(Shape::new(1, 2, 5, 5), &mut rng);
                let y = sigmoid(&x);
                let ones = Tensor::filled(x.shape(), 1.0);
                let dx = sigmoid_backward(&y, &ones);
                check_input_grad(&x, |t| Ok(sigmoid(t)), dx.data(), DEFAULT_STEP)
            }),
        },
        Check {
            name: "concat_channels",
            tolerance: 1e-6,
            run: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_tensor(Shape::new(1, 2, 4, 4), &mut rng);
                let b = random_tensor(Shape::new(1, 3, 4, 4), &mut rng);
                let z = concat_channels(&a, &b)?;
                let ones = Tensor::filled(z.shape(), 1.0);
                let (da, db) = split_channels(&ones, 2)?;
                let ea =
                    check_input_grad(&a, |t| concat_channels(t, &b), da.data(), LINEAR_STEP)?;
                let eb =
                    check_input_grad(&b, |t| concat_channels(&a, t), db.data(), LINEAR_STEP)?;
                Ok(ea.max(eb))
            }),
        },
        Check {
            name: "segnet_branch",
            tolerance: 1e-4,
            run: Box::new(|seed| {
                let cfg = SegNetConfig {
                    stage_channels: vec![3, 4],
                    out_channels: 2,
                    ..SegNetConfig::default()
                };
                let mut params = ParamStore::new();
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, seeds::GRADCHECK));
                segnet::init_params(&mut params, &cfg, &mut rng);
                randomize_params(&mut params, &mut rng);
                let x = random_tensor(Shape::new(1, 1, 16, 16), &mut rng);
                let (out, cache) = segnet::forward(&x, &params, &cfg)?;
                let ones = Tensor::filled(out.shape(), 1.0);
                let mut grads = params.clone();
                grads.zero_grads();
                let dx = segnet::backward(&ones, &cache, &mut grads, &cfg)?;
                branch_param_and_input_check(
                    &params,
                    &x,
                    |p, t| segnet::forward(t, p, &cfg).map(|(y, _)| y),
                    dx.data(),
                    &grads,
                    DEFAULT_STEP,
                )
            }),
        },
        Check {
            name: "deeplab_branch",
            tolerance: 1e-4,
            run: Box::new(|seed| {
                let cfg = AsppConfig {
                    dilation_rates: vec![1, 2],
                    branch_channels: 3,
                    entry_channels: 4,
                    out_channels: 2,
                    ..AsppConfig::default()
                };
                let mut params = ParamStore::new();
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, seeds::GRADCHECK));
                deeplab::init_params(&mut params, &cfg, &mut rng);
                randomize_params(&mut params, &mut rng);
                let x = random_tensor(Shape::new(1, 1, 16, 16), &mut rng);
                let (out, cache) = deeplab::forward(&x, &params, &cfg)?;
                let ones = Tensor::filled(out.shape(), 1.0);
                let mut grads = params.clone();
                grads.zero_grads();
                let dx = deeplab::backward(&ones, &cache, &mut grads, &cfg)?;
                branch_param_and_input_check(
                    &params,
                    &x,
                    |p, t| deeplab::forward(t, p, &cfg).map(|(y, _)| y),
                    dx.data(),
                    &grads,
                    DEFAULT_STEP,
                )
            }),
        },
        Check {
            name: "fusion_head",
            tolerance: 1e-4,
            run: Box::new(|seed| {
                let cfg = FusionConfig {
                    threshold: 0.5,
                    reduction: 2,
                };
                let mut params = ParamStore::new();
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, seeds::GRADCHECK));
                fusion::init_params(&mut params, 4, &cfg, &mut rng);
                randomize_params(&mut params, &mut rng);
                let f_seg = random_tensor(Shape::new(1, 2, 4, 4), &mut rng);
                let f_dl = random_tensor(Shape::new(1, 2, 4, 4), &mut rng);
                let (prob, cache) = fusion::fuse(&f_seg, &f_dl, &params, &cfg)?;
                let ones = Tensor::filled(prob.shape(), 1.0);
                let mut grads = params.clone();
                grads.zero_grads();
                let (d_seg, d_dl) = fusion::fuse_backward(&ones, &cache, &mut grads, &cfg)?;

                let es = check_input_grad(
                    &f_seg,
                    |t| fusion::fuse(t, &f_dl, &params, &cfg).map(|(p, _)| p),
                    d_seg.data(),
                    DEFAULT_STEP,
                )?;
                let ed = check_input_grad(
                    &f_dl,
                    |t| fusion::fuse(&f_seg, t, &params, &cfg).map(|(p, _)| p),
                    d_dl.data(),
                    DEFAULT_STEP,
                )?;
                let ep = branch_param_and_input_check(
                    &params,
                    &f_seg,
                    |p, t| fusion::fuse(t, &f_dl, p, &cfg).map(|(pr, _)| pr),
                    d_seg.data(),
                    &grads,
                    DEFAULT_STEP,
                )?;
                Ok(es.max(ed).max(ep))
            }),
        },
        Check {
            name: "full_model",
            tolerance: 1e-4,
            run: Box::new(|seed| {
                let cfg = ModelConfig {
                    segnet: SegNetConfig {
                        stage_channels: vec![2, 3],
                        out_channels: 2,
                        ..SegNetConfig::default()
                    },
                    deeplab: AsppConfig {
                        dilation_rates: vec![1, 2],
                        branch_channels: 2,
                        entry_channels: 4,
                        out_channels: 2,
                        ..AsppConfig::default()
                    },
                    fusion: FusionConfig {
                        threshold: 0.5,
                        reduction: 2,
                    },
                };
                let mut net = FusionNet::new(cfg, seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, seeds::GRADCHECK));
                randomize_params(&mut net.params, &mut rng);
                let x = random_tensor(Shape::new(1, 1, 8, 8), &mut rng);
                let (prob, cache) = net.forward(&x)?;
                let ones = Tensor::filled(prob.shape(), 1.0);
                let mut probe = net.clone();
                probe.params.zero_grads();
                let dx = probe.backward(&ones, &cache)?;
                branch_param_and_input_check(
                    &net.params,
                    &x,
                    |p, t| {
                        let candidate = FusionNet {
                            cfg: net.cfg.clone(),
                            params: p.clone(),
                        };
                        candidate.forward(t).map(|(pr, _)| pr)
                    },
                    dx.data(),
                    &probe.params,
                    DEFAULT_STEP,
                )
            }),
        },
        Check {
            name: "total_loss",
            tolerance: 1e-4,
            run: Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let shape = Shape::new(2, 1, 4, 4);
                let p = Tensor::from_vec(
                    shape,
                    (0..shape.count()).map(|_| rng.random_range(0.05..0.95)).collect(),
                )?;
                let g = Tensor::from_vec(
                    shape,
                    (0..shape.count())
                        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                        .collect(),
                )?;
                let cfg = LossConfig::default();
                let (_, grad) = total_loss_grad(&p, &g, &cfg)?;
                let mut objective = |flat: &[f64]| -> f64 {
                    let t = Tensor::from_vec(shape, flat.to_vec()).expect("shape");
                    total_loss(&t, &g, &cfg).expect("loss probe")
                };
                let numeric = finite_diff_grad(&mut objective, p.data(), DEFAULT_STEP);
                Ok(max_scaled_error(grad.data(), &numeric))
            }),
        },
    ]
}

/// Runs every operator and branch check over `seeds_per_check` seeds derived
/// from `seed`, reporting the worst error per check.
pub fn run_all_checks(seed: u64, seeds_per_check: usize) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for check in all_checks() {
        let mut worst: f64 = 0.0;
        for i in 0..seeds_per_check {
            let s = seeds::mix3(seed, seeds::GRADCHECK, i as u64, 0);
            worst = worst.max((check.run)(s)?);
        }
        results.push(CheckResult {
            name: check.name.to_string(),
            max_rel_err: worst,
            tolerance: check.tolerance,
            pass: worst < check.tolerance,
        });
    }
    Ok(results)
}
