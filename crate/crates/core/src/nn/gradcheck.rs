//! Central finite-difference checks of the analytic gradients, in `f64`.
//!
//! Each target reduces its output to a scalar (a fixed random projection,
//! or the cross-entropy for losses), perturbs every parameter and input
//! element by `±h`, and compares `(L(+h) - L(-h)) / 2h` with the analytic
//! gradient. Elements whose perturbation flips a ReLU are skipped.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{
    conv_backward, conv_forward, global_avg_pool, global_avg_pool_backward, relu_backward,
    relu_forward, softmax_cross_entropy, spatial_dropout, Array4, BatchNorm, ConvGeometry, Linear,
    Matrix, Mode,
};
use crate::cropnet::{CropNet, CropNetConfig};
use crate::error::Result;
use crate::rng::{self, Tag};

pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so gradients that are zero up
/// to rounding (e.g. a conv bias feeding batch norm) compare absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GradTarget {
    Linear,
    Conv2d,
    Conv1d,
    BatchNormTrain,
    BatchNormEval,
    ConvBnRelu,
    GlobalAvgPool,
    SpatialDropout,
    SoftmaxCrossEntropy,
    CropNet2d,
    CropNet1d,
}

impl GradTarget {
    pub const ALL: [GradTarget; 11] = [
        GradTarget::Linear,
        GradTarget::Conv2d,
        GradTarget::Conv1d,
        GradTarget::BatchNormTrain,
        GradTarget::BatchNormEval,
        GradTarget::ConvBnRelu,
        GradTarget::GlobalAvgPool,
        GradTarget::SpatialDropout,
        GradTarget::SoftmaxCrossEntropy,
        GradTarget::CropNet2d,
        GradTarget::CropNet1d,
    ];

    pub fn is_full_model(self) -> bool {
        matches!(self, GradTarget::CropNet2d | GradTarget::CropNet1d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub target: GradTarget,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

type Eval<'a> = dyn Fn(&[Vec<f64>]) -> Result<(f64, Vec<bool>)> + 'a;

fn compare(
    target: GradTarget,
    mut blocks: Vec<Vec<f64>>,
    analytic: &[Vec<f64>],
    eval: &Eval,
) -> Result<GradCheckReport> {
    let (_, base) = eval(&blocks)?;
    let mut report = GradCheckReport {
        target,
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for b in 0..blocks.len() {
        for i in 0..blocks[b].len() {
            let orig = blocks[b][i];
            blocks[b][i] = orig + STEP;
            let (lp, pp) = eval(&blocks)?;
            blocks[b][i] = orig - STEP;
            let (lm, pm) = eval(&blocks)?;
            blocks[b][i] = orig;
            if pp != base || pm != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * STEP);
            let a = analytic[b][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn a4(shape: [usize; 4], v: &[f64]) -> Result<Array4<f64>> {
    Array4::from_vec(shape, v.to_vec())
}

fn conv_case(target: GradTarget, rng: &mut rng::Rng) -> Result<GradCheckReport> {
    let (g, xs) = match target {
        GradTarget::Conv1d => (ConvGeometry::vertical3(2), [2, 2, 9, 1]),
        _ => (ConvGeometry::square3(2), [2, 2, 6, 5]),
    };
    let c_out = 3;
    let w = normals(rng, c_out * 2 * g.taps());
    let b = normals(rng, c_out);
    let x = normals(rng, xs.iter().product());
    let y = conv_forward(&a4(xs, &x)?, &w, &b, &g)?;
    let r = normals(rng, y.data().len());
    let ys = y.shape();
    let grads = conv_backward(&a4(ys, &r)?, &a4(xs, &x)?, &w, &g, true)?;
    let analytic = vec![
        grads.grad_x.expect("requested").into_vec(),
        grads.grad_w,
        grads.grad_b,
    ];
    let eval = |p: &[Vec<f64>]| -> Result<(f64, Vec<bool>)> {
        let y = conv_forward(&a4(xs, &p[0])?, &p[1], &p[2], &g)?;
        Ok((dot(y.data(), &r), Vec::new()))
    };
    compare(target, vec![x, w, b], &analytic, &eval)
}

fn bn_case(target: GradTarget, rng: &mut rng::Rng) -> Result<GradCheckReport> {
    let xs = [3, 2, 3, 2];
    let mode = if target == GradTarget::BatchNormEval {
        Mode::Eval
    } else {
        Mode::Train
    };
    let mut bn = BatchNorm::<f64>::new(2);
    bn.gamma = normals(rng, 2);
    bn.beta = normals(rng, 2);
    bn.running_mean = normals(rng, 2);
    bn.running_var = vec![0.7, 1.9];
    let x = normals(rng, xs.iter().product());
    let r = normals(rng, x.len());
    let (_, cache, _) = bn.forward(&a4(xs, &x)?, mode)?;
    let (gx, gg, gb) = bn.backward(&a4(xs, &r)?, &cache)?;
    let analytic = vec![gx.into_vec(), gg, gb];
    let eval = |p: &[Vec<f64>]| -> Result<(f64, Vec<bool>)> {
        let mut layer = bn.clone();
        layer.gamma = p[1].clone();
        layer.beta = p[2].clone();
        let (y, _, _) = layer.forward(&a4(xs, &p[0])?, mode)?;
        Ok((dot(y.data(), &r), Vec::new()))
    };
    compare(
        target,
        vec![x, bn.gamma.clone(), bn.beta.clone()],
        &analytic,
        &eval,
    )
}

fn conv_bn_relu_case(rng: &mut rng::Rng) -> Result<GradCheckReport> {
    let g = ConvGeometry::square3(1);
    let xs = [3, 2, 4, 4];
    let c_out = 3;
    let x = normals(rng, xs.iter().product());
    let w = normals(rng, c_out * 2 * g.taps());
    let b = normals(rng, c_out);
    let mut bn = BatchNorm::<f64>::new(c_out);
    bn.gamma = normals(rng, c_out);
    bn.beta = normals(rng, c_out);
    let run =
        |p: &[Vec<f64>]| -> Result<(Array4<f64>, Array4<f64>, super::BnCache<f64>, Array4<f64>)> {
            let mut layer = bn.clone();
            layer.gamma = p[3].clone();
            layer.beta = p[4].clone();
            let z = conv_forward(&a4(xs, &p[0])?, &p[1], &p[2], &g)?;
            let (zn, cache, _) = layer.forward(&z, Mode::Train)?;
            let y = relu_forward(&zn);
            Ok((z, zn, cache, y))
        };
    let blocks = vec![x, w, b, bn.gamma.clone(), bn.beta.clone()];
    let (_, _, cache, y) = run(&blocks)?;
    let r = normals(rng, y.data().len());
    let gz = relu_backward(&a4(y.shape(), &r)?, &y);
    let (gzn, gg, gb) = bn.backward(&gz, &cache)?;
    let cg = conv_backward(&gzn, &a4(xs, &blocks[0])?, &blocks[1], &g, true)?;
    let analytic = vec![
        cg.grad_x.expect("requested").into_vec(),
        cg.grad_w,
        cg.grad_b,
        gg,
        gb,
    ];
    let eval = |p: &[Vec<f64>]| -> Result<(f64, Vec<bool>)> {
        let (_, zn, _, y) = run(p)?;
        Ok((
            dot(y.data(), &r),
            zn.data().iter().map(|v| *v > 0.0).collect(),
        ))
    };
    compare(GradTarget::ConvBnRelu, blocks, &analytic, &eval)
}

fn model_case(target: GradTarget, seed: u64) -> Result<GradCheckReport> {
    let cfg = match target {
        GradTarget::CropNet1d => CropNetConfig::one_d(12, 3).with_widths([2, 3, 2, 3]),
        _ => CropNetConfig::two_d(6, 3).with_widths([2, 3, 2, 3]),
    };
    let mut net = CropNet::<f64>::build(cfg, seed)?;
    let mut rng = rng::stream(seed, Tag::Test, &[1]);
    // Non-trivial affine batch norms and head bias.
    for u in 0..net.units().len() {
        let c = net.units()[u].c_out;
        let gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
        let beta = normals(&mut rng, c);
        let params = net.params_mut();
        let mut it = params.into_iter().skip(4 * u + 2);
        it.next().expect("gamma").copy_from_slice(&gamma);
        it.next().expect("beta").copy_from_slice(&beta);
    }
    let n = 4;
    let shape = net.batch_shape(n);
    let labels = [0usize, 1, 2, 1];
    let x: Vec<f64> = (0..shape.iter().product())
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let forward = |net: &CropNet<f64>, x: &[f64]| {
        let mut drop = rng::stream(seed, Tag::Dropout, &[0]);
        net.forward(&a4(shape, x)?, Mode::Train, Some(&mut drop))
    };
    let fwd = forward(&net, &x)?;
    let (_, g) = softmax_cross_entropy(&fwd.logits, &labels)?;
    let grads = net.backward(&fwd.cache, &g, true)?;
    let mut analytic = vec![grads.input.expect("requested").into_vec()];
    analytic.extend(grads.params);
    let mut blocks = vec![x];
    blocks.extend(net.params().into_iter().map(<[f64]>::to_vec));
    let eval = |p: &[Vec<f64>]| -> Result<(f64, Vec<bool>)> {
        let mut m = net.clone();
        for (dst, src) in m.params_mut().into_iter().zip(&p[1..]) {
            dst.copy_from_slice(src);
        }
        let fwd = forward(&m, &p[0])?;
        let (loss, _) = softmax_cross_entropy(&fwd.logits, &labels)?;
        Ok((loss, fwd.cache.relu_pattern()))
    };
    compare(target, blocks, &analytic, &eval)
}

/// Runs one target with inputs drawn from `seed`.
pub fn gradient_check(target: GradTarget, seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng::stream(seed, Tag::Test, &[0]);
    match target {
        GradTarget::Linear => {
            let (n, i, o) = (3, 5, 4);
            let mut layer = Linear::<f64>::zeros(i, o);
            layer.weight = normals(&mut rng, i * o);
            layer.bias = normals(&mut rng, o);
            let x = normals(&mut rng, n * i);
            let r = normals(&mut rng, n * o);
            let (gx, gw, gb) = layer.backward(
                &Matrix::from_vec(n, o, r.clone())?,
                &Matrix::from_vec(n, i, x.clone())?,
            )?;
            let analytic = vec![gx.into_vec(), gw, gb];
            let eval = |p: &[Vec<f64>]| -> Result<(f64, Vec<bool>)> {
                let l = Linear {
                    weight: p[1].clone(),
                    bias: p[2].clone(),
                    inputs: i,
                    outputs: o,
                };
                let y = l.forward(&Matrix::from_vec(n, i, p[0].clone())?)?;
                Ok((dot(y.data(), &r), Vec::new()))
            };
            compare(
                target,
                vec![x, layer.weight.clone(), layer.bias.clone()],
                &analytic,
                &eval,
            )
        }
        GradTarget::Conv2d | GradTarget::Conv1d => conv_case(target, &mut rng),
        GradTarget::BatchNormTrain | GradTarget::BatchNormEval => bn_case(target, &mut rng),
        GradTarget::ConvBnRelu => conv_bn_relu_case(&mut rng),
        GradTarget::GlobalAvgPool => {
            let xs = [2, 3, 3, 4];
            let x = normals(&mut rng, xs.iter().product());
            let r = normals(&mut rng, 6);
            let gx = global_avg_pool_backward(&Matrix::from_vec(2, 3, r.clone())?, xs)?;
            let eval = |p: &[Vec<f64>]| -> Result<(f64, Vec<bool>)> {
                Ok((
                    dot(global_avg_pool(&a4(xs, &p[0])?)?.data(), &r),
                    Vec::new(),
                ))
            };
            compare(target, vec![x], &[gx.into_vec()], &eval)
        }
        GradTarget::SpatialDropout => {
            let xs = [3, 4, 2, 2];
            let x = normals(&mut rng, xs.iter().product());
            let r = normals(&mut rng, x.len());
            let mask_seed = rng.gen();
            let drop = |x: &[f64]| {
                let mut mr = rng::stream(mask_seed, Tag::Dropout, &[]);
                spatial_dropout(&a4(xs, x)?, 0.3, Mode::Train, &mut mr)
            };
            let (_, mask) = drop(&x)?;
            let gx = mask.expect("train mode").apply(&a4(xs, &r)?);
            let eval = |p: &[Vec<f64>]| -> Result<(f64, Vec<bool>)> {
                Ok((dot(drop(&p[0])?.0.data(), &r), Vec::new()))
            };
            compare(target, vec![x], &[gx.into_vec()], &eval)
        }
        GradTarget::SoftmaxCrossEntropy => {
            let (n, k) = (4, 5);
            let logits = normals(&mut rng, n * k);
            let labels = [0usize, 3, 4, 3];
            let (_, g) = softmax_cross_entropy(&Matrix::from_vec(n, k, logits.clone())?, &labels)?;
            let eval = |p: &[Vec<f64>]| -> Result<(f64, Vec<bool>)> {
                Ok((
                    softmax_cross_entropy(&Matrix::from_vec(n, k, p[0].clone())?, &labels)?.0,
                    Vec::new(),
                ))
            };
            compare(target, vec![logits], &[g.into_vec()], &eval)
        }
        GradTarget::CropNet2d | GradTarget::CropNet1d => model_case(target, seed),
    }
}
