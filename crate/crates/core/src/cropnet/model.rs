use rand_distr::{Distribution, Normal};

use super::config::{CropNetConfig, BLOCKS};
use crate::error::{Error, Result};
use crate::nn::norm::BnBatchStats;
use crate::nn::{
    conv_backward, conv_forward, global_avg_pool, global_avg_pool_backward, relu_backward,
    relu_forward, softmax, spatial_dropout, AdamState, Array4, BatchNorm, BnCache, ConvGeometry,
    DropoutMask, Linear, Matrix, Mode, Scalar,
};
use crate::rng::{self, Tag};

/// Convolution followed by its batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvUnit<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub bn: BatchNorm<T>,
    pub geometry: ConvGeometry,
    pub c_in: usize,
    pub c_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropNet<T> {
    config: CropNetConfig,
    units: Vec<ConvUnit<T>>,
    head: Linear<T>,
    adam: AdamState<T>,
}

/// Shape and name of one trainable parameter block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
struct UnitCache<T> {
    input: Array4<T>,
    bn: BnCache<T>,
    out: Array4<T>,
}

/// Intermediates of a forward pass needed by [`CropNet::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    units: Vec<UnitCache<T>>,
    masks: Vec<Option<DropoutMask<T>>>,
    features: Array4<T>,
    pooled: Matrix<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Output of the last block, the input of global pooling.
    pub fn features(&self) -> &Array4<T> {
        &self.features
    }

    /// Which ReLU units were active, in forward order. A change under a
    /// small perturbation means a kink was crossed.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.units
            .iter()
            .flat_map(|u| u.out.data().iter().map(|v| *v > T::zero()))
            .collect()
    }
}

pub struct Forward<T> {
    pub logits: Matrix<T>,
    pub cache: ForwardCache<T>,
    /// One entry per batch norm in train mode, empty in eval mode.
    pub stats: Vec<BnBatchStats<T>>,
}

/// Gradients in [`CropNet::param_specs`] order.
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
    pub input: Option<Array4<T>>,
}

fn params_of<'a, T>(units: &'a mut [ConvUnit<T>], head: &'a mut Linear<T>) -> Vec<&'a mut [T]> {
    let mut out: Vec<&mut [T]> = Vec::with_capacity(4 * units.len() + 2);
    for u in units {
        out.push(&mut u.weight);
        out.push(&mut u.bias);
        out.push(&mut u.bn.gamma);
        out.push(&mut u.bn.beta);
    }
    out.push(&mut head.weight);
    out.push(&mut head.bias);
    out
}

fn unit_prefix(u: usize) -> (usize, usize) {
    (u / 2 + 1, u % 2 + 1)
}

impl<T: Scalar> CropNet<T> {
    /// He-normal convolution and head weights, zero biases, identity batch norms.
    pub fn build(config: CropNetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        let mut rng = rng::stream(seed, Tag::Init, &[]);
        let taps = net.config.kernel_taps();
        for unit in &mut net.units {
            let std = (2.0 / (unit.c_in * taps) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut unit.weight {
                *w = T::lit(normal.sample(&mut rng));
            }
        }
        let normal = Normal::new(0.0, (2.0 / net.head.inputs as f64).sqrt()).expect("positive std");
        for w in &mut net.head.weight {
            *w = T::lit(normal.sample(&mut rng));
        }
        Ok(net)
    }

    /// All weights zero; used as the target of checkpoint loading.
    pub fn zeroed(config: CropNetConfig) -> Result<Self> {
        config.validate()?;
        let taps = config.kernel_taps();
        let units: Vec<ConvUnit<T>> = config
            .conv_plan()
            .into_iter()
            .map(|(c_in, c_out, stride)| ConvUnit {
                weight: vec![T::zero(); c_out * c_in * taps],
                bias: vec![T::zero(); c_out],
                bn: BatchNorm::new(c_out),
                geometry: config.geometry(stride),
                c_in,
                c_out,
            })
            .collect();
        let head = Linear::zeros(config.widths[BLOCKS - 1], config.n_classes);
        let sizes: Vec<usize> = Self::specs_for(&config)
            .iter()
            .map(BlockSpec::len)
            .collect();
        Ok(CropNet {
            config,
            units,
            head,
            adam: AdamState::new(1e-4, &sizes),
        })
    }

    pub fn config(&self) -> &CropNetConfig {
        &self.config
    }

    pub fn units(&self) -> &[ConvUnit<T>] {
        &self.units
    }

    pub fn head(&self) -> &Linear<T> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Linear<T> {
        &mut self.head
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn adam_mut(&mut self) -> &mut AdamState<T> {
        &mut self.adam
    }

    fn specs_for(config: &CropNetConfig) -> Vec<BlockSpec> {
        let (kh, kw) = config.geometry(1).kernel;
        let mut specs = Vec::new();
        for (u, (c_in, c_out, _)) in config.conv_plan().into_iter().enumerate() {
            let (b, j) = unit_prefix(u);
            let spec = |name: String, shape: Vec<usize>| BlockSpec { name, shape };
            specs.push(spec(
                format!("block{b}.conv{j}.weight"),
                vec![c_out, c_in, kh, kw],
            ));
            specs.push(spec(format!("block{b}.conv{j}.bias"), vec![c_out]));
            specs.push(spec(format!("block{b}.bn{j}.gamma"), vec![c_out]));
            specs.push(spec(format!("block{b}.bn{j}.beta"), vec![c_out]));
        }
        let last = config.widths[BLOCKS - 1];
        specs.push(BlockSpec {
            name: "head.weight".into(),
            shape: vec![config.n_classes, last],
        });
        specs.push(BlockSpec {
            name: "head.bias".into(),
            shape: vec![config.n_classes],
        });
        specs
    }

    /// Trainable blocks in canonical order.
    pub fn param_specs(&self) -> Vec<BlockSpec> {
        Self::specs_for(&self.config)
    }

    /// Running statistics, not trained but part of the model state.
    pub fn buffer_specs(&self) -> Vec<BlockSpec> {
        let mut specs = Vec::new();
        for (u, unit) in self.units.iter().enumerate() {
            let (b, j) = unit_prefix(u);
            for stat in ["running_mean", "running_var"] {
                specs.push(BlockSpec {
                    name: format!("block{b}.bn{j}.{stat}"),
                    shape: vec![unit.c_out],
                });
            }
        }
        specs
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(4 * self.units.len() + 2);
        for u in &self.units {
            out.extend([&u.weight[..], &u.bias[..], &u.bn.gamma[..], &u.bn.beta[..]]);
        }
        out.extend([&self.head.weight[..], &self.head.bias[..]]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        params_of(&mut self.units, &mut self.head)
    }

    pub fn buffers(&self) -> Vec<&[T]> {
        self.units
            .iter()
            .flat_map(|u| [&u.bn.running_mean[..], &u.bn.running_var[..]])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for u in &mut self.units {
            out.push(&mut u.bn.running_mean);
            out.push(&mut u.bn.running_var);
        }
        out
    }

    /// Parameter count by walking the actual blocks.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Expected batch shape for `n` samples.
    pub fn batch_shape(&self, n: usize) -> [usize; 4] {
        let (h, w) = self.config.input_shape;
        [n, 1, h, w]
    }

    pub fn forward(
        &self,
        x: &Array4<T>,
        mode: Mode,
        mut rng: Option<&mut rng::Rng>,
    ) -> Result<Forward<T>> {
        let expected = self.batch_shape(x.n());
        if x.shape() != expected || x.n() == 0 {
            return Err(Error::Shape(format!(
                "network expects input {expected:?}, got {:?}",
                x.shape()
            )));
        }
        let p = self.config.dropout;
        let mut units = Vec::with_capacity(self.units.len());
        let mut masks = Vec::with_capacity(BLOCKS);
        let mut stats = Vec::new();
        let mut h = x.clone();
        for (u, unit) in self.units.iter().enumerate() {
            let z = conv_forward(&h, &unit.weight, &unit.bias, &unit.geometry)?;
            let (zn, bn, st) = unit.bn.forward(&z, mode)?;
            stats.extend(st);
            let out = relu_forward(&zn);
            let input = std::mem::replace(&mut h, out.clone());
            units.push(UnitCache { input, bn, out });
            if u % 2 == 1 {
                let (y, mask) = match (mode, rng.as_deref_mut()) {
                    (Mode::Train, Some(r)) => spatial_dropout(&h, p, mode, r)?,
                    (Mode::Train, None) if p > 0.0 => {
                        return Err(Error::Config(
                            "training forward with dropout needs an RNG stream".into(),
                        ))
                    }
                    _ => (h, None),
                };
                h = y;
                masks.push(mask);
            }
        }
        let pooled = global_avg_pool(&h)?;
        let logits = self.head.forward(&pooled)?;
        Ok(Forward {
            logits,
            cache: ForwardCache {
                units,
                masks,
                features: h,
                pooled,
            },
            stats,
        })
    }

    /// Eval-mode logits.
    pub fn logits(&self, x: &Array4<T>) -> Result<Matrix<T>> {
        Ok(self.forward(x, Mode::Eval, None)?.logits)
    }

    /// Eval-mode class probabilities.
    pub fn predict(&self, x: &Array4<T>) -> Result<Matrix<T>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Backpropagates `grad_logits` through a cached forward pass.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &Matrix<T>,
        need_input: bool,
    ) -> Result<Gradients<T>> {
        let (g_pooled, g_hw, g_hb) = self.head.backward(grad_logits, &cache.pooled)?;
        let mut g = global_avg_pool_backward(&g_pooled, cache.features.shape())?;
        let mut per_unit: Vec<[Vec<T>; 4]> = Vec::with_capacity(self.units.len());
        let mut input_grad = None;
        for u in (0..self.units.len()).rev() {
            if u % 2 == 1 {
                if let Some(mask) = &cache.masks[u / 2] {
                    g = mask.apply(&g);
                }
            }
            let unit = &self.units[u];
            let uc = &cache.units[u];
            let gz = relu_backward(&g, &uc.out);
            let (gzn, g_gamma, g_beta) = unit.bn.backward(&gz, &uc.bn)?;
            let want_x = u > 0 || need_input;
            let cg = conv_backward(&gzn, &uc.input, &unit.weight, &unit.geometry, want_x)?;
            per_unit.push([cg.grad_w, cg.grad_b, g_gamma, g_beta]);
            match cg.grad_x {
                Some(gx) if u > 0 => g = gx,
                gx => input_grad = gx,
            }
        }
        let mut params = Vec::with_capacity(4 * self.units.len() + 2);
        for blocks in per_unit.into_iter().rev() {
            params.extend(blocks);
        }
        params.push(g_hw);
        params.push(g_hb);
        Ok(Gradients {
            params,
            input: input_grad,
        })
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[BnBatchStats<T>]) -> Result<()> {
        if stats.len() != self.units.len() {
            return Err(Error::Shape(format!(
                "expected {} batch statistics, got {}",
                self.units.len(),
                stats.len()
            )));
        }
        for (unit, st) in self.units.iter_mut().zip(stats) {
            unit.bn.update_running(st);
        }
        Ok(())
    }

    /// One Adam step on the given gradients.
    pub fn adam_step(&mut self, grads: &[Vec<T>]) -> Result<()> {
        let names: Vec<String> = self.param_specs().into_iter().map(|s| s.name).collect();
        let mut params = params_of(&mut self.units, &mut self.head);
        self.adam.update(&mut params, grads, &names)
    }

    /// Copies every parameter and buffer into a model of another precision.
    pub fn cast<U: Scalar>(&self) -> CropNet<U> {
        let conv = |v: &[T]| -> Vec<U> {
            v.iter()
                .map(|x| U::lit(x.to_f64().expect("finite")))
                .collect()
        };
        let units = self
            .units
            .iter()
            .map(|u| ConvUnit {
                weight: conv(&u.weight),
                bias: conv(&u.bias),
                bn: BatchNorm {
                    gamma: conv(&u.bn.gamma),
                    beta: conv(&u.bn.beta),
                    running_mean: conv(&u.bn.running_mean),
                    running_var: conv(&u.bn.running_var),
                    eps: u.bn.eps,
                    momentum: u.bn.momentum,
                },
                geometry: u.geometry,
                c_in: u.c_in,
                c_out: u.c_out,
            })
            .collect();
        let head = Linear {
            weight: conv(&self.head.weight),
            bias: conv(&self.head.bias),
            inputs: self.head.inputs,
            outputs: self.head.outputs,
        };
        let adam = AdamState {
            lr: self.adam.lr,
            beta1: self.adam.beta1,
            beta2: self.adam.beta2,
            eps: self.adam.eps,
            step: self.adam.step,
            m: self.adam.m.iter().map(|v| conv(v)).collect(),
            v: self.adam.v.iter().map(|v| conv(v)).collect(),
        };
        CropNet {
            config: self.config.clone(),
            units,
            head,
            adam,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_cross_entropy;
    use rand::{Rng as _, SeedableRng};

    fn tiny() -> CropNetConfig {
        CropNetConfig::two_d(8, 3).with_widths([2, 3, 2, 4])
    }

    fn random_input(shape: [usize; 4], seed: u64) -> Array4<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Array4::from_vec(shape, (0..n).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn enumeration_matches_closed_form() {
        for cfg in [
            CropNetConfig::two_d(43, 2).with_widths([4, 4, 4, 4]),
            CropNetConfig::one_d(430, 7).with_widths([16, 32, 64, 128]),
            tiny(),
        ] {
            let net = CropNet::<f32>::zeroed(cfg.clone()).unwrap();
            assert_eq!(net.param_count(), cfg.param_count());
            let specs: usize = net.param_specs().iter().map(BlockSpec::len).sum();
            assert_eq!(specs, cfg.param_count());
        }
    }

    #[test]
    fn nine_weight_layers() {
        let net = CropNet::<f32>::zeroed(tiny()).unwrap();
        let weights = net
            .param_specs()
            .iter()
            .filter(|s| s.name.ends_with(".weight"))
            .count();
        assert_eq!(weights, 9);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = CropNet::<f32>::build(tiny(), 5).unwrap();
        let b = CropNet::<f32>::build(tiny(), 5).unwrap();
        let c = CropNet::<f32>::build(tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.units.iter().all(|u| u.bias.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn feature_shape_trace() {
        let net = CropNet::<f64>::build(CropNetConfig::two_d(43, 7).with_widths([2, 2, 2, 3]), 1)
            .unwrap();
        let x = random_input([2, 1, 10, 43], 3);
        let fwd = net.forward(&x, Mode::Eval, None).unwrap();
        let shapes: Vec<[usize; 4]> = fwd.cache.units.iter().map(|u| u.out.shape()).collect();
        assert_eq!(shapes[0], [2, 2, 5, 22]);
        assert_eq!(shapes[3], [2, 2, 5, 22]);
        assert_eq!(shapes[4], [2, 2, 3, 11]);
        assert_eq!(shapes[7], [2, 3, 3, 11]);
        assert_eq!(fwd.logits.rows(), 2);
        assert_eq!(fwd.logits.cols(), 7);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = CropNet::<f64>::build(tiny(), 1).unwrap();
        assert!(net.logits(&random_input([1, 1, 10, 9], 1)).is_err());
        assert!(net.logits(&random_input([1, 2, 10, 8], 1)).is_err());
    }

    #[test]
    fn eval_is_deterministic_and_dropout_free() {
        let net = CropNet::<f64>::build(tiny(), 2).unwrap();
        let x = random_input([3, 1, 10, 8], 4);
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a, b);
        let mut other = net.clone();
        other.config.dropout = 0.7;
        assert_eq!(other.predict(&x).unwrap(), a);
        for r in 0..3 {
            let s: f64 = a.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_head_gives_uniform_softmax() {
        let mut net = CropNet::<f64>::build(tiny(), 2).unwrap();
        net.head.weight.iter_mut().for_each(|w| *w = 0.0);
        let p = net.predict(&Array4::zeros([2, 1, 10, 8])).unwrap();
        assert!(p.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn gradient_order_matches_specs() {
        let net = CropNet::<f64>::build(tiny(), 3).unwrap();
        let x = random_input([4, 1, 10, 8], 5);
        let mut r = rng::stream(1, Tag::Dropout, &[]);
        let fwd = net.forward(&x, Mode::Train, Some(&mut r)).unwrap();
        let (_, g) = softmax_cross_entropy(&fwd.logits, &[0, 1, 2, 0]).unwrap();
        let grads = net.backward(&fwd.cache, &g, true).unwrap();
        let specs = net.param_specs();
        assert_eq!(grads.params.len(), specs.len());
        for (gp, s) in grads.params.iter().zip(&specs) {
            assert_eq!(gp.len(), s.len(), "{}", s.name);
        }
        assert_eq!(grads.input.unwrap().shape(), x.shape());
    }

    #[test]
    fn cast_round_trip_preserves_f32() {
        let net = CropNet::<f32>::build(tiny(), 8).unwrap();
        let back: CropNet<f32> = net.cast::<f64>().cast();
        assert_eq!(back, net);
    }
}
