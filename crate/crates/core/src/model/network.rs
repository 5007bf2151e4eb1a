//! Forward and backward passes of the encoder/decoder network.
//!
//! ```text
//! enc1..enc4 : dense block -> 2x2 max-pool (indices kept)
//! bottleneck : k*k conv -> batch norm              (1/16 resolution)
//! dec4..dec1 : unpool(indices) -> concat(skip) -> dense block
//! classifier : 1x1 conv -> channel softmax
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::norm::batch_norm_infer;
use crate::kernels::{
    batch_norm, concat_channels, conv2d, max_pool_2x2, max_pool_2x2_backward, max_unpool_2x2,
    max_unpool_2x2_backward, relu, softmax_channels, split_channels, BatchNormConfig, BatchNormCtx,
    ConvCtx, Mode, PoolIndices, ReluCtx, RunningStats, SoftmaxCtx,
};
use crate::model::config::{ModelConfig, DECODERS, ENCODERS};
use crate::model::params::{Gradients, Parameters};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct QuickTumorNet<T> {
    config: ModelConfig,
    params: Parameters<T>,
    seed: u64,
    norm: BatchNormConfig,
}

#[derive(Debug)]
struct DenseTape<T> {
    cin: usize,
    bn1: BatchNormCtx<T>,
    relu1: ReluCtx,
    conv1: ConvCtx<T>,
    bn2: BatchNormCtx<T>,
    relu2: ReluCtx,
    conv2: ConvCtx<T>,
    conv3: ConvCtx<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    encoders: Vec<DenseTape<T>>,
    indices: Vec<PoolIndices>,
    bottleneck_conv: ConvCtx<T>,
    bottleneck_bn: BatchNormCtx<T>,
    decoders: Vec<DenseTape<T>>,
    classifier: ConvCtx<T>,
    softmax: SoftmaxCtx<T>,
}

impl<T: Scalar> QuickTumorNet<T> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = Parameters::init(&config, seed)?;
        Ok(QuickTumorNet {
            config,
            params,
            seed,
            norm: BatchNormConfig::default(),
        })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(QuickTumorNet {
            config,
            params,
            seed,
            norm: BatchNormConfig::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<T> {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let s = input.shape();
        if s.c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {s}",
                self.config.in_channels
            )));
        }
        if s.n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        self.config.check_spatial(s.h, s.w)
    }

    /// Forward pass recording a tape. Train mode updates batch-norm running
    /// statistics.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(input)?;
        let stats = match mode {
            Mode::Train => Stats::Train(&mut self.params.running),
            Mode::Infer => Stats::Infer(&self.params.running),
        };
        let mut run = Runner {
            tensors: &self.params.tensors,
            stats,
            norm: self.norm,
        };
        let (probs, tape) = run.forward(input.clone(), true)?;
        Ok((probs, tape.expect("tape requested")))
    }

    /// Infer-mode forward without a tape. Does not touch the parameters, so a
    /// shared network can serve concurrent callers.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut run = Runner {
            tensors: &self.params.tensors,
            stats: Stats::Infer(&self.params.running),
            norm: self.norm,
        };
        Ok(run.forward(input.clone(), false)?.0)
    }

    /// Backward pass from d(loss)/d(probabilities).
    pub fn backward(&self, tape: Tape<T>, grad_probs: &Tensor<T>) -> Result<Gradients<T>> {
        let Tape {
            encoders,
            indices,
            bottleneck_conv,
            bottleneck_bn,
            decoders,
            classifier,
            softmax,
        } = tape;
        let base = self.config.base_channels;
        let p = &self.params;
        let mut grads = Gradients::new();

        let d_logits = softmax.backward(grad_probs)?;
        let g = classifier.backward(p.tensor("classifier.conv.weight"), &d_logits, true)?;
        record_conv(&mut grads, "classifier.conv", g.weight, g.bias);
        let mut d_x = g.input.expect("input grad requested");

        let mut d_skips: Vec<Option<Tensor<T>>> = (0..ENCODERS.len()).map(|_| None).collect();
        // decoders were recorded dec4..dec1; unwind dec1..dec4
        for (tape, name) in decoders.into_iter().rev().zip(DECODERS.iter().rev()) {
            let level = decoder_level(name);
            let d_cat = dense_backward(p, name, tape, d_x, &mut grads)?;
            let (d_up, d_skip) = split_channels(&d_cat, base)?;
            d_skips[level] = Some(d_skip);
            d_x = max_unpool_2x2_backward(&d_up, &indices[level])?;
        }

        let bn = bottleneck_bn.backward(&d_x)?;
        grads.insert_vec("bottleneck.bn.gamma".into(), bn.gamma);
        grads.insert_vec("bottleneck.bn.beta".into(), bn.beta);
        let g = bottleneck_conv.backward(p.tensor("bottleneck.conv.weight"), &bn.input, true)?;
        grads.insert("bottleneck.conv.weight".into(), g.weight);
        d_x = g.input.expect("input grad requested");

        for (level, tape) in encoders.into_iter().enumerate().rev() {
            let mut d_out = max_pool_2x2_backward(&d_x, &indices[level])?;
            d_out.add_assign(d_skips[level].as_ref().expect("skip gradient recorded"));
            d_x = dense_backward(p, ENCODERS[level], tape, d_out, &mut grads)?;
        }

        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient {
                layer: name.to_string(),
            });
        }
        Ok(grads)
    }
}

fn decoder_level(name: &str) -> usize {
    DECODERS.len() - 1 - DECODERS.iter().position(|d| *d == name).expect("decoder name")
}

fn record_conv<T: Scalar>(grads: &mut Gradients<T>, layer: &str, weight: Tensor<T>, bias: Option<Vec<T>>) {
    grads.insert(format!("{layer}.weight"), weight);
    if let Some(b) = bias {
        grads.insert_vec(format!("{layer}.bias"), b);
    }
}

enum Stats<'a, T> {
    Train(&'a mut BTreeMap<String, RunningStats<T>>),
    Infer(&'a BTreeMap<String, RunningStats<T>>),
}

struct Runner<'a, T> {
    tensors: &'a BTreeMap<String, Tensor<T>>,
    stats: Stats<'a, T>,
    norm: BatchNormConfig,
}

impl<T: Scalar> Runner<'_, T> {
    fn param(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn bn(&mut self, layer: &str, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCtx<T>)> {
        let tensors = self.tensors;
        let get = |name: String| {
            tensors
                .get(&name)
                .unwrap_or_else(|| panic!("missing parameter {name}"))
                .data()
        };
        let gamma = get(format!("{layer}.gamma"));
        let beta = get(format!("{layer}.beta"));
        let missing = || Error::Config(format!("missing running stats for {layer}"));
        match &mut self.stats {
            Stats::Train(map) => {
                let running = map.get_mut(layer).ok_or_else(missing)?;
                batch_norm(x, gamma, beta, Mode::Train, running, self.norm)
            }
            Stats::Infer(map) => {
                let running = map.get(layer).ok_or_else(missing)?;
                batch_norm_infer(x, gamma, beta, running, self.norm)
            }
        }
    }

    fn conv(&self, layer: &str, x: Tensor<T>, bias: bool) -> Result<(Tensor<T>, ConvCtx<T>)> {
        let w = self.param(&format!("{layer}.weight"));
        let b = bias.then(|| self.param(&format!("{layer}.bias")).data());
        conv2d(x, w, b)
    }

    fn dense(&mut self, block: &str, x: Tensor<T>) -> Result<(Tensor<T>, DenseTape<T>)> {
        let cin = x.shape().c;
        let (h1, bn1) = self.bn(&format!("{block}.bn1"), &x)?;
        let (r1, relu1) = relu(&h1);
        drop(h1);
        let (a, conv1) = self.conv(&format!("{block}.conv1"), r1, true)?;
        let cat1 = concat_channels(&x, &a)?;
        drop((x, a));
        let (h2, bn2) = self.bn(&format!("{block}.bn2"), &cat1)?;
        let (r2, relu2) = relu(&h2);
        drop(h2);
        let (b, conv2) = self.conv(&format!("{block}.conv2"), r2, true)?;
        let cat2 = concat_channels(&cat1, &b)?;
        drop((cat1, b));
        let (out, conv3) = self.conv(&format!("{block}.conv3"), cat2, true)?;
        Ok((
            out,
            DenseTape {
                cin,
                bn1,
                relu1,
                conv1,
                bn2,
                relu2,
                conv2,
                conv3,
            },
        ))
    }

    fn forward(&mut self, input: Tensor<T>, keep: bool) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        let mut encoders = Vec::new();
        let mut indices = Vec::new();
        let mut skips = Vec::new();
        let mut x = input;
        for name in ENCODERS {
            let (out, tape) = self.dense(name, x)?;
            let (pooled, idx) = max_pool_2x2(&out)?;
            skips.push(out);
            indices.push(idx);
            if keep {
                encoders.push(tape);
            }
            x = pooled;
        }
        let (h, bottleneck_conv) = self.conv("bottleneck.conv", x, false)?;
        let (mut x, bottleneck_bn) = self.bn("bottleneck.bn", &h)?;
        drop(h);

        let mut decoders = Vec::new();
        for name in DECODERS {
            let level = decoder_level(name);
            let up = max_unpool_2x2(&x, &indices[level])?;
            let skip = skips.pop().expect("one skip per level");
            let cat = concat_channels(&up, &skip)?;
            drop((up, skip));
            let (out, tape) = self.dense(name, cat)?;
            if keep {
                decoders.push(tape);
            }
            x = out;
        }
        let (logits, classifier) = self.conv("classifier.conv", x, true)?;
        let (probs, softmax) = softmax_channels(&logits);
        let tape = keep.then_some(Tape {
            encoders,
            indices,
            bottleneck_conv,
            bottleneck_bn,
            decoders,
            classifier,
            softmax,
        });
        Ok((probs, tape))
    }
}

fn dense_backward<T: Scalar>(
    p: &Parameters<T>,
    block: &str,
    tape: DenseTape<T>,
    grad_out: Tensor<T>,
    grads: &mut Gradients<T>,
) -> Result<Tensor<T>> {
    let DenseTape {
        cin,
        bn1,
        relu1,
        conv1,
        bn2,
        relu2,
        conv2,
        conv3,
    } = tape;
    let c = grad_out.shape().c;

    let g3 = conv3.backward(p.tensor(&format!("{block}.conv3.weight")), &grad_out, true)?;
    record_conv(grads, &format!("{block}.conv3"), g3.weight, g3.bias);
    let d_cat2 = g3.input.expect("input grad requested");
    let (mut d_cat1, d_b) = split_channels(&d_cat2, cin + c)?;
    drop(d_cat2);

    let g2 = conv2.backward(p.tensor(&format!("{block}.conv2.weight")), &d_b, true)?;
    record_conv(grads, &format!("{block}.conv2"), g2.weight, g2.bias);
    let d_h2 = relu2.backward(g2.input.expect("input grad requested"));
    let n2 = bn2.backward(&d_h2)?;
    grads.insert_vec(format!("{block}.bn2.gamma"), n2.gamma);
    grads.insert_vec(format!("{block}.bn2.beta"), n2.beta);
    d_cat1.add_assign(&n2.input);

    let (mut d_x, d_a) = split_channels(&d_cat1, cin)?;
    drop(d_cat1);
    let g1 = conv1.backward(p.tensor(&format!("{block}.conv1.weight")), &d_a, true)?;
    record_conv(grads, &format!("{block}.conv1"), g1.weight, g1.bias);
    let d_h1 = relu1.backward(g1.input.expect("input grad requested"));
    let n1 = bn1.backward(&d_h1)?;
    grads.insert_vec(format!("{block}.bn1.gamma"), n1.gamma);
    grads.insert_vec(format!("{block}.bn1.beta"), n1.beta);
    d_x.add_assign(&n1.input);
    Ok(d_x)
}
