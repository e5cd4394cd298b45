//! Shared convolutional encoder + three graph communication layers producing
//! one row of six action values per agent.

use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph_layer::{graph_comm_backward, graph_comm_forward, Activation, GraphCache, GraphCommLayerParams};
use super::ops::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, conv3d_backward, conv3d_forward, maxpool_backward,
    maxpool_forward, pool_out, BnBatchStats, ConvGeom, BN_MOMENTUM, KERNEL_VOL,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::pose_graph::{build_fetal_graph, AdjacencyMask, NUM_LANDMARKS};
use crate::volume::NUM_ACTIONS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub patch: usize,
    /// Channel count per block; each block is two conv→BN→ReLU stacks then a pool.
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub encoder: EncoderConfig,
    pub graph_widths: Vec<usize>,
}

impl NetConfig {
    /// Four blocks of 32/64/128/256 channels on 48³ patches, graph widths 256/128/6.
    pub fn paper() -> Self {
        NetConfig {
            encoder: EncoderConfig {
                patch: 48,
                channels: vec![32, 64, 128, 256],
            },
            graph_widths: vec![256, 128, NUM_ACTIONS],
        }
    }

    /// CPU-sized default: two blocks of 8/16 channels on 24³ patches.
    pub fn desk() -> Self {
        NetConfig {
            encoder: EncoderConfig {
                patch: 24,
                channels: vec![8, 16],
            },
            graph_widths: vec![256, 128, NUM_ACTIONS],
        }
    }

    /// Gradient-check sized network.
    pub fn tiny() -> Self {
        NetConfig {
            encoder: EncoderConfig {
                patch: 8,
                channels: vec![8],
            },
            graph_widths: vec![8, 8, NUM_ACTIONS],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown network preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.channels.is_empty() || self.encoder.patch == 0 {
            return Err(Error::Config("encoder needs at least one block and a nonzero patch".into()));
        }
        if self.graph_widths.last() != Some(&NUM_ACTIONS) || self.graph_widths.is_empty() {
            return Err(Error::Config(format!("last graph width must be {NUM_ACTIONS}")));
        }
        Ok(())
    }

    /// Conv geometry of every stack in order. Only the first stack of a block strides.
    pub fn conv_geoms(&self) -> Vec<ConvGeom> {
        let mut geoms = Vec::new();
        let mut size = self.encoder.patch;
        let mut c_in = 1;
        for &c in &self.encoder.channels {
            for stack in 0..2 {
                let g = ConvGeom {
                    c_in,
                    c_out: c,
                    in_size: size,
                    stride: if stack == 0 { 2 } else { 1 },
                };
                size = g.out_size();
                c_in = c;
                geoms.push(g);
            }
            size = pool_out(size);
        }
        geoms
    }

    pub fn final_spatial(&self) -> usize {
        let mut size = self.encoder.patch;
        for _ in &self.encoder.channels {
            size = super::ops::conv_out(size, 2);
            size = pool_out(size);
        }
        size
    }

    pub fn feature_len(&self) -> usize {
        self.encoder.channels.last().copied().unwrap_or(0) * self.final_spatial().pow(3)
    }

    pub fn patch_len(&self) -> usize {
        self.encoder.patch.pow(3)
    }

    /// Stable text form used in checkpoints.
    pub fn describe(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "patch={};channels={};graph={}",
            self.encoder.patch,
            join(&self.encoder.channels),
            join(&self.graph_widths)
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut patch = None;
        let mut channels = None;
        let mut graph = None;
        let list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| Error::Config(format!("bad list {v:?}: {e}"))))
                .collect()
        };
        for part in text.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad network description {text:?}")))?;
            match k.trim() {
                "patch" => patch = Some(v.trim().parse().map_err(|e| Error::Config(format!("patch: {e}")))?),
                "channels" => channels = Some(list(v)?),
                "graph" => graph = Some(list(v)?),
                other => return Err(Error::Config(format!("unknown network key {other:?}"))),
            }
        }
        let cfg = NetConfig {
            encoder: EncoderConfig {
                patch: patch.ok_or_else(|| Error::Config("missing patch".into()))?,
                channels: channels.ok_or_else(|| Error::Config("missing channels".into()))?,
            },
            graph_widths: graph.ok_or_else(|| Error::Config("missing graph".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub geom: ConvGeom,
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    pub config: NetConfig,
    pub convs: Vec<ConvBn>,
    pub graph: Vec<GraphCommLayerParams>,
    pub version: u64,
}

impl QNetworkParams {
    /// He-uniform conv and graph kernels, zero biases, unit BN scale, and zero
    /// adjacency logits (uniform attention over each node's neighborhood).
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.final_spatial() == 0 {
            return Err(Error::Config("encoder collapses the patch to zero extent".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = config
            .conv_geoms()
            .into_iter()
            .map(|g| ConvBn {
                geom: g,
                weight: Tensor::he_uniform(&[g.c_out, g.c_in, 3, 3, 3], g.c_in * KERNEL_VOL, &mut rng),
                bias: Tensor::zeros(&[g.c_out]),
                gamma: Tensor::filled(&[g.c_out], 1.0),
                beta: Tensor::zeros(&[g.c_out]),
                running_mean: Tensor::zeros(&[g.c_out]),
                running_var: Tensor::filled(&[g.c_out], 1.0),
            })
            .collect();
        let mask = AdjacencyMask::from_graph(&build_fetal_graph());
        let mut c_in = config.feature_len();
        let n_layers = config.graph_widths.len();
        let graph = config
            .graph_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let act = if i + 1 == n_layers { Activation::Identity } else { Activation::Relu };
                let layer = GraphCommLayerParams::new(mask.clone(), c_in, w, act, &mut rng);
                c_in = w;
                layer
            })
            .collect();
        Ok(QNetworkParams {
            config: config.clone(),
            convs,
            graph,
            version: 0,
        })
    }

    /// Names of trainable tensors in canonical order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, _) in self.convs.iter().enumerate() {
            let p = format!("encoder.block{}.stack{}", i / 2, i % 2);
            for t in ["conv.weight", "conv.bias", "bn.gamma", "bn.beta"] {
                names.push(format!("{p}.{t}"));
            }
        }
        for (i, _) in self.graph.iter().enumerate() {
            names.push(format!("graph{i}.weight"));
            names.push(format!("graph{i}.mask"));
        }
        names
    }

    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.extend([&c.weight.data[..], &c.bias.data[..], &c.gamma.data[..], &c.beta.data[..]]);
        }
        for g in &self.graph {
            out.push(&g.weights.data);
            out.push(&g.mask.logits);
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight.data);
            out.push(&mut c.bias.data);
            out.push(&mut c.gamma.data);
            out.push(&mut c.beta.data);
        }
        for g in &mut self.graph {
            out.push(&mut g.weights.data);
            out.push(&mut g.mask.logits);
        }
        out
    }

    pub fn trainable_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend([c.weight.shape.clone(), c.bias.shape.clone(), c.gamma.shape.clone(), c.beta.shape.clone()]);
        }
        for g in &self.graph {
            out.push(g.weights.shape.clone());
            out.push(vec![g.mask.n, g.mask.n]);
        }
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn running_stats(&self) -> Vec<(&[f64], &[f64])> {
        self.convs.iter().map(|c| (&c.running_mean.data[..], &c.running_var.data[..])).collect()
    }

    /// Exponential moving update of batch-norm running statistics.
    pub fn update_running_stats(&mut self, stats: &[BnBatchStats]) {
        for (c, s) in self.convs.iter_mut().zip(stats) {
            for (r, m) in c.running_mean.data.iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, v) in c.running_var.data.iter_mut().zip(&s.var_unbiased) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }

    /// Every persistent tensor as `(name, shape, values)`: trainables, then batch-norm running statistics.
    pub fn state_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = self
            .trainable_names()
            .into_iter()
            .zip(self.trainable_shapes())
            .zip(self.trainable())
            .map(|((n, s), t)| (n, s, t))
            .collect();
        for (i, c) in self.convs.iter().enumerate() {
            let p = format!("encoder.block{}.stack{}", i / 2, i % 2);
            out.push((format!("{p}.bn.running_mean"), c.running_mean.shape.clone(), &c.running_mean.data));
            out.push((format!("{p}.bn.running_var"), c.running_var.shape.clone(), &c.running_var.data));
        }
        out
    }

    /// Mutable views in the order of [`state_tensors`](Self::state_tensors).
    pub fn state_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let mut stats: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            let ConvBn {
                weight,
                bias,
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } = c;
            out.extend([&mut weight.data[..], &mut bias.data[..], &mut gamma.data[..], &mut beta.data[..]]);
            stats.extend([&mut running_mean.data[..], &mut running_var.data[..]]);
        }
        for g in &mut self.graph {
            out.push(&mut g.weights.data);
            out.push(&mut g.mask.logits);
        }
        out.extend(stats);
        out
    }

    /// Hash over every parameter bit, the running statistics and the version.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        h.write_u64(self.version);
        for t in self.trainable() {
            for v in t {
                h.write_u64(v.to_bits());
            }
        }
        for (m, v) in self.running_stats() {
            for x in m.iter().chain(v) {
                h.write_u64(x.to_bits());
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &QNetworkParams) -> Self {
        Gradients {
            tensors: params.trainable().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.tensors.iter_mut().flatten() {
            *g *= s;
        }
    }
}

struct StackCache {
    input: Vec<f64>,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    relu_out: Vec<f64>,
    pool_arg: Option<Vec<u32>>,
}

/// Recorded forward pass.
pub struct Tape {
    samples: usize,
    batch: usize,
    stacks: Vec<StackCache>,
    graph: Vec<GraphCache>,
}

pub struct Forward {
    /// `[batch, agents, actions]`
    pub q: Vec<f64>,
    pub features: Vec<f64>,
    /// Batch statistics per conv stack (training mode only).
    pub bn_stats: Vec<BnBatchStats>,
    pub tape: Option<Tape>,
}

fn check_patches(params: &QNetworkParams, patches: &[f64], samples: usize) -> Result<()> {
    let want = samples * params.config.patch_len();
    if patches.len() != want {
        return Err(Error::ShapeMismatch(format!(
            "expected {samples} patches of side {} ({want} values), got {}",
            params.config.encoder.patch,
            patches.len()
        )));
    }
    Ok(())
}

fn encode(
    params: &QNetworkParams,
    patches: &[f64],
    samples: usize,
    train_mode: bool,
    record: bool,
) -> Result<(Vec<f64>, Vec<BnBatchStats>, Vec<StackCache>)> {
    check_patches(params, patches, samples)?;
    let mut x = patches.to_vec();
    let mut stats = Vec::new();
    let mut caches = Vec::new();
    for (i, c) in params.convs.iter().enumerate() {
        let g = c.geom;
        let vol = g.out_size().pow(3);
        let pre = conv3d_forward(&g, samples, &x, &c.weight.data, &c.bias.data);
        let (mut y, x_hat, inv_std) = if train_mode {
            let bn = batchnorm_train(samples, g.c_out, vol, &pre, &c.gamma.data, &c.beta.data);
            stats.push(bn.stats);
            (bn.out, bn.x_hat, bn.inv_std)
        } else {
            let out = batchnorm_eval(
                samples,
                g.c_out,
                vol,
                &pre,
                &c.gamma.data,
                &c.beta.data,
                &c.running_mean.data,
                &c.running_var.data,
            );
            (out, Vec::new(), Vec::new())
        };
        for v in &mut y {
            *v = v.max(0.0);
        }
        let pooled = if i % 2 == 1 {
            let (p, arg) = maxpool_forward(samples, g.c_out, g.out_size(), &y);
            Some((p, arg))
        } else {
            None
        };
        let input = std::mem::take(&mut x);
        let (next, pool_arg) = match pooled {
            Some((p, arg)) => (p, Some(arg)),
            None => (y.clone(), None),
        };
        if record {
            caches.push(StackCache {
                input,
                x_hat,
                inv_std,
                relu_out: y,
                pool_arg,
            });
        }
        x = next;
    }
    Ok((x, stats, caches))
}

/// Applies the shared encoder to every patch; returns `[samples, feature_len]`.
pub fn encoder_forward(params: &QNetworkParams, patches: &[f64], samples: usize, train_mode: bool) -> Result<Vec<f64>> {
    Ok(encode(params, patches, samples, train_mode, false)?.0)
}

/// Runs the graph layers on encoder features `[batch, agents, feature_len]`.
pub fn graph_head_forward(params: &QNetworkParams, features: &[f64], batch: usize) -> Result<Vec<f64>> {
    let mut x = features.to_vec();
    for layer in &params.graph {
        x = graph_comm_forward(&x, batch, layer)?.0;
    }
    Ok(x)
}

/// Full forward for `batch` joint states (`batch * 15` patches, agent-minor).
pub fn q_forward(params: &QNetworkParams, patches: &[f64], batch: usize, train_mode: bool, record: bool) -> Result<Forward> {
    let samples = batch * NUM_LANDMARKS;
    let (features, bn_stats, stacks) = encode(params, patches, samples, train_mode, record)?;
    let mut x = features.clone();
    let mut graph = Vec::new();
    for layer in &params.graph {
        let (out, cache) = graph_comm_forward(&x, batch, layer)?;
        if record {
            graph.push(cache);
        }
        x = out;
    }
    let tape = record.then_some(Tape {
        samples,
        batch,
        stacks,
        graph,
    });
    Ok(Forward {
        q: x,
        features,
        bn_stats,
        tape,
    })
}

/// Reverse-mode gradients of a scalar loss given `d_q = ∂loss/∂Q`.
pub fn backward(params: &QNetworkParams, forward: &Forward, d_q: &[f64]) -> Result<Gradients> {
    let tape = forward.tape.as_ref().ok_or(Error::GraphNotRecorded)?;
    if d_q.len() != forward.q.len() {
        return Err(Error::ShapeMismatch(format!("dQ has {} entries, Q has {}", d_q.len(), forward.q.len())));
    }
    let mut grads = Gradients::zeros_like(params);
    let conv_slots = params.convs.len() * 4;

    let mut d = d_q.to_vec();
    for (li, layer) in params.graph.iter().enumerate().rev() {
        let g = graph_comm_backward(layer, &tape.graph[li], tape.batch, &d);
        grads.tensors[conv_slots + 2 * li] = g.d_weights;
        grads.tensors[conv_slots + 2 * li + 1] = g.d_logits;
        d = g.d_input;
    }

    let n = tape.samples;
    for (i, c) in params.convs.iter().enumerate().rev() {
        let cache = &tape.stacks[i];
        let g = c.geom;
        let o = g.out_size();
        let vol = o.pow(3);
        if let Some(arg) = &cache.pool_arg {
            d = maxpool_backward(n, g.c_out, o, arg, &d);
        }
        if cache.x_hat.is_empty() {
            return Err(Error::GraphNotRecorded);
        }
        for (dv, y) in d.iter_mut().zip(&cache.relu_out) {
            if *y <= 0.0 {
                *dv = 0.0;
            }
        }
        let (head, tail) = grads.tensors.split_at_mut(4 * i + 2);
        let (d_gamma, d_beta) = tail.split_at_mut(1);
        d = batchnorm_backward(n, g.c_out, vol, &cache.x_hat, &cache.inv_std, &c.gamma.data, &d, &mut d_gamma[0], &mut d_beta[0]);
        let (dw, db) = head[4 * i..].split_at_mut(1);
        match conv3d_backward(&g, n, &cache.input, &c.weight.data, &d, &mut dw[0], &mut db[0], i > 0) {
            Some(d_in) => d = d_in,
            None => break,
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_patches(n: usize, side: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * side.pow(3)).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    #[test]
    fn preset_shapes() {
        assert_eq!(NetConfig::desk().final_spatial(), 2);
        assert_eq!(NetConfig::desk().feature_len(), 128);
        assert_eq!(NetConfig::paper().final_spatial(), 1);
        assert_eq!(NetConfig::paper().feature_len(), 256);
        assert_eq!(NetConfig::tiny().feature_len(), 64);
        for cfg in [NetConfig::paper(), NetConfig::desk(), NetConfig::tiny()] {
            assert_eq!(NetConfig::parse(&cfg.describe()).unwrap(), cfg);
        }
        assert!(NetConfig::preset("huge").is_err());
    }

    #[test]
    fn q_shape_and_finite() {
        let p = QNetworkParams::init(&NetConfig::desk(), 1).unwrap();
        let patches = random_patches(2 * 15, 24, 2);
        for train in [false, true] {
            let f = q_forward(&p, &patches, 2, train, false).unwrap();
            assert_eq!(f.q.len(), 2 * 15 * 6);
            assert!(f.q.iter().all(|v| v.is_finite()));
        }
        assert!(matches!(q_forward(&p, &patches[1..], 2, false, false), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn shared_encoder_gives_identical_rows() {
        let p = QNetworkParams::init(&NetConfig::tiny(), 3).unwrap();
        let mut patches = random_patches(15, 8, 4);
        let (a, b) = (2, 11);
        let src = patches[a * 512..(a + 1) * 512].to_vec();
        patches[b * 512..(b + 1) * 512].copy_from_slice(&src);
        let f = encoder_forward(&p, &patches, 15, false).unwrap();
        let len = p.config.feature_len();
        assert_eq!(f[a * len..(a + 1) * len], f[b * len..(b + 1) * len]);
    }

    #[test]
    fn zero_patch_gives_zero_preactivation() {
        let p = QNetworkParams::init(&NetConfig::tiny(), 3).unwrap();
        let g = p.convs[0].geom;
        let out = conv3d_forward(&g, 1, &vec![0.0; 512], &p.convs[0].weight.data, &p.convs[0].bias.data);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perturbing_one_agent_reaches_others() {
        let p = QNetworkParams::init(&NetConfig::tiny(), 5).unwrap();
        let patches = random_patches(15, 8, 6);
        let base = q_forward(&p, &patches, 1, false, false).unwrap().q;
        let mut moved = patches.clone();
        for v in &mut moved[..512] {
            *v += 0.5;
        }
        let after = q_forward(&p, &moved, 1, false, false).unwrap().q;
        let changed = (1..15).filter(|&k| (0..6).any(|a| base[k * 6 + a] != after[k * 6 + a])).count();
        assert!(changed > 0);
    }

    #[test]
    fn backward_requires_tape() {
        let p = QNetworkParams::init(&NetConfig::tiny(), 5).unwrap();
        let patches = random_patches(15, 8, 6);
        let f = q_forward(&p, &patches, 1, true, false).unwrap();
        assert!(matches!(backward(&p, &f, &vec![1.0; 90]), Err(Error::GraphNotRecorded)));
        let f = q_forward(&p, &patches, 1, false, true).unwrap();
        assert!(matches!(backward(&p, &f, &vec![1.0; 90]), Err(Error::GraphNotRecorded)));
    }

    #[test]
    fn gradients_are_linear_in_loss() {
        let p = QNetworkParams::init(&NetConfig::tiny(), 7).unwrap();
        let patches = random_patches(30, 8, 8);
        let f = q_forward(&p, &patches, 2, true, true).unwrap();
        let dq: Vec<f64> = (0..f.q.len()).map(|i| ((i % 7) as f64 - 3.0) * 0.1).collect();
        let g1 = backward(&p, &f, &dq).unwrap();
        let dq2: Vec<f64> = dq.iter().map(|v| 2.0 * v).collect();
        let g2 = backward(&p, &f, &dq2).unwrap();
        for (a, b) in g1.tensors.iter().flatten().zip(g2.tensors.iter().flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        // masked-out adjacency logits never receive gradient
        let names = p.trainable_names();
        for (li, layer) in p.graph.iter().enumerate() {
            let idx = names.iter().position(|n| n == &format!("graph{li}.mask")).unwrap();
            for (j, s) in layer.mask.support.iter().enumerate() {
                if !s {
                    assert_eq!(g1.tensors[idx][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn encoder_parameter_count_is_agent_independent() {
        let p = QNetworkParams::init(&NetConfig::desk(), 1).unwrap();
        let conv: usize = p.trainable()[..p.convs.len() * 4].iter().map(|t| t.len()).sum();
        // 8·1·27 + 8·8·27 + 16·8·27 + 16·16·27 weights, plus bias/gamma/beta per channel
        assert_eq!(conv, 216 + 1728 + 3456 + 6912 + 3 * (8 + 8 + 16 + 16));
    }
}
