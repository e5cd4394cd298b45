//! Graph communication layer: a per-node linear kernel followed by mixing
//! across nodes with a learnable, support-masked row-softmax adjacency.
//!
//! Node `i` receives `h_i = σ(Σ_j Â[i][j] · W_j x_j)` where `Â = rowsoftmax(M ⊙ A)`.
//! Features are stored node-major: `[batch, nodes, channels]`.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::pose_graph::{normalized_adjacency_backward, normalized_adjacency_raw, AdjacencyMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphCommLayerParams {
    /// `[nodes, c_out, c_in]`
    pub weights: Tensor,
    pub mask: AdjacencyMask,
    pub activation: Activation,
}

impl GraphCommLayerParams {
    pub fn new<R: Rng>(mask: AdjacencyMask, c_in: usize, c_out: usize, activation: Activation, rng: &mut R) -> Self {
        let weights = Tensor::he_uniform(&[mask.n, c_out, c_in], c_in, rng);
        GraphCommLayerParams { weights, mask, activation }
    }

    pub fn nodes(&self) -> usize {
        self.weights.shape[0]
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape[1]
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape[2]
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GraphCache {
    pub input: Vec<f64>,
    pub projected: Vec<f64>,
    pub mixing: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn graph_comm_forward(input: &[f64], batch: usize, layer: &GraphCommLayerParams) -> Result<(Vec<f64>, GraphCache)> {
    let (k, co, ci) = (layer.nodes(), layer.c_out(), layer.c_in());
    if input.len() != batch * k * ci {
        return Err(Error::ShapeMismatch(format!(
            "graph layer expects {batch}×{k}×{ci} inputs, got {}",
            input.len()
        )));
    }
    if layer.mask.n != k {
        return Err(Error::ShapeMismatch(format!("mask is {0}×{0}, layer has {k} nodes", layer.mask.n)));
    }
    let w = &layer.weights.data;
    let mut projected = vec![0.0; batch * k * co];
    for b in 0..batch {
        for node in 0..k {
            let x = &input[(b * k + node) * ci..(b * k + node + 1) * ci];
            let wk = &w[node * co * ci..(node + 1) * co * ci];
            let y = &mut projected[(b * k + node) * co..(b * k + node + 1) * co];
            for (o, yo) in y.iter_mut().enumerate() {
                *yo = wk[o * ci..(o + 1) * ci].iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
    }
    let mixing = normalized_adjacency_raw(k, &layer.mask.support, &layer.mask.logits);
    let mut output = vec![0.0; batch * k * co];
    for b in 0..batch {
        for i in 0..k {
            let dst = &mut output[(b * k + i) * co..(b * k + i + 1) * co];
            for j in 0..k {
                let a = mixing[i * k + j];
                if a == 0.0 {
                    continue;
                }
                let y = &projected[(b * k + j) * co..(b * k + j + 1) * co];
                for (d, v) in dst.iter_mut().zip(y) {
                    *d += a * v;
                }
            }
            if layer.activation == Activation::Relu {
                for d in dst.iter_mut() {
                    *d = d.max(0.0);
                }
            }
        }
    }
    let cache = GraphCache {
        input: input.to_vec(),
        projected,
        mixing,
        output: output.clone(),
    };
    Ok((output, cache))
}

pub struct GraphGrads {
    pub d_weights: Vec<f64>,
    pub d_logits: Vec<f64>,
    pub d_input: Vec<f64>,
}

pub fn graph_comm_backward(layer: &GraphCommLayerParams, cache: &GraphCache, batch: usize, d_out: &[f64]) -> GraphGrads {
    let (k, co, ci) = (layer.nodes(), layer.c_out(), layer.c_in());
    let mut d_pre = d_out.to_vec();
    if layer.activation == Activation::Relu {
        for (d, h) in d_pre.iter_mut().zip(&cache.output) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
    }
    let mut d_mix = vec![0.0; k * k];
    let mut d_proj = vec![0.0; batch * k * co];
    for b in 0..batch {
        for i in 0..k {
            let dh = &d_pre[(b * k + i) * co..(b * k + i + 1) * co];
            for j in 0..k {
                if !layer.mask.support[i * k + j] {
                    continue;
                }
                let y = &cache.projected[(b * k + j) * co..(b * k + j + 1) * co];
                d_mix[i * k + j] += dh.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
                let a = cache.mixing[i * k + j];
                let dy = &mut d_proj[(b * k + j) * co..(b * k + j + 1) * co];
                for (d, v) in dy.iter_mut().zip(dh) {
                    *d += a * v;
                }
            }
        }
    }
    let d_logits = normalized_adjacency_backward(k, &layer.mask.support, &cache.mixing, &d_mix);
    let w = &layer.weights.data;
    let mut d_weights = vec![0.0; k * co * ci];
    let mut d_input = vec![0.0; batch * k * ci];
    for b in 0..batch {
        for node in 0..k {
            let x = &cache.input[(b * k + node) * ci..(b * k + node + 1) * ci];
            let dy = &d_proj[(b * k + node) * co..(b * k + node + 1) * co];
            let dw = &mut d_weights[node * co * ci..(node + 1) * co * ci];
            let wk = &w[node * co * ci..(node + 1) * co * ci];
            let dx = &mut d_input[(b * k + node) * ci..(b * k + node + 1) * ci];
            for o in 0..co {
                let g = dy[o];
                if g == 0.0 {
                    continue;
                }
                for c in 0..ci {
                    dw[o * ci + c] += g * x[c];
                    dx[c] += g * wk[o * ci + c];
                }
            }
        }
    }
    GraphGrads {
        d_weights,
        d_logits,
        d_input,
    }
}
