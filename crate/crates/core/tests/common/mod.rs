#![allow(dead_code)]

use giplab::encoder::EncoderConfig;
use giplab::graph::normalized_adjacency;
use giplab::{disjoint_union, EncoderParams, Graph, GraphBatch, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rows: usize, cols: usize, gen: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| gen.gen_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Entries with magnitude in `[0.1, 1)` and random sign; keeps kinks away.
pub fn random_signed(rows: usize, cols: usize, gen: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = gen.gen_range(0.1..1.0);
            if gen.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

pub fn random_graph(n: usize, density: f64, feature_dim: usize, label: usize, gen: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if gen.gen_bool(density) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges, random_tensor(n, feature_dim, gen, -1.0, 1.0), label).unwrap()
}

pub fn random_graphs(count: usize, max_nodes: usize, feature_dim: usize, gen: &mut ChaCha8Rng) -> Vec<Graph> {
    (0..count)
        .map(|i| {
            let n = gen.gen_range(1..=max_nodes);
            random_graph(n, 0.35, feature_dim, i % 2, gen)
        })
        .collect()
}

pub fn random_batch(max_graphs: usize, max_nodes: usize, feature_dim: usize, gen: &mut ChaCha8Rng) -> GraphBatch {
    let count = gen.gen_range(2..=max_graphs);
    disjoint_union(&random_graphs(count, max_nodes, feature_dim, gen)).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn loss_value(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let loss = build(&mut tape, &vars).unwrap();
    tape.value(loss).get(0, 0)
}

/// Largest relative error between reverse-mode gradients and central
/// differences over every entry of every input.
pub fn fd_max_rel_err(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for r in 0..input.rows() {
            for c in 0..input.cols() {
                let mut shifted = inputs.to_vec();
                let x = input.get(r, c);
                shifted[k].set(r, c, x + FD_STEP);
                let up = loss_value(&shifted, &build);
                shifted[k].set(r, c, x - FD_STEP);
                let down = loss_value(&shifted, &build);
                let numeric = (up - down) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(analytic[k].get(r, c), numeric));
            }
        }
    }
    worst
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Per-layer pre-activations computed with dense matrices, independent of
/// the tape.
pub fn dense_preactivations(batch: &GraphBatch, params: &EncoderParams, config: &EncoderConfig) -> Vec<Tensor> {
    let intra = normalized_adjacency::<f64>(batch, false).to_dense();
    let ext = normalized_adjacency::<f64>(batch, true).to_dense();
    let mut h = batch.features().clone();
    let mut out = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        let a = if l < config.gip_start_layer { &intra } else { &ext };
        let mut pre = a.matmul(&h.matmul(&layer.weight).unwrap()).unwrap();
        for r in 0..pre.rows() {
            for c in 0..pre.cols() {
                pre.set(r, c, pre.get(r, c) + layer.bias.get(0, c));
            }
        }
        h = pre.map(relu);
        out.push(pre);
    }
    out
}

/// Dense-oracle graph embeddings: last-layer activations summed per graph.
pub fn dense_embeddings(batch: &GraphBatch, params: &EncoderParams, config: &EncoderConfig) -> Tensor {
    let pre = dense_preactivations(batch, params, config);
    let h = pre.last().unwrap().map(relu);
    let mut z = Tensor::zeros(batch.num_graphs(), h.cols());
    for v in 0..h.rows() {
        let g = batch.membership()[v];
        for c in 0..h.cols() {
            z.set(g, c, z.get(g, c) + h.get(v, c));
        }
    }
    z
}

pub fn min_abs(tensors: &[Tensor]) -> f64 {
    tensors
        .iter()
        .flat_map(|t| t.as_slice().iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}
