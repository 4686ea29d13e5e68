//! Multi-layer GCN encoder with additive readout.

use std::sync::Arc;

use rand::Rng;

use crate::augment::SeededRng;
use crate::autodiff::{Tape, Var};
use crate::error::{GipError, Result};
use crate::graph::{normalized_adjacency, GraphBatch, SparseAdjacency};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_LAYERS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    /// Layers with index below this use intra-graph edges only.
    pub gip_start_layer: usize,
}

impl EncoderConfig {
    pub fn new(num_layers: usize, hidden_dim: usize, input_dim: usize) -> Result<Self> {
        let c = Self {
            num_layers,
            hidden_dim,
            input_dim,
            gip_start_layer: 0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_start_layer(mut self, s: usize) -> Result<Self> {
        self.gip_start_layer = s;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LAYERS).contains(&self.num_layers) {
            return Err(GipError::Config(format!(
                "num_layers {} outside [1, {MAX_LAYERS}]",
                self.num_layers
            )));
        }
        if self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(GipError::Config("hidden_dim and input_dim must be positive".into()));
        }
        if self.gip_start_layer > self.num_layers {
            return Err(GipError::Config(format!(
                "gip_start_layer {} exceeds num_layers {}",
                self.gip_start_layer, self.num_layers
            )));
        }
        Ok(())
    }

    fn layer_dims(&self, l: usize) -> (usize, usize) {
        let fan_in = if l == 0 { self.input_dim } else { self.hidden_dim };
        (fan_in, self.hidden_dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F> {
    pub layers: Vec<LayerParams<F>>,
}

/// Tape handles for one registration of [`EncoderParams`].
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub layers: Vec<(Var, Var)>,
}

impl EncoderVars {
    pub fn iter(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<F: Scalar>(config: &EncoderConfig, rng: &SeededRng) -> EncoderParams<F> {
    let layers = (0..config.num_layers)
        .map(|l| {
            let (fan_in, fan_out) = config.layer_dims(l);
            LayerParams {
                weight: glorot_uniform(fan_in, fan_out, &rng.fork(l as u64)),
                bias: Tensor::zeros(1, fan_out),
            }
        })
        .collect();
    EncoderParams { layers }
}

pub fn glorot_uniform<F: Scalar>(fan_in: usize, fan_out: usize, rng: &SeededRng) -> Tensor<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut gen = rng.generator();
    let data = (0..fan_in * fan_out)
        .map(|_| F::of(gen.gen_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(fan_in, fan_out, data).expect("sized by construction")
}

impl<F: Scalar> EncoderParams<F> {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn register(&self, tape: &mut Tape<F>) -> Result<EncoderVars> {
        self.register_with(tape, true)
    }

    /// Registers the parameters as constants (inference or a stop-gradient target).
    pub fn register_frozen(&self, tape: &mut Tape<F>) -> Result<EncoderVars> {
        self.register_with(tape, false)
    }

    fn register_with(&self, tape: &mut Tape<F>, trainable: bool) -> Result<EncoderVars> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (w, b) = if trainable {
                (tape.param(layer.weight.clone())?, tape.param(layer.bias.clone())?)
            } else {
                (tape.constant(layer.weight.clone())?, tape.constant(layer.bias.clone())?)
            };
            layers.push((w, b));
        }
        Ok(EncoderVars { layers })
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// `(name, tensor)` pairs in checkpoint order, names prefixed with `prefix`.
    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor<F>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, p)| {
                [
                    (format!("{prefix}.w{l}"), &p.weight),
                    (format!("{prefix}.b{l}"), &p.bias),
                ]
            })
            .collect()
    }

    pub fn check_against(&self, config: &EncoderConfig) -> Result<()> {
        if self.layers.len() != config.num_layers {
            return Err(GipError::Compatibility(format!(
                "{} parameter layers, config expects {}",
                self.layers.len(),
                config.num_layers
            )));
        }
        for (l, p) in self.layers.iter().enumerate() {
            let (i, o) = config.layer_dims(l);
            if p.weight.shape() != (i, o) || p.bias.shape() != (1, o) {
                return Err(GipError::Compatibility(format!(
                    "layer {l}: weight {:?}, bias {:?}, expected ({i}, {o})",
                    p.weight.shape(),
                    p.bias.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Propagation matrices for one view.
pub struct ViewAdjacency<F> {
    pub intra: Arc<SparseAdjacency<F>>,
    pub extended: Arc<SparseAdjacency<F>>,
}

impl<F: Scalar> ViewAdjacency<F> {
    pub fn build(view: &GraphBatch, config: &EncoderConfig) -> Self {
        let needs_intra = config.gip_start_layer > 0 || view.inter_edges().is_empty();
        let needs_ext = config.gip_start_layer < config.num_layers && !view.inter_edges().is_empty();
        let intra = needs_intra.then(|| Arc::new(normalized_adjacency(view, false)));
        let extended = needs_ext.then(|| Arc::new(normalized_adjacency(view, true)));
        match (intra, extended) {
            (Some(i), Some(e)) => Self { intra: i, extended: e },
            (Some(i), None) => Self {
                extended: Arc::clone(&i),
                intra: i,
            },
            (None, Some(e)) => Self {
                intra: Arc::clone(&e),
                extended: e,
            },
            (None, None) => unreachable!("at least one adjacency is always needed"),
        }
    }

    pub fn for_layer(&self, l: usize, config: &EncoderConfig) -> &Arc<SparseAdjacency<F>> {
        if l < config.gip_start_layer {
            &self.intra
        } else {
            &self.extended
        }
    }
}

/// Node representations `H⁽ˡ⁺¹⁾ = ReLU(Â_l H⁽ˡ⁾ W⁽ˡ⁾ + b⁽ˡ⁾)` after every layer.
pub fn encode_nodes<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    view: &GraphBatch,
    config: &EncoderConfig,
) -> Result<Var> {
    if view.feature_dim() != config.input_dim {
        return Err(GipError::shape(
            "encode_nodes",
            format!("features have {} columns, encoder expects {}", view.feature_dim(), config.input_dim),
        ));
    }
    if vars.layers.len() != config.num_layers {
        return Err(GipError::shape(
            "encode_nodes",
            format!("{} layers registered, config has {}", vars.layers.len(), config.num_layers),
        ));
    }
    let adj = ViewAdjacency::build(view, config);
    let mut h = tape.constant(view.features().cast())?;
    for (l, &(w, b)) in vars.layers.iter().enumerate() {
        let a = adj.for_layer(l, config);
        let (fan_in, fan_out) = tape.value(w).shape();
        // Propagate over the narrower side of the layer.
        let lin = if fan_in <= fan_out {
            let agg = tape.spmm(a, h)?;
            tape.matmul(agg, w)?
        } else {
            let hw = tape.matmul(h, w)?;
            tape.spmm(a, hw)?
        };
        let pre = tape.add_bias_row(lin, b)?;
        h = tape.relu(pre)?;
    }
    Ok(h)
}

/// Sums node rows per graph of the original membership.
pub fn pool_graphs<F: Scalar>(tape: &mut Tape<F>, node_reps: Var, batch: &GraphBatch) -> Result<Var> {
    if tape.value(node_reps).rows() != batch.num_nodes() {
        return Err(GipError::shape(
            "pool_graphs",
            format!("{} rows for {} nodes", tape.value(node_reps).rows(), batch.num_nodes()),
        ));
    }
    tape.segment_sum(node_reps, &batch.shared_membership(), batch.num_graphs())
}

pub fn encode_view<F: Scalar>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    view: &GraphBatch,
    config: &EncoderConfig,
) -> Result<Var> {
    let h = encode_nodes(tape, vars, view, config)?;
    pool_graphs(tape, h, view)
}

/// Graph embeddings of `view` without recording gradients.
pub fn embed_view<F: Scalar>(params: &EncoderParams<F>, view: &GraphBatch, config: &EncoderConfig) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape)?;
    let z = encode_view(&mut tape, &vars, view, config)?;
    Ok(tape.value(z).clone())
}
