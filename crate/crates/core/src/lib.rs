//! Graph self-supervised pretraining with inter-graph edge augmentation.
//!
//! Graphs in a minibatch are joined into one disjoint union, random edges
//! are drawn between different graphs, and a GCN encoder is trained with a
//! contrastive or redundancy-reduction objective on two such views.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod objectives;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use augment::{make_views, AugKind, AugSpec, SeededRng, ViewSpec};
pub use autodiff::Var;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::TrainConfig;
pub use data::{DatasetSource, SynthSpec};
pub use encoder::EncoderConfig;
pub use error::{GipError, Result};
pub use eval::{cmsp, embed_dataset, lemma1_verify, linear_probe, CmspReport, EmbeddingTable, Lemma1Report, ProbeResult};
pub use graph::{disjoint_union, normalized_adjacency, Graph, GraphBatch};
pub use objectives::{ObjectiveConfig, ObjectiveKind};
pub use scalar::Scalar;
pub use training::{pretrain, LossRecord};

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type Gradients = autodiff::Gradients<f64>;
pub type SparseAdjacency = graph::SparseAdjacency<f64>;
pub type EncoderParams = encoder::EncoderParams<f64>;
pub type ModelState = training::ModelState<f64>;
pub type TrainOutcome = training::TrainOutcome<f64>;
