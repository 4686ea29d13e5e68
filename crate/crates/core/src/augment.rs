//! Stochastic view generation: inter-graph edges, DropEdge and AddEdge.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{GipError, Result};
use crate::graph::GraphBatch;

/// Deterministic generator identity. Same seed, same stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeededRng {
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `tag`.
    pub fn fork(&self, tag: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugKind {
    Gip,
    DropEdge,
    AddEdge,
    None,
}

impl AugKind {
    pub fn name(&self) -> &'static str {
        match self {
            AugKind::Gip => "GIP",
            AugKind::DropEdge => "DROP_EDGE",
            AugKind::AddEdge => "ADD_EDGE",
            AugKind::None => "NONE",
        }
    }
}

impl fmt::Display for AugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugKind {
    type Err = GipError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GIP" => Ok(AugKind::Gip),
            "DROP_EDGE" | "DROPEDGE" => Ok(AugKind::DropEdge),
            "ADD_EDGE" | "ADDEDGE" => Ok(AugKind::AddEdge),
            "NONE" => Ok(AugKind::None),
            _ => Err(GipError::Config(format!("unknown augmentation: {s}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugSpec {
    kind: AugKind,
    p: f64,
}

impl AugSpec {
    pub fn new(kind: AugKind, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(GipError::Config(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self { kind, p })
    }

    pub fn none() -> Self {
        Self {
            kind: AugKind::None,
            p: 0.0,
        }
    }

    pub fn gip(p: f64) -> Result<Self> {
        Self::new(AugKind::Gip, p)
    }

    pub fn drop_edge(p: f64) -> Result<Self> {
        Self::new(AugKind::DropEdge, p)
    }

    pub fn add_edge(p: f64) -> Result<Self> {
        Self::new(AugKind::AddEdge, p)
    }

    pub fn kind(&self) -> AugKind {
        self.kind
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn apply(&self, batch: &GraphBatch, rng: &SeededRng) -> GraphBatch {
        match self.kind {
            AugKind::Gip => gip_edges(batch, self.p, rng),
            AugKind::DropEdge => drop_edge(batch, self.p, rng),
            AugKind::AddEdge => add_edge_intra(batch, self.p, rng),
            AugKind::None => batch.clone(),
        }
    }
}

/// One view: optional intra-graph augmentations followed by a main one.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSpec {
    pub pre: Vec<AugSpec>,
    pub main: AugSpec,
}

impl ViewSpec {
    pub fn apply(&self, batch: &GraphBatch, rng: &SeededRng) -> GraphBatch {
        let mut out = batch.clone();
        for (i, step) in self.pre.iter().chain(std::iter::once(&self.main)).enumerate() {
            out = step.apply(&out, &rng.fork(i as u64));
        }
        out
    }
}

impl From<AugSpec> for ViewSpec {
    fn from(main: AugSpec) -> Self {
        Self {
            pre: Vec::new(),
            main,
        }
    }
}

/// Adds every cross-graph node pair independently with probability `p`.
///
/// For each graph pair the edge count is drawn from `Binomial(|Vi||Vj|, p)`
/// and that many distinct pairs are then chosen uniformly, which has the
/// same law as per-pair Bernoulli trials without enumerating candidates.
/// Pairs already present in `inter_edges` are kept.
pub fn gip_edges(batch: &GraphBatch, p: f64, rng: &SeededRng) -> GraphBatch {
    let mut inter = batch.inter_edges().to_vec();
    if p > 0.0 {
        let existing: std::collections::HashSet<(usize, usize)> =
            inter.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        let mut gen = rng.generator();
        let offsets = batch.node_offsets();
        let g = batch.num_graphs();
        for i in 0..g {
            let ni = batch.graph_size(i);
            for j in i + 1..g {
                let nj = batch.graph_size(j);
                let pairs = ni * nj;
                let count = if p >= 1.0 {
                    pairs
                } else {
                    Binomial::new(pairs as u64, p)
                        .expect("p validated in [0, 1]")
                        .sample(&mut gen) as usize
                };
                if count == 0 {
                    continue;
                }
                let mut picks = if count == pairs {
                    (0..pairs).collect::<Vec<_>>()
                } else {
                    index::sample(&mut gen, pairs, count).into_vec()
                };
                picks.sort_unstable();
                for idx in picks {
                    let e = (offsets[i] + idx / nj, offsets[j] + idx % nj);
                    if existing.is_empty() || !existing.contains(&e) {
                        inter.push(e);
                    }
                }
            }
        }
    }
    batch.with_edges(batch.intra_edges().to_vec(), inter)
}

/// Removes each intra-graph edge independently with probability `p`.
pub fn drop_edge(batch: &GraphBatch, p: f64, rng: &SeededRng) -> GraphBatch {
    let mut gen = rng.generator();
    let kept = batch
        .intra_edges()
        .iter()
        .copied()
        .filter(|_| !gen.gen_bool(p))
        .collect();
    batch.with_edges(kept, batch.inter_edges().to_vec())
}

/// Adds each absent within-graph pair independently with probability `p`.
pub fn add_edge_intra(batch: &GraphBatch, p: f64, rng: &SeededRng) -> GraphBatch {
    let mut gen = rng.generator();
    let mut intra = batch.intra_edges().to_vec();
    let mut present = Vec::new();
    let mut by_graph: Vec<Vec<(usize, usize)>> = vec![Vec::new(); batch.num_graphs()];
    for &(u, v) in batch.intra_edges() {
        by_graph[batch.membership()[u]].push((u, v));
    }
    for (g, edges) in by_graph.iter().enumerate() {
        let range = batch.node_range(g);
        let n = range.len();
        present.clear();
        present.resize(n * n, false);
        for &(u, v) in edges {
            let (a, b) = (u - range.start, v - range.start);
            present[a * n + b] = true;
            present[b * n + a] = true;
        }
        for a in 0..n {
            for b in a + 1..n {
                if !present[a * n + b] && gen.gen_bool(p) {
                    intra.push((range.start + a, range.start + b));
                }
            }
        }
    }
    batch.with_edges(intra, batch.inter_edges().to_vec())
}

/// Two independently augmented copies of `batch`, drawn from the
/// substreams `rng.fork(0)` and `rng.fork(1)`.
pub fn make_views(
    batch: &GraphBatch,
    view1: &ViewSpec,
    view2: &ViewSpec,
    rng: &SeededRng,
) -> (GraphBatch, GraphBatch) {
    (
        view1.apply(batch, &rng.fork(0)),
        view2.apply(batch, &rng.fork(1)),
    )
}
