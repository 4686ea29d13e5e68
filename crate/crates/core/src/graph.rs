//! Graphs, batches of graphs and the symmetric-normalized propagation matrix.

use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{GipError, Result};
use crate::scalar::Scalar;
use crate::tensor::{combine_rows, Tensor};

/// An undirected attributed graph with a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor<f64>,
    label: usize,
    dropped: usize,
}

impl Graph {
    /// Builds a graph, canonicalizing each edge to `(min, max)`.
    ///
    /// Self-loops and repeated unordered pairs are dropped (counted in
    /// [`Graph::dropped_edges`]). Out-of-range endpoints are an error.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor<f64>,
        label: usize,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(GipError::Config("graph must have at least one node".into()));
        }
        if features.rows() != num_nodes {
            return Err(GipError::shape(
                "Graph::new",
                format!("{} feature rows for {num_nodes} nodes", features.rows()),
            ));
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut dropped = 0;
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GipError::Config(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            let pair = (u.min(v), u.max(v));
            if u == v || !seen.insert(pair) {
                dropped += 1;
                continue;
            }
            kept.push(pair);
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} self-loop/duplicate edge(s)");
        }
        Ok(Self {
            num_nodes,
            edges: kept,
            features,
            label,
            dropped,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Number of self-loops and duplicate pairs discarded at construction.
    pub fn dropped_edges(&self) -> usize {
        self.dropped
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }
}

/// Disjoint union of graphs in one node space, plus sampled cross-graph edges.
///
/// Augmentations produce new batches sharing `graphs`, `membership` and
/// `features` with their source; only the edge lists differ.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    graphs: Arc<[Graph]>,
    node_offset: Vec<usize>,
    membership: Arc<[usize]>,
    features: Arc<Tensor<f64>>,
    intra_edges: Vec<(usize, usize)>,
    inter_edges: Vec<(usize, usize)>,
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.graphs.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.membership.len()
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn node_offsets(&self) -> &[usize] {
        &self.node_offset
    }

    pub fn graph_size(&self, g: usize) -> usize {
        self.graphs[g].num_nodes()
    }

    /// Node range of graph `g` in the batch node space.
    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        let start = self.node_offset[g];
        start..start + self.graphs[g].num_nodes()
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn shared_membership(&self) -> Arc<[usize]> {
        Arc::clone(&self.membership)
    }

    pub fn features(&self) -> &Tensor<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }

    pub fn intra_edges(&self) -> &[(usize, usize)] {
        &self.intra_edges
    }

    pub fn inter_edges(&self) -> &[(usize, usize)] {
        &self.inter_edges
    }

    /// Number of unordered node pairs joining different graphs.
    pub fn cross_pair_count(&self) -> usize {
        let n = self.num_nodes();
        let same: usize = self.graphs.iter().map(|g| g.num_nodes().pow(2)).sum();
        (n * n - same) / 2
    }

    pub(crate) fn with_edges(
        &self,
        intra_edges: Vec<(usize, usize)>,
        inter_edges: Vec<(usize, usize)>,
    ) -> Self {
        Self {
            graphs: Arc::clone(&self.graphs),
            node_offset: self.node_offset.clone(),
            membership: Arc::clone(&self.membership),
            features: Arc::clone(&self.features),
            intra_edges,
            inter_edges,
        }
    }

    /// Same batch with the inter-graph edges removed.
    pub fn without_inter_edges(&self) -> Self {
        self.with_edges(self.intra_edges.clone(), Vec::new())
    }

    /// Splits the batch back into graphs using the current intra-graph edges.
    pub fn split(&self) -> Vec<Graph> {
        let mut per_graph: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.num_graphs()];
        for &(u, v) in &self.intra_edges {
            let g = self.membership[u];
            let off = self.node_offset[g];
            per_graph[g].push((u - off, v - off));
        }
        self.graphs
            .iter()
            .zip(per_graph)
            .map(|(g, edges)| {
                Graph::new(g.num_nodes(), edges, g.features().clone(), g.label())
                    .expect("batch edges stay within their graph")
            })
            .collect()
    }

    /// Checks the structural invariants of the batch.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(GipError::Config(m));
        for w in self.node_offset.windows(2) {
            if w[0] >= w[1] {
                return err("node offsets not strictly increasing".into());
            }
        }
        for g in 0..self.num_graphs() {
            for v in self.node_range(g) {
                if self.membership[v] != g {
                    return err(format!("membership of node {v} inconsistent with offsets"));
                }
            }
        }
        let mut seen = HashSet::new();
        for &(u, v) in &self.intra_edges {
            if self.membership[u] != self.membership[v] {
                return err(format!("intra edge ({u}, {v}) crosses graphs"));
            }
            if u == v || !seen.insert((u.min(v), u.max(v))) {
                return err(format!("duplicate or self-loop intra edge ({u}, {v})"));
            }
        }
        for &(u, v) in &self.inter_edges {
            if self.membership[u] == self.membership[v] {
                return err(format!("inter edge ({u}, {v}) within one graph"));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return err(format!("duplicate inter edge ({u}, {v})"));
            }
        }
        Ok(())
    }
}

/// Concatenates graphs into one batch with offset-shifted intra edges.
pub fn disjoint_union(graphs: &[Graph]) -> Result<GraphBatch> {
    let first = graphs
        .first()
        .ok_or_else(|| GipError::Config("cannot batch an empty graph list".into()))?;
    let d_in = first.feature_dim();
    if let Some(bad) = graphs.iter().position(|g| g.feature_dim() != d_in) {
        return Err(GipError::Config(format!(
            "graph {bad} has feature dimension {} but graph 0 has {d_in}",
            graphs[bad].feature_dim()
        )));
    }
    let total: usize = graphs.iter().map(Graph::num_nodes).sum();
    let mut node_offset = Vec::with_capacity(graphs.len());
    let mut membership = Vec::with_capacity(total);
    let mut features = Vec::with_capacity(total * d_in);
    let mut intra_edges = Vec::new();
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        node_offset.push(offset);
        membership.extend(std::iter::repeat(gi).take(g.num_nodes()));
        features.extend_from_slice(g.features().as_slice());
        intra_edges.extend(g.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
        offset += g.num_nodes();
    }
    Ok(GraphBatch {
        graphs: graphs.to_vec().into(),
        node_offset,
        membership: membership.into(),
        features: Arc::new(Tensor::from_vec(total, d_in, features)?),
        intra_edges,
        inter_edges: Vec::new(),
    })
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` in compressed-row form.
///
/// When more than half of all cross-graph pairs are connected, the
/// cross-graph block is stored as its complement: every cross pair is
/// implicitly present except the listed absent ones.
#[derive(Clone, Debug)]
pub struct SparseAdjacency<F> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<F>,
    degree: Vec<usize>,
    inv_sqrt_degree: Vec<F>,
    cross: Option<CrossComplement>,
}

#[derive(Clone, Debug)]
struct CrossComplement {
    membership: Arc<[usize]>,
    num_segments: usize,
    absent_ptr: Vec<usize>,
    absent_idx: Vec<usize>,
}

impl<F: Scalar> SparseAdjacency<F> {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Degree of each node in `A + I`.
    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    pub fn inv_sqrt_degree(&self) -> &[F] {
        &self.inv_sqrt_degree
    }

    /// Number of structurally nonzero entries, self-loops included.
    pub fn nnz(&self) -> usize {
        let mut nnz = self.col_idx.len();
        if let Some(cross) = &self.cross {
            let mut sizes = vec![0usize; cross.num_segments];
            for &g in cross.membership.iter() {
                sizes[g] += 1;
            }
            let all: usize = cross.membership.iter().map(|&g| self.n - sizes[g]).sum();
            nnz += all - cross.absent_idx.len();
        }
        nnz
    }

    pub fn is_complement_encoded(&self) -> bool {
        self.cross.is_some()
    }

    fn entry(&self, i: usize, j: usize) -> F {
        F::one() / F::of((self.degree[i] * self.degree[j]) as f64).sqrt()
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        let row = self.row_ptr[i]..self.row_ptr[i + 1];
        if let Some(k) = self.col_idx[row.clone()].iter().position(|&c| c == j) {
            return self.values[row.start + k];
        }
        if let Some(cross) = &self.cross {
            if cross.membership[i] != cross.membership[j]
                && !cross.absent_idx[cross.absent_ptr[i]..cross.absent_ptr[i + 1]].contains(&j)
            {
                return self.entry(i, j);
            }
        }
        F::zero()
    }

    pub fn to_dense(&self) -> Tensor<F> {
        let mut dense = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                dense.set(i, self.col_idx[k], self.values[k]);
            }
        }
        if let Some(cross) = &self.cross {
            for i in 0..self.n {
                for j in 0..self.n {
                    if cross.membership[i] != cross.membership[j] {
                        dense.set(i, j, self.entry(i, j));
                    }
                }
                for &j in &cross.absent_idx[cross.absent_ptr[i]..cross.absent_ptr[i + 1]] {
                    dense.set(i, j, F::zero());
                }
            }
        }
        dense
    }

    /// `Â · x`.
    pub fn apply(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        if x.rows() != self.n {
            return Err(GipError::shape(
                "spmm",
                format!("adjacency {0}x{0} against {1:?}", self.n, x.shape()),
            ));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(self.n, d);
        let xs = x.as_slice();
        for i in 0..self.n {
            let nz = self.row_ptr[i]..self.row_ptr[i + 1];
            let entries = self.col_idx[nz.clone()].iter().copied().zip(self.values[nz].iter().copied());
            combine_rows(out.row_mut(i), entries, xs, d);
        }
        if let Some(cross) = &self.cross {
            let scaled = {
                let mut y = x.clone();
                for i in 0..self.n {
                    let s = self.inv_sqrt_degree[i];
                    y.row_mut(i).iter_mut().for_each(|v| *v = *v * s);
                }
                y
            };
            let mut seg = Tensor::zeros(cross.num_segments, d);
            for i in 0..self.n {
                let g = cross.membership[i];
                for (acc, &v) in seg.row_mut(g).iter_mut().zip(scaled.row(i)) {
                    *acc = *acc + v;
                }
            }
            let mut total = vec![F::zero(); d];
            for g in 0..cross.num_segments {
                for (acc, &v) in total.iter_mut().zip(seg.row(g)) {
                    *acc = *acc + v;
                }
            }
            let mut acc = vec![F::zero(); d];
            for i in 0..self.n {
                let g = cross.membership[i];
                for ((a, &t), &s) in acc.iter_mut().zip(&total).zip(seg.row(g)) {
                    *a = t - s;
                }
                for &j in &cross.absent_idx[cross.absent_ptr[i]..cross.absent_ptr[i + 1]] {
                    for (a, &v) in acc.iter_mut().zip(scaled.row(j)) {
                        *a = *a - v;
                    }
                }
                let s = self.inv_sqrt_degree[i];
                for (o, &a) in out.row_mut(i).iter_mut().zip(&acc) {
                    *o = *o + s * a;
                }
            }
        }
        Ok(out)
    }
}

/// Symmetric GCN normalization over the intra edges, plus the inter edges
/// when `use_inter` is set.
pub fn normalized_adjacency<F: Scalar>(batch: &GraphBatch, use_inter: bool) -> SparseAdjacency<F> {
    let n = batch.num_nodes();
    let inter: &[(usize, usize)] = if use_inter { batch.inter_edges() } else { &[] };
    let cross_pairs = batch.cross_pair_count();
    let complement = !inter.is_empty() && inter.len() * 2 > cross_pairs;

    let mut degree = vec![1usize; n];
    for &(u, v) in batch.intra_edges().iter().chain(inter) {
        degree[u] += 1;
        degree[v] += 1;
    }
    let inv_sqrt_degree: Vec<F> = degree
        .iter()
        .map(|&d| F::one() / F::of(d as f64).sqrt())
        .collect();

    let explicit: &[(usize, usize)] = if complement { &[] } else { inter };
    let mut row_ptr = vec![0usize; n + 1];
    for v in 0..n {
        row_ptr[v + 1] = 1;
    }
    for &(u, v) in batch.intra_edges().iter().chain(explicit) {
        row_ptr[u + 1] += 1;
        row_ptr[v + 1] += 1;
    }
    for v in 0..n {
        row_ptr[v + 1] += row_ptr[v];
    }
    let nnz = row_ptr[n];
    let mut col_idx = vec![0usize; nnz];
    let mut values = vec![F::zero(); nnz];
    let mut cursor: Vec<usize> = row_ptr[..n].to_vec();
    let mut push = |r: usize, c: usize| {
        col_idx[cursor[r]] = c;
        values[cursor[r]] = F::one() / F::of((degree[r] * degree[c]) as f64).sqrt();
        cursor[r] += 1;
    };
    for v in 0..n {
        push(v, v);
    }
    for &(u, v) in batch.intra_edges().iter().chain(explicit) {
        push(u, v);
        push(v, u);
    }

    let cross = complement.then(|| absent_cross_pairs(batch, inter));

    SparseAdjacency {
        n,
        row_ptr,
        col_idx,
        values,
        degree,
        inv_sqrt_degree,
        cross,
    }
}

fn absent_cross_pairs(batch: &GraphBatch, inter: &[(usize, usize)]) -> CrossComplement {
    let n = batch.num_nodes();
    let mut ptr = vec![0usize; n + 1];
    for &(u, v) in inter {
        ptr[u + 1] += 1;
        ptr[v + 1] += 1;
    }
    for v in 0..n {
        ptr[v + 1] += ptr[v];
    }
    let mut present = vec![0usize; ptr[n]];
    let mut cursor: Vec<usize> = ptr[..n].to_vec();
    for &(u, v) in inter {
        present[cursor[u]] = v;
        cursor[u] += 1;
        present[cursor[v]] = u;
        cursor[v] += 1;
    }
    let membership = batch.shared_membership();
    let mut absent_ptr = Vec::with_capacity(n + 1);
    let mut absent_idx = Vec::new();
    absent_ptr.push(0);
    for v in 0..n {
        let row = &mut present[ptr[v]..ptr[v + 1]];
        row.sort_unstable();
        let own = batch.node_range(membership[v]);
        let mut it = row.iter().peekable();
        for u in (0..own.start).chain(own.end..n) {
            if it.peek() == Some(&&u) {
                it.next();
            } else {
                absent_idx.push(u);
            }
        }
        absent_ptr.push(absent_idx.len());
    }
    CrossComplement {
        num_segments: batch.num_graphs(),
        membership,
        absent_ptr,
        absent_idx,
    }
}
