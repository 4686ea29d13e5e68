//! Synthetic multi-manifold datasets, TU-format ingestion and stratified folds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::augment::SeededRng;
use crate::error::{GipError, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

pub const DEFAULT_DEGREE_CAP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeneratorFamily {
    /// Every pair independently with probability `rho`.
    ErdosRenyi { rho: f64 },
    /// Two equal communities; `rho_in` within, `rho_out` across.
    PlantedTwoCommunity { rho_in: f64, rho_out: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManifoldSpec {
    pub family: GeneratorFamily,
    pub n_min: usize,
    pub n_max: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMode {
    /// One-hot degree; degrees at or above `cap` share the last of `cap + 1` buckets.
    DegreeOneHot { cap: usize },
    Constant,
}

impl FeatureMode {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMode::DegreeOneHot { cap } => cap + 1,
            FeatureMode::Constant => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub manifolds: Vec<ManifoldSpec>,
    pub graphs_per_manifold: usize,
    pub features: FeatureMode,
}

impl SynthSpec {
    /// Two manifolds: sparse Erdős–Rényi versus planted two-community graphs.
    pub fn synth_2m() -> Self {
        Self {
            manifolds: vec![
                ManifoldSpec {
                    family: GeneratorFamily::ErdosRenyi { rho: 0.15 },
                    n_min: 12,
                    n_max: 24,
                },
                ManifoldSpec {
                    family: GeneratorFamily::PlantedTwoCommunity {
                        rho_in: 0.5,
                        rho_out: 0.05,
                    },
                    n_min: 12,
                    n_max: 24,
                },
            ],
            graphs_per_manifold: 150,
            features: FeatureMode::DegreeOneHot {
                cap: DEFAULT_DEGREE_CAP,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifolds.len() < 2 {
            return Err(GipError::Config("synthetic spec needs at least 2 manifolds".into()));
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        for (k, m) in self.manifolds.iter().enumerate() {
            if m.n_min < 3 || m.n_max < m.n_min {
                return Err(GipError::Config(format!(
                    "manifold {k}: node range [{}, {}] invalid (n_min >= 3)",
                    m.n_min, m.n_max
                )));
            }
            let ok = match m.family {
                GeneratorFamily::ErdosRenyi { rho } => unit(rho),
                GeneratorFamily::PlantedTwoCommunity { rho_in, rho_out } => unit(rho_in) && unit(rho_out),
            };
            if !ok {
                return Err(GipError::Config(format!("manifold {k}: density outside [0, 1]")));
            }
        }
        if self.graphs_per_manifold == 0 {
            return Err(GipError::Config("graphs_per_manifold must be positive".into()));
        }
        Ok(())
    }
}

pub fn degree_one_hot(num_nodes: usize, edges: &[(usize, usize)], cap: usize) -> Tensor<f64> {
    let mut deg = vec![0usize; num_nodes];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let mut x = Tensor::zeros(num_nodes, cap + 1);
    for (v, &d) in deg.iter().enumerate() {
        x.set(v, d.min(cap), 1.0);
    }
    x
}

fn features_for(mode: FeatureMode, n: usize, edges: &[(usize, usize)]) -> Tensor<f64> {
    match mode {
        FeatureMode::DegreeOneHot { cap } => degree_one_hot(n, edges, cap),
        FeatureMode::Constant => Tensor::filled(n, 1, 1.0),
    }
}

/// `K × graphs_per_manifold` graphs grouped by manifold; the manifold index is the label.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Vec<Graph>> {
    spec.validate()?;
    let root = SeededRng::new(seed);
    let mut graphs = Vec::with_capacity(spec.manifolds.len() * spec.graphs_per_manifold);
    for (k, m) in spec.manifolds.iter().enumerate() {
        for i in 0..spec.graphs_per_manifold {
            let mut gen = root.fork(k as u64).fork(i as u64).generator();
            let n = gen.gen_range(m.n_min..=m.n_max);
            let half = n / 2;
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    let p = match m.family {
                        GeneratorFamily::ErdosRenyi { rho } => rho,
                        GeneratorFamily::PlantedTwoCommunity { rho_in, rho_out } => {
                            if (u < half) == (v < half) {
                                rho_in
                            } else {
                                rho_out
                            }
                        }
                    };
                    if gen.gen_bool(p) {
                        edges.push((u, v));
                    }
                }
            }
            let x = features_for(spec.features, n, &edges);
            graphs.push(Graph::new(n, edges, x, k)?);
        }
    }
    Ok(graphs)
}

/// Where a dataset comes from, as written on the command line or in a config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetSource {
    Synth2M,
    Tud { dir: PathBuf, name: String },
}

impl DatasetSource {
    pub fn load(&self, data_seed: u64) -> Result<Vec<Graph>> {
        match self {
            DatasetSource::Synth2M => generate(&SynthSpec::synth_2m(), data_seed),
            DatasetSource::Tud { dir, name } => tud_parse(dir, name),
        }
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Synth2M => f.write_str("synth-2M"),
            DatasetSource::Tud { dir, name } => write!(f, "tud:{}:{name}", dir.display()),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = GipError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("synth-2m") {
            return Ok(DatasetSource::Synth2M);
        }
        if let Some(rest) = s.strip_prefix("tud:") {
            if let Some((dir, name)) = rest.rsplit_once(':') {
                if !dir.is_empty() && !name.is_empty() {
                    return Ok(DatasetSource::Tud {
                        dir: PathBuf::from(dir),
                        name: name.to_string(),
                    });
                }
            }
        }
        Err(GipError::Config(format!(
            "unknown dataset: {s} (expected synth-2M or tud:PATH:NAME)"
        )))
    }
}

fn read_lines(path: &Path, required: bool) -> Result<Option<Vec<(usize, String)>>> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim().to_string()))
                .filter(|(_, l)| !l.is_empty())
                .collect(),
        )),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && !required => Ok(None),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(GipError::Ingestion {
            file: path.to_path_buf(),
            line: None,
            msg: "missing mandatory file".into(),
        }),
        Err(e) => Err(e.into()),
    }
}

fn parse_int(path: &Path, line: usize, s: &str) -> Result<i64> {
    s.trim().parse::<i64>().map_err(|_| GipError::Ingestion {
        file: path.to_path_buf(),
        line: Some(line),
        msg: format!("expected an integer, found {s:?}"),
    })
}

/// Reads a TU-format dataset `{dir}/{name}_*.txt`.
pub fn tud_parse(dir: &Path, name: &str) -> Result<Vec<Graph>> {
    tud_parse_with(dir, name, DEFAULT_DEGREE_CAP)
}

pub fn tud_parse_with(dir: &Path, name: &str, degree_cap: usize) -> Result<Vec<Graph>> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    let (a_path, ind_path, lab_path, nl_path) = (
        file("A"),
        file("graph_indicator"),
        file("graph_labels"),
        file("node_labels"),
    );
    let a_lines = read_lines(&a_path, true)?.unwrap_or_default();
    let ind_lines = read_lines(&ind_path, true)?.unwrap_or_default();
    let lab_lines = read_lines(&lab_path, true)?.unwrap_or_default();
    let nl_lines = read_lines(&nl_path, false)?;

    let ing = |file: &Path, line: Option<usize>, msg: String| GipError::Ingestion {
        file: file.to_path_buf(),
        line,
        msg,
    };

    if lab_lines.is_empty() {
        return Err(ing(&lab_path, None, "no graph labels".into()));
    }
    if ind_lines.is_empty() {
        return Err(ing(&ind_path, None, "no nodes".into()));
    }
    let raw_labels = lab_lines
        .iter()
        .map(|(ln, s)| parse_int(&lab_path, *ln, s))
        .collect::<Result<Vec<_>>>()?;

    // node -> original graph id (1-based)
    let mut node_graph = Vec::with_capacity(ind_lines.len());
    for (ln, s) in &ind_lines {
        let g = parse_int(&ind_path, *ln, s)?;
        if g < 1 || g as usize > raw_labels.len() {
            return Err(ing(
                &ind_path,
                Some(*ln),
                format!("graph id {g} has no entry in {}", lab_path.display()),
            ));
        }
        node_graph.push(g as usize - 1);
    }
    let present: BTreeSet<usize> = node_graph.iter().copied().collect();
    let graph_index: BTreeMap<usize, usize> = present.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let num_graphs = present.len();

    let mut sizes = vec![0usize; num_graphs];
    let mut local = Vec::with_capacity(node_graph.len());
    for &g in &node_graph {
        let gi = graph_index[&g];
        local.push(sizes[gi]);
        sizes[gi] += 1;
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    let n_total = node_graph.len();
    for (ln, s) in &a_lines {
        let (u, v) = s
            .split_once(',')
            .ok_or_else(|| ing(&a_path, Some(*ln), format!("expected `u, v`, found {s:?}")))?;
        let (u, v) = (parse_int(&a_path, *ln, u)?, parse_int(&a_path, *ln, v)?);
        if u < 1 || v < 1 || u as usize > n_total || v as usize > n_total {
            return Err(ing(&a_path, Some(*ln), format!("node id out of range 1..={n_total}")));
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if node_graph[u] != node_graph[v] {
            return Err(ing(&a_path, Some(*ln), format!("edge ({}, {}) joins two graphs", u + 1, v + 1)));
        }
        edges[graph_index[&node_graph[u]]].push((local[u], local[v]));
    }

    let node_labels = match nl_lines {
        Some(lines) => {
            if lines.len() != n_total {
                return Err(ing(
                    &nl_path,
                    None,
                    format!("{} node labels for {n_total} nodes", lines.len()),
                ));
            }
            Some(
                lines
                    .iter()
                    .map(|(ln, s)| parse_int(&nl_path, *ln, s.split(',').next().unwrap_or("")))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };
    let node_label_index: Option<BTreeMap<i64, usize>> = node_labels.as_ref().map(|nl| {
        let vals: BTreeSet<i64> = nl.iter().copied().collect();
        vals.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
    });

    let class_values: BTreeSet<i64> = present.iter().map(|&g| raw_labels[g]).collect();
    let class_index: BTreeMap<i64, usize> = class_values.into_iter().enumerate().map(|(i, v)| (v, i)).collect();

    let mut node_feature_rows: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    if let (Some(nl), Some(idx)) = (&node_labels, &node_label_index) {
        for (node, &g) in node_graph.iter().enumerate() {
            node_feature_rows[graph_index[&g]].push(idx[&nl[node]]);
        }
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for (gi, &g) in present.iter().enumerate() {
        let n = sizes[gi];
        let graph_edges = std::mem::take(&mut edges[gi]);
        let x = match &node_label_index {
            Some(idx) => {
                let mut x = Tensor::zeros(n, idx.len());
                for (v, &c) in node_feature_rows[gi].iter().enumerate() {
                    x.set(v, c, 1.0);
                }
                x
            }
            None => {
                let canonical: BTreeSet<(usize, usize)> = graph_edges
                    .iter()
                    .filter(|(u, v)| u != v)
                    .map(|&(u, v)| (u.min(v), u.max(v)))
                    .collect();
                degree_one_hot(n, &canonical.into_iter().collect::<Vec<_>>(), degree_cap)
            }
        };
        graphs.push(Graph::new(n, graph_edges, x, class_index[&raw_labels[g]])?);
    }
    Ok(graphs)
}

/// Writes graphs as a TU-format dataset (edges listed in both directions,
/// no node-label file).
pub fn tud_write(dir: &Path, name: &str, graphs: &[Graph]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let open = |suffix: &str| -> Result<std::io::BufWriter<fs::File>> {
        Ok(std::io::BufWriter::new(fs::File::create(dir.join(format!("{name}_{suffix}.txt")))?))
    };
    let (mut a, mut ind, mut lab) = (open("A")?, open("graph_indicator")?, open("graph_labels")?);
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        for _ in 0..g.num_nodes() {
            writeln!(ind, "{}", gi + 1)?;
        }
        for &(u, v) in g.edges() {
            writeln!(a, "{}, {}", u + offset + 1, v + offset + 1)?;
            writeln!(a, "{}, {}", v + offset + 1, u + offset + 1)?;
        }
        writeln!(lab, "{}", g.label())?;
        offset += g.num_nodes();
    }
    a.flush()?;
    ind.flush()?;
    lab.flush()?;
    Ok(())
}

/// `k` disjoint test folds; each class is shuffled and dealt round-robin,
/// so per-class counts across folds differ by at most one.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(GipError::Stratification(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    if let Some((c, ids)) = by_class.iter().find(|(_, ids)| ids.len() < k) {
        return Err(GipError::Stratification(format!(
            "class {c} has {} members, fewer than {k} folds",
            ids.len()
        )));
    }
    let mut gen = SeededRng::new(seed).generator();
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for ids in by_class.values_mut() {
        ids.shuffle(&mut gen);
        for &id in ids.iter() {
            tests[next].push(id);
            next = (next + 1) % k;
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; labels.len()];
            test.iter().for_each(|&i| in_test[i] = true);
            let train = (0..labels.len()).filter(|&i| !in_test[i]).collect();
            (train, test)
        })
        .collect())
}
