//! Pretrain, probe, sweep and lemma-check, as used by the `gip-lab` binary.

pub mod manifest;

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use giplab::augment::AugSpec;
use giplab::checkpoint::format_float;
use giplab::encoder::{init_params, EncoderConfig};
use giplab::{
    cmsp, embed_dataset, disjoint_union, lemma1_verify, linear_probe, load_checkpoint, pretrain, save_checkpoint,
    CmspReport, DatasetSource, EmbeddingTable, EncoderParams, Graph, Lemma1Report, ProbeResult, SeededRng,
    TrainConfig, TrainOutcome,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use manifest::{dataset_fingerprint, RunManifest};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const METRICS_HEADER: &str =
    "manifest_id,dataset,objective,view1,p1,view2,p2,seed,folds,accuracy_mean,accuracy_std,cmsp,final_loss";
pub const SWEEP_HEADER: &str = "p1,p2,seed,accuracy,cmsp,status";

/// Command-line values that override the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dataset: Option<DatasetSource>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(p) = self.p1 {
            cfg.view1.main = AugSpec::new(cfg.view1.main.kind(), p)?;
        }
        if let Some(p) = self.p2 {
            cfg.view2.main = AugSpec::new(cfg.view2.main.kind(), p)?;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a `key = value` config (defaults when no path) and applies overrides.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<TrainConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            TrainConfig::parse(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    overrides.apply(cfg)
}

/// Sweep parallelism: `GIPLAB_THREADS` when set, else the machine's.
pub fn thread_budget() -> usize {
    std::env::var("GIPLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn create_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn write_trace(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut w = create_writer(path)?;
    writeln!(w, "step,epoch,loss")?;
    for r in &outcome.trace {
        writeln!(w, "{},{},{}", r.step, r.epoch, format_float(r.loss))?;
    }
    w.flush()?;
    Ok(())
}

pub struct PretrainRun {
    pub outcome: TrainOutcome,
    pub manifest: RunManifest,
    pub checkpoint: PathBuf,
}

pub fn cmd_pretrain(config: &TrainConfig, out: &Path) -> Result<PretrainRun> {
    let start = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let graphs = config.dataset.load(config.data_seed)?;
    let mut manifest = RunManifest::new(
        "pretrain",
        config.to_line(),
        config.seed,
        config.dataset.to_string(),
        dataset_fingerprint(&graphs),
    );
    let outcome: TrainOutcome = pretrain(&graphs, config)?;

    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &outcome.state, config)?;
    let trace = out.join(TRACE_FILE);
    write_trace(&trace, &outcome)?;
    manifest.artifact("checkpoint", &checkpoint);
    manifest.artifact("loss_trace", &trace);
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&out.join("manifest.json"))?;
    log::info!(
        "pretrained {} steps in {:.1}s, final loss {}",
        outcome.trace.len(),
        manifest.wall_clock_secs,
        outcome.trace.last().map_or(f64::NAN, |r| r.loss)
    );
    Ok(PretrainRun {
        outcome,
        manifest,
        checkpoint,
    })
}

/// Frozen-encoder scores on one dataset.
pub struct Evaluation {
    pub table: EmbeddingTable,
    pub probe: ProbeResult,
    pub cmsp: CmspReport,
}

pub fn evaluate(
    graphs: &[Graph],
    encoder: &EncoderParams,
    enc: &EncoderConfig,
    batch_size: usize,
    folds: usize,
    seed: u64,
) -> Result<Evaluation> {
    let table = embed_dataset(graphs, encoder, enc, batch_size)?;
    let probe = linear_probe(&table, folds, seed)?;
    let cmsp = cmsp(&table)?;
    Ok(Evaluation { table, probe, cmsp })
}

/// One `metrics.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub manifest_id: String,
    pub dataset: String,
    pub objective: String,
    pub view1: String,
    pub p1: f64,
    pub view2: String,
    pub p2: f64,
    pub seed: u64,
    pub folds: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub cmsp: f64,
    pub final_loss: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let dataset = if self.dataset.contains(',') {
            format!("\"{}\"", self.dataset.replace('"', "\"\""))
        } else {
            self.dataset.clone()
        };
        [
            self.manifest_id.clone(),
            dataset,
            self.objective.clone(),
            self.view1.clone(),
            format_float(self.p1),
            self.view2.clone(),
            format_float(self.p2),
            self.seed.to_string(),
            self.folds.to_string(),
            format_float(self.accuracy_mean),
            format_float(self.accuracy_std),
            format_float(self.cmsp),
            self.final_loss.map_or_else(String::new, format_float),
        ]
        .join(",")
    }
}

/// Appends `row`, writing the header first for a new file and refusing a
/// file whose header differs.
pub fn append_metrics(path: &Path, row: &MetricsRow) -> Result<()> {
    let exists = path.exists() && fs::metadata(path)?.len() > 0;
    if exists {
        let text = fs::read_to_string(path)?;
        let header = text.lines().next().unwrap_or("");
        if header != METRICS_HEADER {
            bail!("{} has an unexpected header: {header}", path.display());
        }
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if !exists {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    writeln!(f, "{}", row.to_csv())?;
    Ok(())
}

fn last_trace_loss(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(path).ok()?;
    text.lines().skip(1).last()?.rsplit(',').next()?.parse().ok()
}

pub struct ProbeRun {
    pub row: MetricsRow,
    pub evaluation: Evaluation,
    pub manifest: RunManifest,
}

pub fn cmd_probe(
    checkpoint: &Path,
    dataset: Option<DatasetSource>,
    folds: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<ProbeRun> {
    let start = Instant::now();
    let bytes = fs::read(checkpoint).with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let (state, config) = load_checkpoint::<f64>(checkpoint)?;
    let dataset = dataset.unwrap_or_else(|| config.dataset.clone());
    let seed = seed.unwrap_or(config.seed);
    let graphs = dataset.load(config.data_seed)?;
    let input_dim = graphs.first().map_or(0, Graph::feature_dim);
    let enc = config.encoder_config(state.encoder.layers[0].weight.rows())?;
    if input_dim != enc.input_dim {
        bail!(
            "incompatible dataset: features have {input_dim} columns, checkpoint expects {}",
            enc.input_dim
        );
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let evaluation = evaluate(&graphs, &state.encoder, &enc, config.batch_size, folds, seed)?;

    let ckpt_hash = hex::encode(Sha256::digest(&bytes));
    let mut manifest = RunManifest::new(
        "probe",
        format!("checkpoint_sha256={ckpt_hash} folds={folds} probe_seed={seed} {}", config.to_line()),
        seed,
        dataset.to_string(),
        dataset_fingerprint(&graphs),
    );
    let emb_path = out.join(EMBEDDINGS_FILE);
    let mut w = create_writer(&emb_path)?;
    evaluation.table.write_csv(&mut w)?;
    w.flush()?;

    let row = MetricsRow {
        manifest_id: manifest.id.clone(),
        dataset: dataset.to_string(),
        objective: config.objective.kind.to_string(),
        view1: config.view1.main.kind().to_string(),
        p1: config.view1.main.p(),
        view2: config.view2.main.kind().to_string(),
        p2: config.view2.main.p(),
        seed,
        folds,
        accuracy_mean: evaluation.probe.mean,
        accuracy_std: evaluation.probe.std,
        cmsp: evaluation.cmsp.value,
        final_loss: checkpoint.parent().and_then(|d| last_trace_loss(&d.join(TRACE_FILE))),
    };
    let metrics = out.join(METRICS_FILE);
    append_metrics(&metrics, &row)?;
    manifest.artifact("checkpoint", checkpoint);
    manifest.artifact("embeddings", &emb_path);
    manifest.artifact("metrics", &metrics);
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&out.join("probe_manifest.json"))?;
    Ok(ProbeRun {
        row,
        evaluation,
        manifest,
    })
}

/// One (p₁, p₂, seed) cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub p1: f64,
    pub p2: f64,
    pub seed: u64,
    pub result: std::result::Result<(f64, f64), String>,
}

impl SweepRow {
    pub fn accuracy(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.0)
    }

    pub fn cmsp(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.1)
    }

    pub fn to_csv(&self) -> String {
        let (acc, cm, status) = match &self.result {
            Ok((a, c)) => (format_float(*a), format_float(*c), "ok".to_string()),
            Err(e) => (String::new(), String::new(), format!("\"error: {}\"", e.replace('"', "'"))),
        };
        format!("{},{},{},{acc},{cm},{status}", format_float(self.p1), format_float(self.p2), self.seed)
    }
}

/// Pretrain and score one configuration: probe accuracy mean and CMSP.
pub fn run_cell(graphs: &[Graph], config: &TrainConfig, folds: usize) -> Result<(f64, f64)> {
    let outcome: TrainOutcome = pretrain(graphs, config)?;
    let ev = evaluate(
        graphs,
        &outcome.state.encoder,
        &outcome.encoder_config,
        config.batch_size,
        folds,
        config.seed,
    )?;
    Ok((ev.probe.mean, ev.cmsp.value))
}

/// Every `(p₁, p₂, seed)` cell in grid order; cells run on up to `threads`
/// workers and a failed cell is recorded rather than aborting the sweep.
pub fn sweep(
    base: &TrainConfig,
    p1_grid: &[f64],
    p2_grid: &[f64],
    seeds: &[u64],
    folds: usize,
    threads: usize,
) -> Result<Vec<SweepRow>> {
    for &p in p1_grid.iter().chain(p2_grid) {
        if !(0.0..=1.0).contains(&p) {
            bail!("grid value {p} lies outside [0, 1]");
        }
    }
    let graphs = base.dataset.load(base.data_seed)?;
    let mut cells = Vec::new();
    for &p1 in p1_grid {
        for &p2 in p2_grid {
            for &seed in seeds {
                cells.push((p1, p2, seed));
            }
        }
    }
    let run = |&(p1, p2, seed): &(f64, f64, u64)| {
        let overrides = Overrides {
            seed: Some(seed),
            p1: Some(p1),
            p2: Some(p2),
            ..Overrides::default()
        };
        let result = overrides
            .apply(base.clone())
            .and_then(|cfg| run_cell(&graphs, &cfg, folds))
            .map_err(|e| format!("{e:#}"));
        match &result {
            Ok((a, c)) => log::info!("cell p1={p1} p2={p2} seed={seed}: accuracy {a:.4}, cmsp {c:.4}"),
            Err(e) => log::warn!("cell p1={p1} p2={p2} seed={seed} failed: {e}"),
        }
        SweepRow { p1, p2, seed, result }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    Ok(pool.install(|| cells.par_iter().map(run).collect()))
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = create_writer(path)?;
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sweep(
    base: &TrainConfig,
    p1_grid: &[f64],
    p2_grid: &[f64],
    seeds: &[u64],
    folds: usize,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let start = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rows = sweep(base, p1_grid, p2_grid, seeds, folds, thread_budget())?;
    let path = out.join(SWEEP_FILE);
    write_sweep(&path, &rows)?;
    let graphs = base.dataset.load(base.data_seed)?;
    let grid = |g: &[f64]| g.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",");
    let seeds_text = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let mut manifest = RunManifest::new(
        "sweep",
        format!(
            "p1_grid={} p2_grid={} seeds={seeds_text} folds={folds} {}",
            grid(p1_grid),
            grid(p2_grid),
            base.to_line()
        ),
        base.seed,
        base.dataset.to_string(),
        dataset_fingerprint(&graphs),
    );
    manifest.artifact("sweep", &path);
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&out.join("sweep_manifest.json"))?;
    Ok(rows)
}

/// JSON form of a lemma check.
#[derive(Clone, Debug, Serialize)]
pub struct LemmaOutput {
    pub p: f64,
    pub depth: usize,
    pub dim: usize,
    pub num_graphs: usize,
    pub num_inter_edges: usize,
    pub tolerance: f64,
    pub max_relative_residual: f64,
    pub pass: bool,
    pub residuals: Vec<f64>,
    pub deltas: Vec<Vec<f64>>,
    pub alpha: Option<Vec<Vec<Option<f64>>>>,
    pub reconstruction_error: Option<f64>,
    pub alpha_note: String,
}

impl LemmaOutput {
    pub fn new(report: &Lemma1Report, tolerance: f64) -> Self {
        let deltas = (0..report.deltas.rows()).map(|r| report.deltas.row(r).to_vec()).collect();
        let pass = report.max_relative_residual <= tolerance
            && report.reconstruction_error.map_or(true, |e| e <= tolerance);
        Self {
            p: report.p,
            depth: report.depth,
            dim: report.dim,
            num_graphs: report.residuals.len(),
            num_inter_edges: report.num_inter_edges,
            tolerance,
            max_relative_residual: report.max_relative_residual,
            pass,
            residuals: report.residuals.clone(),
            deltas,
            alpha: report.alpha.clone(),
            reconstruction_error: report.reconstruction_error,
            alpha_note: report.alpha_note.clone(),
        }
    }
}

/// Verifies the ReLU-difference decomposition on the first batch of the
/// dataset, with checkpoint parameters or a fresh initialization.
pub fn cmd_lemma_check(config: &TrainConfig, p: f64, tolerance: f64, checkpoint: Option<&Path>) -> Result<LemmaOutput> {
    let graphs = config.dataset.load(config.data_seed)?;
    let take = config.batch_size.min(graphs.len());
    let batch = disjoint_union(&graphs[..take])?;
    let (params, enc) = match checkpoint {
        Some(path) => {
            let (state, saved) = load_checkpoint::<f64>(path)?;
            let enc = saved.encoder_config(batch.feature_dim())?;
            (state.encoder, enc)
        }
        None => {
            let enc = config.encoder_config(batch.feature_dim())?;
            (init_params(&enc, &SeededRng::new(config.seed)), enc)
        }
    };
    let report = lemma1_verify(&batch, &params, &enc, p, &SeededRng::new(config.seed).fork(0x1e77a))?;
    Ok(LemmaOutput::new(&report, tolerance))
}
