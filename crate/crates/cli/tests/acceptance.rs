//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every criterion reports even when
//! an earlier one fails. Pass criterion numbers as arguments to run a
//! subset: `cargo test -p gip-lab --test acceptance -- 1 4 5`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use gip_lab::{run_cell, sweep, thread_budget};
use giplab::augment::gip_edges;
use giplab::encoder::{encode_view, init_params, EncoderVars};
use giplab::objectives::{bgrl_loss, gbt_loss, grace_loss, mvgrl_loss};
use giplab::{
    cmsp, disjoint_union, lemma1_verify, normalized_adjacency, AugSpec, DatasetSource, EmbeddingTable, EncoderConfig,
    EncoderParams, Graph, GraphBatch, Result, SeededRng, Tape, Tensor, TrainConfig, Var, ViewSpec,
};

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn weighted_check(name: &str, inputs: &[Tensor], out: (usize, usize), seed: u64, op: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> std::result::Result<f64, String> {
    let weights = random_tensor(out.0, out.1, &mut rng(seed ^ 0xabc), -1.0, 1.0);
    let err = fd_max_rel_err(inputs, |t, v| {
        let y = op(t, v)?;
        let r = t.constant(weights.clone())?;
        let prod = t.mul(y, r)?;
        t.sum(prod)
    });
    ensure(err < FD_TOL, || format!("{name}: relative error {err:e}"))?;
    Ok(err)
}

fn encoder_vars(vars: &[Var], layers: usize) -> EncoderVars {
    EncoderVars {
        layers: (0..layers).map(|l| (vars[2 * l], vars[2 * l + 1])).collect(),
    }
}

/// Batch, two GIP views and parameters with every pre-activation at least
/// 1e-4 from the ReLU kink, so central differences see a smooth function.
fn smooth_case(seed: u64, layers: usize) -> (GraphBatch, GraphBatch, EncoderConfig, EncoderParams) {
    for attempt in 0.. {
        let s = seed * 1000 + attempt;
        let mut g = rng(s);
        let batch = random_batch(6, 10, 3, &mut g);
        let config = EncoderConfig::new(layers, 4, 3).unwrap();
        let mut params: EncoderParams = init_params(&config, &SeededRng::new(s));
        for layer in &mut params.layers {
            layer.bias = random_tensor(1, 4, &mut g, 0.0, 0.3);
        }
        let v1 = gip_edges(&batch, 0.3, &SeededRng::new(s).fork(1));
        let v2 = gip_edges(&batch, 0.5, &SeededRng::new(s).fork(2));
        let pre: Vec<Tensor> = [&v1, &v2]
            .iter()
            .flat_map(|v| dense_preactivations(v, &params, &config))
            .collect();
        if min_abs(&pre) > 1e-4 {
            return (v1, v2, config, params);
        }
    }
    unreachable!()
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    let seg: Arc<[usize]> = Arc::from(vec![0, 0, 1, 2, 2]);
    for seed in 0..3 {
        let mut g = rng(seed);
        let a = random_tensor(3, 4, &mut g, -1.0, 1.0);
        let b = random_tensor(4, 2, &mut g, -1.0, 1.0);
        let c = random_tensor(3, 4, &mut g, -1.0, 1.0);
        let bias = random_tensor(1, 4, &mut g, -1.0, 1.0);
        let signed = random_signed(3, 4, &mut g);
        let wide = random_tensor(3, 4, &mut g, -6.0, 6.0);
        let tall = random_tensor(6, 3, &mut g, -2.0, 2.0);
        let seg_in = random_tensor(5, 3, &mut g, -1.0, 1.0);
        let batch = random_batch(6, 10, 2, &mut g);
        let view = gip_edges(&batch, 0.4, &SeededRng::new(seed));
        let adj = Arc::new(normalized_adjacency::<f64>(&view, true));
        let n = view.num_nodes();
        let x = random_tensor(n, 3, &mut g, -1.0, 1.0);

        let results = [
            weighted_check("matmul", &[a.clone(), b], (3, 2), seed, |t, v| t.matmul(v[0], v[1]))?,
            weighted_check("add", &[a.clone(), c.clone()], (3, 4), seed, |t, v| t.add(v[0], v[1]))?,
            weighted_check("sub", &[a.clone(), c.clone()], (3, 4), seed, |t, v| t.sub(v[0], v[1]))?,
            weighted_check("mul", &[a.clone(), c.clone()], (3, 4), seed, |t, v| t.mul(v[0], v[1]))?,
            weighted_check("add_bias_row", &[a.clone(), bias], (3, 4), seed, |t, v| t.add_bias_row(v[0], v[1]))?,
            weighted_check("scale", &[a.clone()], (3, 4), seed, |t, v| t.scale(v[0], -1.7))?,
            weighted_check("transpose", &[a.clone()], (4, 3), seed, |t, v| t.transpose(v[0]))?,
            weighted_check("relu", &[signed], (3, 4), seed, |t, v| t.relu(v[0]))?,
            weighted_check("sum", &[a.clone()], (1, 1), seed, |t, v| t.sum(v[0]))?,
            weighted_check("log_softmax_rows", &[a.clone()], (3, 4), seed, |t, v| t.log_softmax_rows(v[0]))?,
            weighted_check("log_sigmoid", &[wide], (3, 4), seed, |t, v| t.log_sigmoid(v[0]))?,
            weighted_check("row_l2_normalize", &[a], (3, 4), seed, |t, v| t.row_l2_normalize(v[0]))?,
            weighted_check("batch_standardize", &[tall], (6, 3), seed, |t, v| t.batch_standardize(v[0]))?,
            weighted_check("segment_sum", &[seg_in], (3, 3), seed, |t, v| t.segment_sum(v[0], &seg, 3))?,
            weighted_check("spmm", &[x], (n, 3), seed, |t, v| t.spmm(&adj, v[0]))?,
        ];
        checks += results.len();
        worst = results.iter().fold(worst, |m, &e| m.max(e));
    }

    for seed in 0..2 {
        let layers = 2;
        let (v1, v2, config, params) = smooth_case(seed, layers);
        let inputs: Vec<Tensor> = params
            .layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect();
        let mut with_disc = inputs.clone();
        with_disc.push(random_tensor(4, 4, &mut rng(seed), -0.3, 0.3));
        let target = params.clone();
        let errs = [
            (
                "grace",
                fd_max_rel_err(&inputs, |t, v| {
                    let vars = encoder_vars(v, layers);
                    let z1 = encode_view(t, &vars, &v1, &config)?;
                    let z2 = encode_view(t, &vars, &v2, &config)?;
                    grace_loss(t, z1, z2, 0.5, false)
                }),
            ),
            (
                "mvgrl",
                fd_max_rel_err(&with_disc, |t, v| {
                    let vars = encoder_vars(v, layers);
                    let z1 = encode_view(t, &vars, &v1, &config)?;
                    let z2 = encode_view(t, &vars, &v2, &config)?;
                    mvgrl_loss(t, z1, z2, v[2 * layers])
                }),
            ),
            (
                "bgrl",
                fd_max_rel_err(&inputs, |t, v| {
                    let vars = encoder_vars(v, layers);
                    let z1 = encode_view(t, &vars, &v1, &config)?;
                    let tvars = target.register_frozen(t)?;
                    let zt = encode_view(t, &tvars, &v2, &config)?;
                    bgrl_loss(t, z1, zt)
                }),
            ),
            (
                "gbt",
                fd_max_rel_err(&inputs, |t, v| {
                    let vars = encoder_vars(v, layers);
                    let z1 = encode_view(t, &vars, &v1, &config)?;
                    let z2 = encode_view(t, &vars, &v2, &config)?;
                    gbt_loss(t, z1, z2, 0.25)
                }),
            ),
        ];
        for (name, err) in errs {
            ensure(err < FD_TOL, || format!("encoder + {name}: relative error {err:e}"))?;
            worst = worst.max(err);
            checks += 1;
        }
    }
    Ok(format!("{checks} checks, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

fn plain(n: usize) -> Graph {
    Graph::new(n, std::iter::empty(), Tensor::filled(n, 1, 1.0), 0).unwrap()
}

fn criterion_2() -> Outcome {
    let batch = disjoint_union(&[plain(3), plain(4), plain(2), plain(5)]).unwrap();
    let pairs = batch.cross_pair_count() as f64;
    ensure(pairs == (3 * 4 + 3 * 2 + 3 * 5 + 4 * 2 + 4 * 5 + 2 * 5) as f64, || format!("pair count {pairs}"))?;
    let trials = 10_000u64;
    let mut notes = Vec::new();
    for p in [0.1, 0.5, 0.9] {
        let total: f64 = (0..trials)
            .map(|s| gip_edges(&batch, p, &SeededRng::new(s)).inter_edges().len() as f64)
            .sum();
        let mean = total / trials as f64;
        let sigma = (pairs * p * (1.0 - p) / trials as f64).sqrt();
        let z = (mean - pairs * p) / sigma;
        ensure(z.abs() <= 3.0, || format!("p={p}: mean {mean} vs {} ({z:.2}σ)", pairs * p))?;
        notes.push(format!("p={p} {z:+.2}σ"));
    }
    for s in 0..100 {
        let rng_ = SeededRng::new(s);
        ensure(gip_edges(&batch, 0.0, &rng_).inter_edges().is_empty(), || "p=0 added edges".into())?;
        let full = gip_edges(&batch, 1.0, &rng_).inter_edges().len();
        ensure(full as f64 == pairs, || format!("p=1 gave {full} of {pairs}"))?;
    }
    Ok(format!("{}; p=0 and p=1 exact", notes.join(", ")))
}

// ---------------------------------------------------------------- 3

fn biased_params(config: &EncoderConfig, seed: u64) -> EncoderParams {
    let mut params: EncoderParams = init_params(config, &SeededRng::new(seed));
    let mut g = rng(seed ^ 0x77);
    for layer in &mut params.layers {
        layer.bias = random_tensor(1, config.hidden_dim, &mut g, -0.2, 0.3);
    }
    params
}

fn criterion_3() -> Outcome {
    for depth in 1..=5 {
        for seed in 0..5 {
            let batch = random_batch(6, 10, 3, &mut rng(seed));
            let config = EncoderConfig::new(depth, 4, 3).unwrap();
            let report = lemma1_verify(&batch, &biased_params(&config, seed), &config, 0.0, &SeededRng::new(seed))
                .map_err(|e| e.to_string())?;
            ensure(report.max_relative_residual == 0.0, || {
                format!("p=0 depth {depth}: residual {}", report.max_relative_residual)
            })?;
        }
    }
    let mut worst: f64 = 0.0;
    for p in [0.2, 0.5, 1.0] {
        for seed in 0..5 {
            let batch = random_batch(6, 10, 3, &mut rng(seed));
            let config = EncoderConfig::new(1, 4, 3).unwrap();
            let params = biased_params(&config, seed);
            let rng_ = SeededRng::new(seed);
            let report = lemma1_verify(&batch, &params, &config, p, &rng_).map_err(|e| e.to_string())?;
            ensure(report.max_relative_residual < 1e-10, || {
                format!("p={p}: residual {}", report.max_relative_residual)
            })?;
            // the same identity from dense matrices alone
            let clean = batch.without_inter_edges();
            let aug = gip_edges(&clean, p, &rng_);
            let gap = dense_embeddings(&aug, &params, &config)
                .zip_map(&dense_embeddings(&clean, &params, &config), |a, b| a - b)
                .max_abs_diff(&report.deltas);
            ensure(gap < 1e-10, || format!("p={p}: delta disagrees with dense oracle by {gap:e}"))?;
            worst = worst.max(report.max_relative_residual);
        }
    }
    let mut recon: f64 = 0.0;
    let mut cases = 0;
    for p in [0.2, 0.5, 1.0] {
        for seed in 0..10 {
            let batch = random_batch(6, 10, 2, &mut rng(seed));
            let config = EncoderConfig::new(1, 1, 2).unwrap();
            let params = biased_params(&config, seed);
            let rng_ = SeededRng::new(seed);
            let report = lemma1_verify(&batch, &params, &config, p, &rng_).map_err(|e| e.to_string())?;
            let alpha = report.alpha.as_ref().ok_or("no alpha at d = 1")?;
            let clean = batch.without_inter_edges();
            let aug = gip_edges(&clean, p, &rng_);
            let f = dense_embeddings(&clean, &params, &config);
            let f_g = dense_embeddings(&aug, &params, &config);
            let n = clean.num_graphs();
            if (0..n).any(|j| f.get(j, 0) == 0.0) {
                continue;
            }
            for i in 0..n {
                let mut r = f.get(i, 0);
                for j in (0..n).filter(|&j| j != i) {
                    r += alpha[i][j].ok_or("alpha undefined")? * f.get(j, 0);
                }
                recon = recon.max((r - f_g.get(i, 0)).abs());
            }
            cases += 1;
        }
    }
    ensure(cases >= 10, || format!("only {cases} reconstruction cases"))?;
    ensure(recon < 1e-10, || format!("alpha reconstruction error {recon:e}"))?;
    Ok(format!(
        "p=0 exact at depths 1-5; depth-1 residual {worst:.1e}; alpha reconstruction {recon:.1e} over {cases} batches"
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let eval = |z1: &Tensor, z2: &Tensor, f: &dyn Fn(&mut Tape, Var, Var) -> Result<Var>| -> f64 {
        let mut t = Tape::new();
        let a = t.constant(z1.clone()).unwrap();
        let b = t.constant(z2.clone()).unwrap();
        let l = f(&mut t, a, b).unwrap();
        t.value(l).get(0, 0)
    };
    for n in [2usize, 8, 32] {
        let z = Tensor::filled(n, 3, 0.7);
        let got = eval(&z, &z, &|t, a, b| grace_loss(t, a, b, 0.5, false));
        ensure((got - (n as f64).ln()).abs() < 1e-12, || format!("grace N={n}: {got}"))?;
    }
    let z = random_tensor(5, 3, &mut rng(4), -1.0, 1.0);
    let got = eval(&z, &z, &|t, a, b| {
        let w = t.constant(Tensor::zeros(3, 3))?;
        mvgrl_loss(t, a, b, w)
    });
    ensure((got - 2.0 * 2f64.ln()).abs() < 1e-12, || format!("mvgrl zero discriminator: {got}"))?;

    let mut t = Tape::new();
    let online = t.param(z.clone()).unwrap();
    let target = t.param(z.clone()).unwrap();
    let l = bgrl_loss(&mut t, online, target).unwrap();
    let value = t.value(l).get(0, 0);
    let grads = t.backward(l).unwrap();
    ensure(value == 0.0, || format!("bgrl identical views: {value}"))?;
    let target_grad = grads.get_or_zeros(target, z.shape());
    ensure(target_grad.as_slice().iter().all(|&g| g == 0.0), || "bgrl target received gradient".into())?;

    let design = Tensor::from_rows(&[[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]);
    let got = eval(&design, &design, &|t, a, b| gbt_loss(t, a, b, 0.5));
    ensure(got.abs() < 1e-10, || format!("gbt standardized uncorrelated: {got}"))?;
    Ok("grace ln N, mvgrl 2 ln 2, bgrl 0 with no target gradient, gbt 0".into())
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let x = Tensor::from_rows(&[[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]]);
    let r = cmsp(&EmbeddingTable::new(x, vec![0, 0, 1, 1]).unwrap()).unwrap();
    ensure((r.value - 10.0).abs() < 1e-12, || format!("4-point example gave {}", r.value))?;
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let x = random_tensor(30, 4, &mut rng(seed), -1.0, 1.0);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let base = cmsp(&EmbeddingTable::new(x.clone(), labels.clone()).unwrap()).unwrap().value;
        for c in [0.1, 1.0, 100.0] {
            let scaled = cmsp(&EmbeddingTable::new(x.map(|v| c * v), labels.clone()).unwrap()).unwrap().value;
            let rel = (scaled - base).abs() / base;
            ensure(rel < 1e-10, || format!("scale {c}: {scaled} vs {base}"))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("4-point example = {}; scale invariance within {worst:.1e}", r.value))
}

// ---------------------------------------------------------------- 6

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const FOLDS: usize = 10;

fn method_config(view: AugSpec, seed: u64) -> TrainConfig {
    let view = ViewSpec::from(view);
    TrainConfig {
        seed,
        epochs: 100,
        batch_size: 32,
        num_layers: 3,
        hidden_dim: 64,
        view1: view.clone(),
        view2: view,
        ..TrainConfig::default()
    }
}

/// Mean probe accuracy and mean CMSP of `view` over the five seeds.
fn method_means(graphs: &[Graph], view: &AugSpec, base: impl Fn(AugSpec, u64) -> TrainConfig) -> std::result::Result<(f64, f64), String> {
    let (mut acc, mut cm) = (0.0, 0.0);
    for seed in SEEDS {
        let (a, c) = run_cell(graphs, &base(view.clone(), seed), FOLDS).map_err(|e| format!("{e:#}"))?;
        acc += a;
        cm += c;
    }
    let k = SEEDS.len() as f64;
    Ok((acc / k, cm / k))
}

fn criterion_6() -> Outcome {
    let graphs = DatasetSource::Synth2M.load(0).map_err(|e| e.to_string())?;
    let gip = method_means(&graphs, &AugSpec::gip(0.8).unwrap(), method_config)?;
    let drop = method_means(&graphs, &AugSpec::drop_edge(0.3).unwrap(), method_config)?;
    let add = method_means(&graphs, &AugSpec::add_edge(0.3).unwrap(), method_config)?;
    let summary = format!(
        "acc/cmsp GIP {:.4}/{:.4}, DropEdge {:.4}/{:.4}, AddEdge {:.4}/{:.4}",
        gip.0, gip.1, drop.0, drop.1, add.0, add.1
    );
    let ok = gip.0 > drop.0 && gip.0 > add.0 && gip.1 > drop.1 && gip.1 > add.1;
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let grid = [0.05, 0.5, 0.9];
    let base = method_config(AugSpec::gip(0.5).unwrap(), 0);
    let rows = sweep(&base, &grid, &grid, &SEEDS, FOLDS, thread_budget()).map_err(|e| format!("{e:#}"))?;
    let mut cells = Vec::new();
    for &p1 in &grid {
        for &p2 in &grid {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| r.p1 == p1 && r.p2 == p2)
                .map(|r| r.accuracy().ok_or_else(|| format!("cell ({p1}, {p2}) seed {} failed", r.seed)))
                .collect::<std::result::Result<_, _>>()?;
            cells.push(((p1, p2), accs.iter().sum::<f64>() / accs.len() as f64));
        }
    }
    let at = |p: f64| cells.iter().find(|(k, _)| *k == (p, p)).unwrap().1;
    let (low, high) = (at(0.05), at(0.9));
    let table: Vec<String> = cells.iter().map(|((a, b), m)| format!("({a},{b})={m:.4}")).collect();
    let summary = format!("acc(0.9,0.9) {high:.4} vs acc(0.05,0.05) {low:.4}; grid {}", table.join(" "));
    if high >= low - 0.02 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let exe = env!("CARGO_BIN_EXE_gip-lab");
    let mut ckpts = Vec::new();
    let mut rows = Vec::new();
    for run in ["a", "b"] {
        let train = dir.path().join(run).join("train");
        let eval = dir.path().join(run).join("eval");
        let o = Command::new(exe)
            .args(["pretrain", "--seed", "7", "--out"])
            .arg(&train)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        let o = Command::new(exe)
            .arg("probe")
            .arg("--checkpoint")
            .arg(train.join(gip_lab::CHECKPOINT_FILE))
            .arg("--out")
            .arg(&eval)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        ckpts.push(fs::read(train.join(gip_lab::CHECKPOINT_FILE)).map_err(|e| e.to_string())?);
        rows.push(fs::read_to_string(eval.join(gip_lab::METRICS_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(ckpts[0] == ckpts[1], || "checkpoints differ".into())?;
    ensure(rows[0] == rows[1], || format!("metrics differ:\n{}\n{}", rows[0], rows[1]))?;
    let row = rows[0].lines().nth(1).unwrap_or_default().to_string();
    Ok(format!("{} checkpoint bytes identical; row {row}", ckpts[0].len()))
}

// ---------------------------------------------------------------- 9

/// `GIPLAB_MUTAG_DIR`, else `data/MUTAG` under the workspace root.
fn mutag_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("GIPLAB_MUTAG_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/MUTAG"));
    dir.join("MUTAG_A.txt").is_file().then_some(dir)
}

fn criterion_9() -> Option<Outcome> {
    let dir = mutag_dir()?;
    Some((|| {
        let source = DatasetSource::Tud {
            dir: dir.clone(),
            name: "MUTAG".into(),
        };
        let graphs = source.load(0).map_err(|e| e.to_string())?;
        ensure(graphs.len() == 188, || format!("{} graphs, want 188", graphs.len()))?;
        let config = |view: AugSpec, seed| TrainConfig {
            dataset: source.clone(),
            ..method_config(view, seed)
        };
        let gip = method_means(&graphs, &AugSpec::gip(0.8).unwrap(), config)?;
        let drop = method_means(&graphs, &AugSpec::drop_edge(0.3).unwrap(), config)?;
        let summary = format!("188 graphs; accuracy GIP {:.4} vs DropEdge {:.4}", gip.0, drop.0);
        if gip.0 >= drop.0 {
            Ok(summary)
        } else {
            Err(summary)
        }
    })())
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Option<Outcome>); 9] = [
        (1, "gradient correctness", || Some(criterion_1())),
        (2, "inter-edge statistics", || Some(criterion_2())),
        (3, "ReLU-difference decomposition", || Some(criterion_3())),
        (4, "loss closed forms", || Some(criterion_4())),
        (5, "CMSP oracle", || Some(criterion_5())),
        (6, "method ordering on synth-2M", || Some(criterion_6())),
        (7, "edge-proportion trend", || Some(criterion_7())),
        (8, "determinism", || Some(criterion_8())),
        (9, "MUTAG smoke", criterion_9),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Some(Err(msg))
            });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Some(Ok(detail)) => println!("criterion {id} {name}: PASS ({secs:.1}s) {detail}"),
            Some(Err(detail)) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({secs:.1}s) {detail}");
            }
            None => println!("criterion {id} {name}: SKIP (MUTAG files not found; set GIPLAB_MUTAG_DIR)"),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
