mod common;

use common::*;
use giplab::augment::{gip_edges, SeededRng};
use giplab::encoder::{init_params, EncoderConfig};
use giplab::eval::{cmsp, lemma1_verify, linear_probe, EmbeddingTable};
use giplab::{disjoint_union, EncoderParams, Graph, GraphBatch, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn biased_params(config: &EncoderConfig, seed: u64) -> EncoderParams {
    let mut params: EncoderParams = init_params(config, &SeededRng::new(seed));
    let mut g = rng(seed ^ 0x77);
    for layer in &mut params.layers {
        layer.bias = random_tensor(1, config.hidden_dim, &mut g, -0.2, 0.3);
    }
    params
}

/// Per-graph sums of `ReLU(y + z) − ReLU(y)`, with `y` and `y + z` the
/// last-layer pre-activations of the clean and augmented batches.
fn delta_oracle(clean: &GraphBatch, aug: &GraphBatch, params: &EncoderParams, config: &EncoderConfig) -> Tensor {
    let config = config.with_start_layer(0).unwrap();
    let y = dense_preactivations(clean, params, &config).pop().unwrap();
    let yz = dense_preactivations(aug, params, &config).pop().unwrap();
    let mut out = Tensor::zeros(clean.num_graphs(), y.cols());
    for v in 0..y.rows() {
        let g = clean.membership()[v];
        for c in 0..y.cols() {
            out.set(g, c, out.get(g, c) + relu(yz.get(v, c)) - relu(y.get(v, c)));
        }
    }
    out
}

#[test]
fn lemma_exact_without_inter_edges_at_every_depth() {
    for depth in 1..=5 {
        for seed in 0..5 {
            let mut g = rng(seed);
            let batch = random_batch(6, 10, 3, &mut g);
            let config = EncoderConfig::new(depth, 4, 3).unwrap();
            let params = biased_params(&config, seed);
            let report = lemma1_verify(&batch, &params, &config, 0.0, &SeededRng::new(seed)).unwrap();
            assert_eq!(report.num_inter_edges, 0);
            assert_eq!(report.max_relative_residual, 0.0, "depth {depth} seed {seed}");
            assert!(report.residuals.iter().all(|&r| r == 0.0));
        }
    }
}

#[test]
fn lemma_single_layer_residual() {
    for p in [0.2, 0.5, 1.0] {
        for dim in [1, 4] {
            for seed in 0..5 {
                let mut g = rng(seed);
                let batch = random_batch(6, 10, 3, &mut g);
                let config = EncoderConfig::new(1, dim, 3).unwrap();
                let params = biased_params(&config, seed);
                let rng_ = SeededRng::new(seed);
                let report = lemma1_verify(&batch, &params, &config, p, &rng_).unwrap();
                assert!(report.max_relative_residual < 1e-10, "p {p} dim {dim}: {}", report.max_relative_residual);

                let clean = batch.without_inter_edges();
                let aug = gip_edges(&clean, p, &rng_);
                assert_eq!(report.num_inter_edges, aug.inter_edges().len());
                let oracle = delta_oracle(&clean, &aug, &params, &config);
                assert!(report.deltas.max_abs_diff(&oracle) < 1e-12);

                // the identity itself, from the dense oracle alone
                let f_g = dense_embeddings(&aug, &params, &config);
                let f = dense_embeddings(&clean, &params, &config);
                let gap = f_g.zip_map(&f, |a, b| a - b).max_abs_diff(&oracle);
                assert!(gap < 1e-12);
            }
        }
    }
}

#[test]
fn lemma_alpha_reconstructs_single_unit_encoder() {
    let mut checked = 0;
    for p in [0.2, 0.5, 1.0] {
        for seed in 0..10 {
            let mut g = rng(seed);
            let batch = random_batch(6, 10, 2, &mut g);
            let config = EncoderConfig::new(1, 1, 2).unwrap();
            let params = biased_params(&config, seed);
            let rng_ = SeededRng::new(seed);
            let report = lemma1_verify(&batch, &params, &config, p, &rng_).unwrap();
            assert!(report.max_relative_residual < 1e-10);
            let alpha = report.alpha.as_ref().expect("alpha at d = 1");

            let clean = batch.without_inter_edges();
            let aug = gip_edges(&clean, p, &rng_);
            let f = dense_embeddings(&clean, &params, &config);
            let f_g = dense_embeddings(&aug, &params, &config);
            let n = clean.num_graphs();
            if (0..n).any(|j| f.get(j, 0) == 0.0) {
                continue;
            }
            for i in 0..n {
                assert!(alpha[i][i].is_none());
                let mut recon = f.get(i, 0);
                for j in (0..n).filter(|&j| j != i) {
                    recon += alpha[i][j].expect("defined when f(G_j) != 0") * f.get(j, 0);
                }
                assert!((recon - f_g.get(i, 0)).abs() < 1e-10, "graph {i}: {recon} vs {}", f_g.get(i, 0));
            }
            assert!(report.reconstruction_error.unwrap() < 1e-10);
            checked += 1;
        }
    }
    assert!(checked >= 10, "only {checked} cases had every f(G_j) nonzero");
}

#[test]
fn lemma_alpha_is_zero_without_inter_edges() {
    let mut g = rng(3);
    let batch = random_batch(5, 8, 2, &mut g);
    let config = EncoderConfig::new(1, 1, 2).unwrap();
    let params = biased_params(&config, 3);
    let report = lemma1_verify(&batch, &params, &config, 0.0, &SeededRng::new(0)).unwrap();
    for (i, row) in report.alpha.unwrap().iter().enumerate() {
        for (j, a) in row.iter().enumerate() {
            if i != j {
                assert_eq!(*a, Some(0.0));
            }
        }
    }
}

#[test]
fn lemma_alpha_undefined_beyond_one_layer_of_width_one() {
    let mut g = rng(9);
    let batch = random_batch(5, 8, 3, &mut g);
    for (depth, dim) in [(3, 4), (3, 1), (1, 4)] {
        let config = EncoderConfig::new(depth, dim, 3).unwrap();
        let report = lemma1_verify(&batch, &biased_params(&config, 1), &config, 0.5, &SeededRng::new(2)).unwrap();
        assert!(report.alpha.is_none());
        assert!(report.reconstruction_error.is_none());
        assert!(report.alpha_note.contains("undefined"));
    }
}

/// A 3-node path next to an isolated node, all features 1, weight 1, bias
/// 0, every cross pair added. Extra inter edges raise the path's degrees,
/// so its middle node loses more from its shrunken intra messages than
/// the new message brings in.
#[test]
fn symmetric_normalization_can_make_delta_negative() {
    let ones = |n| Tensor::filled(n, 1, 1.0);
    let path = Graph::new(3, [(0, 1), (1, 2)], ones(3), 0).unwrap();
    let single = Graph::new(1, [], ones(1), 1).unwrap();
    let batch = disjoint_union(&[path, single]).unwrap();
    let config = EncoderConfig::new(1, 1, 1).unwrap();
    let mut params: EncoderParams = init_params(&config, &SeededRng::new(0));
    params.layers[0].weight = Tensor::filled(1, 1, 1.0);
    params.layers[0].bias = Tensor::zeros(1, 1);
    let report = lemma1_verify(&batch, &params, &config, 1.0, &SeededRng::new(0)).unwrap();
    assert_eq!(report.num_inter_edges, 3);

    // degrees with self-loops: clean (2, 3, 2), extended (3, 4, 3) and 4 for the single node
    let s = f64::sqrt;
    let end_clean = 1.0 / 2.0 + 1.0 / s(6.0);
    let mid_clean = 1.0 / 3.0 + 2.0 / s(6.0);
    let end_ext = 1.0 / 3.0 + 2.0 / s(12.0);
    let mid_ext = 1.0 / 4.0 + 2.0 / s(12.0) + 1.0 / 4.0;
    let want = 2.0 * (end_ext - end_clean) + (mid_ext - mid_clean);
    assert!(want < 0.0);
    assert!((report.deltas.get(0, 0) - want).abs() < 1e-12);
    assert!(report.max_relative_residual < 1e-12);
}

#[test]
fn cmsp_matches_definition() {
    for seed in 0..10 {
        let mut g = rng(seed);
        let n = g.gen_range(6..30);
        let k = g.gen_range(2..5);
        let x = random_tensor(n, 3, &mut g, -3.0, 3.0);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|r| x.row(r).to_vec()).collect();
        let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let mut d_avg = 0.0;
        let mut mus = Vec::new();
        for c in 0..k {
            let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            let nk = members.len() as f64;
            let mut sum = 0.0;
            for (i, a) in members.iter().enumerate() {
                for (j, b) in members.iter().enumerate() {
                    if i != j {
                        sum += norm(a, b);
                    }
                }
            }
            d_avg += sum / (nk * nk) / k as f64;
            mus.push((0..3).map(|d| members.iter().map(|m| m[d]).sum::<f64>() / nk).collect::<Vec<_>>());
        }
        let mut s = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                s += norm(&mus[i], &mus[j]);
            }
        }
        s *= 2.0 / (k * (k - 1)) as f64;
        let got = cmsp(&EmbeddingTable::new(x, labels).unwrap()).unwrap();
        assert!((got.value - s / d_avg).abs() < 1e-12 * (s / d_avg).max(1.0));
        assert!(!got.degenerate);
    }
}

#[test]
fn cmsp_floor_on_collapsed_classes() {
    let x = Tensor::from_rows(&[[0.0, 0.0], [0.0, 0.0], [3.0, 4.0], [3.0, 4.0]]);
    let r = cmsp(&EmbeddingTable::new(x, vec![0, 0, 1, 1]).unwrap()).unwrap();
    assert!(r.degenerate);
    assert!(r.value.is_finite());
    assert!((r.value - 5.0 / 1e-12).abs() < 1e-3 * r.value);
}

/// With no signal in the features, the probe can only learn class priors,
/// so its accuracy averaged over label shuffles sits at the majority share.
#[test]
fn probe_without_signal_scores_majority_share() {
    let n = 30;
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i % 3 == 0)).collect();
    let majority = labels.iter().filter(|&&l| l == 0).count() as f64 / n as f64;
    let mut g = rng(0);
    let accs: Vec<f64> = (0..60)
        .map(|s| {
            labels.shuffle(&mut g);
            let table = EmbeddingTable::new(Tensor::filled(n, 4, 0.25), labels.clone()).unwrap();
            linear_probe(&table, 5, s).unwrap().mean
        })
        .collect();
    let r = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / r;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (r - 1.0);
    let bound = 3.0 * (var / r).sqrt() + 1e-12;
    assert!((mean - majority).abs() <= bound, "mean {mean} vs {majority} ± {bound}");
}

#[test]
fn probe_std_is_population_std_of_folds() {
    let mut g = rng(4);
    let x = random_tensor(40, 3, &mut g, -1.0, 1.0);
    let labels: Vec<usize> = (0..40).map(|i| usize::from(x.get(i, 0) + 0.3 * x.get(i, 1) > 0.0)).collect();
    let r = linear_probe(&EmbeddingTable::new(x, labels).unwrap(), 4, 1).unwrap();
    let k = r.fold_accuracies.len() as f64;
    let mean = r.fold_accuracies.iter().sum::<f64>() / k;
    let std = (r.fold_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k).sqrt();
    assert!((r.mean - mean).abs() < 1e-15);
    assert!((r.std - std).abs() < 1e-15);
    assert!(r.mean > 0.8);
}
