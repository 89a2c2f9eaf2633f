use std::io::Write;

use super::*;
use crate::harness::build_random_model;
use crate::numerics::Matrix;
use crate::posenc::{self, RatioAssignment};

fn test_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 3,
        head_dim: 8,
        mlp_dim: 6,
        vocab_size: 20,
        max_seq_len: 48,
        rope_base: 10000.0,
    }
}

fn test_model(seed: u64) -> Model {
    build_random_model(&test_config(), seed).unwrap()
}

fn test_prompt(len: usize) -> Vec<u32> {
    (0..len).map(|i| (i * 13 % 20) as u32).collect()
}

/// Straight-line reference forward pass: dense projections, full masked
/// attention matrices, no cache, rotations inlined.
fn naive_last_logits(model: &Model, tokens: &[u32], spec: &PositionEncoderSpec) -> Vec<f64> {
    let cfg = *model.config();
    let w = model.weights();
    let hidden = cfg.hidden_dim();
    let h_dim = cfg.head_dim;
    let thetas: Vec<f64> = (0..h_dim / 2)
        .map(|k| cfg.rope_base.powf(-2.0 * k as f64 / h_dim as f64))
        .collect();
    let rot = |v: &[f64], pos: f64| -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, &theta) in thetas.iter().enumerate() {
            let (s, c) = (pos * theta).sin_cos();
            out[2 * k] = v[2 * k] * c - v[2 * k + 1] * s;
            out[2 * k + 1] = v[2 * k] * s + v[2 * k + 1] * c;
        }
        out
    };
    let norm = |v: &[f64], g: &[f64]| -> Vec<f64> {
        let ms = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let inv = 1.0 / (ms + NORM_EPS).sqrt();
        v.iter().zip(g).map(|(x, g)| x * g * inv).collect()
    };
    let mv = |x: &[f64], m: &Matrix| -> Vec<f64> {
        (0..m.cols())
            .map(|j| (0..m.rows()).map(|i| x[i] * m.get(i, j)).sum())
            .collect()
    };

    let t_len = tokens.len();
    let mut states: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| w.token_embedding.row(t as usize).to_vec())
        .collect();
    for layer in 0..cfg.n_layers {
        let lw = &w.layers[layer];
        let normed: Vec<Vec<f64>> = states.iter().map(|s| norm(s, &lw.attn_norm)).collect();
        let qs: Vec<Vec<f64>> = normed.iter().map(|n| mv(n, &lw.wq)).collect();
        let ks: Vec<Vec<f64>> = normed.iter().map(|n| mv(n, &lw.wk)).collect();
        let vs: Vec<Vec<f64>> = normed.iter().map(|n| mv(n, &lw.wv)).collect();

        let mut attn_out = vec![vec![0.0; hidden]; t_len];
        for head in 0..cfg.n_heads {
            let hs = head * h_dim;
            for t in 0..t_len {
                let mut scores = vec![f64::NEG_INFINITY; t_len];
                for (j, score) in scores.iter_mut().enumerate().take(t + 1) {
                    let (qp, kp) = posenc::map_position(spec, layer, head, t, j).unwrap();
                    let rq = rot(&qs[t][hs..hs + h_dim], qp);
                    let rk = rot(&ks[j][hs..hs + h_dim], kp);
                    let dot: f64 = rq.iter().zip(&rk).map(|(a, b)| a * b).sum();
                    *score = dot / (h_dim as f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores
                    .iter()
                    .map(|s| if s.is_finite() { (s - max).exp() } else { 0.0 })
                    .collect();
                let sum: f64 = exps.iter().sum();
                for (j, &e) in exps.iter().enumerate() {
                    let wgt = e / sum;
                    for d in 0..h_dim {
                        attn_out[t][hs + d] += wgt * vs[j][hs + d];
                    }
                }
            }
        }
        for t in 0..t_len {
            let proj = mv(&attn_out[t], &lw.wo);
            for (s, p) in states[t].iter_mut().zip(&proj) {
                *s += p;
            }
            let n2 = norm(&states[t], &lw.mlp_norm);
            let gate = mv(&n2, &lw.w_gate);
            let up = mv(&n2, &lw.w_up);
            let act: Vec<f64> = gate
                .iter()
                .zip(&up)
                .map(|(&g, &u)| (g / (1.0 + (-g).exp())) * u)
                .collect();
            let down = mv(&act, &lw.w_down);
            for (s, d) in states[t].iter_mut().zip(&down) {
                *s += d;
            }
        }
    }
    let fin = norm(&states[t_len - 1], &w.final_norm);
    match &w.output {
        OutputProjection::Untied(m) => mv(&fin, m),
        OutputProjection::Tied => (0..w.token_embedding.rows())
            .map(|v| {
                fin.iter()
                    .zip(w.token_embedding.row(v))
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect(),
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

fn encoder_kinds() -> Vec<PositionEncoderSpec> {
    let cfg = test_config();
    let mut ratios = Vec::new();
    for layer in 0..cfg.n_layers {
        ratios.push(
            (0..cfg.n_heads)
                .map(|h| 1.0 + 0.2 * (layer + h) as f64)
                .collect(),
        );
    }
    vec![
        PositionEncoderSpec::Standard,
        PositionEncoderSpec::uniform(1.5).unwrap(),
        PositionEncoderSpec::grouped(2, 4).unwrap(),
        PositionEncoderSpec::MultiScale(RatioAssignment::new(ratios).unwrap()),
    ]
}

#[test]
fn single_token_prompt_snapshot_is_delta() {
    let model = test_model(1);
    let out = model
        .forward_prefill(&[3], &PositionEncoderSpec::Standard, true)
        .unwrap();
    let snap = out.snapshot.unwrap();
    for layer in 0..2 {
        for head in 0..3 {
            assert_eq!(snap.row(layer, head).unwrap(), &[1.0]);
        }
    }
}

#[test]
fn standard_and_uniform_one_are_bitwise_identical() {
    let model = test_model(2);
    let prompt = test_prompt(24);
    let a = model
        .forward_prefill(&prompt, &PositionEncoderSpec::Standard, false)
        .unwrap();
    let b = model
        .forward_prefill(&prompt, &PositionEncoderSpec::uniform(1.0).unwrap(), false)
        .unwrap();
    assert_eq!(a.last_logits, b.last_logits);
}

#[test]
fn prefill_matches_naive_recompute_oracle() {
    let model = test_model(3);
    let prompt = test_prompt(17);
    for spec in encoder_kinds() {
        let got = model.forward_prefill(&prompt, &spec, false).unwrap();
        let want = naive_last_logits(&model, &prompt, &spec);
        assert_close(&got.last_logits, &want, 1e-9);
    }
}

#[test]
fn decode_matches_full_recompute_for_every_encoder() {
    let model = test_model(4);
    let prompt = test_prompt(9);
    for spec in encoder_kinds() {
        let mut out = model.forward_prefill(&prompt, &spec, false).unwrap();
        let mut context = prompt.clone();
        let mut logits = out.last_logits;
        for step in 0..5u32 {
            let next = step * 3 % 20;
            context.push(next);
            logits = model
                .forward_decode_step(next, &mut out.cache, &spec)
                .unwrap();
            let recompute = model.forward_prefill(&context, &spec, false).unwrap();
            assert_close(&logits, &recompute.last_logits, 1e-9);
        }
        let _ = logits;
    }
}

#[test]
fn zero_weights_give_uniform_logits() {
    let cfg = test_config();
    let model = Model::new(cfg, Weights::zeros(&cfg)).unwrap();
    let out = model
        .forward_prefill(&test_prompt(6), &PositionEncoderSpec::Standard, false)
        .unwrap();
    for &l in &out.last_logits {
        assert_eq!(l, 0.0);
    }
}

#[test]
fn decoding_is_deterministic() {
    let model = test_model(5);
    let prompt = test_prompt(12);
    let spec = PositionEncoderSpec::uniform(1.3).unwrap();
    let a = model.greedy_generate(&prompt, &spec, 6).unwrap();
    let b = model.greedy_generate(&prompt, &spec, 6).unwrap();
    assert_eq!(a, b);
}

#[test]
fn greedy_zero_new_tokens_is_empty() {
    let model = test_model(6);
    assert_eq!(
        model
            .greedy_generate(&test_prompt(4), &PositionEncoderSpec::Standard, 0)
            .unwrap(),
        Vec::<u32>::new()
    );
}

#[test]
fn causality_under_suffix_perturbation() {
    let model = test_model(7);
    let spec = PositionEncoderSpec::Standard;
    let prompt = test_prompt(14);
    let mut perturbed = prompt.clone();
    let cut = 8;
    for t in perturbed.iter_mut().skip(cut) {
        *t = (*t + 5) % 20;
    }
    let a = model.forward_prefill(&prompt, &spec, false).unwrap();
    let b = model.forward_prefill(&perturbed, &spec, false).unwrap();
    // Cached states at positions before the perturbation are identical.
    for layer in 0..model.config().n_layers {
        assert_eq!(a.cache.keys(layer)[..cut], b.cache.keys(layer)[..cut]);
        assert_eq!(a.cache.values(layer)[..cut], b.cache.values(layer)[..cut]);
    }
    // And the logits of the shared prefix do not see the suffix at all.
    let prefix = model.forward_prefill(&prompt[..cut], &spec, false).unwrap();
    let prefix_b = model.forward_prefill(&perturbed[..cut], &spec, false).unwrap();
    assert_eq!(prefix.last_logits, prefix_b.last_logits);
}

#[test]
fn snapshot_rows_are_distributions() {
    let model = test_model(8);
    let out = model
        .forward_prefill(&test_prompt(20), &PositionEncoderSpec::Standard, true)
        .unwrap();
    let snap = out.snapshot.unwrap();
    for layer in 0..2 {
        for head in 0..3 {
            let row = snap.row(layer, head).unwrap();
            assert_eq!(row.len(), 20);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }
}

#[test]
fn cache_contents_do_not_depend_on_encoder_installed_at_read_time() {
    let model = test_model(9);
    let prompt = test_prompt(10);
    let out = model
        .forward_prefill(&prompt, &PositionEncoderSpec::Standard, false)
        .unwrap();
    let mut cache = out.cache;
    let before: Vec<Vec<Vec<f64>>> = (0..model.config().n_layers)
        .map(|l| cache.keys(l).to_vec())
        .collect();
    // Read the same cache under a different encoder spec.
    let spec = PositionEncoderSpec::MultiScale(RatioAssignment::uniform(2, 3, 1.3).unwrap());
    model.forward_decode_step(1, &mut cache, &spec).unwrap();
    for (layer, frozen) in before.iter().enumerate() {
        for (pos, row) in frozen.iter().enumerate() {
            let now = &cache.keys(layer)[pos];
            assert!(row.iter().zip(now.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

#[test]
fn token_out_of_vocab_rejected() {
    let model = test_model(10);
    assert!(matches!(
        model.forward_prefill(&[1, 99], &PositionEncoderSpec::Standard, false),
        Err(Error::TokenOutOfVocab { token: 99, .. })
    ));
}

#[test]
fn prompt_longer_than_max_seq_rejected() {
    let model = test_model(11);
    let long = vec![1u32; 49];
    assert!(matches!(
        model.forward_prefill(&long, &PositionEncoderSpec::Standard, false),
        Err(Error::SequenceTooLong { .. })
    ));
}

#[test]
fn decode_over_capacity_rejected() {
    let model = test_model(12);
    let prompt = vec![1u32; 48];
    let mut out = model
        .forward_prefill(&prompt, &PositionEncoderSpec::Standard, false)
        .unwrap();
    assert!(matches!(
        model.forward_decode_step(1, &mut out.cache, &PositionEncoderSpec::Standard),
        Err(Error::SequenceTooLong { .. })
    ));
}

#[test]
fn argmax_breaks_ties_toward_lowest_id() {
    assert_eq!(argmax_token(&[0.0, 1.0, 1.0]), 1);
    assert_eq!(argmax_token(&[2.0, 2.0, 2.0]), 0);
    assert_eq!(argmax_token(&[-1.0, -3.0]), 0);
}

// ---- weight-file format ----

#[test]
fn save_load_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mspe");
    let model = test_model(13);
    save_weights(&path, model.config(), model.weights()).unwrap();
    let (config, weights) = load_weights(&path).unwrap();
    assert_eq!(&config, model.config());
    assert_eq!(&weights, model.weights());

    // Saving the loaded copy reproduces the same bytes.
    let path2 = dir.path().join("model2.mspe");
    save_weights(&path2, &config, &weights).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());

    // Sidecar carries the same config.
    let sidecar: ModelConfig = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("model.mspe.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(&sidecar, model.config());
}

#[test]
fn tied_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tied.mspe");
    let cfg = test_config();
    let mut weights = build_random_model(&cfg, 14).unwrap().weights().clone();
    weights.output = OutputProjection::Tied;
    save_weights(&path, &cfg, &weights).unwrap();
    let (_, loaded) = load_weights(&path).unwrap();
    assert_eq!(loaded, weights);
}

#[allow(clippy::too_many_arguments)]
fn raw_header(
    n_layers: u32,
    n_heads: u32,
    head_dim: u32,
    mlp_dim: u32,
    vocab: u32,
    max_seq: u32,
    tied: u32,
    base: f64,
) -> Vec<u8> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"MSPE");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    for v in [n_layers, n_heads, head_dim, mlp_dim, vocab, max_seq, tied] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&base.to_le_bytes());
    bytes
}

#[test]
fn bad_magic_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.mspe");
    std::fs::write(&path, b"NOPE0000").unwrap();
    assert!(matches!(load_weights(&path), Err(Error::BadMagic)));
}

#[test]
fn unsupported_version_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v9.mspe");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"MSPE");
    bytes.extend_from_slice(&9u32.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_weights(&path), Err(Error::BadVersion(9))));
}

#[test]
fn truncated_file_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mspe");
    let model = test_model(15);
    save_weights(&path, model.config(), model.weights()).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let header_cut = dir.path().join("header_cut.mspe");
    std::fs::write(&header_cut, &bytes[..10]).unwrap();
    assert!(matches!(load_weights(&header_cut), Err(Error::Truncated(_))));

    let tensor_cut = dir.path().join("tensor_cut.mspe");
    std::fs::write(&tensor_cut, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_weights(&tensor_cut), Err(Error::Truncated(_))));
}

#[test]
fn odd_head_dim_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("odd.mspe");
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(&raw_header(1, 1, 7, 1, 4, 8, 1, 10000.0)).unwrap();
    drop(f);
    assert!(matches!(load_weights(&path), Err(Error::Config(_))));
}

#[test]
fn missing_tensor_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.mspe");
    std::fs::write(&path, raw_header(1, 1, 2, 1, 4, 8, 1, 10000.0)).unwrap();
    match load_weights(&path) {
        Err(Error::MissingTensor(name)) => assert_eq!(name, "token_embedding"),
        other => panic!("expected missing-tensor error, got {other:?}"),
    }
}
