//! Decoder-only transformer with a pluggable position encoder.
//!
//! Blocks are pre-norm: RMS-norm, multi-head causal self-attention, residual
//! add, RMS-norm, SiLU-gated MLP, residual add. Attention logits are scaled
//! by `1/sqrt(head_dim)` inside the softmax.
//!
//! Keys and values are cached *unrotated*; rotations are applied lazily at
//! attention time with whatever [`PositionEncoderSpec`] is active. Installing
//! a new encoder between two attention computations over the same cache
//! therefore changes only the rotation angles applied at read time, never the
//! stored vectors.

mod weights;

pub use weights::{load_weights, save_weights, LayerWeights, OutputProjection, Weights};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics;
use crate::posenc::{self, PositionEncoderSpec, RatioAssignment, RopeParams};

/// RMS-norm epsilon used by every block.
pub const NORM_EPS: f64 = 1e-5;

/// One vector per head (attention rows, rotated keys, ...).
type PerHead = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be >= 1".into()));
        }
        if self.n_heads == 0 {
            return Err(Error::Config("n_heads must be >= 1".into()));
        }
        RopeParams::new(self.head_dim, self.rope_base)?;
        if self.mlp_dim == 0 {
            return Err(Error::Config("mlp_dim must be >= 1".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn rope(&self) -> RopeParams {
        RopeParams {
            head_dim: self.head_dim,
            base: self.rope_base,
        }
    }
}

/// Per-layer store of unrotated key/value rows in token order.
#[derive(Debug, Clone, PartialEq)]
pub struct KVCache {
    max_seq_len: usize,
    layers: Vec<LayerKv>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct LayerKv {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl KVCache {
    fn new(n_layers: usize, max_seq_len: usize) -> Self {
        Self {
            max_seq_len,
            layers: vec![LayerKv::default(); n_layers],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of cached tokens; identical for every layer and head.
    pub fn current_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.keys.len())
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    pub fn keys(&self, layer: usize) -> &[Vec<f64>] {
        &self.layers[layer].keys
    }

    pub fn values(&self, layer: usize) -> &[Vec<f64>] {
        &self.layers[layer].values
    }

    fn push(&mut self, layer: usize, key: Vec<f64>, value: Vec<f64>) {
        let l = &mut self.layers[layer];
        l.keys.push(key);
        l.values.push(value);
    }
}

/// Post-softmax attention of the last prompt token over all context
/// positions, per layer and head, captured at prefill time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSnapshot {
    context_len: usize,
    rows: Vec<Vec<Vec<f64>>>,
}

impl AttentionSnapshot {
    /// Builds a snapshot without validating row shapes; consumers that
    /// require completeness check via [`AttentionSnapshot::row`].
    pub fn from_rows(rows: Vec<Vec<Vec<f64>>>, context_len: usize) -> Self {
        Self { context_len, rows }
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn n_layers(&self) -> usize {
        self.rows.len()
    }

    pub fn n_heads(&self, layer: usize) -> usize {
        self.rows.get(layer).map_or(0, |l| l.len())
    }

    pub fn row(&self, layer: usize, head: usize) -> Result<&[f64]> {
        let row = self
            .rows
            .get(layer)
            .and_then(|l| l.get(head))
            .ok_or(Error::IncompleteSnapshot { layer, head })?;
        if row.len() != self.context_len {
            return Err(Error::IncompleteSnapshot { layer, head });
        }
        Ok(row)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub struct PrefillOutput {
    pub last_logits: Vec<f64>,
    pub cache: KVCache,
    pub snapshot: Option<AttentionSnapshot>,
}

/// How one layer's attention maps token positions: either a full encoder
/// spec, or a per-head uniform rescale used while ratios are being installed
/// layer by layer.
enum LayerEncoding<'a> {
    Spec(&'a PositionEncoderSpec),
    HeadRatios(&'a [f64]),
}

impl LayerEncoding<'_> {
    fn positions(&self, layer: usize, head: usize, q_pos: usize, k_pos: usize) -> Result<(f64, f64)> {
        match self {
            Self::Spec(spec) => posenc::map_position(spec, layer, head, q_pos, k_pos),
            Self::HeadRatios(ratios) => {
                let r = *ratios
                    .get(head)
                    .ok_or(Error::AssignmentCoverage { layer, head })?;
                Ok((q_pos as f64 / r, k_pos as f64 / r))
            }
        }
    }

    /// True when a key's effective position does not depend on the query
    /// position, so rotated keys can be computed once per layer.
    fn key_position_stable(&self) -> bool {
        !matches!(self, Self::Spec(PositionEncoderSpec::Grouped { .. }))
    }
}

pub struct Model {
    config: ModelConfig,
    weights: Weights,
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    fn embed(&self, token: u32) -> Result<Vec<f64>> {
        if (token as usize) >= self.config.vocab_size {
            return Err(Error::TokenOutOfVocab {
                token,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(self.weights.token_embedding.row(token as usize).to_vec())
    }

    fn validate_prompt(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("prompt"));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                requested: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        for &t in tokens {
            if (t as usize) >= self.config.vocab_size {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab_size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn project_qkv(
        &self,
        layer: usize,
        states: &[Vec<f64>],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let lw = &self.weights.layers[layer];
        let mut qs = Vec::with_capacity(states.len());
        let mut ks = Vec::with_capacity(states.len());
        let mut vs = Vec::with_capacity(states.len());
        for state in states {
            let normed = numerics::rms_norm(state, &lw.attn_norm, NORM_EPS)?;
            qs.push(numerics::vecmat(&normed, &lw.wq)?);
            ks.push(numerics::vecmat(&normed, &lw.wk)?);
            vs.push(numerics::vecmat(&normed, &lw.wv)?);
        }
        Ok((qs, ks, vs))
    }

    /// Multi-head causal attention. `queries[i]` sits at absolute position
    /// `query_offset + i` and attends `keys[0..=position]`. Returns per-query
    /// concatenated head outputs, plus the post-softmax row of the query at
    /// the final context position per head when `capture` is set.
    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        layer: usize,
        queries: &[Vec<f64>],
        keys: &[Vec<f64>],
        values: &[Vec<f64>],
        enc: &LayerEncoding,
        capture: bool,
        query_offset: usize,
    ) -> Result<(PerHead, Option<PerHead>)> {
        let cfg = &self.config;
        let h_dim = cfg.head_dim;
        let rope = cfg.rope();
        let scale = 1.0 / (h_dim as f64).sqrt();
        let mut outputs = vec![vec![0.0; cfg.hidden_dim()]; queries.len()];
        let mut last_rows = capture.then(|| vec![Vec::new(); cfg.n_heads]);

        for head in 0..cfg.n_heads {
            let hs = head * h_dim;
            let he = hs + h_dim;

            let rot_keys = if enc.key_position_stable() {
                let mut rk = Vec::with_capacity(keys.len());
                for (j, key) in keys.iter().enumerate() {
                    let (_, kp) = enc.positions(layer, head, j, j)?;
                    rk.push(posenc::rotate(&key[hs..he], kp, &rope)?);
                }
                Some(rk)
            } else {
                None
            };

            for (qi, query) in queries.iter().enumerate() {
                let q_pos = query_offset + qi;
                let (q_eff, _) = enc.positions(layer, head, q_pos, q_pos)?;
                let q_rot = posenc::rotate(&query[hs..he], q_eff, &rope)?;

                let mut scores = Vec::with_capacity(q_pos + 1);
                for j in 0..=q_pos {
                    let s = match &rot_keys {
                        Some(rk) => numerics::dot(&q_rot, &rk[j]),
                        None => {
                            let (_, kp) = enc.positions(layer, head, q_pos, j)?;
                            let k_rot = posenc::rotate(&keys[j][hs..he], kp, &rope)?;
                            numerics::dot(&q_rot, &k_rot)
                        }
                    };
                    scores.push(s * scale);
                }
                let attn_weights = numerics::softmax(&scores)?;

                let out = &mut outputs[qi][hs..he];
                for (j, &w) in attn_weights.iter().enumerate() {
                    for (o, &v) in out.iter_mut().zip(&values[j][hs..he]) {
                        *o += w * v;
                    }
                }

                if let Some(rows) = &mut last_rows {
                    if q_pos + 1 == keys.len() {
                        rows[head] = attn_weights;
                    }
                }
            }
        }
        Ok((outputs, last_rows))
    }

    /// Output projection, residual add, and the gated MLP for each position.
    fn finish_layer(&self, layer: usize, states: &mut [Vec<f64>], attn: &[Vec<f64>]) -> Result<()> {
        let lw = &self.weights.layers[layer];
        for (state, a) in states.iter_mut().zip(attn) {
            let proj = numerics::vecmat(a, &lw.wo)?;
            for (s, p) in state.iter_mut().zip(&proj) {
                *s += p;
            }
            let normed = numerics::rms_norm(state, &lw.mlp_norm, NORM_EPS)?;
            let gate = numerics::vecmat(&normed, &lw.w_gate)?;
            let up = numerics::vecmat(&normed, &lw.w_up)?;
            let act: Vec<f64> = gate.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect();
            let down = numerics::vecmat(&act, &lw.w_down)?;
            for (s, d) in state.iter_mut().zip(&down) {
                *s += d;
            }
        }
        Ok(())
    }

    fn logits(&self, state: &[f64]) -> Result<Vec<f64>> {
        let normed = numerics::rms_norm(state, &self.weights.final_norm, NORM_EPS)?;
        match &self.weights.output {
            OutputProjection::Untied(m) => numerics::vecmat(&normed, m),
            OutputProjection::Tied => {
                let emb = &self.weights.token_embedding;
                Ok((0..emb.rows())
                    .map(|v| numerics::dot(&normed, emb.row(v)))
                    .collect())
            }
        }
    }

    /// Causal forward pass over the whole prompt, filling the KV cache with
    /// unrotated keys/values. With `capture`, the last prompt token's
    /// post-softmax attention row is recorded for every layer and head.
    pub fn forward_prefill(
        &self,
        tokens: &[u32],
        encoder: &PositionEncoderSpec,
        capture: bool,
    ) -> Result<PrefillOutput> {
        self.validate_prompt(tokens)?;
        let mut states: Vec<Vec<f64>> = tokens
            .iter()
            .map(|&t| self.embed(t))
            .collect::<Result<_>>()?;
        let mut cache = KVCache::new(self.config.n_layers, self.config.max_seq_len);
        let mut snap_rows = Vec::new();
        let enc = LayerEncoding::Spec(encoder);

        for layer in 0..self.config.n_layers {
            let (qs, ks, vs) = self.project_qkv(layer, &states)?;
            for (k, v) in ks.into_iter().zip(vs) {
                cache.push(layer, k, v);
            }
            let (attn, rows) = self.attend(
                layer,
                &qs,
                cache.keys(layer),
                cache.values(layer),
                &enc,
                capture,
                0,
            )?;
            if let Some(rows) = rows {
                snap_rows.push(rows);
            }
            self.finish_layer(layer, &mut states, &attn)?;
        }

        let last_logits = self.logits(states.last().expect("non-empty prompt"))?;
        let snapshot = capture.then(|| AttentionSnapshot::from_rows(snap_rows, tokens.len()));
        Ok(PrefillOutput {
            last_logits,
            cache,
            snapshot,
        })
    }

    /// Prefill that installs per-head rescaling ratios layer by layer: each
    /// layer's last-query attention is first computed under `baseline` and
    /// handed to `assign`, which returns that layer's per-head ratios; the
    /// layer's attention is then recomputed with those ratios before its
    /// output feeds the next layer.
    ///
    /// The returned snapshot holds the baseline rows the scoring saw.
    pub fn forward_prefill_per_layer_rescale<F>(
        &self,
        tokens: &[u32],
        baseline: &PositionEncoderSpec,
        mut assign: F,
    ) -> Result<(PrefillOutput, RatioAssignment)>
    where
        F: FnMut(usize, &[Vec<f64>]) -> Result<Vec<f64>>,
    {
        self.validate_prompt(tokens)?;
        let mut states: Vec<Vec<f64>> = tokens
            .iter()
            .map(|&t| self.embed(t))
            .collect::<Result<_>>()?;
        let mut cache = KVCache::new(self.config.n_layers, self.config.max_seq_len);
        let mut snap_rows = Vec::with_capacity(self.config.n_layers);
        let mut all_ratios = Vec::with_capacity(self.config.n_layers);
        let last = states.len() - 1;

        for layer in 0..self.config.n_layers {
            let (qs, ks, vs) = self.project_qkv(layer, &states)?;
            for (k, v) in ks.into_iter().zip(vs) {
                cache.push(layer, k, v);
            }
            // Scoring pass: only the last query's rows are needed.
            let (_, rows) = self.attend(
                layer,
                &qs[last..],
                cache.keys(layer),
                cache.values(layer),
                &LayerEncoding::Spec(baseline),
                true,
                last,
            )?;
            let rows = rows.expect("capture requested");
            let ratios = assign(layer, &rows)?;
            if ratios.len() != self.config.n_heads {
                return Err(Error::Config(format!(
                    "layer {layer}: assigned {} ratios for {} heads",
                    ratios.len(),
                    self.config.n_heads
                )));
            }
            let (attn, _) = self.attend(
                layer,
                &qs,
                cache.keys(layer),
                cache.values(layer),
                &LayerEncoding::HeadRatios(&ratios),
                false,
                0,
            )?;
            snap_rows.push(rows);
            all_ratios.push(ratios);
            self.finish_layer(layer, &mut states, &attn)?;
        }

        let last_logits = self.logits(states.last().expect("non-empty prompt"))?;
        let snapshot = AttentionSnapshot::from_rows(snap_rows, tokens.len());
        let assignment = RatioAssignment::new(all_ratios)?;
        Ok((
            PrefillOutput {
                last_logits,
                cache,
                snapshot: Some(snapshot),
            },
            assignment,
        ))
    }

    /// Appends one token to the cache and returns its logits. The new
    /// token's query/key positions pass through the same encoder mapping.
    pub fn forward_decode_step(
        &self,
        token: u32,
        cache: &mut KVCache,
        encoder: &PositionEncoderSpec,
    ) -> Result<Vec<f64>> {
        if cache.current_len() == 0 {
            return Err(Error::Config("decode requires a prefilled cache".into()));
        }
        if cache.n_layers() != self.config.n_layers {
            return Err(Error::Config(format!(
                "cache has {} layers, model has {}",
                cache.n_layers(),
                self.config.n_layers
            )));
        }
        if cache.current_len() + 1 > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                requested: cache.current_len() + 1,
                max: self.config.max_seq_len,
            });
        }
        let offset = cache.current_len();
        let mut state = self.embed(token)?;
        let enc = LayerEncoding::Spec(encoder);

        for layer in 0..self.config.n_layers {
            let (qs, mut ks, mut vs) = self.project_qkv(layer, std::slice::from_ref(&state))?;
            cache.push(layer, ks.remove(0), vs.remove(0));
            let (attn, _) = self.attend(
                layer,
                &qs,
                cache.keys(layer),
                cache.values(layer),
                &enc,
                false,
                offset,
            )?;
            self.finish_layer(layer, std::slice::from_mut(&mut state), &attn)?;
        }
        self.logits(&state)
    }

    /// Argmax decoding for `max_new` tokens starting from `last_logits` over
    /// an already-filled cache. Ties break toward the lowest token id.
    pub fn greedy_continue(
        &self,
        last_logits: Vec<f64>,
        cache: &mut KVCache,
        encoder: &PositionEncoderSpec,
        max_new: usize,
    ) -> Result<Vec<u32>> {
        let mut logits = last_logits;
        let mut out = Vec::with_capacity(max_new);
        while out.len() < max_new {
            let tok = argmax_token(&logits);
            out.push(tok);
            if out.len() == max_new {
                break;
            }
            logits = self.forward_decode_step(tok, cache, encoder)?;
        }
        Ok(out)
    }

    pub fn greedy_generate(
        &self,
        tokens: &[u32],
        encoder: &PositionEncoderSpec,
        max_new: usize,
    ) -> Result<Vec<u32>> {
        if max_new == 0 {
            self.validate_prompt(tokens)?;
            return Ok(Vec::new());
        }
        let mut prefill = self.forward_prefill(tokens, encoder, false)?;
        self.greedy_continue(prefill.last_logits, &mut prefill.cache, encoder, max_new)
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Index of the maximum logit; ties break toward the lowest token id.
pub fn argmax_token(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    let mut best_v = logits[0];
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best as u32
}

#[cfg(test)]
mod tests;
