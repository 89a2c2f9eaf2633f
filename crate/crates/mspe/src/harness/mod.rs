//! Synthetic retrieval tasks, constructed models, and context-utilization
//! metrics.
//!
//! Two task families mirror common long-context probes at desk scale:
//! key-value retrieval (pairs of key/value tokens, query the value of one
//! key) and a multi-document QA analogue (filler documents, one of which
//! embeds a marker/answer pair; the question is the marker). Both sweep the
//! relevant item across every slot; the report carries the per-position
//! accuracy curve plus its mean (Average) and best-worst spread (Gap).

mod induction;
mod random;

pub use induction::{
    build_induction_model, induction_config, FIRST_BIASED_HEAD, MATCH_HEAD, PREV_HEAD,
    RECENT_BIASED_HEAD,
};
pub use random::build_random_model;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::pipeline::{run_mspoe, PipelineConfig};
use crate::posenc::PositionEncoderSpec;

/// Disjoint token-id ranges: pad, keys, one marker, values, filler.
///
/// Keys and the marker participate in content matching; answers are always
/// values; filler never collides with either, which guarantees exactly one
/// relevant item per prompt by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub n_keys: usize,
    pub n_values: usize,
    pub n_filler: usize,
}

impl Default for VocabLayout {
    fn default() -> Self {
        Self {
            n_keys: 8,
            n_values: 16,
            n_filler: 16,
        }
    }
}

impl VocabLayout {
    pub fn pad(&self) -> u32 {
        0
    }

    pub fn key(&self, i: usize) -> u32 {
        debug_assert!(i < self.n_keys);
        1 + i as u32
    }

    pub fn marker(&self) -> u32 {
        1 + self.n_keys as u32
    }

    pub fn value(&self, i: usize) -> u32 {
        debug_assert!(i < self.n_values);
        2 + (self.n_keys + i) as u32
    }

    pub fn filler(&self, i: usize) -> u32 {
        debug_assert!(i < self.n_filler);
        2 + (self.n_keys + self.n_values + i) as u32
    }

    pub fn vocab_size(&self) -> usize {
        2 + self.n_keys + self.n_values + self.n_filler
    }

    pub fn is_value(&self, token: u32) -> bool {
        let lo = self.value(0);
        token >= lo && token < lo + self.n_values as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    KvRetrieval,
    Mdqa,
}

/// One concrete retrieval prompt with its expected exact-match answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTask {
    pub kind: TaskKind,
    pub n_items: usize,
    pub item_len: usize,
    pub relevant_index: usize,
    pub prompt_tokens: Vec<u32>,
    pub expected_answer: Vec<u32>,
}

/// Partial Fisher-Yates: the first `count` entries of a shuffled
/// `0..pool_size`, deterministic in the RNG state.
fn sample_distinct(rng: &mut ChaCha8Rng, pool_size: usize, count: usize) -> Vec<usize> {
    debug_assert!(count <= pool_size);
    let mut pool: Vec<usize> = (0..pool_size).collect();
    for i in 0..count {
        let j = rng.random_range(i..pool_size);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// Key-value retrieval: `n_pairs` (key, value) pairs in slot order, with the
/// queried key appended as the question. The relevant pair sits at
/// `relevant_index`; moving it permutes slot order only, so the prompt's
/// token multiset is independent of the slot.
pub fn gen_kv_task(
    n_pairs: usize,
    seed: u64,
    vocab: &VocabLayout,
    relevant_index: usize,
) -> Result<RetrievalTask> {
    if n_pairs == 0 {
        return Err(Error::Config("kv task needs at least one pair".into()));
    }
    if relevant_index >= n_pairs {
        return Err(Error::Config(format!(
            "relevant_index {relevant_index} out of range for {n_pairs} pairs"
        )));
    }
    if n_pairs > vocab.n_keys {
        return Err(Error::VocabTooSmall(format!(
            "{n_pairs} distinct keys requested, vocabulary has {}",
            vocab.n_keys
        )));
    }
    if n_pairs > vocab.n_values {
        return Err(Error::VocabTooSmall(format!(
            "{n_pairs} distinct values requested, vocabulary has {}",
            vocab.n_values
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<u32> = sample_distinct(&mut rng, vocab.n_keys, n_pairs)
        .into_iter()
        .map(|i| vocab.key(i))
        .collect();
    let values: Vec<u32> = sample_distinct(&mut rng, vocab.n_values, n_pairs)
        .into_iter()
        .map(|i| vocab.value(i))
        .collect();

    // Pair 0 is the relevant one; the rest fill the remaining slots in order.
    let mut slots: Vec<(u32, u32)> = Vec::with_capacity(n_pairs);
    let mut rest = keys.iter().zip(&values).skip(1);
    for slot in 0..n_pairs {
        if slot == relevant_index {
            slots.push((keys[0], values[0]));
        } else {
            let (&k, &v) = rest.next().expect("enough pairs");
            slots.push((k, v));
        }
    }
    let mut prompt = Vec::with_capacity(2 * n_pairs + 1);
    for (k, v) in &slots {
        prompt.push(*k);
        prompt.push(*v);
    }
    prompt.push(keys[0]);

    Ok(RetrievalTask {
        kind: TaskKind::KvRetrieval,
        n_items: n_pairs,
        item_len: 2,
        relevant_index,
        prompt_tokens: prompt,
        expected_answer: vec![values[0]],
    })
}

/// Multi-document QA analogue: `n_docs` filler documents of `doc_len`
/// tokens; the relevant one embeds a (marker, answer) pair at a seeded
/// offset, and the question is the marker token.
pub fn gen_mdqa_task(
    n_docs: usize,
    doc_len: usize,
    seed: u64,
    vocab: &VocabLayout,
    relevant_index: usize,
) -> Result<RetrievalTask> {
    if n_docs == 0 {
        return Err(Error::Config("mdqa task needs at least one document".into()));
    }
    if doc_len < 2 {
        return Err(Error::Config("doc_len must be >= 2 to hold marker and answer".into()));
    }
    if relevant_index >= n_docs {
        return Err(Error::Config(format!(
            "relevant_index {relevant_index} out of range for {n_docs} documents"
        )));
    }
    if vocab.n_filler == 0 || vocab.n_values == 0 {
        return Err(Error::VocabTooSmall(
            "mdqa needs filler and value ranges".into(),
        ));
    }
    // Draw everything in a fixed order so the content is a pure function of
    // the seed and the relevant index only permutes document order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let answer_idx = rng.random_range(0..vocab.n_values);
    let answer = vocab.value(answer_idx);
    let offset = rng.random_range(0..=doc_len - 2);
    // Roughly a quarter of document tokens are distractor values (never the
    // answer itself), so retrieval has plausible wrong answers to beat.
    let doc_token = |rng: &mut ChaCha8Rng| -> u32 {
        if rng.random_range(0..4usize) == 0 && vocab.n_values > 1 {
            let mut idx = rng.random_range(0..vocab.n_values - 1);
            if idx >= answer_idx {
                idx += 1;
            }
            vocab.value(idx)
        } else {
            vocab.filler(rng.random_range(0..vocab.n_filler))
        }
    };
    let mut relevant_doc: Vec<u32> = (0..doc_len).map(|_| doc_token(&mut rng)).collect();
    relevant_doc[offset] = vocab.marker();
    relevant_doc[offset + 1] = answer;
    let filler_docs: Vec<Vec<u32>> = (0..n_docs - 1)
        .map(|_| (0..doc_len).map(|_| doc_token(&mut rng)).collect())
        .collect();

    let mut prompt = Vec::with_capacity(n_docs * doc_len + 1);
    let mut rest = filler_docs.iter();
    for slot in 0..n_docs {
        if slot == relevant_index {
            prompt.extend_from_slice(&relevant_doc);
        } else {
            prompt.extend_from_slice(rest.next().expect("enough docs"));
        }
    }
    prompt.push(vocab.marker());

    Ok(RetrievalTask {
        kind: TaskKind::Mdqa,
        n_items: n_docs,
        item_len: doc_len,
        relevant_index,
        prompt_tokens: prompt,
        expected_answer: vec![answer],
    })
}

/// Task family parameters; `generate` produces one seeded sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub n_items: usize,
    pub item_len: usize,
    pub vocab: VocabLayout,
}

impl TaskSpec {
    pub fn kv(n_pairs: usize) -> Self {
        Self {
            kind: TaskKind::KvRetrieval,
            n_items: n_pairs,
            item_len: 2,
            vocab: VocabLayout::default(),
        }
    }

    pub fn mdqa(n_docs: usize, doc_len: usize) -> Self {
        Self {
            kind: TaskKind::Mdqa,
            n_items: n_docs,
            item_len: doc_len,
            vocab: VocabLayout::default(),
        }
    }

    pub fn generate(&self, seed: u64, relevant_index: usize) -> Result<RetrievalTask> {
        match self.kind {
            TaskKind::KvRetrieval => gen_kv_task(self.n_items, seed, &self.vocab, relevant_index),
            TaskKind::Mdqa => {
                gen_mdqa_task(self.n_items, self.item_len, seed, &self.vocab, relevant_index)
            }
        }
    }
}

/// Per-position accuracy curve plus Average and Gap for one
/// (model, encoder, task) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub encoder_label: String,
    pub per_position_accuracy: Vec<f64>,
    pub average: f64,
    pub gap: f64,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn from_accuracies(encoder_label: String, acc: Vec<f64>, n_samples: usize) -> Self {
        let mut sum = 0.0;
        for &a in &acc {
            sum += a;
        }
        let average = sum / acc.len() as f64;
        let max = acc.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a));
        let min = acc.iter().fold(f64::INFINITY, |m, &a| m.min(a));
        Self {
            encoder_label,
            per_position_accuracy: acc,
            average,
            gap: max - min,
            n_samples,
        }
    }

    pub const CSV_HEADER: &'static str = "encoder_label,position,accuracy,average,gap";

    /// One CSV row per position; `average` and `gap` repeat on every row so
    /// each row is self-contained.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (pos, acc) in self.per_position_accuracy.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.encoder_label, pos, acc, self.average, self.gap
            ));
        }
        out
    }
}

/// What executes one task: a fixed encoder, or the full multi-scale
/// pipeline.
pub enum EvalRunner<'a> {
    Encoder(&'a PositionEncoderSpec),
    Pipeline(&'a PipelineConfig),
}

impl EvalRunner<'_> {
    pub fn label(&self) -> String {
        match self {
            Self::Encoder(spec) => spec.label(),
            Self::Pipeline(cfg) => cfg.label(),
        }
    }
}

/// Worker count from `MSPE_THREADS`; 0 or unset means serial.
fn worker_count() -> usize {
    std::env::var("MSPE_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

/// Runs `f` over `0..n`, optionally in parallel; results come back in index
/// order, so parallel and serial runs are bitwise identical.
fn run_batch<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = worker_count();
    if workers <= 1 {
        (0..n).map(f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(&f).collect()
        })
    }
}

/// Sweeps the relevant item across every slot, running `n_samples` seeded
/// tasks per slot and scoring exact match of the expected answer tokens.
/// Sample `s` uses seed `base_seed + s` at every slot, so slots see the same
/// content with only the placement varied.
pub fn evaluate(
    model: &Model,
    task: &TaskSpec,
    runner: &EvalRunner,
    n_samples: usize,
    base_seed: u64,
) -> Result<EvalReport> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    if task.n_items == 0 {
        return Err(Error::Config("task needs at least one item".into()));
    }
    let n_items = task.n_items;
    let outcomes = run_batch(n_items * n_samples, |idx| {
        let position = idx / n_samples;
        let sample = idx % n_samples;
        let t = task.generate(base_seed.wrapping_add(sample as u64), position)?;
        let got = match runner {
            EvalRunner::Encoder(enc) => {
                model.greedy_generate(&t.prompt_tokens, enc, t.expected_answer.len())?
            }
            EvalRunner::Pipeline(cfg) => {
                run_mspoe(model, &t.prompt_tokens, cfg, t.expected_answer.len())?.output_tokens
            }
        };
        Ok(got == t.expected_answer)
    })?;
    let accuracies = (0..n_items)
        .map(|pos| {
            let hits = outcomes[pos * n_samples..(pos + 1) * n_samples]
                .iter()
                .filter(|&&hit| hit)
                .count();
            hits as f64 / n_samples as f64
        })
        .collect();
    Ok(EvalReport::from_accuracies(runner.label(), accuracies, n_samples))
}

/// One evaluation per uniform rescaling ratio.
pub fn ratio_sweep(
    model: &Model,
    task: &TaskSpec,
    ratios: &[f64],
    n_samples: usize,
    base_seed: u64,
) -> Result<Vec<EvalReport>> {
    if ratios.is_empty() {
        return Err(Error::Config("ratio sweep needs at least one ratio".into()));
    }
    let mut reports = Vec::with_capacity(ratios.len());
    for &r in ratios {
        let spec = PositionEncoderSpec::uniform(r)?;
        reports.push(evaluate(model, task, &EvalRunner::Encoder(&spec), n_samples, base_seed)?);
    }
    Ok(reports)
}
