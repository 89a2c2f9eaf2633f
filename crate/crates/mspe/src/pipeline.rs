//! End-to-end inference with head-adaptive position rescaling.
//!
//! [`run_mspoe`] performs the full procedure: a scoring prefill captures the
//! last prompt token's attention per head, the profiler turns it into a
//! per-layer, per-head ratio assignment, the prompt is re-encoded under the
//! multi-scale mapping, and decoding proceeds with the ratios frozen.
//!
//! Two scoring modes are provided. `SeparatePass` (the default) scores the
//! unmodified model in its own prefill and then re-prefills under the
//! assigned ratios, which makes the scores a pure function of the baseline
//! encoding. `InPlacePerLayer` scores and re-encodes each layer inside a
//! single prefill, so later layers see earlier layers' already-rescaled
//! outputs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionSnapshot, Model};
use crate::posenc::{PositionEncoderSpec, RatioAssignment};
use crate::profiler::{self, ProfilerConfig, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScoringMode {
    #[default]
    SeparatePass,
    InPlacePerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub profiler: ProfilerConfig,
    pub scoring_mode: ScoringMode,
    /// Encoder used for the scoring pass (the model's pretrained behavior).
    pub encoder_baseline: PositionEncoderSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            profiler: ProfilerConfig::default(),
            scoring_mode: ScoringMode::SeparatePass,
            encoder_baseline: PositionEncoderSpec::Standard,
        }
    }
}

impl PipelineConfig {
    pub fn label(&self) -> String {
        let mut label = String::from("mspoe");
        match self.profiler.strategy {
            Strategy::PositionAware => {}
            Strategy::Random { seed } => label.push_str(&format!(":random:{seed}")),
            Strategy::Sequential => label.push_str(":sequential"),
            Strategy::Entropy => label.push_str(":entropy"),
        }
        if self.scoring_mode == ScoringMode::InPlacePerLayer {
            label.push_str(":inplace");
        }
        label
    }
}

/// Wall-clock seconds per pipeline stage. Reported for overhead inspection;
/// not part of any reproducible output file.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub scoring_s: f64,
    pub assignment_s: f64,
    pub prefill_s: f64,
    pub decode_s: f64,
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub output_tokens: Vec<u32>,
    /// The assignment actually used during decode; `None` for baseline runs.
    pub ratio_assignment: Option<RatioAssignment>,
    pub snapshot: AttentionSnapshot,
    pub encoder_label: String,
    pub timings: StageTimings,
}

fn check_room(model: &Model, prompt_len: usize, max_new: usize) -> Result<()> {
    let needed = prompt_len + max_new;
    if needed > model.config().max_seq_len {
        return Err(Error::SequenceTooLong {
            requested: needed,
            max: model.config().max_seq_len,
        });
    }
    Ok(())
}

/// Scoring prefill, ratio installation, multi-scale re-encoding, and
/// frozen-ratio greedy decoding.
pub fn run_mspoe(
    model: &Model,
    prompt: &[u32],
    cfg: &PipelineConfig,
    max_new: usize,
) -> Result<GenerationResult> {
    cfg.profiler.validate()?;
    check_room(model, prompt.len(), max_new)?;
    match cfg.scoring_mode {
        ScoringMode::SeparatePass => run_separate_pass(model, prompt, cfg, max_new),
        ScoringMode::InPlacePerLayer => run_in_place(model, prompt, cfg, max_new),
    }
}

fn run_separate_pass(
    model: &Model,
    prompt: &[u32],
    cfg: &PipelineConfig,
    max_new: usize,
) -> Result<GenerationResult> {
    let t0 = Instant::now();
    let scoring = model.forward_prefill(prompt, &cfg.encoder_baseline, true)?;
    let snapshot = scoring.snapshot.expect("capture requested");
    let t1 = Instant::now();

    let scores = profiler::score_snapshot(&snapshot, &cfg.profiler)?;
    let assignment = profiler::assign_ratios(&scores, &cfg.profiler)?;
    let encoder = PositionEncoderSpec::MultiScale(assignment.clone());
    let t2 = Instant::now();

    let mut prefill = model.forward_prefill(prompt, &encoder, false)?;
    let t3 = Instant::now();

    let output_tokens =
        model.greedy_continue(prefill.last_logits, &mut prefill.cache, &encoder, max_new)?;
    let t4 = Instant::now();

    Ok(GenerationResult {
        output_tokens,
        ratio_assignment: Some(assignment),
        snapshot,
        encoder_label: cfg.label(),
        timings: StageTimings {
            scoring_s: (t1 - t0).as_secs_f64(),
            assignment_s: (t2 - t1).as_secs_f64(),
            prefill_s: (t3 - t2).as_secs_f64(),
            decode_s: (t4 - t3).as_secs_f64(),
        },
    })
}

fn run_in_place(
    model: &Model,
    prompt: &[u32],
    cfg: &PipelineConfig,
    max_new: usize,
) -> Result<GenerationResult> {
    let t0 = Instant::now();
    let profiler_cfg = cfg.profiler;
    let (mut prefill, assignment) =
        model.forward_prefill_per_layer_rescale(prompt, &cfg.encoder_baseline, |layer, rows| {
            let scores = profiler::score_layer(rows, layer, &profiler_cfg)?;
            profiler::ratios_for_layer(&scores, &profiler_cfg)
        })?;
    let snapshot = prefill.snapshot.take().expect("scoring rows captured");
    let t1 = Instant::now();

    let encoder = PositionEncoderSpec::MultiScale(assignment.clone());
    let output_tokens =
        model.greedy_continue(prefill.last_logits, &mut prefill.cache, &encoder, max_new)?;
    let t2 = Instant::now();

    Ok(GenerationResult {
        output_tokens,
        ratio_assignment: Some(assignment),
        snapshot,
        encoder_label: cfg.label(),
        timings: StageTimings {
            scoring_s: (t1 - t0).as_secs_f64(),
            assignment_s: 0.0,
            prefill_s: 0.0,
            decode_s: (t2 - t1).as_secs_f64(),
        },
    })
}

/// One prefill plus greedy decoding with a fixed position encoder.
pub fn run_baseline(
    model: &Model,
    prompt: &[u32],
    encoder: &PositionEncoderSpec,
    max_new: usize,
) -> Result<GenerationResult> {
    check_room(model, prompt.len(), max_new)?;
    let t0 = Instant::now();
    let mut prefill = model.forward_prefill(prompt, encoder, true)?;
    let snapshot = prefill.snapshot.take().expect("capture requested");
    let t1 = Instant::now();
    let output_tokens =
        model.greedy_continue(prefill.last_logits, &mut prefill.cache, encoder, max_new)?;
    let t2 = Instant::now();

    Ok(GenerationResult {
        output_tokens,
        ratio_assignment: None,
        snapshot,
        encoder_label: encoder.label(),
        timings: StageTimings {
            scoring_s: 0.0,
            assignment_s: 0.0,
            prefill_s: (t1 - t0).as_secs_f64(),
            decode_s: (t2 - t1).as_secs_f64(),
        },
    })
}
