//! A desk-scale decoder-only transformer inference engine whose positional
//! encoding layer is pluggable.
//!
//! The engine rotates query/key vectors with rotary position embeddings, but
//! the integer token positions fed into those rotations first pass through a
//! configurable mapping ([`posenc::PositionEncoderSpec`]):
//!
//! - `Standard` — identity, plain RoPE.
//! - `Uniform(r)` — every position divided by one global ratio
//!   (position-interpolation style).
//! - `Grouped { group, window }` — exact positions inside a local window,
//!   floored group positions beyond it (self-extend style).
//! - `MultiScale(assignment)` — a per-layer, per-head ratio table produced by
//!   profiling attention heads at prefill time.
//!
//! The multi-scale path is driven by a position-awareness score computed from
//! the last prompt token's attention distribution: heads whose attention
//! concentrates enough mass above a threshold are left nearly untouched while
//! the remaining heads get their position indices condensed more aggressively.
//! [`pipeline::run_mspoe`] orchestrates the whole procedure: scoring prefill,
//! ratio assignment, re-encoded prefill, and frozen-ratio decoding.
//!
//! [`harness`] provides synthetic key-value retrieval and multi-document
//! question-answering tasks plus a hand-built induction model, so that
//! context-utilization metrics (average accuracy and best-worst gap across
//! relevant-item positions) can be measured without pretrained weights.

pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod posenc;
pub mod profiler;

pub use error::{Error, Result};
