//! Head analysis: scores each attention head from the last prompt token's
//! attention distribution and turns the scores into per-head rescaling
//! ratios.
//!
//! The position-awareness score of a head is the fraction of context
//! positions whose attention weight reaches `alpha` times the mean weight.
//! Within each layer, heads are sorted by score descending (ties broken by
//! ascending head index) and the head at sorted rank `i` receives the `i`-th
//! entry of the linear ratio schedule, so the highest-scoring head gets the
//! smallest ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AttentionSnapshot;
use crate::numerics;
use crate::posenc::{linear_ratio_schedule, RatioAssignment, DEFAULT_RATIO_MAX, DEFAULT_RATIO_MIN};

pub const DEFAULT_ALPHA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub layer: usize,
    pub head: usize,
    pub score: f64,
}

/// How heads are ranked before ratios are handed out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Position-awareness score (the default).
    PositionAware,
    /// Seeded random ordering per layer.
    Random { seed: u64 },
    /// Original head order: head 0 gets the smallest ratio.
    Sequential,
    /// Attention entropy; the flattest (max-entropy) head gets the smallest
    /// ratio.
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilerConfig {
    pub alpha: f64,
    pub strategy: Strategy,
    pub r_min: f64,
    pub r_max: f64,
    /// Drop this many leading context positions before scoring
    /// (position-aware strategy only); 0 scores the full distribution.
    pub exclude_first_k: usize,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            strategy: Strategy::PositionAware,
            r_min: DEFAULT_RATIO_MIN,
            r_max: DEFAULT_RATIO_MAX,
            exclude_first_k: 0,
        }
    }
}

impl ProfilerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        linear_ratio_schedule(1, self.r_min, self.r_max)?;
        Ok(())
    }
}

/// Fraction of positions whose weight reaches `alpha * mean(a)`, using `>=`
/// for the comparison.
fn awareness_fraction(a: &[f64], alpha: f64) -> f64 {
    let mut sum = 0.0;
    for &x in a {
        sum += x;
    }
    let threshold = alpha * (sum / a.len() as f64);
    let count = a.iter().filter(|&&x| x >= threshold).count();
    count as f64 / a.len() as f64
}

/// Position-awareness score of one attention distribution.
pub fn position_awareness_score(a: &[f64], alpha: f64) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyInput("position_awareness_score"));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    numerics::validate_distribution(a)?;
    Ok(awareness_fraction(a, alpha))
}

/// Scores every head of one layer from its last-query attention rows.
pub fn score_layer(rows: &[Vec<f64>], layer: usize, cfg: &ProfilerConfig) -> Result<Vec<HeadScore>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(rows.len());
    let mut rng = match cfg.strategy {
        Strategy::Random { seed } => Some(ChaCha8Rng::seed_from_u64(
            seed ^ (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )),
        _ => None,
    };
    for (head, row) in rows.iter().enumerate() {
        let score = match cfg.strategy {
            Strategy::PositionAware => {
                numerics::validate_distribution(row)?;
                if cfg.exclude_first_k > 0 && cfg.exclude_first_k < row.len() {
                    awareness_fraction(&row[cfg.exclude_first_k..], cfg.alpha)
                } else {
                    awareness_fraction(row, cfg.alpha)
                }
            }
            Strategy::Entropy => numerics::entropy(row)?,
            Strategy::Sequential => (rows.len() - head) as f64,
            Strategy::Random { .. } => rng.as_mut().expect("rng for random strategy").random::<f64>(),
        };
        if !score.is_finite() {
            return Err(Error::Config(format!(
                "non-finite head score at layer {layer}, head {head}"
            )));
        }
        out.push(HeadScore { layer, head, score });
    }
    Ok(out)
}

/// Applies the configured scoring function to every head of the snapshot.
pub fn score_snapshot(snap: &AttentionSnapshot, cfg: &ProfilerConfig) -> Result<Vec<Vec<HeadScore>>> {
    cfg.validate()?;
    if snap.n_layers() == 0 {
        return Err(Error::IncompleteSnapshot { layer: 0, head: 0 });
    }
    let n_heads = snap.n_heads(0);
    let mut layers = Vec::with_capacity(snap.n_layers());
    for layer in 0..snap.n_layers() {
        if snap.n_heads(layer) != n_heads || n_heads == 0 {
            return Err(Error::IncompleteSnapshot {
                layer,
                head: snap.n_heads(layer).min(n_heads),
            });
        }
        let mut rows = Vec::with_capacity(n_heads);
        for head in 0..n_heads {
            rows.push(snap.row(layer, head)?.to_vec());
        }
        layers.push(score_layer(&rows, layer, cfg)?);
    }
    Ok(layers)
}

/// Rescaling ratios for one layer: sort by score descending (stable, ties by
/// ascending head index), then rank `i` receives the `i`-th schedule entry.
pub fn ratios_for_layer(scores: &[HeadScore], cfg: &ProfilerConfig) -> Result<Vec<f64>> {
    let n_heads = scores.len();
    if n_heads == 0 {
        return Err(Error::Config("cannot assign ratios to zero heads".into()));
    }
    let mut seen = vec![false; n_heads];
    for hs in scores {
        if hs.head >= n_heads || seen[hs.head] {
            return Err(Error::Config(format!(
                "head scores must cover heads 0..{n_heads} exactly once (bad head {})",
                hs.head
            )));
        }
        if !hs.score.is_finite() {
            return Err(Error::Config(format!("non-finite score for head {}", hs.head)));
        }
        seen[hs.head] = true;
    }
    let schedule = linear_ratio_schedule(n_heads, cfg.r_min, cfg.r_max)?;
    let mut order: Vec<&HeadScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.head.cmp(&b.head))
    });
    let mut ratios = vec![0.0; n_heads];
    for (rank, hs) in order.iter().enumerate() {
        ratios[hs.head] = schedule[rank];
    }
    Ok(ratios)
}

/// Turns per-layer head scores into a full ratio assignment.
pub fn assign_ratios(scores: &[Vec<HeadScore>], cfg: &ProfilerConfig) -> Result<RatioAssignment> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(Error::Config("no layers to assign ratios for".into()));
    }
    let mut all = Vec::with_capacity(scores.len());
    for layer_scores in scores {
        all.push(ratios_for_layer(layer_scores, cfg)?);
    }
    RatioAssignment::new(all)
}
