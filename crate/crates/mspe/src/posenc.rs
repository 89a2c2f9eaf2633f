//! Rotary position encoding and the position-index mappings that feed it.
//!
//! Attention scores are computed as `dot(rotate(q, m), rotate(k, n))`, which
//! depends on `(q, k, m - n)` only. The mappings below replace the integer
//! token positions `(m, n)` with effective positions before rotation:
//!
//! - `Standard`: identity.
//! - `Uniform(r)`: `(m/r, n/r)` with one global ratio.
//! - `Grouped`: exact relative positions inside a local window, floored
//!   group positions beyond it.
//! - `MultiScale`: `(m/r, n/r)` with a per-layer, per-head ratio table.
//!
//! Effective positions may be fractional; rotation angles are continuous so
//! no rounding is applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics;

pub const DEFAULT_ROPE_BASE: f64 = 10000.0;
pub const DEFAULT_RATIO_MIN: f64 = 1.2;
pub const DEFAULT_RATIO_MAX: f64 = 1.8;

/// Rotary-embedding parameters for one attention head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeParams {
    pub head_dim: usize,
    pub base: f64,
}

impl RopeParams {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "head_dim must be even and positive, got {head_dim}"
            )));
        }
        if !base.is_finite() || base <= 0.0 {
            return Err(Error::Config(format!("rope base must be positive, got {base}")));
        }
        Ok(Self { head_dim, base })
    }

    pub fn standard(head_dim: usize) -> Result<Self> {
        Self::new(head_dim, DEFAULT_ROPE_BASE)
    }

    pub fn n_planes(&self) -> usize {
        self.head_dim / 2
    }
}

/// Per-plane angular frequencies `theta_k = base^(-2k / head_dim)` for
/// `k = 0 .. head_dim/2 - 1` (zero-indexed, so `theta_0 = 1`).
pub fn theta_schedule(params: &RopeParams) -> Vec<f64> {
    (0..params.n_planes())
        .map(|k| params.base.powf(-2.0 * k as f64 / params.head_dim as f64))
        .collect()
}

/// Rotates each consecutive pair `(x_{2k}, x_{2k+1})` in-plane by angle
/// `position * theta_k`. Norm-preserving; `position` may be fractional.
pub fn rotate(x: &[f64], position: f64, params: &RopeParams) -> Result<Vec<f64>> {
    if x.len() != params.head_dim {
        return Err(Error::Shape {
            op: "rotate",
            detail: format!("vector len {} vs head_dim {}", x.len(), params.head_dim),
        });
    }
    let thetas = theta_schedule(params);
    let mut out = vec![0.0; x.len()];
    for (k, &theta) in thetas.iter().enumerate() {
        let angle = position * theta;
        let (sin, cos) = angle.sin_cos();
        let a = x[2 * k];
        let b = x[2 * k + 1];
        out[2 * k] = a * cos - b * sin;
        out[2 * k + 1] = a * sin + b * cos;
    }
    Ok(out)
}

/// Per-layer, per-head position-rescaling ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioAssignment {
    n_layers: usize,
    n_heads: usize,
    ratios: Vec<Vec<f64>>,
}

impl RatioAssignment {
    pub fn new(ratios: Vec<Vec<f64>>) -> Result<Self> {
        if ratios.is_empty() || ratios[0].is_empty() {
            return Err(Error::Config("ratio assignment must cover at least one layer and head".into()));
        }
        let n_heads = ratios[0].len();
        for (layer, row) in ratios.iter().enumerate() {
            if row.len() != n_heads {
                return Err(Error::Config(format!(
                    "ratio assignment layer {layer} has {} heads, expected {n_heads}",
                    row.len()
                )));
            }
            for (head, &r) in row.iter().enumerate() {
                if !r.is_finite() || r <= 0.0 {
                    return Err(Error::Config(format!(
                        "ratio at layer {layer}, head {head} must be positive, got {r}"
                    )));
                }
            }
        }
        Ok(Self {
            n_layers: ratios.len(),
            n_heads,
            ratios,
        })
    }

    pub fn uniform(n_layers: usize, n_heads: usize, ratio: f64) -> Result<Self> {
        Self::new(vec![vec![ratio; n_heads]; n_layers])
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn ratios(&self) -> &[Vec<f64>] {
        &self.ratios
    }

    pub fn ratio(&self, layer: usize, head: usize) -> Result<f64> {
        self.ratios
            .get(layer)
            .and_then(|row| row.get(head))
            .copied()
            .ok_or(Error::AssignmentCoverage { layer, head })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Which mapping transforms integer token positions into effective rotary
/// positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PositionEncoderSpec {
    Standard,
    Uniform(f64),
    Grouped { group: usize, window: usize },
    MultiScale(RatioAssignment),
}

impl PositionEncoderSpec {
    pub fn uniform(ratio: f64) -> Result<Self> {
        if !ratio.is_finite() || ratio <= 0.0 {
            return Err(Error::Config(format!("uniform ratio must be positive, got {ratio}")));
        }
        Ok(Self::Uniform(ratio))
    }

    pub fn grouped(group: usize, window: usize) -> Result<Self> {
        if group == 0 {
            return Err(Error::Config("group size must be >= 1".into()));
        }
        Ok(Self::Grouped { group, window })
    }

    /// Short human/CSV label for reports.
    pub fn label(&self) -> String {
        match self {
            Self::Standard => "rope".into(),
            Self::Uniform(r) => format!("pi:{r}"),
            Self::Grouped { group, window } => format!("self-extend:{group},{window}"),
            Self::MultiScale(_) => "mspoe".into(),
        }
    }
}

/// Maps integer `(query_pos, key_pos)` to the effective positions fed into
/// `rotate` for the given layer and head.
pub fn map_position(
    spec: &PositionEncoderSpec,
    layer: usize,
    head: usize,
    query_pos: usize,
    key_pos: usize,
) -> Result<(f64, f64)> {
    if key_pos > query_pos {
        return Err(Error::Config(format!(
            "causality violated: key position {key_pos} after query position {query_pos}"
        )));
    }
    match spec {
        PositionEncoderSpec::Standard => Ok((query_pos as f64, key_pos as f64)),
        PositionEncoderSpec::Uniform(r) => {
            if !r.is_finite() || *r <= 0.0 {
                return Err(Error::Config(format!("uniform ratio must be positive, got {r}")));
            }
            Ok((query_pos as f64 / r, key_pos as f64 / r))
        }
        PositionEncoderSpec::MultiScale(assignment) => {
            let r = assignment.ratio(layer, head)?;
            Ok((query_pos as f64 / r, key_pos as f64 / r))
        }
        PositionEncoderSpec::Grouped { group, window } => {
            let d = query_pos - key_pos;
            let effective_d = if d <= *window {
                d
            } else {
                d / group + window - window / group
            };
            let q = query_pos as f64;
            Ok((q, q - effective_d as f64))
        }
    }
}

/// Linear ratio schedule `r_i = r_min + (i-1)(r_max-r_min)/(n_h-1)` for
/// `i = 1..n_h`; a single head gets `r_min`.
pub fn linear_ratio_schedule(n_heads: usize, r_min: f64, r_max: f64) -> Result<Vec<f64>> {
    if n_heads == 0 {
        return Err(Error::Config("ratio schedule needs at least one head".into()));
    }
    if !r_min.is_finite() || !r_max.is_finite() || r_min <= 0.0 || r_min > r_max {
        return Err(Error::Config(format!(
            "invalid ratio range [{r_min}, {r_max}]"
        )));
    }
    if n_heads == 1 {
        return Ok(vec![r_min]);
    }
    let step = (r_max - r_min) / (n_heads - 1) as f64;
    Ok((0..n_heads)
        .map(|i| {
            if i == 0 {
                r_min
            } else if i == n_heads - 1 {
                r_max
            } else {
                r_min + i as f64 * step
            }
        })
        .collect())
}

/// Rotary attention score: `dot(rotate(q, q_pos), rotate(k, k_pos))`.
///
/// Depends on `(q, k, q_pos - k_pos)` only.
pub fn attention_score(
    q: &[f64],
    k: &[f64],
    q_pos: f64,
    k_pos: f64,
    params: &RopeParams,
) -> Result<f64> {
    if q.len() != k.len() {
        return Err(Error::Shape {
            op: "attention_score",
            detail: format!("query len {} vs key len {}", q.len(), k.len()),
        });
    }
    let rq = rotate(q, q_pos, params)?;
    let rk = rotate(k, k_pos, params)?;
    Ok(numerics::dot(&rq, &rk))
}
