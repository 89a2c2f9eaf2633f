//! Seeded random-weight models for oracle and equivalence tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Model, ModelConfig, OutputProjection, Weights};
use crate::numerics::Matrix;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
        .collect();
    Matrix::new(rows, cols, data).expect("consistent dimensions")
}

/// Uniform random weights at standard 1/sqrt(width) scale; norm gains are
/// ones and the output projection is untied. Deterministic in the seed.
pub fn build_random_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = config.hidden_dim();
    let proj_scale = 1.0 / (hidden as f64).sqrt();
    let down_scale = 1.0 / (config.mlp_dim as f64).sqrt();

    let mut weights = Weights::zeros(config);
    weights.token_embedding = random_matrix(&mut rng, config.vocab_size, hidden, 0.5);
    for lw in &mut weights.layers {
        lw.wq = random_matrix(&mut rng, hidden, hidden, proj_scale);
        lw.wk = random_matrix(&mut rng, hidden, hidden, proj_scale);
        lw.wv = random_matrix(&mut rng, hidden, hidden, proj_scale);
        lw.wo = random_matrix(&mut rng, hidden, hidden, proj_scale);
        lw.w_gate = random_matrix(&mut rng, hidden, config.mlp_dim, proj_scale);
        lw.w_up = random_matrix(&mut rng, hidden, config.mlp_dim, proj_scale);
        lw.w_down = random_matrix(&mut rng, config.mlp_dim, hidden, down_scale);
        lw.attn_norm = vec![1.0; hidden];
        lw.mlp_norm = vec![1.0; hidden];
    }
    weights.final_norm = vec![1.0; hidden];
    weights.output = OutputProjection::Untied(random_matrix(&mut rng, hidden, config.vocab_size, proj_scale));

    Model::new(*config, weights)
}
