//! Model weights and the binary weight-file format.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic   b"MSPE"
//! u32     version (currently 1)
//! u32 x7  n_layers, n_heads, head_dim, mlp_dim, vocab_size, max_seq_len,
//!         tied_output (0 = untied lm_head tensor present, 1 = tied)
//! f64     rope_base
//! then, until end of file, one record per tensor:
//!   u16   name length, then name bytes (UTF-8)
//!   u8    rank
//!   u32 x rank   dims
//!   f64 x prod(dims)   payload, row-major
//! ```
//!
//! A JSON sidecar with the same config values is written alongside
//! (`<path>.json`) for human inspection.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::ModelConfig;

const MAGIC: &[u8; 4] = b"MSPE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w_gate: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
    pub attn_norm: Vec<f64>,
    pub mlp_norm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputProjection {
    /// Logits come from dotting the final state with embedding rows.
    Tied,
    /// Dedicated `hidden x vocab` projection.
    Untied(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub token_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f64>,
    pub output: OutputProjection,
}

impl Weights {
    /// All-zero weights with the right shapes (norm gains included).
    pub fn zeros(config: &ModelConfig) -> Self {
        let hidden = config.hidden_dim();
        let layer = LayerWeights {
            wq: Matrix::zeros(hidden, hidden),
            wk: Matrix::zeros(hidden, hidden),
            wv: Matrix::zeros(hidden, hidden),
            wo: Matrix::zeros(hidden, hidden),
            w_gate: Matrix::zeros(hidden, config.mlp_dim),
            w_up: Matrix::zeros(hidden, config.mlp_dim),
            w_down: Matrix::zeros(config.mlp_dim, hidden),
            attn_norm: vec![0.0; hidden],
            mlp_norm: vec![0.0; hidden],
        };
        Self {
            token_embedding: Matrix::zeros(config.vocab_size, hidden),
            layers: vec![layer; config.n_layers],
            final_norm: vec![0.0; hidden],
            output: OutputProjection::Tied,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let hidden = config.hidden_dim();
        check_matrix("token_embedding", &self.token_embedding, config.vocab_size, hidden)?;
        if self.layers.len() != config.n_layers {
            return Err(Error::Config(format!(
                "weights have {} layers, config says {}",
                self.layers.len(),
                config.n_layers
            )));
        }
        for (i, lw) in self.layers.iter().enumerate() {
            check_matrix(&format!("layer{i}.wq"), &lw.wq, hidden, hidden)?;
            check_matrix(&format!("layer{i}.wk"), &lw.wk, hidden, hidden)?;
            check_matrix(&format!("layer{i}.wv"), &lw.wv, hidden, hidden)?;
            check_matrix(&format!("layer{i}.wo"), &lw.wo, hidden, hidden)?;
            check_matrix(&format!("layer{i}.w_gate"), &lw.w_gate, hidden, config.mlp_dim)?;
            check_matrix(&format!("layer{i}.w_up"), &lw.w_up, hidden, config.mlp_dim)?;
            check_matrix(&format!("layer{i}.w_down"), &lw.w_down, config.mlp_dim, hidden)?;
            check_vector(&format!("layer{i}.attn_norm"), &lw.attn_norm, hidden)?;
            check_vector(&format!("layer{i}.mlp_norm"), &lw.mlp_norm, hidden)?;
        }
        check_vector("final_norm", &self.final_norm, hidden)?;
        if let OutputProjection::Untied(m) = &self.output {
            check_matrix("lm_head", m, hidden, config.vocab_size)?;
        }
        Ok(())
    }
}

fn check_matrix(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::TensorShape {
            name: name.to_string(),
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

fn check_vector(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::TensorShape {
            name: name.to_string(),
            expected: format!("{len}"),
            found: format!("{}", v.len()),
        });
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, name: &str, dims: &[usize], data: &[f64]) -> Result<()> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let name_bytes = name.as_bytes();
    w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&[dims.len() as u8])?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Serializes config + weights to `path` and a JSON config sidecar to
/// `<path>.json`.
pub fn save_weights(path: &Path, config: &ModelConfig, weights: &Weights) -> Result<()> {
    config.validate()?;
    weights.validate(config)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let tied = matches!(weights.output, OutputProjection::Tied) as u32;
    for v in [
        config.n_layers as u32,
        config.n_heads as u32,
        config.head_dim as u32,
        config.mlp_dim as u32,
        config.vocab_size as u32,
        config.max_seq_len as u32,
        tied,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&config.rope_base.to_le_bytes())?;

    let emb = &weights.token_embedding;
    write_tensor(&mut w, "token_embedding", &[emb.rows(), emb.cols()], emb.data())?;
    for (i, lw) in weights.layers.iter().enumerate() {
        for (suffix, m) in [
            ("wq", &lw.wq),
            ("wk", &lw.wk),
            ("wv", &lw.wv),
            ("wo", &lw.wo),
            ("w_gate", &lw.w_gate),
            ("w_up", &lw.w_up),
            ("w_down", &lw.w_down),
        ] {
            write_tensor(&mut w, &format!("layer{i}.{suffix}"), &[m.rows(), m.cols()], m.data())?;
        }
        write_tensor(&mut w, &format!("layer{i}.attn_norm"), &[lw.attn_norm.len()], &lw.attn_norm)?;
        write_tensor(&mut w, &format!("layer{i}.mlp_norm"), &[lw.mlp_norm.len()], &lw.mlp_norm)?;
    }
    write_tensor(&mut w, "final_norm", &[weights.final_norm.len()], &weights.final_norm)?;
    if let OutputProjection::Untied(m) = &weights.output {
        write_tensor(&mut w, "lm_head", &[m.rows(), m.cols()], m.data())?;
    }
    w.flush()?;

    let sidecar = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.json", ext.to_string_lossy()),
        None => "json".to_string(),
    });
    let mut f = File::create(sidecar)?;
    f.write_all(serde_json::to_string_pretty(config)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

struct RawTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Truncated(format!("unexpected end of file while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads the next tensor record, or `None` at a clean end of file.
fn read_tensor(r: &mut impl Read) -> Result<Option<(String, RawTensor)>> {
    let mut len_buf = [0u8; 2];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(Error::Io(e)),
    }
    let name_len = u16::from_le_bytes(len_buf) as usize;
    let mut name_buf = vec![0u8; name_len];
    read_exact_or(r, &mut name_buf, "tensor name")?;
    let name = String::from_utf8(name_buf)
        .map_err(|_| Error::Truncated("tensor name is not UTF-8".into()))?;
    let mut rank_buf = [0u8; 1];
    read_exact_or(r, &mut rank_buf, "tensor rank")?;
    let rank = rank_buf[0] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(r, "tensor dims")? as usize);
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(read_f64(r, &format!("payload of {name:?}"))?);
    }
    Ok(Some((name, RawTensor { dims, data })))
}

fn take_matrix(
    tensors: &mut BTreeMap<String, RawTensor>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Matrix> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
    if t.dims != [rows, cols] {
        return Err(Error::TensorShape {
            name: name.to_string(),
            expected: format!("{rows}x{cols}"),
            found: format!("{:?}", t.dims),
        });
    }
    if !t.data.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Matrix::new(rows, cols, t.data)
}

fn take_vector(tensors: &mut BTreeMap<String, RawTensor>, name: &str, len: usize) -> Result<Vec<f64>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
    if t.dims != [len] {
        return Err(Error::TensorShape {
            name: name.to_string(),
            expected: format!("{len}"),
            found: format!("{:?}", t.dims),
        });
    }
    if !t.data.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(t.data)
}

/// Loads and validates a weight file written by [`save_weights`].
pub fn load_weights(path: &Path) -> Result<(ModelConfig, Weights)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "header")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let n_layers = read_u32(&mut r, "n_layers")? as usize;
    let n_heads = read_u32(&mut r, "n_heads")? as usize;
    let head_dim = read_u32(&mut r, "head_dim")? as usize;
    let mlp_dim = read_u32(&mut r, "mlp_dim")? as usize;
    let vocab_size = read_u32(&mut r, "vocab_size")? as usize;
    let max_seq_len = read_u32(&mut r, "max_seq_len")? as usize;
    let tied = read_u32(&mut r, "tied_output")?;
    if tied > 1 {
        return Err(Error::Truncated(format!("tied_output flag must be 0 or 1, got {tied}")));
    }
    let rope_base = read_f64(&mut r, "rope_base")?;

    let config = ModelConfig {
        n_layers,
        n_heads,
        head_dim,
        mlp_dim,
        vocab_size,
        max_seq_len,
        rope_base,
    };
    config.validate()?;

    let mut tensors = BTreeMap::new();
    while let Some((name, t)) = read_tensor(&mut r)? {
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Truncated(format!("duplicate tensor {name:?}")));
        }
    }

    let hidden = config.hidden_dim();
    let token_embedding = take_matrix(&mut tensors, "token_embedding", vocab_size, hidden)?;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        layers.push(LayerWeights {
            wq: take_matrix(&mut tensors, &format!("layer{i}.wq"), hidden, hidden)?,
            wk: take_matrix(&mut tensors, &format!("layer{i}.wk"), hidden, hidden)?,
            wv: take_matrix(&mut tensors, &format!("layer{i}.wv"), hidden, hidden)?,
            wo: take_matrix(&mut tensors, &format!("layer{i}.wo"), hidden, hidden)?,
            w_gate: take_matrix(&mut tensors, &format!("layer{i}.w_gate"), hidden, mlp_dim)?,
            w_up: take_matrix(&mut tensors, &format!("layer{i}.w_up"), hidden, mlp_dim)?,
            w_down: take_matrix(&mut tensors, &format!("layer{i}.w_down"), mlp_dim, hidden)?,
            attn_norm: take_vector(&mut tensors, &format!("layer{i}.attn_norm"), hidden)?,
            mlp_norm: take_vector(&mut tensors, &format!("layer{i}.mlp_norm"), hidden)?,
        });
    }
    let final_norm = take_vector(&mut tensors, "final_norm", hidden)?;
    let output = if tied == 1 {
        OutputProjection::Tied
    } else {
        OutputProjection::Untied(take_matrix(&mut tensors, "lm_head", hidden, vocab_size)?)
    };

    if let Some(name) = tensors.keys().next() {
        return Err(Error::UnexpectedTensor(name.clone()));
    }

    let weights = Weights {
        token_embedding,
        layers,
        final_norm,
        output,
    };
    weights.validate(&config)?;
    Ok((config, weights))
}
