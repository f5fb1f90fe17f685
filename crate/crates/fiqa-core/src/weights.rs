//! Typed model weights and their AFQW container round trip.
//!
//! Tensor names are canonical and derived from the config: `patch_proj`,
//! `patch_bias`, `pos_embed`, then per block `blocks.{i}.{field}` with a
//! 0-based block index. Load validates the container against that manifest:
//! missing, extra, or wrongly shaped tensors are each rejected with the
//! tensor name in the error.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::afqw::{self, TensorView};
use crate::config::ModelConfig;
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error(transparent)]
    Format(#[from] afqw::FormatError),
    #[error("weight container is missing tensor `{name}`")]
    MissingTensor { name: String },
    #[error("weight container has unexpected tensor `{name}`")]
    UnknownTensor { name: String },
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<u64>, found: Vec<u64> },
}

/// Weights for one residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_gamma: Vec<f32>,
    pub ln1_beta: Vec<f32>,
    /// Fused query/key/value projections, each [D x D]; head h uses the
    /// column band h*head_dim..(h+1)*head_dim.
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_gamma: Vec<f32>,
    pub ln2_beta: Vec<f32>,
    pub fc1: Matrix,
    pub fc1_bias: Vec<f32>,
    pub fc2: Matrix,
    pub fc2_bias: Vec<f32>,
}

/// Full parameter set for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    /// Patch embedding [D x P*P*3]; token i is `patch_proj * p_i + patch_bias`.
    pub patch_proj: Matrix,
    pub patch_bias: Vec<f32>,
    /// Learned position table [N x D]. A container holding [N+1 x D] (an
    /// extra class-token row) fails the shape gate here.
    pub pos_embed: Matrix,
    pub blocks: Vec<BlockWeights>,
}

/// Canonical (name, shape) list for a config, in container order.
pub fn manifest(cfg: &ModelConfig) -> Vec<(String, Vec<u64>)> {
    let d = cfg.embed_dim as u64;
    let pd = cfg.patch_dim() as u64;
    let n = cfg.num_patches() as u64;
    let hidden = cfg.hidden_dim() as u64;
    let mut out = vec![
        ("patch_proj".to_string(), vec![d, pd]),
        ("patch_bias".to_string(), vec![d]),
        ("pos_embed".to_string(), vec![n, d]),
    ];
    for i in 0..cfg.num_blocks {
        for (field, dims) in [
            ("ln1_gamma", vec![d]),
            ("ln1_beta", vec![d]),
            ("wq", vec![d, d]),
            ("wk", vec![d, d]),
            ("wv", vec![d, d]),
            ("wo", vec![d, d]),
            ("ln2_gamma", vec![d]),
            ("ln2_beta", vec![d]),
            ("fc1", vec![d, hidden]),
            ("fc1_bias", vec![hidden]),
            ("fc2", vec![hidden, d]),
            ("fc2_bias", vec![d]),
        ] {
            out.push((format!("blocks.{i}.{field}"), dims));
        }
    }
    out
}

fn mat_dims(m: &Matrix) -> Vec<u64> {
    vec![m.rows() as u64, m.cols() as u64]
}

impl WeightSet {
    /// Actual (name, dims, data) entries in manifest order. Only defined when
    /// the block count matches the config.
    fn entries<'a>(&'a self, cfg: &ModelConfig) -> Vec<(String, Vec<u64>, &'a [f32])> {
        debug_assert_eq!(self.blocks.len(), cfg.num_blocks);
        let mut out: Vec<(String, Vec<u64>, &[f32])> = vec![
            ("patch_proj".into(), mat_dims(&self.patch_proj), self.patch_proj.data()),
            ("patch_bias".into(), vec![self.patch_bias.len() as u64], &self.patch_bias),
            ("pos_embed".into(), mat_dims(&self.pos_embed), self.pos_embed.data()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let fields: [(&str, Vec<u64>, &[f32]); 12] = [
                ("ln1_gamma", vec![b.ln1_gamma.len() as u64], &b.ln1_gamma),
                ("ln1_beta", vec![b.ln1_beta.len() as u64], &b.ln1_beta),
                ("wq", mat_dims(&b.wq), b.wq.data()),
                ("wk", mat_dims(&b.wk), b.wk.data()),
                ("wv", mat_dims(&b.wv), b.wv.data()),
                ("wo", mat_dims(&b.wo), b.wo.data()),
                ("ln2_gamma", vec![b.ln2_gamma.len() as u64], &b.ln2_gamma),
                ("ln2_beta", vec![b.ln2_beta.len() as u64], &b.ln2_beta),
                ("fc1", mat_dims(&b.fc1), b.fc1.data()),
                ("fc1_bias", vec![b.fc1_bias.len() as u64], &b.fc1_bias),
                ("fc2", mat_dims(&b.fc2), b.fc2.data()),
                ("fc2_bias", vec![b.fc2_bias.len() as u64], &b.fc2_bias),
            ];
            for (field, dims, data) in fields {
                out.push((format!("blocks.{i}.{field}"), dims, data));
            }
        }
        out
    }

    /// Deterministic random weights for a config. Same seed, same bytes.
    pub fn seeded(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.embed_dim;
        let pd = cfg.patch_dim();
        let hidden = cfg.hidden_dim();

        fn mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Matrix {
            let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
            Matrix::new(rows, cols, data).unwrap()
        }
        fn vals(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
            (0..n).map(|_| rng.random_range(lo..hi)).collect()
        }

        let proj_scale = 1.0 / (pd as f32).sqrt();
        let attn_scale = 1.0 / (d as f32).sqrt();
        let fc2_scale = 1.0 / (hidden as f32).sqrt();

        let patch_proj = mat(&mut rng, d, pd, proj_scale);
        let patch_bias = vals(&mut rng, d, -0.01, 0.01);
        let pos_embed = mat(&mut rng, cfg.num_patches(), d, 0.02);
        let blocks = (0..cfg.num_blocks)
            .map(|_| BlockWeights {
                ln1_gamma: vals(&mut rng, d, 0.9, 1.1),
                ln1_beta: vals(&mut rng, d, -0.05, 0.05),
                wq: mat(&mut rng, d, d, attn_scale),
                wk: mat(&mut rng, d, d, attn_scale),
                wv: mat(&mut rng, d, d, attn_scale),
                wo: mat(&mut rng, d, d, attn_scale),
                ln2_gamma: vals(&mut rng, d, 0.9, 1.1),
                ln2_beta: vals(&mut rng, d, -0.05, 0.05),
                fc1: mat(&mut rng, d, hidden, attn_scale),
                fc1_bias: vals(&mut rng, hidden, -0.01, 0.01),
                fc2: mat(&mut rng, hidden, d, fc2_scale),
                fc2_bias: vals(&mut rng, d, -0.01, 0.01),
            })
            .collect();

        WeightSet { patch_proj, patch_bias, pos_embed, blocks }
    }
}

/// Validates the set against the config manifest, then writes the container.
/// Any manifest violation is reported before the file is created.
pub fn save_weights(path: &Path, ws: &WeightSet, cfg: &ModelConfig) -> Result<(), WeightError> {
    let expected = manifest(cfg);
    if ws.blocks.len() < cfg.num_blocks {
        return Err(WeightError::MissingTensor {
            name: format!("blocks.{}.ln1_gamma", ws.blocks.len()),
        });
    }
    if ws.blocks.len() > cfg.num_blocks {
        return Err(WeightError::UnknownTensor {
            name: format!("blocks.{}.ln1_gamma", cfg.num_blocks),
        });
    }
    let entries = ws.entries(cfg);
    for ((name, dims, _), (want_name, want_dims)) in entries.iter().zip(&expected) {
        debug_assert_eq!(name, want_name);
        if dims != want_dims {
            return Err(WeightError::ShapeMismatch {
                name: name.clone(),
                expected: want_dims.clone(),
                found: dims.clone(),
            });
        }
    }
    let views: Vec<TensorView<'_>> = entries
        .iter()
        .map(|(name, dims, data)| TensorView { name, dims, data })
        .collect();
    afqw::write_tensors(path, &views)?;
    Ok(())
}

/// Loads and validates a weight container for the given config.
pub fn load_weights(path: &Path, cfg: &ModelConfig) -> Result<WeightSet, WeightError> {
    let raw = afqw::read_tensors(path)?;
    let mut by_name: HashMap<String, afqw::RawTensor> =
        raw.into_iter().map(|t| (t.name.clone(), t)).collect();

    let mut take = |name: &str, expected: &[u64]| -> Result<afqw::RawTensor, WeightError> {
        let t = by_name
            .remove(name)
            .ok_or_else(|| WeightError::MissingTensor { name: name.to_string() })?;
        if t.dims != expected {
            return Err(WeightError::ShapeMismatch {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: t.dims,
            });
        }
        Ok(t)
    };
    let as_matrix = |t: afqw::RawTensor| {
        Matrix::new(t.dims[0] as usize, t.dims[1] as usize, t.data).expect("validated dims")
    };

    let spec = manifest(cfg);
    let mut iter = spec.iter();
    let mut next = |field: &str| {
        let (name, dims) = iter.next().expect("manifest entry");
        debug_assert!(name.ends_with(field));
        take(name, dims)
    };

    let patch_proj = as_matrix(next("patch_proj")?);
    let patch_bias = next("patch_bias")?.data;
    let pos_embed = as_matrix(next("pos_embed")?);
    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for _ in 0..cfg.num_blocks {
        blocks.push(BlockWeights {
            ln1_gamma: next("ln1_gamma")?.data,
            ln1_beta: next("ln1_beta")?.data,
            wq: as_matrix(next("wq")?),
            wk: as_matrix(next("wk")?),
            wv: as_matrix(next("wv")?),
            wo: as_matrix(next("wo")?),
            ln2_gamma: next("ln2_gamma")?.data,
            ln2_beta: next("ln2_beta")?.data,
            fc1: as_matrix(next("fc1")?),
            fc1_bias: next("fc1_bias")?.data,
            fc2: as_matrix(next("fc2")?),
            fc2_bias: next("fc2_bias")?.data,
        });
    }

    if !by_name.is_empty() {
        let mut names: Vec<String> = by_name.into_keys().collect();
        names.sort();
        return Err(WeightError::UnknownTensor { name: names.remove(0) });
    }
    Ok(WeightSet { patch_proj, patch_bias, pos_embed, blocks })
}
