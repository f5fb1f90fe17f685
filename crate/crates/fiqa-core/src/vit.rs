//! Patch embedding and the pre-LN transformer forward pass, with raw
//! (pre-softmax) attention capture from a chosen block.
//!
//! The captured matrices are the exact intermediates of the forward pass:
//! recomputing a block's attention from the preceding token states with the
//! same kernels reproduces them bit for bit.

use thiserror::Error;

use crate::config::ModelConfig;
use crate::image::ImageTensor;
use crate::tensor::{gelu, layer_norm, matmul, softmax_rows, transpose, Matrix, TensorError};
use crate::weights::{BlockWeights, WeightSet};

#[derive(Debug, Error)]
pub enum VitError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("capture block {given} out of range 1..={blocks}")]
    CaptureIndex { given: usize, blocks: usize },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
}

/// Raw attention from one block: per head an [N x N] matrix of
/// pre-softmax scores, `(Q K^T) * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCapture {
    /// 1-based block the capture was taken from.
    pub block_index: usize,
    pub heads: Vec<Matrix>,
    /// `1 / sqrt(head_dim)`, already applied to the stored scores.
    pub scale: f32,
}

impl AttentionCapture {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.heads.first().map_or(0, |h| h.rows())
    }
}

/// Cuts the image into non-overlapping P x P patches, grid row-major.
/// Each output row is one patch: pixels row-major, R G B interleaved.
pub fn patchify(img: &ImageTensor, cfg: &ModelConfig) -> Result<Matrix, VitError> {
    let p = cfg.patch_size;
    if img.width != cfg.image_width || img.height != cfg.image_height {
        return Err(VitError::Shape {
            op: "patchify",
            detail: format!(
                "image is {}x{}, config expects {}x{}",
                img.width, img.height, cfg.image_width, cfg.image_height
            ),
        });
    }
    let mut data = Vec::with_capacity(cfg.num_patches() * cfg.patch_dim());
    for gy in 0..cfg.grid_height() {
        for gx in 0..cfg.grid_width() {
            for py in 0..p {
                for px in 0..p {
                    for c in 0..3 {
                        data.push(img.get(gx * p + px, gy * p + py, c));
                    }
                }
            }
        }
    }
    Ok(Matrix::new(cfg.num_patches(), cfg.patch_dim(), data)?)
}

/// Token states z0: `proj * p_i + bias + pos[i]` for each patch row.
pub fn embed_patches(
    patches: &Matrix,
    proj: &Matrix,
    bias: &[f32],
    pos: &Matrix,
) -> Result<Matrix, VitError> {
    if proj.cols() != patches.cols() {
        return Err(VitError::Shape {
            op: "embed_patches",
            detail: format!("proj width {} vs patch width {}", proj.cols(), patches.cols()),
        });
    }
    if bias.len() != proj.rows() {
        return Err(VitError::Shape {
            op: "embed_patches",
            detail: format!("bias length {} vs embed dim {}", bias.len(), proj.rows()),
        });
    }
    if pos.rows() != patches.rows() || pos.cols() != proj.rows() {
        return Err(VitError::Shape {
            op: "embed_patches",
            detail: format!(
                "position table {}x{} vs {} tokens of dim {}",
                pos.rows(),
                pos.cols(),
                patches.rows(),
                proj.rows()
            ),
        });
    }
    let mut z = matmul(patches, &transpose(proj))?;
    for i in 0..z.rows() {
        for d in 0..z.cols() {
            let v = z.get(i, d) + bias[d] + pos.get(i, d);
            z.set(i, d, v);
        }
    }
    Ok(z)
}

/// One attention head over already-normalized token states.
/// Returns the pre-softmax score matrix and the head output:
/// `a_raw = (z W_q)(z W_k)^T * scale`, `out = softmax(a_raw) (z W_v)`.
pub fn attention_head(
    z_norm: &Matrix,
    wq: &Matrix,
    wk: &Matrix,
    wv: &Matrix,
    scale: f32,
) -> Result<(Matrix, Matrix), VitError> {
    let q = matmul(z_norm, wq)?;
    let k = matmul(z_norm, wk)?;
    let v = matmul(z_norm, wv)?;
    let mut a_raw = matmul(&q, &transpose(&k))?;
    for s in a_raw.data_mut() {
        *s *= scale;
    }
    let attn = softmax_rows(&a_raw);
    let out = matmul(&attn, &v)?;
    Ok((a_raw, out))
}

fn add_into(acc: &mut Matrix, other: &Matrix) -> Result<(), VitError> {
    if acc.rows() != other.rows() || acc.cols() != other.cols() {
        return Err(VitError::Shape {
            op: "residual add",
            detail: format!(
                "{}x{} vs {}x{}",
                acc.rows(),
                acc.cols(),
                other.rows(),
                other.cols()
            ),
        });
    }
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
    Ok(())
}

fn add_bias(m: &mut Matrix, bias: &[f32], op: &'static str) -> Result<(), VitError> {
    if bias.len() != m.cols() {
        return Err(VitError::Shape {
            op,
            detail: format!("bias length {} vs width {}", bias.len(), m.cols()),
        });
    }
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let v = m.get(r, c) + bias[c];
            m.set(r, c, v);
        }
    }
    Ok(())
}

/// One pre-LN residual block:
/// `z_mid = z + W_o . concat_heads(LN1(z))`, `out = z_mid + MLP(LN2(z_mid))`.
///
/// `capture`: Some(ix) records the per-head pre-softmax scores, labelled as
/// 1-based block `ix`. The label is the caller's; this function cannot know
/// its own position in the stack.
pub fn transformer_block(
    z: &Matrix,
    w: &BlockWeights,
    cfg: &ModelConfig,
    capture: Option<usize>,
) -> Result<(Matrix, Option<AttentionCapture>), VitError> {
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let scale = cfg.attn_scale();
    if z.cols() != d {
        return Err(VitError::Shape {
            op: "transformer_block",
            detail: format!("token dim {} vs embed_dim {d}", z.cols()),
        });
    }

    let z_norm = layer_norm(z, &w.ln1_gamma, &w.ln1_beta, cfg.ln_eps)?;
    let mut raw_heads = Vec::with_capacity(cfg.num_heads);
    let mut concat = Matrix::zeros(z.rows(), d);
    for h in 0..cfg.num_heads {
        let wq = w.wq.col_slice(h * dh, dh);
        let wk = w.wk.col_slice(h * dh, dh);
        let wv = w.wv.col_slice(h * dh, dh);
        let (a_raw, head_out) = attention_head(&z_norm, &wq, &wk, &wv, scale)?;
        for r in 0..head_out.rows() {
            for c in 0..dh {
                concat.set(r, h * dh + c, head_out.get(r, c));
            }
        }
        raw_heads.push(a_raw);
    }
    let msa = matmul(&concat, &w.wo)?;
    let mut z_mid = z.clone();
    add_into(&mut z_mid, &msa)?;

    let z_norm2 = layer_norm(&z_mid, &w.ln2_gamma, &w.ln2_beta, cfg.ln_eps)?;
    let mut hidden = matmul(&z_norm2, &w.fc1)?;
    add_bias(&mut hidden, &w.fc1_bias, "fc1 bias")?;
    let hidden = gelu(&hidden);
    let mut mlp = matmul(&hidden, &w.fc2)?;
    add_bias(&mut mlp, &w.fc2_bias, "fc2 bias")?;
    let mut out = z_mid;
    add_into(&mut out, &mlp)?;

    let cap = capture.map(|block_index| AttentionCapture {
        block_index,
        heads: raw_heads,
        scale,
    });
    Ok((out, cap))
}

/// Full forward pass. `capture_block` is 1-based; `None` captures the final
/// block. Returns the final token states and the capture.
pub fn forward_with_capture(
    img: &ImageTensor,
    ws: &WeightSet,
    cfg: &ModelConfig,
    capture_block: Option<usize>,
) -> Result<(Matrix, AttentionCapture), VitError> {
    let target = capture_block.unwrap_or(cfg.num_blocks);
    if target < 1 || target > cfg.num_blocks {
        return Err(VitError::CaptureIndex { given: target, blocks: cfg.num_blocks });
    }
    if ws.blocks.len() != cfg.num_blocks {
        return Err(VitError::Shape {
            op: "forward_with_capture",
            detail: format!("{} blocks in weights, config has {}", ws.blocks.len(), cfg.num_blocks),
        });
    }
    let patches = patchify(img, cfg)?;
    let mut z = embed_patches(&patches, &ws.patch_proj, &ws.patch_bias, &ws.pos_embed)?;
    let mut capture = None;
    for (i, block) in ws.blocks.iter().enumerate() {
        let ix = i + 1;
        let want = (ix == target).then_some(ix);
        let (z_next, cap) = transformer_block(&z, block, cfg, want)?;
        z = z_next;
        if cap.is_some() {
            capture = cap;
        }
    }
    Ok((z, capture.expect("capture block visited")))
}
