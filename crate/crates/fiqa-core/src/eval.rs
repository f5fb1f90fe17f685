//! Error-versus-discard evaluation: verification error (FNMR at a fixed
//! threshold) as progressively larger fractions of low-quality samples are
//! rejected.
//!
//! Conventions, chosen once and used everywhere:
//! - an impostor pair matches when similarity >= threshold (FMR),
//! - a genuine pair non-matches when similarity < threshold (FNMR),
//! - calibration returns the smallest candidate threshold (ascending over
//!   the distinct impostor similarities, then one step above the maximum)
//!   whose FMR is <= the target, so FMR(t) <= target always holds,
//! - discard ranks all samples by (quality ascending, id ascending) and
//!   removes the first floor(r * count); a pair dies with either member.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::afqw::{self, TensorView};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] afqw::FormatError),
    #[error("{path}:{line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("vector dimensions differ: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("embedding `{id}` is a zero vector")]
    ZeroEmbedding { id: String },
    #[error("duplicate id `{id}`")]
    DuplicateId { id: String },
    #[error("{rows} embedding rows but {ids} ids")]
    CountMismatch { rows: usize, ids: usize },
    #[error("id `{id}` is not in the embedding set")]
    UnknownId { id: String },
    #[error("no quality score for sample `{id}`")]
    MissingQuality { id: String },
    #[error("pair list has no genuine pairs")]
    NoGenuinePairs,
    #[error("pair list has no impostor pairs")]
    NoImpostorPairs,
    #[error("similarity list is empty")]
    EmptySims,
    #[error("target FMR {0} outside (0, 1)")]
    BadTargetFmr(f64),
    #[error("discard grid is empty")]
    EmptyGrid,
    #[error("discard grid must start at 0, got {0}")]
    GridStart(f64),
    #[error("discard grid must be strictly increasing and within [0, 1]")]
    BadGrid,
    #[error("curve reaches r={max_r}, cannot integrate to {need}")]
    CurveShort { max_r: f64, need: f64 },
}

/// Named embedding vectors, row-major [count x dim].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f32>,
}

impl EmbeddingSet {
    /// Validates: row/id counts match, ids unique and well-formed, a positive
    /// dimension, no zero vectors.
    pub fn new(ids: Vec<String>, dim: usize, vectors: Vec<f32>) -> Result<Self, EvalError> {
        if dim == 0 {
            return Err(EvalError::DimMismatch { a: 0, b: 0 });
        }
        if vectors.len() != ids.len() * dim {
            return Err(EvalError::CountMismatch { rows: vectors.len() / dim, ids: ids.len() });
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(EvalError::DuplicateId { id: id.clone() });
            }
        }
        for (i, id) in ids.iter().enumerate() {
            let row = &vectors[i * dim..(i + 1) * dim];
            if row.iter().all(|&v| v == 0.0) {
                return Err(EvalError::ZeroEmbedding { id: id.clone() });
            }
        }
        Ok(Self { ids, dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Genuine,
    Impostor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id_a: String,
    pub id_b: String,
    pub label: PairLabel,
}

/// Cosine similarity with f64 accumulation. Zero vectors are rejected.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::DimMismatch { a: a.len(), b: b.len() });
    }
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Fraction of impostor similarities at or above `t`.
pub fn fmr_at_threshold(impostor_sims: &[f64], t: f64) -> Result<f64, EvalError> {
    if impostor_sims.is_empty() {
        return Err(EvalError::EmptySims);
    }
    Ok(impostor_sims.iter().filter(|&&s| s >= t).count() as f64 / impostor_sims.len() as f64)
}

/// Smallest threshold whose FMR is at or below the target.
///
/// Candidates are the distinct impostor similarities ascending, then the next
/// representable value above the maximum (FMR exactly 0) when no similarity
/// qualifies. The result always satisfies `FMR(t) <= target_fmr`, and every
/// strictly smaller candidate from the similarity set violates it.
pub fn calibrate_threshold(impostor_sims: &[f64], target_fmr: f64) -> Result<f64, EvalError> {
    if impostor_sims.is_empty() {
        return Err(EvalError::EmptySims);
    }
    if !(target_fmr > 0.0 && target_fmr < 1.0) {
        return Err(EvalError::BadTargetFmr(target_fmr));
    }
    let mut sorted = impostor_sims.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    for (i, &t) in sorted.iter().enumerate() {
        if i > 0 && sorted[i - 1] == t {
            continue;
        }
        // everything from index i up is >= t
        let fmr = (sorted.len() - i) as f64 / n;
        if fmr <= target_fmr {
            return Ok(t);
        }
    }
    Ok(sorted[sorted.len() - 1].next_up())
}

/// Fraction of genuine similarities strictly below `t`.
pub fn fnmr_at_threshold(genuine_sims: &[f64], t: f64) -> Result<f64, EvalError> {
    if genuine_sims.is_empty() {
        return Err(EvalError::EmptySims);
    }
    Ok(genuine_sims.iter().filter(|&&s| s < t).count() as f64 / genuine_sims.len() as f64)
}

/// FNMR as a function of the discard fraction, at one fixed threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct EDCCurve {
    /// (discard fraction r, FNMR among surviving genuine pairs).
    pub points: Vec<(f64, f64)>,
    /// Threshold calibrated on all impostor pairs at r = 0.
    pub threshold: f64,
    pub target_fmr: f64,
}

/// Builds the curve. `qualities` must cover every sample id in the set;
/// every pair id must name a sample. The threshold is calibrated once on all
/// impostor pairs and held fixed across the grid. When a discard level
/// leaves no genuine pair alive, the previous FNMR is carried forward.
pub fn edc_curve(
    emb: &EmbeddingSet,
    pairs: &[Pair],
    qualities: &HashMap<String, f64>,
    target_fmr: f64,
    grid: &[f64],
) -> Result<EDCCurve, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if grid[0] != 0.0 {
        return Err(EvalError::GridStart(grid[0]));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(EvalError::BadGrid);
        }
    }
    if !grid.iter().all(|r| r.is_finite() && (0.0..=1.0).contains(r)) {
        return Err(EvalError::BadGrid);
    }

    for id in emb.ids() {
        if !qualities.contains_key(id) {
            return Err(EvalError::MissingQuality { id: id.clone() });
        }
    }

    struct Resolved {
        ix_a: usize,
        ix_b: usize,
        sim: f64,
        genuine: bool,
    }
    let mut resolved = Vec::with_capacity(pairs.len());
    for p in pairs {
        let ix_a = emb
            .index_of(&p.id_a)
            .ok_or_else(|| EvalError::UnknownId { id: p.id_a.clone() })?;
        let ix_b = emb
            .index_of(&p.id_b)
            .ok_or_else(|| EvalError::UnknownId { id: p.id_b.clone() })?;
        let sim = cosine_similarity(emb.vector(ix_a), emb.vector(ix_b))?;
        resolved.push(Resolved { ix_a, ix_b, sim, genuine: p.label == PairLabel::Genuine });
    }
    let impostor_sims: Vec<f64> = resolved.iter().filter(|p| !p.genuine).map(|p| p.sim).collect();
    if resolved.iter().all(|p| !p.genuine) {
        return Err(EvalError::NoGenuinePairs);
    }
    if impostor_sims.is_empty() {
        return Err(EvalError::NoImpostorPairs);
    }
    let threshold = calibrate_threshold(&impostor_sims, target_fmr)?;

    // discard order: quality ascending, id ascending on ties
    let mut order: Vec<usize> = (0..emb.len()).collect();
    order.sort_by(|&a, &b| {
        let qa = qualities[&emb.ids()[a]];
        let qb = qualities[&emb.ids()[b]];
        qa.total_cmp(&qb).then_with(|| emb.ids()[a].cmp(&emb.ids()[b]))
    });

    let mut points = Vec::with_capacity(grid.len());
    let mut last_fnmr = None;
    let mut discarded = vec![false; emb.len()];
    for &r in grid {
        let k = (r * emb.len() as f64).floor() as usize;
        for flag in discarded.iter_mut() {
            *flag = false;
        }
        for &ix in order.iter().take(k.min(emb.len())) {
            discarded[ix] = true;
        }
        let surviving: Vec<f64> = resolved
            .iter()
            .filter(|p| p.genuine && !discarded[p.ix_a] && !discarded[p.ix_b])
            .map(|p| p.sim)
            .collect();
        let fnmr = if surviving.is_empty() {
            last_fnmr.expect("r = 0 keeps every genuine pair")
        } else {
            surviving.iter().filter(|&&s| s < threshold).count() as f64 / surviving.len() as f64
        };
        last_fnmr = Some(fnmr);
        points.push((r, fnmr));
    }
    Ok(EDCCurve { points, threshold, target_fmr })
}

/// Area under the curve's linear interpolant over [0, max_discard].
/// The curve must start at r = 0 and reach max_discard.
pub fn pauc(curve: &EDCCurve, max_discard: f64) -> Result<f64, EvalError> {
    let pts = &curve.points;
    if pts.is_empty() || pts[0].0 != 0.0 {
        return Err(EvalError::CurveShort {
            max_r: pts.first().map_or(f64::NAN, |p| p.0),
            need: 0.0,
        });
    }
    let max_r = pts[pts.len() - 1].0;
    if max_r < max_discard {
        return Err(EvalError::CurveShort { max_r, need: max_discard });
    }
    let mut area = 0f64;
    for w in pts.windows(2) {
        let (r0, f0) = w[0];
        let (r1, f1) = w[1];
        if r1 <= max_discard {
            area += (r1 - r0) * (f0 + f1) / 2.0;
        } else if r0 < max_discard {
            // partial trapezoid up to the cutoff on the interpolated curve
            let t = (max_discard - r0) / (r1 - r0);
            let fc = f0 + t * (f1 - f0);
            area += (max_discard - r0) * (f0 + fc) / 2.0;
            break;
        } else {
            break;
        }
    }
    Ok(area)
}

/// Area over the full stored range.
pub fn auc(curve: &EDCCurve) -> Result<f64, EvalError> {
    let max_r = curve.points.last().map_or(0.0, |p| p.0);
    pauc(curve, max_r)
}

// ---- file formats -----------------------------------------------------------

const EMBEDDINGS_TENSOR: &str = "embeddings";

/// Writes the vectors as one [count x dim] tensor plus a sidecar id list,
/// one id per line.
pub fn save_embeddings(
    tensor_path: &Path,
    ids_path: &Path,
    emb: &EmbeddingSet,
) -> Result<(), EvalError> {
    let dims = [emb.len() as u64, emb.dim() as u64];
    afqw::write_tensors(
        tensor_path,
        &[TensorView { name: EMBEDDINGS_TENSOR, dims: &dims, data: &emb.vectors }],
    )?;
    let mut f = BufWriter::new(File::create(ids_path)?);
    for id in emb.ids() {
        writeln!(f, "{id}")?;
    }
    f.flush()?;
    Ok(())
}

/// Loads the tensor container and sidecar id list written by `save_embeddings`.
pub fn load_embeddings(tensor_path: &Path, ids_path: &Path) -> Result<EmbeddingSet, EvalError> {
    let tensors = afqw::read_tensors(tensor_path)?;
    let t = match tensors.as_slice() {
        [t] if t.name == EMBEDDINGS_TENSOR && t.dims.len() == 2 => t,
        _ => {
            return Err(EvalError::Parse {
                path: tensor_path.display().to_string(),
                line: 0,
                detail: format!(
                    "expected exactly one rank-2 tensor named `{EMBEDDINGS_TENSOR}`"
                ),
            })
        }
    };
    let text = std::fs::read_to_string(ids_path)?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            return Err(EvalError::Parse {
                path: ids_path.display().to_string(),
                line: i + 1,
                detail: "empty id".into(),
            });
        }
        if id.contains(',') {
            return Err(EvalError::Parse {
                path: ids_path.display().to_string(),
                line: i + 1,
                detail: format!("id `{id}` contains a comma"),
            });
        }
        ids.push(id.to_string());
    }
    if ids.len() as u64 != t.dims[0] {
        return Err(EvalError::CountMismatch { rows: t.dims[0] as usize, ids: ids.len() });
    }
    EmbeddingSet::new(ids, t.dims[1] as usize, t.data.clone())
}

/// Reads a pair list: header line, then `id_a,id_b,label` rows with label
/// `genuine` or `impostor`.
pub fn load_pairs(path: &Path) -> Result<Vec<Pair>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(EvalError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                detail: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let label = match fields[2].trim() {
            "genuine" => PairLabel::Genuine,
            "impostor" => PairLabel::Impostor,
            other => {
                return Err(EvalError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    detail: format!("label `{other}` is neither genuine nor impostor"),
                })
            }
        };
        out.push(Pair {
            id_a: fields[0].trim().to_string(),
            id_b: fields[1].trim().to_string(),
            label,
        });
    }
    Ok(out)
}

/// Reads (id, score) from the first two columns of a score CSV
/// (header line skipped). Duplicate ids are rejected.
pub fn load_qualities(path: &Path) -> Result<HashMap<String, f64>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or("").trim().to_string();
        let score: f64 = fields
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| EvalError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                detail: "expected `id,score,...`".into(),
            })?;
        if id.is_empty() {
            return Err(EvalError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                detail: "empty id".into(),
            });
        }
        if out.insert(id.clone(), score).is_some() {
            return Err(EvalError::DuplicateId { id });
        }
    }
    Ok(out)
}

/// Summary attached to a written curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSummary {
    pub threshold: f64,
    pub target_fmr: f64,
    pub fnmr_at_zero: f64,
    pub auc: f64,
    pub pauc: f64,
    pub pauc_cutoff: f64,
}

/// Writes `r,fnmr` rows plus a `#`-prefixed summary line with the threshold,
/// target, and areas (raw and, as a convenience view, scaled by 1000).
pub fn write_curve(
    path: &Path,
    curve: &EDCCurve,
    pauc_cutoff: f64,
) -> Result<CurveSummary, EvalError> {
    let summary = CurveSummary {
        threshold: curve.threshold,
        target_fmr: curve.target_fmr,
        fnmr_at_zero: curve.points.first().map_or(f64::NAN, |p| p.1),
        auc: auc(curve)?,
        pauc: pauc(curve, pauc_cutoff)?,
        pauc_cutoff,
    };
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "r,fnmr")?;
    for &(r, fnmr) in &curve.points {
        writeln!(f, "{r},{fnmr}")?;
    }
    writeln!(
        f,
        "# threshold={} target_fmr={} fnmr_at_0={} auc={} pauc={} pauc_cutoff={} auc_x1000={} pauc_x1000={}",
        summary.threshold,
        summary.target_fmr,
        summary.fnmr_at_zero,
        summary.auc,
        summary.pauc,
        summary.pauc_cutoff,
        summary.auc * 1000.0,
        summary.pauc * 1000.0,
    )?;
    f.flush()?;
    Ok(summary)
}
