//! Quality scores from captured attention: flatten the raw per-head score
//! matrices and reduce them with a summary metric.
//!
//! The flat order is head-major, then row-major within each head. The mean
//! over the concatenated values equals the average of per-head means (equal
//! cardinality per head), which is why those two strategies tie; max, median
//! and 1/std do not commute with per-head averaging.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::vit::AttentionCapture;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("cannot aggregate an empty value list")]
    Empty,
    #[error("dispersion below 1e-12, 1/std is undefined")]
    DegenerateDispersion,
    #[error("head {head} out of range 1..={num_heads}")]
    HeadOutOfRange { head: usize, num_heads: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty group label at row {row}")]
    EmptyLabel { row: usize },
}

/// Summary metric over a flat list of raw attention values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mean,
    Max,
    Median,
    /// Reciprocal of the population standard deviation.
    InvStd,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mean, Metric::Max, Metric::Median, Metric::InvStd];
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Metric::Mean => "mean",
            Metric::Max => "max",
            Metric::Median => "median",
            Metric::InvStd => "inv_std",
        };
        f.write_str(s)
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Metric::Mean),
            "max" => Ok(Metric::Max),
            "median" => Ok(Metric::Median),
            "inv_std" => Ok(Metric::InvStd),
            other => Err(format!("unknown metric `{other}` (mean, max, median, inv_std)")),
        }
    }
}

/// Which attention values feed the metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// All heads concatenated into one value list.
    Concat,
    /// A single head, 1-based.
    PerHead(usize),
    /// Metric per head, then the mean of the per-head results.
    AvgOfHeads,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Concat => f.write_str("concat"),
            Strategy::PerHead(h) => write!(f, "head{h}"),
            Strategy::AvgOfHeads => f.write_str("avg_heads"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat" => Ok(Strategy::Concat),
            "avg_heads" => Ok(Strategy::AvgOfHeads),
            other => {
                if let Some(num) = other.strip_prefix("head") {
                    if let Ok(h) = num.parse::<usize>() {
                        if h >= 1 {
                            return Ok(Strategy::PerHead(h));
                        }
                    }
                }
                Err(format!("unknown strategy `{other}` (concat, avg_heads, head<N>)"))
            }
        }
    }
}

/// Raw attention values in canonical flat order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatAttention {
    pub values: Vec<f32>,
}

/// A scalar quality with the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityScore {
    pub value: f64,
    pub strategy: Strategy,
    pub metric: Metric,
    /// 1-based block the attention came from.
    pub block: usize,
}

/// Concatenates every head's score matrix, head-major then row-major.
pub fn flatten_attention(cap: &AttentionCapture) -> FlatAttention {
    let n = cap.num_tokens();
    let mut values = Vec::with_capacity(cap.heads.len() * n * n);
    for head in &cap.heads {
        values.extend_from_slice(head.data());
    }
    FlatAttention { values }
}

/// Reduces a value list to one number. f64 accumulation throughout.
pub fn aggregate(values: &[f32], metric: Metric) -> Result<f64, ScoringError> {
    if values.is_empty() {
        return Err(ScoringError::Empty);
    }
    let n = values.len() as f64;
    match metric {
        Metric::Mean => Ok(values.iter().map(|&v| v as f64).sum::<f64>() / n),
        Metric::Max => Ok(values.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max)),
        Metric::Median => {
            let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            if sorted.len() % 2 == 1 {
                Ok(sorted[mid])
            } else {
                Ok((sorted[mid - 1] + sorted[mid]) / 2.0)
            }
        }
        Metric::InvStd => {
            let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < 1e-12 {
                return Err(ScoringError::DegenerateDispersion);
            }
            Ok(1.0 / std)
        }
    }
}

/// Metric over all heads' values at once.
pub fn concat_quality(cap: &AttentionCapture, metric: Metric) -> Result<QualityScore, ScoringError> {
    let flat = flatten_attention(cap);
    Ok(QualityScore {
        value: aggregate(&flat.values, metric)?,
        strategy: Strategy::Concat,
        metric,
        block: cap.block_index,
    })
}

/// Metric over a single head's values. `head` is 1-based.
pub fn per_head_quality(
    cap: &AttentionCapture,
    head: usize,
    metric: Metric,
) -> Result<QualityScore, ScoringError> {
    if head < 1 || head > cap.heads.len() {
        return Err(ScoringError::HeadOutOfRange { head, num_heads: cap.heads.len() });
    }
    Ok(QualityScore {
        value: aggregate(cap.heads[head - 1].data(), metric)?,
        strategy: Strategy::PerHead(head),
        metric,
        block: cap.block_index,
    })
}

/// Metric per head, then the plain mean of the per-head values.
/// A degenerate head surfaces the same error per-head scoring would.
pub fn avg_of_heads_quality(
    cap: &AttentionCapture,
    metric: Metric,
) -> Result<QualityScore, ScoringError> {
    if cap.heads.is_empty() {
        return Err(ScoringError::Empty);
    }
    let mut sum = 0f64;
    for head in &cap.heads {
        sum += aggregate(head.data(), metric)?;
    }
    Ok(QualityScore {
        value: sum / cap.heads.len() as f64,
        strategy: Strategy::AvgOfHeads,
        metric,
        block: cap.block_index,
    })
}

/// Dispatch on strategy.
pub fn quality_score(
    cap: &AttentionCapture,
    strategy: Strategy,
    metric: Metric,
) -> Result<QualityScore, ScoringError> {
    match strategy {
        Strategy::Concat => concat_quality(cap, metric),
        Strategy::PerHead(h) => per_head_quality(cap, h, metric),
        Strategy::AvgOfHeads => avg_of_heads_quality(cap, metric),
    }
}

/// Min-max normalization to [0, 1]. A constant batch maps to all 0.5.
pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|&v| (v - min) / (max - min)).collect()
}

/// Per-group distribution summary.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile by linear interpolation on sorted order statistics
/// (position h = (n-1) * p, the standard boxplot convention).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Groups scores by label and summarizes each group. Output is sorted by
/// label; scores and labels align by index.
pub fn group_statistics(
    scores: &[f64],
    labels: &[String],
) -> Result<Vec<GroupSummary>, ScoringError> {
    if scores.len() != labels.len() {
        return Err(ScoringError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    for (row, label) in labels.iter().enumerate() {
        if label.is_empty() {
            return Err(ScoringError::EmptyLabel { row });
        }
    }
    let mut groups: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for (v, label) in scores.iter().zip(labels) {
        groups.entry(label).or_default().push(*v);
    }
    let out = groups
        .into_iter()
        .map(|(label, mut vals)| {
            vals.sort_by(f64::total_cmp);
            let count = vals.len();
            let mean = vals.iter().sum::<f64>() / count as f64;
            GroupSummary {
                label: label.to_string(),
                count,
                mean,
                min: vals[0],
                q1: quantile_sorted(&vals, 0.25),
                median: quantile_sorted(&vals, 0.5),
                q3: quantile_sorted(&vals, 0.75),
                max: vals[count - 1],
            }
        })
        .collect();
    Ok(out)
}
