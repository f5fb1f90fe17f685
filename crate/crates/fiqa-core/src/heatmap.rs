//! Patch-level attention heatmaps.
//!
//! Each patch gets a participation score: the mean raw attention mass on its
//! row and column across heads. Scores map through one shared color scale so
//! a whole batch is comparable, then render as solid P x P blocks.

use thiserror::Error;

use crate::config::ModelConfig;
use crate::image::Raster;
use crate::vit::AttentionCapture;

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("cannot build a color scale from an empty batch")]
    EmptyBatch,
    #[error("capture has {tokens} tokens, grid {grid_h}x{grid_w} needs {need}")]
    TokenMismatch { tokens: usize, grid_h: usize, grid_w: usize, need: usize },
    #[error("overlay size mismatch: base {base_w}x{base_h}, heat {heat_w}x{heat_h}")]
    SizeMismatch { base_w: usize, base_h: usize, heat_w: usize, heat_h: usize },
    #[error("alpha {0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("patch pixel size must be at least 1")]
    BadPatchSize,
}

/// Diverging blue -> neutral -> red ramp, 17 stops. Low scores are blue,
/// high scores red; stop 8 is the exact midpoint used for degenerate scales.
pub const PALETTE: [[u8; 3]; 17] = [
    [59, 76, 192],
    [79, 94, 196],
    [100, 112, 199],
    [120, 130, 203],
    [140, 149, 207],
    [160, 167, 210],
    [181, 185, 214],
    [201, 203, 217],
    [221, 221, 221],
    [216, 194, 198],
    [211, 167, 175],
    [206, 140, 152],
    [201, 113, 130],
    [195, 85, 107],
    [190, 58, 84],
    [185, 31, 61],
    [180, 4, 38],
];

/// Per-patch participation scores on the patch grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub values: Vec<f64>,
}

/// Shared mapping from score to color for a whole batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorScale {
    pub global_min: f64,
    pub global_max: f64,
    pub palette: &'static [[u8; 3]; 17],
}

/// Attention mass touching each patch: for patch i, the mean over heads of
/// row i plus column i of the raw score matrix, normalized by `2 * N * heads`.
/// The mean of these values equals the concat-mean quality score, since every
/// matrix entry is counted exactly twice.
pub fn patch_participation(
    cap: &AttentionCapture,
    cfg: &ModelConfig,
) -> Result<PatchMap, HeatmapError> {
    let grid_h = cfg.grid_height();
    let grid_w = cfg.grid_width();
    let n = cap.num_tokens();
    if n != grid_h * grid_w {
        return Err(HeatmapError::TokenMismatch {
            tokens: n,
            grid_h,
            grid_w,
            need: grid_h * grid_w,
        });
    }
    let norm = (cap.heads.len() * 2 * n) as f64;
    let mut values = vec![0f64; n];
    for head in &cap.heads {
        for i in 0..n {
            for j in 0..n {
                let v = head.get(i, j) as f64;
                values[i] += v; // row mass for i
                values[j] += v; // column mass for j
            }
        }
    }
    for v in &mut values {
        *v /= norm;
    }
    Ok(PatchMap { grid_h, grid_w, values })
}

/// One scale spanning every value of every map. Errors on an empty batch.
pub fn build_color_scale(maps: &[PatchMap]) -> Result<ColorScale, HeatmapError> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for m in maps {
        for &v in &m.values {
            min = min.min(v);
            max = max.max(v);
            any = true;
        }
    }
    if !any {
        return Err(HeatmapError::EmptyBatch);
    }
    Ok(ColorScale { global_min: min, global_max: max, palette: &PALETTE })
}

/// Continuous palette position of a value in [0, stops-1]. Monotone in the
/// value; a degenerate scale pins everything to the midpoint.
pub fn palette_position(scale: &ColorScale, value: f64) -> f64 {
    let t = if scale.global_max > scale.global_min {
        ((value - scale.global_min) / (scale.global_max - scale.global_min)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    t * (scale.palette.len() - 1) as f64
}

/// Color for one value: linear interpolation between adjacent palette stops,
/// channels rounded half-up.
pub fn color_at(scale: &ColorScale, value: f64) -> [u8; 3] {
    let pos = palette_position(scale, value);
    let lo = (pos.floor() as usize).min(scale.palette.len() - 2);
    let frac = pos - lo as f64;
    let a = scale.palette[lo];
    let b = scale.palette[lo + 1];
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = a[c] as f64 + frac * (b[c] as f64 - a[c] as f64);
        out[c] = v.round() as u8;
    }
    out
}

/// Renders the map as solid `patch_px` x `patch_px` blocks.
pub fn render_heatmap(
    map: &PatchMap,
    scale: &ColorScale,
    patch_px: usize,
) -> Result<Raster, HeatmapError> {
    if patch_px == 0 {
        return Err(HeatmapError::BadPatchSize);
    }
    let width = map.grid_w * patch_px;
    let height = map.grid_h * patch_px;
    let mut raster = Raster::filled(width, height, [0, 0, 0]);
    for gy in 0..map.grid_h {
        for gx in 0..map.grid_w {
            let rgb = color_at(scale, map.values[gy * map.grid_w + gx]);
            for py in 0..patch_px {
                for px in 0..patch_px {
                    raster.set(gx * patch_px + px, gy * patch_px + py, rgb);
                }
            }
        }
    }
    Ok(raster)
}

/// Alpha blend `(1 - alpha) * base + alpha * heat`, rounded half-up per channel.
pub fn overlay(base: &Raster, heat: &Raster, alpha: f64) -> Result<Raster, HeatmapError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(HeatmapError::BadAlpha(alpha));
    }
    if base.width != heat.width || base.height != heat.height {
        return Err(HeatmapError::SizeMismatch {
            base_w: base.width,
            base_h: base.height,
            heat_w: heat.width,
            heat_h: heat.height,
        });
    }
    let pixels = base
        .pixels
        .iter()
        .zip(&heat.pixels)
        .map(|(&b, &h)| ((1.0 - alpha) * b as f64 + alpha * h as f64).round() as u8)
        .collect();
    Ok(Raster { width: base.width, height: base.height, pixels })
}
