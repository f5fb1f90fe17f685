//! Model geometry and the flat key=value config file format.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("could not read config: {0}")]
    Io(String),
    #[error("line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("duplicate config key `{key}`")]
    DuplicateKey { key: String },
    #[error("missing required config key `{key}`")]
    MissingKey { key: &'static str },
    #[error("config key `{key}` has invalid value `{value}`")]
    InvalidValue { key: String, value: String },
    #[error("{dim_name} {dim} is not divisible by patch_size {patch}")]
    PatchMismatch { dim_name: &'static str, dim: usize, patch: usize },
    #[error("embed_dim {embed} is not divisible by num_heads {heads}")]
    HeadMismatch { embed: usize, heads: usize },
    #[error("num_blocks must be at least 1")]
    NoBlocks,
    #[error("config key `{key}` must be positive")]
    NotPositive { key: &'static str },
    #[error("mlp_ratio {ratio} times embed_dim {embed} is not a whole hidden width")]
    FractionalHidden { ratio: f64, embed: usize },
}

/// Geometry and preprocessing parameters for one model.
///
/// The token count is always derived from the image and patch geometry:
/// a 112x112 input with patch_size 8 yields a 14x14 grid, 196 tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub ln_eps: f32,
    /// Pixel preprocessing: `(x / 255 - norm_mean) / norm_std`.
    pub norm_mean: f32,
    pub norm_std: f32,
}

impl ModelConfig {
    /// Builds and validates a config. Every derived quantity below is only
    /// meaningful on a validated instance.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        image_height: usize,
        image_width: usize,
        patch_size: usize,
        embed_dim: usize,
        num_blocks: usize,
        num_heads: usize,
        mlp_ratio: f64,
        ln_eps: f32,
    ) -> Result<Self, ConfigError> {
        let cfg = Self {
            image_height,
            image_width,
            patch_size,
            embed_dim,
            num_blocks,
            num_heads,
            mlp_ratio,
            ln_eps,
            norm_mean: 0.5,
            norm_std: 0.5,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
        ] {
            if v == 0 {
                return Err(ConfigError::NotPositive { key });
            }
        }
        if self.num_blocks < 1 {
            return Err(ConfigError::NoBlocks);
        }
        if self.image_height % self.patch_size != 0 {
            return Err(ConfigError::PatchMismatch {
                dim_name: "image_height",
                dim: self.image_height,
                patch: self.patch_size,
            });
        }
        if self.image_width % self.patch_size != 0 {
            return Err(ConfigError::PatchMismatch {
                dim_name: "image_width",
                dim: self.image_width,
                patch: self.patch_size,
            });
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(ConfigError::HeadMismatch {
                embed: self.embed_dim,
                heads: self.num_heads,
            });
        }
        if !(self.mlp_ratio > 0.0) || !self.mlp_ratio.is_finite() {
            return Err(ConfigError::NotPositive { key: "mlp_ratio" });
        }
        let hidden = self.mlp_ratio * self.embed_dim as f64;
        if (hidden - hidden.round()).abs() > 1e-9 || hidden.round() < 1.0 {
            return Err(ConfigError::FractionalHidden {
                ratio: self.mlp_ratio,
                embed: self.embed_dim,
            });
        }
        if !(self.ln_eps > 0.0) || !self.ln_eps.is_finite() {
            return Err(ConfigError::NotPositive { key: "ln_eps" });
        }
        if self.norm_std == 0.0 || !self.norm_std.is_finite() || !self.norm_mean.is_finite() {
            return Err(ConfigError::NotPositive { key: "norm_std" });
        }
        Ok(())
    }

    pub fn grid_height(&self) -> usize {
        self.image_height / self.patch_size
    }

    pub fn grid_width(&self) -> usize {
        self.image_width / self.patch_size
    }

    /// Token count N, derived from geometry.
    pub fn num_patches(&self) -> usize {
        self.grid_height() * self.grid_width()
    }

    /// Flattened patch width: patch_size^2 pixels times 3 channels.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn hidden_dim(&self) -> usize {
        (self.mlp_ratio * self.embed_dim as f64).round() as usize
    }

    /// Pre-softmax attention scale, `1 / sqrt(embed_dim / num_heads)`.
    pub fn attn_scale(&self) -> f32 {
        1.0 / (self.head_dim() as f32).sqrt()
    }

    /// Parses the flat key=value format. `#` starts a comment line, blank
    /// lines are skipped, keys may not repeat.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut image_height = None;
        let mut image_width = None;
        let mut patch_size = None;
        let mut embed_dim = None;
        let mut num_blocks = None;
        let mut num_heads = None;
        let mut mlp_ratio: Option<f64> = None;
        let mut ln_eps: Option<f32> = None;
        let mut norm_mean: Option<f32> = None;
        let mut norm_std: Option<f32> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                text: line.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();

            fn put_usize(
                slot: &mut Option<usize>,
                key: &str,
                value: &str,
            ) -> Result<(), ConfigError> {
                if slot.is_some() {
                    return Err(ConfigError::DuplicateKey { key: key.to_string() });
                }
                *slot = Some(value.parse().map_err(|_| ConfigError::InvalidValue {
                    key: key.to_string(),
                    value: value.to_string(),
                })?);
                Ok(())
            }
            fn put_float<T: std::str::FromStr>(
                slot: &mut Option<T>,
                key: &str,
                value: &str,
            ) -> Result<(), ConfigError> {
                if slot.is_some() {
                    return Err(ConfigError::DuplicateKey { key: key.to_string() });
                }
                *slot = Some(value.parse().map_err(|_| ConfigError::InvalidValue {
                    key: key.to_string(),
                    value: value.to_string(),
                })?);
                Ok(())
            }

            match key {
                "image_height" => put_usize(&mut image_height, key, value)?,
                "image_width" => put_usize(&mut image_width, key, value)?,
                "patch_size" => put_usize(&mut patch_size, key, value)?,
                "embed_dim" => put_usize(&mut embed_dim, key, value)?,
                "num_blocks" => put_usize(&mut num_blocks, key, value)?,
                "num_heads" => put_usize(&mut num_heads, key, value)?,
                "mlp_ratio" => put_float(&mut mlp_ratio, key, value)?,
                "ln_eps" => put_float(&mut ln_eps, key, value)?,
                "norm_mean" => put_float(&mut norm_mean, key, value)?,
                "norm_std" => put_float(&mut norm_std, key, value)?,
                _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
            }
        }

        let mut cfg = Self {
            image_height: image_height.ok_or(ConfigError::MissingKey { key: "image_height" })?,
            image_width: image_width.ok_or(ConfigError::MissingKey { key: "image_width" })?,
            patch_size: patch_size.ok_or(ConfigError::MissingKey { key: "patch_size" })?,
            embed_dim: embed_dim.ok_or(ConfigError::MissingKey { key: "embed_dim" })?,
            num_blocks: num_blocks.ok_or(ConfigError::MissingKey { key: "num_blocks" })?,
            num_heads: num_heads.ok_or(ConfigError::MissingKey { key: "num_heads" })?,
            mlp_ratio: mlp_ratio.unwrap_or(4.0),
            ln_eps: ln_eps.unwrap_or(1e-5),
            norm_mean: 0.5,
            norm_std: 0.5,
        };
        if let Some(m) = norm_mean {
            cfg.norm_mean = m;
        }
        if let Some(s) = norm_std {
            cfg.norm_std = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
