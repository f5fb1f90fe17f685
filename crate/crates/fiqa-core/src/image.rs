//! PPM (P6, 8-bit) raster input/output and pixel preprocessing.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::config::ModelConfig;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("malformed PPM: {0}")]
    Malformed(String),
    #[error("truncated PPM: expected {expected} pixel bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image is {found_w}x{found_h}, config expects {expected_w}x{expected_h}")]
    WrongDimensions { expected_w: usize, expected_h: usize, found_w: usize, found_h: usize },
}

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// `3 * width * height` bytes, R G B per pixel.
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if pixels.len() != 3 * width * height {
            return Err(ImageError::Malformed(format!(
                "{} pixel bytes for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self { width, height, pixels }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Preprocessed image: f32 values, row-major, channels interleaved,
/// `(x / 255 - norm_mean) / norm_std` per sample. With the default
/// mean/std of 0.5 the range is exactly [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn from_raster(raster: &Raster, cfg: &ModelConfig) -> Self {
        let data = raster
            .pixels
            .iter()
            .map(|&p| (p as f32 / 255.0 - cfg.norm_mean) / cfg.norm_std)
            .collect();
        Self { width: raster.width, height: raster.height, data }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[3 * (y * self.width + x) + c]
    }
}

fn read_header_token(buf: &[u8], pos: &mut usize, what: &str) -> Result<usize, ImageError> {
    // skip whitespace and '#' comments (which run to end of line)
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < buf.len() && buf[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::Malformed(format!("missing {what} in header")));
    }
    std::str::from_utf8(&buf[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::Malformed(format!("bad {what} in header")))
}

/// Reads a binary P6 PPM with maxval 255. Anything else is rejected.
pub fn read_ppm(path: &Path) -> Result<Raster, ImageError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 2 || &buf[0..2] != b"P6" {
        let found = String::from_utf8_lossy(&buf[..buf.len().min(2)]).into_owned();
        return Err(ImageError::Unsupported(format!("magic `{found}`, want P6")));
    }
    let mut pos = 2;
    let width = read_header_token(&buf, &mut pos, "width")?;
    let height = read_header_token(&buf, &mut pos, "height")?;
    let maxval = read_header_token(&buf, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(ImageError::Unsupported(format!("maxval {maxval}, want 255")));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Malformed(format!("degenerate size {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the pixel data
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err(ImageError::Malformed("missing separator after maxval".into()));
    }
    pos += 1;
    let expected = 3 * width * height;
    let found = buf.len() - pos;
    if found < expected {
        return Err(ImageError::Truncated { expected, found });
    }
    if found > expected {
        return Err(ImageError::Malformed(format!("{} trailing bytes", found - expected)));
    }
    Raster::new(width, height, buf[pos..].to_vec())
}

pub fn write_ppm(path: &Path, raster: &Raster) -> Result<(), ImageError> {
    let mut f = File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", raster.width, raster.height)?;
    f.write_all(&raster.pixels)?;
    Ok(())
}

/// Loads a PPM, checks it against the config geometry, and preprocesses it.
pub fn load_image(path: &Path, cfg: &ModelConfig) -> Result<ImageTensor, ImageError> {
    let raster = read_ppm(path)?;
    if raster.width != cfg.image_width || raster.height != cfg.image_height {
        return Err(ImageError::WrongDimensions {
            expected_w: cfg.image_width,
            expected_h: cfg.image_height,
            found_w: raster.width,
            found_h: raster.height,
        });
    }
    Ok(ImageTensor::from_raster(&raster, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg4() -> ModelConfig {
        ModelConfig::new(4, 4, 2, 6, 1, 2, 2.0, 1e-5).unwrap()
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut r = Raster::filled(3, 2, [10, 20, 30]);
        r.set(2, 1, [200, 100, 0]);
        write_ppm(&path, &r).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), r);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut bytes = b"P6\n# made by hand\n2 1\n# another note\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        std::fs::write(&path, &bytes).unwrap();
        let r = read_ppm(&path).unwrap();
        assert_eq!((r.width, r.height), (2, 1));
        assert_eq!(r.pixels, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn preprocessing_maps_extremes_and_midgray() {
        let cfg = cfg4();
        let mut r = Raster::filled(4, 4, [128, 128, 128]);
        r.set(0, 0, [0, 255, 128]);
        let t = ImageTensor::from_raster(&r, &cfg);
        assert_eq!(t.get(0, 0, 0), -1.0);
        assert_eq!(t.get(0, 0, 1), 1.0);
        // 128 maps just above zero: (128/255 - 0.5) / 0.5
        assert!((t.get(0, 0, 2) - 0.003922).abs() <= 1e-6);
        assert!(t.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn preprocessing_honors_config_override() {
        let mut cfg = cfg4();
        cfg.norm_mean = 0.0;
        cfg.norm_std = 1.0;
        let r = Raster::filled(4, 4, [255, 0, 51]);
        let t = ImageTensor::from_raster(&r, &cfg);
        assert_eq!(t.get(1, 1, 0), 1.0);
        assert_eq!(t.get(1, 1, 1), 0.0);
        assert!((t.get(1, 1, 2) - 0.2).abs() <= 1e-6);
    }

    #[test]
    fn load_image_rejects_wrong_dimensions() {
        let cfg = cfg4();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        write_ppm(&path, &Raster::filled(4, 6, [0, 0, 0])).unwrap();
        let err = load_image(&path, &cfg).unwrap_err();
        assert!(matches!(
            err,
            ImageError::WrongDimensions { expected_w: 4, expected_h: 4, found_w: 4, found_h: 6 }
        ));
    }

    #[test]
    fn rejects_non_p6_and_wide_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let p5 = dir.path().join("gray.pgm");
        std::fs::write(&p5, b"P5\n2 2\n255\n0000").unwrap();
        assert!(matches!(read_ppm(&p5), Err(ImageError::Unsupported(_))));

        let wide = dir.path().join("wide.ppm");
        let mut bytes = b"P6\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0; 6]);
        std::fs::write(&wide, &bytes).unwrap();
        assert!(matches!(read_ppm(&wide), Err(ImageError::Unsupported(m)) if m.contains("65535")));
    }

    #[test]
    fn rejects_truncated_and_padded_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[7; 10]); // needs 12
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_ppm(&path),
            Err(ImageError::Truncated { expected: 12, found: 10 })
        ));

        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[7; 15]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_ppm(&path), Err(ImageError::Malformed(_))));
    }
}
