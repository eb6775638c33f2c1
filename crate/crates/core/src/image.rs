//! Grayscale rasters shared by scenes and sensor frames.

use crate::error::{Error, Result};

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::shape(
                format!("{} pixels ({width}x{height})", width * height),
                format!("{} pixels", data.len()),
            ));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!(
                "pixel {i} has intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Builds an image from arbitrary values, clamping each into `[0, 1]`.
    /// NaN becomes 0.
    pub fn from_clamped(width: usize, height: usize, values: impl IntoIterator<Item = f64>) -> Self {
        let data: Vec<f32> = values
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) as f32 })
            .collect();
        assert_eq!(data.len(), width * height, "pixel count mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Nearest-neighbour resample of `self` to `fill` of the target raster,
    /// centered, with zero background.
    pub fn embed_centered(&self, width: usize, height: usize, fill: f64) -> GrayImage {
        let fill = fill.clamp(0.0, 1.0);
        // Preserve aspect ratio; the inner box is `fill` of the limiting axis.
        let scale = (width as f64 / self.width as f64).min(height as f64 / self.height as f64) * fill;
        let inner_w = ((self.width as f64 * scale).round() as usize).clamp(1, width);
        let inner_h = ((self.height as f64 * scale).round() as usize).clamp(1, height);
        let x0 = (width - inner_w) / 2;
        let y0 = (height - inner_h) / 2;
        let mut out = GrayImage::zeros(width, height);
        for iy in 0..inner_h {
            let sy = (((iy as f64 + 0.5) * self.height as f64 / inner_h as f64) as usize).min(self.height - 1);
            for ix in 0..inner_w {
                let sx = (((ix as f64 + 0.5) * self.width as f64 / inner_w as f64) as usize).min(self.width - 1);
                out.data[(y0 + iy) * width + x0 + ix] = self.get(sx, sy);
            }
        }
        out
    }
}
