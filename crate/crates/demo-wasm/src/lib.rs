//! WebAssembly bindings for the browser demo in `www/`.
//!
//! A [`Camera`] holds the default sensor model and a small visual vocabulary
//! fitted at start-up on frames of random pen strokes. The page draws a digit,
//! captures it, overlays detected keypoints and plots the visual-word
//! histogram.

use lensless_core::bovw::{kmeans_fit, Vocabulary};
use lensless_core::optics::{build_sensor_model, capture, embed_scene, CaptureConfig, NoiseConfig, SensorModel};
use lensless_core::seed::{splitmix64, unit_f64};
use lensless_core::surf::{detect_keypoints, extract_features, integral_image, DetectorParams, FeatureParams};
use lensless_core::{Error, GrayImage, Result};
use wasm_bindgen::prelude::*;

pub const DIGIT_SIDE: usize = 28;
const VOCAB_K: usize = 24;
const VOCAB_FRAMES: usize = 60;
const VOCAB_SEED: u64 = 17;

fn to_bytes(img: &GrayImage) -> Vec<u8> {
    img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() != width * height {
        return Err(Error::Shape {
            expected: format!("{width}x{height} = {} bytes", width * height),
            got: format!("{} bytes", bytes.len()),
        });
    }
    Ok(GrayImage::from_clamped(width, height, bytes.iter().map(|&b| b as f64 / 255.0)))
}

/// A 28×28 scene of a few thick random strokes.
fn stroke_scene(seed: u64) -> GrayImage {
    let mut state = seed;
    let mut next = || {
        state = splitmix64(state);
        unit_f64(state)
    };
    let strokes: Vec<[f64; 4]> = (0..2 + (next() * 3.0) as usize)
        .map(|_| [4.0 + next() * 20.0, 4.0 + next() * 20.0, 4.0 + next() * 20.0, 4.0 + next() * 20.0])
        .collect();
    let n = DIGIT_SIDE;
    GrayImage::from_clamped(
        n,
        n,
        (0..n * n).map(|p| {
            let (x, y) = ((p % n) as f64, (p / n) as f64);
            let d = strokes
                .iter()
                .map(|&[x0, y0, x1, y1]| {
                    let (dx, dy) = (x1 - x0, y1 - y0);
                    let t = (((x - x0) * dx + (y - y0) * dy) / (dx * dx + dy * dy).max(1e-9)).clamp(0.0, 1.0);
                    (x - x0 - t * dx).hypot(y - y0 - t * dy)
                })
                .fold(f64::INFINITY, f64::min);
            (2.0 - d).clamp(0.0, 1.0)
        }),
    )
}

/// Simulated camera plus demo vocabulary.
#[wasm_bindgen]
pub struct Camera {
    model: SensorModel,
    noise: NoiseConfig,
    features: FeatureParams,
    vocab: Vocabulary,
}

impl Camera {
    pub fn build() -> Result<Camera> {
        let config = CaptureConfig::default();
        let model = build_sensor_model(&config)?;
        let noise = NoiseConfig::default();
        let features = FeatureParams::default();
        let descriptors: Vec<_> = (0..VOCAB_FRAMES as u64)
            .map(|i| {
                let frame = capture(&stroke_scene(VOCAB_SEED ^ (i << 8)), &model, &noise, i)?;
                Ok(extract_features(&frame, &features))
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        let vocab = kmeans_fit(&descriptors, VOCAB_K, VOCAB_SEED, 30, 1e-4)?;
        Ok(Camera {
            model,
            noise,
            features,
            vocab,
        })
    }

    fn frame_dims(&self) -> (usize, usize) {
        let c = self.model.config();
        (c.sensor_width, c.sensor_height)
    }

    pub fn capture_digit(&self, digit: &[u8], noisy: bool, seed: u64) -> Result<Vec<u8>> {
        let scene = embed_scene(&from_bytes(DIGIT_SIDE, DIGIT_SIDE, digit)?, self.model.config());
        let noise = NoiseConfig {
            enabled: noisy,
            ..self.noise
        };
        Ok(to_bytes(&capture(&scene, &self.model, &noise, seed)?))
    }

    pub fn frame_keypoints(&self, frame: &[u8], threshold: f64) -> Result<Vec<f64>> {
        let (w, h) = self.frame_dims();
        let ii = integral_image(&from_bytes(w, h, frame)?);
        let params = DetectorParams {
            threshold,
            octaves: 3,
            ..DetectorParams::default()
        };
        Ok(detect_keypoints(&ii, &params)
            .iter()
            .flat_map(|k| [k.x, k.y, k.scale, k.response])
            .collect())
    }

    pub fn frame_histogram(&self, frame: &[u8]) -> Result<Vec<f64>> {
        let (w, h) = self.frame_dims();
        let img = from_bytes(w, h, frame)?;
        Ok(self.vocab.encode(&extract_features(&img, &self.features)).weights)
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Camera {
    #[wasm_bindgen(constructor)]
    pub fn new() -> std::result::Result<Camera, JsError> {
        Camera::build().map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.frame_dims().0
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.frame_dims().1
    }

    #[wasm_bindgen(getter)]
    pub fn words(&self) -> usize {
        self.vocab.k()
    }

    /// 28×28 grayscale bytes in, sensor frame bytes (row-major) out.
    pub fn capture(&self, digit: &[u8], noisy: bool, seed: u32) -> std::result::Result<Vec<u8>, JsError> {
        self.capture_digit(digit, noisy, seed as u64).map_err(js)
    }

    /// Fast-Hessian keypoints as flat `[x, y, scale, response, ...]`.
    pub fn keypoints(&self, frame: &[u8], threshold: f64) -> std::result::Result<Vec<f64>, JsError> {
        self.frame_keypoints(frame, threshold).map_err(js)
    }

    /// Normalized visual-word histogram of the frame's grid descriptors.
    pub fn histogram(&self, frame: &[u8]) -> std::result::Result<Vec<f64>, JsError> {
        self.frame_histogram(frame).map_err(js)
    }
}
