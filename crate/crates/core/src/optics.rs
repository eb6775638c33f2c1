//! Linear forward model of an LCD scene imaged by a bare sensor.
//!
//! The scene plane sits `distance_mm` in front of the sensor, both centered on
//! the optical axis. Each scene pixel contributes to each sensor pixel with the
//! irradiance falloff `cos⁴θ / r²`. In coded-mask mode a binary transmission
//! pattern at `mask_gap_mm` in front of the sensor gates every scene-to-sensor
//! ray, so each scene point casts its own shifted shadow of the mask.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::mnist::LabeledDataset;
use crate::par;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    Geometric,
    CodedMask,
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferMode::Geometric => "geometric",
            TransferMode::CodedMask => "coded-mask",
        })
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(TransferMode::Geometric),
            "coded-mask" => Ok(TransferMode::CodedMask),
            other => Err(Error::Config(format!(
                "unknown capture mode {other:?} (expected geometric or coded-mask)"
            ))),
        }
    }
}

/// Capture geometry and acquisition settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureConfig {
    pub scene_width: usize,
    pub scene_height: usize,
    pub sensor_width: usize,
    pub sensor_height: usize,
    pub distance_mm: f64,
    /// Millimeters per displayed scene pixel.
    pub lcd_pitch_mm: f64,
    /// Millimeters per sensor pixel.
    pub sensor_pitch_mm: f64,
    /// Raw frames averaged per capture.
    pub n_avg: usize,
    /// Dimensionless gain standing in for exposure time.
    pub exposure_scale: f64,
    pub bit_depth: u32,
    pub mode: TransferMode,
    pub mask_seed: u64,
    pub mask_open_fraction: f64,
    pub mask_gap_mm: f64,
    pub mask_pitch_mm: f64,
    /// Fraction of the scene raster filled when embedding source images.
    pub fill_fraction: f64,
    /// Upper bound on the transfer matrix size.
    pub memory_budget_bytes: usize,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            scene_width: 28,
            scene_height: 28,
            sensor_width: 64,
            sensor_height: 48,
            distance_mm: 250.0,
            lcd_pitch_mm: 4.0,
            sensor_pitch_mm: 0.06,
            n_avg: 100,
            exposure_scale: 400.0,
            bit_depth: 8,
            mode: TransferMode::CodedMask,
            mask_seed: 0x6c65_6e73,
            mask_open_fraction: 0.5,
            mask_gap_mm: 5.0,
            mask_pitch_mm: 0.1,
            fill_fraction: 1.0,
            memory_budget_bytes: 2 << 30,
        }
    }
}

impl CaptureConfig {
    pub fn scene_pixels(&self) -> usize {
        self.scene_width * self.scene_height
    }

    pub fn sensor_pixels(&self) -> usize {
        self.sensor_width * self.sensor_height
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.scene_pixels() == 0 || self.sensor_pixels() == 0 {
            return fail("scene and sensor dimensions must be positive".into());
        }
        if !(self.distance_mm > 0.0) {
            return fail(format!("distance must be positive, got {}", self.distance_mm));
        }
        if self.n_avg == 0 {
            return fail("n_avg must be at least 1".into());
        }
        if !(1..=16).contains(&self.bit_depth) {
            return fail(format!("bit depth {} outside [1, 16]", self.bit_depth));
        }
        if !(self.lcd_pitch_mm > 0.0 && self.sensor_pitch_mm > 0.0) {
            return fail("pixel pitches must be positive".into());
        }
        if !(self.exposure_scale > 0.0) {
            return fail("exposure_scale must be positive".into());
        }
        if !(self.fill_fraction > 0.0 && self.fill_fraction <= 1.0) {
            return fail(format!("fill fraction {} outside (0, 1]", self.fill_fraction));
        }
        if self.mode == TransferMode::CodedMask {
            if !(self.mask_open_fraction > 0.0 && self.mask_open_fraction <= 1.0) {
                return fail(format!("mask open fraction {} outside (0, 1]", self.mask_open_fraction));
            }
            if !(self.mask_pitch_mm > 0.0) {
                return fail("mask pitch must be positive".into());
            }
            if !(self.mask_gap_mm >= 0.0 && self.mask_gap_mm < self.distance_mm) {
                return fail(format!(
                    "mask gap {} must lie in [0, distance)",
                    self.mask_gap_mm
                ));
            }
        }
        Ok(())
    }

    fn sensor_center(&self, s: usize) -> (f64, f64) {
        let (i, j) = (s % self.sensor_width, s / self.sensor_width);
        (
            (i as f64 - (self.sensor_width as f64 - 1.0) / 2.0) * self.sensor_pitch_mm,
            (j as f64 - (self.sensor_height as f64 - 1.0) / 2.0) * self.sensor_pitch_mm,
        )
    }

    fn scene_center(&self, p: usize) -> (f64, f64) {
        let (i, j) = (p % self.scene_width, p / self.scene_width);
        (
            (i as f64 - (self.scene_width as f64 - 1.0) / 2.0) * self.lcd_pitch_mm,
            (j as f64 - (self.scene_height as f64 - 1.0) / 2.0) * self.lcd_pitch_mm,
        )
    }

    /// Transmission of the mask cell containing lateral point `(x, y)` of the
    /// mask plane. Cells are anchored on the optical axis; each cell's state
    /// is a pure function of the mask seed and the cell index.
    pub fn mask_open(&self, x: f64, y: f64) -> bool {
        let cx = (x / self.mask_pitch_mm).floor() as i64;
        let cy = (y / self.mask_pitch_mm).floor() as i64;
        let h = seed::derive(self.mask_seed, &[cx as u64, cy as u64]);
        seed::unit_f64(h) < self.mask_open_fraction
    }

    fn weight(&self, s: usize, p: usize) -> f64 {
        let (sx, sy) = self.sensor_center(s);
        let (px, py) = self.scene_center(p);
        let (dx, dy, d) = (px - sx, py - sy, self.distance_mm);
        let r2 = dx * dx + dy * dy + d * d;
        // cos⁴θ / r² with cos θ = d / r
        let geometric = self.exposure_scale * (d * d) * (d * d) / (r2 * r2 * r2);
        match self.mode {
            TransferMode::Geometric => geometric,
            TransferMode::CodedMask => {
                let t = self.mask_gap_mm / d;
                if self.mask_open(sx + dx * t, sy + dy * t) {
                    geometric
                } else {
                    0.0
                }
            }
        }
    }
}

/// Built transfer operator. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    config: CaptureConfig,
    /// Column-major: column `p` holds the response of every sensor pixel to
    /// scene pixel `p`.
    columns: Vec<f64>,
}

pub fn build_sensor_model(config: &CaptureConfig) -> Result<SensorModel> {
    config.validate()?;
    let (n_sensor, n_scene) = (config.sensor_pixels(), config.scene_pixels());
    let bytes = n_sensor
        .checked_mul(n_scene)
        .and_then(|n| n.checked_mul(std::mem::size_of::<f64>()))
        .unwrap_or(usize::MAX);
    if bytes > config.memory_budget_bytes {
        return Err(Error::Capacity(format!(
            "transfer matrix {n_sensor}x{n_scene} needs {bytes} bytes, budget is {}; \
             reduce the sensor or scene resolution",
            config.memory_budget_bytes
        )));
    }
    let columns: Vec<Vec<f64>> = par::map_range(n_scene, |p| {
        (0..n_sensor).map(|s| config.weight(s, p)).collect()
    });
    Ok(SensorModel {
        config: config.clone(),
        columns: columns.concat(),
    })
}

/// How the noiseless linear output is brought into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scaling {
    #[default]
    Clip,
    /// Divide by the frame maximum (all-zero frames stay zero).
    MaxNormalize,
}

/// Per-raw-frame noise. `shot_scale = f64::INFINITY` disables shot noise
/// while keeping read noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub read_sigma: f64,
    pub shot_scale: f64,
    pub enabled: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            read_sigma: 0.01,
            shot_scale: 10_000.0,
            enabled: true,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.read_sigma >= 0.0) {
            return Err(Error::Config(format!("read_sigma {} must be >= 0", self.read_sigma)));
        }
        if self.enabled && !(self.shot_scale > 0.0) {
            return Err(Error::Config(format!("shot_scale {} must be > 0", self.shot_scale)));
        }
        Ok(())
    }
}

impl SensorModel {
    pub fn config(&self) -> &CaptureConfig {
        &self.config
    }

    /// Transfer entry for sensor pixel `s` and scene pixel `p`.
    pub fn entry(&self, s: usize, p: usize) -> f64 {
        self.columns[p * self.config.sensor_pixels() + s]
    }

    pub fn column(&self, p: usize) -> &[f64] {
        let n = self.config.sensor_pixels();
        &self.columns[p * n..(p + 1) * n]
    }

    fn check_scene(&self, scene: &GrayImage) -> Result<()> {
        let want = (self.config.scene_width, self.config.scene_height);
        if scene.dims() != want {
            return Err(Error::shape(
                format!("{}x{} scene", want.0, want.1),
                format!("{}x{}", scene.width(), scene.height()),
            ));
        }
        Ok(())
    }

    /// Unclipped linear response `A · vec(scene)`.
    pub fn apply(&self, scene: &GrayImage) -> Result<Vec<f64>> {
        self.check_scene(scene)?;
        Ok(self.apply_values(scene.data().iter().map(|&v| v as f64)))
    }

    /// `A · x` for an arbitrary real scene vector (no range restriction).
    pub fn apply_values(&self, scene: impl IntoIterator<Item = f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.config.sensor_pixels()];
        for (p, v) in scene.into_iter().enumerate() {
            if v != 0.0 {
                for (o, a) in out.iter_mut().zip(self.column(p)) {
                    *o += v * a;
                }
            }
        }
        out
    }

    fn frame(&self, values: impl IntoIterator<Item = f64>) -> GrayImage {
        GrayImage::from_clamped(self.config.sensor_width, self.config.sensor_height, values)
    }

    fn quantize(&self, v: f64) -> f64 {
        let levels = ((1u32 << self.config.bit_depth) - 1) as f64;
        (v.clamp(0.0, 1.0) * levels).round() / levels
    }
}

pub fn capture_noiseless(scene: &GrayImage, model: &SensorModel, scaling: Scaling) -> Result<GrayImage> {
    let y = model.apply(scene)?;
    Ok(match scaling {
        Scaling::Clip => model.frame(y),
        Scaling::MaxNormalize => {
            let max = y.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                model.frame(y.into_iter().map(|v| v / max))
            } else {
                model.frame(y)
            }
        }
    })
}

/// Noiseless capture followed by the sensor's quantization.
pub fn capture_quantized(scene: &GrayImage, model: &SensorModel) -> Result<GrayImage> {
    let y = model.apply(scene)?;
    Ok(model.frame(y.into_iter().map(|v| model.quantize(v))))
}

/// Averages `n_avg` noisy, clipped, quantized raw frames.
pub fn capture(scene: &GrayImage, model: &SensorModel, noise: &NoiseConfig, seed: u64) -> Result<GrayImage> {
    noise.validate()?;
    let y = model.apply(scene)?;
    let n_avg = model.config.n_avg;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let read_var = noise.read_sigma * noise.read_sigma;
    let sigmas: Vec<f64> = y
        .iter()
        .map(|&m| (m.max(0.0) / noise.shot_scale + read_var).sqrt())
        .collect();
    let mut acc = vec![0.0f64; y.len()];
    for _ in 0..n_avg {
        for ((a, &mean), &sigma) in acc.iter_mut().zip(&y).zip(&sigmas) {
            let v = if noise.enabled {
                let z: f64 = StandardNormal.sample(&mut rng);
                mean + sigma * z
            } else {
                mean
            };
            *a += model.quantize(v);
        }
    }
    Ok(model.frame(acc.into_iter().map(|a| a / n_avg as f64)))
}

/// Places a source image into the scene raster (centered, nearest-neighbour,
/// scaled to the configured fill fraction).
pub fn embed_scene(image: &GrayImage, config: &CaptureConfig) -> GrayImage {
    if image.dims() == (config.scene_width, config.scene_height) && config.fill_fraction == 1.0 {
        image.clone()
    } else {
        image.embed_centered(config.scene_width, config.scene_height, config.fill_fraction)
    }
}

/// Frame for source image `index` of a dataset; the capture seed is
/// `seed ^ index`, so any single frame can be regenerated on its own.
pub fn simulate_frame(
    image: &GrayImage,
    index: usize,
    model: &SensorModel,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<GrayImage> {
    let scene = embed_scene(image, model.config());
    capture(&scene, model, noise, seed ^ index as u64).map_err(|e| match e {
        Error::Shape { expected, got } => Error::Shape {
            expected,
            got: format!("{got} (image {index})"),
        },
        other => other,
    })
}

pub fn simulate_dataset(
    dataset: &LabeledDataset,
    model: &SensorModel,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<LabeledDataset> {
    let frames = par::map(dataset.images(), |i, img| simulate_frame(img, i, model, noise, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(frames, dataset.labels().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: TransferMode) -> CaptureConfig {
        CaptureConfig {
            scene_width: 4,
            scene_height: 3,
            sensor_width: 5,
            sensor_height: 4,
            lcd_pitch_mm: 3.0,
            sensor_pitch_mm: 0.05,
            mode,
            n_avg: 1,
            ..CaptureConfig::default()
        }
    }

    #[test]
    fn on_axis_single_pixel() {
        let d = 250.0;
        let cfg = CaptureConfig {
            scene_width: 1,
            scene_height: 1,
            sensor_width: 1,
            sensor_height: 1,
            distance_mm: d,
            exposure_scale: 1.0,
            mode: TransferMode::Geometric,
            ..CaptureConfig::default()
        };
        let m = build_sensor_model(&cfg).unwrap();
        assert!((m.entry(0, 0) - 1.0 / (d * d)).abs() < 1e-18);
    }

    #[test]
    fn off_axis_falloff() {
        let cfg = CaptureConfig {
            scene_width: 1,
            scene_height: 1,
            sensor_width: 3,
            sensor_height: 1,
            sensor_pitch_mm: 10.0,
            mode: TransferMode::Geometric,
            ..CaptureConfig::default()
        };
        let m = build_sensor_model(&cfg).unwrap();
        assert!(m.entry(1, 0) > m.entry(0, 0));
        assert!(m.entry(1, 0) > m.entry(2, 0));
        assert_eq!(m.entry(0, 0), m.entry(2, 0));
    }

    #[test]
    fn deterministic_build_both_modes() {
        for mode in [TransferMode::Geometric, TransferMode::CodedMask] {
            let cfg = tiny(mode);
            assert_eq!(build_sensor_model(&cfg).unwrap(), build_sensor_model(&cfg).unwrap());
        }
    }

    #[test]
    fn coded_mask_gates_geometric_entries() {
        let geo = build_sensor_model(&tiny(TransferMode::Geometric)).unwrap();
        let coded = build_sensor_model(&tiny(TransferMode::CodedMask)).unwrap();
        let (mut open, mut closed) = (0, 0);
        for (g, c) in geo.columns.iter().zip(&coded.columns) {
            if *c == 0.0 {
                closed += 1;
            } else {
                assert_eq!(g, c);
                open += 1;
            }
        }
        assert!(open > 0 && closed > 0);
    }

    #[test]
    fn memory_budget_enforced() {
        let cfg = CaptureConfig {
            memory_budget_bytes: 1024,
            ..CaptureConfig::default()
        };
        assert!(matches!(build_sensor_model(&cfg), Err(Error::Capacity(_))));
    }

    #[test]
    fn zero_scene_and_impulse() {
        let cfg = tiny(TransferMode::CodedMask);
        let m = build_sensor_model(&cfg).unwrap();
        let zero = GrayImage::zeros(4, 3);
        let f = capture_noiseless(&zero, &m, Scaling::Clip).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
        let mut data = vec![0.0; 12];
        data[7] = 1.0;
        let impulse = GrayImage::new(4, 3, data).unwrap();
        assert_eq!(m.apply(&impulse).unwrap(), m.column(7));
    }

    #[test]
    fn shape_mismatch() {
        let m = build_sensor_model(&tiny(TransferMode::Geometric)).unwrap();
        let wrong = GrayImage::zeros(3, 3);
        assert!(matches!(capture_noiseless(&wrong, &m, Scaling::Clip), Err(Error::Shape { .. })));
        assert!(matches!(capture(&wrong, &m, &NoiseConfig::default(), 0), Err(Error::Shape { .. })));
        // source images of other sizes are embedded first
        assert!(simulate_frame(&wrong, 4, &m, &NoiseConfig::default(), 0).is_ok());
    }

    #[test]
    fn max_normalize() {
        let m = build_sensor_model(&tiny(TransferMode::Geometric)).unwrap();
        let scene = GrayImage::new(4, 3, vec![0.5; 12]).unwrap();
        let f = capture_noiseless(&scene, &m, Scaling::MaxNormalize).unwrap();
        let max = f.data().iter().cloned().fold(0.0f32, f32::max);
        assert!((max - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noiseless_single_frame_matches_quantized() {
        let cfg = CaptureConfig {
            exposure_scale: 1.5e4,
            ..tiny(TransferMode::CodedMask)
        };
        let m = build_sensor_model(&cfg).unwrap();
        let scene = GrayImage::from_clamped(4, 3, (0..12).map(|i| i as f64 / 12.0));
        let a = capture(&scene, &m, &NoiseConfig::disabled(), 5).unwrap();
        let b = capture_quantized(&scene, &m).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().any(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn capture_is_seed_deterministic() {
        let cfg = CaptureConfig {
            exposure_scale: 1.5e4,
            n_avg: 4,
            ..tiny(TransferMode::CodedMask)
        };
        let m = build_sensor_model(&cfg).unwrap();
        let scene = GrayImage::new(4, 3, vec![0.3; 12]).unwrap();
        let n = NoiseConfig::default();
        assert_eq!(capture(&scene, &m, &n, 11).unwrap(), capture(&scene, &m, &n, 11).unwrap());
        assert_ne!(capture(&scene, &m, &n, 11).unwrap(), capture(&scene, &m, &n, 12).unwrap());
    }

    #[test]
    fn simulate_dataset_maps_in_order_and_regenerates_by_index() {
        let cfg = CaptureConfig {
            scene_width: 6,
            scene_height: 6,
            sensor_width: 5,
            sensor_height: 4,
            lcd_pitch_mm: 3.0,
            exposure_scale: 1.0e5,
            n_avg: 3,
            fill_fraction: 0.5,
            ..CaptureConfig::default()
        };
        let m = build_sensor_model(&cfg).unwrap();
        let images: Vec<GrayImage> = (0..3)
            .map(|k| GrayImage::from_clamped(3, 3, (0..9).map(|i| ((i + k) % 4) as f64 / 4.0)))
            .collect();
        let ds = LabeledDataset::new(images, vec![7, 1, 7]).unwrap();
        let noise = NoiseConfig::default();
        let out = simulate_dataset(&ds, &m, &noise, 42).unwrap();
        assert_eq!(out.labels(), &[7, 1, 7]);
        assert_eq!(out.dims(), Some((5, 4)));
        let again = simulate_frame(&ds.images()[2], 2, &m, &noise, 42).unwrap();
        assert_eq!(out.images()[2], again);
    }

    #[test]
    fn config_validation() {
        let bad = [
            CaptureConfig { distance_mm: 0.0, ..Default::default() },
            CaptureConfig { n_avg: 0, ..Default::default() },
            CaptureConfig { bit_depth: 17, ..Default::default() },
            CaptureConfig { bit_depth: 0, ..Default::default() },
            CaptureConfig { sensor_width: 0, ..Default::default() },
            CaptureConfig { mask_open_fraction: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(build_sensor_model(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
