//! SURF features: integral images, Fast-Hessian interest points, dominant
//! orientation and 64-D descriptors, plus dense grid sampling.
//!
//! Conventions: `x` is the column, `y` the row, both in pixels with pixel
//! `(x, y)` covering `[x, x+1) × [y, y+1)`. Box filters read the integral
//! image, so every filter costs a constant number of lookups.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_3, TAU};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const DESCRIPTOR_LEN: usize = 64;

/// Scale of the smallest (9×9) box filter.
pub const BASE_SCALE: f64 = 1.2;
const SCALE_PER_FILTER_PIXEL: f64 = BASE_SCALE / 9.0;
const DXY_WEIGHT: f64 = 0.9;
const ORIENTATION_WINDOW: f64 = FRAC_PI_3;
const ORIENTATION_STEP: f64 = 0.15;

/// Cumulative sums with a zero first row and column:
/// `at(x, y)` is the sum of all pixels with column `< x` and row `< y`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<f64>,
}

pub fn integral_image(image: &GrayImage) -> IntegralImage {
    let (w, h) = image.dims();
    let stride = w + 1;
    let mut table = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0.0;
        for x in 0..w {
            row_sum += image.get(x, y) as f64;
            table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
        }
    }
    IntegralImage {
        width: w,
        height: h,
        table,
    }
}

impl IntegralImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.table[y * (self.width + 1) + x]
    }

    /// Sum over the `w × h` rectangle at `(x0, y0)`, clamped to the image.
    pub fn box_sum(&self, x0: i64, y0: i64, w: i64, h: i64) -> f64 {
        self.box_clamped(x0, y0, w, h).0
    }

    /// Clamped sum together with the number of in-image pixels it covers.
    fn box_clamped(&self, x0: i64, y0: i64, w: i64, h: i64) -> (f64, i64) {
        let (iw, ih) = (self.width as i64, self.height as i64);
        let x1 = x0.clamp(0, iw);
        let y1 = y0.clamp(0, ih);
        let x2 = x0.saturating_add(w.max(0)).clamp(0, iw);
        let y2 = y0.saturating_add(h.max(0)).clamp(0, ih);
        if x2 <= x1 || y2 <= y1 {
            return (0.0, 0);
        }
        let (x1, y1, x2, y2) = (x1 as usize, y1 as usize, x2 as usize, y2 as usize);
        let sum = self.at(x2, y2) - self.at(x1, y2) - self.at(x2, y1) + self.at(x1, y1);
        (sum, ((x2 - x1) * (y2 - y1)) as i64)
    }

    /// Clamped box mean scaled back to the full box area, so boxes that
    /// straddle the border read like zero-mean-extended content rather than a
    /// step down to zero.
    fn box_area_normalized(&self, x0: i64, y0: i64, w: i64, h: i64) -> f64 {
        match self.box_clamped(x0, y0, w, h) {
            (_, 0) => 0.0,
            (sum, n) => sum * (w * h) as f64 / n as f64,
        }
    }

    /// Horizontal Haar response (right half minus left half) of a `size`
    /// square centered at `(x, y)`.
    pub fn haar_x(&self, x: i64, y: i64, size: i64) -> f64 {
        let half = size / 2;
        let right = self.box_clamped(x, y - half, half, size);
        let left = self.box_clamped(x - half, y - half, half, size);
        if right.1 == 0 || left.1 == 0 {
            return 0.0;
        }
        let area = (half * size) as f64;
        (right.0 / right.1 as f64 - left.0 / left.1 as f64) * area
    }

    /// Vertical Haar response (bottom half minus top half).
    pub fn haar_y(&self, x: i64, y: i64, size: i64) -> f64 {
        let half = size / 2;
        let bottom = self.box_clamped(x - half, y, size, half);
        let top = self.box_clamped(x - half, y - half, size, half);
        if bottom.1 == 0 || top.1 == 0 {
            return 0.0;
        }
        let area = (half * size) as f64;
        (bottom.0 / bottom.1 as f64 - top.0 / top.1 as f64) * area
    }

    /// Area-normalized box-filter approximations of the second derivatives at
    /// pixel `(x, y)` for an odd filter size `filter` (a multiple of 3).
    pub fn hessian(&self, x: i64, y: i64, filter: i64) -> (f64, f64, f64) {
        let lobe = filter / 3;
        let border = (filter - 1) / 2;
        let b = |x0, y0, w, h| self.box_area_normalized(x0, y0, w, h);
        let dxx = b(x - border, y - lobe + 1, filter, 2 * lobe - 1)
            - 3.0 * b(x - lobe / 2, y - lobe + 1, lobe, 2 * lobe - 1);
        let dyy = b(x - lobe + 1, y - border, 2 * lobe - 1, filter)
            - 3.0 * b(x - lobe + 1, y - lobe / 2, 2 * lobe - 1, lobe);
        let dxy = b(x + 1, y - lobe, lobe, lobe) + b(x - lobe, y + 1, lobe, lobe)
            - b(x - lobe, y - lobe, lobe, lobe)
            - b(x + 1, y + 1, lobe, lobe);
        let inv_area = 1.0 / (filter * filter) as f64;
        (dxx * inv_area, dyy * inv_area, dxy * inv_area)
    }

    /// Fast-Hessian response `Dxx·Dyy − (0.9·Dxy)²` and the Laplacian sign.
    pub fn hessian_response(&self, x: i64, y: i64, filter: i64) -> (f64, i8) {
        let (dxx, dyy, dxy) = self.hessian(x, y, filter);
        let w = DXY_WEIGHT * dxy;
        (dxx * dyy - w * w, if dxx + dyy >= 0.0 { 1 } else { -1 })
    }
}

pub fn box_sum(ii: &IntegralImage, x0: i64, y0: i64, w: i64, h: i64) -> f64 {
    ii.box_sum(x0, y0, w, h)
}

/// Interest point. `scale` is in pixels (1.2 for the 9×9 filter).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    /// Radians in `[0, 2π)`.
    pub orientation: f64,
    pub response: f64,
    pub laplacian_sign: i8,
    pub(crate) octave: u8,
}

impl Keypoint {
    /// Upright keypoint with zero response, as produced by grid sampling.
    pub fn new(x: f64, y: f64, scale: f64) -> Self {
        Self {
            x,
            y,
            scale,
            orientation: 0.0,
            response: 0.0,
            laplacian_sign: 1,
            octave: 0,
        }
    }

    pub fn octave(&self) -> u8 {
        self.octave
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    /// Minimum area-normalized Hessian response.
    pub threshold: f64,
    pub octaves: usize,
    /// Filter sizes per octave; the inner `layers - 2` are searched.
    pub layers: usize,
    /// Sampling step of the first octave, doubled per octave.
    pub init_step: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            threshold: 1e-4,
            octaves: 4,
            layers: 4,
            init_step: 1,
        }
    }
}

/// Filter side length of `layer` in `octave` (both 0-based):
/// 9, 15, 21, 27 for the first octave, doubling the increment per octave.
pub fn filter_size(octave: usize, layer: usize) -> usize {
    3 * ((1 << (octave + 1)) * (layer + 1) + 1)
}

pub fn filter_scale(filter: f64) -> f64 {
    filter * SCALE_PER_FILTER_PIXEL
}

struct ResponseLayer {
    filter: i64,
    cols: usize,
    rows: usize,
    values: Vec<f64>,
    signs: Vec<i8>,
}

impl ResponseLayer {
    fn get(&self, c: usize, r: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

fn response_layer(ii: &IntegralImage, filter: usize, step: usize) -> ResponseLayer {
    let cols = ii.width.div_ceil(step);
    let rows = ii.height.div_ceil(step);
    let mut values = Vec::with_capacity(cols * rows);
    let mut signs = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let (v, s) = ii.hessian_response((c * step) as i64, (r * step) as i64, filter as i64);
            values.push(v);
            signs.push(s);
        }
    }
    ResponseLayer {
        filter: filter as i64,
        cols,
        rows,
        values,
        signs,
    }
}

fn solve3(h: [[f64; 3]; 3], g: [f64; 3]) -> Option<[f64; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
        - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = h;
        for row in 0..3 {
            m[row][k] = g[row];
        }
        let dk = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        *o = dk / det;
    }
    Some(out)
}

/// Quadratic fit of the response around a discrete maximum; returns the
/// (column, row, layer) offset in sample units, or zero if the fit is
/// degenerate or lands outside the sample cell.
fn refine(below: &ResponseLayer, mid: &ResponseLayer, above: &ResponseLayer, c: usize, r: usize) -> [f64; 3] {
    let v = mid.get(c, r);
    let dx = (mid.get(c + 1, r) - mid.get(c - 1, r)) / 2.0;
    let dy = (mid.get(c, r + 1) - mid.get(c, r - 1)) / 2.0;
    let ds = (above.get(c, r) - below.get(c, r)) / 2.0;
    let dxx = mid.get(c + 1, r) + mid.get(c - 1, r) - 2.0 * v;
    let dyy = mid.get(c, r + 1) + mid.get(c, r - 1) - 2.0 * v;
    let dss = above.get(c, r) + below.get(c, r) - 2.0 * v;
    let dxy = (mid.get(c + 1, r + 1) - mid.get(c - 1, r + 1) - mid.get(c + 1, r - 1) + mid.get(c - 1, r - 1)) / 4.0;
    let dxs = (above.get(c + 1, r) - above.get(c - 1, r) - below.get(c + 1, r) + below.get(c - 1, r)) / 4.0;
    let dys = (above.get(c, r + 1) - above.get(c, r - 1) - below.get(c, r + 1) + below.get(c, r - 1)) / 4.0;
    let h = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
    match solve3(h, [-dx, -dy, -ds]) {
        Some(o) if o.iter().all(|v| v.abs() < 0.5) => o,
        _ => [0.0; 3],
    }
}

fn is_strict_max(layers: [&ResponseLayer; 3], c: usize, r: usize, v: f64) -> bool {
    for (li, layer) in layers.iter().enumerate() {
        for rr in r - 1..=r + 1 {
            for cc in c - 1..=c + 1 {
                if li == 1 && rr == r && cc == c {
                    continue;
                }
                if layer.get(cc, rr) >= v {
                    return false;
                }
            }
        }
    }
    true
}

/// Descending response, then `(y, x)` ascending.
fn keypoint_order(a: &Keypoint, b: &Keypoint) -> Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
}

pub fn detect_keypoints(ii: &IntegralImage, params: &DetectorParams) -> Vec<Keypoint> {
    let (w, h) = (ii.width as i64, ii.height as i64);
    let mut found = Vec::new();
    if w < 9 || h < 9 || params.layers < 3 {
        return found;
    }
    for octave in 0..params.octaves {
        let step = params.init_step.max(1) << octave;
        let layers: Vec<ResponseLayer> = (0..params.layers)
            .map(|l| response_layer(ii, filter_size(octave, l), step))
            .collect();
        for i in 1..layers.len() - 1 {
            let (below, mid, above) = (&layers[i - 1], &layers[i], &layers[i + 1]);
            let border = (above.filter - 1) / 2;
            for r in 1..mid.rows.saturating_sub(1) {
                let y = (r * step) as i64;
                if y - border < 0 || y + border > h - 1 {
                    continue;
                }
                for c in 1..mid.cols.saturating_sub(1) {
                    let x = (c * step) as i64;
                    if x - border < 0 || x + border > w - 1 {
                        continue;
                    }
                    let v = mid.get(c, r);
                    if v <= params.threshold || !is_strict_max([below, mid, above], c, r, v) {
                        continue;
                    }
                    let o = refine(below, mid, above, c, r);
                    let filter = mid.filter as f64 + o[2] * (mid.filter - below.filter) as f64;
                    found.push(Keypoint {
                        x: ((c as f64 + o[0]) * step as f64).clamp(0.0, (w - 1) as f64),
                        y: ((r as f64 + o[1]) * step as f64).clamp(0.0, (h - 1) as f64),
                        scale: filter_scale(filter).max(BASE_SCALE),
                        orientation: 0.0,
                        response: v,
                        laplacian_sign: mid.signs[r * mid.cols + c],
                        octave: octave as u8,
                    });
                }
            }
        }
    }
    found.sort_by(keypoint_order);
    suppress_cross_octave(found)
}

/// Octaves overlap in filter size, so one blob can peak in two octaves.
/// Keep the stronger of two detections from different octaves that sit
/// within their mean scale of each other and within a factor 2 in scale.
fn suppress_cross_octave(sorted: Vec<Keypoint>) -> Vec<Keypoint> {
    let mut kept: Vec<Keypoint> = Vec::with_capacity(sorted.len());
    for kp in sorted {
        let duplicate = kept.iter().any(|k| {
            k.octave != kp.octave
                && (k.x - kp.x).hypot(k.y - kp.y) < 0.5 * (k.scale + kp.scale)
                && k.scale.max(kp.scale) < 2.0 * k.scale.min(kp.scale)
        });
        if !duplicate {
            kept.push(kp);
        }
    }
    kept
}

/// Upright keypoints on a regular lattice, every scale at every node, in
/// row-major node order with scales innermost.
///
/// Nodes sit at positive multiples of `step` and keep a margin of
/// `10 · max(scales)` from the border, clamped to one grid step so the grid
/// still spans small frames; every scale uses the same nodes.
pub fn grid_keypoints(width: usize, height: usize, step: usize, scales: &[f64]) -> Vec<Keypoint> {
    let step = step.max(1);
    let max_scale = scales.iter().cloned().fold(0.0, f64::max);
    if scales.is_empty() {
        return Vec::new();
    }
    let margin = (10.0 * max_scale).min(step as f64);
    let axis = |len: usize| -> Vec<usize> {
        (1..)
            .map(|k| k * step)
            .take_while(|&p| p < len)
            .filter(|&p| p as f64 >= margin && p as f64 <= (len - 1) as f64 - margin)
            .collect()
    };
    let (xs, ys) = (axis(width), axis(height));
    let mut out = Vec::with_capacity(xs.len() * ys.len() * scales.len());
    for &y in &ys {
        for &x in &xs {
            for &s in scales {
                out.push(Keypoint::new(x as f64, y as f64, s));
            }
        }
    }
    out
}

/// 64-D SURF descriptor, unit L2 norm or all zero for a flat patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn zero() -> Self {
        Descriptor([0.0; DESCRIPTOR_LEN])
    }

    pub fn values(&self) -> &[f32; DESCRIPTOR_LEN] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

fn gaussian(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn normalize_angle(a: f64) -> f64 {
    let a = a.rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Dominant direction of Gaussian-weighted Haar responses within radius
/// `6·scale`, found with a sliding `π/3` window.
pub fn dominant_orientation(ii: &IntegralImage, kp: &Keypoint) -> f64 {
    let s = kp.scale;
    let size = 4 * (s.round() as i64).max(1);
    let mut responses = Vec::with_capacity(113);
    for j in -6i64..=6 {
        for i in -6i64..=6 {
            if i * i + j * j >= 36 {
                continue;
            }
            let px = (kp.x + i as f64 * s).round() as i64;
            let py = (kp.y + j as f64 * s).round() as i64;
            let g = gaussian((i * i + j * j) as f64, 2.5);
            let rx = g * ii.haar_x(px, py, size);
            let ry = g * ii.haar_y(px, py, size);
            if rx != 0.0 || ry != 0.0 {
                responses.push((normalize_angle(ry.atan2(rx)), rx, ry));
            }
        }
    }
    let mut best = (0.0, 0.0, 0.0);
    let mut start = 0.0;
    while start < TAU {
        let end = start + ORIENTATION_WINDOW;
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(a, rx, ry) in &responses {
            let inside = if end < TAU {
                a >= start && a < end
            } else {
                a >= start || a < end - TAU
            };
            if inside {
                sx += rx;
                sy += ry;
            }
        }
        let mag = sx * sx + sy * sy;
        if mag > best.0 {
            best = (mag, sx, sy);
        }
        start += ORIENTATION_STEP;
    }
    if best.0 == 0.0 {
        0.0
    } else {
        normalize_angle(best.2.atan2(best.1))
    }
}

/// Describes `kp`. When `upright` is false the keypoint's orientation is
/// recomputed first; the returned keypoint carries the orientation used.
pub fn describe(ii: &IntegralImage, kp: &Keypoint, upright: bool) -> Result<(Keypoint, Descriptor)> {
    let s = kp.scale;
    if !(kp.x.is_finite() && kp.y.is_finite() && s.is_finite() && s > 0.0) {
        return Err(Error::Domain(format!("invalid keypoint {kp:?}")));
    }
    let reach = (10.0 * std::f64::consts::SQRT_2 + 1.0) * s;
    if kp.x + reach < 0.0
        || kp.y + reach < 0.0
        || kp.x - reach >= ii.width as f64
        || kp.y - reach >= ii.height as f64
    {
        return Err(Error::Domain(format!(
            "descriptor window of keypoint at ({}, {}) lies outside the {}x{} image",
            kp.x, kp.y, ii.width, ii.height
        )));
    }
    let mut kp = *kp;
    kp.orientation = if upright { 0.0 } else { dominant_orientation(ii, &kp) };
    let (si, co) = kp.orientation.sin_cos();
    let size = 2 * (s.round() as i64).max(1);
    let mut raw = [0.0f64; DESCRIPTOR_LEN];
    for sub_y in 0..4 {
        for sub_x in 0..4 {
            let mut acc = [0.0f64; 4];
            for l in 0..5 {
                for k in 0..5 {
                    let u = -10.0 + (sub_x * 5 + k) as f64 + 0.5;
                    let v = -10.0 + (sub_y * 5 + l) as f64 + 0.5;
                    let px = kp.x + s * (co * u - si * v);
                    let py = kp.y + s * (si * u + co * v);
                    let (ix, iy) = (px.round() as i64, py.round() as i64);
                    let dx = ii.haar_x(ix, iy, size);
                    let dy = ii.haar_y(ix, iy, size);
                    let g = gaussian(u * u + v * v, 3.3);
                    let rx = g * (co * dx + si * dy);
                    let ry = g * (-si * dx + co * dy);
                    acc[0] += rx;
                    acc[1] += rx.abs();
                    acc[2] += ry;
                    acc[3] += ry.abs();
                }
            }
            let base = (sub_y * 4 + sub_x) * 4;
            raw[base..base + 4].copy_from_slice(&acc);
        }
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = Descriptor::zero();
    if norm > 0.0 {
        for (o, v) in out.0.iter_mut().zip(raw) {
            *o = (v / norm) as f32;
        }
    }
    Ok((kp, out))
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMode {
    Grid { step: usize, scales: Vec<f64> },
    Detector(DetectorParams),
}

impl Default for FeatureMode {
    fn default() -> Self {
        FeatureMode::Grid {
            step: 8,
            scales: vec![1.6, 3.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub mode: FeatureMode,
    pub upright: bool,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            mode: FeatureMode::default(),
            upright: true,
        }
    }
}

/// Keypoints and descriptors of one image.
pub fn extract_features(image: &GrayImage, params: &FeatureParams) -> Vec<Descriptor> {
    let ii = integral_image(image);
    let kps = match &params.mode {
        FeatureMode::Grid { step, scales } => grid_keypoints(image.width(), image.height(), *step, scales),
        FeatureMode::Detector(d) => detect_keypoints(&ii, d),
    };
    kps.iter()
        .filter_map(|kp| describe(&ii, kp, params.upright).ok())
        .map(|(_, d)| d)
        .collect()
}

/// Little-endian `u32` count followed by `count × 64` little-endian `f32`.
pub fn write_descriptors(out: &mut impl Write, descriptors: &[Descriptor]) -> std::io::Result<()> {
    out.write_all(&(descriptors.len() as u32).to_le_bytes())?;
    for d in descriptors {
        for v in d.0 {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_descriptors(input: &mut impl Read) -> Result<Vec<Descriptor>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("descriptor dump: {e}")))?;
    decode_descriptors(&bytes)
}

pub fn decode_descriptors(bytes: &[u8]) -> Result<Vec<Descriptor>> {
    let count = bytes
        .get(..4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| Error::Truncated {
            what: "descriptor dump header".into(),
            needed: 4,
            available: bytes.len(),
        })?;
    let needed = 4 + count * DESCRIPTOR_LEN * 4;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: format!("descriptor dump ({count} descriptors)"),
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[4..needed]
        .chunks_exact(DESCRIPTOR_LEN * 4)
        .map(|chunk| {
            let mut d = Descriptor::zero();
            for (o, c) in d.0.iter_mut().zip(chunk.chunks_exact(4)) {
                *o = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
            d
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn image(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> GrayImage {
        GrayImage::from_clamped(w, h, (0..w * h).map(|i| f(i % w, i / w)))
    }

    #[test]
    fn integral_of_ones() {
        let ii = integral_image(&image(3, 3, |_, _| 1.0));
        assert_eq!(ii.at(3, 3), 9.0);
        assert_eq!(ii.at(0, 3), 0.0);
        assert_eq!(ii.at(2, 1), 2.0);
    }

    #[test]
    fn integral_single_corner_value() {
        let ii = integral_image(&image(4, 3, |x, y| if x == 0 && y == 0 { 0.5 } else { 0.0 }));
        for y in 1..=3 {
            for x in 1..=4 {
                assert_eq!(ii.at(x, y), 0.5);
            }
        }
        assert_eq!(ii.at(0, 2), 0.0);
    }

    #[test]
    fn box_sum_edges() {
        let img = image(5, 4, |x, y| ((x + 2 * y) % 7) as f64 / 7.0);
        let ii = integral_image(&img);
        let total: f64 = img.data().iter().map(|&v| v as f64).sum();
        assert!((ii.box_sum(0, 0, 5, 4) - total).abs() < 1e-9);
        assert_eq!(ii.box_sum(2, 1, 0, 3), 0.0);
        assert_eq!(ii.box_sum(10, 10, 3, 3), 0.0);
        assert!((ii.box_sum(-3, -3, 100, 100) - total).abs() < 1e-9);
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let ii = integral_image(&image(64, 64, |_, _| 0.4));
        assert!(detect_keypoints(&ii, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn tiny_image_has_no_keypoints() {
        let ii = integral_image(&image(8, 8, |x, _| x as f64 / 8.0));
        assert!(detect_keypoints(&ii, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn filter_sizes_follow_octave_doubling() {
        let sizes: Vec<usize> = (0..4).map(|l| filter_size(0, l)).collect();
        assert_eq!(sizes, vec![9, 15, 21, 27]);
        let sizes: Vec<usize> = (0..4).map(|l| filter_size(1, l)).collect();
        assert_eq!(sizes, vec![15, 27, 39, 51]);
        assert_eq!(filter_size(2, 0), 27);
        assert!((filter_scale(9.0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn grid_enumeration() {
        let kps = grid_keypoints(64, 48, 8, &[1.6]);
        let nodes: Vec<(f64, f64)> = kps.iter().map(|k| (k.x, k.y)).collect();
        let mut expected = Vec::new();
        for y in [8.0, 16.0, 24.0, 32.0] {
            for x in [8.0, 16.0, 24.0, 32.0, 40.0, 48.0] {
                expected.push((x, y));
            }
        }
        assert_eq!(nodes, expected);
        assert!(kps.iter().all(|k| k.orientation == 0.0 && k.response == 0.0));
        let two = grid_keypoints(64, 48, 8, &[1.6, 3.2]);
        assert_eq!(two.len(), 2 * kps.len());
        assert!(grid_keypoints(64, 48, 100, &[1.6]).is_empty());
        assert!(grid_keypoints(64, 48, 8, &[]).is_empty());
    }

    #[test]
    fn flat_patch_gives_zero_descriptor() {
        let ii = integral_image(&image(64, 64, |_, _| 0.7));
        let (_, d) = describe(&ii, &Keypoint::new(32.0, 32.0, 1.6), true).unwrap();
        assert!(d.is_zero());
        let (_, d) = describe(&ii, &Keypoint::new(2.0, 3.0, 3.2), false).unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn textured_descriptor_is_unit_norm() {
        let img = image(64, 64, |x, y| 0.5 + 0.4 * ((x as f64 * 0.7).sin() * (y as f64 * 0.3).cos()));
        let ii = integral_image(&img);
        for upright in [true, false] {
            let (_, d) = describe(&ii, &Keypoint::new(30.0, 33.0, 2.0), upright).unwrap();
            assert!((d.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn window_outside_image_is_domain_error() {
        let ii = integral_image(&image(16, 16, |x, _| x as f64 / 16.0));
        assert!(matches!(describe(&ii, &Keypoint::new(500.0, 8.0, 1.6), true), Err(Error::Domain(_))));
        assert!(matches!(describe(&ii, &Keypoint::new(f64::NAN, 8.0, 1.6), true), Err(Error::Domain(_))));
    }

    #[test]
    fn orientation_of_horizontal_gradient_points_along_x() {
        let img = image(64, 64, |x, _| x as f64 / 64.0);
        let ii = integral_image(&img);
        let o = dominant_orientation(&ii, &Keypoint::new(32.0, 32.0, 1.6));
        assert!(o < 0.05 || o > TAU - 0.05, "orientation {o}");
        let img = image(64, 64, |_, y| y as f64 / 64.0);
        let o = dominant_orientation(&integral_image(&img), &Keypoint::new(32.0, 32.0, 1.6));
        assert!((o - PI / 2.0).abs() < 0.05, "orientation {o}");
    }

    #[test]
    fn descriptor_dump_round_trip_and_truncation() {
        let mut d = Descriptor::zero();
        d.0[3] = 0.25;
        d.0[63] = -1.5;
        let mut buf = Vec::new();
        write_descriptors(&mut buf, &[d, Descriptor::zero()]).unwrap();
        assert_eq!(buf.len(), 4 + 2 * 256);
        assert_eq!(decode_descriptors(&buf).unwrap(), vec![d, Descriptor::zero()]);
        assert!(matches!(decode_descriptors(&buf[..100]), Err(Error::Truncated { .. })));
    }
}
