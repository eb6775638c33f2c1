//! Visual vocabularies and bag-of-visual-words encoding.
//!
//! The vocabulary is fitted by k-means (k-means++ seeding, Lloyd iterations)
//! over SURF descriptors. Each image is then encoded as the L1-normalized
//! histogram of its descriptors' nearest centroids.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::surf::{Descriptor, DESCRIPTOR_LEN};

type Vector = [f64; DESCRIPTOR_LEN];

fn widen(d: &Descriptor) -> Vector {
    let mut out = [0.0; DESCRIPTOR_LEN];
    for (o, &v) in out.iter_mut().zip(d.values()) {
        *o = v as f64;
    }
    out
}

/// Squared Euclidean distance with a fixed summation order.
#[inline]
fn sq_dist(a: &Vector, b: &Vector) -> f64 {
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        for l in 0..4 {
            let d = ca[l] - cb[l];
            acc[l] += d * d;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Index of the nearest centroid (lowest index on ties) and its distance.
#[inline]
fn nearest(x: &Vector, centroids: &[Vector]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Result of a k-means run, including the inertia after every assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vector>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after the initial assignment and after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

fn count_distinct(points: &[Vector]) -> usize {
    points
        .iter()
        .map(|p| p.map(f64::to_bits))
        .collect::<HashSet<_>>()
        .len()
}

fn kmeans_plus_plus(points: &[Vector], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
        }
        // Distinct points remain while fewer than k centroids exist, so some
        // weight is positive.
        let c = points[pick.expect("a point with positive distance remains")];
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all(points: &[Vector], centroids: &[Vector]) -> (Vec<usize>, Vec<f64>) {
    const CHUNK: usize = 1024;
    let chunks: Vec<&[Vector]> = points.chunks(CHUNK).collect();
    let parts = par::map(&chunks, |_, chunk| {
        chunk.iter().map(|p| nearest(p, centroids)).collect::<Vec<_>>()
    });
    parts.into_iter().flatten().unzip()
}

/// Lloyd's algorithm with k-means++ seeding; `k = 1` is allowed here.
///
/// Stops when the relative inertia improvement drops below `rel_tol` or after
/// `max_iters` iterations. Empty clusters are reseeded at the point farthest
/// from its centroid. Panics if inertia ever increases.
pub fn kmeans(points: &[Vector], k: usize, seed: u64, max_iters: usize, rel_tol: f64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let distinct = count_distinct(points);
    if distinct < k {
        return Err(Error::Capacity(format!(
            "k-means needs at least {k} distinct points, got {distinct} (of {})",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let (mut labels, mut dists) = assign_all(points, &centroids);
    let mut inertia: f64 = dists.iter().sum();
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![[0.0f64; DESCRIPTOR_LEN]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut empty = Vec::new();
        for j in 0..k {
            if counts[j] == 0 {
                empty.push(j);
            } else {
                let n = counts[j] as f64;
                for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                    *c = s / n;
                }
            }
        }
        if !empty.is_empty() {
            let mut d: Vec<f64> = points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| sq_dist(p, &centroids[l]))
                .collect();
            for j in empty {
                let (far, _) = d
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
                centroids[j] = points[far];
                d[far] = 0.0;
            }
        }
        (labels, dists) = assign_all(points, &centroids);
        let next: f64 = dists.iter().sum();
        assert!(
            next <= inertia * (1.0 + 1e-9) + 1e-12,
            "k-means inertia increased from {inertia} to {next} at iteration {iterations}"
        );
        history.push(next);
        let improvement = if inertia > 0.0 { (inertia - next) / inertia } else { 0.0 };
        inertia = next;
        if improvement < rel_tol {
            break;
        }
    }
    Ok(KMeansFit {
        centroids,
        inertia,
        iterations,
        inertia_history: history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub n_images_used: usize,
    pub seed: u64,
    pub iterations_run: usize,
    pub final_inertia: f64,
}

/// K centroids in descriptor space (stored at `f32` precision).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    centroids: Vec<Vector>,
    pub meta: TrainingMeta,
}

/// Normalized word histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BoWVector {
    pub weights: Vec<f64>,
}

impl BoWVector {
    pub fn l1(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn kmeans_fit(
    descriptors: &[Descriptor],
    k: usize,
    seed: u64,
    max_iters: usize,
    rel_tol: f64,
) -> Result<Vocabulary> {
    if k < 2 {
        return Err(Error::Domain(format!("vocabulary needs K >= 2, got {k}")));
    }
    let points: Vec<Vector> = descriptors.iter().map(widen).collect();
    let fit = kmeans(&points, k, seed, max_iters, rel_tol)?;
    log::debug!(
        "vocabulary K={k}: {} descriptors, {} iterations, inertia {:.6}",
        descriptors.len(),
        fit.iterations,
        fit.inertia
    );
    Vocabulary::from_centroids(
        fit.centroids,
        TrainingMeta {
            n_images_used: 0,
            seed,
            iterations_run: fit.iterations,
            final_inertia: fit.inertia,
        },
    )
}

impl Vocabulary {
    /// Rounds centroids to `f32`, the precision of the vocabulary file.
    pub fn from_centroids(centroids: Vec<Vector>, meta: TrainingMeta) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::Domain(format!("vocabulary needs K >= 2, got {}", centroids.len())));
        }
        let centroids: Vec<Vector> = centroids
            .into_iter()
            .map(|c| c.map(|v| v as f32 as f64))
            .collect();
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("vocabulary has non-finite centroids".into()));
        }
        if count_distinct(&centroids) != centroids.len() {
            return Err(Error::Domain("vocabulary has duplicate centroids".into()));
        }
        Ok(Self { centroids, meta })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[Vector] {
        &self.centroids
    }

    pub fn assign(&self, d: &Descriptor) -> usize {
        nearest(&widen(d), &self.centroids).0
    }

    pub fn encode(&self, descriptors: &[Descriptor]) -> BoWVector {
        let mut weights = vec![0.0; self.k()];
        if descriptors.is_empty() {
            return BoWVector { weights };
        }
        for d in descriptors {
            weights[self.assign(d)] += 1.0;
        }
        let n = descriptors.len() as f64;
        weights.iter_mut().for_each(|w| *w /= n);
        BoWVector { weights }
    }

    /// `K=<k> dim=64 seed=<seed>` manifest line, then `K × 64` little-endian
    /// `f32` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("K={} dim={DESCRIPTOR_LEN} seed={}\n", self.k(), self.meta.seed).into_bytes();
        for c in &self.centroids {
            for &v in c {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("vocabulary: missing manifest line".into()))?;
        let manifest = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Format("vocabulary: manifest is not UTF-8".into()))?;
        let (mut k, mut dim, mut seed) = (None, None, None);
        for field in manifest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("vocabulary: bad manifest field {field:?}")))?;
            let bad = || Error::Format(format!("vocabulary: bad value in {field:?}"));
            match key {
                "K" => k = Some(value.parse::<usize>().map_err(|_| bad())?),
                "dim" => dim = Some(value.parse::<usize>().map_err(|_| bad())?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad())?),
                _ => return Err(Error::Format(format!("vocabulary: unknown manifest key {key:?}"))),
            }
        }
        let (k, dim, seed) = match (k, dim, seed) {
            (Some(k), Some(d), Some(s)) => (k, d, s),
            _ => return Err(Error::Format("vocabulary: manifest needs K, dim and seed".into())),
        };
        if dim != DESCRIPTOR_LEN {
            return Err(Error::Format(format!("vocabulary: dim={dim}, expected {DESCRIPTOR_LEN}")));
        }
        let body = &bytes[nl + 1..];
        let needed = k * DESCRIPTOR_LEN * 4;
        if body.len() != needed {
            return Err(Error::Truncated {
                what: format!("vocabulary centroids (K={k})"),
                needed,
                available: body.len(),
            });
        }
        let centroids = body
            .chunks_exact(DESCRIPTOR_LEN * 4)
            .map(|chunk| {
                let mut c = [0.0; DESCRIPTOR_LEN];
                for (o, b) in c.iter_mut().zip(chunk.chunks_exact(4)) {
                    *o = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
                }
                c
            })
            .collect();
        Vocabulary::from_centroids(
            centroids,
            TrainingMeta {
                n_images_used: 0,
                seed,
                iterations_run: 0,
                final_inertia: f64::NAN,
            },
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            Error::Truncated { what, needed, available } => Error::Truncated {
                what: format!("{}: {what}", path.display()),
                needed,
                available,
            },
            other => other,
        })
    }
}

pub fn assign(vocab: &Vocabulary, d: &Descriptor) -> usize {
    vocab.assign(d)
}

pub fn encode(vocab: &Vocabulary, descriptors: &[Descriptor]) -> BoWVector {
    vocab.encode(descriptors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embed(values: &[f32]) -> Descriptor {
        let mut d = Descriptor::zero();
        d.0[..values.len()].copy_from_slice(values);
        d
    }

    fn points_1d(xs: &[f32]) -> Vec<Vector> {
        xs.iter().map(|&x| widen(&embed(&[x]))).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = points_1d(&[1.0, 2.0, 6.0, 7.0]);
        let fit = kmeans(&pts, 1, 3, 10, 1e-9).unwrap();
        assert_eq!(fit.centroids[0][0], 4.0);
        assert!(fit.centroids[0][1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_cover_has_zero_inertia() {
        let pts = points_1d(&[0.5, 3.0, -2.0]);
        let fit = kmeans(&pts, 3, 11, 10, 1e-9).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut cs: Vec<f64> = fit.centroids.iter().map(|c| c[0]).collect();
        cs.sort_by(f64::total_cmp);
        assert_eq!(cs, vec![-2.0, 0.5, 3.0]);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = points_1d(&[1.0, 1.0, 1.0, 2.0]);
        assert!(matches!(kmeans(&pts, 3, 0, 10, 1e-9), Err(Error::Capacity(_))));
        let ds = vec![embed(&[1.0]); 5];
        assert!(matches!(kmeans_fit(&ds, 2, 0, 10, 1e-9), Err(Error::Capacity(_))));
        assert!(matches!(kmeans_fit(&ds, 1, 0, 10, 1e-9), Err(Error::Domain(_))));
    }

    #[test]
    fn assign_exact_match_and_tie() {
        let cents: Vec<Vector> = (0..6).map(|i| widen(&embed(&[i as f32 * 2.0]))).collect();
        let vocab = Vocabulary::from_centroids(
            cents,
            TrainingMeta { n_images_used: 0, seed: 0, iterations_run: 0, final_inertia: 0.0 },
        )
        .unwrap();
        assert_eq!(vocab.assign(&embed(&[6.0])), 3);
        // equidistant from centroids 1 (2.0) and 2 (4.0)
        assert_eq!(vocab.assign(&embed(&[3.0])), 1);
        // centroids 1 and 4 placed symmetrically around the query in 2-D
        let mut cents: Vec<Vector> = (0..5).map(|i| widen(&embed(&[100.0 + i as f32, 50.0]))).collect();
        cents[1] = widen(&embed(&[1.0, 0.0]));
        cents[4] = widen(&embed(&[-1.0, 0.0]));
        let vocab = Vocabulary::from_centroids(
            cents,
            TrainingMeta { n_images_used: 0, seed: 0, iterations_run: 0, final_inertia: 0.0 },
        )
        .unwrap();
        assert_eq!(vocab.assign(&embed(&[0.0, 0.0])), 1);
    }

    fn two_word_vocab() -> Vocabulary {
        Vocabulary::from_centroids(
            vec![widen(&embed(&[0.0])), widen(&embed(&[1.0])), widen(&embed(&[2.0])), widen(&embed(&[3.0]))],
            TrainingMeta { n_images_used: 0, seed: 0, iterations_run: 0, final_inertia: 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn encode_histograms() {
        let v = two_word_vocab();
        let ds = vec![embed(&[2.1]); 4];
        assert_eq!(v.encode(&ds).weights, vec![0.0, 0.0, 1.0, 0.0]);
        let ds = vec![embed(&[0.1]), embed(&[-0.2]), embed(&[0.0]), embed(&[0.9])];
        assert_eq!(v.encode(&ds).weights, vec![0.75, 0.25, 0.0, 0.0]);
        assert_eq!(v.encode(&[]).weights, vec![0.0; 4]);
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = two_word_vocab();
        let bytes = v.to_bytes();
        assert!(bytes.starts_with(b"K=4 dim=64 seed=0\n"));
        let back = Vocabulary::from_bytes(&bytes).unwrap();
        assert_eq!(back.centroids(), v.centroids());
        assert!(matches!(Vocabulary::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(Vocabulary::from_bytes(b"K=2 dim=32 seed=1\n"), Err(Error::Format(_))));
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // k-means++ cannot produce an empty cluster on its own, so drive the
        // update through a fit where two far outliers pull centroids.
        let mut xs: Vec<f32> = (0..20).map(|i| i as f32 * 0.01).collect();
        xs.extend([50.0, 50.5, 100.0]);
        let fit = kmeans(&points_1d(&xs), 3, 5, 50, 0.0).unwrap();
        assert!(fit.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        let mut cs: Vec<f64> = fit.centroids.iter().map(|c| c[0]).collect();
        cs.sort_by(f64::total_cmp);
        assert!((cs[2] - 100.0).abs() < 1e-9, "{cs:?}");
    }
}
