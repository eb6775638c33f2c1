//! Brute-force k-nearest-neighbour classification.

use crate::error::{Error, Result};
use crate::mnist::ClassId;

/// Stored training set. Vectors are kept at `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k_requested: usize,
    /// `k_requested` clamped to the training-set size.
    pub k: usize,
    pub dim: usize,
    /// `n × dim`, row-major.
    pub points: Vec<f32>,
    pub labels: Vec<ClassId>,
}

impl KnnModel {
    pub fn fit(x: &[Vec<f64>], y: &[ClassId], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        if x.is_empty() {
            return Err(Error::Domain("k-NN needs a nonempty training set".into()));
        }
        if x.len() != y.len() {
            return Err(Error::shape(format!("{} labels", x.len()), y.len()));
        }
        let dim = x[0].len();
        if let Some(r) = x.iter().find(|r| r.len() != dim) {
            return Err(Error::shape(format!("rows of length {dim}"), r.len()));
        }
        let k_eff = k.min(x.len());
        if k_eff < k {
            log::info!("k-NN: k={k} clamped to training size {k_eff}");
        }
        Ok(Self {
            k_requested: k,
            k: k_eff,
            dim,
            points: x.iter().flatten().map(|&v| v as f32).collect(),
            labels: y.to_vec(),
        })
    }

    /// Indices of the `k` nearest training points, nearest first; equal
    /// distances keep the lower index first.
    pub fn neighbours(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.dim {
            return Err(Error::shape(format!("dimension {}", self.dim), x.len()));
        }
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(self.k + 1);
        for (i, p) in self.points.chunks_exact(self.dim.max(1)).enumerate() {
            let d = sq_dist(p, x);
            if best.len() == self.k && d >= best[self.k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(self.k);
        }
        Ok(best.into_iter().map(|(_, i)| i).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<ClassId> {
        let mut counts = [0usize; 256];
        for i in self.neighbours(x)? {
            counts[self.labels[i] as usize] += 1;
        }
        // max_by_key keeps the last maximum, so scan from the top class down
        let best = (0..256).rev().max_by_key(|&c| counts[c]).unwrap_or(0);
        Ok(best as ClassId)
    }
}

#[inline]
fn sq_dist(p: &[f32], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (cp, cx) = (p.chunks_exact(4), x.chunks_exact(4));
    let (rp, rx) = (cp.remainder(), cx.remainder());
    for (a, b) in cp.zip(cx) {
        for l in 0..4 {
            let d = a[l] as f64 - b[l];
            acc[l] += d * d;
        }
    }
    for (l, (a, b)) in rp.iter().zip(rx).enumerate() {
        let d = *a as f64 - b;
        acc[l] += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// One-shot classification of `x` against a training set. Returns the class
/// and the `k` actually used.
pub fn knn_classify(x_train: &[Vec<f64>], y_train: &[ClassId], x: &[f64], k: usize) -> Result<(ClassId, usize)> {
    let m = KnnModel::fit(x_train, y_train, k)?;
    Ok((m.predict(x)?, m.k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_with_k1() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 5.0]];
        assert_eq!(knn_classify(&x, &[3, 7, 1], &[1.0, 1.0], 1).unwrap(), (7, 1));
    }

    #[test]
    fn majority_and_ties() {
        let x = vec![vec![0.0], vec![0.1], vec![0.2], vec![9.0]];
        assert_eq!(knn_classify(&x, &[4, 4, 2, 2], &[0.0], 3).unwrap().0, 4);
        // two votes each: lowest class wins
        assert_eq!(knn_classify(&x, &[4, 2, 4, 2], &[0.0], 4).unwrap().0, 2);
        // equidistant neighbours: the lower index is taken
        let x = vec![vec![-1.0], vec![1.0]];
        let m = KnnModel::fit(&x, &[5, 6], 1).unwrap();
        assert_eq!(m.neighbours(&[0.0]).unwrap(), vec![0]);
    }

    #[test]
    fn k_is_clamped() {
        let x = vec![vec![0.0], vec![1.0]];
        let (c, k) = knn_classify(&x, &[1, 1], &[0.3], 10).unwrap();
        assert_eq!((c, k), (1, 2));
        assert!(matches!(knn_classify(&[], &[], &[0.0], 1), Err(Error::Domain(_))));
    }
}
