//! Soft-margin support vector machines trained by sequential minimal
//! optimization, plus the one-vs-one multiclass reduction.
//!
//! The solver works on the dual
//!
//! ```text
//! max  Σ α_i − ½ Σ α_i α_j y_i y_j k(x_i, x_j)
//! s.t. 0 ≤ α_i ≤ C,  Σ α_i y_i = 0
//! ```
//!
//! choosing the maximal violating pair at every step and updating it in
//! closed form. Scans run in index order and ties keep the lowest index, so
//! training is deterministic.

use crate::error::{Error, Result};
use crate::mnist::ClassId;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    /// Kernel value from a dot product and the two squared norms.
    #[inline]
    fn from_dot(self, dot: f64, aa: f64, bb: f64) -> f64 {
        match self {
            Kernel::Linear => dot,
            Kernel::Rbf { gamma } => (-gamma * (aa + bb - 2.0 * dot).max(0.0)).exp(),
        }
    }

    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        self.from_dot(dot(a, b), dot(a, a), dot(b, b))
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel::Linear => f.write_str("linear"),
            Kernel::Rbf { gamma } => write!(f, "rbf(gamma={gamma})"),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Dense symmetric matrix of pairwise dot products, row-major `n × n`.
pub(crate) fn dot_gram(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let upper = par::map_range(n, |i| (i..n).map(|j| dot(&x[i], &x[j])).collect::<Vec<_>>());
    let mut g = vec![0.0; n * n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            g[i * n + i + off] = v;
            g[(i + off) * n + i] = v;
        }
    }
    g
}

/// Turns a dot-product Gram matrix into the kernel matrix in place.
pub(crate) fn apply_kernel(g: &mut [f64], n: usize, kernel: Kernel) {
    if let Kernel::Linear = kernel {
        return;
    }
    let diag: Vec<f64> = (0..n).map(|i| g[i * n + i]).collect();
    for (i, row) in g.chunks_exact_mut(n).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = kernel.from_dot(*v, diag[i], diag[j]);
        }
    }
}

/// Kernel matrix restricted to a subset of the points it was built on.
pub(crate) struct GramView<'a> {
    pub gram: &'a [f64],
    pub n: usize,
    pub index: &'a [usize],
}

impl GramView<'_> {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn row(&self, i: usize, out: &mut [f64]) {
        let base = &self.gram[self.index[i] * self.n..][..self.n];
        for (o, &t) in out.iter_mut().zip(self.index) {
            *o = base[t];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    /// Stop once the maximal KKT violation falls below this.
    pub tol: f64,
    /// Pair-update cap; 0 picks `max(100_000, 100 n)`.
    pub max_iter: usize,
    /// Record the dual objective after every pair update.
    pub trace_objective: bool,
}

impl SvmParams {
    pub fn new(c: f64, kernel: Kernel) -> Self {
        Self {
            c,
            kernel,
            tol: 1e-3,
            max_iter: 0,
            trace_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SmoDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// `max_{I_up} −y∇ − min_{I_low} −y∇` at exit.
    pub max_violation: f64,
    pub dual_objective: f64,
    pub objective_trace: Vec<f64>,
}

pub(crate) struct SmoSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub diagnostics: SmoDiagnostics,
}

fn dual_objective(alpha: &[f64], grad: &[f64]) -> f64 {
    // with ∇ = Qα − 1:  Σα − ½ αᵀQα = ½ Σ α_i (1 − ∇_i)
    0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (1.0 - g)).sum::<f64>()
}

pub(crate) fn smo(k: &GramView<'_>, y: &[i8], params: &SvmParams) -> SmoSolution {
    let n = k.len();
    let c = params.c;
    let max_iter = if params.max_iter == 0 {
        100_000usize.max(100 * n)
    } else {
        params.max_iter
    };
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut ki = vec![0.0; n];
    let mut kj = vec![0.0; n];
    let mut diag = SmoDiagnostics::default();
    loop {
        let (mut gmax, mut gmin) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -yf[t] * grad[t];
            let up = if y[t] > 0 { alpha[t] < c } else { alpha[t] > 0.0 };
            let low = if y[t] > 0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        diag.max_violation = (gmax - gmin).max(0.0);
        if i == usize::MAX || j == usize::MAX || gmax - gmin < params.tol {
            diag.converged = true;
            break;
        }
        if diag.iterations >= max_iter {
            break;
        }
        diag.iterations += 1;

        k.row(i, &mut ki);
        k.row(j, &mut kj);
        let quad = match ki[i] + kj[j] - 2.0 * ki[j] {
            q if q > 0.0 => q,
            _ => 1e-12,
        };
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = sum;
                }
                if ai < 0.0 {
                    ai = 0.0;
                    aj = sum;
                }
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = ((ai - old_i) * yf[i], (aj - old_j) * yf[j]);
        for t in 0..n {
            grad[t] += yf[t] * (ki[t] * di + kj[t] * dj);
        }
        if params.trace_objective {
            diag.objective_trace.push(dual_objective(&alpha, &grad));
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = yf[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    diag.dual_objective = dual_objective(&alpha, &grad);
    SmoSolution {
        alpha,
        rho,
        diagnostics: diag,
    }
}

/// A trained two-class machine; only points with `α > 0` are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmBinaryModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub signs: Vec<i8>,
    pub bias: f64,
    pub kernel: Kernel,
    pub c: f64,
    pub diagnostics: SmoDiagnostics,
}

fn check_params(c: f64, kernel: Kernel) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("SVM C must be positive and finite, got {c}")));
    }
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("rbf gamma must be positive and finite, got {gamma}")));
        }
    }
    Ok(())
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    let dim = x.first().map_or(0, Vec::len);
    if let Some(bad) = x.iter().find(|r| r.len() != dim) {
        return Err(Error::shape(format!("rows of length {dim}"), format!("a row of length {}", bad.len())));
    }
    Ok(dim)
}

pub fn svm_train_binary(x: &[Vec<f64>], y: &[i8], params: &SvmParams) -> Result<SvmBinaryModel> {
    check_params(params.c, params.kernel)?;
    check_rows(x)?;
    if x.len() != y.len() {
        return Err(Error::shape(format!("{} labels", x.len()), y.len()));
    }
    if let Some(v) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(Error::Domain(format!("binary labels must be ±1, got {v}")));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(Error::Domain("binary SVM needs both classes present".into()));
    }
    let n = x.len();
    let mut gram = dot_gram(x);
    apply_kernel(&mut gram, n, params.kernel);
    let index: Vec<usize> = (0..n).collect();
    let sol = smo(&GramView { gram: &gram, n, index: &index }, y, params);
    let keep: Vec<usize> = (0..n).filter(|&t| sol.alpha[t] > 0.0).collect();
    Ok(SvmBinaryModel {
        support_vectors: keep.iter().map(|&t| x[t].clone()).collect(),
        alphas: keep.iter().map(|&t| sol.alpha[t]).collect(),
        signs: keep.iter().map(|&t| y[t]).collect(),
        bias: -sol.rho,
        kernel: params.kernel,
        c: params.c,
        diagnostics: sol.diagnostics,
    })
}

pub fn svm_predict_binary(model: &SvmBinaryModel, x: &[f64]) -> Result<f64> {
    if let Some(sv) = model.support_vectors.first() {
        if sv.len() != x.len() {
            return Err(Error::shape(format!("dimension {}", sv.len()), x.len()));
        }
    }
    let s: f64 = model
        .support_vectors
        .iter()
        .zip(&model.alphas)
        .zip(&model.signs)
        .map(|((sv, a), &y)| a * y as f64 * model.kernel.eval(sv, x))
        .sum();
    Ok(s + model.bias)
}

/// One-vs-one machines sharing a pool of support vectors. Parameters are
/// kept at `f32` precision, the precision of model bundles, so a saved model
/// predicts exactly like the in-memory one.
#[derive(Debug, Clone, PartialEq)]
pub struct OvoSvm {
    pub kernel: Kernel,
    pub c: f64,
    pub dim: usize,
    pub classes: Vec<ClassId>,
    /// `n_sv × dim`, row-major.
    pub support_vectors: Vec<f32>,
    /// `n_pairs × n_sv`: `α y` of each pool vector in each pair machine.
    pub coef: Vec<f32>,
    pub bias: Vec<f32>,
    /// Pairs whose solver hit the iteration cap.
    pub unconverged_pairs: usize,
}

/// Class pairs `(a, b)` with `a` before `b` in `classes`; `a` is the positive side.
pub fn class_pairs(n_classes: usize) -> Vec<(usize, usize)> {
    (0..n_classes)
        .flat_map(|a| (a + 1..n_classes).map(move |b| (a, b)))
        .collect()
}

impl OvoSvm {
    pub fn n_support(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.support_vectors.len() / self.dim
        }
    }

    /// Signed score of every pair machine, in [`class_pairs`] order.
    pub fn pair_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::shape(format!("dimension {}", self.dim), x.len()));
        }
        let xx = dot(x, x);
        let kvals: Vec<f64> = self
            .support_vectors
            .chunks_exact(self.dim.max(1))
            .map(|sv| {
                let sv: Vec<f64> = sv.iter().map(|&v| v as f64).collect();
                self.kernel.from_dot(dot(&sv, x), dot(&sv, &sv), xx)
            })
            .collect();
        let n_sv = kvals.len();
        Ok(self
            .bias
            .iter()
            .enumerate()
            .map(|(p, &b)| {
                let row = &self.coef[p * n_sv..(p + 1) * n_sv];
                row.iter().zip(&kvals).map(|(&c, k)| c as f64 * k).sum::<f64>() + b as f64
            })
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<ClassId> {
        let scores = self.pair_scores(x)?;
        Ok(self.classes[ovo_vote(self.classes.len(), &scores)])
    }
}

/// Majority vote over pair scores. Ties go to the larger summed signed score
/// in the class's favour, then to the lowest class position.
pub fn ovo_vote(n_classes: usize, scores: &[f64]) -> usize {
    let mut votes = vec![0usize; n_classes];
    let mut margin = vec![0.0f64; n_classes];
    for ((a, b), &s) in class_pairs(n_classes).into_iter().zip(scores) {
        if s > 0.0 {
            votes[a] += 1;
        } else {
            votes[b] += 1;
        }
        margin[a] += s;
        margin[b] -= s;
    }
    let mut best = 0;
    for c in 1..n_classes {
        if votes[c] > votes[best] || (votes[c] == votes[best] && margin[c] > margin[best]) {
            best = c;
        }
    }
    best
}

/// Trains one machine per class pair on a precomputed kernel matrix over `x`.
pub(crate) fn ovo_train_gram(
    x: &[Vec<f64>],
    labels: &[ClassId],
    classes: &[ClassId],
    gram: &[f64],
    params: &SvmParams,
) -> Result<OvoSvm> {
    check_params(params.c, params.kernel)?;
    let n = x.len();
    let dim = check_rows(x)?;
    let pairs = class_pairs(classes.len());
    let solutions = par::map(&pairs, |_, &(a, b)| {
        let (ca, cb) = (classes[a], classes[b]);
        let index: Vec<usize> = (0..n).filter(|&t| labels[t] == ca || labels[t] == cb).collect();
        let y: Vec<i8> = index.iter().map(|&t| if labels[t] == ca { 1 } else { -1 }).collect();
        if !(y.contains(&1) && y.contains(&-1)) {
            return Err(Error::Domain(format!("SVM pair ({ca}, {cb}): both classes must be present")));
        }
        let sol = smo(&GramView { gram, n, index: &index }, &y, params);
        if !sol.diagnostics.converged {
            log::warn!(
                "SVM pair ({ca}, {cb}) stopped at {} iterations with violation {:.3e}",
                sol.diagnostics.iterations,
                sol.diagnostics.max_violation
            );
        }
        Ok((index, y, sol))
    });
    let solutions = solutions.into_iter().collect::<Result<Vec<_>>>()?;

    let mut pool_slot = vec![usize::MAX; n];
    let mut in_pool = vec![false; n];
    for (index, _, sol) in &solutions {
        for (&t, &a) in index.iter().zip(&sol.alpha) {
            if a > 0.0 {
                in_pool[t] = true;
            }
        }
    }
    let pool: Vec<usize> = (0..n).filter(|&t| in_pool[t]).collect();
    for (slot, &t) in pool.iter().enumerate() {
        pool_slot[t] = slot;
    }
    let n_sv = pool.len();
    let mut coef = vec![0.0f32; pairs.len() * n_sv];
    let mut bias = Vec::with_capacity(pairs.len());
    let mut unconverged = 0;
    for (p, (index, y, sol)) in solutions.iter().enumerate() {
        for ((&t, &a), &yt) in index.iter().zip(&sol.alpha).zip(y) {
            if a > 0.0 {
                coef[p * n_sv + pool_slot[t]] = (a * yt as f64) as f32;
            }
        }
        bias.push(-sol.rho as f32);
        unconverged += usize::from(!sol.diagnostics.converged);
    }
    let support_vectors = pool.iter().flat_map(|&t| x[t].iter().map(|&v| v as f32)).collect();
    Ok(OvoSvm {
        kernel: params.kernel,
        c: params.c,
        dim,
        classes: classes.to_vec(),
        support_vectors,
        coef,
        bias,
        unconverged_pairs: unconverged,
    })
}

pub fn ovo_train(x: &[Vec<f64>], labels: &[ClassId], params: &SvmParams) -> Result<OvoSvm> {
    if x.len() != labels.len() {
        return Err(Error::shape(format!("{} labels", x.len()), labels.len()));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Domain("one-vs-one SVM needs at least 2 classes".into()));
    }
    let n = x.len();
    let mut gram = dot_gram(x);
    apply_kernel(&mut gram, n, params.kernel);
    ovo_train_gram(x, labels, &classes, &gram, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear(c: f64) -> SvmParams {
        SvmParams::new(c, Kernel::Linear)
    }

    #[test]
    fn two_point_max_margin() {
        let x = vec![vec![-1.0], vec![1.0]];
        let m = svm_train_binary(&x, &[-1, 1], &linear(100.0)).unwrap();
        for v in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            assert!((svm_predict_binary(&m, &[v]).unwrap() - v).abs() < 1e-12);
        }
        assert_eq!(m.bias, 0.0);
    }

    #[test]
    fn xor_is_separated_by_rbf() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let y = [1, 1, -1, -1];
        let m = svm_train_binary(&x, &y, &SvmParams::new(100.0, Kernel::Rbf { gamma: 1.0 })).unwrap();
        for (xi, &yi) in x.iter().zip(&y) {
            assert!(svm_predict_binary(&m, xi).unwrap() * yi as f64 > 0.0);
        }
    }

    #[test]
    fn margin_vector_scores_one() {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![2.0, 0.0], vec![3.0, 1.0]];
        let y = [-1, -1, 1, 1];
        let m = svm_train_binary(&x, &y, &linear(1e3)).unwrap();
        // the closest points across the gap are (0,*) and (2,0)
        assert!((svm_predict_binary(&m, &[2.0, 0.0]).unwrap() - 1.0).abs() < 1e-3);
        assert!((svm_predict_binary(&m, &[0.0, 0.0]).unwrap() + 1.0).abs() < 1e-3);
        let zero = svm_predict_binary(&m, &[0.0, 0.0]).unwrap();
        assert_eq!(zero, m.bias);
    }

    #[test]
    fn errors() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(svm_train_binary(&x, &[1, 1], &linear(1.0)), Err(Error::Domain(_))));
        assert!(matches!(svm_train_binary(&x, &[1, -1], &linear(0.0)), Err(Error::Domain(_))));
        let m = svm_train_binary(&x, &[-1, 1], &linear(1.0)).unwrap();
        assert!(matches!(svm_predict_binary(&m, &[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn objective_trace_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<i8> = x.iter().map(|p| if p[0] + 0.3 * p[1] > 0.6 { 1 } else { -1 }).collect();
        let mut params = SvmParams::new(5.0, Kernel::Rbf { gamma: 2.0 });
        params.trace_objective = true;
        let m = svm_train_binary(&x, &y, &params).unwrap();
        let trace = &m.diagnostics.objective_trace;
        assert!(!trace.is_empty());
        assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(m.diagnostics.converged && m.diagnostics.max_violation < 1e-3);
    }

    #[test]
    fn vote_tie_goes_to_lowest_class() {
        let m = OvoSvm {
            kernel: Kernel::Linear,
            c: 1.0,
            dim: 1,
            classes: vec![0, 1, 2],
            support_vectors: vec![],
            coef: vec![],
            // 0 beats 1, 2 beats 0, 1 beats 2: one vote each, equal margins
            bias: vec![1.0, -1.0, 1.0],
            unconverged_pairs: 0,
        };
        assert_eq!(m.predict(&[0.5]).unwrap(), 0);
        assert_eq!(ovo_vote(3, &[1.0, -1.0, 2.0]), 1);
    }

    #[test]
    fn pair_ordering() {
        assert_eq!(class_pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(class_pairs(10).len(), 45);
    }
}
