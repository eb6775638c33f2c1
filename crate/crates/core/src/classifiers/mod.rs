//! Classifiers on bag-of-words vectors and validation-based model selection.
//!
//! The candidate roster is trained on the same (optionally standardized)
//! training vectors, each candidate is scored on a validation split, and the
//! most accurate one wins with ties going to roster order.

pub mod knn;
pub mod svm;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mnist::ClassId;

pub use knn::{knn_classify, KnnModel};
pub use svm::{
    class_pairs, ovo_train, ovo_vote, svm_predict_binary, svm_train_binary, Kernel, OvoSvm, SmoDiagnostics,
    SvmBinaryModel, SvmParams,
};
pub use tree::{gini, tree_train, TreeModel, TreeNode};

/// Per-feature z-scoring with the sample standard deviation. Constant
/// features get unit scale. Parameters and outputs are rounded to `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::Domain("cannot standardize an empty set".into()));
        }
        let dim = x[0].len();
        let mut mean = vec![0.0f64; dim];
        for r in x {
            if r.len() != dim {
                return Err(Error::shape(format!("rows of length {dim}"), r.len()));
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0f64; dim];
        for r in x {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let denom = (n.max(2) - 1) as f64;
        let scale = var
            .iter()
            .map(|&s| match (s / denom).sqrt() as f32 {
                sd if sd > 0.0 && sd.is_finite() => sd,
                _ => 1.0,
            })
            .collect();
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!("dimension {}", self.dim()), x.len()));
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, &m), &s)| ((v - m as f64) / s as f64) as f32 as f64)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    SvmOvo,
    Knn,
    Tree,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::SvmOvo => "svm-ovo",
            ModelKind::Knn => "knn",
            ModelKind::Tree => "tree",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm-ovo" => Ok(ModelKind::SvmOvo),
            "knn" => Ok(ModelKind::Knn),
            "tree" => Ok(ModelKind::Tree),
            _ => Err(Error::Format(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Svm(OvoSvm),
    Knn(KnnModel),
    Tree(TreeModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Roster entry name, e.g. `svm-rbf`.
    pub name: String,
    pub model: Model,
    pub standardizer: Option<Standardizer>,
    pub class_set: Vec<ClassId>,
    /// NaN until scored by [`select_best`].
    pub val_accuracy: f64,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self.model {
            Model::Svm(_) => ModelKind::SvmOvo,
            Model::Knn(_) => ModelKind::Knn,
            Model::Tree(_) => ModelKind::Tree,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<ClassId> {
        let z;
        let x = match &self.standardizer {
            Some(s) => {
                z = s.apply(x)?;
                &z[..]
            }
            None => x,
        };
        match &self.model {
            Model::Svm(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
            Model::Tree(m) => m.predict(x),
        }
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<ClassId>> {
        crate::par::map(xs, |_, x| self.predict(x)).into_iter().collect()
    }

    pub fn accuracy(&self, xs: &[Vec<f64>], ys: &[ClassId]) -> Result<f64> {
        accuracy(&self.predict_many(xs)?, ys)
    }
}

pub fn accuracy(predicted: &[ClassId], truth: &[ClassId]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!("{} labels", truth.len()), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::Domain("accuracy of an empty set".into()));
    }
    let ok = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(ok as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    /// `None` means `1 / dim`.
    Rbf { gamma: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateSpec {
    Svm { c: f64, kernel: KernelSpec },
    Knn { k: usize },
    Tree { max_depth: usize, min_leaf: usize },
}

impl CandidateSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CandidateSpec::Svm { kernel: KernelSpec::Linear, .. } => "svm-linear",
            CandidateSpec::Svm { kernel: KernelSpec::Rbf { .. }, .. } => "svm-rbf",
            CandidateSpec::Knn { .. } => "knn",
            CandidateSpec::Tree { .. } => "tree",
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            CandidateSpec::Svm { .. } => ModelKind::SvmOvo,
            CandidateSpec::Knn { .. } => ModelKind::Knn,
            CandidateSpec::Tree { .. } => ModelKind::Tree,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roster {
    pub candidates: Vec<CandidateSpec>,
    pub standardize: bool,
}

impl Default for Roster {
    fn default() -> Self {
        Self {
            candidates: vec![
                CandidateSpec::Svm {
                    c: 1.0,
                    kernel: KernelSpec::Linear,
                },
                CandidateSpec::Svm {
                    c: 1.0,
                    kernel: KernelSpec::Rbf { gamma: None },
                },
                CandidateSpec::Knn { k: 5 },
                CandidateSpec::Tree {
                    max_depth: 20,
                    min_leaf: 1,
                },
            ],
            standardize: true,
        }
    }
}

/// Trains every roster entry on `(x, y)`. SVM entries share one dot-product
/// Gram matrix.
pub fn train_roster(x: &[Vec<f64>], y: &[ClassId], roster: &Roster) -> Result<Vec<TrainedModel>> {
    if x.is_empty() {
        return Err(Error::Domain("cannot train on an empty set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::shape(format!("{} labels", x.len()), y.len()));
    }
    let mut class_set = y.to_vec();
    class_set.sort_unstable();
    class_set.dedup();
    if class_set.len() < 2 {
        return Err(Error::Domain("training set needs at least 2 classes".into()));
    }
    let standardizer = if roster.standardize {
        Some(Standardizer::fit(x)?)
    } else {
        None
    };
    let z: Vec<Vec<f64>> = match &standardizer {
        Some(s) => x.iter().map(|r| s.apply(r)).collect::<Result<_>>()?,
        None => x.to_vec(),
    };
    let dim = z[0].len();
    let n = z.len();
    let dots = if roster.candidates.iter().any(|c| matches!(c, CandidateSpec::Svm { .. })) {
        svm::dot_gram(&z)
    } else {
        Vec::new()
    };

    let mut out = Vec::with_capacity(roster.candidates.len());
    for spec in &roster.candidates {
        let model = match *spec {
            CandidateSpec::Svm { c, kernel } => {
                let kernel = match kernel {
                    KernelSpec::Linear => Kernel::Linear,
                    KernelSpec::Rbf { gamma } => Kernel::Rbf {
                        gamma: gamma.unwrap_or(1.0 / dim.max(1) as f64),
                    },
                };
                let mut gram = dots.clone();
                svm::apply_kernel(&mut gram, n, kernel);
                Model::Svm(svm::ovo_train_gram(&z, y, &class_set, &gram, &SvmParams::new(c, kernel))?)
            }
            CandidateSpec::Knn { k } => Model::Knn(KnnModel::fit(&z, y, k)?),
            CandidateSpec::Tree { max_depth, min_leaf } => Model::Tree(tree_train(&z, y, max_depth, min_leaf)?),
        };
        log::debug!("trained {} on {n} vectors", spec.name());
        out.push(TrainedModel {
            name: spec.name().to_string(),
            model,
            standardizer: standardizer.clone(),
            class_set: class_set.clone(),
            val_accuracy: f64::NAN,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub name: String,
    pub kind: ModelKind,
    pub val_accuracy: f64,
}

/// Scores every candidate on the validation split and returns the best one
/// (first in roster order on ties) together with all scores.
pub fn select_best(
    mut candidates: Vec<TrainedModel>,
    val_x: &[Vec<f64>],
    val_y: &[ClassId],
) -> Result<(TrainedModel, Vec<CandidateScore>)> {
    if candidates.is_empty() {
        return Err(Error::Domain("no candidate models to select from".into()));
    }
    if val_x.is_empty() {
        return Err(Error::Domain("validation split is empty".into()));
    }
    for c in &mut candidates {
        c.val_accuracy = c.accuracy(val_x, val_y)?;
    }
    Ok(pick_best(candidates))
}

fn pick_best(candidates: Vec<TrainedModel>) -> (TrainedModel, Vec<CandidateScore>) {
    let scores: Vec<CandidateScore> = candidates
        .iter()
        .map(|c| CandidateScore {
            name: c.name.clone(),
            kind: c.kind(),
            val_accuracy: c.val_accuracy,
        })
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.val_accuracy > scores[best].val_accuracy {
            best = i;
        }
    }
    let chosen = candidates.into_iter().nth(best).expect("nonempty candidates");
    (chosen, scores)
}
