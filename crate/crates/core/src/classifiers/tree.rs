//! CART decision trees grown greedily on Gini impurity.
//!
//! Features are handled at `f32` precision. Each feature keeps a list of
//! sample indices sorted by value; splitting a node partitions every list
//! stably in place, so children see sorted segments without re-sorting.

use crate::error::{Error, Result};
use crate::mnist::ClassId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Leaf { class: ClassId },
    /// `x[feature] <= threshold` goes to `left`.
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
}

/// Nodes in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
    pub dim: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Grower<'a> {
    columns: Vec<Vec<f32>>,
    /// Class position of every sample.
    y: &'a [usize],
    classes: &'a [ClassId],
    sorted: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f32,
    n_left: usize,
}

impl Grower<'_> {
    fn majority(&self, counts: &[usize]) -> ClassId {
        let mut best = 0;
        for c in 1..counts.len() {
            if counts[c] > counts[best] {
                best = c;
            }
        }
        self.classes[best]
    }

    fn best_split(&self, start: usize, end: usize, total: &[usize]) -> Option<BestSplit> {
        let n = end - start;
        let total_sq: usize = total.iter().map(|&c| c * c).sum();
        let mut best: Option<BestSplit> = None;
        let mut left = vec![0usize; total.len()];
        for (f, order) in self.sorted.iter().enumerate() {
            let col = &self.columns[f];
            let seg = &order[start..end];
            if col[seg[0] as usize] == col[seg[n - 1] as usize] {
                continue;
            }
            left.iter_mut().for_each(|c| *c = 0);
            // Σ c² on each side, kept exact in integers
            let (mut sq_l, mut sq_r) = (0usize, total_sq);
            for p in 0..n - 1 {
                let t = seg[p] as usize;
                let c = self.y[t];
                sq_l += 2 * left[c] + 1;
                sq_r -= 2 * (total[c] - left[c]) - 1;
                left[c] += 1;
                let (lo, hi) = (col[t], col[seg[p + 1] as usize]);
                let n_l = p + 1;
                let n_r = n - n_l;
                if lo == hi || n_l < self.min_leaf || n_r < self.min_leaf {
                    continue;
                }
                // n · weighted Gini
                let score = (n_l as f64 - sq_l as f64 / n_l as f64) + (n_r as f64 - sq_r as f64 / n_r as f64);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let mut threshold = ((lo as f64 + hi as f64) / 2.0) as f32;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        score,
                        feature: f,
                        threshold,
                        n_left: n_l,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        let mut counts = vec![0usize; self.classes.len()];
        for &t in &self.sorted[0][start..end] {
            counts[self.y[t as usize]] += 1;
        }
        self.nodes.push(TreeNode::Leaf {
            class: self.majority(&counts),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || end - start < 2 * self.min_leaf {
            return id;
        }
        let Some(split) = self.best_split(start, end, &counts) else {
            return id;
        };
        let col = &self.columns[split.feature];
        for &t in &self.sorted[split.feature][start..end] {
            self.goes_left[t as usize] = col[t as usize] <= split.threshold;
        }
        let mid = start + split.n_left;
        for order in &mut self.sorted {
            self.scratch.clear();
            let mut w = start;
            for p in start..end {
                let t = order[p];
                if self.goes_left[t as usize] {
                    order[w] = t;
                    w += 1;
                } else {
                    self.scratch.push(t);
                }
            }
            debug_assert_eq!(w, mid);
            order[mid..end].copy_from_slice(&self.scratch);
        }
        let left = self.grow(start, mid, depth + 1);
        let right = self.grow(mid, end, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

pub fn tree_train(x: &[Vec<f64>], y: &[ClassId], max_depth: usize, min_leaf: usize) -> Result<TreeModel> {
    if x.is_empty() {
        return Err(Error::Domain("decision tree needs a nonempty training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::shape(format!("{} labels", x.len()), y.len()));
    }
    if min_leaf == 0 {
        return Err(Error::Domain("min_leaf must be at least 1".into()));
    }
    let dim = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != dim) {
        return Err(Error::shape(format!("rows of length {dim}"), r.len()));
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let yi: Vec<usize> = y.iter().map(|c| classes.binary_search(c).unwrap()).collect();
    let n = x.len();
    let columns: Vec<Vec<f32>> = (0..dim).map(|f| x.iter().map(|r| r[f] as f32).collect()).collect();
    let mut sorted: Vec<Vec<u32>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();
    if sorted.is_empty() {
        // no features: the root stays a leaf, but it still needs a sample list
        sorted.push((0..n as u32).collect());
    }
    let mut g = Grower {
        columns,
        y: &yi,
        classes: &classes,
        sorted,
        goes_left: vec![false; n],
        scratch: Vec::with_capacity(n),
        max_depth,
        min_leaf,
        nodes: Vec::new(),
    };
    if dim == 0 {
        g.max_depth = 0;
    }
    g.grow(0, n, 0);
    Ok(TreeModel {
        nodes: g.nodes,
        dim,
        max_depth,
        min_leaf,
    })
}

impl TreeModel {
    pub fn predict(&self, x: &[f64]) -> Result<ClassId> {
        if x.len() != self.dim {
            return Err(Error::shape(format!("dimension {}", self.dim), x.len()));
        }
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { class } => return Ok(class),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] as f32 <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}
