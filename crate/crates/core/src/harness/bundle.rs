//! Model bundles: a directory holding a `manifest` of `key=value` lines, the
//! vocabulary file and one little-endian `f32` array file per model array.
//! Array shapes are recorded in the manifest as `array.<name>=<file> <rows>x<cols>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bovw::Vocabulary;
use crate::classifiers::{
    KnnModel, Kernel, Model, ModelKind, OvoSvm, Standardizer, TrainedModel, TreeModel, TreeNode,
};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::mnist::ClassId;
use crate::surf::{extract_features, Descriptor, FeatureMode, FeatureParams};

use super::config::ExperimentConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest";
pub const VOCABULARY_FILE: &str = "vocabulary.bin";

/// A trained model with everything needed to classify raw frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub model: TrainedModel,
    pub vocab: Vocabulary,
    pub features: FeatureParams,
}

impl Bundle {
    pub fn classify_descriptors(&self, descriptors: &[Descriptor]) -> Result<ClassId> {
        self.model.predict(&self.vocab.encode(descriptors).weights)
    }

    pub fn classify_frame(&self, frame: &GrayImage) -> Result<ClassId> {
        self.classify_descriptors(&extract_features(frame, &self.features))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_bundle(&self.model, &self.vocab, &self.features, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        load_bundle(dir)
    }
}

struct Writer<'a> {
    dir: &'a Path,
    manifest: String,
}

impl Writer<'_> {
    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        writeln!(self.manifest, "{key}={value}").unwrap();
    }

    fn array(&mut self, name: &str, rows: usize, cols: usize, values: impl IntoIterator<Item = f32>) -> Result<()> {
        let file = format!("{name}.f32");
        let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
        debug_assert_eq!(bytes.len(), rows * cols * 4);
        let path = self.dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.kv(&format!("array.{name}"), format!("{file} {rows}x{cols}"));
        Ok(())
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn save_bundle(model: &TrainedModel, vocab: &Vocabulary, features: &FeatureParams, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    vocab.save(&dir.join(VOCABULARY_FILE))?;
    let mut w = Writer {
        dir,
        manifest: String::new(),
    };
    w.kv("format_version", FORMAT_VERSION);
    w.kv("kind", model.kind());
    w.kv("name", &model.name);
    w.kv("classes", join(&model.class_set));
    w.kv("val_accuracy", model.val_accuracy);
    w.kv("vocabulary", VOCABULARY_FILE);
    w.kv("vocab_k", vocab.k());
    match &features.mode {
        FeatureMode::Grid { step, scales } => {
            w.kv("features.mode", "grid");
            w.kv("features.grid_step", step);
            w.kv("features.grid_scales", join(scales));
        }
        FeatureMode::Detector(d) => {
            w.kv("features.mode", "detector");
            w.kv("features.threshold", d.threshold);
            w.kv("features.octaves", d.octaves);
            w.kv("features.layers", d.layers);
            w.kv("features.init_step", d.init_step);
        }
    }
    w.kv("features.upright", features.upright);
    match &model.standardizer {
        Some(s) => w.array("standardizer", 2, s.dim(), s.mean.iter().chain(&s.scale).copied())?,
        None => w.kv("standardizer", "none"),
    }
    match &model.model {
        Model::Svm(m) => {
            match m.kernel {
                Kernel::Linear => w.kv("svm.kernel", "linear"),
                Kernel::Rbf { gamma } => {
                    w.kv("svm.kernel", "rbf");
                    w.kv("svm.gamma", gamma);
                }
            }
            w.kv("svm.c", m.c);
            w.kv("svm.dim", m.dim);
            w.kv("svm.unconverged_pairs", m.unconverged_pairs);
            let n_sv = m.n_support();
            w.array("support_vectors", n_sv, m.dim, m.support_vectors.iter().copied())?;
            w.array("coef", m.bias.len(), n_sv, m.coef.iter().copied())?;
            w.array("bias", m.bias.len(), 1, m.bias.iter().copied())?;
        }
        Model::Knn(m) => {
            w.kv("knn.k", m.k);
            w.kv("knn.k_requested", m.k_requested);
            w.array("points", m.labels.len(), m.dim, m.points.iter().copied())?;
            w.array("labels", m.labels.len(), 1, m.labels.iter().map(|&l| l as f32))?;
        }
        Model::Tree(t) => {
            w.kv("tree.max_depth", t.max_depth);
            w.kv("tree.min_leaf", t.min_leaf);
            w.kv("tree.dim", t.dim);
            // rows: [is_split, feature or class, threshold, left, right]
            let rows = t.nodes.iter().flat_map(|n| match *n {
                TreeNode::Leaf { class } => [0.0, class as f32, 0.0, 0.0, 0.0],
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => [1.0, feature as f32, threshold, left as f32, right as f32],
            });
            w.array("nodes", t.nodes.len(), 5, rows)?;
        }
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, w.manifest).map_err(|e| Error::io(&path, e))
}

struct Manifest<'a> {
    dir: &'a Path,
    entries: BTreeMap<String, String>,
}

impl Manifest<'_> {
    fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("{}: manifest lacks {key}", self.dir.display())))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("{}: manifest {key}={v:?} is not a number", self.dir.display())))
    }

    /// Reads `array.<name>`, checking the file length against the shape.
    fn array(&self, name: &str) -> Result<(usize, usize, Vec<f32>)> {
        let key = format!("array.{name}");
        let spec = self.get(&key)?;
        let bad = || Error::Format(format!("{}: manifest {key}={spec:?} is malformed", self.dir.display()));
        let (file, shape) = spec.split_once(' ').ok_or_else(bad)?;
        let (r, c) = shape.split_once('x').ok_or_else(bad)?;
        let (rows, cols): (usize, usize) = (r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?);
        if file.contains(['/', '\\']) || file.starts_with('.') {
            return Err(bad());
        }
        let path = self.dir.join(file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != rows * cols * 4 {
            return Err(Error::Format(format!(
                "{}: {} bytes, expected {} for a {rows}x{cols} f32 array",
                path.display(),
                bytes.len(),
                rows * cols * 4
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok((rows, cols, values))
    }
}

fn as_index(v: f32, limit: usize, what: &str, path: &Path) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < limit {
        Ok(v as usize)
    } else {
        Err(Error::Format(format!("{}: {what} {v} out of range", path.display())))
    }
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("{}: bad manifest line {line:?}", path.display())))?;
        entries.insert(k.trim().to_string(), v.trim().to_string());
    }
    let m = Manifest { dir, entries };
    let version: u32 = m.num("format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let vocab_file = m.get("vocabulary")?;
    if vocab_file.contains(['/', '\\']) {
        return Err(Error::Format(format!("{}: bad vocabulary reference", path.display())));
    }
    let vocab = Vocabulary::load(&dir.join(vocab_file))?;
    if vocab.k() != m.num::<usize>("vocab_k")? {
        return Err(Error::Format(format!("{}: vocab_k does not match the vocabulary", path.display())));
    }

    let mut features_cfg = ExperimentConfig::default();
    for key in [
        "features.mode",
        "features.grid_step",
        "features.grid_scales",
        "features.threshold",
        "features.octaves",
        "features.layers",
        "features.init_step",
        "features.upright",
    ] {
        if let Some(v) = m.entries.get(key) {
            features_cfg
                .set(key, v)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        }
    }

    let class_set: Vec<ClassId> = m
        .get("classes")?
        .split(',')
        .map(|c| c.parse::<ClassId>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("{}: bad classes", path.display())))?;
    let standardizer = match m.get("standardizer") {
        Ok("none") => None,
        _ => {
            let (rows, dim, v) = m.array("standardizer")?;
            if rows != 2 || dim != vocab.k() {
                return Err(Error::Format(format!("{}: standardizer shape {rows}x{dim}", path.display())));
            }
            Some(Standardizer {
                mean: v[..dim].to_vec(),
                scale: v[dim..].to_vec(),
            })
        }
    };

    let kind: ModelKind = m.get("kind")?.parse()?;
    let model = match kind {
        ModelKind::SvmOvo => {
            let kernel = match m.get("svm.kernel")? {
                "linear" => Kernel::Linear,
                "rbf" => Kernel::Rbf {
                    gamma: m.num("svm.gamma")?,
                },
                other => return Err(Error::Format(format!("{}: unknown kernel {other:?}", path.display()))),
            };
            let dim: usize = m.num("svm.dim")?;
            let (n_sv, sv_dim, support_vectors) = m.array("support_vectors")?;
            let (n_pairs, coef_cols, coef) = m.array("coef")?;
            let (bias_rows, _, bias) = m.array("bias")?;
            let k = class_set.len();
            if (n_sv > 0 && sv_dim != dim) || coef_cols != n_sv || n_pairs != k * (k - 1) / 2 || bias_rows != n_pairs {
                return Err(Error::Format(format!("{}: inconsistent SVM array shapes", path.display())));
            }
            Model::Svm(OvoSvm {
                kernel,
                c: m.num("svm.c")?,
                dim,
                classes: class_set.clone(),
                support_vectors,
                coef,
                bias,
                unconverged_pairs: m.num("svm.unconverged_pairs")?,
            })
        }
        ModelKind::Knn => {
            let (n, dim, points) = m.array("points")?;
            let (ln, _, labels) = m.array("labels")?;
            if ln != n {
                return Err(Error::Format(format!("{}: {n} points but {ln} labels", path.display())));
            }
            let labels = labels
                .iter()
                .map(|&l| as_index(l, 256, "label", &path).map(|v| v as ClassId))
                .collect::<Result<_>>()?;
            Model::Knn(KnnModel {
                k_requested: m.num("knn.k_requested")?,
                k: m.num("knn.k")?,
                dim,
                points,
                labels,
            })
        }
        ModelKind::Tree => {
            let dim: usize = m.num("tree.dim")?;
            let (n, cols, raw) = m.array("nodes")?;
            if cols != 5 || n == 0 {
                return Err(Error::Format(format!("{}: tree nodes must be nx5", path.display())));
            }
            let nodes = raw
                .chunks_exact(5)
                .map(|r| {
                    Ok(if r[0] == 0.0 {
                        TreeNode::Leaf {
                            class: as_index(r[1], 256, "leaf class", &path)? as ClassId,
                        }
                    } else {
                        TreeNode::Split {
                            feature: as_index(r[1], dim, "split feature", &path)?,
                            threshold: r[2],
                            left: as_index(r[3], n, "child", &path)?,
                            right: as_index(r[4], n, "child", &path)?,
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            // preorder storage: children always follow their parent
            for (i, node) in nodes.iter().enumerate() {
                if let TreeNode::Split { left, right, .. } = *node {
                    if left <= i || right <= i {
                        return Err(Error::Format(format!("{}: tree node {i} links backwards", path.display())));
                    }
                }
            }
            Model::Tree(TreeModel {
                nodes,
                dim,
                max_depth: m.num("tree.max_depth")?,
                min_leaf: m.num("tree.min_leaf")?,
            })
        }
    };
    Ok(Bundle {
        model: TrainedModel {
            name: m.get("name")?.to_string(),
            model,
            standardizer,
            class_set,
            val_accuracy: m.num("val_accuracy")?,
        },
        vocab,
        features: features_cfg.features,
    })
}
