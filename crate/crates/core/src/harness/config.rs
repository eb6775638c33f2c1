//! Flat `key = value` experiment configuration.
//!
//! Keys carry a section prefix (`capture.distance_mm = 250`). Blank lines and
//! `#` comments are ignored. Unknown keys, repeated keys and unparsable values
//! are errors, so a misspelled parameter never falls back to its default.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::classifiers::{CandidateSpec, KernelSpec, Roster};
use crate::error::{Error, Result};
use crate::mnist::ClassId;
use crate::optics::{CaptureConfig, NoiseConfig, TransferMode};
use crate::surf::{DetectorParams, FeatureMode, FeatureParams};

pub const DATA_DIR_ENV: &str = "LENSLESS_DATA_DIR";

/// How source images are partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSplit {
    /// All 70,000 images pooled and split fresh per run.
    Pooled,
    /// Train and validation from the official training file, test from the
    /// official test file.
    Original,
}

/// Which images the vocabulary is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabScope {
    /// Once per (task, repeat), on the largest training partition; every
    /// training size of that repeat shares the vocabulary.
    Group,
    /// Per cell, on that cell's own training images.
    Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabConfig {
    pub k: usize,
    /// Images (class-balanced) whose descriptors are clustered.
    pub subset: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub scope: VocabScope,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            k: 500,
            subset: 2500,
            seed: 0,
            max_iters: 25,
            rel_tol: 1e-3,
            scope: VocabScope::Group,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    /// Roster entries in selection-tie order.
    pub roster: Vec<String>,
    pub standardize: bool,
    pub svm_linear_c: f64,
    pub svm_rbf_c: f64,
    /// `None` means `1 / dim`.
    pub svm_rbf_gamma: Option<f64>,
    pub knn_k: usize,
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            roster: ["svm-linear", "svm-rbf", "knn", "tree"].map(String::from).to_vec(),
            standardize: true,
            svm_linear_c: 1.0,
            svm_rbf_c: 1.0,
            svm_rbf_gamma: None,
            knn_k: 5,
            tree_max_depth: 20,
            tree_min_leaf: 1,
        }
    }
}

impl ClassifierConfig {
    pub fn to_roster(&self) -> Result<Roster> {
        let candidates = self
            .roster
            .iter()
            .map(|name| match name.as_str() {
                "svm-linear" => Ok(CandidateSpec::Svm {
                    c: self.svm_linear_c,
                    kernel: KernelSpec::Linear,
                }),
                "svm-rbf" => Ok(CandidateSpec::Svm {
                    c: self.svm_rbf_c,
                    kernel: KernelSpec::Rbf {
                        gamma: self.svm_rbf_gamma,
                    },
                }),
                "knn" => Ok(CandidateSpec::Knn { k: self.knn_k }),
                "tree" => Ok(CandidateSpec::Tree {
                    max_depth: self.tree_max_depth,
                    min_leaf: self.tree_min_leaf,
                }),
                other => Err(Error::Config(format!(
                    "unknown roster entry {other:?} (expected svm-linear, svm-rbf, knn or tree)"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Roster {
            candidates,
            standardize: self.standardize,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `None` resolves to `$LENSLESS_DATA_DIR`, then `data/mnist`.
    pub data_dir: Option<PathBuf>,
    pub data_split: DataSplit,
    pub capture: CaptureConfig,
    pub noise: NoiseConfig,
    pub features: FeatureParams,
    pub vocab: VocabConfig,
    pub classifiers: ClassifierConfig,
    pub tasks: Vec<Vec<ClassId>>,
    pub train_sizes: Vec<usize>,
    /// Validation size as a fraction of `n_train` (at least one image).
    pub val_fraction: f64,
    pub n_test: usize,
    pub master_seed: u64,
    pub n_repeats: usize,
    /// Write measured seconds into the `wall_s` column; off keeps output
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            data_split: DataSplit::Pooled,
            capture: CaptureConfig::default(),
            noise: NoiseConfig::default(),
            features: FeatureParams::default(),
            vocab: VocabConfig::default(),
            classifiers: ClassifierConfig::default(),
            tasks: vec![vec![0, 1], (0..5).collect(), (0..10).collect()],
            train_sizes: vec![200, 500, 1000, 2000, 4000],
            val_fraction: 0.2,
            n_test: 500,
            master_seed: 20_190_101,
            n_repeats: 3,
            record_wall_time: false,
        }
    }
}

/// `0-1` for contiguous class runs, otherwise ids joined by `_`.
pub fn task_label(classes: &[ClassId]) -> String {
    let contiguous = classes.windows(2).all(|w| w[1] == w[0] + 1);
    match classes {
        [] => String::new(),
        [one] => one.to_string(),
        [first, .., last] if contiguous => format!("{first}-{last}"),
        _ => classes.iter().map(ClassId::to_string).collect::<Vec<_>>().join("_"),
    }
}

/// Parses `0-4`, `3`, `0_3_5` or `0,3,5` into a sorted class set.
pub fn parse_task(text: &str) -> Result<Vec<ClassId>> {
    let text = text.trim();
    let bad = || Error::Config(format!("bad task {text:?} (use e.g. 0-4 or 0,3,5)"));
    let parse_id = |s: &str| -> Result<ClassId> {
        s.trim().parse::<ClassId>().ok().filter(|&c| c <= 9).ok_or_else(bad)
    };
    let mut set = BTreeSet::new();
    if let Some((a, b)) = text.split_once('-') {
        let (a, b) = (parse_id(a)?, parse_id(b)?);
        if a >= b {
            return Err(bad());
        }
        set.extend(a..=b);
    } else {
        for part in text.split([',', '_']) {
            set.insert(parse_id(part)?);
        }
    }
    if set.len() < 2 {
        return Err(Error::Config(format!("task {text:?} needs at least 2 classes")));
    }
    Ok(set.into_iter().collect())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn fmt_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} given twice", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))
    }

    /// Sets one key. Values are validated as a whole by [`Self::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.capture;
        match key {
            "data.dir" => self.data_dir = Some(PathBuf::from(value)),
            "data.split" => {
                self.data_split = match value {
                    "pooled" => DataSplit::Pooled,
                    "original" => DataSplit::Original,
                    _ => return Err(Error::Config(format!("{key}: expected pooled or original, got {value:?}"))),
                }
            }
            "capture.scene_width" => c.scene_width = parse(key, value)?,
            "capture.scene_height" => c.scene_height = parse(key, value)?,
            "capture.sensor_width" => c.sensor_width = parse(key, value)?,
            "capture.sensor_height" => c.sensor_height = parse(key, value)?,
            "capture.distance_mm" => c.distance_mm = parse(key, value)?,
            "capture.lcd_pitch_mm" => c.lcd_pitch_mm = parse(key, value)?,
            "capture.sensor_pitch_mm" => c.sensor_pitch_mm = parse(key, value)?,
            "capture.n_avg" => c.n_avg = parse(key, value)?,
            "capture.exposure_scale" => c.exposure_scale = parse(key, value)?,
            "capture.bit_depth" => c.bit_depth = parse(key, value)?,
            "capture.mode" => c.mode = value.parse::<TransferMode>()?,
            "capture.mask_seed" => c.mask_seed = parse(key, value)?,
            "capture.mask_open_fraction" => c.mask_open_fraction = parse(key, value)?,
            "capture.mask_gap_mm" => c.mask_gap_mm = parse(key, value)?,
            "capture.mask_pitch_mm" => c.mask_pitch_mm = parse(key, value)?,
            "capture.fill_fraction" => c.fill_fraction = parse(key, value)?,
            "capture.memory_budget_bytes" => c.memory_budget_bytes = parse(key, value)?,
            "noise.enabled" => self.noise.enabled = parse_bool(key, value)?,
            "noise.read_sigma" => self.noise.read_sigma = parse(key, value)?,
            "noise.shot_scale" => self.noise.shot_scale = parse(key, value)?,
            "features.mode" => {
                self.features.mode = match value {
                    "grid" => FeatureMode::default(),
                    "detector" => FeatureMode::Detector(DetectorParams::default()),
                    _ => return Err(Error::Config(format!("{key}: expected grid or detector, got {value:?}"))),
                }
            }
            "features.upright" => self.features.upright = parse_bool(key, value)?,
            "features.grid_step" | "features.grid_scales" => {
                let FeatureMode::Grid { step, scales } = &mut self.features.mode else {
                    return Err(Error::Config(format!("{key} requires features.mode = grid set before it")));
                };
                if key == "features.grid_step" {
                    *step = parse(key, value)?;
                } else {
                    *scales = parse_list(key, value)?;
                }
            }
            "features.threshold" | "features.octaves" | "features.layers" | "features.init_step" => {
                let FeatureMode::Detector(d) = &mut self.features.mode else {
                    return Err(Error::Config(format!("{key} requires features.mode = detector set before it")));
                };
                match key {
                    "features.threshold" => d.threshold = parse(key, value)?,
                    "features.octaves" => d.octaves = parse(key, value)?,
                    "features.layers" => d.layers = parse(key, value)?,
                    _ => d.init_step = parse(key, value)?,
                }
            }
            "vocab.k" => self.vocab.k = parse(key, value)?,
            "vocab.subset" => self.vocab.subset = parse(key, value)?,
            "vocab.seed" => self.vocab.seed = parse(key, value)?,
            "vocab.max_iters" => self.vocab.max_iters = parse(key, value)?,
            "vocab.rel_tol" => self.vocab.rel_tol = parse(key, value)?,
            "vocab.scope" => {
                self.vocab.scope = match value {
                    "group" => VocabScope::Group,
                    "cell" => VocabScope::Cell,
                    _ => return Err(Error::Config(format!("{key}: expected group or cell, got {value:?}"))),
                }
            }
            "classifiers.roster" => {
                self.classifiers.roster = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "classifiers.standardize" => self.classifiers.standardize = parse_bool(key, value)?,
            "classifiers.svm_linear_c" => self.classifiers.svm_linear_c = parse(key, value)?,
            "classifiers.svm_rbf_c" => self.classifiers.svm_rbf_c = parse(key, value)?,
            "classifiers.svm_rbf_gamma" => {
                self.classifiers.svm_rbf_gamma = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "classifiers.knn_k" => self.classifiers.knn_k = parse(key, value)?,
            "classifiers.tree_max_depth" => self.classifiers.tree_max_depth = parse(key, value)?,
            "classifiers.tree_min_leaf" => self.classifiers.tree_min_leaf = parse(key, value)?,
            "experiment.tasks" => {
                self.tasks = value
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(parse_task)
                    .collect::<Result<_>>()?
            }
            "experiment.train_sizes" => self.train_sizes = parse_list(key, value)?,
            "experiment.val_fraction" => self.val_fraction = parse(key, value)?,
            "experiment.n_test" => self.n_test = parse(key, value)?,
            "experiment.master_seed" => self.master_seed = parse(key, value)?,
            "experiment.n_repeats" => self.n_repeats = parse(key, value)?,
            "experiment.record_wall_time" => self.record_wall_time = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.capture.validate()?;
        self.noise.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.tasks.is_empty() {
            return fail("experiment.tasks is empty".into());
        }
        if self.train_sizes.is_empty() || self.train_sizes[0] == 0 {
            return fail("experiment.train_sizes must be nonempty and positive".into());
        }
        if self.train_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("experiment.train_sizes must be strictly increasing, got {:?}", self.train_sizes));
        }
        if self.n_test == 0 {
            return fail("experiment.n_test must be at least 1".into());
        }
        if self.n_repeats == 0 {
            return fail("experiment.n_repeats must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 1.0) {
            return fail(format!("experiment.val_fraction must be in (0, 1], got {}", self.val_fraction));
        }
        if self.vocab.k < 2 || self.vocab.subset == 0 || self.vocab.max_iters == 0 {
            return fail("vocab.k must be >= 2, vocab.subset and vocab.max_iters >= 1".into());
        }
        if !(self.vocab.rel_tol >= 0.0) {
            return fail(format!("vocab.rel_tol must be >= 0, got {}", self.vocab.rel_tol));
        }
        if self.classifiers.roster.is_empty() {
            return fail("classifiers.roster is empty".into());
        }
        let cl = &self.classifiers;
        if !(cl.svm_linear_c > 0.0 && cl.svm_rbf_c > 0.0) || cl.svm_rbf_gamma.is_some_and(|g| !(g > 0.0)) {
            return fail("SVM C and gamma must be positive".into());
        }
        if cl.knn_k == 0 || cl.tree_min_leaf == 0 {
            return fail("classifiers.knn_k and classifiers.tree_min_leaf must be >= 1".into());
        }
        match &self.features.mode {
            FeatureMode::Grid { step, scales } => {
                if *step == 0 || scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
                    return fail("grid features need a positive step and positive scales".into());
                }
            }
            FeatureMode::Detector(d) => {
                if d.octaves == 0 || d.layers < 3 || d.init_step == 0 {
                    return fail("detector needs octaves >= 1, layers >= 3, init_step >= 1".into());
                }
            }
        }
        cl.to_roster().map(|_| ())
    }

    pub fn n_val(&self, n_train: usize) -> usize {
        ((n_train as f64 * self.val_fraction).round() as usize).max(1)
    }

    /// Explicit path, then `$LENSLESS_DATA_DIR`, then `data/mnist`.
    pub fn resolve_data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }

    /// Every setting as config text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.capture;
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        if let Some(d) = &self.data_dir {
            kv("data.dir", d.display().to_string());
        }
        kv(
            "data.split",
            match self.data_split {
                DataSplit::Pooled => "pooled",
                DataSplit::Original => "original",
            }
            .into(),
        );
        kv("capture.scene_width", c.scene_width.to_string());
        kv("capture.scene_height", c.scene_height.to_string());
        kv("capture.sensor_width", c.sensor_width.to_string());
        kv("capture.sensor_height", c.sensor_height.to_string());
        kv("capture.distance_mm", c.distance_mm.to_string());
        kv("capture.lcd_pitch_mm", c.lcd_pitch_mm.to_string());
        kv("capture.sensor_pitch_mm", c.sensor_pitch_mm.to_string());
        kv("capture.n_avg", c.n_avg.to_string());
        kv("capture.exposure_scale", c.exposure_scale.to_string());
        kv("capture.bit_depth", c.bit_depth.to_string());
        kv("capture.mode", c.mode.to_string());
        kv("capture.mask_seed", c.mask_seed.to_string());
        kv("capture.mask_open_fraction", c.mask_open_fraction.to_string());
        kv("capture.mask_gap_mm", c.mask_gap_mm.to_string());
        kv("capture.mask_pitch_mm", c.mask_pitch_mm.to_string());
        kv("capture.fill_fraction", c.fill_fraction.to_string());
        kv("capture.memory_budget_bytes", c.memory_budget_bytes.to_string());
        kv("noise.enabled", self.noise.enabled.to_string());
        kv("noise.read_sigma", self.noise.read_sigma.to_string());
        kv("noise.shot_scale", self.noise.shot_scale.to_string());
        match &self.features.mode {
            FeatureMode::Grid { step, scales } => {
                kv("features.mode", "grid".into());
                kv("features.grid_step", step.to_string());
                kv("features.grid_scales", fmt_list(scales));
            }
            FeatureMode::Detector(d) => {
                kv("features.mode", "detector".into());
                kv("features.threshold", d.threshold.to_string());
                kv("features.octaves", d.octaves.to_string());
                kv("features.layers", d.layers.to_string());
                kv("features.init_step", d.init_step.to_string());
            }
        }
        kv("features.upright", self.features.upright.to_string());
        let v = &self.vocab;
        kv("vocab.k", v.k.to_string());
        kv("vocab.subset", v.subset.to_string());
        kv("vocab.seed", v.seed.to_string());
        kv("vocab.max_iters", v.max_iters.to_string());
        kv("vocab.rel_tol", v.rel_tol.to_string());
        kv(
            "vocab.scope",
            match v.scope {
                VocabScope::Group => "group",
                VocabScope::Cell => "cell",
            }
            .into(),
        );
        let cl = &self.classifiers;
        kv("classifiers.roster", cl.roster.join(","));
        kv("classifiers.standardize", cl.standardize.to_string());
        kv("classifiers.svm_linear_c", cl.svm_linear_c.to_string());
        kv("classifiers.svm_rbf_c", cl.svm_rbf_c.to_string());
        kv(
            "classifiers.svm_rbf_gamma",
            cl.svm_rbf_gamma.map_or("auto".into(), |g| g.to_string()),
        );
        kv("classifiers.knn_k", cl.knn_k.to_string());
        kv("classifiers.tree_max_depth", cl.tree_max_depth.to_string());
        kv("classifiers.tree_min_leaf", cl.tree_min_leaf.to_string());
        kv(
            "experiment.tasks",
            self.tasks.iter().map(|t| task_label(t)).collect::<Vec<_>>().join("; "),
        );
        kv("experiment.train_sizes", fmt_list(&self.train_sizes));
        kv("experiment.val_fraction", self.val_fraction.to_string());
        kv("experiment.n_test", self.n_test.to_string());
        kv("experiment.master_seed", self.master_seed.to_string());
        kv("experiment.n_repeats", self.n_repeats.to_string());
        kv("experiment.record_wall_time", self.record_wall_time.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_sections_and_comments() {
        let cfg = ExperimentConfig::parse(
            "# desk run\ncapture.distance_mm = 300   # closer\n\nexperiment.tasks = 0-1; 2,5\nexperiment.train_sizes = 10, 20\n",
        )
        .unwrap();
        assert_eq!(cfg.capture.distance_mm, 300.0);
        assert_eq!(cfg.tasks, vec![vec![0, 1], vec![2, 5]]);
        assert_eq!(cfg.train_sizes, vec![10, 20]);
    }

    #[test]
    fn unknown_and_bad_keys_are_errors() {
        for text in [
            "capture.distanse_mm = 3",
            "capture.distance_mm = far",
            "experiment.train_sizes = 20,10",
            "experiment.n_test = 0",
            "vocab.k = 3\nvocab.k = 4",
            "no equals sign",
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.features.mode = FeatureMode::Detector(DetectorParams::default());
        cfg.classifiers.svm_rbf_gamma = Some(0.125);
        cfg.noise.shot_scale = f64::INFINITY;
        cfg.data_dir = Some("/tmp/m".into());
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let def = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&def.to_text()).unwrap(), def);
    }

    #[test]
    fn task_labels() {
        assert_eq!(task_label(&[0, 1]), "0-1");
        assert_eq!(task_label(&(0..10).collect::<Vec<_>>()), "0-9");
        assert_eq!(task_label(&[2, 5, 7]), "2_5_7");
        assert_eq!(parse_task("2_5_7").unwrap(), vec![2, 5, 7]);
        assert!(parse_task("3").is_err());
        assert!(parse_task("4-2").is_err());
    }
}
