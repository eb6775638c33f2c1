//! The accuracy-versus-training-size experiment.
//!
//! Cells are grouped by (task, repeat). A group shuffles the task's pool once
//! and cuts it into a test block, a validation block and a training block,
//! each sized for the largest cell; smaller cells take prefixes. Every image
//! of a group is simulated and described once, and with the default `group`
//! vocabulary scope the vocabulary is fitted once on a class-balanced subset
//! of the training block.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bovw::{kmeans_fit, Vocabulary};
use crate::classifiers::{select_best, train_roster, CandidateScore, ModelKind, TrainedModel};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::mnist::{ClassId, LabeledDataset, Mnist};
use crate::optics::{build_sensor_model, simulate_frame, NoiseConfig, SensorModel};
use crate::par;
use crate::seed;
use crate::surf::{extract_features, Descriptor, FeatureParams};

use super::config::{task_label, DataSplit, ExperimentConfig, VocabScope};

const TAG_SIM: u64 = 0x5349_4d;
const TAG_SPLIT: u64 = 0x5350_4c;
const TAG_VOCAB: u64 = 0x564f_43;

/// One (task, n_train, repeat) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub task: String,
    pub n_classes: usize,
    pub n_train: usize,
    pub repeat: usize,
    pub seed: u64,
    /// Kind of the selected model.
    pub classifier: ModelKind,
    /// Test accuracy of the selected model.
    pub accuracy: f64,
    /// Best validation accuracy among SVM entries (NaN if none ran).
    pub val_accuracy_svm: f64,
    pub val_accuracy_knn: f64,
    pub val_accuracy_tree: f64,
    pub wall_s: f64,
}

/// Source images: the official training file followed by the official test
/// file.
#[derive(Debug, Clone)]
pub struct SourceData {
    pub images: LabeledDataset,
    /// Index of the first official test image.
    pub test_start: usize,
}

impl SourceData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.resolve_data_dir();
        let m = Mnist::load(&dir)?;
        let test_start = m.train.len();
        log::info!("loaded {} + {} source images from {}", m.train.len(), m.test.len(), dir.display());
        Ok(Self {
            images: m.pooled()?,
            test_start,
        })
    }

    /// Treats `images` as one pool with no official test part.
    pub fn from_dataset(images: LabeledDataset) -> Self {
        let test_start = images.len();
        Self { images, test_start }
    }
}

/// Sensor model, noise and feature settings shared by every frame.
pub struct FramePipeline {
    pub sensor: SensorModel,
    pub noise: NoiseConfig,
    pub features: FeatureParams,
    /// Frame `i` of the source is captured with seed `sim_seed ^ i`.
    pub sim_seed: u64,
}

impl FramePipeline {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            sensor: build_sensor_model(&cfg.capture)?,
            noise: cfg.noise,
            features: cfg.features.clone(),
            sim_seed: seed::derive(cfg.master_seed, &[TAG_SIM]),
        })
    }

    pub fn frame(&self, source: &LabeledDataset, index: usize) -> Result<GrayImage> {
        simulate_frame(&source.images()[index], index, &self.sensor, &self.noise, self.sim_seed)
    }

    /// Descriptors of the frames of `indices`, in order.
    pub fn describe(&self, source: &LabeledDataset, indices: &[usize]) -> Result<Vec<Vec<Descriptor>>> {
        par::map(indices, |_, &i| Ok(extract_features(&self.frame(source, i)?, &self.features)))
            .into_iter()
            .collect()
    }
}

/// Up to `m` indices from `indices` with classes as balanced as the supply
/// allows. Quota shortfalls are filled in order; output keeps input order.
pub fn balanced_subset(indices: &[usize], labels: &[ClassId], classes: &[ClassId], m: usize) -> Vec<usize> {
    let m = m.min(indices.len());
    let k = classes.len().max(1);
    let quota = |pos: usize| m / k + usize::from(pos < m % k);
    let mut taken = vec![false; indices.len()];
    let mut count = vec![0usize; k];
    let mut total = 0;
    for (t, &i) in indices.iter().enumerate() {
        if let Ok(pos) = classes.binary_search(&labels[i]) {
            if count[pos] < quota(pos) {
                count[pos] += 1;
                taken[t] = true;
                total += 1;
            }
        }
    }
    for flag in taken.iter_mut() {
        if total == m {
            break;
        }
        if !*flag {
            *flag = true;
            total += 1;
        }
    }
    indices.iter().zip(&taken).filter(|(_, &t)| t).map(|(&i, _)| i).collect()
}

/// Images and features of one (task, repeat) group.
pub struct PreparedGroup {
    pub task: Vec<ClassId>,
    pub repeat: usize,
    pub seed: u64,
    pub test: Vec<usize>,
    /// Validation block sized for the largest cell.
    pub validation: Vec<usize>,
    /// Training block sized for the largest cell.
    pub train: Vec<usize>,
    descriptors: HashMap<usize, Vec<Descriptor>>,
    /// Vocabulary shared by all cells (group scope only).
    group_vocab: Option<(Arc<Vocabulary>, Vec<usize>, HashMap<usize, Vec<f64>>)>,
}

impl PreparedGroup {
    pub fn descriptors(&self, index: usize) -> &[Descriptor] {
        &self.descriptors[&index]
    }
}

fn shuffled_pool(labels: &[ClassId], task: &[ClassId], range: std::ops::Range<usize>, seed: u64) -> Vec<usize> {
    let mut pool: Vec<usize> = range.filter(|&i| task.binary_search(&labels[i]).is_ok()).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool
}

/// Fits a vocabulary on the descriptors of `images`.
fn fit_vocabulary(cfg: &ExperimentConfig, group: &PreparedGroup, images: &[usize], seed: u64) -> Result<Vocabulary> {
    let descriptors: Vec<Descriptor> = images.iter().flat_map(|i| group.descriptors[i].iter().copied()).collect();
    let mut vocab = kmeans_fit(&descriptors, cfg.vocab.k, seed, cfg.vocab.max_iters, cfg.vocab.rel_tol)
        .map_err(|e| match e {
            Error::Capacity(m) => Error::Capacity(format!(
                "task {} repeat {}: vocabulary from {} images: {m}",
                task_label(&group.task),
                group.repeat,
                images.len()
            )),
            other => other,
        })?;
    vocab.meta.n_images_used = images.len();
    log::info!(
        "task {} repeat {}: vocabulary K={} from {} images ({} descriptors), {} iterations",
        task_label(&group.task),
        group.repeat,
        vocab.k(),
        images.len(),
        descriptors.len(),
        vocab.meta.iterations_run
    );
    Ok(vocab)
}

fn encode_all(vocab: &Vocabulary, group: &PreparedGroup, indices: &[usize]) -> HashMap<usize, Vec<f64>> {
    let bows = par::map(indices, |_, i| vocab.encode(&group.descriptors[i]).weights);
    indices.iter().copied().zip(bows).collect()
}

pub fn prepare_group(
    cfg: &ExperimentConfig,
    source: &SourceData,
    pipeline: &FramePipeline,
    task_index: usize,
    repeat: usize,
) -> Result<PreparedGroup> {
    let task = cfg.tasks[task_index].clone();
    let label = task_label(&task);
    let group_seed = seed::derive(cfg.master_seed, &[TAG_SPLIT, task_index as u64, repeat as u64]);
    let labels = source.images.labels();
    let max_train = *cfg.train_sizes.last().expect("validated nonempty");
    let max_val = cfg.n_val(max_train);

    let (test, rest) = match cfg.data_split {
        DataSplit::Pooled => {
            let pool = shuffled_pool(labels, &task, 0..labels.len(), group_seed);
            let cut = cfg.n_test.min(pool.len());
            (pool[..cut].to_vec(), pool[cut..].to_vec())
        }
        DataSplit::Original => {
            let test = shuffled_pool(labels, &task, source.test_start..labels.len(), group_seed ^ 1);
            let rest = shuffled_pool(labels, &task, 0..source.test_start, group_seed);
            (test, rest)
        }
    };
    if test.len() < cfg.n_test {
        return Err(Error::Capacity(format!(
            "task {label}: {} test images available, {} requested",
            test.len(),
            cfg.n_test
        )));
    }
    let test = test[..cfg.n_test].to_vec();
    if let Some(&n) = cfg.train_sizes.iter().find(|&&n| max_val + n > rest.len()) {
        return Err(Error::Capacity(format!(
            "task {label}, n_train {n}: {} images left after the test split, {} needed ({n} train + {max_val} validation)",
            rest.len(),
            n + max_val
        )));
    }
    let validation = rest[..max_val].to_vec();
    let train = rest[max_val..max_val + max_train].to_vec();

    let all: Vec<usize> = test.iter().chain(&validation).chain(&train).copied().collect();
    let started = Instant::now();
    let described = pipeline.describe(&source.images, &all)?;
    let n_desc: usize = described.iter().map(Vec::len).sum();
    log::info!(
        "task {label} repeat {repeat}: simulated and described {} frames in {:.1} s ({:.1} features/image)",
        all.len(),
        started.elapsed().as_secs_f64(),
        n_desc as f64 / all.len().max(1) as f64
    );
    let mut group = PreparedGroup {
        task,
        repeat,
        seed: group_seed,
        test,
        validation,
        train,
        descriptors: all.iter().copied().zip(described).collect(),
        group_vocab: None,
    };
    if cfg.vocab.scope == VocabScope::Group {
        let images = balanced_subset(&group.train, labels, &group.task, cfg.vocab.subset);
        let vocab_seed = seed::derive(group_seed, &[TAG_VOCAB, cfg.vocab.seed]);
        let vocab = fit_vocabulary(cfg, &group, &images, vocab_seed)?;
        let bows = encode_all(&vocab, &group, &all);
        group.group_vocab = Some((Arc::new(vocab), images, bows));
    }
    Ok(group)
}

/// Everything one cell produced.
pub struct CellResult {
    pub row: ResultRow,
    pub model: TrainedModel,
    pub vocab: Arc<Vocabulary>,
    pub scores: Vec<CandidateScore>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub vocab_indices: Vec<usize>,
}

pub fn run_cell(cfg: &ExperimentConfig, source: &SourceData, group: &PreparedGroup, n_train: usize) -> Result<CellResult> {
    let started = Instant::now();
    let labels = source.images.labels();
    if n_train > group.train.len() {
        return Err(Error::Capacity(format!(
            "task {}, n_train {n_train}: only {} training images prepared",
            task_label(&group.task),
            group.train.len()
        )));
    }
    let train = &group.train[..n_train];
    let validation = &group.validation[..cfg.n_val(n_train).min(group.validation.len())];

    let cell_vocab;
    let (vocab, vocab_images, bows) = match &group.group_vocab {
        Some((v, imgs, bows)) => (v.clone(), imgs.clone(), bows),
        None => {
            let images = balanced_subset(train, labels, &group.task, cfg.vocab.subset);
            let vocab_seed = seed::derive(group.seed, &[TAG_VOCAB, cfg.vocab.seed, n_train as u64]);
            let vocab = fit_vocabulary(cfg, group, &images, vocab_seed)?;
            let needed: Vec<usize> = group.test.iter().chain(validation).chain(train).copied().collect();
            cell_vocab = encode_all(&vocab, group, &needed);
            (Arc::new(vocab), images, &cell_vocab)
        }
    };

    let seen: HashSet<usize> = train.iter().chain(validation).chain(&vocab_images).copied().collect();
    assert!(
        group.test.iter().all(|i| !seen.contains(i)),
        "test images overlap training, validation or vocabulary images"
    );

    let gather = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<ClassId>) {
        (idx.iter().map(|i| bows[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (x_train, y_train) = gather(train);
    let (x_val, y_val) = gather(validation);
    let (x_test, y_test) = gather(&group.test);

    let roster = cfg.classifiers.to_roster()?;
    let candidates = train_roster(&x_train, &y_train, &roster).map_err(|e| match e {
        Error::Domain(m) => Error::Domain(format!("task {}, n_train {n_train}: {m}", task_label(&group.task))),
        other => other,
    })?;
    let (model, scores) = select_best(candidates, &x_val, &y_val)?;
    let accuracy = model.accuracy(&x_test, &y_test)?;
    let best_of = |kind: ModelKind| {
        scores
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.val_accuracy)
            .fold(f64::NAN, f64::max)
    };
    let elapsed = started.elapsed().as_secs_f64();
    log::info!(
        "task {} n_train {n_train} repeat {}: selected {} (val {:.4}), test accuracy {:.4}; {} classifier + {} vocabulary images; {:.1} s",
        task_label(&group.task),
        group.repeat,
        model.name,
        model.val_accuracy,
        accuracy,
        n_train,
        vocab_images.len(),
        elapsed
    );
    let row = ResultRow {
        task: task_label(&group.task),
        n_classes: group.task.len(),
        n_train,
        repeat: group.repeat,
        seed: group.seed,
        classifier: model.kind(),
        accuracy,
        val_accuracy_svm: best_of(ModelKind::SvmOvo),
        val_accuracy_knn: best_of(ModelKind::Knn),
        val_accuracy_tree: best_of(ModelKind::Tree),
        wall_s: if cfg.record_wall_time { elapsed } else { 0.0 },
    };
    Ok(CellResult {
        row,
        model,
        vocab,
        scores,
        train_indices: train.to_vec(),
        validation_indices: validation.to_vec(),
        vocab_indices: vocab_images,
    })
}

/// Runs every cell on already loaded source images. Rows come back sorted by
/// (task, n_train, repeat).
pub fn run_experiment_on(cfg: &ExperimentConfig, source: &SourceData) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let pipeline = FramePipeline::new(cfg)?;
    let mut rows = Vec::new();
    for task_index in 0..cfg.tasks.len() {
        for repeat in 0..cfg.n_repeats {
            let group = prepare_group(cfg, source, &pipeline, task_index, repeat)?;
            for &n in &cfg.train_sizes {
                rows.push(run_cell(cfg, source, &group, n)?.row);
            }
        }
    }
    super::report::sort_rows(&mut rows);
    for note in super::report::trend_notes(&rows) {
        log::warn!("{note}");
    }
    Ok(rows)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let source = SourceData::load(cfg)?;
    run_experiment_on(cfg, &source)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_subset_quotas() {
        let labels: Vec<ClassId> = vec![0, 0, 0, 0, 1, 1, 0, 1];
        let idx: Vec<usize> = (0..8).collect();
        assert_eq!(balanced_subset(&idx, &labels, &[0, 1], 4), vec![0, 1, 4, 5]);
        // class 1 is short: its missing slot is filled in order
        let short: Vec<ClassId> = vec![0, 0, 0, 0, 0, 1];
        assert_eq!(balanced_subset(&idx[..6], &short, &[0, 1], 4), vec![0, 1, 2, 5]);
        assert_eq!(balanced_subset(&idx, &labels, &[0, 1], 3), vec![0, 1, 4]);
        assert_eq!(balanced_subset(&idx, &labels, &[0, 1], 50), idx);
    }
}
