//! MNIST IDX parsing, labeled datasets and seeded train/validation/test splits.
//!
//! IDX files are big-endian: a 32-bit magic (`0x00000803` for images,
//! `0x00000801` for labels), one 32-bit size per dimension, then raw unsigned
//! bytes. Pixel bytes map to intensities by `byte / 255`.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Digit class id in `[0, 9]`.
pub type ClassId = u8;

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            what: what.to_string(),
            needed: offset + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = read_be_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(Error::Format(format!(
            "{what}: magic 0x{magic:08x}, expected 0x{expected:08x}"
        )));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<GrayImage>> {
    const WHAT: &str = "IDX image file";
    check_magic(bytes, IDX_IMAGES_MAGIC, WHAT)?;
    let count = read_be_u32(bytes, 4, WHAT)? as usize;
    let rows = read_be_u32(bytes, 8, WHAT)? as usize;
    let cols = read_be_u32(bytes, 12, WHAT)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("{WHAT}: zero-sized images ({rows}x{cols})")));
    }
    let pixels = rows * cols;
    let needed = count
        .checked_mul(pixels)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::Format(format!("{WHAT}: declared size overflows")))?;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: format!("{WHAT} ({count} images of {rows}x{cols})"),
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[16..needed]
        .chunks_exact(pixels)
        .map(|chunk| {
            GrayImage::from_clamped(cols, rows, chunk.iter().map(|&b| b as f64 / 255.0))
        })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<ClassId>> {
    const WHAT: &str = "IDX label file";
    check_magic(bytes, IDX_LABELS_MAGIC, WHAT)?;
    let count = read_be_u32(bytes, 4, WHAT)? as usize;
    let needed = count + 8;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: format!("{WHAT} ({count} labels)"),
            needed,
            available: bytes.len(),
        });
    }
    let labels = &bytes[8..needed];
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(Error::Domain(format!("label {i} is {l}, outside [0, 9]")));
    }
    Ok(labels.to_vec())
}

/// Serializes images to IDX bytes, quantizing intensities to `round(v * 255)`.
/// All images must share dimensions.
pub fn write_idx_images(images: &[GrayImage]) -> Result<Vec<u8>> {
    let (cols, rows) = images.first().map(GrayImage::dims).unwrap_or((0, 0));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        if img.dims() != (cols, rows) {
            return Err(Error::shape(format!("{cols}x{rows}"), format!("{}x{}", img.width(), img.height())));
        }
        out.extend(img.data().iter().map(|&v| (v * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_idx_labels(labels: &[ClassId]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Images with one class id each. All images share dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<GrayImage>,
    labels: Vec<ClassId>,
    class_set: Vec<ClassId>,
}

impl LabeledDataset {
    pub fn new(images: Vec<GrayImage>, labels: Vec<ClassId>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape(
                format!("{} labels", images.len()),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|i| i.dims() != first.dims()) {
                return Err(Error::shape(
                    format!("{}x{}", first.width(), first.height()),
                    format!("{}x{}", bad.width(), bad.height()),
                ));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Domain(format!("label {l} outside [0, 9]")));
        }
        let class_set = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        Ok(Self {
            images,
            labels,
            class_set,
        })
    }

    pub fn empty() -> Self {
        Self {
            images: Vec::new(),
            labels: Vec::new(),
            class_set: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    /// Sorted distinct labels present.
    pub fn class_set(&self) -> &[ClassId] {
        &self.class_set
    }

    /// Image dimensions, `None` when empty.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(GrayImage::dims)
    }

    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let images = indices.iter().map(|&i| self.images[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(images, labels).expect("subset of a valid dataset is valid")
    }

    /// Concatenates two datasets of equal image dimensions.
    pub fn concat(mut self, other: LabeledDataset) -> Result<LabeledDataset> {
        self.images.extend(other.images);
        self.labels.extend(other.labels);
        LabeledDataset::new(self.images, self.labels)
    }

    pub fn class_counts(&self) -> [usize; 10] {
        let mut counts = [0; 10];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Train/validation/test partition of one source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    pub seed: u64,
    pub class_subset: Vec<ClassId>,
    /// Source indices of each partition, in partition order.
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Source indices chosen by [`make_split`], without copying any images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn normalize_subset(class_subset: &[ClassId]) -> Result<Vec<ClassId>> {
    let subset: Vec<ClassId> = class_subset.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if subset.is_empty() {
        return Err(Error::Domain("class subset is empty".into()));
    }
    if let Some(&c) = subset.iter().find(|&&c| c > 9) {
        return Err(Error::Domain(format!("class {c} outside [0, 9]")));
    }
    Ok(subset)
}

/// Seeded shuffle of the class-filtered indices, cut into consecutive
/// train/validation/test runs. Calls that differ only in the counts share a
/// shuffle, so smaller splits are prefixes of larger ones.
pub fn split_indices(
    labels: &[ClassId],
    class_subset: &[ClassId],
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitIndices> {
    let subset = normalize_subset(class_subset)?;
    let mut pool: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| subset.binary_search(l).is_ok())
        .map(|(i, _)| i)
        .collect();
    let needed = n_train + n_val + n_test;
    if pool.len() < needed {
        return Err(Error::Capacity(format!(
            "classes {subset:?} have {} items available, {needed} requested \
             ({n_train} train + {n_val} validation + {n_test} test)",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    Ok(SplitIndices {
        train: pool[..n_train].to_vec(),
        validation: pool[n_train..n_train + n_val].to_vec(),
        test: pool[n_train + n_val..needed].to_vec(),
    })
}

pub fn make_split(
    dataset: &LabeledDataset,
    class_subset: &[ClassId],
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Split> {
    let idx = split_indices(dataset.labels(), class_subset, n_train, n_val, n_test, seed)?;
    let split = Split {
        train: dataset.select(&idx.train),
        validation: dataset.select(&idx.validation),
        test: dataset.select(&idx.test),
        seed,
        class_subset: normalize_subset(class_subset)?,
        train_indices: idx.train,
        validation_indices: idx.validation,
        test_indices: idx.test,
    };
    log::debug!(
        "split seed={seed}: train class counts {:?}, validation {:?}, test {:?}",
        split.train.class_counts(),
        split.validation.class_counts(),
        split.test.class_counts()
    );
    Ok(split)
}

/// Reads a file, inflating it when it carries the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Locates `stem` in `dir`, accepting the bare name, the official
/// `-idx3-ubyte`/`-idx1-ubyte` suffixes, and `.gz` variants of each.
pub fn find_mnist_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let idx_suffix = if stem.ends_with("images") { "-idx3-ubyte" } else { "-idx1-ubyte" };
    let candidates = [
        stem.to_string(),
        format!("{stem}.gz"),
        format!("{stem}{idx_suffix}"),
        format!("{stem}{idx_suffix}.gz"),
        format!("{stem}.{}", &idx_suffix[1..]),
        format!("{stem}.{}.gz", &idx_suffix[1..]),
    ];
    candidates
        .iter()
        .map(|c| dir.join(c))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join(stem),
                std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
            )
        })
}

pub fn load_idx_pair(dir: &Path, images: &str, labels: &str) -> Result<LabeledDataset> {
    let img_path = find_mnist_file(dir, images)?;
    let lbl_path = find_mnist_file(dir, labels)?;
    let imgs = parse_idx_images(&read_maybe_gz(&img_path)?)?;
    let lbls = parse_idx_labels(&read_maybe_gz(&lbl_path)?)?;
    LabeledDataset::new(imgs, lbls)
}

/// The two official MNIST partitions.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl Mnist {
    /// Loads `train-images`, `train-labels`, `t10k-images` and `t10k-labels`
    /// from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            train: load_idx_pair(dir, "train-images", "train-labels")?,
            test: load_idx_pair(dir, "t10k-images", "t10k-labels")?,
        })
    }

    /// Train followed by test: the 70,000-image pool.
    pub fn pooled(self) -> Result<LabeledDataset> {
        self.train.concat(self.test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn minimal_image_file() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[1, 1, 2]);
        bytes.extend_from_slice(&[0, 255]);
        assert_eq!(bytes.len(), 18);
        let imgs = parse_idx_images(&bytes).unwrap();
        assert_eq!(imgs.len(), 1);
        assert_eq!(imgs[0].dims(), (2, 1));
        assert_eq!(imgs[0].data(), &[0.0, 1.0]);
    }

    #[test]
    fn truncated_image_payload() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[1, 1, 2]);
        bytes.push(0);
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Truncated { needed: 18, available: 17, .. })));
        assert!(matches!(parse_idx_images(&bytes[..10]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn wrong_magic() {
        let bytes = header(IDX_LABELS_MAGIC, &[1, 1, 2, 0]);
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format(_))));
        let bytes = header(IDX_IMAGES_MAGIC, &[0]);
        assert!(matches!(parse_idx_labels(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn minimal_label_file() {
        let mut bytes = header(IDX_LABELS_MAGIC, &[3]);
        bytes.extend_from_slice(&[0, 1, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![0, 1, 9]);
        *bytes.last_mut().unwrap() = 12;
        assert!(matches!(parse_idx_labels(&bytes), Err(Error::Domain(_))));
        bytes.pop();
        assert!(matches!(parse_idx_labels(&bytes), Err(Error::Truncated { .. })));
    }

    fn toy() -> LabeledDataset {
        let images = (0..10).map(|i| GrayImage::from_clamped(1, 1, [i as f64 / 10.0])).collect();
        let labels = (0..10).map(|i| (i % 2) as u8).collect();
        LabeledDataset::new(images, labels).unwrap()
    }

    #[test]
    fn toy_split_is_disjoint_and_filtered() {
        let ds = toy();
        let s = make_split(&ds, &[0, 1], 4, 2, 2, 7).unwrap();
        let mut all: Vec<usize> = s.train_indices.iter().chain(&s.validation_indices).chain(&s.test_indices).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 8);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (4, 2, 2));
        for part in [&s.train, &s.validation, &s.test] {
            assert!(part.labels().iter().all(|l| *l <= 1));
        }
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy();
        assert_eq!(make_split(&ds, &[0, 1], 4, 2, 2, 99).unwrap(), make_split(&ds, &[0, 1], 4, 2, 2, 99).unwrap());
    }

    #[test]
    fn split_capacity_error_reports_available() {
        let ds = toy();
        match make_split(&ds, &[1], 4, 1, 1, 0) {
            Err(Error::Capacity(msg)) => assert!(msg.contains("5 items available"), "{msg}"),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn split_filters_classes() {
        let ds = toy();
        let s = make_split(&ds, &[1], 2, 1, 1, 3).unwrap();
        assert!(s.train.labels().iter().chain(s.test.labels()).all(|&l| l == 1));
    }
}
