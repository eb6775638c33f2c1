//! Frame exchange on disk: binary PGM (`P5`) images plus a `labels.txt`
//! sidecar with one class id per line, in frame order.
//!
//! A directory in this layout is interchangeable with a simulated dataset,
//! so frames captured on real hardware can be dropped in.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::mnist::{ClassId, LabeledDataset};

pub const LABELS_FILE: &str = "labels.txt";

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

/// Parses a binary PGM with maxval up to 65535 (two-byte big-endian samples
/// above 255). Intensities are scaled to `[0, 1]` by the maxval.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("PGM header ended early".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Format("not a binary PGM (missing P5 magic)".into()));
    }
    let num = |t: String| -> Result<usize> {
        t.parse().map_err(|_| Error::Format(format!("bad PGM header field {t:?}")))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} outside [1, 65535]")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let sample = if maxval > 255 { 2 } else { 1 };
    let needed = start + width * height * sample;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: format!("PGM raster {width}x{height}"),
            needed,
            available: bytes.len(),
        });
    }
    let raster = &bytes[start..needed];
    let scale = 1.0 / maxval as f64;
    let values: Vec<f64> = if sample == 1 {
        raster.iter().map(|&b| b as f64 * scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    if values.iter().any(|&v| v > 1.0) {
        return Err(Error::Format(format!("PGM sample exceeds maxval {maxval}")));
    }
    GrayImage::new(width, height, values.into_iter().map(|v| v as f32).collect())
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:06}.pgm")
}

/// Writes `frame_000000.pgm, ...` and `labels.txt` into `dir`.
pub fn write_frame_dir(dir: &Path, dataset: &LabeledDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = String::new();
    for (i, (img, label)) in dataset.images().iter().zip(dataset.labels()).enumerate() {
        write_pgm(&dir.join(frame_name(i)), img)?;
        writeln!(labels, "{label}").unwrap();
    }
    let path = dir.join(LABELS_FILE);
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<ClassId>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<ClassId>()
                .ok()
                .filter(|&c| c <= 9)
                .ok_or_else(|| Error::Format(format!("{}: line {} is not a class id: {l:?}", path.display(), i + 1)))
        })
        .collect()
}

/// Loads a frame directory: every `*.pgm` in lexicographic order, paired with
/// the lines of `labels.txt`.
pub fn read_frame_dir(dir: &Path) -> Result<LabeledDataset> {
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    if files.len() != labels.len() {
        return Err(Error::Format(format!(
            "{}: {} PGM frames but {} labels",
            dir.display(),
            files.len(),
            labels.len()
        )));
    }
    let images = files.iter().map(|p| read_pgm(p)).collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_8bit() {
        let img = GrayImage::from_clamped(3, 2, [0.0, 1.0, 128.0 / 255.0, 3.0 / 255.0, 0.5, 1.0]);
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        assert_eq!(back.dims(), (3, 2));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn pgm_16bit_and_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0]);
    }

    #[test]
    fn pgm_errors() {
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0"), Err(Error::Format(_))));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\x00"), Err(Error::Truncated { .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1\n100\n\xff"), Err(Error::Format(_))));
    }

    #[test]
    fn frame_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images = vec![GrayImage::from_clamped(2, 2, [0.0, 0.2, 0.4, 1.0]); 3];
        let ds = LabeledDataset::new(images, vec![3, 0, 9]).unwrap();
        write_frame_dir(dir.path(), &ds).unwrap();
        let back = read_frame_dir(dir.path()).unwrap();
        assert_eq!(back.labels(), &[3, 0, 9]);
        assert_eq!(back.len(), 3);
    }

    #[test]
    fn frame_dir_label_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = LabeledDataset::new(vec![GrayImage::zeros(2, 2)], vec![1]).unwrap();
        write_frame_dir(dir.path(), &ds).unwrap();
        fs::write(dir.path().join(LABELS_FILE), "1\n2\n").unwrap();
        assert!(matches!(read_frame_dir(dir.path()), Err(Error::Format(_))));
    }
}
