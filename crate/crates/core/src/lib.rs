//! Lensless-camera digit classification.
//!
//! A bare sensor facing an LCD records a heavily mixed intensity pattern
//! instead of a focused image. This crate simulates such captures of MNIST
//! digits, turns frames into bag-of-visual-words vectors over SURF
//! descriptors, trains classical classifiers on them, and regenerates the
//! accuracy-versus-training-set-size experiment.
//!
//! Pipeline: [`mnist`] → [`optics`] → [`surf`] → [`bovw`] → [`classifiers`],
//! orchestrated by [`harness`].

pub mod bovw;
pub mod classifiers;
pub mod error;
pub mod frames;
pub mod harness;
pub mod image;
pub mod mnist;
pub mod optics;
mod par;
pub mod seed;
pub mod surf;

pub use error::{Error, Result};
pub use image::GrayImage;
pub use mnist::{ClassId, LabeledDataset, Split};
