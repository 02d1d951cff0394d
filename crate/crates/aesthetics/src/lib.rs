//! Multi-column convolutional image aesthetics assessment.
//!
//! The pipeline classifies photographs as high or low aesthetic quality:
//! vote-histogram metadata is binarized into two classes, each image is expanded
//! into a menu of preprocessed views (resized original, zero-padded square,
//! center crop, separation-constrained random crops, and two static saliency
//! maps), and one, two or three CNN columns consume those views. Column
//! features are concatenated into a fused classifier that is trained in
//! stages: classifier head first, then the top convolutional blocks.

pub mod ava;
pub mod backbones;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod geometry;
pub mod multicolumn;
pub mod nn;
pub mod report;
pub mod saliency;
pub mod train;

pub use config::{Config, Profile};
pub use geometry::ImagePlane;
