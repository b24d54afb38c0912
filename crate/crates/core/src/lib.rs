//! Keypoint recognition with random ferns.
//!
//! A model image's stable corners become classes. Each class is trained from
//! patches cut out of randomly warped copies of the model image: groups of
//! binary pixel-pair tests (ferns) turn a patch into small integers, and the
//! per-class histograms of those integers give a semi-naive Bayes
//! classifier. At run time every detected corner of a test image is
//! classified and the resulting model/test correspondences are verified with
//! a RANSAC homography.
//!
//! Modules, bottom up:
//!
//! - [`image`]: grayscale rasters, PGM I/O, smoothing, patches.
//! - [`detect`]: Shi-Tomasi corners with non-maximum suppression.
//! - [`warp`]: random affine training views and point mapping.
//! - [`fern`]: binary tests grouped into ferns.
//! - [`classifier`]: count tables, regularized log-probabilities, argmax.
//! - [`train`]: stable keypoint selection and model training.
//! - [`geometry`]: correspondences, DLT, RANSAC.
//! - [`model_io`]: the `FERN` binary model file.
//! - [`ncc`]: normalized cross-correlation baseline.

// `!(x > 0.0)` is used so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod detect;
pub mod error;
pub mod fern;
pub mod geometry;
pub mod image;
pub mod model_io;
pub mod ncc;
pub mod synth;
pub mod train;
pub mod warp;

pub use classifier::{Classification, ClassifierTable, FernCounts};
pub use detect::{detect_keypoints, DetectorParams, Keypoint};
pub use error::{Error, Result};
pub use fern::{build_ensemble, compute_feature, fern_value, Fern, FernEnsemble, FernTestPair};
pub use geometry::{
    collect_correspondences, estimate_homography_dlt, ransac_homography, Correspondence, Homography,
    RansacFit, RansacParams,
};
pub use image::{extract_patch, gaussian_smooth, load_pgm, sample_bilinear, save_pgm, GrayImage, Patch};
pub use model_io::{load_model, save_model};
pub use ncc::{ncc_baseline_classify, NccMatcher};
pub use train::{
    select_stable_keypoints, train_model, training_report, PatchClass, Seeds, TrainedModel, TrainingConfig,
    TrainingReport,
};
pub use warp::{apply_warp, map_point, map_point_inverse, sample_warp, Interval, WarpParams, WarpRanges};
