//! Model building: stable keypoint selection over random warps, then fern
//! histogram training on freshly warped views.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classification, ClassifierTable, FernCounts, DEFAULT_REGULARIZER};
use crate::detect::{detect_keypoints, DetectorParams, Keypoint};
use crate::error::{Error, Result};
use crate::fern::{build_ensemble, FernEnsemble};
use crate::image::{extract_patch, gaussian_smooth, GrayImage, Patch};
use crate::warp::{apply_warp, map_point, map_point_inverse, sample_warps, WarpParams, WarpRanges};

/// Maximum distance between a back-projected detection and a model keypoint
/// for the detection to count as a re-detection.
pub const VOTE_RADIUS: f64 = 2.0;

/// Blur applied to every image before patches are cut from it.
pub const PATCH_SMOOTHING_SIGMA: f64 = 1.0;

pub const DEFAULT_PATCH_SIDE: usize = 33;

/// RNG stream ids. Each purpose draws warps from its own ChaCha stream so the
/// sequences never overlap even under equal seeds.
pub const SELECTION_STREAM: u64 = 1;
pub const TRAINING_STREAM: u64 = 2;
pub const EVALUATION_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub selection: u64,
    pub training: u64,
    pub ensemble: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            selection: 1,
            training: 2,
            ensemble: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub ranges: WarpRanges,
    pub num_warps: usize,
    pub num_classes: usize,
    pub num_ferns: usize,
    pub bits_per_fern: usize,
    pub regularizer: f64,
    pub patch_side: usize,
    pub detector: DetectorParams,
    pub seeds: Seeds,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            ranges: WarpRanges::default(),
            num_warps: 1000,
            num_classes: 100,
            num_ferns: 30,
            bits_per_fern: 11,
            regularizer: DEFAULT_REGULARIZER,
            patch_side: DEFAULT_PATCH_SIDE,
            detector: DetectorParams::default(),
            seeds: Seeds::default(),
        }
    }
}

impl TrainingConfig {
    /// Detector settings with the border widened to fit a full patch.
    pub fn effective_detector(&self) -> DetectorParams {
        DetectorParams {
            border: self.detector.border.max(self.patch_side / 2),
            ..self.detector
        }
    }
}

/// One stable model keypoint and the class it defines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchClass {
    pub class_id: usize,
    pub model_point: (f64, f64),
    /// Fraction of selection warps that re-detected the keypoint.
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub classes: Vec<PatchClass>,
    pub ensemble: FernEnsemble,
    pub counts: FernCounts,
    pub table: ClassifierTable,
    /// Unwarped patch of each class, kept for the NCC baseline. Not persisted.
    pub reference_patches: Option<Vec<Patch>>,
    /// Not persisted.
    pub config: Option<TrainingConfig>,
}

impl TrainedModel {
    /// Assembles a model from its persisted parts and re-finalizes the table.
    pub fn from_parts(
        classes: Vec<PatchClass>,
        ensemble: FernEnsemble,
        counts: FernCounts,
        regularizer: f64,
    ) -> Result<Self> {
        if counts.num_classes() != classes.len()
            || counts.num_ferns() != ensemble.num_ferns()
            || counts.bits() != ensemble.bits()
        {
            return Err(Error::Configuration(format!(
                "counts are {}x{}x{}, ensemble {}x{}, {} classes",
                counts.num_ferns(),
                counts.bits(),
                counts.num_classes(),
                ensemble.num_ferns(),
                ensemble.bits(),
                classes.len()
            )));
        }
        let table = counts.finalize(regularizer)?;
        Ok(Self {
            classes,
            ensemble,
            counts,
            table,
            reference_patches: None,
            config: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn patch_side(&self) -> usize {
        self.ensemble.patch_side()
    }

    pub fn classify(&self, patch: &Patch) -> Result<Classification> {
        self.table.classify(&self.ensemble, patch)
    }

    /// Captures the model-image reference patch of every class.
    pub fn attach_reference_patches(&mut self, model_image: &GrayImage) -> Result<()> {
        let source = patch_source(model_image)?;
        let side = self.patch_side();
        let patches = self
            .classes
            .iter()
            .map(|c| extract_patch(&source, round_point(c.model_point), side))
            .collect::<Result<Vec<_>>>()?;
        self.reference_patches = Some(patches);
        Ok(())
    }
}

/// The smoothed image patches are read from.
pub fn patch_source(image: &GrayImage) -> Result<GrayImage> {
    gaussian_smooth(image, PATCH_SMOOTHING_SIGMA)
}

pub fn round_point(p: (f64, f64)) -> (i64, i64) {
    (p.0.round() as i64, p.1.round() as i64)
}

/// Detections of each warped view, back-projected into the model frame.
pub fn backprojected_detections(
    model: &GrayImage,
    warps: &[WarpParams],
    detector: &DetectorParams,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let center = model.center();
    warps
        .par_iter()
        .map(|w| {
            let warped = apply_warp(model, w);
            let found = detect_keypoints(&warped, detector)?;
            Ok(found
                .iter()
                .map(|k| map_point_inverse(w, center, (k.x as f64, k.y as f64)))
                .collect())
        })
        .collect()
}

/// Number of views in which each model keypoint has a detection within
/// `VOTE_RADIUS`. A view votes at most once per keypoint.
pub fn tally_votes(model_keypoints: &[Keypoint], views: &[Vec<(f64, f64)>]) -> Vec<usize> {
    let r2 = VOTE_RADIUS * VOTE_RADIUS;
    let per_view: Vec<Vec<bool>> = views
        .par_iter()
        .map(|dets| {
            model_keypoints
                .iter()
                .map(|k| {
                    let (kx, ky) = (k.x as f64, k.y as f64);
                    dets.iter().any(|&(x, y)| (x - kx).powi(2) + (y - ky).powi(2) <= r2)
                })
                .collect()
        })
        .collect();
    let mut votes = vec![0; model_keypoints.len()];
    for hits in per_view {
        for (v, hit) in votes.iter_mut().zip(hits) {
            *v += usize::from(hit);
        }
    }
    votes
}

/// Orders keypoints by votes, then detector score, then `(y, x)`, and keeps `h`.
pub fn rank_by_votes(model_keypoints: &[Keypoint], votes: &[usize], num_warps: usize, h: usize) -> Vec<PatchClass> {
    let mut order: Vec<usize> = (0..model_keypoints.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (&model_keypoints[a], &model_keypoints[b]);
        votes[b]
            .cmp(&votes[a])
            .then(kb.score.total_cmp(&ka.score))
            .then(ka.y.cmp(&kb.y))
            .then(ka.x.cmp(&kb.x))
    });
    order
        .into_iter()
        .take(h)
        .enumerate()
        .map(|(class_id, i)| PatchClass {
            class_id,
            model_point: (model_keypoints[i].x as f64, model_keypoints[i].y as f64),
            stability: if num_warps == 0 {
                0.0
            } else {
                votes[i] as f64 / num_warps as f64
            },
        })
        .collect()
}

/// Picks the `h` model keypoints most often re-detected across random warps.
pub fn select_stable_keypoints(
    model: &GrayImage,
    ranges: &WarpRanges,
    num_warps: usize,
    h: usize,
    detector: &DetectorParams,
    seed: u64,
) -> Result<Vec<PatchClass>> {
    ranges.validate()?;
    if h == 0 {
        return Err(Error::Configuration("need at least one class".into()));
    }
    let model_keypoints = detect_keypoints(model, detector)?;
    if model_keypoints.len() < h {
        return Err(Error::InsufficientKeypoints {
            requested: h,
            available: model_keypoints.len(),
        });
    }
    let warps = sample_warps(ranges, num_warps, seed, SELECTION_STREAM);
    let views = backprojected_detections(model, &warps, detector)?;
    let votes = tally_votes(&model_keypoints, &views);
    Ok(rank_by_votes(&model_keypoints, &votes, num_warps, h))
}

/// Fern values of every class patch visible in one warped view.
fn view_samples(
    model: &GrayImage,
    warp: &WarpParams,
    classes: &[PatchClass],
    ensemble: &FernEnsemble,
) -> Result<Vec<(usize, Vec<u32>)>> {
    let source = patch_source(&apply_warp(model, warp))?;
    let center = model.center();
    let side = ensemble.patch_side();
    let mut out = Vec::with_capacity(classes.len());
    for class in classes {
        let at = round_point(map_point(warp, center, class.model_point));
        if !source.admits_patch(at.0, at.1, side) {
            continue;
        }
        let patch = extract_patch(&source, at, side)?;
        out.push((class.class_id, ensemble.fern_values(&patch)));
    }
    Ok(out)
}

pub fn train_model(model: &GrayImage, config: &TrainingConfig) -> Result<TrainedModel> {
    let detector = config.effective_detector();
    let classes = select_stable_keypoints(
        model,
        &config.ranges,
        config.num_warps,
        config.num_classes,
        &detector,
        config.seeds.selection,
    )?;
    let ensemble = build_ensemble(
        config.num_ferns,
        config.bits_per_fern,
        config.patch_side,
        config.seeds.ensemble,
    )?;
    let mut counts = FernCounts::new(config.num_ferns, config.bits_per_fern, classes.len())?;

    let warps = sample_warps(&config.ranges, config.num_warps, config.seeds.training, TRAINING_STREAM);
    let views: Vec<_> = warps
        .par_iter()
        .map(|w| view_samples(model, w, &classes, &ensemble))
        .collect::<Result<_>>()?;
    // Single writer; views are folded in warp order.
    for samples in views {
        for (class_id, values) in samples {
            counts.accumulate_values(&values, class_id)?;
        }
    }

    let mut trained = TrainedModel::from_parts(classes, ensemble, counts, config.regularizer)?;
    trained.attach_reference_patches(model)?;
    trained.config = Some(config.clone());
    Ok(trained)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub model_x: f64,
    pub model_y: f64,
    pub stability: f64,
    pub samples: u32,
    pub empty_bin_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub num_ferns: usize,
    pub bits_per_fern: usize,
    pub num_classes: usize,
    pub regularizer: f64,
    pub total_samples: u64,
    pub empty_bin_fraction: f64,
    /// Classes that received no training patch.
    pub untrained_classes: Vec<usize>,
    pub classes: Vec<ClassReport>,
}

pub fn training_report(model: &TrainedModel) -> TrainingReport {
    let counts = &model.counts;
    let (m, bins, h) = (counts.num_ferns(), counts.bins(), counts.num_classes());
    let mut empty = vec![0usize; h];
    for row in counts.raw_counts().chunks_exact(h) {
        for (e, &c) in empty.iter_mut().zip(row) {
            *e += usize::from(c == 0);
        }
    }
    let cells = (m * bins) as f64;
    let classes: Vec<ClassReport> = model
        .classes
        .iter()
        .map(|c| ClassReport {
            class_id: c.class_id,
            model_x: c.model_point.0,
            model_y: c.model_point.1,
            stability: c.stability,
            samples: counts.totals()[c.class_id],
            empty_bin_fraction: empty[c.class_id] as f64 / cells,
        })
        .collect();
    TrainingReport {
        num_ferns: m,
        bits_per_fern: counts.bits(),
        num_classes: h,
        regularizer: model.table.regularizer(),
        total_samples: counts.totals().iter().map(|&t| t as u64).sum(),
        empty_bin_fraction: empty.iter().sum::<usize>() as f64 / (cells * h as f64),
        untrained_classes: classes.iter().filter(|c| c.samples == 0).map(|c| c.class_id).collect(),
        classes,
    }
}
