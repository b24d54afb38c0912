//! Held-out-warp evaluation of ferns against the NCC baseline.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use fernmatch_core::detect::{detect_keypoints, DetectorParams, Keypoint};
use fernmatch_core::geometry::{detector_for_patches, ransac_homography, Correspondence, RansacParams};
use fernmatch_core::image::{extract_patch, GrayImage, Patch};
use fernmatch_core::ncc::NccMatcher;
use fernmatch_core::train::{patch_source, round_point, TrainedModel, EVALUATION_STREAM};
use fernmatch_core::warp::{apply_warp, map_point, sample_warps, WarpParams, WarpRanges};
use fernmatch_core::Result;

pub const EVAL_CSV_HEADER: &str =
    "frame,method,num_keypoints,num_correspondences,num_inliers,num_visible,num_detected,num_recognized,recognition_rate,classify_us";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ferns,
    Ncc,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Ferns => "ferns",
            Method::Ncc => "ncc",
        }
    }
}

/// One frame scored by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub frame: usize,
    pub method: Method,
    pub num_keypoints: usize,
    pub num_correspondences: usize,
    pub num_inliers: usize,
    /// Classes whose true position admits a patch in the frame.
    pub num_visible: usize,
    /// Visible classes with a detected keypoint within the recognition radius.
    pub num_detected: usize,
    /// Detected classes whose keypoint was labeled with the right class.
    pub num_recognized: usize,
    pub classify_us: f64,
}

impl EvalRecord {
    /// `recognized / detected`, or 0 when nothing was detected.
    pub fn recognition_rate(&self) -> f64 {
        if self.num_detected == 0 {
            0.0
        } else {
            self.num_recognized as f64 / self.num_detected as f64
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.6},{:.3}",
            self.frame,
            self.method.tag(),
            self.num_keypoints,
            self.num_correspondences,
            self.num_inliers,
            self.num_visible,
            self.num_detected,
            self.num_recognized,
            self.recognition_rate(),
            self.classify_us
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Mean per-frame recognition rate over frames with at least one
    /// detected class.
    pub mean_recognition_rate: f64,
    pub mean_inliers: f64,
    pub mean_correspondences: f64,
    pub mean_classify_us_per_keypoint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub ferns: MethodSummary,
    pub ncc: MethodSummary,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub warps: Vec<WarpParams>,
    pub records: Vec<EvalRecord>,
    pub summary: EvalSummary,
}

impl EvalOutcome {
    pub fn csv(&self) -> String {
        let mut s = String::from(EVAL_CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalParams {
    pub ranges: WarpRanges,
    pub num_test_warps: usize,
    pub split_seed: u64,
    pub detector: DetectorParams,
    pub ransac: RansacParams,
    pub min_log_score: f64,
    pub recognition_radius: f64,
}

struct Frame {
    keypoints: Vec<Keypoint>,
    patches: Vec<Patch>,
    /// Per class, the index of the nearest keypoint within the radius;
    /// `None` inside means visible but not detected. Outer `None`: not visible.
    truth: Vec<Option<Option<usize>>>,
}

fn prepare_frame(
    model: &TrainedModel,
    model_image: &GrayImage,
    warp: &WarpParams,
    detector: &DetectorParams,
    radius: f64,
) -> Result<Frame> {
    let test = apply_warp(model_image, warp);
    let keypoints = detect_keypoints(&test, detector)?;
    let source = patch_source(&test)?;
    let side = model.patch_side();
    let patches = keypoints
        .iter()
        .map(|k| extract_patch(&source, (k.x, k.y), side))
        .collect::<Result<Vec<_>>>()?;
    let center = model_image.center();
    let truth = model
        .classes
        .iter()
        .map(|c| {
            let gt = map_point(warp, center, c.model_point);
            let (gx, gy) = round_point(gt);
            if !test.admits_patch(gx, gy, side) {
                return None;
            }
            let nearest = keypoints
                .iter()
                .enumerate()
                .map(|(i, k)| (i, ((k.x as f64 - gt.0).powi(2) + (k.y as f64 - gt.1).powi(2)).sqrt()))
                .filter(|&(_, d)| d <= radius)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(i, _)| i);
            Some(nearest)
        })
        .collect();
    Ok(Frame {
        keypoints,
        patches,
        truth,
    })
}

struct Labeled {
    labels: Vec<usize>,
    correspondences: Vec<Correspondence>,
    classify_us: f64,
}

fn label_ferns(model: &TrainedModel, frame: &Frame, min_log_score: f64) -> Labeled {
    let mut values = vec![0u32; model.ensemble.num_ferns()];
    let mut scores = vec![0f64; model.num_classes()];
    let mut out = Vec::with_capacity(frame.patches.len());
    let start = Instant::now();
    for patch in &frame.patches {
        model.ensemble.fern_values_into(patch, &mut values);
        model.table.scores_into(&values, &mut scores);
        out.push(fernmatch_core::classifier::argmax(&scores));
    }
    let classify_us = start.elapsed().as_secs_f64() * 1e6;
    finish(model, frame, out, classify_us, min_log_score)
}

fn label_ncc(model: &TrainedModel, matcher: &NccMatcher, frame: &Frame) -> Labeled {
    let start = Instant::now();
    let out: Vec<(usize, f64)> = frame.patches.iter().map(|p| matcher.classify(p)).collect();
    let classify_us = start.elapsed().as_secs_f64() * 1e6;
    finish(model, frame, out, classify_us, f64::NEG_INFINITY)
}

fn finish(
    model: &TrainedModel,
    frame: &Frame,
    labels: Vec<(usize, f64)>,
    classify_us: f64,
    min_score: f64,
) -> Labeled {
    let correspondences = frame
        .keypoints
        .iter()
        .zip(&labels)
        .filter(|(_, &(_, score))| score >= min_score)
        .map(|(k, &(class_id, log_score))| Correspondence {
            model_point: model.classes[class_id].model_point,
            test_point: (k.x as f64, k.y as f64),
            log_score,
            class_id,
        })
        .collect();
    Labeled {
        labels: labels.into_iter().map(|(c, _)| c).collect(),
        correspondences,
        classify_us,
    }
}

fn score(frame_id: usize, method: Method, frame: &Frame, labeled: &Labeled, ransac: &RansacParams) -> EvalRecord {
    let mut num_visible = 0;
    let mut num_detected = 0;
    let mut num_recognized = 0;
    for (class_id, truth) in frame.truth.iter().enumerate() {
        let Some(nearest) = truth else { continue };
        num_visible += 1;
        if let Some(i) = nearest {
            num_detected += 1;
            num_recognized += usize::from(labeled.labels[*i] == class_id);
        }
    }
    let params = RansacParams {
        seed: ransac.seed.wrapping_add(frame_id as u64),
        ..*ransac
    };
    let num_inliers = ransac_homography(&labeled.correspondences, &params).map_or(0, |f| f.inliers.len());
    EvalRecord {
        frame: frame_id,
        method,
        num_keypoints: frame.keypoints.len(),
        num_correspondences: labeled.correspondences.len(),
        num_inliers,
        num_visible,
        num_detected,
        num_recognized,
        classify_us: labeled.classify_us,
    }
}

fn summarize(records: &[EvalRecord], method: Method) -> MethodSummary {
    let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.method == method).collect();
    let mean = |f: &dyn Fn(&EvalRecord) -> f64, rows: &[&EvalRecord]| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
        }
    };
    let with_detections: Vec<&EvalRecord> = rs.iter().copied().filter(|r| r.num_detected > 0).collect();
    let keypoints: usize = rs.iter().map(|r| r.num_keypoints).sum();
    let time: f64 = rs.iter().map(|r| r.classify_us).sum();
    MethodSummary {
        mean_recognition_rate: mean(&|r| r.recognition_rate(), &with_detections),
        mean_inliers: mean(&|r| r.num_inliers as f64, &rs),
        mean_correspondences: mean(&|r| r.num_correspondences as f64, &rs),
        mean_classify_us_per_keypoint: if keypoints == 0 { 0.0 } else { time / keypoints as f64 },
    }
}

/// Runs both methods over `num_test_warps` warps drawn from the evaluation
/// stream, which never overlaps the training streams.
pub fn evaluate(model: &TrainedModel, model_image: &GrayImage, params: &EvalParams) -> Result<EvalOutcome> {
    let warps = sample_warps(&params.ranges, params.num_test_warps, params.split_seed, EVALUATION_STREAM);
    evaluate_warps(model, model_image, &warps, params)
}

pub fn evaluate_warps(
    model: &TrainedModel,
    model_image: &GrayImage,
    warps: &[WarpParams],
    params: &EvalParams,
) -> Result<EvalOutcome> {
    let detector = detector_for_patches(&params.detector, model.patch_side());
    let matcher = NccMatcher::from_model(model)?;
    let frames: Vec<Frame> = warps
        .par_iter()
        .map(|w| prepare_frame(model, model_image, w, &detector, params.recognition_radius))
        .collect::<Result<_>>()?;

    // Timed classification runs on one thread, one method at a time.
    let labeled: Vec<(Labeled, Labeled)> = frames
        .iter()
        .map(|f| (label_ferns(model, f, params.min_log_score), label_ncc(model, &matcher, f)))
        .collect();

    let records: Vec<EvalRecord> = frames
        .par_iter()
        .zip(&labeled)
        .enumerate()
        .flat_map_iter(|(i, (frame, (ferns, ncc)))| {
            [
                score(i, Method::Ferns, frame, ferns, &params.ransac),
                score(i, Method::Ncc, frame, ncc, &params.ransac),
            ]
        })
        .collect();

    let summary = EvalSummary {
        frames: warps.len(),
        ferns: summarize(&records, Method::Ferns),
        ncc: summarize(&records, Method::Ncc),
    };
    Ok(EvalOutcome {
        warps: warps.to_vec(),
        records,
        summary,
    })
}
