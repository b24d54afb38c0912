//! Correspondence assembly, normalized-DLT homography fitting and RANSAC
//! inlier counting.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detect::{detect_keypoints, DetectorParams, Keypoint};
use crate::error::{Error, Result};
use crate::image::{extract_patch, GrayImage};
use crate::train::{patch_source, TrainedModel};

pub const DEFAULT_RANSAC_ITERATIONS: usize = 1000;
pub const DEFAULT_INLIER_TOLERANCE: f64 = 3.0;

/// A model point paired with the test-image point it was matched to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub model_point: (f64, f64),
    pub test_point: (f64, f64),
    pub log_score: f64,
    pub class_id: usize,
}

impl Correspondence {
    pub fn new(model_point: (f64, f64), test_point: (f64, f64)) -> Self {
        Self {
            model_point,
            test_point,
            log_score: 0.0,
            class_id: 0,
        }
    }
}

/// Projective plane map with `h33 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Normalizes so the bottom-right entry is 1 and checks invertibility.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let scale = m[(2, 2)];
        if !scale.is_finite() || scale.abs() < 1e-12 {
            return Err(Error::Degenerate);
        }
        let m = m / scale;
        if !m.iter().all(|v| v.is_finite()) || m.determinant().abs() <= 1e-12 {
            return Err(Error::Degenerate);
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row-major entries.
    pub fn entries(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    pub fn project(&self, p: (f64, f64)) -> Option<(f64, f64)> {
        let q = self.0 * Vector3::new(p.0, p.1, 1.0);
        if q.z.abs() < 1e-12 {
            return None;
        }
        Some((q.x / q.z, q.y / q.z))
    }

    /// Euclidean distance between the projected model point and the test point.
    pub fn residual(&self, c: &Correspondence) -> f64 {
        match self.project(c.model_point) {
            Some((x, y)) => ((x - c.test_point.0).powi(2) + (y - c.test_point.1).powi(2)).sqrt(),
            None => f64::INFINITY,
        }
    }
}

/// Similarity that moves the centroid to the origin and sets the mean
/// distance from it to sqrt(2).
fn normalizing_transform(points: &[(f64, f64)]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(ax, ay), p| (ax + p.0, ay + p.1));
    let (mx, my) = (mx / n, my / n);
    let mean_dist = points
        .iter()
        .map(|p| ((p.0 - mx).powi(2) + (p.1 - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 1e-12) {
        return Err(Error::Degenerate);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    (t[(0, 0)] * p.0 + t[(0, 2)], t[(1, 1)] * p.1 + t[(1, 2)])
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let scale = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2))
        .max((c.0 - a.0).powi(2) + (c.1 - a.1).powi(2));
    area.abs() <= 1e-9 * scale.max(1e-12)
}

fn has_collinear_triple(points: &[(f64, f64); 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|t| collinear(points[t[0]], points[t[1]], points[t[2]]))
}

/// Minimal four-point solve.
pub fn estimate_homography_dlt(pairs: &[Correspondence; 4]) -> Result<Homography> {
    let model = pairs.map(|c| c.model_point);
    let test = pairs.map(|c| c.test_point);
    if has_collinear_triple(&model) || has_collinear_triple(&test) {
        return Err(Error::Degenerate);
    }
    fit_homography(pairs)
}

/// Least-squares normalized DLT over any number (>= 4) of correspondences.
pub fn fit_homography(pairs: &[Correspondence]) -> Result<Homography> {
    let n = pairs.len();
    if n < 4 {
        return Err(Error::Degenerate);
    }
    let model: Vec<_> = pairs.iter().map(|c| c.model_point).collect();
    let test: Vec<_> = pairs.iter().map(|c| c.test_point).collect();
    let t_model = normalizing_transform(&model)?;
    let t_test = normalizing_transform(&test)?;

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&p, &q)) in model.iter().zip(&test).enumerate() {
        let (x, y) = apply(&t_model, p);
        let (u, v) = apply(&t_test, q);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::Degenerate)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    // A one-dimensional null space is required for a unique solution.
    if !(svd.singular_values[order[1]] > 1e-10 * largest) {
        return Err(Error::Degenerate);
    }
    let h = v_t.row(order[0]);
    let normalized = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_test_inv = t_test.try_inverse().ok_or(Error::Degenerate)?;
    Homography::from_matrix(t_test_inv * normalized * t_model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub homography: Homography,
    /// Indices into the input correspondences, ascending.
    pub inliers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_tolerance: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_RANSAC_ITERATIONS,
            inlier_tolerance: DEFAULT_INLIER_TOLERANCE,
            seed: 0,
        }
    }
}

fn inliers_of(h: &Homography, correspondences: &[Correspondence], tol: f64) -> Vec<usize> {
    correspondences
        .iter()
        .enumerate()
        .filter(|(_, c)| h.residual(c) <= tol)
        .map(|(i, _)| i)
        .collect()
}

/// Seeded RANSAC over four-point DLT fits. `None` when no hypothesis
/// gathers at least four inliers.
pub fn ransac_homography(correspondences: &[Correspondence], params: &RansacParams) -> Option<RansacFit> {
    let n = correspondences.len();
    if n < 4 {
        return None;
    }
    let tol = params.inlier_tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<RansacFit> = None;
    for _ in 0..params.iterations {
        let idx = sample(&mut rng, n, 4);
        let quad = [0, 1, 2, 3].map(|j| correspondences[idx.index(j)]);
        let Ok(h) = estimate_homography_dlt(&quad) else {
            continue;
        };
        let inliers = inliers_of(&h, correspondences, tol);
        if inliers.len() >= 4 && best.as_ref().is_none_or(|b| inliers.len() > b.inliers.len()) {
            best = Some(RansacFit {
                homography: h,
                inliers,
            });
            if best.as_ref().is_some_and(|b| b.inliers.len() == n) {
                break;
            }
        }
    }

    let best = best?;
    let support: Vec<Correspondence> = best.inliers.iter().map(|&i| correspondences[i]).collect();
    match fit_homography(&support) {
        Ok(refit) => {
            let inliers = inliers_of(&refit, correspondences, tol);
            if inliers.len() >= best.inliers.len() {
                Some(RansacFit {
                    homography: refit,
                    inliers,
                })
            } else {
                Some(best)
            }
        }
        Err(_) => Some(best),
    }
}

/// Classifies the patch around each keypoint; `None` where the patch would
/// cross the border.
pub fn classify_keypoints(
    model: &TrainedModel,
    source: &GrayImage,
    keypoints: &[Keypoint],
) -> Vec<Option<crate::classifier::Classification>> {
    let side = model.patch_side();
    keypoints
        .iter()
        .map(|k| {
            let patch = extract_patch(source, (k.x, k.y), side).ok()?;
            model.classify(&patch).ok()
        })
        .collect()
}

/// Detector settings widened so every keypoint admits a patch of `side`.
pub fn detector_for_patches(detector: &DetectorParams, side: usize) -> DetectorParams {
    DetectorParams {
        border: detector.border.max(side / 2),
        ..*detector
    }
}

/// Detects, classifies and keeps matches whose top log-score reaches
/// `min_log_score`.
pub fn collect_correspondences(
    model: &TrainedModel,
    test: &GrayImage,
    detector: &DetectorParams,
    min_log_score: f64,
) -> Result<Vec<Correspondence>> {
    let detector = detector_for_patches(detector, model.patch_side());
    let keypoints = detect_keypoints(test, &detector)?;
    let source = patch_source(test)?;
    let labels = classify_keypoints(model, &source, &keypoints);
    Ok(keypoints
        .iter()
        .zip(labels)
        .filter_map(|(k, label)| {
            let label = label?;
            (label.log_score >= min_log_score).then(|| Correspondence {
                model_point: model.classes[label.class_id].model_point,
                test_point: (k.x as f64, k.y as f64),
                log_score: label.log_score,
                class_id: label.class_id,
            })
        })
        .collect())
}
