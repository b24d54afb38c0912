//! Shi-Tomasi corner detection with greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{smooth_to_f32, GrayImage};

/// Smallest image the detector accepts.
pub const MIN_DETECT_SIDE: usize = 7;

/// A detected corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: i64,
    pub y: i64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub max_count: usize,
    pub min_score: f64,
    /// Chebyshev radius; returned keypoints are pairwise farther apart than this.
    pub nms_radius: usize,
    /// Keypoints closer than this to any image border are discarded.
    pub border: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            max_count: 400,
            min_score: 10.0,
            nms_radius: 4,
            border: 16,
        }
    }
}

/// Minimum eigenvalue of the 3x3-window structure tensor, computed on a
/// sigma = 1 smoothed copy with central-difference gradients.
pub fn corner_response(image: &GrayImage) -> Result<Vec<f64>> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_DETECT_SIDE || h < MIN_DETECT_SIDE {
        return Err(Error::Domain(format!(
            "detector needs at least {MIN_DETECT_SIDE}x{MIN_DETECT_SIDE}, got {w}x{h}"
        )));
    }
    let smooth = smooth_to_f32(image, 1.0);
    let at = |x: usize, y: usize| smooth[y * w + x] as f64;

    let mut gxx = vec![0f64; w * h];
    let mut gyy = vec![0f64; w * h];
    let mut gxy = vec![0f64; w * h];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = (at(xp, y) - at(xm, y)) / 2.0;
            let gy = (at(x, yp) - at(x, ym)) / 2.0;
            let i = y * w + x;
            gxx[i] = gx * gx;
            gyy[i] = gy * gy;
            gxy[i] = gx * gy;
        }
    }

    let mut response = vec![0f64; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for wy in y - 1..=y + 1 {
                let row = wy * w;
                for wx in x - 1..=x + 1 {
                    a += gxx[row + wx];
                    b += gxy[row + wx];
                    c += gyy[row + wx];
                }
            }
            let half_trace = (a + c) / 2.0;
            let disc = (((a - c) / 2.0).powi(2) + b * b).sqrt();
            response[y * w + x] = (half_trace - disc).max(0.0);
        }
    }
    Ok(response)
}

pub fn detect_keypoints(image: &GrayImage, params: &DetectorParams) -> Result<Vec<Keypoint>> {
    let response = corner_response(image)?;
    Ok(select_keypoints(
        &response,
        image.width(),
        image.height(),
        params,
    ))
}

/// Thresholding, local-maximum filtering and greedy NMS over a response map.
pub fn select_keypoints(
    response: &[f64],
    width: usize,
    height: usize,
    params: &DetectorParams,
) -> Vec<Keypoint> {
    // The response is zero on the outermost ring so the margin is at least 1.
    let margin = params.border.max(1);
    if params.max_count == 0 || width <= 2 * margin || height <= 2 * margin {
        return Vec::new();
    }
    let mut candidates = Vec::new();
    for y in margin..height - margin {
        for x in margin..width - margin {
            let s = response[y * width + x];
            if s <= 0.0 || s < params.min_score {
                continue;
            }
            if params.nms_radius > 0 {
                // Neighbors outside the admissible region do not count.
                let (y0, y1) = ((y - 1).max(margin), (y + 1).min(height - margin - 1));
                let (x0, x1) = ((x - 1).max(margin), (x + 1).min(width - margin - 1));
                let is_peak = (y0..=y1).all(|ny| (x0..=x1).all(|nx| response[ny * width + nx] <= s));
                if !is_peak {
                    continue;
                }
            }
            candidates.push(Keypoint {
                x: x as i64,
                y: y as i64,
                score: s,
            });
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });

    let r = params.nms_radius as i64;
    let mut suppressed = vec![false; width * height];
    let mut kept = Vec::with_capacity(params.max_count.min(candidates.len()));
    for kp in candidates {
        if suppressed[kp.y as usize * width + kp.x as usize] {
            continue;
        }
        for sy in (kp.y - r).max(0)..=(kp.y + r).min(height as i64 - 1) {
            for sx in (kp.x - r).max(0)..=(kp.x + r).min(width as i64 - 1) {
                suppressed[sy as usize * width + sx as usize] = true;
            }
        }
        kept.push(kp);
        if kept.len() == params.max_count {
            break;
        }
    }
    kept
}
