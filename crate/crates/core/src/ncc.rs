//! Zero-normalized cross-correlation against each class's reference patch.
//! This is the descriptor-style baseline ferns are compared with.

use crate::error::{Error, Result};
use crate::image::Patch;
use crate::train::TrainedModel;

/// Reference patches, mean-centered and scaled to unit norm once.
#[derive(Debug, Clone)]
pub struct NccMatcher {
    side: usize,
    /// `None` for constant reference patches, which correlate as 0.
    references: Vec<Option<Vec<f32>>>,
}

fn centered_unit(data: &[u8]) -> Option<Vec<f32>> {
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let norm = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    Some(data.iter().map(|&v| ((v as f64 - mean) / norm) as f32).collect())
}

impl NccMatcher {
    pub fn new(references: &[Patch]) -> Result<Self> {
        let side = references
            .first()
            .ok_or_else(|| Error::Configuration("NCC baseline needs at least one reference".into()))?
            .side();
        if references.iter().any(|p| p.side() != side) {
            return Err(Error::Configuration("reference patches differ in size".into()));
        }
        Ok(Self {
            side,
            references: references.iter().map(|p| centered_unit(p.data())).collect(),
        })
    }

    pub fn from_model(model: &TrainedModel) -> Result<Self> {
        let refs = model.reference_patches.as_ref().ok_or_else(|| {
            Error::Configuration("model has no reference patches; attach the model image first".into())
        })?;
        Self::new(refs)
    }

    pub fn num_classes(&self) -> usize {
        self.references.len()
    }

    /// Best-correlating class and its score; lowest class id on ties.
    pub fn classify(&self, patch: &Patch) -> (usize, f64) {
        debug_assert_eq!(patch.side(), self.side);
        let Some(query) = centered_unit(patch.data()) else {
            return (0, 0.0);
        };
        let mut best = (0, f64::NEG_INFINITY);
        for (i, r) in self.references.iter().enumerate() {
            let score = r.as_ref().map_or(0.0, |r| {
                r.iter().zip(&query).map(|(a, b)| a * b).sum::<f32>() as f64
            });
            if score > best.1 {
                best = (i, score);
            }
        }
        best
    }
}

/// One-off NCC classification against a model's reference patches.
pub fn ncc_baseline_classify(model: &TrainedModel, patch: &Patch) -> Result<(usize, f64)> {
    Ok(NccMatcher::from_model(model)?.classify(patch))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook ZNCC in f64 without precomputation.
    fn zncc(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            num += (x as f64 - ma) * (y as f64 - mb);
            da += (x as f64 - ma).powi(2);
            db += (y as f64 - mb).powi(2);
        }
        if da == 0.0 || db == 0.0 {
            0.0
        } else {
            num / (da * db).sqrt()
        }
    }

    fn pattern(f: impl Fn(usize, usize) -> u8) -> Patch {
        let side = 9;
        Patch::new(side, (0..side * side).map(|i| f(i % side, i / side)).collect()).unwrap()
    }

    #[test]
    fn identical_patch_scores_one() {
        let refs = vec![
            pattern(|x, _| (x * 20) as u8),
            pattern(|_, y| (y * 25) as u8),
        ];
        let m = NccMatcher::new(&refs).unwrap();
        let (id, score) = m.classify(&refs[1]);
        assert_eq!(id, 1);
        assert!((score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_query_scores_zero() {
        let refs = vec![pattern(|x, _| (x * 20) as u8), pattern(|_, y| (y * 25) as u8)];
        let m = NccMatcher::new(&refs).unwrap();
        assert_eq!(m.classify(&pattern(|_, _| 7)), (0, 0.0));
    }

    #[test]
    fn orthogonal_toy_matches_brute_force() {
        let refs = vec![
            pattern(|x, _| if x < 4 { 0 } else { 200 }),
            pattern(|_, y| if y < 4 { 0 } else { 200 }),
            pattern(|x, y| if (x + y) % 2 == 0 { 30 } else { 220 }),
        ];
        let m = NccMatcher::new(&refs).unwrap();
        let queries = [
            pattern(|x, y| if x < 4 { 10 } else { 180 + (y as u8) }),
            pattern(|x, y| if y < 5 { 5 } else { 150 + (x as u8) }),
            pattern(|x, y| if (x + y) % 2 == 0 { 60 } else { 90 }),
            pattern(|x, y| ((x * 31 + y * 17) % 256) as u8),
        ];
        for q in &queries {
            let scores: Vec<f64> = refs.iter().map(|r| zncc(r.data(), q.data())).collect();
            let mut best = 0;
            for i in 1..scores.len() {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            let (id, score) = m.classify(q);
            assert_eq!(id, best);
            assert!((score - scores[best]).abs() < 1e-5);
        }
    }
}
