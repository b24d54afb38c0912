//! Semi-naive Bayes over ferns: per-class fern-value histograms, additive
//! regularization and log-space argmax.
//!
//! Tables are laid out `(fern, bin, class)` so that scoring a patch reads `H`
//! contiguous entries per fern.

use crate::error::{Error, Result};
use crate::fern::{FernEnsemble, MAX_BITS};
use crate::image::Patch;

/// Regularization count used unless configured otherwise.
pub const DEFAULT_REGULARIZER: f64 = 1.0;

/// Upper bound on `m * 2^s * h` counters.
pub const MAX_TABLE_ENTRIES: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FernCounts {
    m: usize,
    s: usize,
    h: usize,
    counts: Vec<u32>,
    totals: Vec<u32>,
}

fn table_len(m: usize, s: usize, h: usize) -> Result<usize> {
    if s == 0 || s > MAX_BITS {
        return Err(Error::TableSize {
            bits: s,
            max: MAX_BITS,
        });
    }
    if m == 0 || h == 0 {
        return Err(Error::Configuration(format!(
            "need at least one fern and one class, got m={m}, h={h}"
        )));
    }
    let bins = 1usize << s;
    m.checked_mul(bins)
        .and_then(|v| v.checked_mul(h))
        .filter(|&n| n <= MAX_TABLE_ENTRIES)
        .ok_or(Error::Capacity {
            ferns: m,
            bins,
            classes: h,
        })
}

impl FernCounts {
    pub fn new(m: usize, s: usize, h: usize) -> Result<Self> {
        let len = table_len(m, s, h)?;
        Ok(Self {
            m,
            s,
            h,
            counts: vec![0; len],
            totals: vec![0; h],
        })
    }

    /// Rebuilds counts from raw tables, checking the per-fern row sums.
    pub fn from_raw(m: usize, s: usize, h: usize, counts: Vec<u32>, totals: Vec<u32>) -> Result<Self> {
        let len = table_len(m, s, h)?;
        if counts.len() != len || totals.len() != h {
            return Err(Error::Format(format!(
                "count table has {} entries and {} totals, expected {len} and {h}",
                counts.len(),
                totals.len()
            )));
        }
        let this = Self {
            m,
            s,
            h,
            counts,
            totals,
        };
        for k in 0..m {
            for i in 0..h {
                let sum: u64 = (0..this.bins()).map(|v| this.get(k, v, i) as u64).sum();
                if sum != this.totals[i] as u64 {
                    return Err(Error::Format(format!(
                        "fern {k} class {i} counts sum to {sum}, total says {}",
                        this.totals[i]
                    )));
                }
            }
        }
        Ok(this)
    }

    pub fn num_ferns(&self) -> usize {
        self.m
    }

    pub fn bits(&self) -> usize {
        self.s
    }

    pub fn num_classes(&self) -> usize {
        self.h
    }

    /// `K = 2^S`.
    pub fn bins(&self) -> usize {
        1 << self.s
    }

    #[inline]
    fn index(&self, fern: usize, bin: usize, class: usize) -> usize {
        (fern * self.bins() + bin) * self.h + class
    }

    #[inline]
    pub fn get(&self, fern: usize, bin: usize, class: usize) -> u32 {
        self.counts[self.index(fern, bin, class)]
    }

    pub fn raw_counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn totals(&self) -> &[u32] {
        &self.totals
    }

    /// Adds one training sample given its precomputed fern values.
    pub fn accumulate_values(&mut self, values: &[u32], class_id: usize) -> Result<()> {
        if class_id >= self.h {
            return Err(Error::ClassIndex {
                class_id,
                classes: self.h,
            });
        }
        if values.len() != self.m {
            return Err(Error::Configuration(format!(
                "{} fern values for a {}-fern table",
                values.len(),
                self.m
            )));
        }
        for (k, &v) in values.iter().enumerate() {
            let idx = self.index(k, v as usize, class_id);
            self.counts[idx] += 1;
        }
        self.totals[class_id] += 1;
        Ok(())
    }

    pub fn accumulate(&mut self, ensemble: &FernEnsemble, patch: &Patch, class_id: usize) -> Result<()> {
        self.check_ensemble(ensemble)?;
        if patch.side() != ensemble.patch_side() {
            return Err(Error::Configuration(format!(
                "patch side {} does not match ensemble side {}",
                patch.side(),
                ensemble.patch_side()
            )));
        }
        let values = ensemble.fern_values(patch);
        self.accumulate_values(&values, class_id)
    }

    fn check_ensemble(&self, ensemble: &FernEnsemble) -> Result<()> {
        if ensemble.num_ferns() != self.m || ensemble.bits() != self.s {
            return Err(Error::Configuration(format!(
                "ensemble is {}x{} but table is {}x{}",
                ensemble.num_ferns(),
                ensemble.bits(),
                self.m,
                self.s
            )));
        }
        Ok(())
    }

    /// `log p = log((N_{v,c} + n_r) / (N_c + K n_r))` for every cell.
    pub fn finalize(&self, n_r: f64) -> Result<ClassifierTable> {
        if !(n_r > 0.0) || !n_r.is_finite() {
            return Err(Error::Domain(format!("regularizer must be positive, got {n_r}")));
        }
        let k = self.bins() as f64;
        let denominators: Vec<f64> = self.totals.iter().map(|&t| t as f64 + k * n_r).collect();
        let log_probs = self
            .counts
            .chunks_exact(self.h)
            .flat_map(|row| {
                row.iter()
                    .zip(&denominators)
                    .map(move |(&c, &d)| ((c as f64 + n_r) / d).ln())
            })
            .collect();
        Ok(ClassifierTable {
            log_probs,
            m: self.m,
            s: self.s,
            h: self.h,
            n_r,
        })
    }
}

/// Result of scoring one patch against every class.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class_id: usize,
    pub log_score: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTable {
    log_probs: Vec<f64>,
    m: usize,
    s: usize,
    h: usize,
    n_r: f64,
}

impl ClassifierTable {
    pub fn num_ferns(&self) -> usize {
        self.m
    }

    pub fn bits(&self) -> usize {
        self.s
    }

    pub fn num_classes(&self) -> usize {
        self.h
    }

    pub fn regularizer(&self) -> f64 {
        self.n_r
    }

    pub fn bins(&self) -> usize {
        1 << self.s
    }

    #[inline]
    pub fn log_prob(&self, fern: usize, bin: usize, class: usize) -> f64 {
        self.log_probs[(fern * self.bins() + bin) * self.h + class]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Adds every fern's per-class log-probabilities into `scores`.
    #[inline]
    pub fn scores_into(&self, values: &[u32], scores: &mut [f64]) {
        scores.fill(0.0);
        let bins = self.bins();
        for (k, &v) in values.iter().enumerate() {
            let start = (k * bins + v as usize) * self.h;
            for (s, lp) in scores.iter_mut().zip(&self.log_probs[start..start + self.h]) {
                *s += lp;
            }
        }
    }

    pub fn classify_values(&self, values: &[u32]) -> Classification {
        let mut scores = vec![0.0; self.h];
        self.scores_into(values, &mut scores);
        let (class_id, log_score) = argmax(&scores);
        Classification {
            class_id,
            log_score,
            scores,
        }
    }

    fn check(&self, ensemble: &FernEnsemble, patch: &Patch) -> Result<()> {
        if ensemble.num_ferns() != self.m || ensemble.bits() != self.s {
            return Err(Error::Configuration(format!(
                "ensemble is {}x{} but table is {}x{}",
                ensemble.num_ferns(),
                ensemble.bits(),
                self.m,
                self.s
            )));
        }
        if patch.side() != ensemble.patch_side() {
            return Err(Error::Configuration(format!(
                "patch side {} does not match ensemble side {}",
                patch.side(),
                ensemble.patch_side()
            )));
        }
        Ok(())
    }

    pub fn classify(&self, ensemble: &FernEnsemble, patch: &Patch) -> Result<Classification> {
        self.check(ensemble, patch)?;
        Ok(self.classify_values(&ensemble.fern_values(patch)))
    }

    /// Class probabilities under a uniform prior.
    pub fn posterior(&self, ensemble: &FernEnsemble, patch: &Patch) -> Result<Vec<f64>> {
        Ok(softmax(&self.classify(ensemble, patch)?.scores))
    }
}

/// Highest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> (usize, f64) {
    let mut best = (0, scores[0]);
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fern::build_ensemble;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(rng: &mut ChaCha8Rng, side: usize) -> Patch {
        Patch::new(side, (0..side * side).map(|_| rng.random()).collect()).unwrap()
    }

    /// Fills cells directly; totals come from fern 0, so callers pass
    /// histograms with equal per-class sums across ferns.
    fn counts_from_cells(m: usize, s: usize, h: usize, cells: &[(usize, usize, usize, u32)]) -> FernCounts {
        let mut c = FernCounts::new(m, s, h).unwrap();
        for &(f, v, i, n) in cells {
            let idx = c.index(f, v, i);
            c.counts[idx] = n;
        }
        c.totals = (0..h).map(|i| (0..c.bins()).map(|v| c.get(0, v, i)).sum()).collect();
        FernCounts::from_raw(m, s, h, c.counts, c.totals).expect("consistent row sums")
    }

    fn assert_normalized(table: &ClassifierTable) {
        for k in 0..table.num_ferns() {
            for i in 0..table.num_classes() {
                let sum: f64 = (0..table.bins()).map(|v| table.log_prob(k, v, i).exp()).sum();
                assert!((sum - 1.0).abs() < 1e-9, "fern {k} class {i}: {sum}");
            }
        }
    }

    #[test]
    fn new_counts() {
        let c = FernCounts::new(1, 1, 1).unwrap();
        assert_eq!(c.raw_counts(), &[0, 0]);
        assert_eq!(c.totals(), &[0]);
        let big = FernCounts::new(50, 11, 100).unwrap();
        assert_eq!(big.raw_counts().len(), 50 * 2048 * 100);
        assert!(matches!(FernCounts::new(1, 17, 1), Err(Error::TableSize { .. })));
        assert!(matches!(
            FernCounts::new(1 << 20, 16, 1 << 10),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn accumulate_once_and_twice() {
        let e = build_ensemble(5, 4, 9, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let patch = random_patch(&mut rng, 9);
        let mut c = FernCounts::new(5, 4, 3).unwrap();
        c.accumulate(&e, &patch, 2).unwrap();
        assert_eq!(c.raw_counts().iter().filter(|&&v| v > 0).count(), 5);
        assert_eq!(c.totals(), &[0, 0, 1]);
        c.accumulate(&e, &patch, 2).unwrap();
        let values = e.fern_values(&patch);
        for (k, &v) in values.iter().enumerate() {
            assert_eq!(c.get(k, v as usize, 2), 2);
        }
        assert!(matches!(
            c.accumulate(&e, &patch, 3),
            Err(Error::ClassIndex { class_id: 3, classes: 3 })
        ));
    }

    #[test]
    fn row_sums_after_many_patches() {
        let e = build_ensemble(6, 5, 11, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = FernCounts::new(6, 5, 1).unwrap();
        for _ in 0..100 {
            c.accumulate(&e, &random_patch(&mut rng, 11), 0).unwrap();
        }
        for k in 0..6 {
            let sum: u32 = (0..32).map(|v| c.get(k, v, 0)).sum();
            assert_eq!(sum, 100);
        }
        assert_eq!(c.totals(), &[100]);
    }

    #[test]
    fn finalize_uniform_and_hand_counts() {
        let table = FernCounts::new(2, 11, 3).unwrap().finalize(DEFAULT_REGULARIZER).unwrap();
        // ln of the exactly representable 2^-11, within an ulp after exp.
        for &lp in table.log_probs() {
            assert_eq!(lp, (1.0f64 / 2048.0).ln());
            assert!((lp.exp() - 1.0 / 2048.0).abs() <= f64::EPSILON / 2048.0);
        }

        let c = counts_from_cells(1, 1, 1, &[(0, 0, 0, 3), (0, 1, 0, 1)]);
        let t = c.finalize(1.0).unwrap();
        assert!((t.log_prob(0, 0, 0).exp() - 4.0 / 6.0).abs() < 1e-15);
        assert!((t.log_prob(0, 1, 0).exp() - 2.0 / 6.0).abs() < 1e-15);
        assert!(c.finalize(0.0).is_err());
        assert!(c.finalize(-1.0).is_err());
    }

    #[test]
    fn single_class_and_untrained() {
        let e = build_ensemble(4, 6, 9, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = FernCounts::new(4, 6, 1).unwrap().finalize(1.0).unwrap();
        assert_eq!(one.classify(&e, &random_patch(&mut rng, 9)).unwrap().class_id, 0);

        let uniform = FernCounts::new(4, 6, 5).unwrap().finalize(1.0).unwrap();
        let out = uniform.classify(&e, &random_patch(&mut rng, 9)).unwrap();
        assert_eq!(out.class_id, 0);
        let expected = 4.0 * (1.0f64 / 64.0).ln();
        assert!(out.scores.iter().all(|&s| (s - expected).abs() < 1e-12));
        let post = uniform.posterior(&e, &random_patch(&mut rng, 9)).unwrap();
        assert!(post.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn mismatched_dims() {
        let e = build_ensemble(4, 6, 9, 0).unwrap();
        let t = FernCounts::new(3, 6, 2).unwrap().finalize(1.0).unwrap();
        let patch = Patch::new(9, vec![0; 81]).unwrap();
        assert!(matches!(t.classify(&e, &patch), Err(Error::Configuration(_))));
    }

    #[test]
    fn posterior_ratio() {
        let p = softmax(&[-10.0, -10.0 - 3f64.ln()]);
        assert!((p[0] / p[1] - 3.0).abs() < 1e-9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    /// Literal product of regularized ratios in exact arithmetic.
    fn rational_likelihood(c: &FernCounts, values: &[u32], class: usize, n_r: i64) -> BigRational {
        let k = BigInt::from(c.bins() as i64);
        let nr = BigInt::from(n_r);
        values.iter().enumerate().fold(BigRational::from_integer(1.into()), |acc, (f, &v)| {
            let num = BigInt::from(c.get(f, v as usize, class)) + &nr;
            let den = BigInt::from(c.totals()[class]) + &k * &nr;
            acc * BigRational::new(num, den)
        })
    }

    #[test]
    fn hand_filled_counts_match_exact_product() {
        // S=2, M=2, H=3
        let cells = [
            (0, 0, 0, 5), (0, 1, 0, 1), (1, 2, 0, 4), (1, 3, 0, 2),
            (0, 1, 1, 3), (0, 3, 1, 3), (1, 1, 1, 6),
            (0, 2, 2, 2), (1, 0, 2, 1), (1, 2, 2, 1),
        ];
        let c = counts_from_cells(2, 2, 3, &cells);
        let t = c.finalize(1.0).unwrap();
        for v0 in 0..4 {
            for v1 in 0..4 {
                let values = [v0, v1];
                let exact: Vec<_> = (0..3).map(|i| rational_likelihood(&c, &values, i, 1)).collect();
                let mut best = 0;
                for i in 1..3 {
                    if exact[i] > exact[best] {
                        best = i;
                    }
                }
                assert_eq!(t.classify_values(&values).class_id, best, "values {values:?}");
            }
        }
    }

    fn arb_counts() -> impl Strategy<Value = (FernCounts, Vec<u32>)> {
        (1usize..=3, 1usize..=3, 1usize..=4).prop_flat_map(|(m, s, h)| {
            let per_class = proptest::collection::vec(0u32..6, 1 << s);
            let tables = proptest::collection::vec(proptest::collection::vec(per_class, h), m);
            let values = proptest::collection::vec(0u32..(1 << s), m);
            (tables, values).prop_map(move |(tables, values)| {
                // Each fern's histogram must sum to the same per-class total:
                // derive totals from fern 0 and pad other ferns' bin 0.
                let mut c = FernCounts::new(m, s, h).unwrap();
                let totals: Vec<u32> = (0..h).map(|i| tables.iter().map(|t| t[i].iter().sum::<u32>()).max().unwrap()).collect();
                for (k, t) in tables.iter().enumerate() {
                    for i in 0..h {
                        let sum: u32 = t[i].iter().sum();
                        for v in 0..(1 << s) {
                            let extra = if v == 0 { totals[i] - sum } else { 0 };
                            let idx = c.index(k, v, i);
                            c.counts[idx] = t[i][v] + extra;
                        }
                    }
                }
                c.totals = totals;
                (c, values)
            })
        })
    }

    proptest! {
        #[test]
        fn normalization_for_arbitrary_counts((c, _) in arb_counts(), n_r in 0.01f64..5.0) {
            let t = c.finalize(n_r).unwrap();
            assert_normalized(&t);
            prop_assert!(t.log_probs().iter().all(|lp| lp.is_finite()));
        }

        #[test]
        fn argmax_matches_rational_oracle((c, values) in arb_counts()) {
            let t = c.finalize(1.0).unwrap();
            let out = t.classify_values(&values);
            let exact: Vec<_> = (0..c.num_classes()).map(|i| rational_likelihood(&c, &values, i, 1)).collect();
            let best = exact.iter().max().unwrap();
            // Any class tied at the exact maximum is acceptable only if its
            // float score is within rounding of the winner.
            prop_assert!(&exact[out.class_id] == best
                || (out.scores[out.class_id] - out.scores[exact.iter().position(|e| e == best).unwrap()]).abs() < 1e-12);
        }

        #[test]
        fn posterior_agrees_with_classify((c, values) in arb_counts(), shift in -1e3f64..1e3) {
            let t = c.finalize(1.0).unwrap();
            let out = t.classify_values(&values);
            let post = softmax(&out.scores);
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(argmax(&post).0, out.class_id);
            let shifted: Vec<f64> = out.scores.iter().map(|s| s + shift).collect();
            prop_assert_eq!(argmax(&shifted).0, out.class_id);
        }

        #[test]
        fn count_conservation(seed in any::<u64>(), t in 0usize..60) {
            let e = build_ensemble(3, 4, 9, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = FernCounts::new(3, 4, 4).unwrap();
            for _ in 0..t {
                let class = rng.random_range(0..4);
                c.accumulate(&e, &random_patch(&mut rng, 9), class).unwrap();
            }
            prop_assert_eq!(c.totals().iter().sum::<u32>() as usize, t);
            for k in 0..3 {
                let grand: u32 = (0..16).flat_map(|v| (0..4).map(move |i| (v, i))).map(|(v, i)| c.get(k, v, i)).sum();
                prop_assert_eq!(grand as usize, t);
            }
        }
    }
}
