//! Binary pixel-pair tests grouped into ferns.
//!
//! A fern of `S` tests reads a patch as an `S`-bit integer: test `j`
//! contributes bit `j` (first test is least significant), set when the
//! intensity at the first offset is strictly below the one at the second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Patch;

/// Largest supported number of tests per fern.
pub const MAX_BITS: usize = 16;

/// Two patch-center-relative pixel offsets compared by one binary feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FernTestPair {
    pub d1: (i16, i16),
    pub d2: (i16, i16),
}

impl FernTestPair {
    pub fn is_valid_for(&self, patch_side: usize) -> bool {
        let half = (patch_side / 2) as i16;
        let inside = |(dx, dy): (i16, i16)| dx.abs() <= half && dy.abs() <= half;
        self.d1 != self.d2 && inside(self.d1) && inside(self.d2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fern {
    pub tests: Vec<FernTestPair>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FernEnsemble {
    ferns: Vec<Fern>,
    bits: usize,
    patch_side: usize,
    seed: u64,
}

impl FernEnsemble {
    /// Assembles an ensemble from explicit test pairs, validating every one.
    pub fn from_ferns(ferns: Vec<Fern>, patch_side: usize, seed: u64) -> Result<Self> {
        let bits = ferns.first().map_or(0, |f| f.tests.len());
        check_dims(ferns.len(), bits, patch_side)?;
        for (k, fern) in ferns.iter().enumerate() {
            if fern.tests.len() != bits {
                return Err(Error::Configuration(format!(
                    "fern {k} has {} tests, expected {bits}",
                    fern.tests.len()
                )));
            }
            if let Some(bad) = fern.tests.iter().find(|t| !t.is_valid_for(patch_side)) {
                return Err(Error::Configuration(format!(
                    "test pair {bad:?} in fern {k} is invalid for patch side {patch_side}"
                )));
            }
        }
        Ok(Self {
            ferns,
            bits,
            patch_side,
            seed,
        })
    }

    #[inline]
    pub fn ferns(&self) -> &[Fern] {
        &self.ferns
    }

    /// Number of ferns, `M`.
    #[inline]
    pub fn num_ferns(&self) -> usize {
        self.ferns.len()
    }

    /// Tests per fern, `S`.
    #[inline]
    pub fn bits(&self) -> usize {
        self.bits
    }

    /// Total binary features `N = M * S`.
    pub fn num_features(&self) -> usize {
        self.ferns.len() * self.bits
    }

    #[inline]
    pub fn patch_side(&self) -> usize {
        self.patch_side
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pairs(&self) -> impl Iterator<Item = &FernTestPair> {
        self.ferns.iter().flat_map(|f| f.tests.iter())
    }

    /// Writes each fern's value into `out`, which must hold `M` entries.
    pub fn fern_values_into(&self, patch: &Patch, out: &mut [u32]) {
        debug_assert_eq!(patch.side(), self.patch_side);
        for (slot, fern) in out.iter_mut().zip(&self.ferns) {
            *slot = fern_value(patch, fern);
        }
    }

    pub fn fern_values(&self, patch: &Patch) -> Vec<u32> {
        let mut out = vec![0; self.ferns.len()];
        self.fern_values_into(patch, &mut out);
        out
    }
}

fn check_dims(m: usize, s: usize, patch_side: usize) -> Result<()> {
    if s > MAX_BITS {
        return Err(Error::TableSize {
            bits: s,
            max: MAX_BITS,
        });
    }
    if m == 0 || s == 0 {
        return Err(Error::Configuration(format!(
            "need at least one fern and one test per fern, got m={m}, s={s}"
        )));
    }
    if patch_side < 3 || patch_side.is_multiple_of(2) {
        return Err(Error::Configuration(format!(
            "patch side must be odd and at least 3, got {patch_side}"
        )));
    }
    Ok(())
}

/// Draws `m * s` test pairs uniformly over the patch; pair `j` lands in fern
/// `j / s` at position `j % s`.
pub fn build_ensemble(m: usize, s: usize, patch_side: usize, seed: u64) -> Result<FernEnsemble> {
    check_dims(m, s, patch_side)?;
    let half = (patch_side / 2) as i16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = |rng: &mut ChaCha8Rng| (rng.random_range(-half..=half), rng.random_range(-half..=half));
    let ferns = (0..m)
        .map(|_| {
            let tests = (0..s)
                .map(|_| loop {
                    let pair = FernTestPair {
                        d1: offset(&mut rng),
                        d2: offset(&mut rng),
                    };
                    if pair.d1 != pair.d2 {
                        break pair;
                    }
                })
                .collect();
            Fern { tests }
        })
        .collect();
    Ok(FernEnsemble {
        ferns,
        bits: s,
        patch_side,
        seed,
    })
}

/// One binary feature: 1 iff `I(center + d1) < I(center + d2)`.
#[inline]
pub fn compute_feature(patch: &Patch, pair: &FernTestPair) -> bool {
    patch.at_offset(pair.d1.0, pair.d1.1) < patch.at_offset(pair.d2.0, pair.d2.1)
}

#[inline]
pub fn fern_value(patch: &Patch, fern: &Fern) -> u32 {
    fern.tests
        .iter()
        .enumerate()
        .fold(0, |acc, (j, t)| acc | (u32::from(compute_feature(patch, t)) << j))
}
