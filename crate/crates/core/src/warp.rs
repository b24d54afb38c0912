//! Random affine deformations of the model image with exact point mapping.
//!
//! A warp maps a model-frame point `p` to `A (p - c) + c + t`, where `c` is
//! the image center and `A = R(theta) R(-phi) diag(l1, l2) R(phi)`.

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{bilinear_unchecked, GrayImage};

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpParams {
    pub theta: f64,
    pub phi: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tx: f64,
    pub ty: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl WarpParams {
    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            phi: 0.0,
            lambda1: 1.0,
            lambda2: 1.0,
            tx: 0.0,
            ty: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    /// The linear part `A`.
    pub fn linear(&self) -> Matrix2<f64> {
        rotation(self.theta)
            * rotation(-self.phi)
            * Matrix2::new(self.lambda1, 0.0, 0.0, self.lambda2)
            * rotation(self.phi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(Error::Domain(format!(
                "warp scales must be positive, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Domain("noise sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// The full map as `x -> M x + b` for a given anchor.
    pub fn affine(&self, center: (f64, f64)) -> Affine2 {
        let a = self.linear();
        let c = Vector2::new(center.0, center.1);
        let t = Vector2::new(self.tx, self.ty);
        Affine2 {
            matrix: a,
            offset: c + t - a * c,
        }
    }
}

fn rotation(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Affine map `x -> matrix * x + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub matrix: Matrix2<f64>,
    pub offset: Vector2<f64>,
}

impl Affine2 {
    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let q = self.matrix * Vector2::new(p.0, p.1) + self.offset;
        (q.x, q.y)
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &Affine2) -> Affine2 {
        Affine2 {
            matrix: self.matrix * first.matrix,
            offset: self.matrix * first.offset + self.offset,
        }
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let inv = self.matrix.try_inverse()?;
        Some(Affine2 {
            matrix: inv,
            offset: -(inv * self.offset),
        })
    }
}

/// Per-parameter sampling intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpRanges {
    pub theta: Interval,
    pub phi: Interval,
    pub lambda1: Interval,
    pub lambda2: Interval,
    pub tx: Interval,
    pub ty: Interval,
    pub noise_sigma: Interval,
}

impl Default for WarpRanges {
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        Self {
            theta: Interval::new(-PI, PI),
            phi: Interval::new(-FRAC_PI_2, FRAC_PI_2),
            lambda1: Interval::new(0.6, 1.5),
            lambda2: Interval::new(0.6, 1.5),
            tx: Interval::new(-10.0, 10.0),
            ty: Interval::new(-10.0, 10.0),
            noise_sigma: Interval::new(0.0, 5.0),
        }
    }
}

impl WarpRanges {
    /// Every interval collapsed onto the identity warp.
    pub fn identity() -> Self {
        Self {
            theta: Interval::point(0.0),
            phi: Interval::point(0.0),
            lambda1: Interval::point(1.0),
            lambda2: Interval::point(1.0),
            tx: Interval::point(0.0),
            ty: Interval::point(0.0),
            noise_sigma: Interval::point(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("theta", self.theta),
            ("phi", self.phi),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("tx", self.tx),
            ("ty", self.ty),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, iv) in all {
            if !iv.is_valid() {
                return Err(Error::Configuration(format!(
                    "warp range {name} = [{}, {}] is empty",
                    iv.lo, iv.hi
                )));
            }
        }
        if self.lambda1.lo <= 0.0 || self.lambda2.lo <= 0.0 {
            return Err(Error::Configuration("warp scale ranges must be positive".into()));
        }
        if self.noise_sigma.lo < 0.0 {
            return Err(Error::Configuration("noise range must be non-negative".into()));
        }
        Ok(())
    }
}

/// Draws each parameter independently; the pixel-noise seed comes from the
/// same generator.
pub fn sample_warp<R: Rng + ?Sized>(ranges: &WarpRanges, rng: &mut R) -> WarpParams {
    WarpParams {
        theta: ranges.theta.sample(rng),
        phi: ranges.phi.sample(rng),
        lambda1: ranges.lambda1.sample(rng),
        lambda2: ranges.lambda2.sample(rng),
        tx: ranges.tx.sample(rng),
        ty: ranges.ty.sample(rng),
        noise_sigma: ranges.noise_sigma.sample(rng),
        seed: rng.next_u64(),
    }
}

/// Draws `count` warps in order from one seeded stream.
pub fn sample_warps(ranges: &WarpRanges, count: usize, seed: u64, stream: u64) -> Vec<WarpParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count).map(|_| sample_warp(ranges, &mut rng)).collect()
}

pub fn map_point(params: &WarpParams, center: (f64, f64), point: (f64, f64)) -> (f64, f64) {
    params.affine(center).apply(point)
}

pub fn map_point_inverse(params: &WarpParams, center: (f64, f64), point: (f64, f64)) -> (f64, f64) {
    let a_inv = params
        .linear()
        .try_inverse()
        .expect("positive scales give an invertible warp");
    let d = Vector2::new(point.0 - center.0 - params.tx, point.1 - center.1 - params.ty);
    let q = a_inv * d;
    (q.x + center.0, q.y + center.1)
}

/// Backward-maps every output pixel into the source, samples bilinearly
/// (0 outside), then adds clamped Gaussian intensity noise.
pub fn apply_warp(image: &GrayImage, params: &WarpParams) -> GrayImage {
    const EDGE_EPS: f64 = 1e-9;
    let (w, h) = (image.width(), image.height());
    let center = image.center();
    let inverse = params
        .affine(center)
        .inverse()
        .expect("positive scales give an invertible warp");
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);

    let mut values = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse.apply((x as f64, y as f64));
            if sx < -EDGE_EPS || sy < -EDGE_EPS || sx > max_x + EDGE_EPS || sy > max_y + EDGE_EPS {
                continue;
            }
            values[y * w + x] = bilinear_unchecked(image, sx.clamp(0.0, max_x), sy.clamp(0.0, max_y));
        }
    }

    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let normal = Normal::new(0.0, params.noise_sigma).expect("sigma is finite and positive");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    let data = values
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(w, h, data).expect("same dimensions as the input")
}
