//! Deterministic high-texture test images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{gaussian_smooth, GrayImage};

/// Layered random rectangles and ellipses over a low-frequency background,
/// lightly blurred. Produces many corners at a range of scales.
pub fn textured_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = vec![0f32; width * height];
    let (fx, fy): (f32, f32) = (rng.random_range(0.005..0.03), rng.random_range(0.005..0.03));
    for y in 0..height {
        for x in 0..width {
            canvas[y * width + x] =
                110.0 + 40.0 * ((x as f32 * fx).sin() + (y as f32 * fy).cos());
        }
    }

    let shapes = (width * height / 650).max(4);
    let max_side = (width.min(height) as f32 / 8.0).max(6.0);
    for _ in 0..shapes {
        let cx = rng.random_range(0.0..width as f32);
        let cy = rng.random_range(0.0..height as f32);
        let rx = rng.random_range(3.0..max_side);
        let ry = rng.random_range(3.0..max_side);
        let value = rng.random_range(0.0f32..255.0);
        let elliptical = rng.random_bool(0.35);
        let x0 = (cx - rx).floor().max(0.0) as usize;
        let x1 = ((cx + rx).ceil() as usize).min(width - 1);
        let y0 = (cy - ry).floor().max(0.0) as usize;
        let y1 = ((cy + ry).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = (x as f32 - cx) / rx;
                let dy = (y as f32 - cy) / ry;
                let inside = if elliptical {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    canvas[y * width + x] = value;
                }
            }
        }
    }

    let data = canvas
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let image = GrayImage::new(width, height, data).expect("dimensions are positive");
    gaussian_smooth(&image, 0.7).expect("sigma is positive")
}
