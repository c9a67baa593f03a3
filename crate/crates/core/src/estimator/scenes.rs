//! Procedural clean scenes and a bank of virtual cameras for training and demos.

use ndarray::Array3;
use rand::Rng;
use rayon::prelude::*;

use crate::calibration::CameraModel;
use crate::noise::{RawPatch, CHANNELS};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Flat,
    Gradient,
    Rectangles,
    SmoothField,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [SceneKind::Flat, SceneKind::Gradient, SceneKind::Rectangles, SceneKind::SmoothField];
}

/// Scene levels are skewed toward the dark end, where read noise is visible.
fn level<R: Rng + ?Sized>(rng: &mut R, white_level: f64) -> f64 {
    let u: f64 = rng.random();
    white_level * u * u
}

fn smooth_field<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Vec<f64> {
    let grid = rng.random_range(2..=5usize);
    let knots: Vec<f64> = (0..(grid + 1) * (grid + 1)).map(|_| rng.random()).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let gy = y as f64 / h.max(2).saturating_sub(1) as f64 * grid as f64;
        let y0 = (gy.floor() as usize).min(grid - 1);
        let fy = gy - y0 as f64;
        for x in 0..w {
            let gx = x as f64 / w.max(2).saturating_sub(1) as f64 * grid as f64;
            let x0 = (gx.floor() as usize).min(grid - 1);
            let fx = gx - x0 as f64;
            let k = |yy: usize, xx: usize| knots[yy * (grid + 1) + xx];
            let top = k(y0, x0) * (1.0 - fx) + k(y0, x0 + 1) * fx;
            let bottom = k(y0 + 1, x0) * (1.0 - fx) + k(y0 + 1, x0 + 1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// One procedural scene with values in `[0, white_level]`.
///
/// The luminance layout is shared by the four CFA planes; each plane gets
/// its own color multiplier in `[0.6, 1]`.
pub fn procedural_scene<R: Rng + ?Sized>(kind: SceneKind, height: usize, width: usize, white_level: f64, rng: &mut R) -> RawPatch {
    let mut lum = vec![0.0; height * width];
    match kind {
        SceneKind::Flat => lum.fill(level(rng, white_level)),
        SceneKind::Gradient => {
            let (a, b) = (level(rng, white_level), level(rng, white_level));
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let extent = (height.max(width)) as f64;
            for y in 0..height {
                for x in 0..width {
                    let t = ((x as f64 * dx + y as f64 * dy) / extent * 0.5 + 0.5).clamp(0.0, 1.0);
                    lum[y * width + x] = a + (b - a) * t;
                }
            }
        }
        SceneKind::Rectangles => {
            lum.fill(level(rng, white_level));
            for _ in 0..rng.random_range(2..=6) {
                let (y0, x0) = (rng.random_range(0..height), rng.random_range(0..width));
                let (y1, x1) = (rng.random_range(y0..height) + 1, rng.random_range(x0..width) + 1);
                let v = level(rng, white_level);
                for y in y0..y1 {
                    lum[y * width + x0..y * width + x1].fill(v);
                }
            }
        }
        SceneKind::SmoothField => {
            let (a, b) = (level(rng, white_level), level(rng, white_level));
            for (l, f) in lum.iter_mut().zip(smooth_field(rng, height, width)) {
                *l = a + (b - a) * f;
            }
        }
    }
    let tint: Vec<f64> = (0..CHANNELS).map(|_| rng.random_range(0.6..=1.0)).collect();
    let data = Array3::from_shape_fn((CHANNELS, height, width), |(c, y, x)| {
        (lum[y * width + x] * tint[c]).clamp(0.0, white_level)
    });
    RawPatch::new(data).expect("procedural scenes are finite")
}

/// `count` scenes cycling through all kinds; scene `i` uses stream `i` of `seed`.
pub fn procedural_pool(count: usize, height: usize, width: usize, white_level: f64, seed: u64) -> Vec<RawPatch> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            procedural_scene(SceneKind::ALL[i % SceneKind::ALL.len()], height, width, white_level, &mut rng)
        })
        .collect()
}

/// Three virtual cameras used by tests and demos.
///
/// Gains span `[0.4, 8]` and read-noise slopes `[0.5, 0.85]`; the values are
/// configuration data, not measurements of real sensors.
pub fn virtual_camera_bank() -> Vec<CameraModel> {
    let cam = |a: f64, sigma_at_1: f64, a_r: f64, sigma_r_at_1: f64, k: (f64, f64), mu_c: f64, alpha: f64| CameraModel {
        a,
        b: sigma_at_1.ln(),
        a_r,
        b_r: sigma_r_at_1.ln(),
        sigma_hat: 0.05,
        sigma_r_hat: 0.05,
        k_min: k.0,
        k_max: k.1,
        mu_c_model: mu_c,
        alpha: Some(alpha),
    };
    vec![
        cam(0.5, 2.0, 0.7, 0.8, (0.4, 4.0), 0.05, 0.005),
        cam(0.7, 3.0, 0.9, 1.0, (0.5, 8.0), -0.05, 0.01),
        cam(0.85, 2.5, 0.6, 0.7, (0.4, 3.0), 0.0, 0.0025),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_in_range_and_seeded() {
        let a = procedural_pool(16, 12, 10, 255.0, 3);
        let b = procedural_pool(16, 12, 10, 255.0, 3);
        assert_eq!(a, b);
        for s in &a {
            assert_eq!(s.shape(), [4, 12, 10]);
            assert!(s.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        }
        assert_ne!(a[0], a[4]);
    }

    #[test]
    fn bank_is_valid() {
        for cam in virtual_camera_bank() {
            cam.validate().unwrap();
            assert!(cam.k_min >= 0.1 && cam.k_max <= 8.0);
            assert!((0.4..=0.9).contains(&cam.a));
        }
    }
}
