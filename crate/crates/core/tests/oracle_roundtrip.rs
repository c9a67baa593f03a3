use std::time::Instant;

use rayon::prelude::*;

use noisekit::oracle::{estimate_color_bias, estimate_gain_and_read, estimate_row_sigma};
use noisekit::rng::stream_rng;
use noisekit::{estimate_params_oracle, synthesize_noise, FlatLevel, NoiseParams, RawPatch};

const SIZE: usize = 128;
const LEVELS: [f64; 8] = [5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0, 640.0];

fn frames(p: &NoiseParams, level: f64, n: usize, size: usize, seed: u64) -> Vec<RawPatch> {
    let clean = RawPatch::filled(size, size, level);
    (0..n)
        .into_par_iter()
        .map(|i| synthesize_noise(&clean, p, &mut stream_rng(seed, i as u64)).unwrap().0)
        .collect()
}

/// 64 flat frames spread over eight levels, plus 64 dark frames.
fn capture(p: &NoiseParams, seed: u64) -> (Vec<FlatLevel>, Vec<RawPatch>) {
    let per_level = 64 / LEVELS.len();
    let flats = LEVELS
        .iter()
        .enumerate()
        .map(|(j, &level)| FlatLevel { level, frames: frames(p, level, per_level, SIZE, seed * 100 + j as u64) })
        .collect();
    (flats, frames(p, 0.0, 64, SIZE, seed * 100 + 99))
}

fn rel(est: f64, truth: f64) -> f64 {
    (est / truth - 1.0).abs()
}

#[test]
fn full_recovery() {
    let sets = [
        (0.5, 2.0, 1.0, 0.5),
        (6.0, 4.0, 0.0, 2.0),
        (4.0, 6.0, 0.0, 1.0),
        (1.5, 2.0, 0.1, 0.5),
        (2.0, 3.0, -0.3, 1.0),
    ];
    for (i, &(k, sigma, mu_c, sigma_r)) in sets.iter().enumerate() {
        let truth = NoiseParams::new(k, sigma, mu_c, sigma_r).unwrap();
        let (flats, darks) = capture(&truth, i as u64 + 1);
        let start = Instant::now();
        let est = estimate_params_oracle(&flats, &darks).unwrap();
        assert!(start.elapsed().as_secs_f64() < 10.0);
        assert!(rel(est.k, k) <= 0.05, "set {i}: K {} vs {k}", est.k);
        assert!(rel(est.sigma, sigma) <= 0.10, "set {i}: sigma {} vs {sigma}", est.sigma);
        assert!(rel(est.sigma_r, sigma_r) <= 0.10, "set {i}: sigma_r {} vs {sigma_r}", est.sigma_r);
        assert!((est.mu_c - mu_c).abs() <= 0.05, "set {i}: mu_c {} vs {mu_c}", est.mu_c);
    }
}

#[test]
fn photon_transfer_total_read_noise() {
    for (i, (k, sigma, sigma_r)) in [(0.5, 2.0, 0.5), (4.0, 6.0, 1.0)].into_iter().enumerate() {
        let truth = NoiseParams::new(k, sigma, 0.0, sigma_r).unwrap();
        let (flats, _) = capture(&truth, 10 + i as u64);
        let pt = estimate_gain_and_read(&flats).unwrap();
        let total = (sigma * sigma + sigma_r * sigma_r as f64).sqrt();
        assert!(rel(pt.gain, k) <= 0.05, "K {}", pt.gain);
        assert!(rel(pt.sigma_total, total) <= 0.05, "total {} vs {total}", pt.sigma_total);
    }
}

#[test]
fn row_sigma_and_bias_from_darks() {
    for (i, (sigma, sigma_r, mu_c)) in [(2.0, 0.5, 0.0), (1.0, 3.0, -1.0), (2.0, 0.5, 1.0)].into_iter().enumerate() {
        let p = NoiseParams::new(1.0, sigma, mu_c, sigma_r).unwrap();
        let darks = frames(&p, 0.0, 64, SIZE, 500 + i as u64);
        let sr = estimate_row_sigma(&darks.iter().map(|f| shift(f, -mu_c)).collect::<Vec<_>>()).unwrap();
        assert!(rel(sr, sigma_r) <= 0.10, "sigma_r {sr} vs {sigma_r}");
        let mu = estimate_color_bias(&darks).unwrap();
        assert!((mu - mu_c).abs() <= 0.05, "mu_c {mu}");
    }
}

fn shift(f: &RawPatch, by: f64) -> RawPatch {
    RawPatch::new(f.data() + by).unwrap()
}

#[test]
fn color_bias_at_one_million_pixels() {
    // 16 frames of 4×128×128 hold 2^20 pixels; row offsets are kept out of the bias budget
    for (mu_c, seed) in [(1.0, 600), (-0.3, 601)] {
        let p = NoiseParams::new(1.0, 2.0, mu_c, 0.0).unwrap();
        let mu = estimate_color_bias(&frames(&p, 0.0, 16, SIZE, seed)).unwrap();
        assert!((mu - mu_c).abs() <= 0.01, "mu_c {mu} vs {mu_c}");
    }
}

#[test]
fn row_estimate_ignores_pixel_noise() {
    let p = NoiseParams::new(1.0, 2.0, 0.0, 0.0).unwrap();
    let sr = estimate_row_sigma(&frames(&p, 0.0, 64, SIZE, 700)).unwrap();
    assert!(sr <= 0.05 * 2.0, "sigma_r {sr}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn dark_estimates_are_consistent() {
    let p = NoiseParams::new(1.0, 2.0, 0.5, 0.8).unwrap();
    let mut errs = Vec::new();
    for n in [16, 64, 256] {
        let trials: Vec<(f64, f64)> = (0..20u64)
            .map(|t| {
                let darks = frames(&p, 0.0, n, 32, 10_000 * n as u64 + t);
                let mu = estimate_color_bias(&darks).unwrap();
                let centered: Vec<RawPatch> = darks.iter().map(|f| shift(f, -mu)).collect();
                let sr = estimate_row_sigma(&centered).unwrap();
                ((mu - p.mu_c).abs(), (sr - p.sigma_r).abs())
            })
            .collect();
        errs.push((median(trials.iter().map(|t| t.0).collect()), median(trials.iter().map(|t| t.1).collect())));
    }
    for w in errs.windows(2) {
        assert!(w[1].0 < w[0].0 && w[1].1 < w[0].1, "errors do not shrink: {errs:?}");
    }
}

#[test]
fn permuting_frames_is_bit_identical() {
    let p = NoiseParams::new(2.0, 1.5, 0.2, 0.4).unwrap();
    let (flats, darks) = capture(&p, 42);
    let a = estimate_params_oracle(&flats, &darks).unwrap();
    let mut flats_rev = flats.clone();
    for l in &mut flats_rev {
        l.frames.reverse();
    }
    let mut darks_rev = darks.clone();
    darks_rev.rotate_left(7);
    let b = estimate_params_oracle(&flats_rev, &darks_rev).unwrap();
    assert!(a.bit_eq(&b), "{a:?} vs {b:?}");
}
