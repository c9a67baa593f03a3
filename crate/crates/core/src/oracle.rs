//! Component-by-component statistical estimation of [`NoiseParams`] from
//! controlled captures: flat fields at known levels and dark frames.
//!
//! The color bias is estimated first and subtracted, then the row noise is
//! taken from the darks, and finally the gain and total signal-independent
//! variance come from a photon-transfer regression of per-level variance
//! against level.
//!
//! Per-frame statistics are reduced after sorting them, so every estimate is
//! bit-identical under any permutation of the frames.

use std::cmp::Ordering;

use log::warn;
use ndarray::{s, ArrayView3};

use crate::calibration::fit_line;
use crate::error::{shape, Error, Result};
use crate::noise::{NoiseParams, RawPatch};

/// Composed estimates never report a gain below this.
pub const GAIN_FLOOR: f64 = 1e-6;

/// Narrowest physical frame width accepted by the row-noise estimator.
pub const MIN_ROW_WIDTH: usize = 16;

/// Flat-field frames captured at one known clean level.
#[derive(Debug, Clone)]
pub struct FlatLevel {
    pub level: f64,
    pub frames: Vec<RawPatch>,
}

/// Result of the photon-transfer regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonTransfer {
    /// Regression slope, the gain `K`.
    pub gain: f64,
    /// Regression intercept `σ² + σ_r²`, floored at zero.
    pub read_variance: f64,
    /// `√read_variance`.
    pub sigma_total: f64,
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn of(values: impl Iterator<Item = f64> + Clone, offset: f64) -> Self {
        let mut n = 0usize;
        let mut sum = 0.0;
        for v in values.clone() {
            sum += v - offset;
            n += 1;
        }
        let mean = sum / n as f64;
        let m2 = values.map(|v| (v - offset - mean).powi(2)).sum();
        Self { n: n as f64, mean, m2 }
    }

    fn key(&self, other: &Self) -> Ordering {
        self.mean
            .total_cmp(&other.mean)
            .then(self.m2.total_cmp(&other.m2))
            .then(self.n.total_cmp(&other.n))
    }

    /// Merge in sorted order (Chan et al. pairwise update).
    fn pooled(mut parts: Vec<Moments>) -> Moments {
        parts.sort_by(Moments::key);
        let mut acc = parts[0];
        for p in &parts[1..] {
            let n = acc.n + p.n;
            let delta = p.mean - acc.mean;
            acc = Moments {
                n,
                mean: acc.mean + delta * p.n / n,
                m2: acc.m2 + p.m2 + delta * delta * acc.n * p.n / n,
            };
        }
        acc
    }

    fn unbiased_variance(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }
}

fn frame_moments(frame: &RawPatch, offset: f64) -> Moments {
    Moments::of(frame.data().iter().copied(), offset)
}

fn sorted_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn gain_and_read(series: &[FlatLevel], offset: f64) -> Result<PhotonTransfer> {
    let mut levels: Vec<(f64, f64)> = Vec::with_capacity(series.len());
    for lvl in series {
        if lvl.frames.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "level {} has {} frames; at least 2 are required",
                lvl.level,
                lvl.frames.len()
            )));
        }
        let pooled = Moments::pooled(lvl.frames.iter().map(|f| frame_moments(f, offset)).collect());
        levels.push((lvl.level, pooled.unbiased_variance()));
    }
    levels.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let distinct = levels.windows(2).filter(|w| w[0].0 != w[1].0).count() + usize::from(!levels.is_empty());
    if distinct < 2 {
        return Err(Error::InsufficientData(format!(
            "photon transfer needs at least 2 distinct levels, got {distinct}"
        )));
    }
    let x: Vec<f64> = levels.iter().map(|l| l.0).collect();
    let y: Vec<f64> = levels.iter().map(|l| l.1).collect();
    let fit = fit_line(&x, &y)?;
    let read_variance = if fit.intercept < 0.0 {
        warn!("photon-transfer intercept {} is negative; flooring at 0", fit.intercept);
        0.0
    } else {
        fit.intercept
    };
    Ok(PhotonTransfer { gain: fit.slope, read_variance, sigma_total: read_variance.sqrt() })
}

/// Regress per-level pooled variance on level: slope `K`, intercept `σ² + σ_r²`.
pub fn estimate_gain_and_read(series: &[FlatLevel]) -> Result<PhotonTransfer> {
    gain_and_read(series, 0.0)
}

/// Physical row-mean and column-mean variances of one frame.
fn row_column_variances(frame: ArrayView3<f64>, offset: f64) -> (f64, f64) {
    let (_, h, w) = frame.dim();
    // physical row 2j = R|Gr of packed row j, 2j+1 = Gb|B
    let mut row_means = Vec::with_capacity(2 * h);
    for j in 0..h {
        for pair in [0..2, 2..4] {
            let sum: f64 = frame.slice(s![pair, j, ..]).iter().map(|v| v - offset).sum();
            row_means.push(sum / (2 * w) as f64);
        }
    }
    // physical column 2i = R|Gb of packed column i, 2i+1 = Gr|B
    let mut col_means = Vec::with_capacity(2 * w);
    for i in 0..w {
        for (top, bottom) in [(0, 2), (1, 3)] {
            let sum: f64 = frame
                .slice(s![top, .., i])
                .iter()
                .chain(frame.slice(s![bottom, .., i]).iter())
                .map(|v| v - offset)
                .sum();
            col_means.push(sum / (2 * h) as f64);
        }
    }
    let var = |m: &[f64]| Moments::of(m.iter().copied(), 0.0).unbiased_variance();
    (var(&row_means), var(&col_means))
}

fn row_sigma(darks: &[RawPatch], offset: f64) -> Result<f64> {
    if darks.is_empty() {
        return Err(Error::InsufficientData("row-noise estimation needs at least one dark frame".into()));
    }
    let mut per_frame = Vec::with_capacity(darks.len());
    for frame in darks {
        let (h, w) = (frame.height(), frame.width());
        if 2 * w < MIN_ROW_WIDTH || h < 1 {
            return Err(shape(format!(
                "row-noise estimation needs frames at least {MIN_ROW_WIDTH} pixels wide, got {}",
                2 * w
            )));
        }
        let (vr, vc) = row_column_variances(frame.data().view(), offset);
        // Var(row mean) = σ_r² + σ²/W_phys, Var(col mean) = σ²/H_phys
        per_frame.push(vr - vc * h as f64 / w as f64);
    }
    Ok(sorted_mean(per_frame).max(0.0).sqrt())
}

/// Row-noise standard deviation from zero-illumination frames.
pub fn estimate_row_sigma(dark_frames: &[RawPatch]) -> Result<f64> {
    row_sigma(dark_frames, 0.0)
}

/// Global mean of all dark pixels.
pub fn estimate_color_bias(dark_frames: &[RawPatch]) -> Result<f64> {
    if dark_frames.is_empty() {
        return Err(Error::InsufficientData("color-bias estimation needs at least one dark frame".into()));
    }
    let mut sums: Vec<(f64, usize)> = dark_frames
        .iter()
        .map(|f| (f.data().iter().sum::<f64>(), f.data().len()))
        .collect();
    sums.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let total: f64 = sums.iter().map(|s| s.0).sum();
    let count: usize = sums.iter().map(|s| s.1).sum();
    Ok(total / count as f64)
}

/// Full four-tuple from flat-field series and dark frames.
pub fn estimate_params_oracle(flat_series: &[FlatLevel], dark_frames: &[RawPatch]) -> Result<NoiseParams> {
    let mu_c = estimate_color_bias(dark_frames)?;
    let sigma_r = row_sigma(dark_frames, mu_c)?;
    let pt = gain_and_read(flat_series, mu_c)?;
    let sigma = (pt.read_variance - sigma_r * sigma_r).max(0.0).sqrt();
    let k = if pt.gain < GAIN_FLOOR {
        warn!("estimated gain {} is below {GAIN_FLOOR}; flooring", pt.gain);
        GAIN_FLOOR
    } else {
        pt.gain
    };
    NoiseParams::new(k, sigma, mu_c, sigma_r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::synthesize_noise;
    use crate::rng::stream_rng;

    fn flats(levels: &[f64], frames: usize, size: usize) -> Vec<FlatLevel> {
        levels
            .iter()
            .map(|&c| FlatLevel { level: c, frames: vec![RawPatch::filled(size, size, c); frames] })
            .collect()
    }

    #[test]
    fn noiseless_photon_transfer() {
        let pt = estimate_gain_and_read(&flats(&[0.0, 10.0, 50.0, 200.0], 3, 8)).unwrap();
        assert!(pt.gain.abs() <= 1e-9);
        assert!(pt.read_variance.abs() <= 1e-9);
    }

    #[test]
    fn insufficient_inputs() {
        assert!(matches!(estimate_gain_and_read(&flats(&[5.0], 4, 8)), Err(Error::InsufficientData(_))));
        assert!(matches!(estimate_gain_and_read(&flats(&[5.0, 5.0], 4, 8)), Err(Error::InsufficientData(_))));
        assert!(matches!(estimate_gain_and_read(&flats(&[1.0, 5.0], 1, 8)), Err(Error::InsufficientData(_))));
        assert!(matches!(estimate_row_sigma(&[]), Err(Error::InsufficientData(_))));
        assert!(matches!(estimate_color_bias(&[]), Err(Error::InsufficientData(_))));
        assert!(matches!(estimate_row_sigma(&[RawPatch::zeros(8, 4)]), Err(Error::Shape(_))));
    }

    #[test]
    fn constant_darks() {
        let darks = vec![RawPatch::filled(8, 8, 5.0); 3];
        assert_eq!(estimate_color_bias(&darks).unwrap(), 5.0);
        assert_eq!(estimate_row_sigma(&darks).unwrap(), 0.0);
    }

    #[test]
    fn noiseless_composition() {
        let p = estimate_params_oracle(&flats(&[0.0, 10.0, 50.0], 3, 8), &vec![RawPatch::filled(8, 8, 3.0); 2]).unwrap();
        assert_eq!(p.k, GAIN_FLOOR);
        assert_eq!(p.sigma, 0.0);
        assert_eq!(p.sigma_r, 0.0);
        assert_eq!(p.mu_c, 3.0);
    }

    fn dark_set(params: &NoiseParams, n: usize, size: usize, seed: u64) -> Vec<RawPatch> {
        (0..n)
            .map(|i| synthesize_noise(&RawPatch::zeros(size, size), params, &mut stream_rng(seed, i as u64)).unwrap().0)
            .collect()
    }

    #[test]
    fn row_estimate_without_row_noise() {
        let p = NoiseParams::new(1.0, 2.0, 0.0, 0.0).unwrap();
        let sr = estimate_row_sigma(&dark_set(&p, 64, 128, 11)).unwrap();
        assert!(sr <= 0.05 * 2.0, "sigma_r {sr}");
    }

    #[test]
    fn permutation_is_bit_identical() {
        let p = NoiseParams::new(0.5, 2.0, 1.0, 0.5).unwrap();
        let mut darks = dark_set(&p, 6, 16, 3);
        let mut series: Vec<FlatLevel> = [10.0, 40.0, 90.0]
            .iter()
            .enumerate()
            .map(|(j, &c)| FlatLevel {
                level: c,
                frames: (0..5)
                    .map(|i| {
                        synthesize_noise(&RawPatch::filled(16, 16, c), &p, &mut stream_rng(9, (j * 10 + i) as u64))
                            .unwrap()
                            .0
                    })
                    .collect(),
            })
            .collect();
        let before = estimate_params_oracle(&series, &darks).unwrap();
        darks.reverse();
        darks.rotate_left(2);
        for lvl in &mut series {
            lvl.frames.reverse();
            lvl.frames.swap(0, 3);
        }
        series.reverse();
        let after = estimate_params_oracle(&series, &darks).unwrap();
        assert!(before.bit_eq(&after), "{before:?} vs {after:?}");
    }
}
