//! Noise parameter and patch types, and the fine-grained noise synthesizer.
//!
//! A noisy raw value is `clean + K·N_s + N_row + N_read` where
//!
//! * `clean + K·N_s` is `K` times a Poisson count with rate `clean / K`,
//! * `N_row` is one `N(0, σ_r²)` offset per physical bayer row,
//! * `N_read` is i.i.d. `N(μ_c, σ²)` per pixel.
//!
//! Patches are planar RGGB: channel order `(R, Gr, Gb, B)`, so packed row `j`
//! of channels `R` and `Gr` comes from bayer row `2j` and packed row `j` of
//! `Gb` and `B` from bayer row `2j + 1`.

use ndarray::{Array3, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Result};

/// Number of packed CFA planes in a [`RawPatch`].
pub const CHANNELS: usize = 4;

/// Largest Poisson rate the shot sampler accepts.
pub const MAX_POISSON_RATE: f64 = 1e7;

/// The per-image four-tuple `(K, σ, μ_c, σ_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Overall system gain, DN per electron.
    #[serde(rename = "K")]
    pub k: f64,
    /// Read-noise standard deviation, DN.
    pub sigma: f64,
    /// Read-noise mean offset (color bias), DN.
    pub mu_c: f64,
    /// Row-noise standard deviation, DN.
    pub sigma_r: f64,
}

impl NoiseParams {
    pub fn new(k: f64, sigma: f64, mu_c: f64, sigma_r: f64) -> Result<Self> {
        let p = Self { k, sigma, mu_c, sigma_r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(domain(format!("gain K must be positive and finite, got {}", self.k)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(domain(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if !self.mu_c.is_finite() {
            return Err(domain(format!("mu_c must be finite, got {}", self.mu_c)));
        }
        if !(self.sigma_r.is_finite() && self.sigma_r >= 0.0) {
            return Err(domain(format!("sigma_r must be non-negative, got {}", self.sigma_r)));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.k, self.sigma, self.mu_c, self.sigma_r]
    }

    /// Bitwise equality of all four components.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.as_array()
            .iter()
            .zip(other.as_array().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Planar 4-channel RGGB patch of digital numbers, `[channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPatch {
    data: Array3<f64>,
}

impl RawPatch {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != CHANNELS {
            return Err(shape(format!("raw patch needs {CHANNELS} channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(shape(format!("raw patch must be non-empty, got {h}x{w}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(domain("raw patch contains non-finite values"));
        }
        Ok(Self { data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && value.is_finite());
        Self { data: Array3::from_elem((CHANNELS, height, width), value) }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> [usize; 3] {
        let (c, h, w) = self.data.dim();
        [c, h, w]
    }

    /// Clamp every value into `[0, white_level]`.
    pub fn clamped(&self, white_level: f64) -> Self {
        Self { data: self.data.mapv(|v| v.clamp(0.0, white_level)) }
    }
}

/// The three noise terms of one synthesis and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    pub shot: Array3<f64>,
    pub row: Array3<f64>,
    pub read: Array3<f64>,
    pub total: Array3<f64>,
}

/// Shot-noise term `K·Poisson(clean/K) − clean`.
pub fn sample_shot<R: Rng + ?Sized>(clean: &RawPatch, gain: f64, rng: &mut R) -> Result<Array3<f64>> {
    if !(gain.is_finite() && gain > 0.0) {
        return Err(domain(format!("gain K must be positive, got {gain}")));
    }
    if let Some(v) = clean.data.iter().find(|v| **v < 0.0) {
        return Err(domain(format!("clean signal must be non-negative, found {v}")));
    }
    let mut out = Array3::zeros(clean.data.raw_dim());
    // Flat regions repeat the same rate; keep the last distribution around.
    let mut cached: Option<(f64, Poisson<f64>)> = None;
    for (o, &c) in out.iter_mut().zip(clean.data.iter()) {
        if c == 0.0 {
            continue;
        }
        let rate = c / gain;
        if rate > MAX_POISSON_RATE {
            return Err(domain(format!("Poisson rate {rate} exceeds {MAX_POISSON_RATE}")));
        }
        let dist = match &cached {
            Some((r, d)) if *r == rate => *d,
            _ => {
                let d = Poisson::new(rate).map_err(|e| domain(e.to_string()))?;
                cached = Some((rate, d));
                d
            }
        };
        let count: f64 = dist.sample(rng);
        *o = gain * count - c;
    }
    Ok(out)
}

/// I.i.d. `N(mu_c, sigma²)` read-noise term.
pub fn sample_read<R: Rng + ?Sized>(dims: [usize; 3], mu_c: f64, sigma: f64, rng: &mut R) -> Result<Array3<f64>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(domain(format!("sigma must be non-negative, got {sigma}")));
    }
    if !mu_c.is_finite() {
        return Err(domain(format!("mu_c must be finite, got {mu_c}")));
    }
    let shape = (dims[0], dims[1], dims[2]);
    if sigma == 0.0 {
        return Ok(Array3::from_elem(shape, mu_c));
    }
    let normal = Normal::new(mu_c, sigma).map_err(|e| domain(e.to_string()))?;
    Ok(Array3::from_shape_simple_fn(shape, || normal.sample(rng)))
}

/// Row-noise term: one `N(0, sigma_r²)` offset per physical bayer row.
///
/// Offsets are drawn in bayer row order `0, 1, …, 2H−1`.
pub fn sample_row<R: Rng + ?Sized>(dims: [usize; 3], sigma_r: f64, rng: &mut R) -> Result<Array3<f64>> {
    if dims[0] != CHANNELS {
        return Err(shape(format!("row noise needs a {CHANNELS}-channel shape, got {}", dims[0])));
    }
    if !(sigma_r.is_finite() && sigma_r >= 0.0) {
        return Err(domain(format!("sigma_r must be non-negative, got {sigma_r}")));
    }
    let (h, w) = (dims[1], dims[2]);
    let mut out = Array3::zeros((CHANNELS, h, w));
    if sigma_r == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma_r).map_err(|e| domain(e.to_string()))?;
    for j in 0..h {
        let even = normal.sample(rng);
        let odd = normal.sample(rng);
        out.slice_mut(ndarray::s![0..2, j, ..]).fill(even);
        out.slice_mut(ndarray::s![2..4, j, ..]).fill(odd);
    }
    Ok(out)
}

/// Physical bayer row index of packed `(channel, row)`.
pub fn bayer_row(channel: usize, packed_row: usize) -> usize {
    2 * packed_row + usize::from(channel >= 2)
}

/// Physical bayer column index of packed `(channel, col)`.
pub fn bayer_col(channel: usize, packed_col: usize) -> usize {
    2 * packed_col + usize::from(channel % 2 == 1)
}

/// Synthesize a noisy patch from a clean one.
///
/// Draw order on `rng` is shot, then row, then read. The result is neither
/// clamped nor quantized.
pub fn synthesize_noise<R: Rng + ?Sized>(
    clean: &RawPatch,
    params: &NoiseParams,
    rng: &mut R,
) -> Result<(RawPatch, NoiseSample)> {
    params.validate()?;
    let dims = clean.shape();
    let shot = sample_shot(clean, params.k, rng)?;
    let row = sample_row(dims, params.sigma_r, rng)?;
    let read = sample_read(dims, params.mu_c, params.sigma, rng)?;
    let mut total = Array3::zeros(clean.data.raw_dim());
    Zip::from(&mut total)
        .and(&shot)
        .and(&row)
        .and(&read)
        .for_each(|t, &s, &r, &n| *t = s + r + n);
    let noisy = &clean.data + &total;
    Ok((RawPatch { data: noisy }, NoiseSample { shot, row, read, total }))
}
