//! Histogram KL divergence between noise samples.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};

pub const DEFAULT_BINS: usize = 256;
/// Additive smoothing applied to every bin before renormalization.
pub const KL_EPSILON: f64 = 1e-10;
/// Half-width of the default range in pooled standard deviations.
pub const RANGE_SIGMAS: f64 = 6.0;

/// Uniformly binned, normalized histogram of noise values.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseHistogram {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
    pub count: usize,
}

impl NoiseHistogram {
    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.bins();
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }

    fn same_geometry(&self, other: &Self) -> bool {
        self.bins() == other.bins()
            && self.lo.to_bits() == other.lo.to_bits()
            && self.hi.to_bits() == other.hi.to_bits()
    }
}

/// Bin `values` uniformly over `[lo, hi)`; out-of-range values go to the end bins.
pub fn build_histogram(values: &[f64], bins: usize, range: (f64, f64)) -> Result<NoiseHistogram> {
    let (lo, hi) = range;
    if bins < 2 {
        return Err(shape(format!("histogram needs at least 2 bins, got {bins}")));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(shape(format!("histogram range must satisfy lo < hi, got ({lo}, {hi})")));
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("histogram needs at least one sample".into()));
    }
    let mut counts = vec![0u64; bins];
    let scale = bins as f64 / (hi - lo);
    for &v in values {
        if v.is_nan() {
            return Err(Error::Domain("histogram input contains NaN".into()));
        }
        let idx = ((v - lo) * scale).floor();
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(bins - 1) };
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    Ok(NoiseHistogram {
        lo,
        hi,
        masses: counts.iter().map(|&c| c as f64 / n).collect(),
        count: values.len(),
    })
}

/// `(μ − 6s, μ + 6s)` from the pooled moments of all sample sets.
pub fn default_range(samples: &[&[f64]]) -> Result<(f64, f64)> {
    let n: usize = samples.iter().map(|s| s.len()).sum();
    if n < 2 {
        return Err(Error::InsufficientData("default range needs at least 2 samples".into()));
    }
    let mean = samples.iter().flat_map(|s| s.iter()).sum::<f64>() / n as f64;
    let var = samples
        .iter()
        .flat_map(|s| s.iter())
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / (n - 1) as f64;
    let half = RANGE_SIGMAS * var.sqrt();
    // constant inputs still need a non-empty range
    let half = if half > 0.0 { half } else { 0.5 * mean.abs().max(1.0) };
    Ok((mean - half, mean + half))
}

/// `Σ p_i ln(p_i / q_i)` after ε-smoothing and renormalizing both histograms.
pub fn kl_divergence(p: &NoiseHistogram, q: &NoiseHistogram) -> Result<f64> {
    if !p.same_geometry(q) {
        return Err(shape("histograms have different bin geometry"));
    }
    let norm = 1.0 + KL_EPSILON * p.bins() as f64;
    Ok(p.masses
        .iter()
        .zip(&q.masses)
        .map(|(&pi, &qi)| {
            let ps = (pi + KL_EPSILON) / norm;
            let qs = (qi + KL_EPSILON) / norm;
            ps * (ps / qs).ln()
        })
        .sum())
}

/// Reported alongside every KL score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlReport {
    pub bins: usize,
    pub range: [f64; 2],
    pub epsilon: f64,
    pub kl: f64,
    /// Reference (`p`) and candidate (`q`) sample counts.
    pub sample_counts: [usize; 2],
}

/// Histogram both sample sets on a shared default range and score `KL(ref ‖ cand)`.
pub fn score_kl(reference: &[f64], candidate: &[f64], bins: usize) -> Result<KlReport> {
    let range = default_range(&[reference, candidate])?;
    let p = build_histogram(reference, bins, range)?;
    let q = build_histogram(candidate, bins, range)?;
    Ok(KlReport {
        bins,
        range: [range.0, range.1],
        epsilon: KL_EPSILON,
        kl: kl_divergence(&p, &q)?,
        sample_counts: [p.count, q.count],
    })
}
