//! Camera noise models: log-linear fits of read and row noise against gain,
//! and sampling of fresh parameter tuples from the fitted joint distribution.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::noise::NoiseParams;

/// Standard deviations below this are floored before taking logs.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Fitted noise-level functions of one camera.
///
/// `ln σ = a·ln K + b` and `ln σ_r = a_r·ln K + b_r`, with residual spreads
/// `sigma_hat` and `sigma_r_hat` and the observed gain range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub a: f64,
    pub b: f64,
    pub a_r: f64,
    pub b_r: f64,
    pub sigma_hat: f64,
    pub sigma_r_hat: f64,
    #[serde(rename = "K_min")]
    pub k_min: f64,
    #[serde(rename = "K_max")]
    pub k_max: f64,
    pub mu_c_model: f64,
    /// ISO-to-gain slope, `K = alpha · ISO`.
    #[serde(default)]
    pub alpha: Option<f64>,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.a_r, self.b_r, self.mu_c_model]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(domain("camera model coefficients must be finite"));
        }
        if !(self.k_min > 0.0 && self.k_min <= self.k_max && self.k_max.is_finite()) {
            return Err(domain(format!(
                "camera gain range must satisfy 0 < K_min <= K_max, got [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        if !(self.sigma_hat >= 0.0 && self.sigma_r_hat >= 0.0)
            || !self.sigma_hat.is_finite()
            || !self.sigma_r_hat.is_finite()
        {
            return Err(domain("residual spreads must be non-negative"));
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(domain(format!("alpha must be positive, got {alpha}")));
            }
        }
        Ok(())
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    /// Mean of `ln σ` at gain `k`.
    pub fn log_sigma_at(&self, k: f64) -> f64 {
        self.a * k.ln() + self.b
    }

    /// Mean of `ln σ_r` at gain `k`.
    pub fn log_sigma_r_at(&self, k: f64) -> f64 {
        self.a_r * k.ln() + self.b_r
    }
}

/// Per-image parameter estimates of one camera.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub entries: Vec<(String, NoiseParams)>,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, NoiseParams)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, params: NoiseParams) {
        self.entries.push((id.into(), params));
    }
}

/// Ordinary least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residual standard deviation with `n − 2` degrees of freedom; zero for two points.
    pub residual_std: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub n: usize,
}

/// OLS fit through centered sums.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("line fit needs at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    if x.iter().all(|v| *v == x[0]) {
        return Err(Error::DegenerateDesign("all regressor values are identical".into()));
    }
    let sxx: f64 = x.iter().map(|v| (v - mean_x).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mean_x) * (b - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let residual_std = if n > 2 { (rss / (nf - 2.0)).sqrt() } else { 0.0 };
    let slope_se = residual_std / sxx.sqrt();
    let intercept_se = residual_std * (1.0 / nf + mean_x * mean_x / sxx).sqrt();
    Ok(LineFit { slope, intercept, residual_std, slope_se, intercept_se, n })
}

fn floored_log(value: f64, what: &str, id: &str) -> Result<f64> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(domain(format!("{what} of '{id}' must be non-negative, got {value}")));
    }
    if value < SIGMA_FLOOR {
        warn!("{what} of '{id}' is {value}; flooring at {SIGMA_FLOOR} for the log fit");
        return Ok(SIGMA_FLOOR.ln());
    }
    Ok(value.ln())
}

/// Both log-linear fits of a camera, with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFit {
    pub model: CameraModel,
    pub read: LineFit,
    pub row: LineFit,
}

/// Fit `ln σ` and `ln σ_r` against `ln K` over a set of per-image estimates.
pub fn fit_log_linear(params: &ParamSet) -> Result<CameraModel> {
    fit_log_linear_detailed(params).map(|f| f.model)
}

pub fn fit_log_linear_detailed(params: &ParamSet) -> Result<CameraFit> {
    let m = params.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!("calibration needs at least 2 estimates, got {m}")));
    }
    let mut log_k = Vec::with_capacity(m);
    let mut log_s = Vec::with_capacity(m);
    let mut log_sr = Vec::with_capacity(m);
    for (id, p) in &params.entries {
        if !(p.k > 0.0 && p.k.is_finite()) {
            return Err(domain(format!("gain of '{id}' must be positive, got {}", p.k)));
        }
        if !p.mu_c.is_finite() {
            return Err(domain(format!("mu_c of '{id}' must be finite")));
        }
        log_k.push(p.k.ln());
        log_s.push(floored_log(p.sigma, "sigma", id)?);
        log_sr.push(floored_log(p.sigma_r, "sigma_r", id)?);
    }
    let read = fit_line(&log_k, &log_s)?;
    let row = fit_line(&log_k, &log_sr)?;
    let (k_min, k_max) = params
        .entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, p)| (lo.min(p.k), hi.max(p.k)));
    let mu_c_model = params.entries.iter().map(|(_, p)| p.mu_c).sum::<f64>() / m as f64;
    let model = CameraModel {
        a: read.slope,
        b: read.intercept,
        a_r: row.slope,
        b_r: row.intercept,
        sigma_hat: read.residual_std,
        sigma_r_hat: row.residual_std,
        k_min,
        k_max,
        mu_c_model,
        alpha: None,
    };
    Ok(CameraFit { model, read, row })
}

fn draw_conditional<R: Rng + ?Sized>(model: &CameraModel, k: f64, rng: &mut R) -> Result<NoiseParams> {
    let lk = k.ln();
    let read = Normal::new(model.a * lk + model.b, model.sigma_hat).map_err(|e| domain(e.to_string()))?;
    let row = Normal::new(model.a_r * lk + model.b_r, model.sigma_r_hat).map_err(|e| domain(e.to_string()))?;
    let sigma = read.sample(rng).exp();
    let sigma_r = row.sample(rng).exp();
    NoiseParams::new(k, sigma, model.mu_c_model, sigma_r)
}

/// Draw one tuple: `ln K` uniform over the gain range, then `ln σ` and `ln σ_r`
/// normal around the fitted lines. `μ_c` is the model's constant mean.
pub fn sample_params<R: Rng + ?Sized>(model: &CameraModel, rng: &mut R) -> Result<NoiseParams> {
    model.validate()?;
    let u: f64 = rng.random();
    let k = if model.k_min == model.k_max {
        model.k_min
    } else {
        let (lo, hi) = (model.k_min.ln(), model.k_max.ln());
        (lo + u * (hi - lo)).exp()
    };
    draw_conditional(model, k, rng)
}

/// Draw one tuple with the gain pinned to `alpha · iso`.
pub fn sample_params_at_iso<R: Rng + ?Sized>(model: &CameraModel, iso: f64, rng: &mut R) -> Result<NoiseParams> {
    model.validate()?;
    if !(iso > 0.0 && iso.is_finite()) {
        return Err(domain(format!("ISO must be positive, got {iso}")));
    }
    let alpha = model
        .alpha
        .ok_or_else(|| Error::MissingCalibration("camera model has no ISO-to-gain slope".into()))?;
    draw_conditional(model, alpha * iso, rng)
}

/// Through-origin least-squares slope of gain against ISO.
pub fn fit_iso_gain(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("ISO fit needs at least one (ISO, K) pair".into()));
    }
    for &(iso, k) in pairs {
        if !(iso > 0.0 && iso.is_finite() && k > 0.0 && k.is_finite()) {
            return Err(domain(format!("ISO and gain must be positive, got ({iso}, {k})")));
        }
    }
    let num: f64 = pairs.iter().map(|(o, k)| o * k).sum();
    let den: f64 = pairs.iter().map(|(o, _)| o * o).sum();
    Ok(num / den)
}
