//! Held-out evaluation helpers.

use rayon::prelude::*;

use super::loss::{cosine, param_transform_r};
use super::{Estimator, Triplet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOutReport {
    /// Fraction of triplets with `cos(z, z⁺) > cos(z, z⁻)`.
    pub triplet_accuracy: f64,
    pub mean_cos_pos: f64,
    pub mean_cos_neg: f64,
    /// Mean squared error in the weighted regression space over all three roles.
    pub weighted_mse: f64,
    pub triplets: usize,
}

impl HeldOutReport {
    pub fn separation(&self) -> f64 {
        self.mean_cos_pos - self.mean_cos_neg
    }
}

fn sq_dist(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn evaluate_triplets(estimator: &Estimator, triplets: &[Triplet]) -> Result<HeldOutReport> {
    if triplets.is_empty() {
        return Err(Error::InsufficientData("no held-out triplets".into()));
    }
    let w = estimator.checkpoint().config.param_weights;
    let rows: Vec<(f64, f64, f64)> = triplets
        .par_iter()
        .map(|t| {
            let a = estimator.forward(&t.anchor)?;
            let p = estimator.forward(&t.positive)?;
            let n = estimator.forward(&t.negative)?;
            let ra = param_transform_r(&t.anchor_params, &w)?;
            let rn = param_transform_r(&t.negative_params, &w)?;
            let se = sq_dist(&ra, &a.r_hat) + sq_dist(&ra, &p.r_hat) + sq_dist(&rn, &n.r_hat);
            Ok((cosine(&a.z, &p.z)?, cosine(&a.z, &n.z)?, se))
        })
        .collect::<Result<_>>()?;
    let m = rows.len() as f64;
    Ok(HeldOutReport {
        triplet_accuracy: rows.iter().filter(|r| r.0 > r.1).count() as f64 / m,
        mean_cos_pos: rows.iter().map(|r| r.0).sum::<f64>() / m,
        mean_cos_neg: rows.iter().map(|r| r.1).sum::<f64>() / m,
        weighted_mse: rows.iter().map(|r| r.2).sum::<f64>() / (3.0 * m),
        triplets: rows.len(),
    })
}

/// Mean regression-space target over every patch role of `triplets`.
pub fn mean_r_vector(triplets: &[Triplet], w: &[f64; 4]) -> Result<[f64; 4]> {
    if triplets.is_empty() {
        return Err(Error::InsufficientData("no triplets".into()));
    }
    let mut acc = [0.0; 4];
    for t in triplets {
        for p in [&t.anchor_params, &t.anchor_params, &t.negative_params] {
            for (a, v) in acc.iter_mut().zip(param_transform_r(p, w)?) {
                *a += v;
            }
        }
    }
    Ok(acc.map(|a| a / (3 * triplets.len()) as f64))
}

/// Weighted MSE of always predicting `mean` on `triplets`.
pub fn baseline_mse(triplets: &[Triplet], mean: &[f64; 4], w: &[f64; 4]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::InsufficientData("no triplets".into()));
    }
    let mut se = 0.0;
    for t in triplets {
        let ra = param_transform_r(&t.anchor_params, w)?;
        let rn = param_transform_r(&t.negative_params, w)?;
        se += 2.0 * sq_dist(&ra, mean) + sq_dist(&rn, mean);
    }
    Ok(se / (3 * triplets.len()) as f64)
}
