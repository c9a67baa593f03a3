//! Contrastive and regression objectives with their analytic gradients.

use ndarray::Array1;
use rayon::prelude::*;

use super::config::EstimatorConfig;
use super::network::{ForwardPass, Network};
use super::TripletBatch;
use crate::error::{domain, Result};
use crate::noise::NoiseParams;

/// Floors applied when mapping a prediction back to a parameter tuple.
pub const GAIN_FLOOR: f64 = 1e-6;
pub const SIGMA_FLOOR: f64 = 1e-6;
const MAX_LOG: f64 = 700.0;

/// `(w₁·K, w₂·ln σ, w₃·μ_c, w₄·ln σ_r)`.
pub fn param_transform_r(p: &NoiseParams, w: &[f64; 4]) -> Result<[f64; 4]> {
    if !(p.sigma > 0.0) || !(p.sigma_r > 0.0) {
        return Err(domain(format!(
            "regression transform needs positive sigma and sigma_r, got {} and {}",
            p.sigma, p.sigma_r
        )));
    }
    Ok([w[0] * p.k, w[1] * p.sigma.ln(), w[2] * p.mu_c, w[3] * p.sigma_r.ln()])
}

/// Raw inverse of [`param_transform_r`]: `(K, σ, μ_c, σ_r)` without floors.
pub fn param_transform_r_inverse(r: &[f64; 4], w: &[f64; 4]) -> [f64; 4] {
    [
        r[0] / w[0],
        (r[1] / w[1]).min(MAX_LOG).exp(),
        r[2] / w[2],
        (r[3] / w[3]).min(MAX_LOG).exp(),
    ]
}

/// Map a regression-space prediction to a valid tuple (gain and spreads floored).
pub fn prediction_to_params(r: &[f64; 4], w: &[f64; 4]) -> NoiseParams {
    let [k, sigma, mu_c, sigma_r] = param_transform_r_inverse(r, w);
    let finite_or = |v: f64, fallback: f64| if v.is_finite() { v } else { fallback };
    NoiseParams {
        k: finite_or(k, GAIN_FLOOR).max(GAIN_FLOOR),
        sigma: sigma.max(SIGMA_FLOOR),
        mu_c: finite_or(mu_c, 0.0),
        sigma_r: sigma_r.max(SIGMA_FLOOR),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(domain("cosine similarity of vectors with different lengths"));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(domain("cosine similarity of a zero-norm vector"));
    }
    Ok(dot(a, b) / (na * nb))
}

/// `d cos(a, b) / d a`.
fn cosine_grad(a: &[f64], b: &[f64], cos: f64) -> Array1<f64> {
    let (na, nb) = (norm(a), norm(b));
    Array1::from_iter(a.iter().zip(b).map(|(&x, &y)| y / (na * nb) - cos * x / (na * na)))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `−ln[exp(cos(z, z⁺)/τ) / Σ exp(cos(z, z^±)/τ)]`, the sum running over the
/// positive and every negative.
pub fn contrastive_loss(z: &[f64], z_pos: &[f64], z_negs: &[&[f64]], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(domain(format!("temperature must be positive, got {tau}")));
    }
    let mut logits = Vec::with_capacity(1 + z_negs.len());
    logits.push(cosine(z, z_pos)? / tau);
    for n in z_negs {
        logits.push(cosine(z, n)? / tau);
    }
    Ok(log_sum_exp(&logits) - logits[0])
}

/// Which stage's objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Contrastive loss only; the head is not evaluated.
    Contrastive,
    /// Mean weighted regression error plus `tau_loss` times the contrastive loss.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub contrastive: f64,
    /// Zero under [`Objective::Contrastive`].
    pub regression: f64,
}

/// The per-patch view of a batch: anchors, then positives, then negatives.
pub(crate) struct Flattened<'a> {
    pub patches: Vec<&'a crate::noise::RawPatch>,
    pub params: Vec<NoiseParams>,
    pub triplets: usize,
}

pub(crate) fn flatten(batch: &TripletBatch) -> Flattened<'_> {
    let b = batch.len();
    let mut patches = Vec::with_capacity(3 * b);
    patches.extend(batch.anchors.iter());
    patches.extend(batch.positives.iter());
    patches.extend(batch.negatives.iter());
    let mut params = Vec::with_capacity(3 * b);
    params.extend(batch.anchor_params.iter().copied());
    params.extend(batch.anchor_params.iter().copied());
    params.extend(batch.negative_params.iter().copied());
    Flattened { patches, params, triplets: b }
}

/// In-batch candidates of anchor `i`: its positive first, then every other
/// patch whose tuple differs from the anchor's.
pub(crate) fn candidates(i: usize, flat: &Flattened<'_>) -> Vec<usize> {
    let b = flat.triplets;
    let mut out = vec![b + i];
    for n in 0..flat.patches.len() {
        if n == i || n == b + i || flat.params[n].bit_eq(&flat.params[i]) {
            continue;
        }
        out.push(n);
    }
    out
}

pub(crate) struct Evaluated {
    pub loss: LossBreakdown,
    pub d_z: Vec<Array1<f64>>,
    pub d_r: Vec<Option<Array1<f64>>>,
}

/// Loss and its gradients with respect to every projection and head output.
pub(crate) fn evaluate_outputs(
    passes: &[ForwardPass],
    flat: &Flattened<'_>,
    config: &EstimatorConfig,
    objective: Objective,
    tau_loss: f64,
) -> Result<Evaluated> {
    let b = flat.triplets;
    let n = passes.len();
    let tau = config.temperature;
    let zs: Vec<&[f64]> = passes.iter().map(|p| p.z.as_slice().unwrap()).collect();
    let mut d_z: Vec<Array1<f64>> = passes.iter().map(|p| Array1::zeros(p.z.len())).collect();

    let contrast_scale = match objective {
        Objective::Contrastive => 1.0,
        Objective::Joint => tau_loss,
    };
    let mut contrastive = 0.0;
    for i in 0..b {
        let cand = candidates(i, flat);
        let mut cos = Vec::with_capacity(cand.len());
        for &j in &cand {
            cos.push(cosine(zs[i], zs[j])?);
        }
        let logits: Vec<f64> = cos.iter().map(|c| c / tau).collect();
        let lse = log_sum_exp(&logits);
        contrastive += lse - logits[0];
        for (slot, (&j, &c)) in cand.iter().zip(&cos).enumerate() {
            let soft = (logits[slot] - lse).exp();
            let dl_dlogit = soft - f64::from(u8::from(slot == 0));
            let coef = contrast_scale * dl_dlogit / (tau * b as f64);
            if coef == 0.0 {
                continue;
            }
            d_z[i].scaled_add(coef, &cosine_grad(zs[i], zs[j], c));
            d_z[j].scaled_add(coef, &cosine_grad(zs[j], zs[i], c));
        }
    }
    contrastive /= b as f64;

    let mut regression = 0.0;
    let mut d_r = vec![None; n];
    if objective == Objective::Joint {
        for (k, pass) in passes.iter().enumerate() {
            let target = param_transform_r(&flat.params[k], &config.param_weights)?;
            let pred = pass.r_hat.as_ref().expect("joint objective needs head outputs");
            let diff: Vec<f64> = target.iter().zip(pred.iter()).map(|(t, p)| t - p).collect();
            regression += diff.iter().map(|d| d * d).sum::<f64>();
            d_r[k] = Some(Array1::from_iter(diff.iter().map(|d| -2.0 * d / n as f64)));
        }
        regression /= n as f64;
    }
    let total = match objective {
        Objective::Contrastive => contrastive,
        Objective::Joint => regression + tau_loss * contrastive,
    };
    Ok(Evaluated { loss: LossBreakdown { total, contrastive, regression }, d_z, d_r })
}

pub(crate) fn forward_all(
    net: &Network,
    params: &[f64],
    flat: &Flattened<'_>,
    with_head: bool,
) -> Result<Vec<ForwardPass>> {
    flat.patches
        .par_iter()
        .map(|p| net.forward(params, p, with_head))
        .collect()
}

/// Batch loss; `tau_loss` overrides the configured contrastive weight.
pub fn batch_loss(
    net: &Network,
    params: &[f64],
    batch: &TripletBatch,
    config: &EstimatorConfig,
    objective: Objective,
    tau_loss: f64,
) -> Result<LossBreakdown> {
    batch.check()?;
    let flat = flatten(batch);
    let passes = forward_all(net, params, &flat, objective == Objective::Joint)?;
    Ok(evaluate_outputs(&passes, &flat, config, objective, tau_loss)?.loss)
}

/// Batch loss and its exact gradient with respect to every parameter.
///
/// Per-sample gradients are computed in parallel and summed in patch order,
/// so the result does not depend on the number of worker threads.
pub fn batch_gradient(
    net: &Network,
    params: &[f64],
    batch: &TripletBatch,
    config: &EstimatorConfig,
    objective: Objective,
    tau_loss: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    batch.check()?;
    let flat = flatten(batch);
    let passes = forward_all(net, params, &flat, objective == Objective::Joint)?;
    let ev = evaluate_outputs(&passes, &flat, config, objective, tau_loss)?;
    let per_sample: Vec<Vec<f64>> = (0..passes.len())
        .into_par_iter()
        .map(|k| {
            let mut g = vec![0.0; net.n_params()];
            net.backward(params, &passes[k], Some(&ev.d_z[k]), ev.d_r[k].as_ref(), &mut g);
            g
        })
        .collect();
    let mut grads = vec![0.0; net.n_params()];
    for g in &per_sample {
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok((ev.loss, grads))
}
