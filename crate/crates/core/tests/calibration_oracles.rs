use noisekit::calibration::{fit_line, fit_log_linear, sample_params, CameraModel, ParamSet};
use noisekit::rng::stream_rng;
use noisekit::NoiseParams;
use rand::Rng;

/// Normal equations `[n Σx; Σx Σx²]·[b; a] = [Σy; Σxy]` solved by Cramer's rule.
fn normal_equations(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    let a = (n * sxy - sx * sy) / det;
    let b = (sxx * sy - sx * sxy) / det;
    let rss: f64 = x.iter().zip(y).map(|(u, v)| (v - a * u - b).powi(2)).sum();
    (a, b, (rss / (n - 2.0)).sqrt())
}

fn set_of(points: &[(f64, f64, f64)]) -> ParamSet {
    let mut s = ParamSet::default();
    for (i, &(k, sigma, sigma_r)) in points.iter().enumerate() {
        s.push(format!("p{i}"), NoiseParams::new(k, sigma, 0.0, sigma_r).unwrap());
    }
    s
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

#[test]
fn worked_four_point_fit() {
    let pts = [(1.0, 2.0), (2.0, 3.0), (4.0, 5.0), (8.0, 7.0)];
    let m = fit_log_linear(&set_of(&pts.map(|(k, s)| (k, s, s)))).unwrap();
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (a, b, sh) = normal_equations(&x, &y);
    assert!(close(m.a, a) && close(m.b, b) && close(m.sigma_hat, sh), "{m:?} vs ({a}, {b}, {sh})");
    assert!(m.a > 0.0);
}

#[test]
fn matches_normal_equations_on_random_sets() {
    for t in 0..50u64 {
        let mut rng = stream_rng(0xca11, t);
        let n = rng.random_range(3..40);
        let pts: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let lk: f64 = rng.random_range(-2.5..2.5);
                let s = (0.6 * lk + 0.3 + rng.random_range(-0.4..0.4)).exp();
                let sr = (-0.2 * lk - 1.0 + rng.random_range(-0.4..0.4)).exp();
                (lk.exp(), s, sr)
            })
            .collect();
        let m = fit_log_linear(&set_of(&pts)).unwrap();
        let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let yr: Vec<f64> = pts.iter().map(|p| p.2.ln()).collect();
        let (a, b, sh) = normal_equations(&x, &ys);
        let (ar, br, srh) = normal_equations(&x, &yr);
        assert!(close(m.a, a) && close(m.b, b) && close(m.sigma_hat, sh), "set {t}: read fit");
        assert!(close(m.a_r, ar) && close(m.b_r, br) && close(m.sigma_r_hat, srh), "set {t}: row fit");
        assert_eq!(fit_line(&x, &ys).unwrap().n, n);
    }
}

#[test]
fn noiseless_line_is_exact() {
    let pts: Vec<(f64, f64, f64)> = [0.3, 0.9, 2.0, 5.5, 7.0].iter().map(|&k| (k, k, 1.0 / k)).collect();
    let m = fit_log_linear(&set_of(&pts)).unwrap();
    assert!((m.a - 1.0).abs() <= 1e-12 && m.b.abs() <= 1e-12 && m.sigma_hat <= 1e-12, "{m:?}");
    assert!((m.a_r + 1.0).abs() <= 1e-12 && m.b_r.abs() <= 1e-12);
}

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * if k as i64 % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn sampled_tuples_follow_the_model() {
    let model = CameraModel {
        a: 0.75,
        b: 0.4,
        a_r: 0.5,
        b_r: -0.6,
        sigma_hat: 0.12,
        sigma_r_hat: 0.2,
        k_min: 0.2,
        k_max: 12.0,
        mu_c_model: 0.3,
        alpha: None,
    };
    let n = 100_000usize;
    let draws: Vec<NoiseParams> = (0..n)
        .map(|i| sample_params(&model, &mut stream_rng(0x5a, i as u64)).unwrap())
        .collect();
    assert!(draws.iter().all(|p| p.mu_c == 0.3));

    let (lo, hi) = (model.k_min.ln(), model.k_max.ln());
    let mut u: Vec<f64> = draws.iter().map(|p| (p.k.ln() - lo) / (hi - lo)).collect();
    u.sort_by(f64::total_cmp);
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - v))
        .fold(0.0, f64::max);
    let p = ks_p_value(d, n);
    assert!(p > 1e-3, "KS D = {d}, p = {p}");

    let bins = 10;
    let mut acc = vec![(0usize, 0.0, 0.0, 0.0); bins];
    for q in &draws {
        let lk = q.k.ln();
        let b = (((lk - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
        acc[b].0 += 1;
        acc[b].1 += lk;
        acc[b].2 += q.sigma.ln();
        acc[b].3 += q.sigma_r.ln();
    }
    for (b, &(count, sk, ss, sr)) in acc.iter().enumerate() {
        let c = count as f64;
        let mean_lk = sk / c;
        let tol = |spread: f64| 3.0 * spread / c.sqrt();
        let read_gap = (ss / c - (model.a * mean_lk + model.b)).abs();
        let row_gap = (sr / c - (model.a_r * mean_lk + model.b_r)).abs();
        assert!(read_gap < tol(model.sigma_hat), "bin {b}: read gap {read_gap}");
        assert!(row_gap < tol(model.sigma_r_hat), "bin {b}: row gap {row_gap}");
    }
}
