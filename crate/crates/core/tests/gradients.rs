//! Analytic gradients against central finite differences.

use noisekit::estimator::{
    batch_gradient, batch_loss, generate_triplets, procedural_pool, virtual_camera_bank, Activation, ConvStage,
    EstimatorConfig, Network, Objective, TripletBatch,
};

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;
// below this magnitude, differences are judged on an absolute scale
const SCALE_FLOOR: f64 = 1e-6;
const KINK_SHRINK: f64 = 0.1;

fn tiny(act: Activation) -> EstimatorConfig {
    EstimatorConfig {
        patch_height: 8,
        patch_width: 8,
        input_scale: 1.0 / 32.0,
        extractor: vec![
            ConvStage { kernel: 3, stride: 1, width: 4, activation: act },
            ConvStage { kernel: 3, stride: 2, width: 4, activation: Activation::Tanh },
        ],
        feature_dim: 8,
        projector: vec![6, 5],
        head: vec![6, 4],
        mlp_activation: act,
        seed: 5,
        ..EstimatorConfig::default()
    }
}

fn batch(cfg: &EstimatorConfig, n: usize, seed: u64) -> TripletBatch {
    let pool = procedural_pool(6, cfg.patch_height, cfg.patch_width, 200.0, seed);
    let triplets = generate_triplets(&pool, &virtual_camera_bank(), n, seed + 1).unwrap();
    TripletBatch::from_triplets(&triplets)
}

fn max_rel_error(cfg: &EstimatorConfig, objective: Objective) -> (f64, String) {
    let net = Network::new(cfg).unwrap();
    assert!(net.n_params() <= 2000, "{} params", net.n_params());
    let params = net.init_params(cfg.seed);
    let b = batch(cfg, 3, 40);
    let (_, grad) = batch_gradient(&net, &params, &b, cfg, objective, cfg.tau_loss).unwrap();
    let mut worst = (0.0, String::new());
    let mut p = params.clone();
    for spec in net.specs() {
        if objective == Objective::Contrastive && spec.name.starts_with("head") {
            assert!(grad[spec.range()].iter().all(|&g| g == 0.0));
            continue;
        }
        for i in spec.range() {
            let mut central = |step: f64| {
                p[i] = params[i] + step;
                let up = batch_loss(&net, &p, &b, cfg, objective, cfg.tau_loss).unwrap().total;
                p[i] = params[i] - step;
                let down = batch_loss(&net, &p, &b, cfg, objective, cfg.tau_loss).unwrap().total;
                p[i] = params[i];
                (up - down) / (2.0 * step)
            };
            let rel_err = |fd: f64| (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(SCALE_FLOOR);
            let mut fd = central(STEP);
            if rel_err(fd) > TOL {
                // a piecewise-linear activation may switch inside ±STEP; a kink
                // straddled by the wide step is left outside the narrow one
                fd = central(STEP * KINK_SHRINK);
            }
            let rel = rel_err(fd);
            if rel > worst.0 {
                worst = (rel, format!("{}[{}]: analytic {} vs fd {}", spec.name, i - spec.offset, grad[i], fd));
            }
        }
    }
    worst
}

#[test]
fn joint_gradient_matches_finite_differences() {
    for act in [Activation::Tanh, Activation::LeakyRelu, Activation::Relu] {
        let (err, at) = max_rel_error(&tiny(act), Objective::Joint);
        assert!(err < TOL, "{act:?}: {err:.3e} at {at}");
    }
    let cfg = EstimatorConfig { band_weights: [0.25, 1.0, 0.5, 2.0], ..tiny(Activation::LeakyRelu) };
    let (err, at) = max_rel_error(&cfg, Objective::Joint);
    assert!(err < TOL, "band weights: {err:.3e} at {at}");
}

#[test]
fn contrastive_gradient_matches_finite_differences() {
    let (err, at) = max_rel_error(&tiny(Activation::Tanh), Objective::Contrastive);
    assert!(err < TOL, "{err:.3e} at {at}");
}

#[test]
fn contrastive_gradient_is_linear_in_tau_loss() {
    let cfg = tiny(Activation::Tanh);
    let net = Network::new(&cfg).unwrap();
    let params = net.init_params(1);
    let b = batch(&cfg, 3, 7);
    let g0 = batch_gradient(&net, &params, &b, &cfg, Objective::Joint, 0.0).unwrap().1;
    let g1 = batch_gradient(&net, &params, &b, &cfg, Objective::Joint, 0.1).unwrap().1;
    let g2 = batch_gradient(&net, &params, &b, &cfg, Objective::Joint, 0.2).unwrap().1;
    let gc = batch_gradient(&net, &params, &b, &cfg, Objective::Contrastive, 0.0).unwrap().1;
    for i in 0..g0.len() {
        let c1 = g1[i] - g0[i];
        let c2 = g2[i] - g0[i];
        assert!((c2 - 2.0 * c1).abs() <= 1e-9 * (1.0 + c1.abs()), "entry {i}");
        assert!((c1 - 0.1 * gc[i]).abs() <= 1e-9 * (1.0 + gc[i].abs()), "entry {i}");
    }
}

#[test]
fn tau_loss_zero_is_pure_regression() {
    let cfg = tiny(Activation::Tanh);
    let net = Network::new(&cfg).unwrap();
    let params = net.init_params(2);
    let b = batch(&cfg, 4, 9);
    let l = batch_loss(&net, &params, &b, &cfg, Objective::Joint, 0.0).unwrap();
    assert_eq!(l.total, l.regression);
    assert!(l.contrastive > 0.0);
}
