//! Central finite differences against the analytic gradients of both losses
//! and of the full loss ∘ network composition.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xmmr_core::graph::{labeled_similarity, unlabeled_similarity};
use xmmr_core::losses::{
    contrastive_pair_grad, contrastive_pair_loss, quadruplet_argument, quadruplet_batch_loss, quadruplet_grad,
    quadruplet_loss, semi_supervised_loss, ContrastiveConfig, ContrastiveVariant, QuadrupletConfig,
};
use xmmr_core::metric_net::{Activation, ModelState, NetConfig};
use xmmr_core::nd::{squared_distance, AffineLayer};
use xmmr_core::sampler::{make_minibatch, sample_quadruplets, select_pairs, Pair, TrainingSet};
use xmmr_core::trainer::{plan_step, prepared_state, step_gradients, AblationMode, TrainConfig};
use xmmr_core::Matrix;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;
/// Hinge arguments closer than this to zero are treated as sitting on the kink.
const KINK: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

fn gauss_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

#[test]
fn quadruplet_gradient_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = QuadrupletConfig { margin: 1.0 };
    let mut checked = 0;
    while checked < 100 {
        let d = rng.random_range(1..8);
        let mut v: Vec<Vec<f64>> = (0..4).map(|_| gauss_vec(&mut rng, d, 1.0)).collect();
        let arg = quadruplet_argument(&v[0], &v[1], &v[2], &v[3], cfg.margin);
        if arg.abs() < KINK {
            continue;
        }
        let g = quadruplet_grad(&v[0], &v[1], &v[2], &v[3], &cfg).unwrap();
        let analytic = [&g.i_plus, &g.t_plus, &g.i_minus, &g.t_minus];
        for which in 0..4 {
            for k in 0..d {
                let x0 = v[which][k];
                let num = central(
                    |x| {
                        v[which][k] = x;
                        quadruplet_loss(&v[0], &v[1], &v[2], &v[3], &cfg).unwrap()
                    },
                    x0,
                );
                v[which][k] = x0;
                let e = rel_err(analytic[which][k], num);
                assert!(e <= TOL, "slot {which} dim {k}: {} vs {num} (rel {e})", analytic[which][k]);
            }
        }
        checked += 1;
    }
}

#[test]
fn contrastive_gradient_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for variant in [ContrastiveVariant::Squared, ContrastiveVariant::HingedNorm] {
        let cfg = ContrastiveConfig { margin: 1.5, variant };
        let mut checked = 0;
        while checked < 100 {
            let d = rng.random_range(1..8);
            let similar = rng.random_bool(0.5);
            let mut f = gauss_vec(&mut rng, d, 0.6);
            let g = gauss_vec(&mut rng, d, 0.6);
            let d2 = squared_distance(&f, &g);
            let arg = match variant {
                ContrastiveVariant::Squared => cfg.margin - d2,
                ContrastiveVariant::HingedNorm => cfg.margin - d2.sqrt(),
            };
            if !similar && (arg.abs() < KINK || d2 < KINK) {
                continue;
            }
            let (_, gf) = contrastive_pair_grad(&f, &g, similar, &cfg).unwrap();
            for k in 0..d {
                let x0 = f[k];
                let num = central(
                    |x| {
                        f[k] = x;
                        contrastive_pair_loss(&f, &g, similar, &cfg).unwrap()
                    },
                    x0,
                );
                f[k] = x0;
                assert!(rel_err(gf[k], num) <= TOL, "{variant:?} similar={similar} dim {k}: {} vs {num}", gf[k]);
            }
            checked += 1;
        }
    }
}

/// Checks `loss(f, g)` against `(grad_f, grad_g)` entry by entry.
fn check_batch_fd(
    f: &Matrix,
    g: &Matrix,
    grad_f: &Matrix,
    grad_g: &Matrix,
    loss: impl Fn(&Matrix, &Matrix) -> f64,
) {
    for (side, analytic) in [(0, grad_f), (1, grad_g)] {
        for r in 0..f.rows() {
            for c in 0..f.cols() {
                let (mut fp, mut gp) = (f.clone(), g.clone());
                let num = central(
                    |x| {
                        if side == 0 {
                            fp.set(r, c, x);
                        } else {
                            gp.set(r, c, x);
                        }
                        loss(&fp, &gp)
                    },
                    if side == 0 { f.get(r, c) } else { g.get(r, c) },
                );
                let a = analytic.get(r, c);
                assert!(rel_err(a, num) <= TOL, "side {side} ({r},{c}): {a} vs {num}");
            }
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, gauss_vec(rng, rows * cols, scale)).unwrap()
}

fn pairs_off_kink(f: &Matrix, g: &Matrix, pairs: &[Pair], margin: f64) -> bool {
    pairs
        .iter()
        .filter(|p| !p.similar)
        .all(|p| (margin - squared_distance(f.row(p.image), g.row(p.text))).abs() >= KINK)
}

#[test]
fn semi_supervised_batch_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = ContrastiveConfig { margin: 2.0, variant: ContrastiveVariant::Squared };
    let mut checked = 0;
    while checked < 20 {
        let (m, n, d) = (rng.random_range(1..6), rng.random_range(6..12), rng.random_range(1..5));
        let labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let data = TrainingSet::new(
            random_matrix(&mut rng, n, d, 1.0),
            random_matrix(&mut rng, n, d, 1.0),
            labels,
            (0..m).collect(),
            (m..n).collect(),
        )
        .unwrap();
        let batch = make_minibatch(&data, m, n, &mut rng).unwrap();
        let c = labeled_similarity(&batch.labels, &batch.labels);
        let a = unlabeled_similarity(&batch.s_img.slice_rows(m, n), &batch.s_txt.slice_rows(m, n), 2).unwrap();
        let pairs = select_pairs(&batch, &c, &a, &mut rng).unwrap();
        let (f, g) = (random_matrix(&mut rng, n, d, 0.8), random_matrix(&mut rng, n, d, 0.8));
        if !pairs_off_kink(&f, &g, &pairs.pairs, cfg.margin) {
            continue;
        }
        let lg = semi_supervised_loss(&f, &g, &c, &a, &pairs, &cfg).unwrap();
        check_batch_fd(&f, &g, &lg.grad_f, &lg.grad_g, |f, g| {
            semi_supervised_loss(f, g, &c, &a, &pairs, &cfg).unwrap().loss
        });
        checked += 1;
    }
}

#[test]
fn quadruplet_batch_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cfg = QuadrupletConfig { margin: 1.0 };
    let mut checked = 0;
    while checked < 20 {
        let (m, d) = (rng.random_range(3..8), rng.random_range(1..5));
        let labels: Vec<i64> = (0..m).map(|i| (i % 2) as i64 + rng.random_range(0..2) * 2).collect();
        let data = TrainingSet::new(
            random_matrix(&mut rng, m, d, 1.0),
            random_matrix(&mut rng, m, d, 1.0),
            labels,
            (0..m).collect(),
            vec![],
        )
        .unwrap();
        let batch = make_minibatch(&data, m, m, &mut rng).unwrap();
        let quads = sample_quadruplets(&batch, 2 * m, &mut rng).quadruplets;
        let (f, g) = (random_matrix(&mut rng, m, d, 0.8), random_matrix(&mut rng, m, d, 0.8));
        let off_kink = quads.iter().all(|q| {
            quadruplet_argument(f.row(q.i_plus), g.row(q.t_plus), f.row(q.i_minus), g.row(q.t_minus), cfg.margin).abs()
                >= KINK
        });
        if !off_kink {
            continue;
        }
        let lg = quadruplet_batch_loss(&f, &g, &quads, &cfg).unwrap();
        check_batch_fd(&f, &g, &lg.grad_f, &lg.grad_g, |f, g| {
            quadruplet_batch_loss(f, g, &quads, &cfg).unwrap().loss
        });
        checked += 1;
    }
}

/// Layer `li` in the order image trunk, image heads, text trunk, text heads.
fn layer_mut(state: &mut ModelState, li: usize) -> &mut AffineLayer {
    let per = 3 + state.image.heads().len();
    let p = if li < per { &mut state.image } else { &mut state.text };
    let j = li % per;
    if j < 3 { &mut p.trunk_mut()[j] } else { &mut p.heads_mut()[j - 3] }
}

/// Parameter `idx` of a layer: weights row-major, then biases.
fn param_mut(layer: &mut AffineLayer, idx: usize) -> &mut f64 {
    let w = layer.weight().rows() * layer.weight().cols();
    if idx < w { &mut layer.weight_mut().as_mut_slice()[idx] } else { &mut layer.bias_mut()[idx - w] }
}

#[test]
fn end_to_end_gradient_over_every_parameter() {
    for activation in [Activation::Sigmoid, Activation::Identity] {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (n, d) = (6, 4);
        let data = TrainingSet::new(
            random_matrix(&mut rng, n, d, 1.0),
            random_matrix(&mut rng, n, d, 1.0),
            vec![0, 1, 0, 1, 0, 0],
            vec![0, 1, 2, 3],
            vec![4, 5],
        )
        .unwrap();
        let net = NetConfig { trunk_dim: 4, head_dim: 4, trunk_activation: activation, ..NetConfig::new(d) };
        let cfg = TrainConfig {
            batch_labeled: 2,
            batch_size: 3,
            graph_k: 1,
            quadruplets_per_batch: Some(4),
            w_quad: 0.7,
            ..TrainConfig::default()
        };
        let mut state = prepared_state(&net, 3, &data).unwrap();
        // a plan whose labeled pair has two classes, so both branches contribute
        let plan = loop {
            let p = plan_step(&data, &cfg, &mut rng).unwrap();
            if !p.quadruplets.is_empty() {
                break p;
            }
        };
        let out = step_gradients(&state, &plan, &cfg, AblationMode::Full).unwrap();
        assert!(out.semi_loss > 0.0 && out.quad_loss > 0.0);

        let mut analytic = Vec::new();
        for g in [&out.grads.image, &out.grads.text] {
            for a in g.trunk.iter().chain(&g.heads) {
                analytic.push(a.clone());
            }
        }
        let mut total_params = 0;
        for (li, grads) in analytic.iter().enumerate() {
            let flat: Vec<f64> = grads.weight.as_slice().iter().chain(&grads.bias).copied().collect();
            for (idx, &a) in flat.iter().enumerate() {
                let x0 = *param_mut(layer_mut(&mut state, li), idx);
                let num = central(
                    |x| {
                        *param_mut(layer_mut(&mut state, li), idx) = x;
                        step_gradients(&state, &plan, &cfg, AblationMode::Full).unwrap().total
                    },
                    x0,
                );
                *param_mut(layer_mut(&mut state, li), idx) = x0;
                assert!(rel_err(a, num) <= TOL, "{activation:?} layer {li} param {idx}: {a} vs {num}");
                total_params += 1;
            }
        }
        assert_eq!(total_params, 2 * (3 + 2) * (4 * 4 + 4));
    }
}
