//! Central finite-difference verification of the backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_cqinet, Layer, LayerGrads, Matrix, NetworkModel};

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
}

/// Power-of-two step keeps `p + h` exactly representable in f32 while the
/// f64 probe evaluations keep the quotient noise far below the step's
/// curvature error.
const FD_STEP: f32 = 0.0009765625;

/// Compares analytic parameter gradients against central finite differences
/// of the reconstruction loss.
///
/// Layers at or before the last quantize layer are excluded: the rounding
/// breaks differentiability upstream while the straight-through estimator
/// deliberately ignores it. Dropout masks are replayed identically for every
/// evaluation, so the probed function is deterministic, and the probe
/// evaluations run through an f64 mirror of the forward pass so the
/// differences are not swamped by f32 rounding. Probes pick the
/// `max_probes` largest-magnitude analytic gradients.
pub fn gradient_check(
    model: &NetworkModel,
    input: &Matrix,
    target: &Matrix,
    alpha: f64,
    max_probes: usize,
    seed: u64,
) -> GradCheckReport {
    // Map parameter tensors to their layer index, in for_each_param order.
    let mut tensor_layers = Vec::new();
    for (li, layer) in model.layers().iter().enumerate() {
        match layer {
            Layer::Dense { .. } | Layer::BatchNorm { .. } => {
                tensor_layers.push(li);
                tensor_layers.push(li);
            }
            _ => {}
        }
    }
    if tensor_layers.is_empty() {
        return GradCheckReport {
            max_rel_error: 0.0,
            n_checked: 0,
        };
    }
    let last_quantize = model
        .layers()
        .iter()
        .rposition(|l| matches!(l, Layer::Quantize { .. }));

    let eval = |m: &NetworkModel| -> f64 { forward_loss_f64(m, input, target, alpha, seed) };

    // Analytic gradients from the same replayed forward pass.
    let analytic: Vec<Vec<f32>> = {
        let mut m = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cache = m.forward_train(input, &mut rng);
        let (_, grad_out) = loss_cqinet(cache.output(), target, alpha);
        let (grads, _) = m.backward(&cache, &grad_out);
        let mut flat = Vec::new();
        for g in &grads.per_layer {
            match g {
                LayerGrads::Dense { dw, db } => {
                    flat.push(dw.data().to_vec());
                    flat.push(db.clone());
                }
                LayerGrads::BatchNorm { dgamma, dbeta } => {
                    flat.push(dgamma.clone());
                    flat.push(dbeta.clone());
                }
                LayerGrads::None => {}
            }
        }
        flat
    };

    let mut candidates: Vec<(usize, usize, f32)> = Vec::new();
    for (t, grads) in analytic.iter().enumerate() {
        if let Some(q) = last_quantize {
            if tensor_layers[t] <= q {
                continue;
            }
        }
        for (e, &g) in grads.iter().enumerate() {
            candidates.push((t, e, g.abs()));
        }
    }
    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    candidates.truncate(max_probes);

    let mut max_rel = 0.0f64;
    for &(t, e, _) in &candidates {
        let an = analytic[t][e] as f64;
        let mut plus = model.clone();
        perturb(&mut plus, t, e, FD_STEP);
        let mut minus = model.clone();
        perturb(&mut minus, t, e, -FD_STEP);
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP as f64);
        let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        n_checked: candidates.len(),
    }
}

fn perturb(model: &mut NetworkModel, tensor: usize, elem: usize, delta: f32) {
    let mut idx = 0;
    model.for_each_param_mut(|p| {
        if idx == tensor {
            p[elem] += delta;
        }
        idx += 1;
    });
}

/// Training-mode forward pass and loss in f64, replaying the same dropout
/// masks the f32 path would draw for `seed`.
fn forward_loss_f64(model: &NetworkModel, input: &Matrix, target: &Matrix, alpha: f64, seed: u64) -> f64 {
    use rand::Rng;

    let rows = input.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Vec<f64>> = (0..rows)
        .map(|r| input.row(r).iter().map(|&v| v as f64).collect())
        .collect();
    let mut saved: Option<Vec<Vec<f64>>> = None;
    for (i, layer) in model.layers().iter().enumerate() {
        if let Some((_, to)) = model.shortcut() {
            if to == i {
                let s = saved.as_ref().expect("shortcut source precedes target");
                for (xr, sr) in x.iter_mut().zip(s) {
                    for (xv, sv) in xr.iter_mut().zip(sr) {
                        *xv += sv;
                    }
                }
            }
        }
        x = match layer {
            Layer::Dense { w, b } => x
                .iter()
                .map(|xr| {
                    let mut out: Vec<f64> = b.iter().map(|&v| v as f64).collect();
                    for (iidx, &xv) in xr.iter().enumerate() {
                        for (o, &wv) in w.row(iidx).iter().enumerate() {
                            out[o] += xv * wv as f64;
                        }
                    }
                    out
                })
                .collect(),
            Layer::BatchNorm { gamma, beta, .. } => {
                let dim = gamma.len();
                let n = rows as f64;
                let mut mean = vec![0.0f64; dim];
                for xr in &x {
                    for (m, &v) in mean.iter_mut().zip(xr) {
                        *m += v;
                    }
                }
                for m in mean.iter_mut() {
                    *m /= n;
                }
                let mut var = vec![0.0f64; dim];
                for xr in &x {
                    for (f, v) in var.iter_mut().enumerate() {
                        let d = xr[f] - mean[f];
                        *v += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= n;
                }
                x.iter()
                    .map(|xr| {
                        (0..dim)
                            .map(|f| {
                                gamma[f] as f64 * (xr[f] - mean[f]) / (var[f] + super::BN_EPS as f64).sqrt()
                                    + beta[f] as f64
                            })
                            .collect()
                    })
                    .collect()
            }
            Layer::LeakyRelu { slope } => x
                .iter()
                .map(|xr| xr.iter().map(|&v| if v >= 0.0 { v } else { *slope as f64 * v }).collect())
                .collect(),
            Layer::Sigmoid => x
                .iter()
                .map(|xr| xr.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect())
                .collect(),
            Layer::Dropout { rate } => {
                // Consume the rng exactly like the f32 path.
                let rate = *rate as f64;
                let scale = 1.0 / (1.0 - rate);
                x.iter()
                    .map(|xr| {
                        xr.iter()
                            .map(|&v| if rng.gen::<f64>() < rate { 0.0 } else { v * scale })
                            .collect()
                    })
                    .collect()
            }
            Layer::Quantize { bits } => {
                let levels = (1u64 << bits) as f64;
                x.iter()
                    .map(|xr| {
                        xr.iter()
                            .map(|&v| {
                                let m = (v * levels - 0.5).round().clamp(0.0, levels - 1.0);
                                (m + 0.5) / levels
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        if let Some((from, _)) = model.shortcut() {
            if from == i {
                saved = Some(x.clone());
            }
        }
    }
    // Same loss formula as loss_cqinet, evaluated in f64.
    let n = (rows * x[0].len()) as f64;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (xr, r) in x.iter().zip(0..rows) {
        for (p, &t) in xr.iter().zip(target.row(r)) {
            let d = p - t as f64;
            l1 += d * d;
            if d > 0.0 {
                l2 += d;
            }
        }
    }
    (1.0 - alpha) * l1 / n + alpha * l2 / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LEAKY_SLOPE;

    fn batch(rows: usize, cols: usize, scale: f32, seed: u64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        let mut s = seed;
        for v in m.data_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (((s >> 33) as f32 / (1u64 << 31) as f32) - 0.5) * scale;
        }
        m
    }

    #[test]
    fn single_dense_layer_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = NetworkModel::new(vec![Layer::dense_init(5, 3, &mut rng)], None, 5).unwrap();
        let input = batch(4, 5, 2.0, 10);
        let target = batch(4, 3, 2.0, 20);
        let report = gradient_check(&model, &input, &target, 0.0, 40, 1);
        assert!(report.n_checked > 0);
        assert!(report.max_rel_error < 1e-4, "max rel {}", report.max_rel_error);
    }

    #[test]
    fn three_layer_network_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = NetworkModel::new(
            vec![
                Layer::dense_init(6, 8, &mut rng),
                Layer::batch_norm(8),
                Layer::LeakyRelu { slope: LEAKY_SLOPE },
                Layer::dense_init(8, 4, &mut rng),
                Layer::Sigmoid,
                Layer::dense_init(4, 2, &mut rng),
            ],
            None,
            6,
        )
        .unwrap();
        let input = batch(6, 6, 1.5, 30);
        let target = batch(6, 2, 3.0, 40);
        let report = gradient_check(&model, &input, &target, 0.05, 60, 2);
        assert!(report.n_checked > 0);
        assert!(report.max_rel_error < 1e-4, "max rel {}", report.max_rel_error);
    }

    #[test]
    fn quantize_upstream_parameters_are_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = NetworkModel::new(
            vec![
                Layer::dense_init(4, 6, &mut rng),
                Layer::Sigmoid,
                Layer::Quantize { bits: 2 },
                Layer::dense_init(6, 3, &mut rng),
            ],
            None,
            4,
        )
        .unwrap();
        let input = batch(5, 4, 1.0, 50);
        let target = batch(5, 3, 3.0, 60);
        let report = gradient_check(&model, &input, &target, 0.0, 30, 3);
        // Only the post-quantize dense layer is probed: 6*3 + 3 parameters.
        assert!(report.n_checked > 0 && report.n_checked <= 21);
        assert!(report.max_rel_error < 1e-4, "max rel {}", report.max_rel_error);
    }

    #[test]
    fn parameterless_model_yields_empty_report() {
        let model = NetworkModel::new(vec![Layer::Sigmoid, Layer::LeakyRelu { slope: 0.01 }], None, 3).unwrap();
        let input = batch(2, 3, 1.0, 70);
        let report = gradient_check(&model, &input, &input, 0.0, 10, 4);
        assert_eq!(report.n_checked, 0);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn dropout_is_replayed_consistently() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = NetworkModel::new(
            vec![
                Layer::dense_init(5, 8, &mut rng),
                Layer::Dropout { rate: 0.25 },
                Layer::dense_init(8, 2, &mut rng),
            ],
            None,
            5,
        )
        .unwrap();
        let input = batch(4, 5, 1.5, 80);
        let target = batch(4, 2, 3.0, 90);
        let report = gradient_check(&model, &input, &target, 0.1, 40, 5);
        assert!(report.max_rel_error < 1e-4, "max rel {}", report.max_rel_error);
    }
}
