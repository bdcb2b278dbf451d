//! Adam optimizer with bias correction.

use super::{Gradients, LayerGrads, NetworkModel, TrainConfig};

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(model: &NetworkModel) -> Self {
        let lens = model.param_tensor_lens();
        AdamState {
            m: lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: lens.iter().map(|&l| vec![0.0; l]).collect(),
        }
    }
}

fn gradient_tensors(grads: &Gradients) -> Vec<&[f32]> {
    let mut out = Vec::new();
    for g in &grads.per_layer {
        match g {
            LayerGrads::Dense { dw, db } => {
                out.push(dw.data());
                out.push(db.as_slice());
            }
            LayerGrads::BatchNorm { dgamma, dbeta } => {
                out.push(dgamma.as_slice());
                out.push(dbeta.as_slice());
            }
            LayerGrads::None => {}
        }
    }
    out
}

/// One Adam update; `t` is the 1-based step counter shared across batches.
pub fn adam_step(model: &mut NetworkModel, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig, t: u64) {
    assert!(t >= 1, "Adam step counter starts at 1");
    let tensors = gradient_tensors(grads);
    assert_eq!(tensors.len(), state.m.len(), "gradient layout mismatch");
    let b1 = cfg.adam_beta1 as f32;
    let b2 = cfg.adam_beta2 as f32;
    let lr = cfg.learning_rate as f32;
    let eps = cfg.adam_eps as f32;
    let corr1 = 1.0 - (cfg.adam_beta1).powi(t as i32) as f32;
    let corr2 = 1.0 - (cfg.adam_beta2).powi(t as i32) as f32;
    let mut idx = 0;
    model.for_each_param_mut(|params| {
        let g = tensors[idx];
        assert_eq!(g.len(), params.len(), "gradient tensor shape mismatch");
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..params.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        idx += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> NetworkModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NetworkModel::new(
            vec![Layer::dense_init(3, 2, &mut rng), Layer::batch_norm(2)],
            None,
            3,
        )
        .unwrap()
    }

    fn snapshot(model: &mut NetworkModel) -> Vec<f32> {
        let mut out = Vec::new();
        model.for_each_param_mut(|p| out.extend_from_slice(p));
        out
    }

    fn zero_grads(model: &NetworkModel) -> Gradients {
        let per_layer = model
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Dense { w, b } => LayerGrads::Dense {
                    dw: Matrix::zeros(w.rows(), w.cols()),
                    db: vec![0.0; b.len()],
                },
                Layer::BatchNorm { gamma, .. } => LayerGrads::BatchNorm {
                    dgamma: vec![0.0; gamma.len()],
                    dbeta: vec![0.0; gamma.len()],
                },
                _ => LayerGrads::None,
            })
            .collect();
        Gradients { per_layer }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut model = tiny_model(1);
        let before = snapshot(&mut model);
        let grads = zero_grads(&model);
        let mut state = AdamState::new(&model);
        adam_step(&mut model, &grads, &mut state, &TrainConfig::default(), 1);
        assert_eq!(snapshot(&mut model), before);
    }

    #[test]
    fn first_step_magnitude_approaches_learning_rate() {
        let mut model = tiny_model(2);
        let before = snapshot(&mut model);
        let mut grads = zero_grads(&model);
        // A single large gradient entry: the bias-corrected first step has
        // magnitude ~lr regardless of the gradient scale.
        if let LayerGrads::Dense { dw, .. } = &mut grads.per_layer[0] {
            dw.row_mut(0)[0] = 1e6;
        }
        let cfg = TrainConfig::default();
        let mut state = AdamState::new(&model);
        adam_step(&mut model, &grads, &mut state, &cfg, 1);
        let after = snapshot(&mut model);
        let delta = (after[0] - before[0]).abs() as f64;
        assert!((delta - cfg.learning_rate).abs() < cfg.learning_rate * 1e-3, "step {delta}");
        // Untouched parameters stay put.
        assert_eq!(after[1..], before[1..]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut model = tiny_model(3);
            let mut state = AdamState::new(&model);
            let cfg = TrainConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let x = Matrix::from_rows(&[vec![0.2, -0.4, 1.0], vec![0.9, 0.1, -0.2]]);
            for t in 1..=25u64 {
                let cache = model.forward_train(&x, &mut rng);
                let dy = cache.output().map(|v| v - 0.3);
                let (grads, _) = model.backward(&cache, &dy);
                adam_step(&mut model, &grads, &mut state, &cfg, t);
            }
            snapshot(&mut model)
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }
}
