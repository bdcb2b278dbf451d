//! Reconstruction loss with an overestimation penalty.

use super::Matrix;

/// Weighted sum of squared error and mean positive deviation:
/// `(1 - alpha) * mean((pred - target)^2) + alpha * mean(max(pred - target, 0))`.
///
/// Returns the scalar loss and the gradient w.r.t. `pred`. Both terms average
/// over all elements of the batch.
pub fn loss_cqinet(pred: &Matrix, target: &Matrix, alpha: f64) -> (f64, Matrix) {
    assert_eq!(pred.rows(), target.rows(), "batch size mismatch");
    assert_eq!(pred.cols(), target.cols(), "width mismatch");
    assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0, 1]");
    let n = (pred.rows() * pred.cols()) as f64;
    let mut l1 = 0.0f64;
    let mut l2 = 0.0f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p as f64 - t as f64;
        l1 += d * d;
        let mut dg = (1.0 - alpha) * 2.0 * d / n;
        if d > 0.0 {
            l2 += d;
            dg += alpha / n;
        }
        *g = dg as f32;
    }
    let loss = (1.0 - alpha) * l1 / n + alpha * l2 / n;
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let (loss, grad) = loss_cqinet(&p, &p, 0.05);
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hand_computed_example() {
        // pred [5,3], target [4,4]: L1 = 1, L2 = 0.5,
        // loss = 0.95 * 1 + 0.05 * 0.5 = 0.975.
        let pred = Matrix::from_rows(&[vec![5.0, 3.0]]);
        let target = Matrix::from_rows(&[vec![4.0, 4.0]]);
        let (loss, grad) = loss_cqinet(&pred, &target, 0.05);
        assert!((loss - 0.975).abs() < 1e-12);
        // d/dp1 = 0.95 * 2 * 1 / 2 + 0.05 / 2 = 0.975
        assert!((grad.data()[0] as f64 - 0.975).abs() < 1e-6);
        // d/dp2 = 0.95 * 2 * (-1) / 2 = -0.95
        assert!((grad.data()[1] as f64 + 0.95).abs() < 1e-6);
    }

    #[test]
    fn alpha_zero_is_pure_mse() {
        let pred = Matrix::from_rows(&[vec![2.0, -1.0], vec![0.5, 0.0]]);
        let target = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.5, 2.0]]);
        let (loss, _) = loss_cqinet(&pred, &target, 0.0);
        let mse: f64 = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| ((p - t) as f64).powi(2))
            .sum::<f64>()
            / 4.0;
        assert!((loss - mse).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pred = Matrix::from_rows(&[vec![1.3, -0.7, 2.2], vec![0.1, 4.0, -2.5]]);
        let target = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 3.5, -2.0]]);
        let alpha = 0.3;
        let (_, grad) = loss_cqinet(&pred, &target, alpha);
        let h = 1e-3f32;
        for idx in 0..6 {
            let mut plus = pred.clone();
            plus.data_mut()[idx] += h;
            let mut minus = pred.clone();
            minus.data_mut()[idx] -= h;
            let (lp, _) = loss_cqinet(&plus, &target, alpha);
            let (lm, _) = loss_cqinet(&minus, &target, alpha);
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!(
                (fd - grad.data()[idx] as f64).abs() < 1e-4,
                "idx {idx}: fd {fd} vs {}",
                grad.data()[idx]
            );
        }
    }
}
