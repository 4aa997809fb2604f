use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// Uses the log-sum-exp form, so large logits stay finite.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let n = logits.batch();
    let k = logits.sample_len();
    if labels.len() != n || logits.shape().len() != 2 {
        return Err(Error::shape(format!(
            "{} labels for logits {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} outside {k} classes")));
    }
    let inv_n = T::of_usize(n.max(1)).recip();
    let mut grad = Vec::with_capacity(n * k);
    let mut loss = T::zero();
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let sum: T = row.iter().map(|&z| (z - m).exp()).sum();
        let lse = m + sum.ln();
        loss = loss + (lse - row[y]);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            let onehot = if j == y { T::one() } else { T::zero() };
            grad.push((p - onehot) * inv_n);
        }
    }
    Ok((loss * inv_n, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Mean squared error over every element and its gradient.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let inv = T::of_usize(pred.len().max(1)).recip();
    let two = T::of(2.0);
    let mut loss = T::zero();
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss = loss + d * d;
            two * d * inv
        })
        .collect();
    Ok((loss * inv, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::zeros(vec![3, 10]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-14);
        // each row of the gradient sums to zero
        for row in grad.data().chunks(10) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits =
            Tensor::<f64>::new(vec![2, 3], vec![50.0, -50.0, 0.0, -50.0, -50.0, 50.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[1, 0]).unwrap();
        assert!(loss.is_finite() && loss > 99.0);
        assert!(grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn invalid_label_is_an_error() {
        let logits = Tensor::<f64>::zeros(vec![1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mse_gradient() {
        let p = Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap();
        let t = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g.data(), &[1.0, 2.0]);
    }
}
