use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Batch-mean softmax cross-entropy.
///
/// Returns the loss and its gradient with respect to `logits`,
/// `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::dim(format!(
            "logits must be [B, K], got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != batch {
        return Err(Error::dim(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::arg(format!("label {bad} outside [0, {classes})")));
    }
    let inv_b = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch * classes);
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        // -log softmax of the true class
        loss += log_sum - (row[label] - max);
        for (k, &z) in row.iter().enumerate() {
            let p = (z - max).exp() / sum;
            let onehot = if k == label { 1.0 } else { 0.0 };
            grad.push((p - onehot) * inv_b);
        }
    }
    Ok((loss * inv_b, Tensor::new(&[batch, classes], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, _) = softmax_cross_entropy(&Tensor::zeros(&[3, 4]), &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.38629).abs() < 1e-5);
    }

    #[test]
    fn confident_correct_logit_has_vanishing_loss() {
        let logits = Tensor::new(&[1, 3], vec![0.0, 50.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-20, "{loss}");
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::new(&[2, 3], vec![0.3, -1.0, 2.0, 5.0, 4.0, -3.0]).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        for row in g.data().chunks_exact(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_label_is_argument_error() {
        let err = softmax_cross_entropy(&Tensor::zeros(&[1, 2]), &[2]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn large_logits_are_stable() {
        let logits = Tensor::new(&[1, 2], vec![1000.0, -1000.0]).unwrap();
        let (loss, g) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
        assert!(g.is_finite());
    }
}
