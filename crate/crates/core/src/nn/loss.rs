use super::NnError;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, dst) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &z) in dst.iter_mut().zip(row) {
            *d = (z - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient `(p − onehot)/B`.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> Result<(f64, Vec<f64>), NnError> {
    let batch = labels.len();
    if batch == 0 || logits.len() != batch * classes {
        return Err(NnError::Shape(format!(
            "{} logits for {batch} labels × {classes} classes",
            logits.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::Label { label, classes });
    }
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for ((row, g), &label) in logits.chunks_exact(classes).zip(grad.chunks_exact_mut(classes)).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - row[label];
        for (k, (gk, &z)) in g.iter_mut().zip(row).enumerate() {
            let p = (z - log_norm).exp();
            *gk = (p - if k == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok((loss / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let (loss, _) = softmax_cross_entropy(&[0.3; 6], &[4], 6).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.791759).abs() < 1e-6);
    }

    #[test]
    fn confident_logit_loss() {
        let (loss, _) = softmax_cross_entropy(&[10.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0], 6).unwrap();
        // ln(1 + 5e^-10)
        let expect = (1.0 + 5.0 * (-10f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-15);
        assert!((loss - 2.27e-4).abs() < 1e-6);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = [1.0, -2.0, 0.5, 3.0, 0.0, 0.1, -1.0, 4.0, 2.0, 2.0, 0.0, -3.0];
        let (_, g) = softmax_cross_entropy(&logits, &[3, 1], 6).unwrap();
        for row in g.chunks(6) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0; 6], &[6], 6),
            Err(NnError::Label { label: 6, .. })
        ));
        assert!(softmax_cross_entropy(&[0.0; 5], &[0], 6).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax_rows(&[1000.0, 999.0, -1000.0], 3);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
