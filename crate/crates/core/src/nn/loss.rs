use crate::error::{HarError, Result};

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot(target)`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(HarError::invalid("softmax needs at least two classes"));
    }
    if target >= logits.len() {
        return Err(HarError::invalid(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[target];
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.3; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad[0] - 0.25).abs() < 1e-12);
        assert!((grad[2] + 0.75).abs() < 1e-12);
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn errors() {
        assert!(softmax_cross_entropy(&[1.0], 0).is_err());
        assert!(softmax_cross_entropy(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn stable_for_large_logits() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, 0.0, -1000.0], 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let logits = [0.3, -1.2, 2.0, 0.7, -0.1];
        let (_, grad) = softmax_cross_entropy(&logits, 3).unwrap();
        let eps = 1e-5;
        for k in 0..logits.len() {
            let mut p = logits;
            let mut m = logits;
            p[k] += eps;
            m[k] -= eps;
            let fd = (softmax_cross_entropy(&p, 3).unwrap().0 - softmax_cross_entropy(&m, 3).unwrap().0) / (2.0 * eps);
            assert!((fd - grad[k]).abs() < 1e-6);
        }
    }
}
