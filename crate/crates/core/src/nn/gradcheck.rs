use super::param::Parameter;

/// Anything that owns trainable parameters.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Denominator floor so entries whose true gradient is ~0 are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares analytic gradients against central finite differences.
///
/// `loss(model, true)` must return the loss and accumulate gradients into the model's
/// parameters; `loss(model, false)` only evaluates. With `max_per_param = Some(k)` at most
/// `k` evenly spaced entries of each parameter are perturbed.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, eps: f64, max_per_param: Option<usize>) -> GradCheckReport
where
    M: Module,
    F: FnMut(&mut M, bool) -> f64,
{
    model.zero_grad();
    loss(model, true);
    let analytic: Vec<Vec<f64>> = model.parameters().iter().map(|p| p.grad.data().to_vec()).collect();
    model.zero_grad();

    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, worst: None };
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let picks: Vec<usize> = match max_per_param {
            Some(k) if k < n => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        for idx in picks {
            let original = model.parameters()[pi].value.data()[idx];
            model.parameters_mut()[pi].value.data_mut()[idx] = original + eps;
            let plus = loss(model, false);
            model.parameters_mut()[pi].value.data_mut()[idx] = original - eps;
            let minus = loss(model, false);
            model.parameters_mut()[pi].value.data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grads[idx], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((model.parameters()[pi].name.clone(), idx));
            }
        }
    }
    model.zero_grad();
    report
}
