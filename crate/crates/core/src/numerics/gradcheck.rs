use super::{NumericsError, Tensor};

/// Gradients smaller than this are compared in absolute rather than relative terms.
const REL_FLOOR: f64 = 1e-6;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates: usize,
    pub passed: bool,
}

/// Compares `analytic` against `(L(p + h) - L(p - h)) / 2h` for every
/// coordinate of `params`.
///
/// `loss_fn` must be a pure function of the parameters; it is evaluated twice
/// at the base point and a mismatch is reported as
/// [`NumericsError::NonDeterministic`] (e.g. dropout left enabled).
pub fn gradient_check<F>(
    params: &[Tensor],
    analytic: &[Tensor],
    mut loss_fn: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&[Tensor]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(NumericsError::ShapeMismatch {
            expected: vec![params.len()],
            got: vec![analytic.len()],
        });
    }
    for (p, g) in params.iter().zip(analytic) {
        if p.shape() != g.shape() {
            return Err(NumericsError::ShapeMismatch {
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    let base = loss_fn(params);
    if base.to_bits() != loss_fn(params).to_bits() {
        return Err(NumericsError::NonDeterministic);
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates: 0,
        passed: true,
    };
    for t in 0..work.len() {
        for i in 0..work[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = loss_fn(&work);
            work[t].data_mut()[i] = orig - h;
            let minus = loss_fn(&work);
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[t].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (t, i);
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let p = [Tensor::vector(vec![3.0])];
        let g = [Tensor::vector(vec![6.0])];
        let r = gradient_check(&p, &g, |ps| ps[0].data()[0].powi(2), 1e-5, 1e-4).unwrap();
        assert!(r.passed);
        assert!((r.numeric_at_worst - 6.0).abs() < 1e-6 || r.max_rel_error < 1e-9);
    }

    #[test]
    fn wrong_gradient_fails() {
        let p = [Tensor::vector(vec![3.0])];
        let g = [Tensor::vector(vec![5.0])];
        let r = gradient_check(&p, &g, |ps| ps[0].data()[0].powi(2), 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let p = [Tensor::vector(vec![1.0])];
        let g = [Tensor::vector(vec![0.0])];
        let mut calls = 0.0;
        let r = gradient_check(
            &p,
            &g,
            |_| {
                calls += 1.0;
                calls
            },
            1e-5,
            1e-4,
        );
        assert!(matches!(r, Err(NumericsError::NonDeterministic)));
    }
}
