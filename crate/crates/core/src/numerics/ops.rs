use super::NumericsError;

/// Softmax of `logits / temperature`, normalised over the whole vector.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>, NumericsError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(NumericsError::InvalidTemperature(temperature));
    }
    if logits.is_empty() {
        return Err(NumericsError::InvalidInput("softmax of empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::InvalidInput("non-finite logit".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out, temperature);
    Ok(out)
}

pub(crate) fn softmax_in_place(values: &mut [f64], temperature: f64) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// `ln(sum(exp(v)))` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> Result<f64, NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::InvalidInput("log-sum-exp of empty vector".into()));
    }
    Ok(log_sum_exp_unchecked(values))
}

pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let total: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + total.ln()
}

/// Index of the largest value; the lowest index wins ties. Second element is
/// true when more than one index attains the maximum.
pub fn argmax(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
            tie = false;
        } else if v == values[best] {
            tie = true;
        }
    }
    (best, tie)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_logits_give_uniform() {
        for t in [1e-3, 0.1, 1.0, 7.0] {
            let p = softmax_with_temperature(&[2.5; 5], t).unwrap();
            for v in p {
                assert!((v - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn low_temperature_approaches_argmax() {
        let p = softmax_with_temperature(&[1.0, 0.0], 1e-3).unwrap();
        assert!(p[0] > 0.999);
        assert!(p[1] < 1e-3);
    }

    #[test]
    fn hand_evaluated_three_way() {
        // e^2, e^1, e^0 over their sum: 7.389056, 2.718282, 1 / 11.107338
        let p = softmax_with_temperature(&[2.0, 1.0, 0.0], 1.0).unwrap();
        let want = [0.66524, 0.24473, 0.09003];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_temperature_and_logits() {
        assert!(matches!(
            softmax_with_temperature(&[1.0], 0.0),
            Err(NumericsError::InvalidTemperature(_))
        ));
        assert!(matches!(
            softmax_with_temperature(&[1.0], -1.0),
            Err(NumericsError::InvalidTemperature(_))
        ));
        assert!(matches!(
            softmax_with_temperature(&[1.0, f64::NAN], 1.0),
            Err(NumericsError::InvalidInput(_))
        ));
        assert!(matches!(
            softmax_with_temperature(&[f64::INFINITY], 1.0),
            Err(NumericsError::InvalidInput(_))
        ));
    }

    #[test]
    fn log_sum_exp_examples() {
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // 1000 + ln 2, not representable through naive exp()
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - 1000.693_147_180_559_9).abs() < 1e-12);
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn argmax_ties_prefer_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), (1, true));
        assert_eq!(argmax(&[4.0, 3.0, 3.0]), (0, false));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            logits in prop::collection::vec(-20.0f64..20.0, 1..12),
            shift in -50.0f64..50.0,
            t in 0.01f64..5.0,
        ) {
            let p = softmax_with_temperature(&logits, t).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let q = softmax_with_temperature(&shifted, t).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert_eq!(argmax(&p).0, argmax(&q).0);
        }

        #[test]
        fn annealing_sharpens_the_max(logits in prop::collection::vec(-3.0f64..3.0, 2..8)) {
            let mut prev = 0.0;
            let mut t = 0.1;
            for _ in 0..250 {
                let p = softmax_with_temperature(&logits, t).unwrap();
                let m = p.iter().cloned().fold(0.0, f64::max);
                prop_assert!(m >= prev - 1e-15);
                prev = m;
                t *= 0.997;
            }
        }

        #[test]
        fn log_sum_exp_bounds(values in prop::collection::vec(-100.0f64..100.0, 1..20)) {
            let lse = log_sum_exp(&values).unwrap();
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max);
            prop_assert!(lse <= max + (values.len() as f64).ln() + 1e-12);
        }
    }
}
