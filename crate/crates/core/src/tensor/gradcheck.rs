use super::{Result, Scalar, Tensor, TensorError};

/// Gradients smaller than this are compared in absolute terms.
const MAGNITUDE_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
    pub passed: bool,
}

/// Compares analytic gradients of a scalar objective against central
/// finite differences `(f(x+ε) − f(x−ε)) / 2ε`, coordinate by coordinate.
///
/// `objective` returns the loss and one gradient tensor per input. The
/// per-coordinate error is `|a − n| / max(|a|, |n|, 1e-2)`.
pub fn grad_check<T, F>(
    objective: F,
    inputs: &[Tensor<T>],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<(f64, Vec<Tensor<T>>)>,
{
    let (base, analytic) = objective(inputs)?;
    if !base.is_finite() {
        return Err(TensorError::Numeric("objective is not finite".into()));
    }
    if analytic.len() != inputs.len() {
        return Err(TensorError::Dimension(format!(
            "objective returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }
    let mut probe = inputs.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut coordinates = 0;
    for (i, grad) in analytic.iter().enumerate() {
        if grad.len() != inputs[i].len() {
            return Err(TensorError::Dimension(format!(
                "gradient {i} has length {}, input has {}",
                grad.len(),
                inputs[i].len()
            )));
        }
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + T::cast(epsilon);
            let (plus, _) = objective(&probe)?;
            probe[i].data_mut()[j] = x - T::cast(epsilon);
            let (minus, _) = objective(&probe)?;
            probe[i].data_mut()[j] = x;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::Numeric(format!(
                    "non-finite objective probing input {i}[{j}]"
                )));
            }
            // the step actually taken after rounding to T
            let h = (x + T::cast(epsilon)).as_f64() - (x - T::cast(epsilon)).as_f64();
            let numeric = (plus - minus) / h;
            let a = grad.data()[j].as_f64();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
            coordinates += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        coordinates,
        passed: max_rel < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::super::smooth_l1;
    use super::*;

    #[test]
    fn smooth_l1_gradient_at_half() {
        let pred = Tensor::<f32>::new(&[1], vec![0.5]).unwrap();
        let target = Tensor::<f32>::zeros(&[1]);
        let report = grad_check(
            |x| {
                let (l, g) = smooth_l1(&x[0], &target)?;
                Ok((l, vec![g]))
            },
            &[pred],
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.coordinates, 1);
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::<f64>::new(&[1], vec![2.0]).unwrap();
        let report = grad_check(
            |x| {
                let v = x[0].data()[0];
                Ok((v * v, vec![Tensor::new(&[1], vec![3.0 * v])?]))
            },
            &[x],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn non_finite_objective_is_error() {
        let x = Tensor::<f64>::new(&[1], vec![0.0]).unwrap();
        let err = grad_check(
            |_| Ok((f64::NAN, vec![Tensor::zeros(&[1])])),
            &[x],
            1e-5,
            1e-5,
        );
        assert!(matches!(err, Err(TensorError::Numeric(_))));
    }
}
