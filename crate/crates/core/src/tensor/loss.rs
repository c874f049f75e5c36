use super::{Result, Scalar, Tensor, TensorError};

/// Max-subtracted softmax over a flat logit vector. Reductions run in f64.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| T::cast(e / sum)).collect()
}

/// `−ln softmax(logits)[target]` and its gradient `softmax − onehot`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    target: usize,
) -> Result<(f64, Tensor<T>)> {
    let k = logits.len();
    if target >= k {
        return Err(TensorError::Index {
            index: target,
            len: k,
        });
    }
    let values = logits.data();
    let max = values
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(TensorError::Numeric("non-finite logit".into()));
    }
    let exps: Vec<f64> = values.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (values[target].as_f64() - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let p = e / sum;
            T::cast(if i == target { p - 1.0 } else { p })
        })
        .collect();
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}

/// Huber-style smooth L1 for one residual: value and derivative.
pub fn smooth_l1_scalar(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

/// Sum of smooth-L1 penalties over `pred − target`, with the gradient w.r.t. `pred`.
pub fn smooth_l1<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(TensorError::Dimension(format!(
            "smooth_l1 shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (f, df) = smooth_l1_scalar(p.as_f64() - t.as_f64());
            loss += f;
            T::cast(df)
        })
        .collect();
    Ok((loss, Tensor::new(pred.shape(), grad)?))
}
