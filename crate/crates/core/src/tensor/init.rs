use rand::Rng;

use super::{Scalar, Tensor};

/// He-uniform initialization: `U(−√(6/fan_in), √(6/fan_in))`.
pub fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::cast(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(shape, data).expect("positive shape")
}
