//! Finite-difference check of a convolution and a linear layer chained
//! through a ReLU, in both precisions.
//!
//!     cargo run --example gradcheck

use tka_detect::tensor::{
    conv2d_backward, conv2d_forward, grad_check, linear, linear_backward, relu, relu_backward, Scalar, Tensor,
};

fn ramp<T: Scalar>(shape: &[usize], phase: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|i| T::cast(((i as f64 + phase) * 0.37).sin())).collect()).unwrap()
}

/// loss = Σ linear(relu(conv(x)))·g
fn check<T: Scalar>(eps: f64) -> f64 {
    let inputs = vec![ramp::<T>(&[2, 5, 5], 0.0), ramp::<T>(&[3, 2, 3, 3], 1.0), ramp::<T>(&[3], 2.0)];
    let fc_w = ramp::<T>(&[4, 27], 3.0);
    let fc_b = ramp::<T>(&[4], 4.0);
    let g = [1.0, -0.5, 0.25, 2.0];
    let report = grad_check(
        |x: &[Tensor<T>]| {
            let (y, cache) = conv2d_forward(&x[0], &x[1], &x[2], 1, 0)?;
            let a = relu(&y);
            let flat = a.clone().reshape(&[27])?;
            let out = linear(&flat, &fc_w, &fc_b)?;
            let loss = out.data().iter().zip(g).map(|(o, g)| o.as_f64() * g).sum();
            let gfc = linear_backward(&flat, &fc_w, &g.map(T::cast))?;
            let ga = relu_backward(&a, gfc.input.data())?;
            let gc = conv2d_backward(&cache, &x[1], ga.data(), true)?;
            Ok((loss, vec![gc.input.unwrap(), gc.kernel, gc.bias]))
        },
        &inputs,
        eps,
        1e-2,
    )
    .unwrap();
    println!(
        "{:>4}: {} coordinates, max rel err {:.2e}, max abs err {:.2e}",
        std::any::type_name::<T>(),
        report.coordinates,
        report.max_rel_error,
        report.max_abs_error
    );
    report.max_rel_error
}

fn main() {
    check::<f32>(1e-2);
    check::<f64>(1e-6);
}
