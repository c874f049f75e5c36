use super::{expect_rank, Result, Scalar, Tensor, TensorError};

/// Output extent of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Saved state of a convolution forward pass.
#[derive(Debug, Clone)]
pub struct Conv2dCache<T: Scalar> {
    cols: Vec<T>,
    in_shape: [usize; 3],
    kernel_hw: [usize; 2],
    out_hw: [usize; 2],
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

fn im2col<T: Scalar>(
    input: &[T],
    [c, h, w]: [usize; 3],
    [kh, kw]: [usize; 2],
    [oh, ow]: [usize; 2],
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let p = oh * ow;
    let mut cols = vec![T::zero(); c * kh * kw * p];
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    [c, h, w]: [usize; 3],
    [kh, kw]: [usize; 2],
    [oh, ow]: [usize; 2],
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let p = oh * ow;
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2-D cross-correlation of a `C×H×W` input with a `K×C×kh×kw` kernel.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    expect_rank(input, 3, "conv2d input")?;
    expect_rank(kernel, 4, "conv2d kernel")?;
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let [k, kc, kh, kw] = [
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    ];
    if kc != c {
        return Err(TensorError::Dimension(format!(
            "input has {c} channels but kernel expects {kc}"
        )));
    }
    if bias.len() != k {
        return Err(TensorError::Dimension(format!(
            "bias length {} does not match {k} output channels",
            bias.len()
        )));
    }
    if stride == 0 {
        return Err(TensorError::Dimension("stride must be >= 1".into()));
    }
    let (oh, ow) = match (
        conv_out_dim(h, kh, stride, padding),
        conv_out_dim(w, kw, stride, padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(TensorError::Dimension(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )))
        }
    };
    let cols = im2col(input.data(), [c, h, w], [kh, kw], [oh, ow], stride, padding);
    let p = oh * ow;
    let ckk = c * kh * kw;
    let mut out = Vec::with_capacity(k * p);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, p));
    }
    T::gemm(
        k,
        ckk,
        p,
        T::one(),
        kernel.data(),
        ckk as isize,
        1,
        &cols,
        p as isize,
        1,
        T::one(),
        &mut out,
        p as isize,
        1,
    );
    let cache = Conv2dCache {
        cols,
        in_shape: [c, h, w],
        kernel_hw: [kh, kw],
        out_hw: [oh, ow],
        stride,
        padding,
    };
    Ok((Tensor::new(&[k, oh, ow], out)?, cache))
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    conv2d_forward(input, kernel, bias, stride, padding).map(|(out, _)| out)
}

/// Gradients of a convolution given the upstream gradient of its output.
/// The input gradient is skipped when `need_input_grad` is false.
pub fn conv2d_backward<T: Scalar>(
    cache: &Conv2dCache<T>,
    kernel: &Tensor<T>,
    grad_out: &[T],
    need_input_grad: bool,
) -> Result<Conv2dGrads<T>> {
    let [c, _, _] = cache.in_shape;
    let [kh, kw] = cache.kernel_hw;
    let [oh, ow] = cache.out_hw;
    let k = kernel.shape()[0];
    let p = oh * ow;
    let ckk = c * kh * kw;
    if grad_out.len() != k * p {
        return Err(TensorError::Dimension(format!(
            "output gradient length {} != {}",
            grad_out.len(),
            k * p
        )));
    }
    let mut dkernel = vec![T::zero(); k * ckk];
    // dW = dY · colsᵀ
    T::gemm(
        k,
        p,
        ckk,
        T::one(),
        grad_out,
        p as isize,
        1,
        &cache.cols,
        1,
        p as isize,
        T::zero(),
        &mut dkernel,
        ckk as isize,
        1,
    );
    let dbias: Vec<T> = grad_out
        .chunks(p)
        .map(|row| row.iter().fold(T::zero(), |a, &b| a + b))
        .collect();
    let input = if need_input_grad {
        let mut dcols = vec![T::zero(); ckk * p];
        // dcols = Wᵀ · dY
        T::gemm(
            ckk,
            k,
            p,
            T::one(),
            kernel.data(),
            1,
            ckk as isize,
            grad_out,
            p as isize,
            1,
            T::zero(),
            &mut dcols,
            p as isize,
            1,
        );
        let dx = col2im(
            &dcols,
            cache.in_shape,
            cache.kernel_hw,
            cache.out_hw,
            cache.stride,
            cache.padding,
        );
        Some(Tensor::new(&cache.in_shape, dx)?)
    } else {
        None
    };
    Ok(Conv2dGrads {
        input,
        kernel: Tensor::new(kernel.shape(), dkernel)?,
        bias: Tensor::new(&[k], dbias)?,
    })
}

/// Flat argmax positions recorded by [`maxpool2`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub indices: Vec<usize>,
    pub in_shape: [usize; 3],
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns form partial windows.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    expect_rank(input, 3, "maxpool2 input")?;
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let data = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut indices = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + 2 * oy * w + 2 * ox;
                let mut best = data[best_idx];
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = base + y * w + x;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                indices.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::new(&[c, oh, ow], out)?,
        PoolIndices {
            indices,
            in_shape: [c, h, w],
        },
    ))
}

pub fn maxpool2_backward<T: Scalar>(indices: &PoolIndices, grad_out: &[T]) -> Result<Tensor<T>> {
    if grad_out.len() != indices.indices.len() {
        return Err(TensorError::Dimension(format!(
            "pool gradient length {} != {}",
            grad_out.len(),
            indices.indices.len()
        )));
    }
    let [c, h, w] = indices.in_shape;
    let mut dx = vec![T::zero(); c * h * w];
    for (&i, &g) in indices.indices.iter().zip(grad_out) {
        dx[i] = dx[i] + g;
    }
    Tensor::new(&indices.in_shape, dx)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data).expect("same shape")
}

/// Gradient of ReLU; `activation` may be either the op's input or its output.
pub fn relu_backward<T: Scalar>(activation: &Tensor<T>, grad_out: &[T]) -> Result<Tensor<T>> {
    if grad_out.len() != activation.len() {
        return Err(TensorError::Dimension(format!(
            "relu gradient length {} != {}",
            grad_out.len(),
            activation.len()
        )));
    }
    let data = activation
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(activation.shape(), data)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn linear_dims<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    expect_rank(weight, 2, "linear weight")?;
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    let rows = match input.shape() {
        [len] if *len == n => 1,
        [b, len] if *len == n => *b,
        other => {
            return Err(TensorError::Dimension(format!(
                "linear input {other:?} incompatible with weight {m}x{n}"
            )))
        }
    };
    if bias.len() != m {
        return Err(TensorError::Dimension(format!(
            "linear bias length {} != {m}",
            bias.len()
        )));
    }
    Ok((rows, m, n))
}

/// Affine map `y = W·x + b`. Accepts a vector `[N]` or a row batch `[B, N]`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (rows, m, n) = linear_dims(input, weight, bias)?;
    let mut out = Vec::with_capacity(rows * m);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        rows,
        n,
        m,
        T::one(),
        input.data(),
        n as isize,
        1,
        weight.data(),
        1,
        n as isize,
        T::one(),
        &mut out,
        m as isize,
        1,
    );
    let shape: Vec<usize> = if input.rank() == 1 { vec![m] } else { vec![rows, m] };
    Tensor::new(&shape, out)
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
) -> Result<LinearGrads<T>> {
    let bias_stub = Tensor::zeros(&[weight.shape()[0]]);
    let (rows, m, n) = linear_dims(input, weight, &bias_stub)?;
    if grad_out.len() != rows * m {
        return Err(TensorError::Dimension(format!(
            "linear gradient length {} != {}",
            grad_out.len(),
            rows * m
        )));
    }
    let mut dx = vec![T::zero(); rows * n];
    T::gemm(
        rows,
        m,
        n,
        T::one(),
        grad_out,
        m as isize,
        1,
        weight.data(),
        n as isize,
        1,
        T::zero(),
        &mut dx,
        n as isize,
        1,
    );
    let mut dw = vec![T::zero(); m * n];
    T::gemm(
        m,
        rows,
        n,
        T::one(),
        grad_out,
        1,
        m as isize,
        input.data(),
        n as isize,
        1,
        T::zero(),
        &mut dw,
        n as isize,
        1,
    );
    let mut db = vec![T::zero(); m];
    for row in grad_out.chunks(m) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(input.shape(), dx)?,
        weight: Tensor::new(&[m, n], dw)?,
        bias: Tensor::new(&[m], db)?,
    })
}
