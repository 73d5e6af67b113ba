use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let th = inner.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

/// Numerically stable softmax of each row.
pub(crate) fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub(crate) fn softmax_cols(x: &Array2<f64>) -> Array2<f64> {
    softmax_rows(&x.t().to_owned()).t().to_owned()
}

/// Backward of a row softmax: `p * (g - sum(p * g))` per row.
pub(crate) fn softmax_rows_backward(p: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(p.raw_dim());
    for ((p_row, g_row), mut o_row) in p
        .axis_iter(Axis(0))
        .zip(grad.axis_iter(Axis(0)))
        .zip(out.axis_iter_mut(Axis(0)))
    {
        let dot = p_row.dot(&g_row);
        o_row.assign(&(&p_row * &(&g_row - dot)));
    }
    out
}

pub(crate) fn softmax_cols_backward(p: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    softmax_rows_backward(&p.t().to_owned(), &grad.t().to_owned())
        .t()
        .to_owned()
}

pub(crate) fn affine(x: &ArrayView2<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Array2<f64> {
    x.dot(weight) + bias
}

/// Row range of frames `t` for which `t + offset` is in `0..n`.
fn tap_rows(n: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset.max(0)).max(lo as isize) as usize;
    (lo, hi)
}

/// Same-length temporal convolution with zero padding.
pub(crate) fn conv_time(x: &Array2<f64>, weight: &Array3<f64>) -> Array2<f64> {
    let (n, _) = x.dim();
    let (kernel, _, d_out) = weight.dim();
    let half = (kernel / 2) as isize;
    let mut out = Array2::zeros((n, d_out));
    for j in 0..kernel {
        let offset = j as isize - half;
        let (lo, hi) = tap_rows(n, offset);
        if lo >= hi {
            continue;
        }
        let src = x.slice(s![(lo as isize + offset) as usize..(hi as isize + offset) as usize, ..]);
        let prod = src.dot(&weight.index_axis(Axis(0), j));
        let mut dst = out.slice_mut(s![lo..hi, ..]);
        dst += &prod;
    }
    out
}

/// Gradients of [`conv_time`] with respect to its input and weight.
pub(crate) fn conv_time_backward(
    x: &Array2<f64>,
    weight: &Array3<f64>,
    grad_out: &Array2<f64>,
) -> (Array2<f64>, Array3<f64>) {
    let (n, _) = x.dim();
    let kernel = weight.dim().0;
    let half = (kernel / 2) as isize;
    let mut grad_x = Array2::zeros(x.raw_dim());
    let mut grad_w = Array3::zeros(weight.raw_dim());
    for j in 0..kernel {
        let offset = j as isize - half;
        let (lo, hi) = tap_rows(n, offset);
        if lo >= hi {
            continue;
        }
        let src_range = (lo as isize + offset) as usize..(hi as isize + offset) as usize;
        let g = grad_out.slice(s![lo..hi, ..]);
        let src = x.slice(s![src_range.clone(), ..]);
        grad_w.index_axis_mut(Axis(0), j).assign(&src.t().dot(&g));
        let back = g.dot(&weight.index_axis(Axis(0), j).t());
        let mut dst = grad_x.slice_mut(s![src_range, ..]);
        dst += &back;
    }
    (grad_x, grad_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -1.2, -0.1, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn conv_kernel_one_is_matmul() {
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i + 2 * j) as f64 * 0.1);
        let w = Array3::from_shape_fn((1, 3, 2), |(_, a, b)| (a as f64) - (b as f64));
        let direct = x.dot(&w.index_axis(Axis(0), 0));
        assert_eq!(conv_time(&x, &w), direct);
    }

    #[test]
    fn conv_matches_explicit_sum() {
        let x = Array2::from_shape_fn((5, 2), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let w = Array3::from_shape_fn((3, 2, 2), |(k, a, b)| (k + a) as f64 * 0.5 - b as f64);
        let out = conv_time(&x, &w);
        for t in 0..5 {
            for o in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    let src = t as isize + k as isize - 1;
                    if (0..5).contains(&src) {
                        for i in 0..2 {
                            acc += x[[src as usize, i]] * w[[k, i, o]];
                        }
                    }
                }
                assert!((out[[t, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_wider_than_sequence() {
        let x = Array2::from_elem((1, 2), 1.0);
        let w = Array3::from_elem((5, 2, 1), 1.0);
        assert_eq!(conv_time(&x, &w)[[0, 0]], 2.0);
        let (gx, gw) = conv_time_backward(&x, &w, &Array2::ones((1, 1)));
        assert_eq!(gx, Array2::<f64>::ones((1, 2)));
        assert_eq!(gw.sum(), 2.0);
    }
}
