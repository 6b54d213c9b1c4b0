//! Forward and backward kernels on plain tensors.
//!
//! Kernels are pure and single-threaded so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use super::{Float, Result, Tensor, TensorError};

fn expect_matrix<T: Float>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.ndim() != 2 {
        return Err(TensorError::InvalidShape {
            shape: t.shape().to_vec(),
            reason: format!("{op} expects a matrix"),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = expect_matrix("matmul", a)?;
    let (k2, n) = expect_matrix("matmul", b)?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Gradients of `a·b` given the upstream gradient `g[m×n]`: `(g·bᵀ, aᵀ·g)`.
pub fn matmul_backward<T: Float>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k) = expect_matrix("matmul_backward", a)?;
    let (_, n) = expect_matrix("matmul_backward", b)?;
    if g.shape() != [m, n] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_backward",
            left: vec![m, n],
            right: g.shape().to_vec(),
        });
    }
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut da = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &gd[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &bd[p * n..(p + 1) * n];
            da[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    let mut db = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &gd[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &gv) in dbrow.iter_mut().zip(grow) {
                *d += aip * gv;
            }
        }
    }
    Ok((Tensor::new(vec![m, k], da)?, Tensor::new(vec![k, n], db)?))
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Float>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.ndim() {
        return Err(TensorError::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("softmax axis {axis} out of range"),
        });
    }
    let extent = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * extent + j) * inner + i;
            let max = (0..extent)
                .map(|j| d[idx(j)])
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..extent {
                let e = (d[idx(j)] - max).exp();
                d[idx(j)] = e;
                total += e;
            }
            for j in 0..extent {
                d[idx(j)] /= total;
            }
        }
    }
    Ok(out)
}

/// In-place softmax of one slice.
pub(crate) fn softmax_slice<T: Float>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Backward of a last-axis softmax from its output `y`.
pub fn softmax_backward<T: Float>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let c = y.cols();
    let mut out = Tensor::zeros(y.shape().to_vec());
    for r in 0..y.len() / c {
        let (ys, gs) = (&y.data()[r * c..(r + 1) * c], &g.data()[r * c..(r + 1) * c]);
        let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
        for j in 0..c {
            out.data_mut()[r * c + j] = ys[j] * (gs[j] - dot);
        }
    }
    out
}

/// Saved state of a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes every row over the trailing extent, then applies `gain` and `bias`.
pub fn layer_norm<T: Float>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let c = x.cols();
    if gain.len() != c || bias.len() != c {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let rows = x.len() / c;
    let n = T::of(c as f64);
    let mut normalized = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let xs = &x.data()[r * c..(r + 1) * c];
        let mean = xs.iter().copied().sum::<T>() / n;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for j in 0..c {
            let h = (xs[j] - mean) * inv;
            normalized.data_mut()[r * c + j] = h;
            out.data_mut()[r * c + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Float>(
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let xhat = &cache.normalized;
    let c = xhat.cols();
    let rows = xhat.len() / c;
    let n = T::of(c as f64);
    let mut dx = Tensor::zeros(xhat.shape().to_vec());
    let mut dgain = Tensor::zeros(gain.shape().to_vec());
    let mut dbias = Tensor::zeros(gain.shape().to_vec());
    let mut dxhat = vec![T::zero(); c];
    for r in 0..rows {
        let hs = &xhat.data()[r * c..(r + 1) * c];
        let gs = &g.data()[r * c..(r + 1) * c];
        for j in 0..c {
            dgain.data_mut()[j] += gs[j] * hs[j];
            dbias.data_mut()[j] += gs[j];
            dxhat[j] = gs[j] * gain.data()[j];
        }
        let sum_d: T = dxhat.iter().copied().sum();
        let sum_dh: T = dxhat.iter().zip(hs).map(|(&a, &b)| a * b).sum();
        let inv = cache.inv_std[r];
        for j in 0..c {
            dx.data_mut()[r * c + j] = inv / n * (n * dxhat[j] - sum_d - hs[j] * sum_dh);
        }
    }
    (dx, dgain, dbias)
}

/// Activation variants named by `hidden_act`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeluVariant {
    /// `x·Φ(x)`
    Exact,
    /// tanh approximation
    Fast,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

pub fn gelu_scalar<T: Float>(x: T, variant: GeluVariant) -> T {
    let half = T::of(0.5);
    match variant {
        GeluVariant::Exact => half * x * (T::one() + (x / T::of(std::f64::consts::SQRT_2)).erf()),
        GeluVariant::Fast => {
            let u = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_CUBIC) * x * x * x);
            half * x * (T::one() + u.tanh())
        }
    }
}

pub fn gelu_grad_scalar<T: Float>(x: T, variant: GeluVariant) -> T {
    let half = T::of(0.5);
    match variant {
        GeluVariant::Exact => {
            let cdf = half * (T::one() + (x / T::of(std::f64::consts::SQRT_2)).erf());
            let pdf = (-half * x * x).exp() / T::of((2.0 * std::f64::consts::PI).sqrt());
            cdf + x * pdf
        }
        GeluVariant::Fast => {
            let k = T::of(SQRT_2_OVER_PI);
            let c = T::of(GELU_CUBIC);
            let th = (k * (x + c * x * x * x)).tanh();
            half * (T::one() + th)
                + half * x * (T::one() - th * th) * k * (T::one() + T::of(3.0) * c * x * x)
        }
    }
}

pub fn gelu<T: Float>(x: &Tensor<T>, variant: GeluVariant) -> Tensor<T> {
    x.map(|v| gelu_scalar(v, variant))
}

pub fn gelu_backward<T: Float>(x: &Tensor<T>, g: &Tensor<T>, variant: GeluVariant) -> Tensor<T> {
    let mut out = g.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
        *o *= gelu_grad_scalar(v, variant);
    }
    out
}

/// Adds a `[n]` bias to every row of an `[m×n]` matrix.
pub fn add_row<T: Float>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.cols();
    if bias.len() != c {
        return Err(TensorError::ShapeMismatch {
            op: "add_row",
            left: x.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_grad;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_matmul() {
        let eye = Tensor::<f64>::matrix(&[&[1., 0., 0.], &[0., 1., 0.], &[0., 0., 1.]]).unwrap();
        let m = Tensor::<f64>::from_fn(vec![3, 3], |i| i as f64 * 0.7 - 1.0);
        assert_eq!(matmul(&eye, &m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::<f64>::matrix(&[&[1., 2.], &[3., 4.]]).unwrap();
        let b = Tensor::<f64>::matrix(&[&[1.], &[1.]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![2, 3]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn scalar_product_rule() {
        let a = Tensor::<f64>::matrix(&[&[2.]]).unwrap();
        let b = Tensor::<f64>::matrix(&[&[3.]]).unwrap();
        let g = Tensor::<f64>::matrix(&[&[1.]]).unwrap();
        let (da, db) = matmul_backward(&a, &b, &g).unwrap();
        assert_eq!(da.data(), &[3.0]);
        assert_eq!(db.data(), &[2.0]);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::<f64>::matrix(&[&[0., 0.]]).unwrap(), 1).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::<f64>::matrix(&[&[1., 2., 3.]]).unwrap(), 1).unwrap();
        // exp(k)/Σexp computed directly
        let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
        for (k, &v) in s.data().iter().enumerate() {
            assert!(close(v, ((k + 1) as f64).exp() / z, 1e-12));
        }
        assert!(close(s.data()[0], 0.09003, 1e-5));
        assert!(close(s.data()[1], 0.24473, 1e-5));
        assert!(close(s.data()[2], 0.66524, 1e-5));
        let s = softmax(&Tensor::<f32>::matrix(&[&[1000., 1000.]]).unwrap(), 1).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_leading_axis() {
        let x = Tensor::<f64>::matrix(&[&[1., 5.], &[1., 3.]]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert_eq!(s.data()[0], 0.5);
        assert!(close(s.data()[1] + s.data()[3], 1.0, 1e-12));
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::<f64>::ones(vec![3]);
        let zero = Tensor::<f64>::zeros(vec![3]);
        let x = Tensor::<f64>::matrix(&[&[5., 5., 5.]]).unwrap();
        let (y, _) = layer_norm(&x, &one, &zero, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let x = Tensor::<f64>::matrix(&[&[1., 3.]]).unwrap();
        let (y, _) = layer_norm(&x, &Tensor::ones(vec![2]), &Tensor::zeros(vec![2]), 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);

        let bias = Tensor::<f64>::from_fn(vec![2], |i| i as f64 + 0.5);
        let (y, _) = layer_norm(&x, &Tensor::zeros(vec![2]), &bias, 1e-5).unwrap();
        assert_eq!(y.data(), bias.data());
    }

    #[test]
    fn gelu_examples() {
        for v in [GeluVariant::Exact, GeluVariant::Fast] {
            assert_eq!(gelu_scalar(0.0f64, v), 0.0);
        }
        // Φ(1) = (1 + erf(1/√2))/2
        let phi1 = 0.5 * (1.0 + libm::erf(1.0 / 2f64.sqrt()));
        assert!(close(gelu_scalar(1.0f64, GeluVariant::Exact), phi1, 1e-15));
        assert!(close(gelu_scalar(1.0f64, GeluVariant::Exact), 0.841345, 1e-5));
        let fast = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * 1.044715).tanh());
        assert!(close(gelu_scalar(1.0f64, GeluVariant::Fast), fast, 1e-15));
        assert!(close(gelu_scalar(1.0f64, GeluVariant::Fast), 0.841192, 1e-5));
    }

    #[test]
    fn gelu_derivative_matches_finite_differences() {
        for v in [GeluVariant::Exact, GeluVariant::Fast] {
            let x = Tensor::<f64>::from_fn(vec![9], |i| i as f64 * 0.5 - 2.0);
            let num = finite_diff_grad(|t| gelu(t, v).sum(), &x, 1e-5);
            let ana = gelu_backward(&x, &Tensor::ones(vec![9]), v);
            assert!(num.max_abs_diff(&ana) < 1e-8);
        }
    }
}
