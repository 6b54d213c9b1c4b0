use super::{Float, Tensor};

/// Central-difference gradient of a scalar function: `(f(x+h·e) − f(x−h·e)) / 2h`
/// for every element `e`.
pub fn finite_diff_grad<T: Float>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    h: T,
) -> Tensor<T> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let two_h = h + h;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / two_h;
    }
    grad
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both are zero.
pub fn relative_error<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error: shape mismatch");
    let norm = |xs: &mut dyn Iterator<Item = f64>| xs.map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&mut a.data().iter().zip(b.data()).map(|(x, y)| (*x - *y).as_f64()));
    let denom = norm(&mut a.data().iter().map(|x| x.as_f64()))
        .max(norm(&mut b.data().iter().map(|x| x.as_f64())));
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::<f64>::from_fn(vec![2, 3], |i| i as f64 - 2.5);
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-5);
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::<f64>::full(vec![1], 3.0);
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &x, 1e-5);
        assert!((g.data()[0] - 6.0).abs() <= 1e-6);
    }
}
