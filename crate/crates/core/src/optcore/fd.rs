use nalgebra::{DMatrix, DVector};

use crate::{DualError, Result};

fn probe_step(x: f64, step: f64) -> f64 {
    step * x.abs().max(1.0)
}

/// Central-difference gradient of a scalar functional. `step` is relative to
/// the magnitude of each coordinate (absolute below 1).
pub fn fd_gradient<F>(mut f: F, point: &DVector<f64>, step: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let mut probe = point.clone();
    let mut grad = DVector::zeros(point.len());
    for i in 0..point.len() {
        let h = probe_step(point[i], step);
        probe[i] = point[i] + h;
        let fp = f(&probe)?;
        probe[i] = point[i] - h;
        let fm = f(&probe)?;
        probe[i] = point[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(DualError::NonFinite("fd_gradient"));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector-valued map, one column per coordinate.
pub fn fd_jacobian<F>(mut f: F, point: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut probe = point.clone();
    let mut cols = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let h = probe_step(point[i], step);
        probe[i] = point[i] + h;
        let fp = f(&probe)?;
        probe[i] = point[i] - h;
        let fm = f(&probe)?;
        probe[i] = point[i];
        let col = (fp - fm) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(DualError::NonFinite("fd_jacobian"));
        }
        cols.push(col);
    }
    if cols.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn half_squared_norm() {
        let g = fd_gradient(|z| Ok(0.5 * z.norm_squared()), &DVector::from_vec(vec![1.0, 2.0]), 1e-6).unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(g[1], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn bilinear_product() {
        let g = fd_gradient(|z| Ok(z[0] * z[1]), &DVector::from_vec(vec![3.0, 4.0]), 1e-6).unwrap();
        assert_relative_eq!(g[0], 4.0, epsilon = 1e-7);
        assert_relative_eq!(g[1], 3.0, epsilon = 1e-7);
    }

    #[test]
    fn second_order_in_step() {
        // Cubic term so the central difference has a nonzero O(h^2) error.
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = |z: &DVector<f64>| Ok(0.5 * (z.transpose() * &q * z)[0] + z[0].powi(3));
        let x = DVector::from_vec(vec![0.7, -0.3]);
        let exact = &q * &x + DVector::from_vec(vec![3.0 * x[0] * x[0], 0.0]);
        let e1 = (fd_gradient(f, &x, 1e-2).unwrap() - &exact).norm();
        let e2 = (fd_gradient(f, &x, 5e-3).unwrap() - &exact).norm();
        let ratio = e1 / e2;
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn non_finite_is_an_error() {
        let r = fd_gradient(|z| Ok(1.0 / (z[0] - z[0])), &DVector::from_vec(vec![1.0]), 1e-6);
        assert!(matches!(r, Err(DualError::NonFinite(_))));
    }
}
