use nalgebra::{DMatrix, Matrix3, Matrix6, SymmetricEigen};

use crate::error::{invalid, Result};

/// Σ = scale (JᵀJ)⁻¹ per block. Directions the registration does not
/// constrain (eigenvalues of JᵀJ below `1e-12` of the largest) get variance
/// `sigma_max²` instead.
pub fn registration_covariance(
    j_pos: &DMatrix<f64>,
    j_rot: &DMatrix<f64>,
    scale: f64,
    sigma_max: f64,
) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    if !(scale > 0.0 && scale.is_finite()) || !(sigma_max > 0.0 && sigma_max.is_finite()) {
        return invalid(format!(
            "scale and sigma_max must be positive (got {scale}, {sigma_max})"
        ));
    }
    Ok((
        block(j_pos, scale, sigma_max)?,
        block(j_rot, scale, sigma_max)?,
    ))
}

fn block(j: &DMatrix<f64>, scale: f64, sigma_max: f64) -> Result<Matrix3<f64>> {
    if j.ncols() != 3 {
        return invalid(format!(
            "registration Jacobian blocks need 3 columns (got {})",
            j.ncols()
        ));
    }
    if j.iter().any(|v| !v.is_finite()) {
        return invalid("registration Jacobian has non-finite entries");
    }
    let jtj: Matrix3<f64> = (j.transpose() * j).fixed_view::<3, 3>(0, 0).into_owned();
    let eig = SymmetricEigen::new(jtj);
    let largest = eig.eigenvalues.max();
    let var = eig.eigenvalues.map(|l| {
        if largest > 0.0 && l > 1e-12 * largest {
            (scale / l).min(sigma_max * sigma_max)
        } else {
            sigma_max * sigma_max
        }
    });
    let sigma = eig.eigenvectors * Matrix3::from_diagonal(&var) * eig.eigenvectors.transpose();
    Ok((sigma + sigma.transpose()) * 0.5)
}

/// Combined 6×6 odometry covariance, `[translation, rotation]` order.
pub fn pose_covariance(pos: &Matrix3<f64>, rot: &Matrix3<f64>) -> Matrix6<f64> {
    let mut s = Matrix6::zeros();
    s.fixed_view_mut::<3, 3>(0, 0).copy_from(pos);
    s.fixed_view_mut::<3, 3>(3, 3).copy_from(rot);
    s
}

/// Symmetric (within 1e-9 relative) with strictly positive eigenvalues.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    m.clone().cholesky().is_some()
}

/// Upper-triangular inverse square root `W` with `WᵀW = Σ⁻¹`, so that `W r`
/// is a whitened residual.
pub(crate) fn sqrt_information(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_spd(cov) {
        return invalid("covariance is not symmetric positive definite");
    }
    let info = cov
        .clone()
        .try_inverse()
        .ok_or_else(|| crate::Error::InvalidArgument("singular covariance".into()))?;
    let info = (&info + info.transpose()) * 0.5;
    match info.cholesky() {
        Some(c) => Ok(c.l().transpose()),
        None => invalid("covariance is numerically singular"),
    }
}

/// Yaw-observability gate: while the extrinsic yaw variance is above
/// `threshold` (strictly), GNSS covariances are inflated by `kappa`.
pub fn gate_gnss(
    yaw_variance: f64,
    sigma_gnss: &Matrix3<f64>,
    threshold: f64,
    kappa: f64,
) -> Matrix3<f64> {
    if yaw_variance > threshold {
        sigma_gnss * kappa
    } else {
        *sigma_gnss
    }
}

/// Packs the upper triangle row by row.
pub fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for r in 0..n {
        for c in r..n {
            out.push(m[(r, c)]);
        }
    }
    out
}

pub fn from_upper_triangle(n: usize, values: &[f64]) -> Result<DMatrix<f64>> {
    if values.len() != n * (n + 1) / 2 {
        return invalid(format!(
            "{n}x{n} upper triangle needs {} values (got {})",
            n * (n + 1) / 2,
            values.len()
        ));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut it = values.iter();
    for r in 0..n {
        for c in r..n {
            let v = *it.next().unwrap_or(&0.0);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
    Ok(m)
}
