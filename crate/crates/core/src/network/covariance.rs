//! 2x2 covariance assembly from an unconstrained Cholesky parameterization.
//!
//! Sigma = L * Diag(exp(d1), exp(d2)) * L^T with L = [[1, 0], [l, 1]], so the
//! matrix is positive definite for any real (d1, d2, l) and
//! log det Sigma = d1 + d2.

/// Expands `(d1, d2, l)` into the dense covariance
/// `[[e^d1, l*e^d1], [l*e^d1, l^2*e^d1 + e^d2]]`.
pub fn build_covariance(d1: f64, d2: f64, l: f64) -> [[f64; 2]; 2] {
    let e1 = d1.exp();
    let e2 = d2.exp();
    [[e1, l * e1], [l * e1, l * l * e1 + e2]]
}

/// `log det Sigma` of the matrix produced by [`build_covariance`].
pub fn covariance_logdet(d1: f64, d2: f64) -> f64 {
    d1 + d2
}

/// Squared Mahalanobis distance of `v` under [`build_covariance`]'s Sigma,
/// computed by the forward substitution `y1 = v1, y2 = v2 - l*v1`:
/// `y1^2*e^-d1 + y2^2*e^-d2`.
pub fn mahalanobis_sq(v: [f64; 2], d1: f64, d2: f64, l: f64) -> f64 {
    let y1 = v[0];
    let y2 = v[1] - l * v[0];
    y1 * y1 * (-d1).exp() + y2 * y2 * (-d2).exp()
}
