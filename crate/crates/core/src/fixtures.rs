//! Reference models shared by the unit tests.

use crate::linalg::{self, ones, Matrix};

/// Five phases, diagonal 5..21 in steps of 4, coupling 0.05 to neighbours.
pub fn tridiagonal_b() -> Matrix {
    let mut b = Matrix::from_diag(&[5.0, 9.0, 13.0, 17.0, 21.0]);
    for i in 0..4 {
        b[(i, i + 1)] = 0.05;
        b[(i + 1, i)] = 0.05;
    }
    b
}

/// Unnormalized starting weights for [`tridiagonal_b`].
pub fn tridiagonal_weights() -> Vec<f64> {
    let w = [5.0, 2.5, 3.0, 2.25, 6.0];
    let d = [5.0f64, 9.0, 13.0, 17.0, 21.0];
    w.iter().zip(d).map(|(w, d)| w * (-d).exp()).collect()
}

/// Normalized `β` for [`tridiagonal_b`].
pub fn tridiagonal_beta() -> Vec<f64> {
    let b = tridiagonal_b();
    let raw = tridiagonal_weights();
    let eb1 = linalg::matexp_action(&b, &ones(5), 1e-15).unwrap();
    let g = 1.0 / linalg::dot(&raw, &eb1);
    raw.iter().map(|v| v * g).collect()
}

/// Ten phases, diagonal 10 and superdiagonal 37.5.
pub fn bidiagonal_b() -> Matrix {
    let mut b = Matrix::from_diag(&[10.0; 10]);
    for i in 0..9 {
        b[(i, i + 1)] = 37.5;
    }
    b
}

/// Start in phase 1, scaled so that `β e^B 1 = 1`.
pub fn bidiagonal_beta() -> Vec<f64> {
    let b = bidiagonal_b();
    let eb1 = linalg::matexp_action(&b, &ones(10), 1e-15).unwrap();
    let mut beta = vec![0.0; 10];
    beta[0] = 1.0 / eb1[0];
    beta
}
