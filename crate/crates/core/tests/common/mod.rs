//! Models and oracles shared by the integration tests.
#![allow(dead_code)]

use ::phpoisson::em::EMParams;
use ::phpoisson::linalg::{self, Matrix};
use ::phpoisson::phpoisson::{self as ph, PHPoissonRep, PhysicalRep};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Five phases with rates 5, 9, 13, 17, 21 and coupling 0.05.
pub fn tridiagonal() -> PHPoissonRep {
    let d = [5.0f64, 9.0, 13.0, 17.0, 21.0];
    let mut b = Matrix::from_diag(&d);
    for i in 0..4 {
        b[(i, i + 1)] = 0.05;
        b[(i + 1, i)] = 0.05;
    }
    let w = [5.0, 2.5, 3.0, 2.25, 6.0];
    let raw: Vec<f64> = w.iter().zip(d).map(|(w, d)| w * (-d).exp()).collect();
    ph::normalize(&raw, &b).unwrap()
}

pub fn tridiagonal_physical() -> PhysicalRep {
    ph::to_physical(&tridiagonal(), None).unwrap()
}

/// Ten phases, diagonal 10 and superdiagonal 37.5, started in phase 1.
pub fn bidiagonal() -> PHPoissonRep {
    let mut b = Matrix::from_diag(&[10.0; 10]);
    for i in 0..9 {
        b[(i, i + 1)] = 37.5;
    }
    let mut raw = vec![0.0; 10];
    raw[0] = 1.0;
    ph::normalize(&raw, &b).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..n * n).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(n, n, data).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Rescales `a` so that its spectral radius is at most `target`.
pub fn scaled_to(a: Matrix, target: f64) -> Matrix {
    let sp = linalg::spectral_radius(&a, 1e-15).unwrap();
    if sp > target {
        a.scale(target / sp * 0.999)
    } else {
        a
    }
}

/// Rescales `a` so that its spectral radius is exactly `target` up to the
/// estimate's accuracy.
pub fn scaled_exactly(a: Matrix, target: f64) -> Matrix {
    let sp = linalg::spectral_radius(&a, 1e-15).unwrap();
    a.scale(target / sp)
}

/// `c0 I + c1 A + c2 A²`.
pub fn poly(a: &Matrix, c: [f64; 3]) -> Matrix {
    let mut out = Matrix::identity(a.rows()).scale(c[0]);
    out.add_scaled(a, c[1]);
    out.add_scaled(&a.matmul(a), c[2]);
    out
}

/// `(I - zA)^{expo}` for real exponents via the principal logarithm.
pub fn real_power(a: &Matrix, z: f64, expo: f64) -> Matrix {
    let base = &Matrix::identity(a.rows()) - &a.scale(z);
    let log = linalg::matlog(&base, 1e-15).unwrap();
    linalg::matexp(&log.scale(expo), 1e-15).unwrap()
}

/// Random physical parameters with substochastic `P`.
pub fn random_theta(rng: &mut ChaCha8Rng, m: usize) -> EMParams {
    let nu = rng.random_range(0.5..6.0);
    let w = random_vec(rng, m, 0.05, 1.0);
    let total: f64 = w.iter().sum();
    let alpha = w.iter().map(|x| x / total).collect();
    let mut p = random_matrix(rng, m, 0.0, 1.0);
    for i in 0..m {
        let s: f64 = p.row(i).iter().sum();
        let keep = rng.random_range(0.3..1.0);
        for j in 0..m {
            p[(i, j)] *= keep / s;
        }
    }
    EMParams::new(nu, alpha, p).unwrap()
}

/// Posterior counts `(S, N)` for one observation `y` by summing over all
/// `m^{y+1}` phase paths.
pub fn enumerate_stats(theta: &EMParams, y: u64) -> (Vec<f64>, Matrix) {
    let m = theta.order();
    let len = y as usize + 1;
    let mut paths = Vec::new();
    for code in 0..m.pow(len as u32) {
        let mut c = code;
        let path: Vec<usize> = (0..len)
            .map(|_| {
                let d = c % m;
                c /= m;
                d
            })
            .collect();
        let mut w = theta.alpha()[path[0]];
        for t in 1..len {
            w *= theta.p()[(path[t - 1], path[t])];
        }
        paths.push((path, w));
    }
    let total: f64 = paths.iter().map(|p| p.1).sum();
    let mut s = vec![0.0; m];
    let mut n = Matrix::zeros(m, m);
    for (path, w) in &paths {
        s[path[0]] += w / total;
        for t in 1..path.len() {
            n[(path[t - 1], path[t])] += w / total;
        }
    }
    (s, n)
}

/// `Σ_n |p_n - q_n|` between two PH-Poisson laws, truncated where both
/// certified tails are below 1e-13.
pub fn l1_between(p: &PHPoissonRep, q: &PHPoissonRep) -> f64 {
    let dp = ph::density_to_tol(p, 1e-13, 100_000);
    let dq = ph::density_to_tol(q, 1e-13, 100_000);
    dp.l1_distance(&dq)
}
