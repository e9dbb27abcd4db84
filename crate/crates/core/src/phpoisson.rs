//! PH-Poisson laws `p_n = β B^n 1 / n!` and their physical form.
//!
//! The physical form `(ν, α, P)` describes a Poisson clock of rate `ν`
//! driving a transient Markov chain with substochastic transition matrix
//! `P`; the PH-Poisson law is the number of clock ticks in `(0, 1)` given
//! that the chain has not been absorbed by time 1.

use crate::error::{Error, Result};
use crate::genab0::{DiscreteDensity, GenAB0Rep};
use crate::linalg::{self, norm1, ones, Matrix, DEFAULT_TOL};

/// Accepted deviation of `β e^B 1` from 1.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Slack allowed on row sums and probability totals read from files.
const ROUND_OFF: f64 = 1e-12;

const MAX_TERMS: usize = 10_000_000;

/// PH-Poisson representation `(β, B)` with `β, B >= 0` and `β e^B 1 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PHPoissonRep {
    beta: Vec<f64>,
    b: Matrix,
}

impl PHPoissonRep {
    /// Validates an already normalized pair. Use [`normalize`] for raw
    /// weights.
    pub fn new(beta: Vec<f64>, b: Matrix) -> Result<Self> {
        check_nonnegative(&beta, &b)?;
        let mass = linalg::dot(&beta, &linalg::matexp_action(&b, &ones(b.rows()), DEFAULT_TOL)?);
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!(
                "beta e^B 1 = {mass} differs from 1 by more than {NORMALIZATION_TOL:e}"
            )));
        }
        Ok(PHPoissonRep { beta, b })
    }

    pub fn order(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    /// `max_i (B 1)_i`, the clock rate of the physical form.
    pub fn max_rate(&self) -> f64 {
        self.b.row_sums().into_iter().fold(0.0, f64::max)
    }
}

fn check_nonnegative(beta: &[f64], b: &Matrix) -> Result<()> {
    if !b.is_square() || b.rows() != beta.len() {
        return Err(Error::dim(format!(
            "beta has length {} and B is {}x{}",
            beta.len(),
            b.rows(),
            b.cols()
        )));
    }
    if beta.is_empty() {
        return Err(Error::invalid("representation of order zero"));
    }
    if beta.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("beta must be finite and nonnegative"));
    }
    if !b.is_nonnegative() {
        return Err(Error::invalid("B must be entrywise nonnegative"));
    }
    Ok(())
}

/// Scales raw nonnegative weights so that `β e^B 1 = 1`.
pub fn normalize(beta_raw: &[f64], b: &Matrix) -> Result<PHPoissonRep> {
    check_nonnegative(beta_raw, b)?;
    if beta_raw.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("beta is identically zero"));
    }
    let eb1 = linalg::matexp_action(b, &ones(b.rows()), DEFAULT_TOL)?;
    let gamma = 1.0 / linalg::dot(beta_raw, &eb1);
    if !gamma.is_finite() {
        return Err(Error::numerical("normalizing constant is not finite"));
    }
    Ok(PHPoissonRep {
        beta: beta_raw.iter().map(|v| v * gamma).collect(),
        b: b.clone(),
    })
}

/// Row vectors `v_n = β B^n / n!` for `n = 0..=n_max`.
fn scaled_powers(rep: &PHPoissonRep, n_max: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    let mut v = rep.beta.clone();
    (0..=n_max).map(move |n| {
        if n > 0 {
            let inv = 1.0 / n as f64;
            v = rep.b.left_mul(&v).into_iter().map(|x| x * inv).collect();
        }
        v.clone()
    })
}

pub fn pmf(rep: &PHPoissonRep, n: usize) -> f64 {
    scaled_powers(rep, n).last().map_or(0.0, |v| v.iter().sum())
}

/// `p_0..p_{n_max}`.
pub fn pmf_vec(rep: &PHPoissonRep, n_max: usize) -> Vec<f64> {
    scaled_powers(rep, n_max).map(|v| v.iter().sum()).collect()
}

/// Bound on `Σ_{j>n} ||v_j||` given `||v_n||`, using `||v_{j+1}|| <= ||v_j|| ν̄/(j+1)`.
fn poisson_type_tail(v_norm: f64, rate: f64, n: usize) -> f64 {
    if v_norm == 0.0 || rate == 0.0 {
        return 0.0;
    }
    let mut term = v_norm;
    let mut sum = 0.0;
    let mut k = n;
    loop {
        k += 1;
        term *= rate / k as f64;
        sum += term;
        let r = rate / (k + 1) as f64;
        if r < 1.0 {
            let rest = term * r / (1.0 - r);
            if rest <= f64::EPSILON * sum || term == 0.0 {
                return sum + rest;
            }
        }
        if k - n > MAX_TERMS {
            return f64::INFINITY;
        }
    }
}

/// Truncated density with the certified Poisson-type tail.
pub fn density(rep: &PHPoissonRep, n_max: usize) -> DiscreteDensity {
    let rate = rep.max_rate();
    let mut raw = Vec::with_capacity(n_max + 1);
    let mut last = 0.0;
    for v in scaled_powers(rep, n_max) {
        raw.push(v.iter().sum());
        last = norm1(&v);
    }
    DiscreteDensity::new(raw, poisson_type_tail(last, rate, n_max))
}

/// Density truncated once the tail bound is at most `tol` (or at `n_cap`).
pub fn density_to_tol(rep: &PHPoissonRep, tol: f64, n_cap: usize) -> DiscreteDensity {
    let rate = rep.max_rate();
    let mut raw = Vec::new();
    let mut v = rep.beta.clone();
    let mut n = 0usize;
    loop {
        raw.push(v.iter().sum());
        let tail = poisson_type_tail(norm1(&v), rate, n);
        if tail <= tol || n >= n_cap {
            return DiscreteDensity::new(raw, tail);
        }
        n += 1;
        let inv = 1.0 / n as f64;
        v = rep.b.left_mul(&v).into_iter().map(|x| x * inv).collect();
    }
}

/// `β e^{zB} 1`.
pub fn pgf(rep: &PHPoissonRep, z: f64) -> Result<f64> {
    let e = linalg::matexp_action(&rep.b.scale(z), &ones(rep.order()), DEFAULT_TOL)?;
    Ok(linalg::dot(&rep.beta, &e))
}

/// `E[X(X-1)...(X-n+1)] = β B^n e^B 1`.
pub fn factorial_moment(rep: &PHPoissonRep, n: usize) -> Result<f64> {
    let e = linalg::matexp_action(&rep.b, &ones(rep.order()), DEFAULT_TOL)?;
    let mut v = rep.beta.clone();
    for _ in 0..n {
        v = rep.b.left_mul(&v);
    }
    Ok(linalg::dot(&v, &e))
}

/// Summary moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    /// `σ/μ`.
    pub cv: f64,
    /// Factorial moments of orders `0..=k`.
    pub factorial: Vec<f64>,
}

impl Moments {
    /// From factorial moments `m_0..m_k` with `k >= 2`.
    pub fn from_factorial(factorial: Vec<f64>) -> Self {
        let mean = factorial.get(1).copied().unwrap_or(f64::NAN);
        let m2 = factorial.get(2).copied().unwrap_or(f64::NAN);
        let variance = m2 + mean - mean * mean;
        Moments {
            mean,
            variance,
            cv: variance.sqrt() / mean,
            factorial,
        }
    }
}

/// Mean, variance, CV and factorial moments up to order `max(k, 2)`.
pub fn moments(rep: &PHPoissonRep, k: usize) -> Result<Moments> {
    let e = linalg::matexp_action(&rep.b, &ones(rep.order()), DEFAULT_TOL)?;
    let mut v = rep.beta.clone();
    let mut fm = Vec::new();
    for n in 0..=k.max(2) {
        if n > 0 {
            v = rep.b.left_mul(&v);
        }
        fm.push(linalg::dot(&v, &e));
    }
    Ok(Moments::from_factorial(fm))
}

/// Physical parameters `(ν, α, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalRep {
    nu: f64,
    alpha: Vec<f64>,
    p: Matrix,
}

impl PhysicalRep {
    /// `ν > 0`, `α >= 0` with `0 < α 1 <= 1`, and `P` substochastic.
    ///
    /// `α 1 < 1` is allowed so that any admissible scaling constant can be
    /// represented; fitting requires `α 1 = 1`.
    pub fn new(nu: f64, alpha: Vec<f64>, p: Matrix) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::invalid(format!("nu must be positive and finite, got {nu}")));
        }
        if !p.is_square() || p.rows() != alpha.len() || alpha.is_empty() {
            return Err(Error::dim(format!(
                "alpha has length {} and P is {}x{}",
                alpha.len(),
                p.rows(),
                p.cols()
            )));
        }
        if alpha.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("alpha must be finite and nonnegative"));
        }
        let total: f64 = alpha.iter().sum();
        if !(total > 0.0 && total <= 1.0 + ROUND_OFF) {
            return Err(Error::invalid(format!("alpha 1 must lie in (0, 1], got {total}")));
        }
        if !p.is_nonnegative() {
            return Err(Error::invalid("P must be entrywise nonnegative"));
        }
        if let Some((i, s)) = p
            .row_sums()
            .into_iter()
            .enumerate()
            .find(|(_, s)| *s > 1.0 + ROUND_OFF)
        {
            return Err(Error::invalid(format!("row {} of P sums to {s} > 1", i + 1)));
        }
        Ok(PhysicalRep { nu, alpha, p })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    /// `P[T > 1] = α e^{-ν} e^{νP} 1`: probability that the chain survives
    /// the unit interval.
    pub fn survival_probability(&self) -> Result<f64> {
        let e = linalg::matexp_action(&self.p.scale(self.nu), &ones(self.order()), DEFAULT_TOL)?;
        Ok((-self.nu).exp() * linalg::dot(&self.alpha, &e))
    }
}

/// `ν = max_i (B 1)_i`, `P = B/ν`, `α = cβ` with default `c = 1/(β 1)`.
pub fn to_physical(rep: &PHPoissonRep, c: Option<f64>) -> Result<PhysicalRep> {
    let nu = rep.max_rate();
    if nu == 0.0 {
        return Err(Error::invalid("B = 0 has no physical form (zero clock rate)"));
    }
    let mass: f64 = rep.beta.iter().sum();
    let c_max = 1.0 / mass;
    let c = c.unwrap_or(c_max);
    if !(c > 0.0 && c <= c_max * (1.0 + ROUND_OFF)) {
        return Err(Error::invalid(format!(
            "scaling constant c = {c} must lie in (0, 1/(beta 1)] = (0, {c_max}]"
        )));
    }
    let mut p = rep.b.scale(1.0 / nu);
    // the row attaining the maximum is stochastic by construction
    for i in 0..p.rows() {
        let s: f64 = p.row(i).iter().sum();
        if s > 1.0 {
            for j in 0..p.cols() {
                p[(i, j)] /= s;
            }
        }
    }
    let alpha = rep.beta.iter().map(|v| v * c).collect();
    PhysicalRep::new(nu, alpha, p)
}

/// `B = νP`, `β = α / (α e^B 1)`.
pub fn from_physical(phys: &PhysicalRep) -> Result<PHPoissonRep> {
    normalize(&phys.alpha, &phys.p.scale(phys.nu))
}

/// The same law as `D(β, 0, B)`.
pub fn as_genab0(rep: &PHPoissonRep) -> GenAB0Rep {
    let m = rep.order();
    GenAB0Rep::new(rep.beta.clone(), Matrix::zeros(m, m), rep.b.clone())
        .expect("validated dimensions")
}

/// `(γ, P_0) = (β e^B, e^{-B})`, the form with a stochastic starting vector.
pub fn start_matrix_form(rep: &PHPoissonRep) -> Result<(Vec<f64>, Matrix)> {
    let gamma = linalg::vec_exp_action(&rep.beta, &rep.b, DEFAULT_TOL)?;
    let p0 = linalg::matexp(&rep.b.scale(-1.0), DEFAULT_TOL)?;
    Ok((gamma, p0))
}

/// Result of [`tail_diagnostic`].
#[derive(Debug, Clone, PartialEq)]
pub enum TailDiagnostic {
    /// `p_n n! / sp(B)^n` for `n` in the requested range.
    Sequence { spectral_radius: f64, values: Vec<f64> },
    /// `sp(B) = 0`: the law lives on `{0, ..., last}`.
    FiniteSupport { last: usize },
}

/// Asymptotic shape of the tail: `p_n ≈ sp(B)^n n^r / n!`, so the logarithm
/// of the returned sequence grows like `r log n`.
pub fn tail_diagnostic(rep: &PHPoissonRep, n_lo: usize, n_hi: usize) -> Result<TailDiagnostic> {
    if n_lo >= n_hi {
        return Err(Error::invalid(format!("need n_lo < n_hi, got {n_lo} and {n_hi}")));
    }
    let sp = linalg::spectral_radius(&rep.b, 1e-15)?;
    if sp == 0.0 {
        let probs = pmf_vec(rep, rep.order());
        let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        return Ok(TailDiagnostic::FiniteSupport { last });
    }
    let scaled = rep.b.scale(1.0 / sp);
    let mut v = rep.beta.clone();
    let mut values = Vec::with_capacity(n_hi - n_lo + 1);
    for n in 0..=n_hi {
        if n > 0 {
            v = scaled.left_mul(&v);
        }
        if n >= n_lo {
            values.push(v.iter().sum());
        }
    }
    Ok(TailDiagnostic::Sequence {
        spectral_radius: sp,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::*;
    use crate::genab0;
    use proptest::prelude::*;

    fn tri() -> PHPoissonRep {
        PHPoissonRep::new(tridiagonal_beta(), tridiagonal_b()).unwrap()
    }

    fn bidiag() -> PHPoissonRep {
        PHPoissonRep::new(bidiagonal_beta(), bidiagonal_b()).unwrap()
    }

    fn poisson_pmf(lambda: f64, n: usize) -> f64 {
        let mut p = (-lambda).exp();
        for k in 1..=n {
            p *= lambda / k as f64;
        }
        p
    }

    #[test]
    fn normalize_keeps_normalized_input() {
        let rep = tri();
        let again = normalize(rep.beta(), rep.b()).unwrap();
        for (x, y) in again.beta().iter().zip(rep.beta()) {
            assert!((x - y).abs() <= 1e-14 * y);
        }
    }

    #[test]
    fn normalize_tridiagonal_mean() {
        let rep = normalize(&tridiagonal_weights(), &tridiagonal_b()).unwrap();
        let mu = factorial_moment(&rep, 1).unwrap();
        assert!((mu - 13.84).abs() < 0.01, "{mu}");
    }

    #[test]
    fn normalize_scalar() {
        let rep = normalize(&[2.0], &Matrix::from_diag(&[1.0])).unwrap();
        assert!((rep.beta()[0] - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_bad_weights() {
        let b = Matrix::identity(2);
        assert!(normalize(&[0.0, 0.0], &b).is_err());
        assert!(normalize(&[-0.1, 1.0], &b).is_err());
        assert!(PHPoissonRep::new(vec![0.5, 0.5], b).is_err());
    }

    #[test]
    fn zero_b_is_point_mass() {
        let rep = PHPoissonRep::new(vec![0.4, 0.6], Matrix::zeros(2, 2)).unwrap();
        assert_eq!(pmf(&rep, 0), 1.0);
        assert!((1..10).all(|n| pmf(&rep, n) == 0.0));
        assert_eq!(density(&rep, 5).tail_bound(), 0.0);
    }

    #[test]
    fn scalar_is_poisson() {
        let lambda: f64 = 3.7;
        let rep = PHPoissonRep::new(vec![(-lambda).exp()], Matrix::from_diag(&[lambda])).unwrap();
        for n in 0..40 {
            assert!((pmf(&rep, n) - poisson_pmf(lambda, n)).abs() < 1e-15);
        }
    }

    #[test]
    fn bidiagonal_moments() {
        let rep = bidiag();
        let mo = moments(&rep, 2).unwrap();
        assert!((mo.mean - 18.71).abs() < 0.01, "{}", mo.mean);
        assert!((mo.variance - 10.35).abs() < 0.02, "{}", mo.variance);
        assert!((mo.cv - 0.17).abs() < 0.005);
        let d = density_to_tol(&rep, 1e-14, 1000);
        assert!((d.mean() - mo.mean).abs() < 1e-9);
        assert!((d.variance() - mo.variance).abs() < 1e-8);
    }

    #[test]
    fn tridiagonal_moments() {
        let mo = moments(&tri(), 2).unwrap();
        assert!((mo.factorial[0] - 1.0).abs() < 1e-12);
        assert!((mo.mean - 13.84).abs() < 0.01);
        assert!((mo.variance - 47.31).abs() < 0.02);
    }

    #[test]
    fn pgf_endpoints() {
        let rep = tri();
        assert!((pgf(&rep, 1.0).unwrap() - 1.0).abs() < 1e-10);
        assert!((pgf(&rep, 0.0).unwrap() - rep.beta().iter().sum::<f64>()).abs() < 1e-17);
    }

    #[test]
    fn pgf_partial_sums_converge() {
        let rep = tri();
        for z in [-1.0, -0.4, 0.5, 1.0] {
            let want = pgf(&rep, z).unwrap();
            let d = density(&rep, 80);
            let partial: f64 = d.probs().iter().enumerate().map(|(n, p)| z.powi(n as i32) * p).sum();
            assert!((partial - want).abs() <= d.tail_bound() + 1e-12, "z = {z}");
        }
    }

    #[test]
    fn density_tail_bound_is_certified() {
        let rep = tri();
        let short = density(&rep, 30);
        let long: f64 = pmf_vec(&rep, 400)[31..].iter().sum();
        assert!(long <= short.tail_bound());
        let d = density_to_tol(&rep, 1e-13, 10_000);
        assert!(d.tail_bound() <= 1e-13);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn physical_of_tridiagonal() {
        let phys = to_physical(&tri(), None).unwrap();
        assert_eq!(phys.nu(), 21.05);
        let shown = [
            [0.2375, 0.0024, 0.0, 0.0, 0.0],
            [0.0024, 0.4276, 0.0024, 0.0, 0.0],
            [0.0, 0.0024, 0.6176, 0.0024, 0.0],
            [0.0, 0.0, 0.0024, 0.8076, 0.0024],
            [0.0, 0.0, 0.0, 0.0024, 0.9976],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert!((phys.p()[(i, j)] - shown[i][j]).abs() <= 5e-5);
            }
        }
        let alpha_shown = [0.99, 0.91e-2, 0.20e-3, 0.27e-5, 0.13e-6];
        let half_unit = [0.005, 0.005e-2, 0.005e-3, 0.005e-5, 0.005e-6];
        for i in 0..5 {
            assert!((phys.alpha()[i] - alpha_shown[i]).abs() <= half_unit[i], "alpha[{i}]");
        }
        assert!((phys.alpha().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn physical_scalar_and_zero() {
        let lambda: f64 = 2.0;
        let rep = PHPoissonRep::new(vec![(-lambda).exp()], Matrix::from_diag(&[lambda])).unwrap();
        let phys = to_physical(&rep, None).unwrap();
        assert_eq!(phys.nu(), 2.0);
        assert_eq!(phys.p()[(0, 0)], 1.0);
        assert!((phys.alpha()[0] - 1.0).abs() < 1e-15);
        let zero = PHPoissonRep::new(vec![1.0], Matrix::zeros(1, 1)).unwrap();
        assert!(to_physical(&zero, None).is_err());
        assert!(to_physical(&rep, Some(1.0 / (-lambda).exp() * 1.1)).is_err());
    }

    #[test]
    fn physical_round_trip() {
        let rep = tri();
        let back = from_physical(&to_physical(&rep, None).unwrap()).unwrap();
        for n in 0..=50 {
            assert!((pmf(&rep, n) - pmf(&back, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn stochastic_p_is_poisson() {
        let p = Matrix::from_rows(&[
            vec![0.2, 0.5, 0.3],
            vec![0.0, 1.0, 0.0],
            vec![0.6, 0.1, 0.3],
        ])
        .unwrap();
        let phys = PhysicalRep::new(7.5, vec![0.3, 0.3, 0.4], p).unwrap();
        let rep = from_physical(&phys).unwrap();
        for n in 0..=60 {
            assert!((pmf(&rep, n) - poisson_pmf(7.5, n)).abs() < 1e-12);
        }
        let scalar = from_physical(&PhysicalRep::new(4.0, vec![1.0], Matrix::identity(1)).unwrap()).unwrap();
        assert!((scalar.beta()[0] - (-4f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn physical_validation() {
        assert!(PhysicalRep::new(0.0, vec![1.0], Matrix::identity(1)).is_err());
        assert!(PhysicalRep::new(1.0, vec![0.7, 0.7], Matrix::identity(2)).is_err());
        assert!(PhysicalRep::new(1.0, vec![1.0], Matrix::from_diag(&[1.1])).is_err());
        assert!(PhysicalRep::new(1.0, vec![1.0], Matrix::from_diag(&[-0.1])).is_err());
    }

    #[test]
    fn survival_probability_of_tridiagonal() {
        let phys = to_physical(&tri(), None).unwrap();
        let p = phys.survival_probability().unwrap();
        assert!((p - 6.443e-7).abs() < 1e-10, "{p}");
    }

    #[test]
    fn genab0_view_agrees() {
        let rep = tri();
        let d = genab0::density(&as_genab0(&rep), 60).unwrap();
        for n in 0..=60 {
            assert!((d.probs()[n] - pmf(&rep, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn start_matrix_form_round_trip() {
        let rep = tri();
        let (gamma, p0) = start_matrix_form(&rep).unwrap();
        assert!((gamma.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let back = genab0::from_start_matrix(&gamma, &p0, Matrix::zeros(5, 5), rep.b().clone()).unwrap();
        for (x, y) in back.beta().iter().zip(rep.beta()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn nilpotent_has_finite_support() {
        let b = Matrix::from_rows(&[
            vec![0.0, 2.0, 1.0],
            vec![0.0, 0.0, 3.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let rep = normalize(&[1.0, 0.5, 0.2], &b).unwrap();
        assert!((3..20).all(|n| pmf(&rep, n) == 0.0));
        assert_eq!(
            tail_diagnostic(&rep, 0, 10).unwrap(),
            TailDiagnostic::FiniteSupport { last: 2 }
        );
    }

    #[test]
    fn scalar_tail_sequence_is_constant() {
        let rep = PHPoissonRep::new(vec![(-3f64).exp()], Matrix::from_diag(&[3.0])).unwrap();
        match tail_diagnostic(&rep, 5, 40).unwrap() {
            TailDiagnostic::Sequence { spectral_radius, values } => {
                assert_eq!(spectral_radius, 3.0);
                for v in values {
                    assert!((v - (-3f64).exp()).abs() < 1e-15);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bidiagonal_decays_faster_than_poisson() {
        let rep = bidiag();
        let mu = factorial_moment(&rep, 1).unwrap();
        let probs = pmf_vec(&rep, 120);
        for n in 40..119 {
            let ours = probs[n + 1] / probs[n];
            let poisson = mu / (n + 1) as f64;
            assert!(ours < poisson, "n = {n}");
        }
        assert!(tail_diagnostic(&rep, 3, 2).is_err());
    }

    fn rep_strategy() -> impl Strategy<Value = PHPoissonRep> {
        (
            prop::collection::vec(0.0f64..2.0, 9),
            prop::collection::vec(0.01f64..1.0, 3),
        )
            .prop_map(|(b, w)| normalize(&w, &Matrix::from_vec(3, 3, b).unwrap()).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pmf_nonnegative_and_normalized(rep in rep_strategy()) {
            let d = density(&rep, 40);
            prop_assert!(d.raw().iter().all(|&p| p >= 0.0));
            let s = d.total_mass();
            prop_assert!(s <= 1.0 + 1e-10 && s + d.tail_bound() >= 1.0 - 1e-10);
        }

        #[test]
        fn law_invariant_to_scaling_constant(rep in rep_strategy(), frac in 0.05f64..1.0) {
            let c = frac / rep.beta().iter().sum::<f64>();
            let back = from_physical(&to_physical(&rep, Some(c)).unwrap()).unwrap();
            for n in 0..30 {
                prop_assert!((pmf(&rep, n) - pmf(&back, n)).abs() < 1e-12);
            }
        }

        #[test]
        fn variance_identity(rep in rep_strategy()) {
            let mo = moments(&rep, 2).unwrap();
            let d = density_to_tol(&rep, 1e-15, 10_000);
            prop_assert!((mo.variance - d.variance()).abs() < 1e-8 * mo.variance.max(1.0));
            prop_assert!((mo.mean - d.mean()).abs() < 1e-9 * mo.mean.max(1.0));
        }
    }
}
