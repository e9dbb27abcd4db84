//! Closed forms for commuting `A`, `B`.
//!
//! When `AB = BA` the generating matrix collapses to
//! `P(z; A, B) = exp((A + B) D(z; A))` with
//! `D(z; A) = z Σ_{n>=1} (zA)^{n-1} / n`, which equals
//! `A^{-1} log (I - zA)^{-1}` for nonsingular `A`.

use crate::error::{Error, Result};
use crate::genab0::{factor, TailCertificate, SPECTRAL_MARGIN};
use crate::linalg::{self, Matrix, DEFAULT_TOL};

pub const DEFAULT_COMM_TOL: f64 = 1e-10;

/// Largest `n` accepted by [`stirling_first_unsigned`].
pub const STIRLING_MAX_N: usize = 30;

/// `||AB - BA|| <= comm_tol (||A|| ||B|| + 1)` in the infinity norm.
pub fn is_commuting(a: &Matrix, b: &Matrix, comm_tol: f64) -> Result<bool> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return Err(Error::dim("is_commuting: A and B must be square of the same order"));
    }
    let comm = &a.matmul(b) - &b.matmul(a);
    Ok(comm.norm_inf() <= comm_tol * (a.norm_inf() * b.norm_inf() + 1.0))
}

/// A pair `(A, B)` checked to commute.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutingPair {
    a: Matrix,
    b: Matrix,
    comm_tol: f64,
}

impl CommutingPair {
    pub fn new(a: Matrix, b: Matrix, comm_tol: f64) -> Result<Self> {
        if !is_commuting(&a, &b, comm_tol)? {
            let gap = (&a.matmul(&b) - &b.matmul(&a)).norm_inf();
            return Err(Error::invalid(format!(
                "A and B do not commute: ||AB - BA|| = {gap:e} exceeds tolerance {comm_tol:e}"
            )));
        }
        Ok(CommutingPair { a, b, comm_tol })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn comm_tol(&self) -> f64 {
        self.comm_tol
    }

    /// `k` when `B = -kA` for an integer `k >= 1`.
    fn negative_multiple(&self) -> Option<u32> {
        let aa = linalg::dot(self.a.as_slice(), self.a.as_slice());
        if aa == 0.0 {
            return None;
        }
        let k = -linalg::dot(self.a.as_slice(), self.b.as_slice()) / aa;
        let kr = k.round();
        if kr < 1.0 || (k - kr).abs() > 1e-9 * kr || kr > u32::MAX as f64 {
            return None;
        }
        let mut resid = self.b.clone();
        resid.add_scaled(&self.a, kr);
        let scale = self.a.norm_inf() + self.b.norm_inf();
        (resid.norm_inf() <= self.comm_tol * scale).then_some(kr as u32)
    }
}

/// `D(z; A) = z Σ_{n>=1} (zA)^{n-1} / n`.
///
/// Requires `|z| sp(A) < 1` unless `A` is nilpotent. When `A` is
/// well-conditioned the series is checked against `-A^{-1} log(I - zA)`.
pub fn dz_matrix(z: f64, a: &Matrix, tol: f64) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dim("dz_matrix: A must be square"));
    }
    if !(tol > 0.0) || !z.is_finite() {
        return Err(Error::invalid("dz_matrix: need finite z and positive tol"));
    }
    let m = a.rows();
    if z == 0.0 {
        return Ok(Matrix::zeros(m, m));
    }
    let za = a.scale(z);
    let sp = linalg::spectral_radius(&za, 1e-15)?;
    let cert = if sp <= 1.0 - SPECTRAL_MARGIN {
        Some(TailCertificate::new(&za, &Matrix::zeros(m, m), sp, 1.0)?)
    } else {
        None
    };

    // power = (zA)^{n-1}
    let mut power = Matrix::identity(m);
    let mut sum = Matrix::identity(m);
    let mut n = 1usize;
    loop {
        if power.is_zero() {
            break;
        }
        match &cert {
            Some(c) => {
                let tail = c.tail(power.norm_inf(), n, 1.0) / (n + 1) as f64;
                if tail <= tol * sum.norm_inf().max(1.0) {
                    break;
                }
            }
            None if n > m => {
                return Err(Error::Divergence(format!(
                    "|z| sp(A) = {sp} is not below 1 and A is not nilpotent"
                )));
            }
            None => {}
        }
        power = power.matmul(&za);
        n += 1;
        sum.add_scaled(&power, 1.0 / n as f64);
        if n > 10_000_000 {
            return Err(Error::numerical("dz_matrix: series did not converge"));
        }
    }
    let d = sum.scale(z);

    if cert.is_some() {
        if let Ok(inv) = a.inverse() {
            let cond = a.norm_inf() * inv.norm_inf();
            if cond < 1e8 {
                let log = linalg::matlog(&(&Matrix::identity(m) - &za), DEFAULT_TOL)?;
                let closed = inv.matmul(&log).scale(-1.0);
                let allowed = (10.0 * tol).max(1e3 * f64::EPSILON * cond) * d.norm_inf().max(1.0);
                let gap = closed.max_abs_diff(&d);
                if gap > allowed {
                    return Err(Error::Consistency {
                        what: "D(z; A): series vs logarithm form".into(),
                        first: d.norm_inf(),
                        second: closed.norm_inf(),
                    });
                }
            }
        }
    }
    Ok(d)
}

/// `P(z; A, B)` in closed form.
///
/// For `B = -kA` with integer `k >= 1` this is the polynomial
/// `(I - zA)^{k-1}`, finite for every `z`; otherwise it is
/// `exp((A + B) D(z; A))` under the [`dz_matrix`] precondition.
pub fn pgf_closed(pair: &CommutingPair, z: f64, tol: f64) -> Result<Matrix> {
    let m = pair.a.rows();
    if let Some(k) = pair.negative_multiple() {
        let base = &Matrix::identity(m) - &pair.a.scale(z);
        return Ok(base.powi(k - 1));
    }
    let d = dz_matrix(z, &pair.a, tol)?;
    let s = &pair.a + &pair.b;
    linalg::matexp(&s.matmul(&d), DEFAULT_TOL)
}

/// `n! β P(1; A, B) (I - A)^{-n} P_n 1`.
pub fn factorial_moment_commuting(
    pair: &CommutingPair,
    beta: &[f64],
    n: usize,
    tol: f64,
) -> Result<f64> {
    let m = pair.a.rows();
    if beta.len() != m {
        return Err(Error::dim("factorial_moment_commuting: beta length"));
    }
    let sp = linalg::spectral_radius(&pair.a, 1e-15)?;
    if sp > 1.0 - SPECTRAL_MARGIN {
        return Err(Error::Divergence(format!(
            "sp(A) = {sp} is not below 1; factorial moments are not defined"
        )));
    }
    let pz = pgf_closed(pair, 1.0, tol)?;
    let resolvent = (&Matrix::identity(m) - &pair.a).inverse()?;
    let mut v = pz.left_mul(beta);
    for _ in 0..n {
        v = resolvent.left_mul(&v);
    }
    for i in 1..=n {
        v = factor(&pair.a, &pair.b, i).left_mul(&v);
    }
    let nf: f64 = (1..=n).map(|i| i as f64).product();
    Ok(nf * v.iter().sum::<f64>())
}

/// Unsigned Stirling number of the first kind `[n, i]`, from
/// `[n+1, i] = [n, i-1] + n [n, i]`.
pub fn stirling_first_unsigned(n: usize, i: usize) -> Result<u128> {
    if n > STIRLING_MAX_N {
        return Err(Error::invalid(format!(
            "Stirling numbers are computed exactly only for n <= {STIRLING_MAX_N}, got {n}"
        )));
    }
    if i > n {
        return Ok(0);
    }
    let mut row = vec![0u128; n + 1];
    row[0] = 1;
    for k in 0..n {
        for j in (1..=k + 1).rev() {
            row[j] = row[j - 1] + k as u128 * row[j];
        }
        row[0] = 0;
    }
    Ok(row[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genab0::{self, GenAB0Rep};
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn sample_a() -> Matrix {
        m(&[&[0.2, 0.1, -0.05], &[0.0, 0.3, 0.1], &[0.1, -0.1, 0.25]])
    }

    /// `c0 I + c1 A + c2 A²`.
    fn poly(a: &Matrix, c: [f64; 3]) -> Matrix {
        let mut out = Matrix::identity(a.rows()).scale(c[0]);
        out.add_scaled(a, c[1]);
        out.add_scaled(&a.matmul(a), c[2]);
        out
    }

    #[test]
    fn commuting_examples() {
        let a = sample_a();
        assert!(is_commuting(&a, &a.scale(3.0), DEFAULT_COMM_TOL).unwrap());
        assert!(is_commuting(&a, &Matrix::identity(3).scale(2.5), DEFAULT_COMM_TOL).unwrap());
        let b = m(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 0.0], &[3.0, 0.0, 1.0]]);
        let direct = (&a.matmul(&b) - &b.matmul(&a)).norm_inf();
        assert!(direct > 0.1);
        assert!(!is_commuting(&a, &b, DEFAULT_COMM_TOL).unwrap());
        assert!(is_commuting(&a, &b, direct / (a.norm_inf() * b.norm_inf() + 1.0)).unwrap());
        assert!(CommutingPair::new(a, b, DEFAULT_COMM_TOL).is_err());
    }

    #[test]
    fn dz_of_zero_matrix_and_zero_z() {
        let d = dz_matrix(0.6, &Matrix::zeros(2, 2), 1e-14).unwrap();
        assert!(d.max_abs_diff(&Matrix::identity(2).scale(0.6)) < 1e-16);
        assert!(dz_matrix(0.0, &sample_a(), 1e-14).unwrap().is_zero());
    }

    #[test]
    fn dz_scalar_closed_form() {
        for (a, z) in [(0.5, 0.9), (-0.8, 1.0), (0.3, -0.7)] {
            let d = dz_matrix(z, &m(&[&[a]]), 1e-14).unwrap();
            let exact = -(1.0 - z * a).ln() / a;
            assert!((d[(0, 0)] - exact).abs() < 1e-12, "a = {a}, z = {z}");
        }
    }

    #[test]
    fn dz_nilpotent_is_finite_sum() {
        let a = m(&[&[0.0, 5.0], &[0.0, 0.0]]);
        let d = dz_matrix(1.0, &a, 1e-14).unwrap();
        // z (I + zA/2)
        assert!(d.max_abs_diff(&m(&[&[1.0, 2.5], &[0.0, 1.0]])) < 1e-15);
    }

    #[test]
    fn dz_divergent() {
        let a = m(&[&[1.2, 0.0], &[0.0, 0.3]]);
        assert!(matches!(dz_matrix(1.0, &a, 1e-12), Err(Error::Divergence(_))));
    }

    fn real_power(a: &Matrix, z: f64, expo: f64) -> Matrix {
        let base = &Matrix::identity(a.rows()) - &a.scale(z);
        let log = linalg::matlog(&base, 1e-15).unwrap();
        linalg::matexp(&log.scale(expo), 1e-15).unwrap()
    }

    #[test]
    fn multiple_of_a_is_resolvent_power() {
        let a = sample_a();
        for alpha in [-1.0, -0.5, 0.0, 1.0, 2.7] {
            let pair = CommutingPair::new(a.clone(), a.scale(alpha), DEFAULT_COMM_TOL).unwrap();
            for z in [0.3, 1.0] {
                let got = pgf_closed(&pair, z, 1e-14).unwrap();
                let want = real_power(&a, z, -(1.0 + alpha));
                assert!(got.max_abs_diff(&want) < 1e-9, "alpha {alpha}, z {z}");
            }
        }
    }

    #[test]
    fn negative_integer_multiple_is_polynomial_even_when_large() {
        let a = m(&[&[1.5, 0.5], &[0.2, 2.0]]);
        for k in 1..=4u32 {
            let pair = CommutingPair::new(a.clone(), a.scale(-(k as f64)), DEFAULT_COMM_TOL).unwrap();
            let got = pgf_closed(&pair, 1.0, 1e-12).unwrap();
            let want = (&Matrix::identity(2) - &a).powi(k - 1);
            assert!(got.max_abs_diff(&want) < 1e-12);
            let series = genab0::pgf_matrix(pair.a(), pair.b(), 1.0, 1e-12).unwrap();
            assert!(series.max_abs_diff(&want) < 1e-9 * want.max_abs().max(1.0));
        }
    }

    #[test]
    fn zero_a_is_exponential() {
        let b = m(&[&[0.4, 1.0], &[0.3, 0.2]]);
        let pair = CommutingPair::new(Matrix::zeros(2, 2), b.clone(), DEFAULT_COMM_TOL).unwrap();
        let got = pgf_closed(&pair, 0.7, 1e-14).unwrap();
        assert!(got.max_abs_diff(&linalg::matexp(&b.scale(0.7), 1e-15).unwrap()) < 1e-12);
    }

    #[test]
    fn moment_zero_a_first_order() {
        let b = m(&[&[0.4, 1.0], &[0.3, 0.2]]);
        let beta = [0.2, 0.3];
        let pair = CommutingPair::new(Matrix::zeros(2, 2), b.clone(), DEFAULT_COMM_TOL).unwrap();
        let got = factorial_moment_commuting(&pair, &beta, 1, 1e-14).unwrap();
        let e = linalg::matexp_action(&b, &[1.0, 1.0], 1e-15).unwrap();
        let want = linalg::dot(&b.left_mul(&beta), &e);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn moment_of_embedded_phase_type() {
        let alpha = [0.4, 0.5];
        let t = m(&[&[0.3, 0.2], &[0.1, 0.5]]);
        let rep = genab0::ph_embedding(&alpha, &t).unwrap();
        let pair = CommutingPair::new(t.clone(), Matrix::zeros(2, 2), DEFAULT_COMM_TOL).unwrap();
        let exit = (&Matrix::identity(2) - &t).mul_vec(&[1.0, 1.0]);
        for n in 1..=3usize {
            let mut v = alpha.to_vec();
            let mut direct = 0.0;
            for k in 1..=10_000usize {
                let pk = linalg::dot(&v, &exit);
                let falling: f64 = (0..n).map(|j| k as f64 - j as f64).product();
                direct += falling * pk;
                v = t.left_mul(&v);
            }
            let got = factorial_moment_commuting(&pair, rep.beta(), n, 1e-14).unwrap();
            assert!((got - direct).abs() < 1e-10 * direct.abs().max(1.0), "n = {n}");
        }
    }

    #[test]
    fn stirling_values() {
        for n in 0..=STIRLING_MAX_N {
            assert_eq!(stirling_first_unsigned(n, n).unwrap(), 1);
        }
        assert_eq!(stirling_first_unsigned(3, 2).unwrap(), 3);
        assert_eq!(stirling_first_unsigned(4, 0).unwrap(), 0);
        let mut fact: u128 = 1;
        for n in 1..=12usize {
            fact *= n as u128;
            let s: u128 = (0..=n).map(|i| stirling_first_unsigned(n, i).unwrap()).sum();
            assert_eq!(s, fact);
        }
        assert!(stirling_first_unsigned(31, 3).is_err());
    }

    fn matrix_strategy(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(lo..hi, n * n).prop_map(move |d| Matrix::from_vec(n, n, d).unwrap())
    }

    fn scaled_to(a: Matrix, target: f64) -> Matrix {
        let sp = linalg::spectral_radius(&a, 1e-15).unwrap();
        if sp > target {
            a.scale(target / sp * 0.999)
        } else {
            a
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stirling_product_identity(
            a in matrix_strategy(3, -1.0, 1.0),
            c in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let b = poly(&a, c);
            let s = &a + &b;
            for n in 0..=6usize {
                let mut prod = Matrix::identity(3);
                for i in 1..=n {
                    prod = prod.matmul(&(&a.scale(i as f64) + &b));
                }
                let mut sum = Matrix::zeros(3, 3);
                for i in 0..=n {
                    let coeff = stirling_first_unsigned(n, i).unwrap() as f64;
                    sum.add_scaled(&s.powi(i as u32).matmul(&a.powi((n - i) as u32)), coeff);
                }
                prop_assert!(prod.max_abs_diff(&sum) <= 1e-8 * prod.max_abs().max(1.0));
            }
        }

        #[test]
        fn semigroup(
            a in matrix_strategy(3, -1.0, 1.0),
            c1 in prop::array::uniform3(-0.5f64..0.5),
            c2 in prop::array::uniform3(-0.5f64..0.5),
        ) {
            let a = scaled_to(a, 0.6);
            let b1 = poly(&a, c1);
            let b2 = poly(&a, c2);
            let mut b3 = &a + &b1;
            b3.add_scaled(&b2, 1.0);
            let p = |b: Matrix| CommutingPair::new(a.clone(), b, 1e-9).unwrap();
            for z in [0.3, 0.7] {
                let lhs = pgf_closed(&p(b1.clone()), z, 1e-14).unwrap()
                    .matmul(&pgf_closed(&p(b2.clone()), z, 1e-14).unwrap());
                let rhs = pgf_closed(&p(b3.clone()), z, 1e-14).unwrap();
                prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-9 * rhs.max_abs().max(1.0));
            }
        }

        #[test]
        fn closed_form_matches_series(
            a in matrix_strategy(3, -1.0, 1.0),
            c in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let a = scaled_to(a, 0.6);
            let pair = CommutingPair::new(a.clone(), poly(&a, c), 1e-9).unwrap();
            for z in [0.3, 0.7, 1.0] {
                let closed = pgf_closed(&pair, z, 1e-14).unwrap();
                let series = genab0::pgf_matrix(pair.a(), pair.b(), z, 1e-14).unwrap();
                prop_assert!(closed.max_abs_diff(&series) <= 1e-8);
            }
        }

        #[test]
        fn moments_agree_across_modules(
            a in matrix_strategy(3, -1.0, 1.0),
            c in prop::array::uniform3(-1.0f64..1.0),
            beta in prop::collection::vec(0.0f64..1.0, 3),
        ) {
            let a = scaled_to(a, 0.5);
            let b = poly(&a, c);
            let pair = CommutingPair::new(a.clone(), b.clone(), 1e-9).unwrap();
            let rep = GenAB0Rep::new(beta.clone(), a, b).unwrap();
            for n in 0..=3 {
                let x = factorial_moment_commuting(&pair, &beta, n, 1e-14).unwrap();
                let y = genab0::factorial_moment(&rep, n, 1e-13).unwrap();
                prop_assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0));
            }
        }
    }
}
