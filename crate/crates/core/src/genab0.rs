//! Generalized (a,b,0) and (a,b,1) count distributions.
//!
//! A representation `D(β, A, B)` of order `m` defines
//! `p_n = β P_n 1` with `P_0 = I` and `P_n = P_{n-1} (A + B/n)`.
//!
//! Series are only evaluated when convergence is certified: either
//! `sp(A) <= 1 - δ`, or the recursion hits an exact zero. In the first case
//! a [`TailCertificate`] bounds everything that was not summed.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{self, norm1, Matrix};

/// Margin below 1 required of `sp(A)`.
pub const SPECTRAL_MARGIN: f64 = 1e-9;

/// Steps scanned for an exact zero when `sp(A)` is too large.
pub const TERMINATION_HORIZON: usize = 10_000;

/// Values in `(-NEG_CLAMP, 0)` are round-off and clamped to zero on output.
pub const NEG_CLAMP: f64 = 1e-12;

const MAX_SERIES_TERMS: usize = 1_000_000;

/// Representation `D(β, A, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenAB0Rep {
    beta: Vec<f64>,
    a: Matrix,
    b: Matrix,
}

impl GenAB0Rep {
    pub fn new(beta: Vec<f64>, a: Matrix, b: Matrix) -> Result<Self> {
        check_pair(&a, &b)?;
        if beta.len() != a.rows() {
            return Err(Error::dim(format!(
                "beta has length {} but the matrices have order {}",
                beta.len(),
                a.rows()
            )));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("beta entries must be finite"));
        }
        Ok(GenAB0Rep { beta, a, b })
    }

    pub fn order(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }
}

/// Representation of the (a,b,1) variant: `p_0` is free and the recursion
/// starts at index 2 from `β₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenAB1Rep {
    p0: f64,
    beta1: Vec<f64>,
    a: Matrix,
    b: Matrix,
}

impl GenAB1Rep {
    pub fn new(p0: f64, beta1: Vec<f64>, a: Matrix, b: Matrix) -> Result<Self> {
        if !(0.0..=1.0).contains(&p0) {
            return Err(Error::invalid(format!("p0 must lie in [0, 1], got {p0}")));
        }
        check_pair(&a, &b)?;
        if beta1.len() != a.rows() {
            return Err(Error::dim(format!(
                "beta1 has length {} but the matrices have order {}",
                beta1.len(),
                a.rows()
            )));
        }
        if beta1.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("beta1 entries must be finite"));
        }
        Ok(GenAB1Rep { p0, beta1, a, b })
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn beta1(&self) -> &[f64] {
        &self.beta1
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }
}

fn check_pair(a: &Matrix, b: &Matrix) -> Result<()> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return Err(Error::dim(format!(
            "A is {}x{} and B is {}x{}; both must be square of the same order",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Truncated probability sequence `p_0..p_N` with a bound on the mass
/// (in absolute value) beyond `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDensity {
    probs: Vec<f64>,
    raw: Vec<f64>,
    tail_bound: f64,
}

impl DiscreteDensity {
    /// Clamps tiny negative round-off to zero; the unclamped values stay
    /// available through [`DiscreteDensity::raw`].
    pub fn new(raw: Vec<f64>, tail_bound: f64) -> Self {
        let probs = raw
            .iter()
            .map(|&p| if p < 0.0 && p > -NEG_CLAMP { 0.0 } else { p })
            .collect();
        DiscreteDensity {
            probs,
            raw,
            tail_bound,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| (n as f64 - mu).powi(2) * p)
            .sum()
    }

    /// Whether the truncated mass plus the tail bound brackets 1 within
    /// `tol` and no entry is meaningfully negative.
    pub fn is_proper(&self, tol: f64) -> bool {
        let s = self.total_mass();
        self.probs.iter().all(|&p| p >= 0.0)
            && s <= 1.0 + tol
            && s + self.tail_bound >= 1.0 - tol
    }

    /// L¹ distance over the union of both supports (tails ignored).
    pub fn l1_distance(&self, other: &DiscreteDensity) -> f64 {
        let n = self.len().max(other.len());
        (0..n).map(|i| (self.get(i) - other.get(i)).abs()).sum()
    }
}

/// Bound on the tail of `Σ_n z^n x_n` where `x_{n+1} = x_n (A + B/(n+1))`.
///
/// With `ρ ∈ (sp(A), 1)` and `k` such that `||A^k|| <= ρ^k`, the row-vector
/// norm `|v|_* = max_{r<k} ||v A^r||_1 / ρ^r` satisfies `|vA|_* <= ρ |v|_*`
/// and `||v||_1 <= |v|_* <= K ||v||_1` with `K = max_{r<k} ||A^r|| / ρ^r`.
/// Hence `|A + B/i|_* <= ρ + K ||B|| / i` and the tail is dominated by a
/// geometric series once that ratio drops below 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailCertificate {
    rho: f64,
    equiv: f64,
    b_norm: f64,
}

impl TailCertificate {
    /// Builds a certificate valid for `|z| <= 1/limit_inv`, i.e. with
    /// `ρ < limit`, given an estimate `sp` of `sp(A)` below `limit`.
    pub fn new(a: &Matrix, b: &Matrix, sp: f64, limit: f64) -> Result<Self> {
        let b_norm = b.norm_inf();
        if a.is_zero() {
            return Ok(TailCertificate {
                rho: 0.0,
                equiv: 1.0,
                b_norm,
            });
        }
        for frac in [0.5, 0.75, 0.9] {
            let rho = sp + frac * (limit - sp);
            if let Some(equiv) = norm_equivalence(a, rho) {
                return Ok(TailCertificate { rho, equiv, b_norm });
            }
        }
        Err(Error::Divergence(format!(
            "spectral radius {sp:e} is too close to {limit} to certify the series tail"
        )))
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Contraction factor bound for the factors with index above `n`.
    pub fn ratio(&self, n: usize) -> f64 {
        self.rho + self.equiv * self.b_norm / (n + 1) as f64
    }

    /// Bound on `Σ_{j>n} |z|^j |x_j|` given `weight = |z|^n ||x_n||`.
    pub fn tail(&self, weight: f64, n: usize, z_abs: f64) -> f64 {
        if weight == 0.0 {
            return 0.0;
        }
        let s = z_abs * self.ratio(n);
        if s < 1.0 {
            self.equiv * weight * s / (1.0 - s)
        } else {
            f64::INFINITY
        }
    }
}

/// `max_{r<k} ||(A/ρ)^r||` for the first `k <= 4096` with `||(A/ρ)^k|| <= 1`.
fn norm_equivalence(a: &Matrix, rho: f64) -> Option<f64> {
    let y = a.scale(1.0 / rho);
    let mut power = Matrix::identity(a.rows());
    let mut equiv: f64 = 1.0;
    for _ in 0..4096 {
        power = power.matmul(&y);
        let n = power.norm_inf();
        if !n.is_finite() {
            return None;
        }
        if n <= 1.0 {
            return Some(equiv);
        }
        equiv = equiv.max(n);
    }
    None
}

/// The factor `A + B/i`, snapped to an exact zero when it cancels to
/// round-off (e.g. `B = -iA`).
pub(crate) fn factor(a: &Matrix, b: &Matrix, i: usize) -> Matrix {
    let inv = 1.0 / i as f64;
    let mut c = a.clone();
    c.add_scaled(b, inv);
    let scale = a.norm_inf() + b.norm_inf() * inv;
    if c.norm_inf() <= 16.0 * f64::EPSILON * scale {
        Matrix::zeros(a.rows(), a.cols())
    } else {
        c
    }
}

/// Iterates `x_n = x_{n-1} (A + B/n)` and flags exact termination. A step
/// that cancels down to round-off of its own inputs is snapped to zero.
struct RowWalk<'a> {
    a: &'a Matrix,
    b: &'a Matrix,
    x: Vec<f64>,
    n: usize,
    terminated: bool,
}

impl<'a> RowWalk<'a> {
    fn new(a: &'a Matrix, b: &'a Matrix, x0: Vec<f64>, n0: usize) -> Self {
        let terminated = x0.iter().all(|&v| v == 0.0);
        RowWalk {
            a,
            b,
            x: x0,
            n: n0,
            terminated,
        }
    }

    fn step(&mut self) {
        self.n += 1;
        if self.terminated {
            return;
        }
        let c = factor(self.a, self.b, self.n);
        let before = norm1(&self.x) * c.norm_inf();
        self.x = c.left_mul(&self.x);
        if before.is_finite() && norm1(&self.x) <= 16.0 * f64::EPSILON * before {
            self.x.iter_mut().for_each(|v| *v = 0.0);
        }
        self.terminated = self.x.iter().all(|&v| v == 0.0);
    }
}

/// Outcome of the convergence gate for a given `(A, B)`.
enum Gate {
    Contractive(TailCertificate),
    /// No certificate; the caller must find an exact zero.
    NeedsTermination { sp: f64, nonnegative: bool },
}

fn gate(a: &Matrix, b: &Matrix, z_abs: f64) -> Result<Gate> {
    let sp = linalg::spectral_radius(a, 1e-15)?;
    let scale = z_abs.max(1.0);
    if sp * scale <= 1.0 - SPECTRAL_MARGIN {
        let cert = TailCertificate::new(a, b, sp, 1.0 / scale)?;
        return Ok(Gate::Contractive(cert));
    }
    Ok(Gate::NeedsTermination {
        sp,
        nonnegative: a.is_nonnegative() && b.is_nonnegative(),
    })
}

fn divergence(sp: f64, nonnegative: bool, z_abs: f64, horizon: usize) -> Error {
    let at = if z_abs > 1.0 { format!(" at |z| = {z_abs}") } else { String::new() };
    if nonnegative {
        Error::Divergence(format!(
            "sp(A) = {sp} with nonnegative A and B{at}: the series diverges"
        ))
    } else {
        Error::Divergence(format!(
            "sp(A) = {sp} is not below 1 - {SPECTRAL_MARGIN:e}{at} and the recursion did not \
             terminate within {horizon} steps; convergence cannot be certified"
        ))
    }
}

/// Whether `(A, B)` passes the convergence gate for some starting vector
/// (termination checked on the full matrix product up to `horizon`).
pub fn check_convergence(a: &Matrix, b: &Matrix, horizon: usize) -> Result<()> {
    check_pair(a, b)?;
    match gate(a, b, 1.0)? {
        Gate::Contractive(_) => Ok(()),
        Gate::NeedsTermination { sp, nonnegative } => {
            let mut p = Matrix::identity(a.rows());
            for n in 1..=horizon {
                p = p.matmul(&factor(a, b, n));
                if p.is_zero() {
                    return Ok(());
                }
            }
            Err(divergence(sp, nonnegative, 1.0, horizon))
        }
    }
}

/// `P_0..P_{n_max}` by right multiplication.
pub fn pn_matrices(rep: &GenAB0Rep, n_max: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(Matrix::identity(rep.order()));
    for n in 1..=n_max {
        let next = out[n - 1].matmul(&factor(&rep.a, &rep.b, n));
        out.push(next);
    }
    out
}

/// Truncated density `p_0..p_{n_max}` with a certified tail bound.
pub fn density(rep: &GenAB0Rep, n_max: usize) -> Result<DiscreteDensity> {
    walk_density(&rep.a, &rep.b, rep.beta.clone(), 0, n_max, None)
}

/// Density truncated once the certified tail drops to `tol` (at most
/// `n_cap` terms).
pub fn density_to_tol(rep: &GenAB0Rep, tol: f64, n_cap: usize) -> Result<DiscreteDensity> {
    walk_density(&rep.a, &rep.b, rep.beta.clone(), 0, n_cap, Some(tol))
}

/// Density of an (a,b,1) representation: `p_0` given, then
/// `β₁ Π_{2<=i<=n} (A + B/i) 1`.
pub fn density_ab1(rep: &GenAB1Rep, n_max: usize) -> Result<DiscreteDensity> {
    if n_max == 0 {
        return Ok(DiscreteDensity::new(vec![rep.p0], norm1(&rep.beta1)));
    }
    let tail = walk_density(&rep.a, &rep.b, rep.beta1.clone(), 1, n_max - 1, None)?;
    let mut raw = Vec::with_capacity(n_max + 1);
    raw.push(rep.p0);
    raw.extend_from_slice(tail.raw());
    Ok(DiscreteDensity::new(raw, tail.tail_bound()))
}

/// Shared walker: `x_{n0} = x0`, values `x_{n0+k} 1` for `k = 0..=steps`.
fn walk_density(
    a: &Matrix,
    b: &Matrix,
    x0: Vec<f64>,
    n0: usize,
    steps: usize,
    stop_tol: Option<f64>,
) -> Result<DiscreteDensity> {
    let g = gate(a, b, 1.0)?;
    let mut walk = RowWalk::new(a, b, x0, n0);
    let mut raw = vec![walk.x.iter().sum::<f64>()];
    let tail_of = |walk: &RowWalk| match &g {
        _ if walk.terminated => 0.0,
        Gate::Contractive(cert) => cert.tail(norm1(&walk.x), walk.n, 1.0),
        Gate::NeedsTermination { .. } => f64::INFINITY,
    };
    for _ in 0..steps {
        if let Some(tol) = stop_tol {
            if tail_of(&walk) <= tol {
                break;
            }
        }
        walk.step();
        raw.push(walk.x.iter().sum());
    }
    if let Gate::NeedsTermination { sp, nonnegative } = g {
        if !walk.terminated {
            return Err(divergence(sp, nonnegative, 1.0, steps));
        }
    }
    let tail = tail_of(&walk);
    if walk.terminated {
        // drop the trailing exact zeros beyond the last nonzero term only
        // when truncating to a tolerance
        if stop_tol.is_some() {
            while raw.len() > 1 && raw[raw.len() - 1] == 0.0 {
                raw.pop();
            }
        }
    }
    Ok(DiscreteDensity::new(raw, tail))
}

/// Builds `D(γ P_0, A, B)` from the alternative form with an explicit
/// starting matrix.
pub fn from_start_matrix(gamma: &[f64], p0: &Matrix, a: Matrix, b: Matrix) -> Result<GenAB0Rep> {
    if !p0.is_square() || p0.rows() != gamma.len() {
        return Err(Error::dim("from_start_matrix: gamma and P0 shapes"));
    }
    GenAB0Rep::new(p0.left_mul(gamma), a, b)
}

/// Phase-type law `(α, T)` embedded as `D(α (I - T) T^{-1}, T, 0)`.
///
/// The resulting terms match the phase-type density for `n >= 1`; the
/// zero term `β 1` generally differs from `1 - α 1`.
pub fn ph_embedding(alpha: &[f64], t: &Matrix) -> Result<GenAB0Rep> {
    if !t.is_square() || t.rows() != alpha.len() {
        return Err(Error::dim("ph_embedding: alpha and T shapes"));
    }
    let m = t.rows();
    let exit = &Matrix::identity(m) - t;
    let beta = t.transpose().solve(&exit.left_mul(alpha))?;
    GenAB0Rep::new(beta, t.clone(), Matrix::zeros(m, m))
}

/// Indices of nodes reachable from the support of `β` in the graph with an
/// arc `i -> j` whenever `|A_ij| + |B_ij| != 0`.
pub fn useful_nodes(rep: &GenAB0Rep) -> Vec<usize> {
    let m = rep.order();
    let mut seen = vec![false; m];
    let mut queue: VecDeque<usize> = (0..m).filter(|&i| rep.beta[i] != 0.0).collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        for j in 0..m {
            if !seen[j] && (rep.a[(i, j)].abs() + rep.b[(i, j)].abs()) != 0.0 {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    (0..m).filter(|&i| seen[i]).collect()
}

/// Drops the useless nodes. Rows and columns of removed nodes never
/// contribute because `β P_n` stays supported on the reachable set.
pub fn reduce_useless(rep: &GenAB0Rep) -> GenAB0Rep {
    let keep = useful_nodes(rep);
    if keep.len() == rep.order() {
        return rep.clone();
    }
    let k = keep.len();
    let pick = |m: &Matrix| {
        let mut out = Matrix::zeros(k, k);
        for (r, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                out[(r, c)] = m[(i, j)];
            }
        }
        out
    };
    GenAB0Rep {
        beta: keep.iter().map(|&i| rep.beta[i]).collect(),
        a: pick(&rep.a),
        b: pick(&rep.b),
    }
}

/// Row vector `β P(z; A, B)` summed until the certified remainder is at
/// most `tol · max(1, ||sum||)`.
///
/// Accepted for any real `z` with `|z| sp(A) < 1`; the `|z| <= 1` range is
/// the usual one.
pub fn pgf_row(rep: &GenAB0Rep, z: f64, tol: f64) -> Result<Vec<f64>> {
    series_row(&rep.a, &rep.b, rep.beta.clone(), z, tol)
}

/// `β P(z; A, B) 1`.
pub fn pgf(rep: &GenAB0Rep, z: f64, tol: f64) -> Result<f64> {
    Ok(pgf_row(rep, z, tol)?.iter().sum())
}

fn check_series_args(z: f64, tol: f64) -> Result<()> {
    if !z.is_finite() {
        return Err(Error::invalid("z must be finite"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

fn series_row(a: &Matrix, b: &Matrix, x0: Vec<f64>, z: f64, tol: f64) -> Result<Vec<f64>> {
    check_series_args(z, tol)?;
    let z_abs = z.abs();
    let g = gate(a, b, z_abs)?;
    let mut walk = RowWalk::new(a, b, x0, 0);
    let mut sum = walk.x.clone();
    let mut zn: f64 = 1.0;
    let limit = match g {
        Gate::Contractive(_) => MAX_SERIES_TERMS,
        Gate::NeedsTermination { .. } => TERMINATION_HORIZON,
    };
    for _ in 0..limit {
        if walk.terminated {
            return Ok(sum);
        }
        if let Gate::Contractive(cert) = &g {
            if cert.tail(zn.abs() * norm1(&walk.x), walk.n, z_abs) <= tol * norm1(&sum).max(1.0) {
                return Ok(sum);
            }
        }
        walk.step();
        zn *= z;
        for (s, x) in sum.iter_mut().zip(&walk.x) {
            *s += zn * x;
        }
    }
    if walk.terminated {
        return Ok(sum);
    }
    match g {
        Gate::NeedsTermination { sp, nonnegative } => {
            Err(divergence(sp, nonnegative, z_abs, TERMINATION_HORIZON))
        }
        Gate::Contractive(_) => Err(Error::numerical(format!(
            "series did not reach tolerance {tol:e} within {MAX_SERIES_TERMS} terms"
        ))),
    }
}

/// The matrix `P(z; A, B) = Σ z^n P_n`, entrywise within
/// `tol · max(1, ||sum||)`.
pub fn pgf_matrix(a: &Matrix, b: &Matrix, z: f64, tol: f64) -> Result<Matrix> {
    check_pair(a, b)?;
    check_series_args(z, tol)?;
    let z_abs = z.abs();
    let g = gate(a, b, z_abs)?;
    let m = a.rows();
    let mut p = Matrix::identity(m);
    let mut sum = p.clone();
    let mut zn: f64 = 1.0;
    let limit = match g {
        Gate::Contractive(_) => MAX_SERIES_TERMS,
        Gate::NeedsTermination { .. } => TERMINATION_HORIZON,
    };
    for n in 0..limit {
        if p.is_zero() {
            return Ok(sum);
        }
        if let Gate::Contractive(cert) = &g {
            if cert.tail(zn.abs() * p.norm_inf(), n, z_abs) <= tol * sum.norm_inf().max(1.0) {
                return Ok(sum);
            }
        }
        let c = factor(a, b, n + 1);
        let before = p.norm_inf() * c.norm_inf();
        p = p.matmul(&c);
        if before.is_finite() && p.norm_inf() <= 16.0 * f64::EPSILON * before {
            p = Matrix::zeros(m, m);
        }
        zn *= z;
        sum.add_scaled(&p, zn);
    }
    if p.is_zero() {
        return Ok(sum);
    }
    match g {
        Gate::NeedsTermination { sp, nonnegative } => {
            Err(divergence(sp, nonnegative, z_abs, TERMINATION_HORIZON))
        }
        Gate::Contractive(_) => Err(Error::numerical(format!(
            "matrix series did not reach tolerance {tol:e} within {MAX_SERIES_TERMS} terms"
        ))),
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// The two evaluations of the factorial moment of order `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentForms {
    /// `β M_n 1` through the shifted series; available whenever the gate passes.
    pub product: f64,
    /// `n! u Π (A + B/i)(I - A)^{-1} 1` with `u = β P(1)`; only when
    /// `sp(A) < 1`.
    pub resolvent: Option<f64>,
    /// Magnitude the resolvent form's series error is amplified to.
    pub scale: f64,
}

pub fn factorial_moment_forms(rep: &GenAB0Rep, n: usize, tol: f64) -> Result<MomentForms> {
    let m = rep.order();
    let mut x = rep.beta.clone();
    for i in 1..=n {
        x = factor(&rep.a, &rep.b, i).left_mul(&x);
    }
    let nf = factorial(n);
    x.iter_mut().for_each(|v| *v *= nf);
    let mut shifted = rep.b.clone();
    shifted.add_scaled(&rep.a, n as f64);
    let product: f64 = series_row(&rep.a, &shifted, x, 1.0, tol)?.iter().sum();

    let sp = linalg::spectral_radius(&rep.a, 1e-15)?;
    if sp > 1.0 - SPECTRAL_MARGIN {
        return Ok(MomentForms {
            product,
            resolvent: None,
            scale: product.abs().max(1.0),
        });
    }
    let resolvent = (&Matrix::identity(m) - &rep.a).inverse()?;
    let u0 = pgf_row(rep, 1.0, tol)?;
    let mut u = u0.clone();
    for i in 1..=n {
        u = factor(&rep.a, &rep.b, i).left_mul(&u);
        u = resolvent.left_mul(&u);
    }
    let second = nf * u.iter().sum::<f64>();
    // both series are accurate to tol relative to their own magnitude;
    // the second one is then pushed through the resolvent products
    let amplification: f64 = (1..=n)
        .map(|i| factor(&rep.a, &rep.b, i).matmul(&resolvent).norm_inf())
        .product();
    Ok(MomentForms {
        product,
        resolvent: Some(second),
        scale: product.abs().max(1.0) + nf * norm1(&u0).max(1.0) * amplification,
    })
}

/// `n`th factorial moment `β M_n 1` with `M_n = n! P_n P(1; A, nA + B)`.
///
/// When `sp(A) < 1` the alternative form
/// `n! P(1; A, B) Π_{i<=n} (A + B/i)(I - A)^{-1}` is evaluated as well and the
/// two must agree within `10 · tol` relative to `max(1, |m_n|)`.
pub fn factorial_moment(rep: &GenAB0Rep, n: usize, tol: f64) -> Result<f64> {
    let forms = factorial_moment_forms(rep, n, tol)?;
    if let Some(second) = forms.resolvent {
        if (forms.product - second).abs() > 10.0 * tol * forms.scale {
            return Err(Error::Consistency {
                what: format!("factorial moment of order {n}: product form vs resolvent form"),
                first: forms.product,
                second,
            });
        }
    }
    Ok(forms.product)
}

/// Mean and variance from the first two factorial moments.
pub fn mean_variance(rep: &GenAB0Rep, tol: f64) -> Result<(f64, f64)> {
    let m1 = factorial_moment(rep, 1, tol)?;
    let m2 = factorial_moment(rep, 2, tol)?;
    Ok((m1, m2 + m1 - m1 * m1))
}
