//! EM estimation of `θ = (ν, α, P)` from observations of `N(1) | T > 1`.
//!
//! The M-step works with the rate matrix `B = νP`. When `Σ N_ij = Σ y`
//! (always true after an E-step) the complete-data log-likelihood depends
//! on `(ν, P)` only through `B`, and for fixed `B` the best `α` is
//! `α_i ∝ S_i / η_i` with `η = e^B 1`. What remains is
//!
//! ```text
//! F(B) = Σ N_ij log b_ij - Σ S_i log η_i(B)
//! ```
//!
//! maximized over `b_ij > 0` for the entries with `N_ij > 0` (the others are
//! optimal at zero). Newton ascent runs in `q = log b`, which keeps every
//! iterate strictly feasible. The output uses `ν = max_i (B 1)_i`, so
//! `P 1 <= 1` holds with equality in at least one row.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, ones, Matrix, DEFAULT_TOL};
use crate::phpoisson::PhysicalRep;
use crate::simulate::SampleData;

/// Tolerance on `α 1 = 1`.
const SIMPLEX_TOL: f64 = 1e-10;
/// Row sums within this distance of 1 count as stochastic.
const STOCHASTIC_TOL: f64 = 1e-9;
const NEWTON_MAX_ITER: usize = 200;
/// Step used for the finite-difference Hessian, in log coordinates.
const HESSIAN_STEP: f64 = 1e-5;
/// Largest change of any `log b_ij` in one Newton step.
const MAX_LOG_STEP: f64 = 4.0;
const ARMIJO: f64 = 1e-4;

pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL_EM: f64 = 1e-8;
/// Gradient tolerance of the M-step, per observation.
pub const DEFAULT_MSTEP_TOL: f64 = 1e-10;

/// Feasible EM parameters: a physical representation with `α 1 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EMParams {
    phys: PhysicalRep,
}

impl EMParams {
    pub fn new(nu: f64, alpha: Vec<f64>, p: Matrix) -> Result<Self> {
        Self::from_physical(PhysicalRep::new(nu, alpha, p)?)
    }

    pub fn from_physical(phys: PhysicalRep) -> Result<Self> {
        let total: f64 = phys.alpha().iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("alpha must sum to 1, got {total}")));
        }
        Ok(EMParams { phys })
    }

    pub fn nu(&self) -> f64 {
        self.phys.nu()
    }

    pub fn alpha(&self) -> &[f64] {
        self.phys.alpha()
    }

    pub fn p(&self) -> &Matrix {
        self.phys.p()
    }

    pub fn order(&self) -> usize {
        self.phys.order()
    }

    pub fn physical(&self) -> &PhysicalRep {
        &self.phys
    }

    pub fn into_physical(self) -> PhysicalRep {
        self.phys
    }

    /// `B = νP`.
    pub fn rates(&self) -> Matrix {
        self.p().scale(self.nu())
    }

    /// Every row of `P` sums to 1 (the law is then Poisson(ν)).
    pub fn is_stochastic(&self) -> bool {
        self.p()
            .row_sums()
            .iter()
            .all(|s| (s - 1.0).abs() <= STOCHASTIC_TOL)
    }
}

/// Expected initial-phase counts `S` and jump counts `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    s: Vec<f64>,
    n: Matrix,
}

impl SufficientStats {
    pub fn new(s: Vec<f64>, n: Matrix) -> Result<Self> {
        if !n.is_square() || n.rows() != s.len() {
            return Err(Error::dim(format!(
                "S has length {} and N is {}x{}",
                s.len(),
                n.rows(),
                n.cols()
            )));
        }
        if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !n.is_nonnegative() {
            return Err(Error::invalid("sufficient statistics must be finite and nonnegative"));
        }
        Ok(SufficientStats { s, n })
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn jumps(&self) -> &Matrix {
        &self.n
    }

    pub fn order(&self) -> usize {
        self.s.len()
    }

    /// `Σ S_i`, the sample size after an E-step.
    pub fn sample_size(&self) -> f64 {
        self.s.iter().sum()
    }

    /// `Σ N_ij`, the total of the observations after an E-step.
    pub fn total_jumps(&self) -> f64 {
        self.n.as_slice().iter().sum()
    }
}

/// A log-likelihood value; zero-probability configurations are flagged
/// rather than carried as an infinite float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogLik {
    Finite(f64),
    NegInfinity,
}

impl LogLik {
    pub fn value(self) -> f64 {
        match self {
            LogLik::Finite(v) => v,
            LogLik::NegInfinity => f64::NEG_INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, LogLik::Finite(_))
    }
}

/// `log y!` for `y = 0..=y_max`.
fn log_factorials(y_max: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(y_max as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=y_max {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// `log(α e^{νP} 1)`, shifted so the exponential cannot overflow.
fn log_normalizer(theta: &EMParams) -> Result<f64> {
    let m = theta.order();
    let r = theta.p().row_sums().into_iter().fold(0.0f64, f64::max);
    let mut shifted = theta.p().clone();
    for i in 0..m {
        shifted[(i, i)] -= r;
    }
    let v = linalg::matexp_action(&shifted.scale(theta.nu()), &ones(m), DEFAULT_TOL)?;
    Ok(theta.nu() * r + linalg::dot(theta.alpha(), &v).ln())
}

/// Max-normalized vectors with their accumulated log scales.
struct ScaledPowers {
    vecs: Vec<Vec<f64>>,
    log_scale: Vec<f64>,
}

impl ScaledPowers {
    /// `x P^t` (left) or `P^t x` (right) for `t = 0..=t_max`.
    fn new(p: &Matrix, start: &[f64], t_max: usize, left: bool) -> Self {
        let mut vecs = vec![start.to_vec()];
        let mut log_scale = vec![0.0];
        for t in 0..t_max {
            let next = if left { p.left_mul(&vecs[t]) } else { p.mul_vec(&vecs[t]) };
            let s = next.iter().fold(0.0f64, |a, &b| a.max(b));
            if s > 0.0 {
                log_scale.push(log_scale[t] + s.ln());
                vecs.push(next.into_iter().map(|x| x / s).collect());
            } else {
                log_scale.push(f64::NEG_INFINITY);
                vecs.push(next);
            }
        }
        ScaledPowers { vecs, log_scale }
    }
}

/// `Σ_k log p(y_k)` under the conditional law of `θ`; `-∞` when some
/// observation is impossible.
pub fn loglik_observed(theta: &EMParams, y: &SampleData) -> Result<f64> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let hist = y.histogram();
    let y_max = y.max();
    let fwd = ScaledPowers::new(theta.p(), theta.alpha(), y_max as usize, true);
    let lf = log_factorials(y_max);
    let log_z = log_normalizer(theta)?;
    let ln_nu = theta.nu().ln();
    let mut total = 0.0;
    for (v, count) in hist {
        let t = v as usize;
        let mass: f64 = fwd.vecs[t].iter().sum();
        if !(mass > 0.0) || !fwd.log_scale[t].is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        total += count as f64 * (mass.ln() + fwd.log_scale[t] + v as f64 * ln_nu - lf[t] - log_z);
    }
    Ok(total)
}

/// Complete-data log-likelihood with `S`, `N` standing in for the latent
/// counts, using `0 log 0 = 0`.
pub fn loglik_complete(theta: &EMParams, y: &SampleData, stats: &SufficientStats) -> Result<LogLik> {
    let m = theta.order();
    if stats.order() != m {
        return Err(Error::dim(format!("statistics of order {} for a model of order {m}", stats.order())));
    }
    let n = y.len() as f64;
    let lf = log_factorials(y.max());
    let sum_log_fact: f64 = y.observations().iter().map(|&v| lf[v as usize]).sum();
    let mut value = -n * log_normalizer(theta)? + y.total() as f64 * theta.nu().ln() - sum_log_fact;
    for (s, a) in stats.s().iter().zip(theta.alpha()) {
        match (*s > 0.0, *a > 0.0) {
            (true, true) => value += s * a.ln(),
            (true, false) => return Ok(LogLik::NegInfinity),
            _ => {}
        }
    }
    for (nij, pij) in stats.jumps().as_slice().iter().zip(theta.p().as_slice()) {
        match (*nij > 0.0, *pij > 0.0) {
            (true, true) => value += nij * pij.ln(),
            (true, false) => return Ok(LogLik::NegInfinity),
            _ => {}
        }
    }
    Ok(LogLik::Finite(value))
}

/// Expected `S` and `N` given the observations, grouped by distinct value.
pub fn e_step(theta: &EMParams, y: &SampleData) -> Result<SufficientStats> {
    let m = theta.order();
    let p = theta.p();
    let hist = y.histogram();
    let y_max = y.max() as usize;
    let fwd = ScaledPowers::new(p, theta.alpha(), y_max, true);
    let bwd = ScaledPowers::new(p, &ones(m), y_max, false);
    let parts: Vec<Result<(Vec<f64>, Matrix)>> = hist
        .par_iter()
        .map(|&(v, count)| {
            let c = count as f64;
            let t_obs = v as usize;
            let h = &bwd.vecs[t_obs];
            let denom = linalg::dot(theta.alpha(), h);
            if !(denom > 0.0) {
                return Err(Error::ImpossibleObservation { value: v });
            }
            let s: Vec<f64> = (0..m).map(|i| c * theta.alpha()[i] * h[i] / denom).collect();
            let mut n = Matrix::zeros(m, m);
            for t in 1..=t_obs {
                let f = &fwd.vecs[t - 1];
                let b = &bwd.vecs[t_obs - t];
                let pb = p.mul_vec(b);
                let z = linalg::dot(f, &pb);
                if !(z > 0.0) {
                    return Err(Error::ImpossibleObservation { value: v });
                }
                for i in 0..m {
                    if f[i] == 0.0 {
                        continue;
                    }
                    let fi = c * f[i] / z;
                    for j in 0..m {
                        n[(i, j)] += fi * p[(i, j)] * b[j];
                    }
                }
            }
            Ok((s, n))
        })
        .collect();
    let mut s = vec![0.0; m];
    let mut n = Matrix::zeros(m, m);
    for part in parts {
        let (ps, pn) = part?;
        s.iter_mut().zip(ps).for_each(|(a, b)| *a += b);
        n.add_scaled(&pn, 1.0);
    }
    SufficientStats::new(s, n)
}

/// How the M-step ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MStepStatus {
    Converged,
    /// No ascent step was found; the best feasible iterate is returned.
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutcome {
    pub theta: EMParams,
    pub status: MStepStatus,
    pub iterations: usize,
    /// Largest `|∂F/∂ log b_ij|` at the returned point.
    pub gradient_norm: f64,
}

/// The profiled objective over the active entries.
struct Profile<'a> {
    s: &'a [f64],
    n: &'a Matrix,
    active: Vec<(usize, usize)>,
    m: usize,
}

impl Profile<'_> {
    fn rates(&self, q: &[f64]) -> Matrix {
        let mut b = Matrix::zeros(self.m, self.m);
        for (&(i, j), &qk) in self.active.iter().zip(q) {
            b[(i, j)] = qk.exp();
        }
        b
    }

    fn eta(&self, b: &Matrix) -> Result<Vec<f64>> {
        linalg::matexp_action(b, &ones(self.m), DEFAULT_TOL)
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let b = self.rates(q);
        let eta = self.eta(&b)?;
        let jumps: f64 = self.active.iter().zip(q).map(|(&(i, j), qk)| self.n[(i, j)] * qk).sum();
        let norm: f64 = self
            .s
            .iter()
            .zip(&eta)
            .filter(|(s, _)| **s > 0.0)
            .map(|(s, e)| s * e.ln())
            .sum();
        Ok(jumps - norm)
    }

    /// `G_ij = ∫_0^1 (w e^{(1-u)B})_i (e^{uB} 1)_j du` with `w_i = S_i/η_i`,
    /// so that `∂/∂b_ij Σ S_i log η_i = G_ij`.
    fn coupling(&self, b: &Matrix, eta: &[f64]) -> Result<Matrix> {
        let mut c = Matrix::zeros(self.m, self.m);
        for i in 0..self.m {
            let w = self.s[i] / eta[i];
            for j in 0..self.m {
                c[(i, j)] = w;
            }
        }
        linalg::augmented_integral(&b.transpose(), &c, 1.0)
    }

    fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let b = self.rates(q);
        let eta = self.eta(&b)?;
        let g = self.coupling(&b, &eta)?;
        Ok(self
            .active
            .iter()
            .map(|&(i, j)| self.n[(i, j)] - b[(i, j)] * g[(i, j)])
            .collect())
    }

    fn hessian(&self, q: &[f64]) -> Result<Matrix> {
        let k = q.len();
        let mut h = Matrix::zeros(k, k);
        let mut x = q.to_vec();
        for c in 0..k {
            x[c] = q[c] + HESSIAN_STEP;
            let gp = self.gradient(&x)?;
            x[c] = q[c] - HESSIAN_STEP;
            let gm = self.gradient(&x)?;
            x[c] = q[c];
            for r in 0..k {
                h[(r, c)] = (gp[r] - gm[r]) / (2.0 * HESSIAN_STEP);
            }
        }
        Ok((&h + &h.transpose()).scale(0.5))
    }
}

/// Cholesky solve of `A x = g`; `None` when `A` is not positive definite.
fn cholesky_solve(a: &Matrix, g: &[f64]) -> Option<Vec<f64>> {
    let k = g.len();
    let mut l = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for t in 0..j {
                s -= l[(i, t)] * l[(j, t)];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    let mut z = g.to_vec();
    for i in 0..k {
        for t in 0..i {
            z[i] -= l[(i, t)] * z[t];
        }
        z[i] /= l[(i, i)];
    }
    for i in (0..k).rev() {
        for t in i + 1..k {
            z[i] -= l[(t, i)] * z[t];
        }
        z[i] /= l[(i, i)];
    }
    Some(z)
}

/// Damped Newton direction for maximizing with gradient `g`, Hessian `h`.
fn ascent_direction(h: &Matrix, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let neg = h.scale(-1.0);
    let scale = (0..k).map(|i| neg[(i, i)].abs()).fold(1e-12f64, f64::max);
    let mut lambda = 0.0;
    loop {
        let mut a = neg.clone();
        for i in 0..k {
            a[(i, i)] += lambda;
        }
        if let Some(d) = cholesky_solve(&a, g) {
            return d;
        }
        lambda = if lambda == 0.0 { 1e-10 * scale } else { lambda * 10.0 };
        if lambda > 1e12 * scale {
            // plain gradient direction
            return g.iter().map(|x| x / scale).collect();
        }
    }
}

/// Maximizes the complete-data log-likelihood with `S`, `N` fixed.
///
/// `tol` bounds the final gradient in log coordinates, per observation.
/// The result never has a lower complete-data log-likelihood than
/// `theta_init` (up to round-off).
pub fn m_step(stats: &SufficientStats, y: &SampleData, theta_init: &EMParams, tol: f64) -> Result<MStepOutcome> {
    let m = theta_init.order();
    if stats.order() != m {
        return Err(Error::dim(format!("statistics of order {} for a model of order {m}", stats.order())));
    }
    let n_obs = y.len() as f64;
    let total = y.total() as f64;
    if (stats.total_jumps() - total).abs() > 1e-9 * total.max(1.0) {
        return Err(Error::invalid(format!(
            "expected jump count {} does not match the observation total {total}",
            stats.total_jumps()
        )));
    }
    let active: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| stats.jumps()[(i, j)] > 0.0)
        .collect();
    let profile = Profile {
        s: stats.s(),
        n: stats.jumps(),
        active,
        m,
    };
    let b0 = theta_init.rates();
    let fallback = (total / (n_obs.max(1.0) * m as f64)).max(1e-3);
    let mut q: Vec<f64> = profile
        .active
        .iter()
        .map(|&(i, j)| if b0[(i, j)] > 0.0 { b0[(i, j)].ln() } else { fallback.ln() })
        .collect();
    let g_tol = tol * n_obs.max(1.0);
    let mut status = MStepStatus::MaxIterations;
    let mut iterations = 0;
    let mut grad_norm = 0.0;
    if !q.is_empty() {
        let mut f = profile.value(&q)?;
        for it in 0..NEWTON_MAX_ITER {
            iterations = it;
            let g = profile.gradient(&q)?;
            grad_norm = g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if grad_norm <= g_tol {
                status = MStepStatus::Converged;
                break;
            }
            let h = profile.hessian(&q)?;
            let mut d = ascent_direction(&h, &g);
            let big = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if big > MAX_LOG_STEP {
                d.iter_mut().for_each(|x| *x *= MAX_LOG_STEP / big);
            }
            let slope = linalg::dot(&g, &d);
            let mut step = 1.0;
            let mut accepted = None;
            while step > 1e-12 {
                let trial: Vec<f64> = q.iter().zip(&d).map(|(a, b)| a + step * b).collect();
                let ft = profile.value(&trial)?;
                if ft >= f + ARMIJO * step * slope {
                    accepted = Some((trial, ft));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((trial, ft)) => {
                    q = trial;
                    f = ft;
                }
                None => {
                    status = MStepStatus::LineSearchFailed;
                    break;
                }
            }
        }
    } else {
        status = MStepStatus::Converged;
    }

    let b = profile.rates(&q);
    let eta = profile.eta(&b)?;
    let weights: Vec<f64> = stats.s().iter().zip(&eta).map(|(s, e)| s / e).collect();
    let wsum: f64 = weights.iter().sum();
    let alpha: Vec<f64> = if wsum > 0.0 {
        weights.iter().map(|w| w / wsum).collect()
    } else {
        theta_init.alpha().to_vec()
    };
    let nu = b.row_sums().into_iter().fold(0.0f64, f64::max);
    let (nu, p) = if nu > 0.0 {
        let mut p = b.scale(1.0 / nu);
        for i in 0..m {
            let s: f64 = p.row(i).iter().sum();
            if s > 1.0 {
                for j in 0..m {
                    p[(i, j)] /= s;
                }
            }
        }
        (nu, p)
    } else {
        (theta_init.nu(), Matrix::zeros(m, m))
    };
    Ok(MStepOutcome {
        theta: EMParams::new(nu, alpha, p)?,
        status,
        iterations,
        gradient_norm: grad_norm,
    })
}

/// One EM iteration, or the starting point when `iter == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EMRecord {
    pub iter: usize,
    pub theta: EMParams,
    pub loglik: f64,
    /// `Σ S_i` and `Σ N_ij` of the E-step that produced `theta`.
    pub stats_sums: Option<(f64, f64)>,
    pub m_step: Option<MStepStatus>,
    pub stochastic: bool,
    /// The iterate came from an accepted SQUAREM extrapolation.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EMTrace {
    pub records: Vec<EMRecord>,
    /// Stopped on the likelihood-gain rule rather than `max_iter`.
    pub converged: bool,
}

impl EMTrace {
    pub fn final_theta(&self) -> &EMParams {
        &self.records.last().expect("trace always holds the start").theta
    }

    pub fn logliks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loglik).collect()
    }

    /// Largest decrease of the observed log-likelihood between iterations.
    pub fn max_decrease(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[0].loglik - w[1].loglik)
            .fold(0.0f64, f64::max)
    }

    /// Nondecreasing up to `slack` relative to the likelihood magnitude.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].loglik >= w[0].loglik - slack * w[0].loglik.abs().max(1.0))
    }
}

/// How [`fit_with`] moves between iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acceleration {
    /// One E-step and one M-step per iteration.
    None,
    /// Squared extrapolation (SQUAREM) in log coordinates: two EM steps, an
    /// extrapolated point, and one EM step from there. The plain two-step
    /// point is kept whenever it has the higher likelihood.
    Squarem,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop once the relative gain of the observed log-likelihood is below.
    pub tol: f64,
    pub acceleration: Acceleration,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL_EM,
            acceleration: Acceleration::Squarem,
        }
    }
}

/// Largest extrapolation factor tried by SQUAREM.
const MAX_EXTRAPOLATION: f64 = 256.0;

struct Step {
    theta: EMParams,
    loglik: f64,
    stats: SufficientStats,
    status: MStepStatus,
    extrapolated: bool,
}

fn em_map(theta: &EMParams, y: &SampleData) -> Result<(EMParams, SufficientStats, MStepStatus)> {
    let stats = e_step(theta, y)?;
    let out = m_step(&stats, y, theta, DEFAULT_MSTEP_TOL)?;
    Ok((out.theta, stats, out.status))
}

/// `(log α, log B)`; zero entries map to `-∞`.
fn coords(theta: &EMParams) -> Vec<f64> {
    theta
        .alpha()
        .iter()
        .chain(theta.rates().as_slice())
        .map(|x| x.ln())
        .collect()
}

fn from_coords(x: &[f64], m: usize, nu_fallback: f64) -> Result<EMParams> {
    let raw: Vec<f64> = x[..m].iter().map(|v| v.exp()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::numerical("extrapolated alpha is degenerate"));
    }
    let b = Matrix::from_vec(m, m, x[m..].iter().map(|v| v.exp()).collect())?;
    if b.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("extrapolated rates overflow"));
    }
    let nu = b.row_sums().into_iter().fold(0.0f64, f64::max);
    let (nu, p) = if nu > 0.0 {
        let mut p = b.scale(1.0 / nu);
        for i in 0..m {
            let s: f64 = p.row(i).iter().sum();
            if s > 1.0 {
                for j in 0..m {
                    p[(i, j)] /= s;
                }
            }
        }
        (nu, p)
    } else {
        (nu_fallback, Matrix::zeros(m, m))
    };
    EMParams::new(nu, raw.iter().map(|v| v / total).collect(), p)
}

fn plain_step(theta: &EMParams, y: &SampleData) -> Result<Step> {
    let (theta, stats, status) = em_map(theta, y)?;
    let loglik = loglik_observed(&theta, y)?;
    Ok(Step {
        theta,
        loglik,
        stats,
        status,
        extrapolated: false,
    })
}

fn squarem_step(theta0: &EMParams, y: &SampleData) -> Result<Step> {
    let (theta1, _, _) = em_map(theta0, y)?;
    let plain = plain_step(&theta1, y)?;
    let (x0, x1, x2) = (coords(theta0), coords(&theta1), coords(&plain.theta));
    let finite = |k: usize| x0[k].is_finite() && x1[k].is_finite() && x2[k].is_finite();
    let (mut rr, mut vv) = (0.0, 0.0);
    for k in (0..x0.len()).filter(|&k| finite(k)) {
        let r = x1[k] - x0[k];
        let v = x2[k] - 2.0 * x1[k] + x0[k];
        rr += r * r;
        vv += v * v;
    }
    if !(rr > 0.0 && vv > 0.0) {
        return Ok(plain);
    }
    let a = (-(rr / vv).sqrt()).clamp(-MAX_EXTRAPOLATION, -1.0);
    if a == -1.0 {
        return Ok(plain);
    }
    let xp: Vec<f64> = (0..x0.len())
        .map(|k| {
            if finite(k) {
                let r = x1[k] - x0[k];
                let v = x2[k] - 2.0 * x1[k] + x0[k];
                x0[k] - 2.0 * a * r + a * a * v
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let m = theta0.order();
    // any failure on the extrapolated branch falls back to the plain step
    let trial = from_coords(&xp, m, theta0.nu()).and_then(|t| plain_step(&t, y));
    match trial {
        Ok(step) if step.loglik > plain.loglik => Ok(Step {
            extrapolated: true,
            ..step
        }),
        _ => Ok(plain),
    }
}

/// [`fit_with`] using SQUAREM acceleration.
pub fn fit(y: &SampleData, theta0: &EMParams, max_iter: usize, tol: f64) -> Result<EMTrace> {
    fit_with(
        y,
        theta0,
        &FitOptions {
            max_iter,
            tol,
            acceleration: Acceleration::Squarem,
        },
    )
}

/// Alternates E- and M-steps until the relative gain of the observed
/// log-likelihood drops below `tol` or `max_iter` iterations are done.
pub fn fit_with(y: &SampleData, theta0: &EMParams, opts: &FitOptions) -> Result<EMTrace> {
    if y.is_empty() {
        return Err(Error::invalid("cannot fit an empty sample"));
    }
    let mut theta = theta0.clone();
    let mut ll = loglik_observed(&theta, y)?;
    if !ll.is_finite() {
        return Err(Error::invalid("the starting point gives probability zero to the sample"));
    }
    let mut records = vec![EMRecord {
        iter: 0,
        theta: theta.clone(),
        loglik: ll,
        stats_sums: None,
        m_step: None,
        stochastic: theta.is_stochastic(),
        extrapolated: false,
    }];
    let mut converged = false;
    for iter in 1..=opts.max_iter {
        let step = match opts.acceleration {
            Acceleration::None => plain_step(&theta, y)?,
            Acceleration::Squarem => squarem_step(&theta, y)?,
        };
        records.push(EMRecord {
            iter,
            theta: step.theta.clone(),
            loglik: step.loglik,
            stats_sums: Some((step.stats.sample_size(), step.stats.total_jumps())),
            m_step: Some(step.status),
            stochastic: step.theta.is_stochastic(),
            extrapolated: step.extrapolated,
        });
        let gain = (step.loglik - ll) / ll.abs().max(1.0);
        theta = step.theta;
        ll = step.loglik;
        if gain < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(EMTrace { records, converged })
}

/// Stationarity residuals of the constrained maximum-likelihood problem.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `α e^{νP}(νP1 - ȳ1) / (α e^{νP} 1)`.
    pub r_nu: f64,
    /// `max_i |α_i - (S_i/η_i) / Σ_j (S_j/η_j)|`.
    pub r_alpha: f64,
    /// `n α X_ij 1 / (α e^{νP} 1) - N_ij/p_ij` with
    /// `X_ij = ∫_0^ν e^{(ν-u)P} e_i e_j^T e^{uP} du`; `None` where `p_ij = 0`.
    pub r_p: Vec<Vec<Option<f64>>>,
    /// For stochastic `P`: `ν p_ij α ∫_0^1 e^{ν(P-I)x} dx e_i - N_ij/n`,
    /// which vanishes at an optimum.
    pub stochastic_equality: Option<Matrix>,
}

impl KktReport {
    /// Largest `|R_P|` over the active entries.
    pub fn max_r_p(&self) -> f64 {
        self.r_p
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |a, x| a.max(x.abs()))
    }

    /// Largest residual magnitude of any kind.
    pub fn max_abs(&self) -> f64 {
        let eq = self.stochastic_equality.as_ref().map_or(0.0, |e| e.max_abs());
        self.r_nu.abs().max(self.r_alpha).max(self.max_r_p()).max(eq)
    }
}

pub fn kkt_residuals(theta: &EMParams, y: &SampleData, stats: &SufficientStats) -> Result<KktReport> {
    let m = theta.order();
    if stats.order() != m {
        return Err(Error::dim(format!("statistics of order {} for a model of order {m}", stats.order())));
    }
    if y.is_empty() {
        return Err(Error::invalid("KKT residuals need a nonempty sample"));
    }
    let nu = theta.nu();
    let p = theta.p();
    let alpha = theta.alpha();
    let n = y.len() as f64;
    let y_bar = y.mean();
    // work with e^{ν(P - rI)} to keep magnitudes bounded; the shift cancels
    let r = p.row_sums().into_iter().fold(0.0f64, f64::max);
    let mut shifted = p.clone();
    for i in 0..m {
        shifted[(i, i)] -= r;
    }
    let e = linalg::matexp(&shifted.scale(nu), DEFAULT_TOL)?;
    let eta = e.mul_vec(&ones(m));
    let z = linalg::dot(alpha, &eta);
    let drift: Vec<f64> = p.mul_vec(&ones(m)).iter().map(|x| nu * x - y_bar).collect();
    let r_nu = linalg::dot(&e.left_mul(alpha), &drift) / z;

    let weights: Vec<f64> = stats.s().iter().zip(&eta).map(|(s, h)| s / h).collect();
    let wsum: f64 = weights.iter().sum();
    let r_alpha = if wsum > 0.0 {
        alpha
            .iter()
            .zip(&weights)
            .fold(0.0f64, |a, (al, w)| a.max((al - w / wsum).abs()))
    } else {
        0.0
    };

    let mut r_p = vec![vec![None; m]; m];
    for i in 0..m {
        for j in 0..m {
            if p[(i, j)] > 0.0 {
                let x = linalg::block_exp_integral(&shifted, nu, i, j)?;
                let lhs = n * linalg::dot(&x.left_mul(alpha), &ones(m)) / z;
                r_p[i][j] = Some(lhs - stats.jumps()[(i, j)] / p[(i, j)]);
            }
        }
    }

    let stochastic_equality = if theta.is_stochastic() {
        // ∫_0^1 e^{Xx} dx is the upper-right block of exp([[X, I], [0, 0]])
        let mut big = Matrix::zeros(2 * m, 2 * m);
        let mut x = p.scale(nu);
        for i in 0..m {
            x[(i, i)] -= nu;
        }
        big.set_block(0, 0, &x);
        big.set_block(0, m, &Matrix::identity(m));
        let integral = linalg::matexp(&big, DEFAULT_TOL)?.block(0, m, m, m);
        let occupation = integral.left_mul(alpha);
        let mut eq = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                eq[(i, j)] = nu * p[(i, j)] * occupation[i] - stats.jumps()[(i, j)] / n;
            }
        }
        Some(eq)
    } else {
        None
    };
    Ok(KktReport {
        r_nu,
        r_alpha,
        r_p,
        stochastic_equality,
    })
}

/// Mixture-of-Poissons start: uniform `α` and diagonal `P` whose rates sit
/// at evenly spaced sample quantiles.
pub fn default_start(y: &SampleData, order: usize) -> Result<EMParams> {
    if order == 0 {
        return Err(Error::invalid("order must be at least 1"));
    }
    if y.is_empty() {
        return Err(Error::invalid("cannot choose a start from an empty sample"));
    }
    let mut sorted = y.observations().to_vec();
    sorted.sort_unstable();
    let rates: Vec<f64> = (0..order)
        .map(|i| {
            let pos = ((i as f64 + 0.5) / order as f64 * sorted.len() as f64) as usize;
            let q = sorted[pos.min(sorted.len() - 1)] as f64;
            // distinct rates, otherwise the phases stay exchangeable forever
            q.max(0.5) * (1.0 + 0.01 * i as f64)
        })
        .collect();
    let nu = rates.iter().cloned().fold(0.0f64, f64::max);
    let p = Matrix::from_diag(&rates.iter().map(|r| r / nu).collect::<Vec<_>>());
    EMParams::new(nu, vec![1.0 / order as f64; order], p)
}
