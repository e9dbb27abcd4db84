//! Densities of random sums `S = X_1 + ... + X_N`.
//!
//! Severities live on the positive integers (`f_0 = 0`); the recursions
//! below are exact only in that setting.

use crate::error::{Error, Result};
use crate::genab0::{self, DiscreteDensity, GenAB0Rep, TERMINATION_HORIZON};
use crate::linalg::norm1;

const MASS_SLACK: f64 = 1e-12;

/// Severity law `f_0..f_M` with `f_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeverityDensity {
    f: Vec<f64>,
}

impl SeverityDensity {
    pub fn new(f: Vec<f64>) -> Result<Self> {
        if f.is_empty() {
            return Err(Error::invalid("empty severity density"));
        }
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("severity probabilities must be finite and nonnegative"));
        }
        if f[0] != 0.0 {
            return Err(Error::invalid(format!(
                "severity must have positive integer support (f_0 = 0), got f_0 = {}",
                f[0]
            )));
        }
        let total: f64 = f.iter().sum();
        if total > 1.0 + MASS_SLACK {
            return Err(Error::invalid(format!("severity mass {total} exceeds 1")));
        }
        let mut f = f;
        while f.len() > 1 && f[f.len() - 1] == 0.0 {
            f.pop();
        }
        Ok(SeverityDensity { f })
    }

    pub fn probs(&self) -> &[f64] {
        &self.f
    }

    /// Largest index with positive mass (0 for the null severity).
    pub fn max_support(&self) -> usize {
        self.f.len() - 1
    }

    pub fn get(&self, i: usize) -> f64 {
        self.f.get(i).copied().unwrap_or(0.0)
    }

    pub fn mass(&self) -> f64 {
        self.f.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.f.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let second: f64 = self.f.iter().enumerate().map(|(i, p)| (i * i) as f64 * p).sum();
        second - mu * mu
    }
}

/// Classical frequency law `p_n = p_{n-1} (a + b/n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanjerScalarParams {
    a: f64,
    b: f64,
    p0: f64,
}

impl PanjerScalarParams {
    /// Checks that the induced sequence is nonnegative and summable
    /// (`a < 1`, or termination within the scan horizon).
    pub fn new(a: f64, b: f64, p0: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::invalid("a and b must be finite"));
        }
        if !(0.0..=1.0).contains(&p0) {
            return Err(Error::invalid(format!("p0 must lie in [0, 1], got {p0}")));
        }
        let params = PanjerScalarParams { a, b, p0 };
        let mut p = p0;
        for n in 1..=TERMINATION_HORIZON {
            p *= params.ratio(n);
            if p < -MASS_SLACK * p0 {
                return Err(Error::invalid(format!(
                    "(a, b) = ({a}, {b}) gives a negative probability at n = {n}"
                )));
            }
            if p <= 0.0 {
                return Ok(params);
            }
        }
        if a.abs() >= 1.0 {
            return Err(Error::Divergence(format!(
                "(a, b) = ({a}, {b}) does not give a summable sequence"
            )));
        }
        Ok(params)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    fn ratio(&self, n: usize) -> f64 {
        self.a + self.b / n as f64
    }

    /// `p_0..p_{n_max}` of the frequency law.
    pub fn frequency(&self, n_max: usize) -> DiscreteDensity {
        let mut raw = Vec::with_capacity(n_max + 1);
        let mut p = self.p0;
        raw.push(p);
        for n in 1..=n_max {
            p = (p * self.ratio(n)).max(0.0);
            raw.push(p);
        }
        DiscreteDensity::new(raw, self.tail_after(n_max))
    }

    /// Bound on `Σ_{k>n} p_k`.
    fn tail_after(&self, n: usize) -> f64 {
        let mut p = self.p0;
        for k in 1..=n {
            p = (p * self.ratio(k)).max(0.0);
        }
        let mut sum = 0.0;
        let mut k = n;
        loop {
            if p == 0.0 {
                return sum;
            }
            let r = self.a.abs() + self.b.abs() / (k + 1) as f64;
            if r < 1.0 {
                let rest = p * r / (1.0 - r);
                if rest <= f64::EPSILON * sum.max(f64::MIN_POSITIVE) || k > n + 1_000_000 {
                    return sum + rest;
                }
            }
            k += 1;
            p = (p * self.ratio(k)).max(0.0);
            sum += p;
        }
    }
}

/// `g_0 = p_0`, `g_n = Σ_{1<=i<=n} f_i g_{n-i} (a + ib/n)`.
///
/// The tail bound uses `S <= M N` for severities supported on `1..=M`.
pub fn panjer_scalar(
    params: &PanjerScalarParams,
    f: &SeverityDensity,
    n_max: usize,
) -> DiscreteDensity {
    let mut g = Vec::with_capacity(n_max + 1);
    g.push(params.p0);
    for n in 1..=n_max {
        let top = n.min(f.max_support());
        let nf = n as f64;
        let s: f64 = (1..=top)
            .map(|i| f.get(i) * g[n - i] * (params.a + i as f64 * params.b / nf))
            .sum();
        g.push(s);
    }
    let tail = match n_max.checked_div(f.max_support()) {
        Some(k) => params.tail_after(k),
        None => 0.0,
    };
    DiscreteDensity::new(g, tail)
}

/// Vector recursion for a generalized (a,b,0) frequency:
/// `h_0 = β`, `h_n = Σ_{1<=i<=n} f_i h_{n-i} (A + (i/n) B)`, `g_n = h_n 1`.
pub fn panjer_vector(rep: &GenAB0Rep, f: &SeverityDensity, n_max: usize) -> Result<DiscreteDensity> {
    genab0::check_convergence(rep.a(), rep.b(), TERMINATION_HORIZON)?;
    if f.probs() == [0.0, 1.0] {
        // S = N; the recursion would reproduce the frequency up to rounding
        return frequency_prefix(rep, n_max);
    }
    let m = rep.order();
    let mut h: Vec<Vec<f64>> = Vec::with_capacity(n_max + 1);
    h.push(rep.beta().to_vec());
    for n in 1..=n_max {
        let top = n.min(f.max_support());
        let nf = n as f64;
        let mut acc = vec![0.0; m];
        for i in 1..=top {
            let fi = f.get(i);
            if fi == 0.0 {
                continue;
            }
            let prev = &h[n - i];
            let wa = rep.a().left_mul(prev);
            let wb = rep.b().left_mul(prev);
            let c = i as f64 / nf;
            for ((x, ya), yb) in acc.iter_mut().zip(&wa).zip(&wb) {
                *x += fi * (ya + c * yb);
            }
        }
        h.push(acc);
    }
    let g = h.iter().map(|v| v.iter().sum()).collect();
    let tail = match n_max.checked_div(f.max_support()) {
        Some(k) => frequency_tail(rep, k)?,
        None => 0.0,
    };
    Ok(DiscreteDensity::new(g, tail))
}

/// `p_0..p_n` padded with zeros, with the frequency tail bound.
fn frequency_prefix(rep: &GenAB0Rep, n: usize) -> Result<DiscreteDensity> {
    let mut raw = match genab0::density(rep, n) {
        Ok(d) => d.raw().to_vec(),
        Err(Error::Divergence(_)) => genab0::density(rep, TERMINATION_HORIZON)?.raw().to_vec(),
        Err(e) => return Err(e),
    };
    raw.resize(n + 1, 0.0);
    Ok(DiscreteDensity::new(raw, frequency_tail(rep, n)?))
}

/// Bound on `Σ_{k>n} |p_k|` for a generalized (a,b,0) frequency.
fn frequency_tail(rep: &GenAB0Rep, n: usize) -> Result<f64> {
    match genab0::density(rep, n) {
        Ok(d) => Ok(d.tail_bound()),
        Err(Error::Divergence(_)) => {
            // terminating only after n steps; the terms are then exact
            let d = genab0::density(rep, TERMINATION_HORIZON)?;
            Ok(norm1(&d.raw()[n + 1..]))
        }
        Err(e) => Err(e),
    }
}

/// Direct evaluation `g_n = Σ_{k<=k_max} p_k (f^{*k})_n` by repeated
/// convolution, truncated at `n_max`.
pub fn convolve_oracle(
    p: &DiscreteDensity,
    f: &SeverityDensity,
    n_max: usize,
    k_max: usize,
) -> DiscreteDensity {
    let mut g = vec![0.0; n_max + 1];
    // conv = f^{*k} restricted to 0..=n_max
    let mut conv = vec![0.0; n_max + 1];
    conv[0] = 1.0;
    let mut lost = 0.0;
    let f_mass = f.mass();
    let mut full_mass = 1.0;
    let top = k_max.min(p.len().saturating_sub(1));
    for k in 0..=top {
        if k > 0 {
            let mut next = vec![0.0; n_max + 1];
            for (n, &c) in conv.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                for (i, &fi) in f.probs().iter().enumerate().skip(1) {
                    if n + i > n_max {
                        break;
                    }
                    next[n + i] += c * fi;
                }
            }
            conv = next;
            full_mass *= f_mass;
        }
        let pk = p.get(k);
        for (gn, c) in g.iter_mut().zip(&conv) {
            *gn += pk * c;
        }
        lost += pk.abs() * (full_mass - conv.iter().sum::<f64>()).max(0.0);
    }
    let dropped: f64 = p.probs().iter().skip(top + 1).map(|v| v.abs()).sum();
    DiscreteDensity::new(g, p.tail_bound() + dropped + lost)
}

/// Horizon `ceil(μ_S + 10 σ_S)` from the frequency mean/variance and the
/// severity moments (Wald identities).
pub fn suggest_horizon(freq_mean: f64, freq_var: f64, f: &SeverityDensity) -> usize {
    let mu_x = f.mean();
    let var_x = f.variance();
    let mean = freq_mean * mu_x;
    let var = freq_mean * var_x + freq_var * mu_x * mu_x;
    let h = mean + 10.0 * var.max(0.0).sqrt();
    if h.is_finite() {
        h.ceil().max(1.0) as usize
    } else {
        0
    }
}
