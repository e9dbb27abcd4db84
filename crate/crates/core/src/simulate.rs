//! Monte-Carlo simulation of the physical model.
//!
//! A Poisson clock of rate `ν` ticks on `(0, 1)`; at each tick the chain
//! moves according to `P`, leaving the transient states with probability
//! `1 - (P 1)_i`. A sample is the number of ticks, kept only when the chain
//! is still transient at time 1.
//!
//! Randomness: sample (or chunk) `k` of a run seeded with `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `k`. Results therefore
//! do not depend on the number of worker threads.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{ones, Matrix};
use crate::phpoisson::PhysicalRep;

pub const DEFAULT_MAX_REJECTIONS: u64 = 10_000;

/// Largest acceptable probability that some sample exhausts its attempts.
const EXHAUSTION_RISK: f64 = 1e-3;

/// Attempts per random stream in [`estimate_acceptance`].
const CHUNK: u64 = 1 << 20;

/// Seeded generator for stream `index`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub phys: PhysicalRep,
    pub n_samples: usize,
    pub seed: u64,
    pub max_rejections: u64,
}

impl SimConfig {
    pub fn new(phys: PhysicalRep, n_samples: usize, seed: u64) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        Ok(SimConfig {
            phys,
            n_samples,
            seed,
            max_rejections: DEFAULT_MAX_REJECTIONS,
        })
    }

    pub fn with_max_rejections(mut self, max_rejections: u64) -> Self {
        self.max_rejections = max_rejections.max(1);
        self
    }
}

/// Observed counts `y^[1..n]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleData {
    observations: Vec<u64>,
}

impl SampleData {
    pub fn new(observations: Vec<u64>) -> Self {
        SampleData { observations }
    }

    /// Expands `(value, count)` pairs.
    pub fn from_histogram(pairs: &[(u64, u64)]) -> Self {
        let mut obs = Vec::new();
        for &(v, c) in pairs {
            obs.extend(std::iter::repeat_n(v, c as usize));
        }
        SampleData { observations: obs }
    }

    pub fn observations(&self) -> &[u64] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.observations.iter().sum()
    }

    pub fn max(&self) -> u64 {
        self.observations.iter().copied().max().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        self.total() as f64 / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.observations
            .iter()
            .map(|&y| (y as f64 - mu).powi(2))
            .sum::<f64>()
            / self.len() as f64
    }

    /// Sorted `(value, count)` pairs.
    pub fn histogram(&self) -> Vec<(u64, u64)> {
        let mut h = BTreeMap::new();
        for &y in &self.observations {
            *h.entry(y).or_insert(0u64) += 1;
        }
        h.into_iter().collect()
    }

    /// Relative frequencies of `0..=max`.
    pub fn empirical_pmf(&self) -> Vec<f64> {
        let mut pmf = vec![0.0; self.max() as usize + 1];
        let inv = 1.0 / self.len() as f64;
        for &y in &self.observations {
            pmf[y as usize] += inv;
        }
        pmf
    }

    /// `Σ |p̂_n - p_n|` over the union of supports; `pmf` beyond its length
    /// is treated as zero.
    pub fn l1_distance(&self, pmf: &[f64]) -> f64 {
        let emp = self.empirical_pmf();
        let n = emp.len().max(pmf.len());
        (0..n)
            .map(|i| (emp.get(i).copied().unwrap_or(0.0) - pmf.get(i).copied().unwrap_or(0.0)).abs())
            .sum()
    }
}

/// Cumulative rows of `P` for inverse-CDF transitions.
struct Walker {
    alpha_cum: Vec<f64>,
    rows_cum: Vec<Vec<f64>>,
}

impl Walker {
    fn new(phys: &PhysicalRep) -> Self {
        let cum = |v: &[f64]| {
            v.iter()
                .scan(0.0, |s, x| {
                    *s += x;
                    Some(*s)
                })
                .collect::<Vec<_>>()
        };
        Walker {
            alpha_cum: cum(phys.alpha()),
            rows_cum: (0..phys.order()).map(|i| cum(phys.p().row(i))).collect(),
        }
    }

    /// Index `j` with `u < cum[j]`, or `None` when `u` falls in the
    /// absorbing remainder.
    fn pick(cum: &[f64], u: f64) -> Option<usize> {
        let j = cum.partition_point(|&c| c <= u);
        (j < cum.len()).then_some(j)
    }

    /// One attempt: `Some(events)` when the chain survives the interval.
    /// Transitions are tallied in `counts` (row-major, `m x m`) if given.
    fn attempt(&self, rng: &mut ChaCha8Rng, poisson: &Poisson<f64>, mut counts: Option<&mut [u64]>) -> Option<u64> {
        let m = self.rows_cum.len();
        let mut phase = Self::pick(&self.alpha_cum, rng.random::<f64>())?;
        let events = poisson.sample(rng) as u64;
        let mut path = Vec::new();
        for _ in 0..events {
            let next = Self::pick(&self.rows_cum[phase], rng.random::<f64>())?;
            if counts.is_some() {
                path.push((phase, next));
            }
            phase = next;
        }
        if let Some(c) = counts.as_deref_mut() {
            for (i, j) in path {
                c[i * m + j] += 1;
            }
        }
        Some(events)
    }
}

fn poisson_dist(nu: f64) -> Result<Poisson<f64>> {
    Poisson::new(nu).map_err(|e| Error::invalid(format!("Poisson rate {nu}: {e}")))
}

/// Rejection sampler output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDraw {
    pub data: SampleData,
    pub attempts: u64,
    pub acceptance_rate: f64,
    /// `P[T > 1]` computed analytically.
    pub analytic_acceptance: f64,
}

/// Samples of `N(1) | T > 1` by rejection.
///
/// Refuses up front when the analytic acceptance probability makes it
/// likely (above 1e-3) that some sample exhausts `max_rejections` attempts.
pub fn draw_conditional(config: &SimConfig) -> Result<ConditionalDraw> {
    draw_conditional_tracked(config, false).map(|(d, _)| d)
}

/// As [`draw_conditional`], also returning transition counts of the
/// accepted paths (row-major `m x m`).
pub fn draw_conditional_tracked(config: &SimConfig, track: bool) -> Result<(ConditionalDraw, Vec<u64>)> {
    let phys = &config.phys;
    let analytic = phys.survival_probability()?;
    let risk = config.n_samples as f64 * (1.0 - analytic).powf(config.max_rejections as f64);
    if analytic <= 0.0 || risk > EXHAUSTION_RISK {
        return Err(Error::Acceptance {
            attempts: config.max_rejections,
            analytic,
        });
    }
    let walker = Walker::new(phys);
    let poisson = poisson_dist(phys.nu())?;
    let m = phys.order();
    let results: Vec<Result<(u64, u64, Vec<u64>)>> = (0..config.n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(config.seed, k as u64);
            let mut counts = if track { vec![0u64; m * m] } else { Vec::new() };
            for tries in 1..=config.max_rejections {
                let slot = if track {
                    // counts of rejected paths must not leak into the tally
                    let mut local = vec![0u64; m * m];
                    let out = walker.attempt(&mut rng, &poisson, Some(&mut local));
                    if out.is_some() {
                        counts = local;
                    }
                    out
                } else {
                    walker.attempt(&mut rng, &poisson, None)
                };
                if let Some(y) = slot {
                    return Ok((y, tries, counts));
                }
            }
            Err(Error::Acceptance {
                attempts: config.max_rejections,
                analytic,
            })
        })
        .collect();
    let mut obs = Vec::with_capacity(config.n_samples);
    let mut attempts = 0u64;
    let mut counts = vec![0u64; if track { m * m } else { 0 }];
    for r in results {
        let (y, tries, c) = r?;
        obs.push(y);
        attempts += tries;
        for (t, x) in counts.iter_mut().zip(c) {
            *t += x;
        }
    }
    let n = obs.len();
    Ok((
        ConditionalDraw {
            data: SampleData::new(obs),
            attempts,
            acceptance_rate: n as f64 / attempts as f64,
            analytic_acceptance: analytic,
        },
        counts,
    ))
}

/// Acceptance frequency over a fixed number of unconditioned attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceEstimate {
    pub attempts: u64,
    pub accepted: u64,
    pub rate: f64,
    pub analytic: f64,
    /// Binomial standard error `sqrt(p(1-p)/attempts)` at the analytic `p`.
    pub std_error: f64,
}

impl AcceptanceEstimate {
    /// `|rate - analytic|` in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.rate - self.analytic).abs() / self.std_error
    }
}

/// Runs `attempts` independent physical paths and counts survivors.
/// Attempts are split into chunks of 2^20, chunk `k` using stream `k`.
pub fn estimate_acceptance(phys: &PhysicalRep, attempts: u64, seed: u64) -> Result<AcceptanceEstimate> {
    if attempts == 0 {
        return Err(Error::invalid("attempts must be positive"));
    }
    let analytic = phys.survival_probability()?;
    let walker = Walker::new(phys);
    let poisson = poisson_dist(phys.nu())?;
    let chunks = attempts.div_ceil(CHUNK);
    let accepted: u64 = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let len = CHUNK.min(attempts - k * CHUNK);
            (0..len)
                .filter(|_| walker.attempt(&mut rng, &poisson, None).is_some())
                .count() as u64
        })
        .sum();
    Ok(AcceptanceEstimate {
        attempts,
        accepted,
        rate: accepted as f64 / attempts as f64,
        analytic,
        std_error: (analytic * (1.0 - analytic) / attempts as f64).sqrt(),
    })
}

/// Exact sampler for `N(1) | T > 1` that never rejects.
///
/// The pair (initial phase, number of ticks) is drawn from its joint law on
/// the survival event, `α_i e^{-ν} ν^n/n! (P^n 1)_i`, truncated where the
/// Poisson tail is below 1e-15 of the retained mass. The chain is then run
/// as a bridge: with `r` ticks left in phase `j` it moves to `k` with
/// probability `p_jk h_{r-1}(k) / h_r(j)`, `h_r = P^r 1`.
pub fn draw_conditional_exact(config: &SimConfig) -> Result<SampleData> {
    let bridge = Bridge::new(&config.phys)?;
    let obs = (0..config.n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(config.seed, k as u64);
            bridge.sample(&mut rng).0
        })
        .collect();
    Ok(SampleData::new(obs))
}

/// Exact conditioned paths; each entry is `(events, visited phases)`.
pub fn draw_conditional_paths(config: &SimConfig) -> Result<Vec<(u64, Vec<usize>)>> {
    let bridge = Bridge::new(&config.phys)?;
    Ok((0..config.n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(config.seed, k as u64);
            bridge.sample(&mut rng)
        })
        .collect())
}

struct Bridge {
    p: Matrix,
    /// `h_r / scale_r`.
    h: Vec<Vec<f64>>,
    log_scale: Vec<f64>,
    joint: WeightedIndex<f64>,
    m: usize,
}

impl Bridge {
    fn new(phys: &PhysicalRep) -> Result<Self> {
        let m = phys.order();
        let p = phys.p().clone();
        let nu = phys.nu();
        let mut h = vec![ones(m)];
        let mut log_scale = vec![0.0];
        let mut weights = Vec::new();
        // log of e^{-ν} ν^n / n!
        let mut log_pois = -nu;
        let mut total = 0.0;
        let mut n = 0usize;
        loop {
            for i in 0..m {
                let w = phys.alpha()[i] * (log_pois + log_scale[n]).exp() * h[n][i];
                weights.push(w);
                total += w;
            }
            // P[Pois > n] <= pmf(n+1) / (1 - ν/(n+2)) once n+2 > ν
            let next_log = log_pois + nu.ln() - ((n + 1) as f64).ln();
            let r = nu / (n + 2) as f64;
            if r < 1.0 && total > 0.0 && next_log.exp() / (1.0 - r) <= 1e-15 * total {
                break;
            }
            if n > 100_000 {
                return Err(Error::numerical("bridge sampler: Poisson range too wide"));
            }
            log_pois = next_log;
            let next = p.mul_vec(&h[n]);
            let s = next.iter().fold(0.0f64, |a, &b| a.max(b));
            if s == 0.0 {
                break;
            }
            log_scale.push(log_scale[n] + s.ln());
            h.push(next.into_iter().map(|x| x / s).collect());
            n += 1;
        }
        if !(total > 0.0) {
            return Err(Error::Acceptance {
                attempts: 0,
                analytic: 0.0,
            });
        }
        let joint = WeightedIndex::new(&weights)
            .map_err(|e| Error::numerical(format!("bridge sampler weights: {e}")))?;
        Ok(Bridge {
            p,
            h,
            log_scale,
            joint,
            m,
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (u64, Vec<usize>) {
        let idx = self.joint.sample(rng);
        let n = idx / self.m;
        let mut phase = idx % self.m;
        let mut path = Vec::with_capacity(n + 1);
        path.push(phase);
        for r in (1..=n).rev() {
            // p_jk h_{r-1}(k) / h_r(j), with the scales folded in
            let ratio = (self.log_scale[r - 1] - self.log_scale[r]).exp() / self.h[r][phase];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = self.m - 1;
            for k in 0..self.m {
                acc += self.p[(phase, k)] * self.h[r - 1][k] * ratio;
                if u < acc {
                    next = k;
                    break;
                }
            }
            // guard against round-off leaving u just above the last sum
            if self.p[(phase, next)] == 0.0 || self.h[r - 1][next] == 0.0 {
                next = (0..self.m)
                    .rev()
                    .find(|&k| self.p[(phase, k)] * self.h[r - 1][k] > 0.0)
                    .unwrap_or(next);
            }
            phase = next;
            path.push(phase);
        }
        (n as u64, path)
    }
}

/// `M_k(t) = e^{-νt} (νP)^k t^k / k!`: entry `(i, j)` is the probability of
/// exactly `k` ticks in `(0, t)`, all of them transient moves, ending in `j`
/// from `i`.
pub fn mmk_check(phys: &PhysicalRep, k: usize, t: f64) -> Result<Matrix> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("t must be positive, got {t}")));
    }
    let m = phys.order();
    let mut out = Matrix::identity(m).scale((-phys.nu() * t).exp());
    for j in 1..=k {
        out = out.matmul(&phys.p().scale(phys.nu() * t / j as f64));
    }
    Ok(out)
}
