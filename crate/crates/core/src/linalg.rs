//! Dense real matrix kernels.
//!
//! Everything here works on small dense matrices (orders up to a few dozen):
//! products, norms, LU inversion, the matrix exponential and its action on a
//! vector, the principal matrix logarithm, a spectral-radius estimate and the
//! augmented-block exponential used for Fréchet-derivative integrals.
//!
//! Vectors are plain `&[f64]` / `Vec<f64>`. Row vectors multiply from the left
//! ([`Matrix::left_mul`]), column vectors from the right ([`Matrix::mul_vec`]).

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

/// Tolerance used when callers have no opinion.
pub const DEFAULT_TOL: f64 = 1e-15;

/// Dense row-major matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("ragged rows"));
        }
        Self::from_vec(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Outer product `e_i e_j^T` of order `n`.
    pub fn unit(n: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m[(i, j)] = 1.0;
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + s * other`, in place.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Maximum absolute row sum (induced infinity norm).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute column sum (induced 1-norm).
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.data[i * self.cols + j].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Column-vector product `M v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Row-vector product `v M`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "left_mul shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        out
    }

    /// Integer power by repeated squaring.
    pub fn powi(&self, k: u32) -> Matrix {
        assert!(self.is_square());
        let mut result = Matrix::identity(self.rows);
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = result.matmul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.matmul(&base);
            }
        }
        result
    }

    /// Copies the `rows x cols` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out.data[i * cols + j] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Matrix) {
        for i in 0..src.rows {
            for j in 0..src.cols {
                self[(r0 + i, c0 + j)] = src[(i, j)];
            }
        }
    }

    /// Inverse by LU factorisation with partial pivoting.
    pub fn inverse(&self) -> Result<Matrix> {
        let lu = Lu::factor(self)?;
        let n = self.rows;
        let mut inv = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = lu.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }

    /// Solves `M x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.rows {
            return Err(Error::dim("solve: right-hand side length"));
        }
        Ok(Lu::factor(self)?.solve(rhs))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

struct Lu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    fn factor(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim("LU of a non-square matrix"));
        }
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax <= 1e3 * f64::EPSILON * scale * f64::EPSILON.sqrt() || pmax == 0.0 {
                return Err(Error::numerical("singular matrix in LU factorisation"));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                piv.swap(k, p);
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / d;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= f * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, lu, piv })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

pub fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn norm_inf_vec(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn require_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::dim(format!("{what}: expected a square matrix, got {}x{}", m.rows, m.cols)))
    }
}

fn require_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("tolerance must be positive, got {tol}")))
    }
}

/// Matrix exponential by scaling and squaring on a truncated Taylor series.
///
/// The argument is scaled by `2^-s` so that its infinity norm is at most 1/2;
/// the series is cut once the a-priori remainder bound
/// `x^(k+1)/(k+1)! / (1 - x/(k+2))` drops below `tol` times the norm of the
/// partial sum, and the result is squared `s` times.
pub fn matexp(m: &Matrix, tol: f64) -> Result<Matrix> {
    require_square(m, "matexp")?;
    require_tol(tol)?;
    let n = m.rows;
    let norm = m.norm_inf();
    if norm == 0.0 {
        return Ok(Matrix::identity(n));
    }
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = m.scale(0.5f64.powi(s));
    let xn = x.norm_inf();

    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    let mut k = 1usize;
    // xn^k / k!
    let mut bound_k = 1.0;
    loop {
        term = term.matmul(&x).scale(1.0 / k as f64);
        sum.add_scaled(&term, 1.0);
        bound_k *= xn / k as f64;
        let rem = bound_k * xn / (k + 1) as f64 / (1.0 - xn / (k + 2) as f64);
        if rem <= tol * sum.norm_inf() || k >= 60 {
            break;
        }
        k += 1;
    }
    for _ in 0..s {
        sum = sum.matmul(&sum);
    }
    Ok(sum)
}

/// `e^M v` for a column vector `v`, without forming `e^M`.
///
/// `M` is split into `s = ceil(||M||)` equal slices; on each slice the series
/// is accumulated as `w <- w + term`, `term <- M term / (s k)`.
pub fn matexp_action(m: &Matrix, v: &[f64], tol: f64) -> Result<Vec<f64>> {
    require_square(m, "matexp_action")?;
    require_tol(tol)?;
    if v.len() != m.cols {
        return Err(Error::dim(format!(
            "matexp_action: vector of length {} for order {}",
            v.len(),
            m.cols
        )));
    }
    let norm = m.norm_inf();
    if norm == 0.0 {
        return Ok(v.to_vec());
    }
    let steps = norm.ceil().max(1.0) as usize;
    let x = m.scale(1.0 / steps as f64);
    let xn = x.norm_inf();
    let mut w = v.to_vec();
    for _ in 0..steps {
        let mut acc = w.clone();
        let mut term = w;
        let mut k = 1usize;
        loop {
            term = x.mul_vec(&term);
            let inv_k = 1.0 / k as f64;
            term.iter_mut().for_each(|t| *t *= inv_k);
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += t;
            }
            let ratio = xn / (k + 1) as f64;
            let rem = norm_inf_vec(&term) * ratio / (1.0 - xn / (k + 2) as f64);
            if rem <= tol * norm_inf_vec(&acc) || k >= 80 {
                break;
            }
            k += 1;
        }
        w = acc;
    }
    Ok(w)
}

/// Row-vector action `v e^M`.
pub fn vec_exp_action(v: &[f64], m: &Matrix, tol: f64) -> Result<Vec<f64>> {
    matexp_action(&m.transpose(), v, tol)
}

/// Spectral radius estimate together with a certified upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralRadius {
    pub estimate: f64,
    /// `min(||M||_inf, ||M||_1)`, a Gershgorin-type bound on every eigenvalue.
    pub upper_bound: f64,
}

/// Estimates `sp(M)` through the Gelfand limit `||M^(2^k)||^(1/2^k)`.
///
/// Each squaring is renormalised and only the running logarithm of the scale
/// is kept, so neither overflow nor underflow occur. Up to 64 squarings are
/// performed; iteration stops early once successive estimates agree to `tol`.
/// Nilpotent inputs collapse to an exact zero and return 0; triangular inputs
/// return their largest diagonal magnitude directly.
pub fn spectral_bound(m: &Matrix, tol: f64) -> Result<SpectralRadius> {
    require_square(m, "spectral_radius")?;
    let upper = m.norm_inf().min(m.norm_1());
    if upper == 0.0 {
        return Ok(SpectralRadius {
            estimate: 0.0,
            upper_bound: 0.0,
        });
    }
    if let Some(diag) = triangular_diagonal(m) {
        return Ok(SpectralRadius {
            estimate: diag.iter().fold(0.0f64, |a, d| a.max(d.abs())),
            upper_bound: upper,
        });
    }
    let n0 = m.norm_inf();
    let mut x = m.scale(1.0 / n0);
    // log of ||M^(2^k)|| divided by 2^k
    let mut log_rate = n0.ln();
    let mut weight = 0.5;
    let mut prev = f64::INFINITY;
    let mut stable = 0;
    for _ in 0..64 {
        let y = x.matmul(&x);
        let ny = y.norm_inf();
        if ny == 0.0 || !ny.is_finite() {
            return Ok(SpectralRadius {
                estimate: 0.0,
                upper_bound: upper,
            });
        }
        log_rate += weight * ny.ln();
        weight *= 0.5;
        x = y.scale(1.0 / ny);
        let est = log_rate.exp();
        if (est - prev).abs() <= tol * est {
            stable += 1;
            if stable >= 3 {
                break;
            }
        } else {
            stable = 0;
        }
        prev = est;
    }
    Ok(SpectralRadius {
        estimate: log_rate.exp().min(upper),
        upper_bound: upper,
    })
}

/// Diagonal of a triangular matrix, whose eigenvalues it lists exactly.
fn triangular_diagonal(m: &Matrix) -> Option<Vec<f64>> {
    let n = m.rows();
    let upper = (0..n).all(|i| (0..i).all(|j| m[(i, j)] == 0.0));
    let lower = (0..n).all(|i| (i + 1..n).all(|j| m[(i, j)] == 0.0));
    (upper || lower).then(|| (0..n).map(|i| m[(i, i)]).collect())
}

/// Spectral radius estimate of a square matrix.
pub fn spectral_radius(m: &Matrix, tol: f64) -> Result<f64> {
    spectral_bound(m, tol).map(|s| s.estimate)
}

/// `∫_0^ν e^{(ν-u)P} e_i e_j^T e^{uP} du` (zero-based `i`, `j`).
///
/// Evaluated as the upper-right block of `exp(ν [[P, E_ij], [0, P]])`.
pub fn block_exp_integral(p: &Matrix, nu: f64, i: usize, j: usize) -> Result<Matrix> {
    require_square(p, "block_exp_integral")?;
    let m = p.rows;
    if i >= m || j >= m {
        return Err(Error::invalid(format!(
            "block_exp_integral: index ({i}, {j}) out of range for order {m}"
        )));
    }
    augmented_integral(p, &Matrix::unit(m, i, j), nu)
}

/// `∫_0^ν e^{(ν-u)P} C e^{uP} du` for an arbitrary square `C`.
pub fn augmented_integral(p: &Matrix, c: &Matrix, nu: f64) -> Result<Matrix> {
    require_square(p, "augmented_integral")?;
    if c.rows != p.rows || c.cols != p.cols {
        return Err(Error::dim("augmented_integral: coupling block shape"));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("integration length must be positive, got {nu}")));
    }
    let m = p.rows;
    let mut big = Matrix::zeros(2 * m, 2 * m);
    let np = p.scale(nu);
    big.set_block(0, 0, &np);
    big.set_block(m, m, &np);
    big.set_block(0, m, &c.scale(nu));
    let e = matexp(&big, DEFAULT_TOL)?;
    Ok(e.block(0, m, m, m))
}

/// Principal square root by the Denman–Beavers iteration.
fn sqrtm(m: &Matrix) -> Result<Matrix> {
    let n = m.rows;
    let mut y = m.clone();
    let mut z = Matrix::identity(n);
    for _ in 0..100 {
        let yi = y.inverse()?;
        let zi = z.inverse()?;
        let y_next = (&y + &zi).scale(0.5);
        let z_next = (&z + &yi).scale(0.5);
        let delta = y_next.max_abs_diff(&y);
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.max_abs().max(1.0) {
            return Ok(y);
        }
    }
    Err(Error::numerical("matrix square root did not converge"))
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Valid when no eigenvalue lies on the closed negative real axis. Square
/// roots are taken until `||X - I|| <= 1/4`, then `log(I + W)` is summed as a
/// series to `tol` and scaled back by `2^s`.
pub fn matlog(m: &Matrix, tol: f64) -> Result<Matrix> {
    require_square(m, "matlog")?;
    require_tol(tol)?;
    let n = m.rows;
    let id = Matrix::identity(n);
    let mut x = m.clone();
    let mut s = 0;
    while (&x - &id).norm_inf() > 0.25 {
        x = sqrtm(&x)?;
        s += 1;
        if s > 60 {
            return Err(Error::numerical("matlog: too many square roots"));
        }
    }
    let w = &x - &id;
    let wn = w.norm_inf();
    let mut sum = Matrix::zeros(n, n);
    let mut power = Matrix::identity(n);
    for k in 1..400 {
        power = power.matmul(&w);
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum.add_scaled(&power, sign / k as f64);
        let rem = wn.powi(k as i32 + 1) / ((k + 1) as f64 * (1.0 - wn));
        if rem <= tol * sum.norm_inf().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(sum.scale(2f64.powi(s)))
}
