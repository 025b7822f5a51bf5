// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense numeric kernels: vector algebra, the top principal component by
//! power iteration, and L2-regularized logistic regression.
//!
//! Everything here works on `f64` and is deterministic: fixed start vectors,
//! fixed iteration schedules, no hidden randomness.

use crate::error::{Error, Result};

/// Relative eigenvalue change at which power iteration stops.
pub const POWER_TOL: f64 = 1e-10;
/// Iteration cap for power iteration.
pub const POWER_MAX_ITERS: usize = 10_000;
/// Gradient infinity-norm at which the logistic fit is declared converged.
pub const LOGREG_TOL: f64 = 1e-8;
/// Iteration cap for the logistic fit.
pub const LOGREG_MAX_ITERS: usize = 50_000;

const NORM_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a - b`, elementwise.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a + scale * b`, elementwise.
pub fn axpy(a: &[f64], scale: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + scale * y).collect()
}

pub fn scaled(a: &[f64], scale: f64) -> Vec<f64> {
    a.iter().map(|x| x * scale).collect()
}

/// Mean of a non-empty collection of equal-length vectors.
pub fn mean_of<'a, I>(vectors: I, dim: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        count += 1;
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    acc
}

/// Returns `v / ‖v‖` and the original norm.
pub fn normalize(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if !(n > NORM_FLOOR) {
        return Err(Error::ZeroNorm);
    }
    Ok((scaled(v, 1.0 / n), n))
}

pub fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    ensure_finite(a, "cosine_similarity input")?;
    ensure_finite(b, "cosine_similarity input")?;
    let (na, nb) = (norm(a), norm(b));
    if !(na > NORM_FLOOR && nb > NORM_FLOOR) {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix of finite `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(rows * cols, data.len())?;
        ensure_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    /// Stacks equal-length rows. An empty iterator yields a `0 × 0` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dims(cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        mean_of(self.row_iter(), self.cols)
    }

    /// A copy with column means subtracted from every row.
    pub fn centered(&self) -> Matrix {
        let mu = self.column_means();
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.cols.max(1)) {
            for (x, m) in row.iter_mut().zip(&mu) {
                *x -= m;
            }
        }
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// `self · v` (length `rows`).
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.row_iter().map(|r| dot(r, v)).collect()
    }

    /// `selfᵀ · u` (length `cols`).
    pub fn t_mul_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &ui) in self.row_iter().zip(u) {
            for (o, x) in out.iter_mut().zip(r) {
                *o += ui * x;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Principal component
// ---------------------------------------------------------------------------

/// Outcome of [`principal_component_detailed`].
#[derive(Debug, Clone)]
pub struct PrincipalComponent {
    /// Unit eigenvector of the centered scatter matrix.
    pub direction: Vec<f64>,
    /// Variance of the centered rows along `direction` (sample variance, `n - 1`).
    pub variance: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Top principal component of the rows of `m` (rows are centered first).
///
/// The returned sign is unspecified; callers that need an orientation must
/// fix it themselves.
pub fn principal_component(m: &Matrix) -> Result<Vec<f64>> {
    principal_component_detailed(m).map(|pc| pc.direction)
}

pub fn principal_component_detailed(m: &Matrix) -> Result<PrincipalComponent> {
    if m.rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "principal component needs at least 2 rows, got {}",
            m.rows()
        )));
    }
    top_eigenvector(&m.centered(), m.as_slice())
}

/// Power iteration on `XᵀX` for an already-centered `x`. `raw` only sets the
/// scale for the rank-deficiency test.
pub(crate) fn top_eigenvector(x: &Matrix, raw: &[f64]) -> Result<PrincipalComponent> {
    let scale = raw.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let max_row = x.row_iter().map(norm).fold(0.0f64, f64::max);
    if max_row <= NORM_FLOOR * scale {
        return Err(Error::RankDeficient);
    }

    let cols = x.cols();
    let apply = |v: &[f64]| x.t_mul_vec(&x.mul_vec(v));

    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut w = apply(&v);
    if norm(&w) <= NORM_FLOOR * max_row * max_row {
        // Start vector lies in the null space; restart inside the row space.
        let seed = x
            .row_iter()
            .max_by(|a, b| norm(a).total_cmp(&norm(b)))
            .expect("at least two rows");
        v = normalize(seed)?.0;
        w = apply(&v);
    }

    let mut eigenvalue = dot(&v, &w);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < POWER_MAX_ITERS {
        iterations += 1;
        v = match normalize(&w) {
            Ok((u, _)) => u,
            Err(_) => return Err(Error::RankDeficient),
        };
        w = apply(&v);
        let next = dot(&v, &w);
        let change = (next - eigenvalue).abs();
        eigenvalue = next;
        if change <= POWER_TOL * next.abs() {
            converged = true;
            break;
        }
    }

    Ok(PrincipalComponent {
        direction: v,
        variance: eigenvalue / (x.rows() as f64 - 1.0),
        iterations,
        converged,
    })
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

/// L2-regularized logistic regression with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final gradient infinity-norm.
    pub grad_norm: f64,
}

impl LogRegModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.predict_proba(x) >= 0.5
    }
}

/// Mean binary cross-entropy plus `lambda·‖w‖²/2`.
pub fn logistic_objective(x: &Matrix, y: &[bool], weights: &[f64], intercept: f64, lambda: f64) -> f64 {
    let n = x.rows() as f64;
    let loss: f64 = x
        .row_iter()
        .zip(y)
        .map(|(row, &label)| {
            let z = dot(row, weights) + intercept;
            if label {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    loss / n + 0.5 * lambda * dot(weights, weights)
}

/// Gradient with respect to `(weights, intercept)`, intercept last.
fn logistic_gradient(x: &Matrix, y: &[bool], theta: &[f64], lambda: f64) -> Vec<f64> {
    let d = x.cols();
    let (w, b) = (&theta[..d], theta[d]);
    let mut grad = vec![0.0; d + 1];
    for (row, &label) in x.row_iter().zip(y) {
        let residual = sigmoid(dot(row, w) + b) - if label { 1.0 } else { 0.0 };
        for (g, xi) in grad[..d].iter_mut().zip(row) {
            *g += residual * xi;
        }
        grad[d] += residual;
    }
    let inv_n = 1.0 / x.rows() as f64;
    for (g, wi) in grad[..d].iter_mut().zip(w) {
        *g = *g * inv_n + lambda * wi;
    }
    grad[d] *= inv_n;
    grad
}

/// Fits `P(y = 1 | x) = sigmoid(w·x + b)` by full-batch gradient descent.
///
/// Each step starts from a Barzilai–Borwein trial length and backtracks
/// until the Armijo condition holds. Stops once the gradient infinity-norm
/// reaches [`LOGREG_TOL`] or after [`LOGREG_MAX_ITERS`] iterations; the
/// returned model records which happened.
pub fn fit_logistic(x: &Matrix, y: &[bool], lambda: f64) -> Result<LogRegModel> {
    check_dims(x.rows(), y.len())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let positives = y.iter().filter(|&&l| l).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass);
    }

    let d = x.cols();
    let objective = |theta: &[f64]| logistic_objective(x, y, &theta[..d], theta[d], lambda);
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut theta = vec![0.0; d + 1];
    let mut f = objective(&theta);
    let mut grad = logistic_gradient(x, y, &theta, lambda);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut grad_norm = inf_norm(&grad);

    while grad_norm > LOGREG_TOL && iterations < LOGREG_MAX_ITERS {
        iterations += 1;
        let g2 = dot(&grad, &grad);
        let slack = 4.0 * f64::EPSILON * f.abs().max(1.0);
        let mut t = step;
        let mut candidate;
        let mut f_new;
        let mut halvings = 0;
        loop {
            candidate = axpy(&theta, -t, &grad);
            f_new = objective(&candidate);
            if f_new <= f - 1e-4 * t * g2 + slack || halvings >= 80 {
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
        let next_grad = logistic_gradient(x, y, &candidate, lambda);

        // Barzilai–Borwein length for the next trial step.
        let s = sub(&candidate, &theta);
        let yk = sub(&next_grad, &grad);
        let sy = dot(&s, &yk);
        step = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-12, 1e12) } else { t.max(1e-12) };

        theta = candidate;
        f = f_new;
        grad = next_grad;
        grad_norm = inf_norm(&grad);
    }

    Ok(LogRegModel {
        weights: theta[..d].to_vec(),
        intercept: theta[d],
        lambda,
        iterations,
        converged: grad_norm <= LOGREG_TOL,
        grad_norm,
    })
}
