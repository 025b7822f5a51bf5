// SPDX-License-Identifier: MIT OR Apache-2.0

//! Slow, independent reference implementations that the test suites compare
//! the toolkit against. Nothing here shares code with `polvec-core`.

/// Sample covariance (divisor `n - 1`) of row vectors.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    cov.iter_mut().flatten().for_each(|c| *c /= denom);
    cov
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// `eigenvectors[k]` pairs with `eigenvalues[k]`.
pub fn jacobi_eigen(sym: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = sym.len();
    let mut a: Vec<Vec<f64>> = sym.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Leading eigenvector of the sample covariance of `rows`.
pub fn top_principal_axis(rows: &[Vec<f64>]) -> Vec<f64> {
    let (_, vecs) = jacobi_eigen(&covariance(rows));
    vecs.into_iter().next().expect("non-empty")
}

/// Mean binary cross-entropy plus `lambda·‖w‖²/2`, written out longhand.
pub fn logreg_objective(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, lambda: f64) -> f64 {
    let mut total = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let z: f64 = row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        let p = 1.0 / (1.0 + (-z).exp());
        let p = p.clamp(1e-300, 1.0 - 1e-16);
        total -= if label { p.ln() } else { (1.0 - p).ln() };
    }
    let w2: f64 = w.iter().map(|c| c * c).sum();
    total / x.len() as f64 + 0.5 * lambda * w2
}

/// Best `(w1, w2, b, objective)` on an `n³` grid over `[lo, hi]³` for 2-D inputs.
pub fn logreg_grid_2d(x: &[Vec<f64>], y: &[bool], lambda: f64, lo: f64, hi: f64, n: usize) -> (f64, f64, f64, f64) {
    let step = (hi - lo) / (n - 1) as f64;
    let at = |i: usize| lo + step * i as f64;
    let mut best = (0.0, 0.0, 0.0, f64::INFINITY);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let (w1, w2, b) = (at(i), at(j), at(k));
                let obj = logreg_objective(x, y, &[w1, w2], b, lambda);
                if obj < best.3 {
                    best = (w1, w2, b, obj);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_known_matrix() {
        let (vals, vecs) = jacobi_eigen(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[0][0].abs() - r).abs() < 1e-12 && (vecs[0][1].abs() - r).abs() < 1e-12);
        assert!(vecs[0][0] * vecs[0][1] > 0.0);
    }

    #[test]
    fn grid_finds_minimum_of_symmetric_problem() {
        let x = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let (w1, w2, b, _) = logreg_grid_2d(&x, &[false, true], 1.0, -2.0, 2.0, 41);
        assert!(w1 > 0.0);
        assert_eq!(w2, 0.0);
        assert!(b.abs() < 1e-12);
    }
}
