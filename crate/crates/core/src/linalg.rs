//! Dense least squares by Householder QR with in-order rank detection.
//!
//! Columns are processed left to right. A column whose residual norm, after
//! projecting out the columns already accepted, falls below `tol` times its
//! original norm is reported as aliased and skipped. Earlier columns always
//! win, so an exact duplicate of a column is the one that gets dropped.

#[derive(Debug, Clone)]
pub(crate) struct LeastSquares {
    /// Coefficient per input column; `None` for aliased columns.
    pub coef: Vec<Option<f64>>,
    /// Residual sum of squares.
    pub rss: f64,
    /// Indices of the accepted (non-aliased) columns, ascending.
    pub kept: Vec<usize>,
    /// Upper-triangular factor over the kept columns, row-major `k x k`.
    pub r: Vec<Vec<f64>>,
}

pub(crate) fn least_squares(columns: &[Vec<f64>], response: &[f64], tol: f64) -> LeastSquares {
    let n = response.len();
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    let mut b = response.to_vec();
    let mut kept = Vec::new();
    let mut k = 0usize;

    for j in 0..a.len() {
        if k >= n {
            break;
        }
        let resid = norm(&a[j][k..]);
        if norms[j] == 0.0 || resid <= tol * norms[j] {
            continue;
        }
        let x0 = a[j][k];
        let alpha = if x0 >= 0.0 { -resid } else { resid };
        let mut v: Vec<f64> = a[j][k..].to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv > 0.0 {
            let beta = 2.0 / vv;
            for col in a.iter_mut().skip(j + 1) {
                reflect(&v, beta, &mut col[k..]);
            }
            reflect(&v, beta, &mut b[k..]);
        }
        a[j][k] = alpha;
        for x in a[j][k + 1..].iter_mut() {
            *x = 0.0;
        }
        kept.push(j);
        k += 1;
    }

    let r: Vec<Vec<f64>> = (0..k)
        .map(|row| (0..k).map(|c| if row <= c { a[kept[c]][row] } else { 0.0 }).collect())
        .collect();
    let sol = back_substitute(&r, &b[..k]);
    let rss = b[k..].iter().map(|x| x * x).sum();
    let mut coef = vec![None; columns.len()];
    for (slot, &j) in kept.iter().enumerate() {
        coef[j] = Some(sol[slot]);
    }
    LeastSquares { coef, rss, kept, r }
}

fn reflect(v: &[f64], beta: f64, y: &mut [f64]) {
    let dot: f64 = v.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
    let s = beta * dot;
    for (yi, vi) in y.iter_mut().zip(v) {
        *yi -= s * vi;
    }
}

fn norm(x: &[f64]) -> f64 {
    // Scaled to avoid overflow on large raw metric values.
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}

fn back_substitute(r: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let k = rhs.len();
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = ((i + 1)..k).map(|j| r[i][j] * x[j]).sum();
        x[i] = (rhs[i] - s) / r[i][i];
    }
    x
}

/// `(R^T R)^{-1}` for an upper-triangular `R`.
pub(crate) fn inverse_gram(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = r.len();
    // Rinv is upper triangular.
    let mut rinv = vec![vec![0.0; k]; k];
    for c in 0..k {
        rinv[c][c] = 1.0 / r[c][c];
        for i in (0..c).rev() {
            let s: f64 = ((i + 1)..=c).map(|j| r[i][j] * rinv[j][c]).sum();
            rinv[i][c] = -s / r[i][i];
        }
    }
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let s: f64 = (j..k).map(|m| rinv[i][m] * rinv[j][m]).sum();
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    out
}
