//! Central finite-difference Hessians and the resulting covariance matrix.

use nalgebra::{DMatrix, SymmetricEigen};

/// Step used for parameter `theta_j`.
pub fn fd_step(theta: f64) -> f64 {
    1e-4 * theta.abs().max(1.0)
}

/// Hessian of `f` at `x` by central differences of function values,
/// symmetrized.
pub fn numeric_hessian<F>(mut f: F, x: &[f64]) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| fd_step(*v)).collect();
    let f0 = f(x);
    let mut hess = vec![vec![0.0; n]; n];
    let mut eval = |shifts: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(k, s) in shifts {
            y[k] += s;
        }
        f(&y)
    };
    for i in 0..n {
        let fp = eval(&[(i, h[i])]);
        let fm = eval(&[(i, -h[i])]);
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = eval(&[(i, h[i]), (j, h[j])]);
            let fpm = eval(&[(i, h[i]), (j, -h[j])]);
            let fmp = eval(&[(i, -h[i]), (j, h[j])]);
            let fmm = eval(&[(i, -h[i]), (j, -h[j])]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Covariance from an observed information matrix (negative Hessian of
/// the log-likelihood).
#[derive(Debug, Clone)]
pub struct Covariance {
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    /// Parameters whose information was singular or indefinite.
    pub affected: Vec<usize>,
}

/// Inverts `info`. When it is not positive definite, the parameters loading
/// on non-positive eigen-directions are excluded, the rest inverted, and
/// excluded entries reported as NaN.
pub fn invert_information(info: &[Vec<f64>]) -> Covariance {
    let n = info.len();
    let mut m = DMatrix::from_fn(n, n, |r, c| info[r][c]);
    m = (&m + m.transpose()) * 0.5;
    if n == 0 {
        return Covariance {
            cov: Vec::new(),
            se: Vec::new(),
            affected: Vec::new(),
        };
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Covariance {
            cov: vec![vec![f64::NAN; n]; n],
            se: vec![f64::NAN; n],
            affected: (0..n).collect(),
        };
    }
    if let Some(ch) = m.clone().cholesky() {
        let inv = ch.inverse();
        return finish(&inv, &(0..n).collect::<Vec<_>>(), n, Vec::new());
    }
    let eig = SymmetricEigen::new(m.clone());
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut affected = Vec::new();
    for (k, ev) in eig.eigenvalues.iter().enumerate() {
        if *ev <= 1e-10 * max_ev {
            for r in 0..n {
                if eig.eigenvectors[(r, k)].abs() > 1e-3 && !affected.contains(&r) {
                    affected.push(r);
                }
            }
        }
    }
    affected.sort_unstable();
    let keep: Vec<usize> = (0..n).filter(|k| !affected.contains(k)).collect();
    let sub = DMatrix::from_fn(keep.len(), keep.len(), |r, c| m[(keep[r], keep[c])]);
    match sub.cholesky() {
        Some(ch) if !keep.is_empty() => finish(&ch.inverse(), &keep, n, affected),
        _ => Covariance {
            cov: vec![vec![f64::NAN; n]; n],
            se: vec![f64::NAN; n],
            affected: (0..n).collect(),
        },
    }
}

fn finish(inv: &DMatrix<f64>, keep: &[usize], n: usize, affected: Vec<usize>) -> Covariance {
    let mut cov = vec![vec![f64::NAN; n]; n];
    for (r, &kr) in keep.iter().enumerate() {
        for (c, &kc) in keep.iter().enumerate() {
            cov[kr][kc] = 0.5 * (inv[(r, c)] + inv[(c, r)]);
        }
    }
    let se = (0..n)
        .map(|k| {
            let v = cov[k][k];
            if v >= 0.0 {
                v.sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    Covariance { cov, se, affected }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_exact() {
        // f = -(2 x^2 + x y + 3 y^2) / 2 + const; information [[2, .5], [.5, 3]]
        let f = |v: &[f64]| -(2.0 * v[0] * v[0] + v[0] * v[1] + 3.0 * v[1] * v[1]) / 2.0 + 10.0;
        let h = numeric_hessian(f, &[0.3, -1.2]);
        let info: Vec<Vec<f64>> = h.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let c = invert_information(&info);
        let det = 2.0 * 3.0 - 0.25;
        let expect = [[3.0 / det, -0.5 / det], [-0.5 / det, 2.0 / det]];
        for r in 0..2 {
            for k in 0..2 {
                assert!((c.cov[r][k] - expect[r][k]).abs() < 1e-6, "{:?}", c.cov);
            }
        }
        assert_eq!(c.cov[0][1], c.cov[1][0]);
        assert!(c.affected.is_empty());
    }

    #[test]
    fn singular_direction_reported() {
        let info = vec![
            vec![4.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let c = invert_information(&info);
        assert_eq!(c.affected, vec![1]);
        assert!(c.se[1].is_nan());
        assert!((c.se[0] - 0.5).abs() < 1e-12);
        assert!((c.se[2] - 1.0).abs() < 1e-12);
    }
}
