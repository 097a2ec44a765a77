//! Minimizers used by the fitting routines: a box-constrained quasi-Newton
//! (BFGS on the free variables, projected backtracking line search) and
//! Brent's method for one-dimensional searches.

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop when `max_j |g_j| * max(1, |x_j|) <= grad_tol * max(1, |f|)`
    /// over the projected gradient.
    pub grad_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative projected gradient at the returned point.
    pub gradient_norm: f64,
    pub message: String,
}

fn projected(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((xi, gi), (l, h))| {
            if (*xi <= *l && *gi > 0.0) || (*xi >= *h && *gi < 0.0) {
                0.0
            } else {
                *gi
            }
        })
        .collect()
}

fn relative_gradient(x: &[f64], pg: &[f64], f: f64) -> f64 {
    let scale = f.abs().max(1.0);
    x.iter()
        .zip(pg)
        .map(|(xi, gi)| gi.abs() * xi.abs().max(1.0))
        .fold(0.0, f64::max)
        / scale
}

/// Minimizes `fg` (returning value and gradient) within `[lo, hi]`.
///
/// Every accepted step decreases the objective. Non-finite objective
/// values are treated as rejections by the line search.
pub fn minimize_box<F>(
    mut fg: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: OptimOptions,
) -> OptimResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let clamp = |x: &mut [f64]| {
        for k in 0..n {
            x[k] = x[k].clamp(lo[k], hi[k]);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let (mut f, mut g) = fg(&x);
    if !f.is_finite() {
        return OptimResult {
            x,
            f,
            grad: g,
            iterations: 0,
            converged: false,
            gradient_norm: f64::NAN,
            message: "objective not finite at the starting point".into(),
        };
    }
    if n == 0 {
        return OptimResult {
            x,
            f,
            grad: g,
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
            message: "no free parameters".into(),
        };
    }
    // inverse Hessian approximation, row-major
    let identity = |scale: f64| {
        let mut h = vec![0.0; n * n];
        for k in 0..n {
            h[k * n + k] = scale;
        }
        h
    };
    let mut h = identity(1.0);
    let mut fresh = true;
    let mut message = String::from("iteration limit reached");
    let mut converged = false;
    let mut iter = 0;

    while iter < opts.max_iter {
        let pg = projected(&x, &g, lo, hi);
        if relative_gradient(&x, &pg, f) <= opts.grad_tol {
            converged = true;
            message = "gradient tolerance reached".into();
            break;
        }
        iter += 1;
        let free: Vec<bool> = pg
            .iter()
            .zip(&g)
            .map(|(p, gi)| *p != 0.0 || *gi == 0.0)
            .collect();
        let mut d = vec![0.0; n];
        for r in 0..n {
            if !free[r] {
                continue;
            }
            d[r] = -(0..n)
                .filter(|c| free[*c])
                .map(|c| h[r * n + c] * g[c])
                .sum::<f64>();
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(1.0);
            fresh = true;
            d = pg.iter().map(|v| -v).collect();
        }
        let dmax = d.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut step = if fresh { (1.0 / dmax).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            clamp(&mut xn);
            let moved: f64 = xn
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((a, b), gi)| (a - b) * gi)
                .sum();
            if xn == x {
                break;
            }
            let (fnew, gnew) = fg(&xn);
            if fnew.is_finite() && fnew <= f + 1e-4 * moved.min(0.0) && fnew <= f {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if !fresh {
                h = identity(1.0);
                fresh = true;
                continue;
            }
            message = "line search failed".into();
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() && sy > 0.0 {
            if fresh {
                h = identity(sy / yy);
                fresh = false;
            }
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n)
                .map(|r| (0..n).map(|c| h[r * n + c] * y[c]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for r in 0..n {
                for c in 0..n {
                    h[r * n + c] += -rho * (hy[r] * s[c] + s[r] * hy[c])
                        + (rho * rho * yhy + rho) * s[r] * s[c];
                }
            }
        }
        let stalled = (f - fnew).abs() <= 1e-15 * f.abs().max(1.0);
        x = xn;
        f = fnew;
        g = gnew;
        if stalled && fresh {
            message = "no further progress".into();
            break;
        }
    }
    let pg = projected(&x, &g, lo, hi);
    let gradient_norm = relative_gradient(&x, &pg, f);
    if !converged && gradient_norm <= opts.grad_tol {
        converged = true;
    }
    OptimResult {
        x,
        f,
        grad: g,
        iterations: iter,
        converged,
        gradient_norm,
        message,
    }
}

/// Brent's method: minimum of `f` on `[a, b]` to absolute tolerance `tol`.
/// Returns `(x, f(x))`.
pub fn brent_minimize<F>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const GOLDEN: f64 = 0.381_966_011_250_105;
    let (mut a, mut b) = if a < b { (a, b) } else { (b, a) };
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol + 1e-10 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        let fu = if fu.is_nan() { f64::INFINITY } else { fu };
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    }

    #[test]
    fn bfgs_rosenbrock() {
        let r = minimize_box(
            rosenbrock,
            &[-1.2, 1.0],
            &[-10.0, -10.0],
            &[10.0, 10.0],
            OptimOptions {
                max_iter: 1000,
                grad_tol: 1e-10,
            },
        );
        assert!(r.converged, "{}", r.message);
        assert!(
            (r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn bfgs_respects_bounds() {
        // minimum of (x - 3)^2 + (y + 1)^2 on [0, 2] x [0, 5] is at (2, 0)
        let fg = |x: &[f64]| {
            (
                (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2),
                vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)],
            )
        };
        let r = minimize_box(
            fg,
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[2.0, 5.0],
            OptimOptions::default(),
        );
        assert!(r.converged, "{}", r.message);
        assert_eq!(r.x, vec![2.0, 0.0]);
    }

    #[test]
    fn bfgs_is_monotone() {
        let mut history = Vec::new();
        let r = minimize_box(
            |x| {
                let v = rosenbrock(x);
                history.push(v.0);
                v
            },
            &[0.5, -0.5],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            OptimOptions::default(),
        );
        assert!(r.f <= history[0]);
    }

    #[test]
    fn brent_quadratic() {
        let (x, fx) = brent_minimize(|x| (x - 0.7).powi(2) + 2.0, -3.0, 5.0, 1e-10, 200);
        assert!((x - 0.7).abs() < 1e-8);
        assert!((fx - 2.0).abs() < 1e-15);
    }
}
