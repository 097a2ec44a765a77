//! Negative binomial log-likelihood and its analytic gradient.

use std::ops::Range;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::CountsPanel;
use crate::error::{Error, Result};
use crate::model::{Design, DispersionKind};
use crate::weights::{kappa_untransform, spatial_weights_dlogrho, SiFamily};

/// Above this size parameter `r = 1/psi` the gamma-function differences
/// switch to their asymptotic expansions.
const LARGE_SIZE: f64 = 1e4;
/// Counts up to this value use exact finite sums for gamma differences.
const SMALL_COUNT: u64 = 50;

#[inline]
fn ln_factorial(y: u64) -> f64 {
    if y <= 20 {
        // exact in u64
        return ((1..=y).product::<u64>() as f64).ln();
    }
    ln_gamma(y as f64 + 1.0)
}

/// `ln Gamma(y + r) - ln Gamma(r) - y ln(r + lambda)`.
fn gamma_ratio_term(y: u64, r: f64, lambda: f64) -> f64 {
    let yf = y as f64;
    if y <= SMALL_COUNT {
        let denom = r + lambda;
        (0..y).map(|k| ((k as f64 - lambda) / denom).ln_1p()).sum()
    } else if r >= LARGE_SIZE {
        let ry = r + yf;
        let corr = (1.0 / ry - 1.0 / r) / 12.0 - (1.0 / ry.powi(3) - 1.0 / r.powi(3)) / 360.0;
        (r - 0.5) * (yf / r).ln_1p() + yf * ((yf - lambda) / (r + lambda)).ln_1p() - yf + corr
    } else {
        ln_gamma(yf + r) - ln_gamma(r) - yf * (r + lambda).ln()
    }
}

/// `digamma(y + r) - digamma(r)`.
fn digamma_diff(y: u64, r: f64) -> f64 {
    let yf = y as f64;
    if y <= SMALL_COUNT {
        (0..y).map(|k| 1.0 / (r + k as f64)).sum()
    } else if r >= LARGE_SIZE {
        let ry = r + yf;
        (yf / r).ln_1p() - 0.5 * (1.0 / ry - 1.0 / r) - (1.0 / (ry * ry) - 1.0 / (r * r)) / 12.0
            + (1.0 / ry.powi(4) - 1.0 / r.powi(4)) / 120.0
    } else {
        digamma(yf + r) - digamma(r)
    }
}

/// Log probability of `y` under a negative binomial with mean `lambda`
/// and overdispersion `psi` (variance `lambda + psi * lambda^2`).
/// `psi = 0` gives the Poisson distribution.
pub fn neg_bin_logpmf(y: u64, lambda: f64, psi: f64) -> f64 {
    nb_terms(y, lambda, psi).0
}

/// `(log pmf, d/d lambda, d/d log(psi))`.
#[inline]
pub(crate) fn nb_terms(y: u64, lambda: f64, psi: f64) -> (f64, f64, f64) {
    let yf = y as f64;
    if !(lambda > 0.0) || !lambda.is_finite() {
        if lambda == 0.0 && y == 0 {
            return (0.0, -1.0, 0.0);
        }
        return (f64::NEG_INFINITY, f64::NAN, f64::NAN);
    }
    if psi == 0.0 {
        let lp = yf * lambda.ln() - lambda - ln_factorial(y);
        return (lp, yf / lambda - 1.0, 0.0);
    }
    let r = 1.0 / psi;
    let lp = gamma_ratio_term(y, r, lambda) + yf * lambda.ln()
        - r * (lambda / r).ln_1p()
        - ln_factorial(y);
    let dlambda = yf / lambda - (yf + r) / (r + lambda);
    let dr = digamma_diff(y, r) - (lambda / r).ln_1p() + (lambda - yf) / (r + lambda);
    (lp, dlambda, -r * dr)
}

/// Default likelihood rows: every week after the first `p`.
pub fn default_rows(design: &Design, panel: &CountsPanel) -> Range<usize> {
    design.order()..panel.n_weeks()
}

fn check_rows(design: &Design, panel: &CountsPanel, rows: &Range<usize>) -> Result<()> {
    if rows.start < design.order() {
        return Err(Error::Data(format!(
            "likelihood rows must start at or after p = {}",
            design.order()
        )));
    }
    if rows.end > panel.n_weeks() || rows.end > design.n_time() || rows.is_empty() {
        return Err(Error::Data(format!(
            "invalid likelihood rows {rows:?} for {} weeks",
            panel.n_weeks()
        )));
    }
    Ok(())
}

/// Conditional log-likelihood summed over `rows` and all units.
/// Non-finite means yield `-inf`.
pub fn log_likelihood(
    design: &Design,
    params: &[f64],
    panel: &CountsPanel,
    rows: Range<usize>,
) -> Result<f64> {
    check_rows(design, panel, &rows)?;
    let state = design.state(params)?;
    let m = design.n_units();
    let mut total = 0.0;
    for t in rows {
        for i in 0..m {
            let (nu, epi) = state.mean_parts(panel.counts(), t, i);
            total += neg_bin_logpmf(panel.count(t, i), nu + epi, state.psi[i]);
        }
    }
    Ok(if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    })
}

/// Log-likelihood with its gradient over the full parameter vector.
///
/// When `with_serial` is false the serial-interval block of the gradient
/// is left at zero (cheaper when those parameters are held fixed).
pub fn log_likelihood_grad(
    design: &Design,
    params: &[f64],
    panel: &CountsPanel,
    rows: Range<usize>,
    with_serial: bool,
) -> Result<(f64, Vec<f64>)> {
    check_rows(design, panel, &rows)?;
    let state = design.state(params)?;
    let layout = design.layout();
    let m = design.n_units();
    let p = state.order();
    let counts = panel.counts();
    let mut grad = vec![0.0; layout.len()];
    let dw = match (design.neighbourhood(), layout.log_rho) {
        (Some(nb), Some(k)) => Some(spatial_weights_dlogrho(params[k].exp(), nb)?),
        _ => None,
    };
    let serial_grad = with_serial && !layout.serial.is_empty();
    // gradient with respect to the normalized lag weights
    let mut g_lag = vec![0.0; p];

    let mut z = vec![0.0; m];
    let mut b = vec![0.0; if serial_grad { p * m } else { 0 }];
    let mut total = 0.0;
    for t in rows {
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = state
                .lag
                .iter()
                .enumerate()
                .map(|(d, u)| u * counts[(t - d - 1) * m + j] as f64)
                .sum();
        }
        if serial_grad {
            for d in 0..p {
                let row = &counts[(t - d - 1) * m..(t - d) * m];
                for i in 0..m {
                    b[d * m + i] = row
                        .iter()
                        .enumerate()
                        .map(|(j, y)| state.spatial[j * m + i] * *y as f64)
                        .sum();
                }
            }
        }
        for i in 0..m {
            let nu = state.nu[t * m + i];
            let phi = state.phi[t * m + i];
            let a: f64 = (0..m).map(|j| state.spatial[j * m + i] * z[j]).sum();
            let lambda = nu + phi * a;
            let psi = state.psi[i];
            let (lp, s, dpsi) = nb_terms(panel.count(t, i), lambda, psi);
            total += lp;
            if !lp.is_finite() {
                continue;
            }
            for (k, term) in design.endemic.iter().enumerate() {
                let x = term.value(t, i);
                if x != 0.0 {
                    grad[layout.endemic.start + k] += s * nu * x;
                }
            }
            if phi > 0.0 {
                for (k, term) in design.epidemic.iter().enumerate() {
                    let x = term.value(t, i);
                    if x != 0.0 {
                        grad[layout.epidemic.start + k] += s * phi * a * x;
                    }
                }
                if let (Some(dw), Some(k)) = (&dw, layout.log_rho) {
                    let da: f64 = (0..m).map(|j| dw[j * m + i] * z[j]).sum();
                    grad[k] += s * phi * da;
                }
                if serial_grad {
                    for d in 0..p {
                        g_lag[d] += s * phi * b[d * m + i];
                    }
                }
            }
            match design.spec.dispersion {
                DispersionKind::Shared => grad[layout.log_psi.start] += dpsi,
                DispersionKind::PerUnit => grad[layout.log_psi.start + i] += dpsi,
                DispersionKind::Poisson => {}
            }
        }
    }
    if total.is_nan() || !total.is_finite() {
        return Ok((f64::NEG_INFINITY, grad));
    }
    if serial_grad {
        chain_serial_gradient(design, params, &state.lag, &g_lag, &mut grad);
    }
    Ok((total, grad))
}

/// Maps the gradient with respect to normalized lag weights onto the
/// serial-interval parameters (transformed kappa or lag logits).
fn chain_serial_gradient(
    design: &Design,
    params: &[f64],
    u: &[f64],
    g_lag: &[f64],
    grad: &mut [f64],
) {
    let layout = design.layout();
    let s = layout.serial.clone();
    let family = design.spec.serial_interval.family;
    let mean_g: f64 = u.iter().zip(g_lag).map(|(a, b)| a * b).sum();
    match family {
        SiFamily::Unrestricted => {
            // u = softmax(0, z_2, ..., z_p)
            for (k, idx) in s.enumerate() {
                let d = k + 1;
                grad[idx] = u[d] * (g_lag[d] - mean_g);
            }
        }
        f if f.is_parametric() => {
            let z = params[s.start];
            let kappa = kappa_untransform(f, z);
            // derivative of the log raw weights with respect to kappa
            let dlog: Vec<f64> = (1..=u.len())
                .map(|d| {
                    let d = d as f64;
                    match f {
                        SiFamily::ShiftedPoisson => (d - 1.0) / kappa,
                        SiFamily::Geometric => 1.0 / kappa - (d - 1.0) / (1.0 - kappa),
                        _ => {
                            let raw = 1.0 - kappa * d;
                            if raw > 0.0 {
                                -d / raw
                            } else {
                                0.0
                            }
                        }
                    }
                })
                .collect();
            let mean_dlog: f64 = u.iter().zip(&dlog).map(|(a, b)| a * b).sum();
            let dkappa_dz = match f {
                SiFamily::ShiftedPoisson => kappa,
                _ => kappa * (1.0 - kappa),
            };
            grad[s.start] = u
                .iter()
                .zip(&dlog)
                .zip(g_lag)
                .map(|((ud, dl), g)| g * ud * (dl - mean_dlog))
                .sum::<f64>()
                * dkappa_dz;
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateTable, IsoWeek, NeighbourhoodMatrix, PopulationShares};
    use crate::model::{InterceptKind, ModelSpec, SpatialKind};
    use crate::weights::SerialIntervalSpec;

    fn naive_nb(y: u64, lambda: f64, psi: f64) -> f64 {
        let y = y as f64;
        if psi == 0.0 {
            return y * lambda.ln() - lambda - ln_gamma(y + 1.0);
        }
        let r = 1.0 / psi;
        ln_gamma(y + r) - ln_gamma(r) - ln_gamma(y + 1.0) - r * (1.0 + psi * lambda).ln()
            + y * (psi * lambda / (1.0 + psi * lambda)).ln()
    }

    #[test]
    fn logpmf_examples() {
        assert!((neg_bin_logpmf(0, 2.0, 0.0) + 2.0).abs() < 1e-15);
        assert!((neg_bin_logpmf(0, 1.0, 1.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logpmf_regimes_agree_with_direct_formula() {
        for &psi in &[1e-3, 0.05, 0.5, 2.0] {
            for &lambda in &[0.3, 4.0, 60.0, 250.0] {
                for &y in &[0u64, 1, 7, 49, 50, 51, 120, 400] {
                    let a = neg_bin_logpmf(y, lambda, psi);
                    let b = naive_nb(y, lambda, psi);
                    assert!(
                        (a - b).abs() < 1e-9 * b.abs().max(1.0),
                        "{y} {lambda} {psi}: {a} {b}"
                    );
                }
            }
        }
        // large size parameter approaches the Poisson limit smoothly
        for &y in &[0u64, 3, 80, 300] {
            let a = neg_bin_logpmf(y, 90.0, 1e-9);
            let b = neg_bin_logpmf(y, 90.0, 0.0);
            assert!((a - b).abs() < 1e-4, "{y}: {a} {b}");
        }
    }

    #[test]
    fn logpmf_sums_to_one() {
        for &(lambda, psi) in &[(3.0, 0.5), (10.0, 0.0), (0.7, 2.0)] {
            let total: f64 = (0..2000)
                .map(|y| neg_bin_logpmf(y, lambda, psi).exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-10, "{total}");
        }
    }

    #[test]
    fn nb_derivatives_match_finite_differences() {
        for &y in &[0u64, 4, 75] {
            for &(lambda, psi) in &[(2.0, 0.3), (40.0, 1e-5), (90.0, 0.8)] {
                let (_, dl, dpsi) = nb_terms(y, lambda, psi);
                let h = 1e-6;
                let fd_l = (neg_bin_logpmf(y, lambda * (1.0 + h), psi)
                    - neg_bin_logpmf(y, lambda * (1.0 - h), psi))
                    / (2.0 * h * lambda);
                let fd_p = (neg_bin_logpmf(y, lambda, psi * h.exp())
                    - neg_bin_logpmf(y, lambda, psi * (-h).exp()))
                    / (2.0 * h);
                assert!((dl - fd_l).abs() < 1e-6 * (1.0 + dl.abs()), "{dl} {fd_l}");
                assert!(
                    (dpsi - fd_p).abs() < 1e-5 * (1.0 + dpsi.abs()),
                    "{y} {lambda} {psi}: {dpsi} {fd_p}"
                );
            }
        }
    }

    #[test]
    fn endemic_only_zero_counts() {
        let panel =
            CountsPanel::from_rows(IsoWeek::new(2001, 1).unwrap(), &vec![vec![0]; 5]).unwrap();
        let mut spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        spec.dispersion = DispersionKind::Poisson;
        spec.epidemic.enabled = false;
        let d = Design::simple(&spec, &panel).unwrap();
        let v = vec![0.0; d.layout().len()];
        let ll = log_likelihood(&d, &v, &panel, 1..5).unwrap();
        assert!((ll + 4.0).abs() < 1e-15);
    }

    fn fd_grad(d: &Design, v: &[f64], panel: &CountsPanel) -> Vec<f64> {
        let rows = default_rows(d, panel);
        (0..v.len())
            .map(|k| {
                let h = 1e-6;
                let mut a = v.to_vec();
                let mut b = v.to_vec();
                a[k] += h;
                b[k] -= h;
                (log_likelihood(d, &a, panel, rows.clone()).unwrap()
                    - log_likelihood(d, &b, panel, rows.clone()).unwrap())
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let rows: Vec<Vec<u64>> = (0..40)
            .map(|t| vec![(t * 7 % 11) as u64, (t * 3 % 5) as u64 + 1, (t % 4) as u64])
            .collect();
        let panel = CountsPanel::from_rows(IsoWeek::new(2010, 1).unwrap(), &rows).unwrap();
        let nb = NeighbourhoodMatrix::chain(3);
        let pops = PopulationShares::from_values(&[1.0, 2.0, 3.0]).unwrap();
        let families = [
            SerialIntervalSpec::fixed(1),
            SerialIntervalSpec::parametric(SiFamily::Geometric, 4, 0.4),
            SerialIntervalSpec::parametric(SiFamily::ShiftedPoisson, 4, 1.3),
            SerialIntervalSpec::parametric(SiFamily::Triangular, 4, 0.2),
            SerialIntervalSpec::unrestricted(vec![0.3, -0.5, -1.0]),
        ];
        for si in families {
            for dispersion in [
                DispersionKind::Shared,
                DispersionKind::PerUnit,
                DispersionKind::Poisson,
            ] {
                let mut spec = ModelSpec::constant(si.clone());
                spec.endemic.intercept = InterceptKind::PerUnit;
                spec.endemic.harmonics = 1;
                spec.endemic.covariates = vec!["christmas".into()];
                spec.epidemic.gravity = true;
                spec.epidemic.harmonics = 1;
                spec.spatial = SpatialKind::PowerLaw;
                spec.dispersion = dispersion;
                let d = Design::new(
                    &spec,
                    &panel,
                    &CovariateTable::new(),
                    Some(&nb),
                    Some(&pops),
                    40,
                )
                .unwrap();
                let mut v = d.initial_values(&panel);
                for (k, x) in v.iter_mut().enumerate() {
                    *x += 0.1 * ((k * 37 % 7) as f64 - 3.0) / 3.0;
                }
                let (ll, g) =
                    log_likelihood_grad(&d, &v, &panel, default_rows(&d, &panel), true).unwrap();
                let ll2 = log_likelihood(&d, &v, &panel, default_rows(&d, &panel)).unwrap();
                assert!((ll - ll2).abs() < 1e-9 * ll.abs());
                let fd = fd_grad(&d, &v, &panel);
                for k in 0..v.len() {
                    assert!(
                        (g[k] - fd[k]).abs() < 1e-5 * (1.0 + fd[k].abs()),
                        "{:?} {}: analytic {} fd {}",
                        si.family,
                        d.layout().names[k],
                        g[k],
                        fd[k]
                    );
                }
            }
        }
    }
}
