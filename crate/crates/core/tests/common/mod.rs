//! Reference implementations used as test oracles. Written directly from
//! the model formulas with plain loops and no shared code paths beyond the
//! data containers.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::ln_gamma;

use endemic::weights::SiFamily;

/// Unnormalized then normalized lag weights by direct evaluation.
pub fn oracle_lag_weights(family: SiFamily, kappa: f64, p: usize, logits: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = (1..=p)
        .map(|d| match family {
            SiFamily::Fixed => {
                if d == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            SiFamily::ShiftedPoisson => {
                let mut fact = 1.0;
                for k in 1..d {
                    fact *= k as f64;
                }
                kappa.powi(d as i32 - 1) / fact * (-kappa).exp()
            }
            SiFamily::Triangular => (1.0 - kappa * d as f64).max(0.0),
            SiFamily::Geometric => (1.0 - kappa).powi(d as i32 - 1) * kappa,
            SiFamily::Unrestricted => {
                if d == 1 {
                    1.0
                } else {
                    logits[d - 2].exp()
                }
            }
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|u| u / s).collect()
}

/// Row-normalized power-law weights from path distances, row-major.
pub fn oracle_spatial(order: &dyn Fn(usize, usize) -> u32, m: usize, rho: f64) -> Vec<f64> {
    let mut w = vec![0.0; m * m];
    for j in 0..m {
        let mut s = 0.0;
        for i in 0..m {
            let v = (order(j, i) as f64 + 1.0).powf(-rho);
            w[j * m + i] = v;
            s += v;
        }
        for i in 0..m {
            w[j * m + i] /= s;
        }
    }
    w
}

/// Negative binomial log pmf straight from the gamma-function form.
pub fn naive_logpmf(y: u64, lambda: f64, psi: f64) -> f64 {
    let yf = y as f64;
    if psi == 0.0 {
        return yf * lambda.ln() - lambda - ln_gamma(yf + 1.0);
    }
    let r = 1.0 / psi;
    ln_gamma(yf + r) - ln_gamma(r) - ln_gamma(yf + 1.0)
        + r * (r / (r + lambda)).ln()
        + yf * (lambda / (r + lambda)).ln()
}

pub fn harmonic(k: usize, t_index: usize, period: f64) -> (f64, f64) {
    let a = 2.0 * PI * k as f64 * t_index as f64 / period;
    (a.sin(), a.cos())
}

pub fn draw_nb(rng: &mut ChaCha8Rng, lambda: f64, psi: f64) -> u64 {
    let rate = if psi > 0.0 {
        Gamma::new(1.0 / psi, psi * lambda).unwrap().sample(rng)
    } else {
        lambda
    };
    if rate <= 0.0 {
        0
    } else {
        Poisson::new(rate).unwrap().sample(rng) as u64
    }
}

/// Univariate series with constant `nu`, `phi`, truncated normalized
/// lag weights `u` and NB noise. Starts from zeros and drops `burn` rows.
pub fn simulate_univariate(
    nu: f64,
    phi: f64,
    u: &[f64],
    psi: f64,
    n: usize,
    burn: usize,
    seed: u64,
) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = u.len();
    let mut y = vec![0u64; p];
    for t in p..n + burn + p {
        let lam = nu + phi * (1..=p).map(|d| u[d - 1] * y[t - d] as f64).sum::<f64>();
        y.push(draw_nb(&mut rng, lam, psi));
    }
    y.split_off(burn + p)
}

/// Random geometric-ish series used where the exact shape does not matter.
pub fn random_counts(rng: &mut ChaCha8Rng, n: usize, max: u64) -> Vec<u64> {
    (0..n).map(|_| rng.random_range(0..=max)).collect()
}
