//! Browser bindings for a univariate endemic-epidemic model:
//! lag-weight shapes, simulation with a forecast fan, and the profile
//! likelihood of the serial-interval parameter.
//!
//! Everything crosses the boundary as numbers, strings or flat `f64`
//! arrays so the functions are callable (and tested) natively as well.

use wasm_bindgen::prelude::*;

use endemic::data::{CountsPanel, IsoWeek};
use endemic::forecast::{path_quantiles, simulate_counts, simulate_paths};
use endemic::inference::{profile_curve, profile_domain, FitOptions};
use endemic::model::{Design, DispersionKind, ModelSpec};
use endemic::weights::{kappa_transform, kappa_untransform, SerialIntervalSpec, SiFamily};

/// Quantile levels of the forecast fan.
pub const FAN_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

fn family(name: &str) -> Result<SiFamily, String> {
    match name {
        "fixed" => Ok(SiFamily::Fixed),
        "poisson" | "shifted_poisson" => Ok(SiFamily::ShiftedPoisson),
        "triangular" => Ok(SiFamily::Triangular),
        "geometric" => Ok(SiFamily::Geometric),
        other => Err(format!("unknown family {other:?}")),
    }
}

fn serial(name: &str, order: usize, kappa: f64) -> Result<SerialIntervalSpec, String> {
    let f = family(name)?;
    Ok(match f {
        SiFamily::Fixed => SerialIntervalSpec::fixed(order),
        _ => SerialIntervalSpec::parametric(f, order, kappa),
    })
}

/// Normalized weights `u_1..u_p`.
#[wasm_bindgen]
pub fn lag_weights(family: &str, order: usize, kappa: f64) -> Result<Vec<f64>, String> {
    let si = serial(family, order, kappa)?;
    endemic::weights::lag_weights(&si).map_err(|e| e.to_string())
}

/// Univariate model with constant `nu`, `phi` and dispersion `psi`.
struct Univariate {
    design: Design,
    params: Vec<f64>,
}

fn univariate(
    counts: &[u64],
    n_time: usize,
    si: SerialIntervalSpec,
    nu: f64,
    phi: f64,
    psi: f64,
) -> Result<(Univariate, CountsPanel), String> {
    if !(nu > 0.0 && phi >= 0.0 && psi >= 0.0) {
        return Err("need nu > 0, phi >= 0 and psi >= 0".into());
    }
    let mut spec = ModelSpec::constant(si.clone());
    if psi == 0.0 {
        spec.dispersion = DispersionKind::Poisson;
    }
    if phi == 0.0 {
        spec.epidemic.enabled = false;
    }
    let start = IsoWeek::new(2000, 1).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<u64>> = counts.iter().map(|y| vec![*y]).collect();
    let panel = CountsPanel::from_rows(start, &rows).map_err(|e| e.to_string())?;
    let design = Design::new(&spec, &panel, &Default::default(), None, None, n_time)
        .map_err(|e| e.to_string())?;
    let layout = design.layout();
    let mut params = vec![0.0; layout.len()];
    let mut set = |name: &str, v: f64| {
        if let Some(k) = layout.index(name) {
            params[k] = v;
        }
    };
    set("end.alpha", nu.ln());
    set("epi.alpha", phi.ln());
    set("log_psi", psi.ln());
    if layout.serial.len() == 1 {
        let z =
            kappa_transform(si.family, si.kappa.unwrap_or(f64::NAN)).map_err(|e| e.to_string())?;
        params[layout.serial.start] = z;
    }
    Ok((Univariate { design, params }, panel))
}

/// Simulates `weeks` counts (returned as floats for JavaScript).
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    family: &str,
    order: usize,
    kappa: f64,
    nu: f64,
    phi: f64,
    psi: f64,
    weeks: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    if weeks < 2 {
        return Err("need at least two weeks".into());
    }
    let si = serial(family, order, kappa)?;
    let zeros = vec![0; weeks];
    let (m, _) = univariate(&zeros, weeks, si, nu, phi, psi)?;
    let y = simulate_counts(&m.design, &m.params, weeks, None, seed).map_err(|e| e.to_string())?;
    Ok(y.into_iter().map(|v| v as f64).collect())
}

/// Quantiles of the `horizon`-week predictive distribution after the last
/// observed count, by simulation. Flat `horizon x 5` array, levels
/// [`FAN_LEVELS`].
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn forecast_fan(
    counts: Vec<f64>,
    family: &str,
    order: usize,
    kappa: f64,
    nu: f64,
    phi: f64,
    psi: f64,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let y = to_counts(&counts)?;
    if horizon == 0 || n_paths == 0 {
        return Err("horizon and path count must be positive".into());
    }
    let si = serial(family, order, kappa)?;
    let n = y.len();
    let (m, panel) = univariate(&y, n + horizon, si, nu, phi, psi)?;
    let paths = simulate_paths(&m.design, &m.params, &panel, n - 1, horizon, n_paths, seed)
        .map_err(|e| e.to_string())?;
    let q = path_quantiles(&paths, 1, &FAN_LEVELS);
    Ok(q.into_iter()
        .flat_map(|step| step.into_iter().flatten())
        .collect())
}

fn to_counts(counts: &[f64]) -> Result<Vec<u64>, String> {
    if counts.len() < 2 {
        return Err("need at least two counts".into());
    }
    counts
        .iter()
        .map(|&c| {
            if c >= 0.0 && c.fract() == 0.0 && c < 9.0e15 {
                Ok(c as u64)
            } else {
                Err(format!("invalid count {c}"))
            }
        })
        .collect()
}

/// Profile log-likelihood of `kappa` on an evenly spaced grid over the
/// family's search domain, maximized over `nu`, `phi` and `psi`. Flat
/// `(kappa, loglik)` pairs.
#[wasm_bindgen]
pub fn profile(
    counts: Vec<f64>,
    family: &str,
    order: usize,
    points: usize,
) -> Result<Vec<f64>, String> {
    let y = to_counts(&counts)?;
    let f = self::family(family)?;
    if !f.is_parametric() {
        return Err("profile needs a parametric family".into());
    }
    if points < 2 {
        return Err("need at least two grid points".into());
    }
    let si = SerialIntervalSpec::parametric(f, order, 0.5);
    let (m, panel) = univariate(&y, y.len(), si, 1.0, 0.5, 0.1)?;
    let (lo, hi) = profile_domain(f, order);
    let kappas: Vec<f64> = (0..points)
        .map(|k| kappa_untransform(f, lo + (hi - lo) * k as f64 / (points - 1) as f64))
        .collect();
    let opts = FitOptions {
        standard_errors: false,
        ..Default::default()
    };
    let curve = profile_curve(&m.design, &panel, &kappas, &opts).map_err(|e| e.to_string())?;
    Ok(curve.iter().flat_map(|p| [p.kappa, p.loglik]).collect())
}
