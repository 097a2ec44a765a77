//! Maximum likelihood fitting: inner optimization with the serial interval
//! held fixed, profile search over the serial-interval parameter(s), joint
//! polishing, numeric standard errors and order selection.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::CountsPanel;
use crate::error::{Error, Result};
use crate::inference::hessian::{invert_information, numeric_hessian};
use crate::inference::likelihood::{default_rows, log_likelihood, log_likelihood_grad};
use crate::inference::optim::{brent_minimize, minimize_box, OptimOptions};
use crate::model::{CoefficientSet, Design, ModelSpec, EPIDEMIC_INTERCEPT_FLOOR, PSI_FLOOR};
use crate::par;
use crate::weights::{kappa_untransform, SerialIntervalSpec, SiFamily};

/// Version tag written into serialized fit reports.
pub const FIT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// First likelihood row (0-based); defaults to `p`.
    pub first_row: Option<usize>,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Grid size seeding the one-dimensional profile search.
    pub grid_points: usize,
    /// Random starts for the unrestricted family (in addition to the
    /// geometric initialization).
    pub random_starts: usize,
    pub seed: u64,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            first_row: None,
            max_iter: 500,
            grad_tol: 1e-6,
            grid_points: 21,
            random_starts: 5,
            seed: 1,
            standard_errors: true,
        }
    }
}

impl FitOptions {
    fn optim(&self) -> OptimOptions {
        OptimOptions {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
        }
    }

    fn rows(&self, design: &Design, panel: &CountsPanel) -> Range<usize> {
        match self.first_row {
            Some(s) => s..panel.n_weeks(),
            None => default_rows(design, panel),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub notes: Vec<String>,
}

/// One point of a profile-likelihood curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    /// Serial-interval parameter on the estimation scale.
    pub z: f64,
    pub kappa: f64,
    pub loglik: f64,
    pub converged: bool,
}

/// A local optimum visited by the outer search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimum {
    pub start: String,
    pub serial: Vec<f64>,
    pub loglik: f64,
}

/// Result of maximizing over the inner parameters.
#[derive(Debug, Clone)]
pub struct InnerFit {
    /// Full parameter vector (serial block as given).
    pub params: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    /// Model specification with the estimated serial interval filled in.
    pub spec: ModelSpec,
    pub coefficients: CoefficientSet,
    #[serde(with = "nan_vec")]
    pub se: Vec<f64>,
    #[serde(with = "nan_matrix")]
    pub cov: Vec<Vec<f64>>,
    pub loglik: f64,
    pub aic: f64,
    pub n_free: usize,
    pub n_obs: usize,
    /// Likelihood rows (0-based, half open).
    pub rows: (usize, usize),
    pub lag_weights: Vec<f64>,
    pub kappa: Option<f64>,
    #[serde(with = "nan_opt")]
    pub kappa_se: Option<f64>,
    pub rho: Option<f64>,
    pub psi: Vec<f64>,
    pub convergence: Convergence,
    pub profile: Vec<ProfilePoint>,
    pub local_optima: Vec<LocalOptimum>,
}

impl FittedModel {
    pub fn params(&self) -> &[f64] {
        &self.coefficients.values
    }

    /// `(name, estimate, se)` rows.
    pub fn coefficient_table(&self) -> Vec<(String, f64, f64)> {
        self.coefficients
            .names
            .iter()
            .zip(&self.coefficients.values)
            .zip(&self.se)
            .map(|((n, v), s)| (n.clone(), *v, *s))
            .collect()
    }

    pub fn se_of(&self, name: &str) -> Option<f64> {
        self.coefficients
            .names
            .iter()
            .position(|n| n == name)
            .map(|k| self.se[k])
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FittedModel =
            serde_json::from_str(s).map_err(|e| Error::Data(format!("fit report: {e}")))?;
        if f.format_version != FIT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported fit report version {}",
                f.format_version
            )));
        }
        Ok(f)
    }
}

fn neg_loglik_inner(
    design: &Design,
    panel: &CountsPanel,
    rows: &Range<usize>,
    full: &mut [f64],
    inner: &[f64],
) -> (f64, Vec<f64>) {
    let n_inner = inner.len();
    full[..n_inner].copy_from_slice(inner);
    match log_likelihood_grad(design, full, panel, rows.clone(), false) {
        Ok((ll, g)) if ll.is_finite() => (-ll, g[..n_inner].iter().map(|v| -v).collect()),
        _ => (f64::INFINITY, vec![0.0; n_inner]),
    }
}

/// Maximizes the likelihood over everything except the serial-interval
/// block, which is copied from `start`.
pub fn fit_inner(
    design: &Design,
    panel: &CountsPanel,
    start: &[f64],
    opts: &FitOptions,
) -> Result<InnerFit> {
    let rows = opts.rows(design, panel);
    fit_inner_rows(design, panel, start, &rows, opts)
}

fn fit_inner_rows(
    design: &Design,
    panel: &CountsPanel,
    start: &[f64],
    rows: &Range<usize>,
    opts: &FitOptions,
) -> Result<InnerFit> {
    let layout = design.layout();
    if start.len() != layout.len() {
        return Err(Error::Domain(format!(
            "expected {} start values, got {}",
            layout.len(),
            start.len()
        )));
    }
    // validates rows and parameter count once
    log_likelihood(design, start, panel, rows.clone())?;
    let n_inner = layout.n_inner();
    let (lo, hi) = layout.bounds();
    let mut full = start.to_vec();
    let res = minimize_box(
        |x| neg_loglik_inner(design, panel, rows, &mut full, x),
        &start[..n_inner],
        &lo[..n_inner],
        &hi[..n_inner],
        opts.optim(),
    );
    let mut params = start.to_vec();
    params[..n_inner].copy_from_slice(&res.x);
    Ok(InnerFit {
        params,
        loglik: -res.f,
        converged: res.converged,
        iterations: res.iterations,
        gradient_norm: res.gradient_norm,
    })
}

/// Joint maximization over all parameters, starting at `start`.
fn fit_joint(
    design: &Design,
    panel: &CountsPanel,
    start: &[f64],
    rows: &Range<usize>,
    opts: &FitOptions,
) -> InnerFit {
    let (lo, hi) = design.layout().bounds();
    let res = minimize_box(
        |x| match log_likelihood_grad(design, x, panel, rows.clone(), true) {
            Ok((ll, g)) if ll.is_finite() => (-ll, g.iter().map(|v| -v).collect()),
            _ => (f64::INFINITY, vec![0.0; x.len()]),
        },
        start,
        &lo,
        &hi,
        opts.optim(),
    );
    InnerFit {
        loglik: -res.f,
        params: res.x,
        converged: res.converged,
        iterations: res.iterations,
        gradient_norm: res.gradient_norm,
    }
}

/// Range searched by the profile grid on the estimation scale.
pub fn profile_domain(family: SiFamily, order: usize) -> (f64, f64) {
    match family {
        SiFamily::ShiftedPoisson => (-5.0, (2.0 * order as f64).max(2.0).ln()),
        _ => (-6.0, 6.0),
    }
}

/// Profile log-likelihood at serial-interval value `z` (estimation scale),
/// optionally warm-started from `start`.
pub fn profile_point(
    design: &Design,
    panel: &CountsPanel,
    z: f64,
    start: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<InnerFit> {
    let layout = design.layout();
    if layout.serial.len() != 1 {
        return Err(Error::Domain(
            "profile points need a one-parameter serial interval".into(),
        ));
    }
    let mut x = match start {
        Some(s) => s.to_vec(),
        None => design.initial_values(panel),
    };
    x[layout.serial.start] = z;
    fit_inner(design, panel, &x, opts)
}

/// Profile log-likelihood curve over `kappas` (natural scale), each point
/// warm-started from the previous one.
pub fn profile_curve(
    design: &Design,
    panel: &CountsPanel,
    kappas: &[f64],
    opts: &FitOptions,
) -> Result<Vec<ProfilePoint>> {
    let family = design.spec().serial_interval.family;
    let mut out = Vec::with_capacity(kappas.len());
    let mut warm: Option<Vec<f64>> = None;
    for &kappa in kappas {
        let z = crate::weights::kappa_transform(family, kappa)?;
        let fit = profile_point(design, panel, z, warm.as_deref(), opts)?;
        out.push(ProfilePoint {
            z,
            kappa,
            loglik: fit.loglik,
            converged: fit.converged,
        });
        warm = Some(fit.params);
    }
    Ok(out)
}

struct Outer {
    best: InnerFit,
    profile: Vec<ProfilePoint>,
    optima: Vec<LocalOptimum>,
    notes: Vec<String>,
}

fn outer_parametric(
    design: &Design,
    panel: &CountsPanel,
    rows: &Range<usize>,
    opts: &FitOptions,
) -> Result<Outer> {
    let family = design.spec().serial_interval.family;
    let (a, b) = profile_domain(family, design.order());
    let n = opts.grid_points.max(3);
    let k = design.layout().serial.start;
    let grid: Vec<f64> = (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect();

    let mut fits: Vec<InnerFit> = Vec::with_capacity(n);
    let mut warm = design.initial_values(panel);
    for &z in &grid {
        warm[k] = z;
        let fit = fit_inner_rows(design, panel, &warm, rows, opts)?;
        warm = fit.params.clone();
        fits.push(fit);
    }
    let profile: Vec<ProfilePoint> = grid
        .iter()
        .zip(&fits)
        .map(|(z, f)| ProfilePoint {
            z: *z,
            kappa: kappa_untransform(family, *z),
            loglik: f.loglik,
            converged: f.converged,
        })
        .collect();

    let ll: Vec<f64> = fits.iter().map(|f| f.loglik).collect();
    let maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || ll[i] >= ll[i - 1];
            let right = i == n - 1 || ll[i] > ll[i + 1];
            left && right && ll[i].is_finite()
        })
        .collect();
    if maxima.is_empty() {
        return Err(Error::Convergence(
            "profile likelihood is not finite anywhere on the grid".into(),
        ));
    }

    let mut optima = Vec::new();
    let mut best: Option<InnerFit> = None;
    for &i in &maxima {
        let lo_z = grid[i.saturating_sub(1)];
        let hi_z = grid[(i + 1).min(n - 1)];
        let seed_params = fits[i].params.clone();
        let mut eval = |z: f64| -> f64 {
            let mut x = seed_params.clone();
            x[k] = z;
            fit_inner_rows(design, panel, &x, rows, opts)
                .map(|f| -f.loglik)
                .unwrap_or(f64::INFINITY)
        };
        let (z, _) = brent_minimize(&mut eval, lo_z, hi_z, 1e-6, 100);
        let mut x = seed_params.clone();
        x[k] = z;
        let mut fit = fit_inner_rows(design, panel, &x, rows, opts)?;
        if fits[i].loglik > fit.loglik {
            fit = fits[i].clone();
        }
        optima.push(LocalOptimum {
            start: format!("grid {}", grid[i]),
            serial: vec![fit.params[k]],
            loglik: fit.loglik,
        });
        if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
            best = Some(fit);
        }
    }
    let mut notes = Vec::new();
    if optima.len() > 1 {
        notes.push(format!(
            "profile likelihood has {} local maxima on the grid",
            optima.len()
        ));
    }
    Ok(Outer {
        best: best.expect("at least one maximum"),
        profile,
        optima,
        notes,
    })
}

fn outer_unrestricted(
    design: &Design,
    panel: &CountsPanel,
    rows: &Range<usize>,
    opts: &FitOptions,
) -> Result<Outer> {
    let p = design.order();
    let serial = design.layout().serial.clone();
    let mut starts: Vec<(String, Vec<f64>)> = Vec::new();

    // geometric initialization
    let geo_design =
        design.with_serial_interval(SerialIntervalSpec::parametric(SiFamily::Geometric, p, 0.5))?;
    let geo_opts = FitOptions {
        standard_errors: false,
        ..opts.clone()
    };
    if let Ok(geo) = fit_rows(&geo_design, panel, rows, &geo_opts) {
        let w: Vec<f64> = geo.lag_weights.iter().map(|w| w.max(1e-8)).collect();
        let si = SerialIntervalSpec::unrestricted_from_weights(&w)?;
        starts.push(("geometric".into(), si.logits));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for r in 0..opts.random_starts {
        let logits: Vec<f64> = (1..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        starts.push((format!("random {}", r + 1), logits));
    }

    let base = design.initial_values(panel);
    let results = par::map(&starts, |(_, logits)| -> Result<InnerFit> {
        let mut x = base.clone();
        x[serial.clone()].copy_from_slice(logits);
        let inner = fit_inner_rows(design, panel, &x, rows, opts)?;
        Ok(fit_joint(design, panel, &inner.params, rows, opts))
    });

    let mut optima = Vec::new();
    let mut best: Option<InnerFit> = None;
    let mut notes = Vec::new();
    for ((label, _), res) in starts.iter().zip(results) {
        match res {
            Ok(fit) => {
                optima.push(LocalOptimum {
                    start: label.clone(),
                    serial: fit.params[serial.clone()].to_vec(),
                    loglik: fit.loglik,
                });
                if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
                    best = Some(fit);
                }
            }
            Err(e) => notes.push(format!("start {label} failed: {e}")),
        }
    }
    let best = best.ok_or_else(|| Error::Convergence("all starting values failed".into()))?;
    let distinct = optima
        .iter()
        .filter(|o| (o.loglik - best.loglik).abs() > 1e-4)
        .count();
    if distinct > 0 {
        notes.push(format!(
            "{distinct} start(s) ended at a lower local optimum"
        ));
    }
    Ok(Outer {
        best,
        profile: Vec::new(),
        optima,
        notes,
    })
}

/// Full fit: profile search over the serial interval (if it has free
/// parameters), joint polishing, and numeric standard errors.
pub fn fit_profile(design: &Design, panel: &CountsPanel, opts: &FitOptions) -> Result<FittedModel> {
    let rows = opts.rows(design, panel);
    fit_rows(design, panel, &rows, opts)
}

fn fit_rows(
    design: &Design,
    panel: &CountsPanel,
    rows: &Range<usize>,
    opts: &FitOptions,
) -> Result<FittedModel> {
    let layout = design.layout();
    let family = design.spec().serial_interval.family;
    let outer = if layout.serial.is_empty() {
        let x0 = design.initial_values(panel);
        Outer {
            best: fit_inner_rows(design, panel, &x0, rows, opts)?,
            profile: Vec::new(),
            optima: Vec::new(),
            notes: Vec::new(),
        }
    } else if family == SiFamily::Unrestricted {
        outer_unrestricted(design, panel, rows, opts)?
    } else {
        outer_parametric(design, panel, rows, opts)?
    };
    let Outer {
        best,
        profile,
        optima,
        mut notes,
    } = outer;

    // polish jointly so the reported point is a stationary point of the
    // full likelihood
    let best = if layout.serial.is_empty() {
        best
    } else {
        let joint = fit_joint(design, panel, &best.params, rows, opts);
        if joint.loglik >= best.loglik {
            joint
        } else {
            best
        }
    };
    finish(design, panel, rows, best, profile, optima, &mut notes, opts)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    design: &Design,
    panel: &CountsPanel,
    rows: &Range<usize>,
    best: InnerFit,
    profile: Vec<ProfilePoint>,
    local_optima: Vec<LocalOptimum>,
    notes: &mut Vec<String>,
    opts: &FitOptions,
) -> Result<FittedModel> {
    let layout = design.layout();
    let (lo, _) = layout.bounds();
    let x = best.params;
    for &k in &layout.epidemic_intercepts {
        if x[k] <= EPIDEMIC_INTERCEPT_FLOOR + 1e-6 {
            notes.push(format!(
                "{} reached its lower bound {EPIDEMIC_INTERCEPT_FLOOR}; the epidemic component is negligible",
                layout.names[k]
            ));
        }
    }
    for k in layout.log_psi.clone() {
        if x[k] <= lo[k] + 1e-6 {
            notes.push(format!(
                "{} reached the lower bound psi = {PSI_FLOOR}: Poisson limit",
                layout.names[k]
            ));
        }
    }
    if !best.converged {
        notes.push("optimizer stopped before reaching the gradient tolerance".into());
    }

    let n = x.len();
    let (cov, se) = if opts.standard_errors {
        let h = numeric_hessian(
            |v| log_likelihood(design, v, panel, rows.clone()).unwrap_or(f64::NEG_INFINITY),
            &x,
        );
        let info: Vec<Vec<f64>> = h.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let c = invert_information(&info);
        if !c.affected.is_empty() {
            let names: Vec<&str> = c
                .affected
                .iter()
                .map(|k| layout.names[*k].as_str())
                .collect();
            notes.push(format!(
                "observed information not positive definite; no standard errors for {}",
                names.join(", ")
            ));
        }
        (c.cov, c.se)
    } else {
        (vec![vec![f64::NAN; n]; n], vec![f64::NAN; n])
    };

    let si = design.serial_interval_at(&x);
    let spec = design.spec().with_serial_interval(si.clone());
    let (kappa, kappa_se) = match (si.family.is_parametric(), layout.serial.len()) {
        (true, 1) => {
            let k = si.kappa.expect("parametric kappa");
            let dk = match si.family {
                SiFamily::ShiftedPoisson => k,
                _ => k * (1.0 - k),
            };
            (Some(k), Some(se[layout.serial.start] * dk))
        }
        _ => (None, None),
    };
    let n_free = n;
    let m = design.n_units();
    Ok(FittedModel {
        format_version: FIT_FORMAT_VERSION,
        spec,
        coefficients: design.coefficient_set(&x),
        se,
        cov,
        loglik: best.loglik,
        aic: -2.0 * best.loglik + 2.0 * n_free as f64,
        n_free,
        n_obs: rows.len() * m,
        rows: (rows.start, rows.end),
        lag_weights: design.lag_weights_at(&x)?,
        kappa,
        kappa_se,
        rho: layout.log_rho.map(|k| x[k].exp()),
        psi: design.psi_at(&x),
        convergence: Convergence {
            converged: best.converged,
            iterations: best.iterations,
            gradient_norm: best.gradient_norm,
            notes: std::mem::take(notes),
        },
        profile,
        local_optima,
    })
}

/// One row of an AIC-versus-order trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTrace {
    pub order: usize,
    pub loglik: f64,
    pub aic: f64,
    pub n_free: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    pub chosen: usize,
    pub trace: Vec<OrderTrace>,
}

/// AIC changes below this are treated as negligible for parametric families.
pub const AIC_FLAT: f64 = 0.1;

/// Fits orders `1..=p_max` on the common rows `p_max..T` and picks one.
///
/// Parametric families take the smallest `p` with
/// `|AIC(p) - AIC(p+1)| < 0.1`, the unrestricted family the minimum AIC
/// and the fixed family always `p = 1`.
pub fn select_order(
    design: &Design,
    panel: &CountsPanel,
    p_max: usize,
    opts: &FitOptions,
) -> Result<OrderSelection> {
    let t_len = panel.n_weeks();
    if p_max == 0 || p_max > t_len / 4 {
        return Err(Error::Config(format!(
            "maximum order {p_max} must be between 1 and T/4 = {}",
            t_len / 4
        )));
    }
    let si = &design.spec().serial_interval;
    let family = si.family;
    if family == SiFamily::Fixed || !design.spec().epidemic.enabled {
        return Ok(OrderSelection {
            chosen: 1,
            trace: Vec::new(),
        });
    }
    let opts = FitOptions {
        first_row: Some(p_max),
        standard_errors: false,
        ..opts.clone()
    };
    let mut trace = Vec::with_capacity(p_max);
    for p in 1..=p_max {
        let spec = match family {
            SiFamily::Unrestricted => SerialIntervalSpec::unrestricted(vec![0.0; p - 1]),
            f => SerialIntervalSpec {
                family: f,
                order: p,
                kappa: si.kappa,
                logits: Vec::new(),
            },
        };
        let d = design.with_serial_interval(spec)?;
        let fit = fit_profile(&d, panel, &opts)?;
        trace.push(OrderTrace {
            order: p,
            loglik: fit.loglik,
            aic: fit.aic,
            n_free: fit.n_free,
            converged: fit.convergence.converged,
        });
    }
    let chosen = if family == SiFamily::Unrestricted {
        trace
            .iter()
            .min_by(|a, b| a.aic.total_cmp(&b.aic))
            .map(|r| r.order)
            .unwrap_or(1)
    } else {
        trace
            .windows(2)
            .find(|w| (w[0].aic - w[1].aic).abs() < AIC_FLAT)
            .map(|w| w[0].order)
            .unwrap_or(p_max)
    };
    Ok(OrderSelection { chosen, trace })
}

// JSON has no NaN; non-finite values are written as null.
mod nan_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let o: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        o.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let o: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(o.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

mod nan_matrix {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let o: Vec<Vec<Option<f64>>> = v
            .iter()
            .map(|r| r.iter().map(|x| x.is_finite().then_some(*x)).collect())
            .collect();
        o.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let o: Vec<Vec<Option<f64>>> = Vec::deserialize(d)?;
        Ok(o.into_iter()
            .map(|r| r.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
            .collect())
    }
}

mod nan_opt {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.filter(|x| x.is_finite()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<f64>::deserialize(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IsoWeek;
    use crate::model::DispersionKind;
    use rand::Rng;
    use rand_distr::Poisson;

    fn univariate(series: &[u64]) -> CountsPanel {
        let rows: Vec<Vec<u64>> = series.iter().map(|y| vec![*y]).collect();
        CountsPanel::from_rows(IsoWeek::new(2000, 1).unwrap(), &rows).unwrap()
    }

    fn poisson_series(mean: f64, n: usize, seed: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Poisson::new(mean).unwrap();
        (0..n).map(|_| d.sample(&mut rng) as u64).collect()
    }

    #[test]
    fn endemic_only_poisson_se() {
        let panel = univariate(&poisson_series(5.0, 2000, 3));
        let mut spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        spec.epidemic.enabled = false;
        spec.dispersion = DispersionKind::Poisson;
        let d = Design::simple(&spec, &panel).unwrap();
        let fit = fit_profile(&d, &panel, &FitOptions::default()).unwrap();
        assert!(fit.convergence.converged, "{:?}", fit.convergence);
        let a = fit.coefficients.get("end.alpha").unwrap();
        let se = fit.se_of("end.alpha").unwrap();
        // MLE of a constant Poisson mean is the sample mean
        let rows = &panel.counts()[1..];
        let mean = rows.iter().sum::<u64>() as f64 / rows.len() as f64;
        assert!((a - mean.ln()).abs() < 1e-6);
        let expect = 1.0 / (mean * rows.len() as f64).sqrt();
        assert!((se / expect - 1.0).abs() < 0.2, "{se} vs {expect}");
        assert_eq!(fit.n_free, 1);
        assert!((fit.aic - (-2.0 * fit.loglik + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn refit_from_optimum_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let series: Vec<u64> = (0..400).map(|_| rng.random_range(0..12)).collect();
        let panel = univariate(&series);
        let spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        let d = Design::simple(&spec, &panel).unwrap();
        let opts = FitOptions::default();
        let a = fit_inner(&d, &panel, &d.initial_values(&panel), &opts).unwrap();
        let b = fit_inner(&d, &panel, &a.params, &opts).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-8);
    }

    #[test]
    fn report_round_trip() {
        let panel = univariate(&poisson_series(3.0, 200, 5));
        let spec = ModelSpec::constant(SerialIntervalSpec::parametric(SiFamily::Geometric, 3, 0.5));
        let d = Design::simple(&spec, &panel).unwrap();
        let fit = fit_profile(&d, &panel, &FitOptions::default()).unwrap();
        let json = fit.to_json().unwrap();
        let back = FittedModel::from_json(&json).unwrap();
        assert_eq!(back.coefficients, fit.coefficients);
        assert_eq!(back.profile.len(), 21);
        assert!(json.contains("\"format_version\": 1"));
    }

    #[test]
    fn select_order_guard_and_fixed() {
        let panel = univariate(&poisson_series(3.0, 40, 5));
        let spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        let d = Design::simple(&spec, &panel).unwrap();
        assert!(select_order(&d, &panel, 11, &FitOptions::default()).is_err());
        assert_eq!(
            select_order(&d, &panel, 5, &FitOptions::default())
                .unwrap()
                .chosen,
            1
        );
    }
}
