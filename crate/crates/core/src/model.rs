//! Endemic-epidemic mean structure.
//!
//! `lambda_it = nu_it + phi_it * sum_d sum_j u_d w_ji Y_{j,t-d}` with
//! log-linear `nu` and `phi`, lag weights `u` shared by all units and
//! weeks, and row-normalized spatial weights `w`.
//!
//! Free parameters live in one flat vector described by [`ParamLayout`]:
//! endemic coefficients, epidemic coefficients, `log_rho`, `log_psi`
//! (one or per unit), then the serial-interval parameter(s) on the real
//! line. Everything before the serial-interval block is "inner".

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{
    christmas_indicator_for, week_sequence, CountsPanel, CovariateTable, NeighbourhoodMatrix,
    PopulationShares,
};
use crate::error::{Error, Result};
use crate::weights::{
    kappa_transform, kappa_untransform, lag_weights, spatial_weights, SerialIntervalSpec, SiFamily,
    SpatialWeightSpec,
};

pub const MAX_HARMONICS: usize = 4;
/// Lower bound of epidemic intercepts on the log scale.
pub const EPIDEMIC_INTERCEPT_FLOOR: f64 = -20.0;
/// Lower bound of the overdispersion parameter on its natural scale.
pub const PSI_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterceptKind {
    #[default]
    Shared,
    PerUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndemicSpec {
    #[serde(default)]
    pub intercept: InterceptKind,
    #[serde(default)]
    pub harmonics: usize,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl Default for EndemicSpec {
    fn default() -> Self {
        EndemicSpec {
            intercept: InterceptKind::Shared,
            harmonics: 0,
            covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpidemicSpec {
    /// `false` drops the epidemic component entirely (`phi = 0`).
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub intercept: InterceptKind,
    /// Adds `tau * log(e_i)` for the importing unit's population share.
    #[serde(default)]
    pub gravity: bool,
    #[serde(default)]
    pub harmonics: usize,
    #[serde(default)]
    pub covariates: Vec<String>,
}

fn yes() -> bool {
    true
}

impl Default for EpidemicSpec {
    fn default() -> Self {
        EpidemicSpec {
            enabled: true,
            intercept: InterceptKind::Shared,
            gravity: false,
            harmonics: 0,
            covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpatialKind {
    #[default]
    Identity,
    PowerLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DispersionKind {
    #[default]
    Shared,
    PerUnit,
    /// Poisson observation model (`psi = 0`, no dispersion parameter).
    Poisson,
}

fn default_period() -> u32 {
    52
}

/// Full model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub endemic: EndemicSpec,
    #[serde(default)]
    pub epidemic: EpidemicSpec,
    pub serial_interval: SerialIntervalSpec,
    #[serde(default)]
    pub spatial: SpatialKind,
    #[serde(default)]
    pub dispersion: DispersionKind,
    #[serde(default = "default_period")]
    pub period: u32,
}

impl ModelSpec {
    /// Univariate model with constant `nu` and `phi`.
    pub fn constant(serial_interval: SerialIntervalSpec) -> Self {
        ModelSpec {
            endemic: EndemicSpec::default(),
            epidemic: EpidemicSpec::default(),
            serial_interval,
            spatial: SpatialKind::Identity,
            dispersion: DispersionKind::Shared,
            period: 52,
        }
    }

    pub fn with_serial_interval(&self, si: SerialIntervalSpec) -> Self {
        ModelSpec {
            serial_interval: si,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endemic.harmonics > MAX_HARMONICS || self.epidemic.harmonics > MAX_HARMONICS {
            return Err(Error::Config(format!(
                "at most {MAX_HARMONICS} harmonic pairs per component"
            )));
        }
        if self.period < 2 {
            return Err(Error::Config("period must be >= 2".into()));
        }
        if self.epidemic.gravity && self.epidemic.intercept == InterceptKind::PerUnit {
            return Err(Error::Config(
                "per-unit epidemic intercepts and the gravity term are mutually exclusive".into(),
            ));
        }
        if self.serial_interval.order == 0 {
            return Err(Error::Config("serial interval order must be >= 1".into()));
        }
        Ok(())
    }

    /// Order `p` of the lag distribution.
    pub fn order(&self) -> usize {
        self.serial_interval.order
    }
}

/// One column of a log-linear predictor.
#[derive(Debug, Clone)]
pub(crate) enum Term {
    Intercept,
    UnitIntercept(usize),
    Time(Vec<f64>),
    Unit(Vec<f64>),
}

impl Term {
    #[inline]
    pub(crate) fn value(&self, t: usize, i: usize) -> f64 {
        match self {
            Term::Intercept => 1.0,
            Term::UnitIntercept(u) => {
                if *u == i {
                    1.0
                } else {
                    0.0
                }
            }
            Term::Time(v) => v[t],
            Term::Unit(v) => v[i],
        }
    }
}

/// Position and meaning of every free parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub endemic: Range<usize>,
    pub epidemic: Range<usize>,
    pub log_rho: Option<usize>,
    pub log_psi: Range<usize>,
    pub serial: Range<usize>,
    /// Intercept positions bounded below by [`EPIDEMIC_INTERCEPT_FLOOR`].
    pub epidemic_intercepts: Vec<usize>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_inner(&self) -> usize {
        self.serial.start
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Box constraints `(lower, upper)` on the estimation scale.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut lo = vec![-50.0; n];
        let mut hi = vec![50.0; n];
        for &k in &self.epidemic_intercepts {
            lo[k] = EPIDEMIC_INTERCEPT_FLOOR;
        }
        if let Some(k) = self.log_rho {
            lo[k] = -20.0;
            hi[k] = 6.0;
        }
        for k in self.log_psi.clone() {
            lo[k] = PSI_FLOOR.ln();
            hi[k] = 10.0;
        }
        for k in self.serial.clone() {
            lo[k] = -30.0;
            hi[k] = 30.0;
        }
        (lo, hi)
    }
}

/// A flat parameter vector with its name map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl CoefficientSet {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.values[k])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let k = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown coefficient {name:?}")))?;
        self.values[k] = value;
        Ok(())
    }
}

/// Precomputed regressors for a model applied to one panel.
///
/// `n_time` may exceed the panel length so that means can be evaluated
/// beyond the last observed week (forecasting, simulation).
#[derive(Debug, Clone)]
pub struct Design {
    pub(crate) spec: ModelSpec,
    pub(crate) m: usize,
    pub(crate) n_time: usize,
    pub(crate) endemic: Vec<Term>,
    pub(crate) epidemic: Vec<Term>,
    pub(crate) neighbourhood: Option<NeighbourhoodMatrix>,
    layout: ParamLayout,
    units: Vec<String>,
}

fn harmonic_terms(k_max: usize, period: u32, n_time: usize, prefix: &str) -> Vec<(String, Term)> {
    let mut out = Vec::new();
    for k in 1..=k_max {
        let f = 2.0 * PI * k as f64 / period as f64;
        let sin = (1..=n_time).map(|t| (f * t as f64).sin()).collect();
        let cos = (1..=n_time).map(|t| (f * t as f64).cos()).collect();
        out.push((format!("{prefix}.sin{k}"), Term::Time(sin)));
        out.push((format!("{prefix}.cos{k}"), Term::Time(cos)));
    }
    out
}

impl Design {
    /// Builds the design for `panel`, evaluable for `n_time >= T` weeks.
    ///
    /// The covariates `christmas` and `trend` (`t / T`) are derived when
    /// not present in `covariates`; other covariates must cover `n_time`.
    pub fn new(
        spec: &ModelSpec,
        panel: &CountsPanel,
        covariates: &CovariateTable,
        neighbourhood: Option<&NeighbourhoodMatrix>,
        populations: Option<&PopulationShares>,
        n_time: usize,
    ) -> Result<Self> {
        spec.validate()?;
        let m = panel.n_units();
        let t_len = panel.n_weeks();
        let n_time = n_time.max(t_len);
        let units = panel.units().to_vec();

        let covariate = |name: &str| -> Result<Vec<f64>> {
            if let Some(col) = covariates.column(name) {
                if col.len() < n_time {
                    return Err(Error::Config(format!(
                        "covariate {name:?} has {} values but {n_time} weeks are needed",
                        col.len()
                    )));
                }
                return Ok(col[..n_time].to_vec());
            }
            match name {
                "christmas" => Ok(christmas_indicator_for(&week_sequence(
                    panel.weeks()[0],
                    n_time,
                ))),
                "trend" => Ok((1..=n_time).map(|t| t as f64 / t_len as f64).collect()),
                other => Err(Error::Config(format!("unknown covariate {other:?}"))),
            }
        };

        let mut names = Vec::new();
        let mut endemic = Vec::new();
        match spec.endemic.intercept {
            InterceptKind::Shared => {
                names.push("end.alpha".to_string());
                endemic.push(Term::Intercept);
            }
            InterceptKind::PerUnit => {
                for (i, u) in units.iter().enumerate() {
                    names.push(format!("end.alpha.{u}"));
                    endemic.push(Term::UnitIntercept(i));
                }
            }
        }
        for c in &spec.endemic.covariates {
            names.push(format!("end.{c}"));
            endemic.push(Term::Time(covariate(c)?));
        }
        for (n, t) in harmonic_terms(spec.endemic.harmonics, spec.period, n_time, "end") {
            names.push(n);
            endemic.push(t);
        }
        let endemic_range = 0..names.len();

        let mut epidemic = Vec::new();
        let mut epidemic_intercepts = Vec::new();
        if spec.epidemic.enabled {
            match spec.epidemic.intercept {
                InterceptKind::Shared => {
                    epidemic_intercepts.push(names.len());
                    names.push("epi.alpha".to_string());
                    epidemic.push(Term::Intercept);
                }
                InterceptKind::PerUnit => {
                    for (i, u) in units.iter().enumerate() {
                        epidemic_intercepts.push(names.len());
                        names.push(format!("epi.alpha.{u}"));
                        epidemic.push(Term::UnitIntercept(i));
                    }
                }
            }
            if spec.epidemic.gravity {
                let pops = populations.ok_or_else(|| {
                    Error::Config("gravity term requires population shares".into())
                })?;
                if pops.shares().len() != m {
                    return Err(Error::Config("population shares do not match units".into()));
                }
                names.push("epi.tau".to_string());
                epidemic.push(Term::Unit(pops.shares().iter().map(|e| e.ln()).collect()));
            }
            for c in &spec.epidemic.covariates {
                names.push(format!("epi.{c}"));
                epidemic.push(Term::Time(covariate(c)?));
            }
            for (n, t) in harmonic_terms(spec.epidemic.harmonics, spec.period, n_time, "epi") {
                names.push(n);
                epidemic.push(t);
            }
        }
        let epidemic_range = endemic_range.end..names.len();

        let use_rho = spec.epidemic.enabled && spec.spatial == SpatialKind::PowerLaw && m > 1;
        let neighbourhood = if use_rho {
            let nb = neighbourhood.ok_or_else(|| {
                Error::Config("power-law spatial weights require a neighbourhood matrix".into())
            })?;
            if nb.n_units() != m {
                return Err(Error::Config(
                    "neighbourhood matrix does not match units".into(),
                ));
            }
            Some(nb.clone())
        } else {
            None
        };
        let log_rho = if use_rho {
            names.push("log_rho".to_string());
            Some(names.len() - 1)
        } else {
            None
        };

        let psi_start = names.len();
        match spec.dispersion {
            DispersionKind::Shared => names.push("log_psi".to_string()),
            DispersionKind::PerUnit => {
                for u in &units {
                    names.push(format!("log_psi.{u}"));
                }
            }
            DispersionKind::Poisson => {}
        }
        let log_psi = psi_start..names.len();

        let si = &spec.serial_interval;
        let serial_start = names.len();
        if spec.epidemic.enabled {
            match si.family {
                SiFamily::ShiftedPoisson => names.push("log_kappa".to_string()),
                SiFamily::Triangular | SiFamily::Geometric => names.push("logit_kappa".to_string()),
                SiFamily::Unrestricted => {
                    for d in 2..=si.order {
                        names.push(format!("si.logit{d}"));
                    }
                }
                SiFamily::Fixed => {}
            }
        }
        let serial = serial_start..names.len();

        Ok(Design {
            spec: spec.clone(),
            m,
            n_time,
            endemic,
            epidemic,
            neighbourhood,
            layout: ParamLayout {
                names,
                endemic: endemic_range,
                epidemic: epidemic_range,
                log_rho,
                log_psi,
                serial,
                epidemic_intercepts,
            },
            units,
        })
    }

    /// Design for a plain panel without covariates or spatial structure.
    pub fn simple(spec: &ModelSpec, panel: &CountsPanel) -> Result<Self> {
        Design::new(
            spec,
            panel,
            &CovariateTable::new(),
            None,
            None,
            panel.n_weeks(),
        )
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_units(&self) -> usize {
        self.m
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn order(&self) -> usize {
        self.spec.serial_interval.order
    }

    pub fn neighbourhood(&self) -> Option<&NeighbourhoodMatrix> {
        self.neighbourhood.as_ref()
    }

    /// Same design with another serial-interval scheme.
    pub fn with_serial_interval(&self, si: SerialIntervalSpec) -> Result<Design> {
        let spec = self.spec.with_serial_interval(si);
        spec.validate()?;
        let mut d = self.clone();
        let names_before = d.layout.serial.start;
        d.layout.names.truncate(names_before);
        if spec.epidemic.enabled {
            let si = &spec.serial_interval;
            match si.family {
                SiFamily::ShiftedPoisson => d.layout.names.push("log_kappa".to_string()),
                SiFamily::Triangular | SiFamily::Geometric => {
                    d.layout.names.push("logit_kappa".to_string())
                }
                SiFamily::Unrestricted => {
                    for k in 2..=si.order {
                        d.layout.names.push(format!("si.logit{k}"));
                    }
                }
                SiFamily::Fixed => {}
            }
        }
        d.layout.serial = names_before..d.layout.names.len();
        d.spec = spec;
        Ok(d)
    }

    /// Default starting point: endemic intercepts at `log(mean count)`,
    /// `log_psi = log(0.1)`, `log_rho = 0`, everything else zero. The
    /// serial-interval block is taken from the spec when it holds values.
    pub fn initial_values(&self, panel: &CountsPanel) -> Vec<f64> {
        let mut v = vec![0.0; self.layout.len()];
        let n = panel.n_weeks() as f64;
        for (k, term) in self.endemic.iter().enumerate() {
            let mean = match term {
                Term::Intercept => panel.counts().iter().sum::<u64>() as f64 / (n * self.m as f64),
                Term::UnitIntercept(i) => panel.unit_series(*i).iter().sum::<u64>() as f64 / n,
                _ => continue,
            };
            v[self.layout.endemic.start + k] = mean.max(0.5).ln();
        }
        for k in self.layout.log_psi.clone() {
            v[k] = 0.1f64.ln();
        }
        if let Some(k) = self.layout.log_rho {
            v[k] = 0.0;
        }
        let si = &self.spec.serial_interval;
        let s = self.layout.serial.clone();
        match si.family {
            f if f.is_parametric() && !s.is_empty() => {
                let kappa = si
                    .kappa
                    .filter(|k| f.kappa_in_domain(*k))
                    .unwrap_or(match f {
                        SiFamily::ShiftedPoisson => 1.0,
                        _ => 0.5,
                    });
                v[s.start] = kappa_transform(f, kappa).unwrap_or(0.0);
            }
            SiFamily::Unrestricted if si.logits.len() == s.len() => {
                v[s].copy_from_slice(&si.logits);
            }
            _ => {}
        }
        v
    }

    /// Wraps a parameter vector with this design's names.
    pub fn coefficient_set(&self, values: &[f64]) -> CoefficientSet {
        CoefficientSet {
            names: self.layout.names.clone(),
            values: values.to_vec(),
        }
    }

    /// Serial-interval spec implied by the serial block of `params`.
    pub fn serial_interval_at(&self, params: &[f64]) -> SerialIntervalSpec {
        let si = &self.spec.serial_interval;
        let s = &params[self.layout.serial.clone()];
        match si.family {
            f if f.is_parametric() && !s.is_empty() => {
                SerialIntervalSpec::parametric(f, si.order, kappa_untransform(f, s[0]))
            }
            SiFamily::Unrestricted if !self.layout.serial.is_empty() || si.order == 1 => {
                SerialIntervalSpec::unrestricted(s.to_vec())
            }
            _ => si.clone(),
        }
    }

    /// Normalized lag weights implied by `params`.
    pub fn lag_weights_at(&self, params: &[f64]) -> Result<Vec<f64>> {
        if !self.spec.epidemic.enabled {
            return lag_weights(&SerialIntervalSpec::fixed(self.order()));
        }
        lag_weights(&self.serial_interval_at(params))
    }

    /// Spatial weights implied by `params` (identity without power law).
    pub fn spatial_weights_at(&self, params: &[f64]) -> Result<Vec<f64>> {
        match (&self.neighbourhood, self.layout.log_rho) {
            (Some(nb), Some(k)) => spatial_weights(
                SpatialWeightSpec::PowerLaw {
                    rho: params[k].exp(),
                },
                nb,
            ),
            _ => {
                let mut w = vec![0.0; self.m * self.m];
                for i in 0..self.m {
                    w[i * self.m + i] = 1.0;
                }
                Ok(w)
            }
        }
    }

    /// Overdispersion `psi_i` per unit (0 for the Poisson model).
    pub fn psi_at(&self, params: &[f64]) -> Vec<f64> {
        let r = self.layout.log_psi.clone();
        match self.spec.dispersion {
            DispersionKind::Poisson => vec![0.0; self.m],
            DispersionKind::Shared => vec![params[r.start].exp(); self.m],
            DispersionKind::PerUnit => params[r].iter().map(|x| x.exp()).collect(),
        }
    }

    /// Endemic linear predictor `log(nu_it)` for 0-based week row `t`.
    pub fn endemic_predictor(&self, params: &[f64], t: usize, i: usize) -> f64 {
        let beta = &params[self.layout.endemic.clone()];
        self.endemic
            .iter()
            .zip(beta)
            .map(|(term, b)| b * term.value(t, i))
            .sum()
    }

    /// Epidemic linear predictor `log(phi_it)`; `-inf` when disabled.
    pub fn epidemic_predictor(&self, params: &[f64], t: usize, i: usize) -> f64 {
        if !self.spec.epidemic.enabled {
            return f64::NEG_INFINITY;
        }
        let beta = &params[self.layout.epidemic.clone()];
        self.epidemic
            .iter()
            .zip(beta)
            .map(|(term, b)| b * term.value(t, i))
            .sum()
    }

    /// Parameter-dependent quantities needed to evaluate means.
    pub fn state(&self, params: &[f64]) -> Result<ModelState> {
        if params.len() != self.layout.len() {
            return Err(Error::Domain(format!(
                "expected {} parameters, got {}",
                self.layout.len(),
                params.len()
            )));
        }
        let (m, n) = (self.m, self.n_time);
        let mut nu = vec![0.0; n * m];
        let mut phi = vec![0.0; n * m];
        for t in 0..n {
            for i in 0..m {
                nu[t * m + i] = self.endemic_predictor(params, t, i).exp();
                phi[t * m + i] = self.epidemic_predictor(params, t, i).exp();
            }
        }
        Ok(ModelState {
            m,
            nu,
            phi,
            lag: self.lag_weights_at(params)?,
            spatial: self.spatial_weights_at(params)?,
            psi: self.psi_at(params),
        })
    }
}

/// Means evaluated from one parameter vector.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub(crate) m: usize,
    pub nu: Vec<f64>,
    pub phi: Vec<f64>,
    /// Normalized lag weights, index `d - 1`.
    pub lag: Vec<f64>,
    /// Row-normalized spatial weights, row-major, row `j` = source.
    pub spatial: Vec<f64>,
    pub psi: Vec<f64>,
}

impl ModelState {
    pub fn n_units(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.lag.len()
    }

    /// Epidemic driving term `sum_d sum_j u_d w_ji Y_{j,t-d}` for unit `i`
    /// at row `t`, reading counts from row-major `history` (rows `< t`).
    #[inline]
    pub fn lagged_input(&self, history: &[u64], t: usize, i: usize) -> f64 {
        let m = self.m;
        let mut acc = 0.0;
        for (d, u) in self.lag.iter().enumerate() {
            if *u == 0.0 {
                continue;
            }
            let row = &history[(t - d - 1) * m..(t - d) * m];
            let mut s = 0.0;
            for (j, y) in row.iter().enumerate() {
                s += self.spatial[j * m + i] * *y as f64;
            }
            acc += u * s;
        }
        acc
    }

    /// `(nu_it, epidemic part)` at row `t >= p`.
    #[inline]
    pub fn mean_parts(&self, history: &[u64], t: usize, i: usize) -> (f64, f64) {
        let nu = self.nu[t * self.m + i];
        let phi = self.phi[t * self.m + i];
        let epi = if phi == 0.0 {
            0.0
        } else {
            phi * self.lagged_input(history, t, i)
        };
        (nu, epi)
    }

    /// Conditional means for all units at row `t`, written into `out`.
    pub fn mean_row(&self, history: &[u64], t: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (nu, epi) = self.mean_parts(history, t, i);
            *o = nu + epi;
        }
    }
}

/// Conditional means over rows `p..T` of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPanel {
    /// First row with a defined mean (`p`, 0-based).
    pub start: usize,
    pub m: usize,
    /// Endemic part, rows `start..T`.
    pub endemic: Vec<f64>,
    /// Epidemic part, rows `start..T`.
    pub epidemic: Vec<f64>,
}

impl MeanPanel {
    pub fn lambda(&self, t: usize, i: usize) -> f64 {
        let k = (t - self.start) * self.m + i;
        self.endemic[k] + self.epidemic[k]
    }

    pub fn n_rows(&self) -> usize {
        self.endemic.len() / self.m
    }
}

/// Conditional means `lambda_it` for every row after the first `p`.
pub fn conditional_mean(design: &Design, params: &[f64], panel: &CountsPanel) -> Result<MeanPanel> {
    let p = design.order();
    let t_len = panel.n_weeks();
    if t_len <= p {
        return Err(Error::Data(format!(
            "need more than p = {p} weeks, panel has {t_len}"
        )));
    }
    if t_len > design.n_time() {
        return Err(Error::Data("panel longer than design".into()));
    }
    let state = design.state(params)?;
    let m = design.n_units();
    let mut endemic = Vec::with_capacity((t_len - p) * m);
    let mut epidemic = Vec::with_capacity((t_len - p) * m);
    for t in p..t_len {
        for i in 0..m {
            let (nu, epi) = state.mean_parts(panel.counts(), t, i);
            endemic.push(nu);
            epidemic.push(epi);
        }
    }
    Ok(MeanPanel {
        start: p,
        m,
        endemic,
        epidemic,
    })
}

/// Univariate INGARCH(1,1) mean recursion
/// `lambda_t = alpha + beta * Y_{t-1} + gamma * lambda_{t-1}`.
///
/// The recursion is started at row `p` from `initial` and returns means
/// for rows `p..T`. Used as an independent check of geometric lag weights.
pub fn ingarch_mean_recursion(
    alpha: f64,
    beta: f64,
    gamma: f64,
    series: &[u64],
    p: usize,
    initial: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len().saturating_sub(p));
    let mut lambda = initial;
    for t in p..series.len() {
        if t > p {
            lambda = alpha + beta * series[t - 1] as f64 + gamma * lambda;
        }
        out.push(lambda);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IsoWeek;

    fn panel(rows: &[Vec<u64>]) -> CountsPanel {
        CountsPanel::from_rows(IsoWeek::new(2000, 1).unwrap(), rows).unwrap()
    }

    fn univariate(series: &[u64]) -> CountsPanel {
        panel(&series.iter().map(|y| vec![*y]).collect::<Vec<_>>())
    }

    #[test]
    fn endemic_predictor_examples() {
        let p = univariate(&[1; 60]);
        let mut spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        let d = Design::simple(&spec, &p).unwrap();
        let zero = vec![0.0; d.layout().len()];
        assert_eq!(d.endemic_predictor(&zero, 5, 0).exp(), 1.0);
        let mut v = zero.clone();
        v[0] = 2f64.ln();
        assert!((d.endemic_predictor(&v, 5, 0).exp() - 2.0).abs() < 1e-15);

        spec.endemic.harmonics = 1;
        let d = Design::simple(&spec, &p).unwrap();
        let mut v = vec![0.0; d.layout().len()];
        v[d.layout().index("end.sin1").unwrap()] = 1.0;
        // week index 13 is row 12
        let nu = d.endemic_predictor(&v, 12, 0).exp();
        assert!((nu - std::f64::consts::E).abs() < 1e-12, "{nu}");
    }

    #[test]
    fn epidemic_predictor_examples() {
        let p = panel(&vec![vec![1, 2]; 10]);
        let mut spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        let d = Design::simple(&spec, &p).unwrap();
        let zero = vec![0.0; d.layout().len()];
        assert_eq!(d.epidemic_predictor(&zero, 3, 1).exp(), 1.0);

        spec.epidemic.gravity = true;
        let pops = PopulationShares::from_values(&[0.25, 0.75]).unwrap();
        let d = Design::new(&spec, &p, &CovariateTable::new(), None, Some(&pops), 10).unwrap();
        let mut v = vec![0.0; d.layout().len()];
        v[d.layout().index("epi.tau").unwrap()] = 1.0;
        assert!((d.epidemic_predictor(&v, 3, 0).exp() - 0.25).abs() < 1e-15);

        spec.epidemic.gravity = false;
        spec.epidemic.intercept = InterceptKind::PerUnit;
        let d = Design::simple(&spec, &p).unwrap();
        let mut v = vec![0.0; d.layout().len()];
        v[d.layout().index("epi.alpha.unit2").unwrap()] = 3f64.ln();
        assert!((d.epidemic_predictor(&v, 0, 0).exp() - 1.0).abs() < 1e-15);
        assert!((d.epidemic_predictor(&v, 0, 1).exp() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn gravity_and_per_unit_exclusive() {
        let mut spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        spec.epidemic.gravity = true;
        spec.epidemic.intercept = InterceptKind::PerUnit;
        assert!(spec.validate().is_err());
        spec.epidemic.gravity = false;
        spec.endemic.harmonics = 5;
        assert!(spec.validate().is_err());
    }

    fn const_params(d: &Design, nu: f64, phi: f64) -> Vec<f64> {
        let mut v = d.initial_values(&univariate(&[1, 1]));
        v[d.layout().index("end.alpha").unwrap()] = nu.ln();
        v[d.layout().index("epi.alpha").unwrap()] = phi.ln();
        v
    }

    #[test]
    fn conditional_mean_examples() {
        let p = univariate(&[3, 4, 2, 4]);
        let spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        let d = Design::simple(&spec, &p).unwrap();
        let v = const_params(&d, 0.5, 0.5);
        let mp = conditional_mean(&d, &v, &p).unwrap();
        // lambda at row 2 uses Y at row 1 = 4
        assert!((mp.lambda(2, 0) - 2.5).abs() < 1e-14);

        let mut v0 = const_params(&d, 1.0, 1.0);
        v0[d.layout().index("epi.alpha").unwrap()] = f64::NEG_INFINITY;
        let mp = conditional_mean(&d, &v0, &p).unwrap();
        assert!((1..4).all(|t| mp.lambda(t, 0) == 1.0));

        let geo = SerialIntervalSpec::parametric(SiFamily::Geometric, 2, 0.5);
        let d = Design::simple(&ModelSpec::constant(geo), &p).unwrap();
        let v = const_params(&d, 0.5, 0.5);
        let mp = conditional_mean(&d, &v, &p).unwrap();
        // history (Y_{t-2}, Y_{t-1}) = (2, 4) at row 4 of [3,4,2,4,...]; use row 3: (4, 2)
        let expected = 0.5 + 0.5 * (2.0 / 3.0 * 4.0 + 1.0 / 3.0 * 2.0);
        let p2 = univariate(&[2, 4, 0]);
        let mp2 = conditional_mean(&d, &v, &p2).unwrap();
        assert!((mp2.lambda(2, 0) - expected).abs() < 1e-14);
        assert_eq!(mp.start, 2);
    }

    #[test]
    fn ingarch_fixed_point() {
        let c = 7u64;
        let series = vec![c; 400];
        let (a, b, g) = (0.5, 0.3, 0.6);
        let lam = ingarch_mean_recursion(a, b, g, &series, 1, 0.0);
        let fixed = (a + b * c as f64) / (1.0 - g);
        assert!((lam.last().unwrap() - fixed).abs() < 1e-10);
        // gamma = 0 reduces to alpha + beta Y_{t-1}
        let s = [1u64, 5, 2, 8];
        let lam = ingarch_mean_recursion(1.0, 0.5, 0.0, &s, 1, 1.5);
        assert_eq!(lam, vec![1.5, 1.0 + 0.5 * 5.0, 1.0 + 0.5 * 2.0]);
    }

    #[test]
    fn layout_counts_and_names() {
        let p = panel(&vec![vec![1, 2, 3]; 20]);
        let mut spec =
            ModelSpec::constant(SerialIntervalSpec::parametric(SiFamily::Geometric, 5, 0.4));
        spec.endemic.intercept = InterceptKind::PerUnit;
        spec.endemic.harmonics = 1;
        spec.endemic.covariates = vec!["christmas".into()];
        spec.epidemic.intercept = InterceptKind::PerUnit;
        spec.epidemic.harmonics = 1;
        spec.spatial = SpatialKind::PowerLaw;
        let nb = NeighbourhoodMatrix::chain(3);
        let d = Design::new(&spec, &p, &CovariateTable::new(), Some(&nb), None, 20).unwrap();
        let l = d.layout();
        // 3 + 1 + 2 endemic, 3 + 2 epidemic, rho, psi, kappa
        assert_eq!(l.endemic.len(), 6);
        assert_eq!(l.epidemic.len(), 5);
        assert_eq!(l.n_inner(), 13);
        assert_eq!(l.len(), 14);
        assert_eq!(l.names[13], "logit_kappa");
        assert!(l.index("log_rho").is_some());
        // missing neighbourhood is a config error
        assert!(Design::new(&spec, &p, &CovariateTable::new(), None, None, 20).is_err());
    }
}
