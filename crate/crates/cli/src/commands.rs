use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use endemic::data::{
    load_counts, load_covariates, load_neighbourhood, load_populations, week_sequence,
    write_counts, CountsPanel, CovariateTable, NeighbourhoodMatrix, PopulationShares,
};
use endemic::eval::{compare_models, pearson_residuals, residual_acf, ScoreSeries};
use endemic::forecast::{
    load_scores, rolling_forecasts, save_scores, simulate_counts, write_samples,
};
use endemic::inference::{fit_profile, select_order, FittedModel};
use endemic::model::{Design, ModelSpec};
use endemic::weights::{kappa_transform, SerialIntervalSpec, SiFamily};

use crate::config::{CompareConfig, RunConfig};
use crate::{ConfigError, ConvergenceError};

/// Counts window plus the auxiliary inputs aligned to it.
pub struct Inputs {
    pub panel: CountsPanel,
    pub covariates: CovariateTable,
    pub neighbourhood: Option<NeighbourhoodMatrix>,
    pub populations: Option<PopulationShares>,
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let full = load_counts(cfg.counts_path()?)?;
        let pos = |w, what: &str| {
            full.week_position(w)
                .ok_or_else(|| anyhow!(ConfigError(format!("data.{what} week {w} not in counts"))))
        };
        let start = cfg
            .data
            .start
            .map(|w| pos(w, "start"))
            .transpose()?
            .unwrap_or(0);
        let end = match cfg.data.end {
            Some(w) => pos(w, "end")? + 1,
            None => full.n_weeks(),
        };
        if end <= start {
            bail!(ConfigError("data.end precedes data.start".into()));
        }
        let covariates = match &cfg.data.covariates {
            Some(p) => load_covariates(p, &full)?.window(start..end)?,
            None => CovariateTable::new(),
        };
        let panel = full.window(start..end)?;
        Self::with_panel(cfg, panel, covariates)
    }

    fn with_panel(cfg: &RunConfig, panel: CountsPanel, covariates: CovariateTable) -> Result<Self> {
        let neighbourhood = cfg
            .data
            .neighbourhood
            .as_ref()
            .map(|p| load_neighbourhood(p, panel.units()))
            .transpose()?;
        let populations = cfg
            .data
            .populations
            .as_ref()
            .map(|p| load_populations(p, panel.units()))
            .transpose()?;
        Ok(Inputs {
            panel,
            covariates,
            neighbourhood,
            populations,
        })
    }

    pub fn design(&self, spec: &ModelSpec) -> Result<Design> {
        Ok(Design::new(
            spec,
            &self.panel,
            &self.covariates,
            self.neighbourhood.as_ref(),
            self.populations.as_ref(),
            self.panel.n_weeks(),
        )?)
    }

    /// Row of `data.test_start`, required for forecasting.
    pub fn test_start(&self, cfg: &RunConfig) -> Result<usize> {
        let w = cfg
            .data
            .test_start
            .ok_or_else(|| anyhow!(ConfigError("missing data.test_start".into())))?;
        self.panel.week_position(w).ok_or_else(|| {
            anyhow!(ConfigError(format!(
                "data.test_start week {w} not in the data window"
            )))
        })
    }

    /// Weeks before the test period, or the whole window without one.
    pub fn training(&self, cfg: &RunConfig) -> Result<CountsPanel> {
        match cfg.data.test_start {
            Some(_) => Ok(self.panel.prefix(self.test_start(cfg)?)?),
            None => Ok(self.panel.clone()),
        }
    }
}

/// Record of one run, written next to the outputs.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

pub struct Output {
    dir: PathBuf,
    record: RunRecord,
}

impl Output {
    pub fn new(cfg: &RunConfig, command: &str) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir)
            .with_context(|| format!("creating output directory {}", cfg.out_dir.display()))?;
        let out = Output {
            dir: cfg.out_dir.clone(),
            record: RunRecord {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: cfg.seed,
                outputs: Vec::new(),
                notes: Vec::new(),
                detail: None,
            },
        };
        out.write_raw("manifest.toml", &cfg.to_toml()?)?;
        Ok(out)
    }

    fn write_raw(&self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write(&mut self, name: &str, text: &str) -> Result<()> {
        self.write_raw(name, text)?;
        self.record.outputs.push(name.into());
        Ok(())
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.record.outputs.push(name.into());
        self.dir.join(name)
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.record.notes.push(s.into());
    }

    pub fn finish(mut self, detail: Option<serde_json::Value>) -> Result<()> {
        self.record.detail = detail;
        let text = serde_json::to_string_pretty(&self.record)? + "\n";
        self.write_raw("run.json", &text)
    }
}

fn fmt(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Model spec with the serial-interval order replaced.
fn with_order(spec: &ModelSpec, p: usize) -> ModelSpec {
    let si = &spec.serial_interval;
    let new = match si.family {
        SiFamily::Unrestricted => SerialIntervalSpec::unrestricted(vec![0.0; p - 1]),
        _ => SerialIntervalSpec {
            order: p,
            ..si.clone()
        },
    };
    spec.with_serial_interval(new)
}

fn coefficient_csv(fit: &FittedModel) -> String {
    let mut s = String::from("name,estimate,se\n");
    for (n, est, se) in fit.coefficient_table() {
        let _ = writeln!(s, "{n},{},{}", fmt(est), fmt(se));
    }
    s
}

pub fn summary(fit: &FittedModel) -> String {
    let mut s = String::new();
    let width = fit
        .coefficients
        .names
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(4)
        .max(4);
    let _ = writeln!(s, "{:<width$}  {:>12}  {:>10}", "name", "estimate", "se");
    for (n, est, se) in fit.coefficient_table() {
        let _ = writeln!(s, "{n:<width$}  {est:>12.5}  {se:>10.5}");
    }
    let _ = writeln!(
        s,
        "loglik {:.3}  AIC {:.3}  n_free {}  rows {}..{}",
        fit.loglik, fit.aic, fit.n_free, fit.rows.0, fit.rows.1
    );
    if let Some(k) = fit.kappa {
        let _ = writeln!(
            s,
            "kappa {k:.5} (se {:.5})",
            fit.kappa_se.unwrap_or(f64::NAN)
        );
    }
    let weights: Vec<String> = fit.lag_weights.iter().map(|w| format!("{w:.4}")).collect();
    let _ = writeln!(s, "lag weights [{}]", weights.join(", "));
    for n in &fit.convergence.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

pub fn fit(cfg: &RunConfig, allow_nonconverged: bool) -> Result<FittedModel> {
    cfg.check_inputs()?;
    let inputs = Inputs::load(cfg)?;
    let train = inputs.training(cfg)?;
    let mut spec = cfg.model()?.clone();
    let mut out = Output::new(cfg, "fit")?;

    if let Some(sel) = &cfg.select {
        let design = inputs.design(&spec)?;
        let res = select_order(&design, &train, sel.p_max, &cfg.fit)?;
        let mut csv = String::from("order,loglik,aic,n_free,converged\n");
        for r in &res.trace {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                r.order,
                fmt(r.loglik),
                fmt(r.aic),
                r.n_free,
                r.converged
            );
        }
        out.write("aic_trace.csv", &csv)?;
        out.note(format!(
            "order {} chosen from 1..={}",
            res.chosen, sel.p_max
        ));
        spec = with_order(&spec, res.chosen);
    }

    let design = inputs.design(&spec)?;
    let fit = fit_profile(&design, &train, &cfg.fit)?;
    out.write("fit.json", &(fit.to_json()? + "\n"))?;
    out.write("coefficients.csv", &coefficient_csv(&fit))?;
    if !fit.profile.is_empty() {
        let mut csv = String::from("z,kappa,loglik,converged\n");
        for p in &fit.profile {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                fmt(p.z),
                fmt(p.kappa),
                fmt(p.loglik),
                p.converged
            );
        }
        out.write("profile.csv", &csv)?;
    }
    for n in &fit.convergence.notes {
        out.note(n.clone());
    }
    out.finish(Some(serde_json::to_value(&fit.convergence)?))?;
    if !fit.convergence.converged && !allow_nonconverged {
        print!("{}", summary(&fit));
        bail!(ConvergenceError(format!(
            "optimizer did not converge (gradient norm {:.3e})",
            fit.convergence.gradient_norm
        )));
    }
    Ok(fit)
}

pub fn forecast(cfg: &RunConfig) -> Result<String> {
    cfg.check_inputs()?;
    let inputs = Inputs::load(cfg)?;
    let spec = cfg.model()?;
    let design = inputs.design(spec)?;
    let test_start = inputs.test_start(cfg)?;
    let mut out = Output::new(cfg, "forecast")?;

    let frozen = if cfg.forecast.refit {
        None
    } else {
        let train = inputs.panel.prefix(test_start)?;
        let f = fit_profile(&design, &train, &cfg.fit)?;
        if !f.convergence.converged {
            bail!(ConvergenceError("training fit did not converge".into()));
        }
        out.write("fit.json", &(f.to_json()? + "\n"))?;
        Some(f.coefficients.values)
    };
    let set = rolling_forecasts(
        &design,
        &inputs.panel,
        test_start,
        frozen.as_deref(),
        &cfg.fit,
        &cfg.forecast,
    )?;

    save_scores(&out.path("scores.csv"), &set.records())?;
    let mut origins = String::from("origin_week,status,detail\n");
    let mut detail = Vec::new();
    for o in &set.origins {
        let v = serde_json::to_value(&o.status)?;
        let status = v["status"].as_str().unwrap_or("").to_string();
        let text = match &o.status {
            endemic::forecast::OriginStatus::Fitted { converged } => {
                format!("converged={converged}")
            }
            endemic::forecast::OriginStatus::Frozen => String::new(),
            endemic::forecast::OriginStatus::Fallback { from, reason } => {
                format!("coefficients from {from}: {reason}")
            }
            endemic::forecast::OriginStatus::Failed { reason } => reason.clone(),
        };
        let _ = writeln!(
            origins,
            "{},{status},\"{}\"",
            o.origin_week,
            text.replace('"', "'")
        );
        detail.push(serde_json::json!({ "origin_week": o.origin_week, "status": v }));
    }
    out.write("origins.csv", &origins)?;

    let mut table = String::from("horizon,n,mean_score,mean_mc_se\n");
    for (h, n, m, se) in set.mean_scores() {
        let _ = writeln!(table, "{h},{n},{},{}", fmt(m), fmt(se));
    }
    out.write("summary.csv", &table)?;
    if cfg.forecast.keep_samples {
        let path = out.path("samples.csv");
        let f = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        write_samples(std::io::BufWriter::new(f), &set)?;
    }
    let failed = set.failed().len();
    if failed > 0 {
        out.note(format!("{failed} origins failed and were not scored"));
    }
    out.finish(Some(serde_json::Value::Array(detail)))?;
    if failed > 0 {
        bail!(ConvergenceError(format!(
            "{failed} of {} origins failed; see origins.csv",
            set.origins.len()
        )));
    }
    Ok(table)
}

pub fn compare(cfg: &RunConfig, cc: &CompareConfig) -> Result<String> {
    cfg.check_inputs()?;
    if cc.scores.len() < 2 {
        bail!(ConfigError("compare needs at least two score files".into()));
    }
    let mut series = Vec::with_capacity(cc.scores.len());
    for s in &cc.scores {
        let recs = load_scores(&s.path)?;
        series.push(ScoreSeries::from_records(s.label.clone(), &recs)?);
    }
    let mut out = Output::new(cfg, "compare")?;
    let report = compare_models(
        &series,
        &cc.baseline,
        cc.horizons.as_deref(),
        cc.n_perm,
        cfg.seed,
    )?;
    out.write("comparison.csv", &report.to_csv())?;
    out.finish(None)?;
    Ok(report.to_table())
}

/// Full parameter vector for simulation: inner coefficients by name, the
/// serial-interval block from the model spec.
fn simulation_params(
    design: &Design,
    coefs: &std::collections::BTreeMap<String, f64>,
) -> Result<Vec<f64>> {
    let layout = design.layout();
    let mut v = vec![0.0; layout.len()];
    let mut missing = Vec::new();
    for (k, name) in layout.names.iter().enumerate().take(layout.n_inner()) {
        match coefs.get(name) {
            Some(x) => v[k] = *x,
            None => missing.push(name.as_str()),
        }
    }
    if !missing.is_empty() {
        bail!(ConfigError(format!(
            "simulate.coefficients lacks {}",
            missing.join(", ")
        )));
    }
    if let Some(extra) = coefs
        .keys()
        .find(|k| layout.index(k).is_none_or(|i| i >= layout.n_inner()))
    {
        bail!(ConfigError(format!(
            "unknown coefficient {extra:?} in simulate.coefficients"
        )));
    }
    let si = &design.spec().serial_interval;
    let s = layout.serial.clone();
    if !s.is_empty() {
        match si.family {
            SiFamily::Unrestricted => v[s].copy_from_slice(&si.logits),
            f => {
                let kappa = si.kappa.ok_or_else(|| {
                    anyhow!(ConfigError("model.serial_interval.kappa required".into()))
                })?;
                v[s.start] = kappa_transform(f, kappa)?;
            }
        }
    }
    Ok(v)
}

pub fn simulate(cfg: &RunConfig) -> Result<CountsPanel> {
    cfg.check_inputs()?;
    let sc = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| anyhow!(ConfigError("missing [simulate] section".into())))?;
    let report = match &sc.from_fit {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(FittedModel::from_json(&text)?)
        }
        None => None,
    };
    let spec = match &report {
        Some(r) => r.spec.clone(),
        None => cfg.model()?.clone(),
    };
    let units = if !sc.units.is_empty() {
        sc.units.clone()
    } else if cfg.data.counts.is_some() {
        load_counts(cfg.counts_path()?)?.units().to_vec()
    } else {
        bail!(ConfigError(
            "simulate.units is empty and no data.counts is given".into()
        ));
    };
    if sc.n_weeks < 2 {
        bail!(ConfigError("simulate.n_weeks must be at least 2".into()));
    }
    let weeks = week_sequence(sc.start, sc.n_weeks);
    let zero = CountsPanel::new(
        weeks.clone(),
        units.clone(),
        vec![0; sc.n_weeks * units.len()],
    )?;
    let covariates = match &cfg.data.covariates {
        Some(p) => load_covariates(p, &zero)?,
        None => CovariateTable::new(),
    };
    let inputs = Inputs::with_panel(cfg, zero, covariates)?;
    let design = inputs.design(&spec)?;
    let params = match &report {
        Some(r) => {
            if r.coefficients.names != design.layout().names {
                bail!(ConfigError(
                    "fit report parameters do not match the simulation design".into()
                ));
            }
            r.coefficients.values.clone()
        }
        None => simulation_params(&design, &sc.coefficients)?,
    };
    let counts = simulate_counts(&design, &params, sc.n_weeks, None, cfg.seed)?;
    let panel = CountsPanel::new(weeks, units, counts)?;
    let mut out = Output::new(cfg, "simulate")?;
    let mut buf = Vec::new();
    write_counts(&panel, &mut buf)?;
    out.write("counts.csv", std::str::from_utf8(&buf)?)?;
    out.finish(None)?;
    Ok(panel)
}

pub fn residuals(cfg: &RunConfig, fit_path: Option<&Path>) -> Result<String> {
    cfg.check_inputs()?;
    let inputs = Inputs::load(cfg)?;
    let train = inputs.training(cfg)?;
    let mut out = Output::new(cfg, "residuals")?;
    let (design, params) = match fit_path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let r = FittedModel::from_json(&text)?;
            let d = inputs.design(&r.spec)?;
            if r.coefficients.names != d.layout().names {
                bail!(ConfigError(
                    "fit report parameters do not match the data".into()
                ));
            }
            (d, r.coefficients.values)
        }
        None => {
            let d = inputs.design(cfg.model()?)?;
            let f = fit_profile(&d, &train, &cfg.fit)?;
            if !f.convergence.converged {
                out.note("fit did not converge");
            }
            out.write("fit.json", &(f.to_json()? + "\n"))?;
            (d, f.coefficients.values)
        }
    };
    let res = pearson_residuals(&design, &params, &train, cfg.residuals.scale)?;
    let units = train.units();
    let mut csv = String::from("week");
    for u in units {
        csv.push(',');
        csv.push_str(u);
    }
    csv.push('\n');
    for r in 0..res.n_rows() {
        let t = res.start + r;
        csv.push_str(&train.weeks()[t].to_string());
        for i in 0..res.m {
            csv.push(',');
            csv.push_str(&fmt(res.get(t, i)));
        }
        csv.push('\n');
    }
    out.write("residuals.csv", &csv)?;

    let acfs = residual_acf(&res, cfg.residuals.max_lag)?;
    let mut acf_csv = String::from("unit,lag,acf,band\n");
    let mut report = String::new();
    for (u, a) in units.iter().zip(&acfs) {
        for (lag, v) in a.values.iter().enumerate() {
            let _ = writeln!(acf_csv, "{u},{lag},{},{}", fmt(*v), fmt(a.band));
        }
        let _ = writeln!(
            report,
            "{u}: {} of {} lags outside +-{:.3} {:?}",
            a.crossings.len(),
            cfg.residuals.max_lag,
            a.band,
            a.crossings
        );
    }
    out.write("acf.csv", &acf_csv)?;
    out.finish(None)?;
    Ok(report)
}
