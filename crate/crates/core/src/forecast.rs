//! Path simulation, predictive log scores and rolling-origin evaluation.
//!
//! Origins are 0-based rows: a forecast from origin `o` conditions on rows
//! `0..=o` and targets rows `o + h`. One-step predictive distributions are
//! products of negative binomials and scored exactly. For `h >= 2` the
//! predictive density of the observed vector is estimated by averaging the
//! one-step conditional density over `N` simulated paths.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{CountsPanel, IsoWeek};
use crate::error::{Error, Result};
use crate::inference::fit::{fit_profile, FitOptions};
use crate::inference::likelihood::neg_bin_logpmf;
use crate::model::{Design, ModelState};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Maximum horizon `H`.
    pub horizons: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Divide multivariate scores by the number of units.
    pub standardize: bool,
    /// Refit at every origin; otherwise the supplied coefficients are used.
    pub refit: bool,
    /// Use the previous origin's coefficients when a refit fails.
    pub reuse_on_failure: bool,
    /// Keep the sampled count vectors for `h >= 2`.
    pub keep_samples: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizons: 1,
            n_paths: 1000,
            seed: 1,
            standardize: true,
            refit: true,
            reuse_on_failure: false,
            keep_samples: false,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizons == 0 {
            return Err(Error::Config("forecast horizon must be >= 1".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("number of paths must be >= 1".into()));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for path `path` at origin `origin`; streams are independent
/// of scheduling.
pub fn path_rng(seed: u64, origin: usize, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(origin as u64)));
    rng.set_stream(path as u64);
    rng
}

/// Draws from the negative binomial with mean `lambda` and overdispersion
/// `psi` as a gamma-Poisson mixture.
pub fn sample_neg_bin<R: Rng + ?Sized>(rng: &mut R, lambda: f64, psi: f64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    let rate = if psi > 0.0 {
        let shape = 1.0 / psi;
        match Gamma::new(shape, psi * lambda) {
            Ok(g) => g.sample(rng),
            Err(_) => lambda,
        }
    } else {
        lambda
    };
    if !(rate > 0.0) {
        return 0;
    }
    match Poisson::new(rate) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => rate.round() as u64,
    }
}

/// Mean of unit `i` at absolute row `t`, reading lagged counts from `buf`
/// whose first row is absolute row `base`.
#[inline]
fn mean_at(state: &ModelState, buf: &[u64], base: usize, t: usize, i: usize) -> f64 {
    let m = state.n_units();
    let nu = state.nu[t * m + i];
    let phi = state.phi[t * m + i];
    if phi == 0.0 {
        return nu;
    }
    let mut acc = 0.0;
    for (d, u) in state.lag.iter().enumerate() {
        if *u == 0.0 {
            continue;
        }
        let r = t - d - 1 - base;
        let row = &buf[r * m..(r + 1) * m];
        let mut s = 0.0;
        for (j, y) in row.iter().enumerate() {
            s += state.spatial[j * m + i] * *y as f64;
        }
        acc += u * s;
    }
    nu + phi * acc
}

fn check_origin(design: &Design, panel: &CountsPanel, origin: usize, horizon: usize) -> Result<()> {
    let p = design.order();
    if origin + 1 < p {
        return Err(Error::Data(format!(
            "origin row {origin} leaves fewer than p = {p} conditioning weeks"
        )));
    }
    if origin >= panel.n_weeks() {
        return Err(Error::Data(format!(
            "origin row {origin} beyond the {} observed weeks",
            panel.n_weeks()
        )));
    }
    if origin + horizon >= design.n_time() {
        return Err(Error::Data(format!(
            "design covers {} weeks; origin {origin} + horizon {horizon} is beyond it",
            design.n_time()
        )));
    }
    Ok(())
}

/// The last `p` observed rows up to and including `origin`.
fn seed_window(panel: &CountsPanel, origin: usize, p: usize) -> (usize, Vec<u64>) {
    let m = panel.n_units();
    let base = origin + 1 - p;
    (base, panel.counts()[base * m..(origin + 1) * m].to_vec())
}

/// Simulates `n` paths of `h` weeks beyond `origin`. Each path is an
/// `h x m` row-major count matrix.
pub fn simulate_paths(
    design: &Design,
    params: &[f64],
    panel: &CountsPanel,
    origin: usize,
    h: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<u64>>> {
    check_origin(design, panel, origin, h)?;
    let state = design.state(params)?;
    let (base, window) = seed_window(panel, origin, design.order());
    Ok((0..n)
        .map(|k| {
            simulate_one(
                &state,
                &window,
                base,
                origin,
                h,
                &mut path_rng(seed, origin, k),
            )
        })
        .collect())
}

fn simulate_one(
    state: &ModelState,
    window: &[u64],
    base: usize,
    origin: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<u64> {
    let m = state.n_units();
    let mut buf = Vec::with_capacity(window.len() + h * m);
    buf.extend_from_slice(window);
    for s in 1..=h {
        let t = origin + s;
        for i in 0..m {
            let lambda = mean_at(state, &buf, base, t, i);
            buf.push(sample_neg_bin(rng, lambda, state.psi[i]));
        }
    }
    buf.split_off(window.len())
}

/// One-step predictive means and dispersions for row `origin + 1`.
pub fn one_step_distribution(
    design: &Design,
    params: &[f64],
    panel: &CountsPanel,
    origin: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_origin(design, panel, origin, 1)?;
    let state = design.state(params)?;
    let (base, window) = seed_window(panel, origin, design.order());
    let lambda = (0..design.n_units())
        .map(|i| mean_at(&state, &window, base, origin + 1, i))
        .collect();
    Ok((lambda, state.psi.clone()))
}

/// Exact log score `-sum_i log f(y_i)` of the one-step forecast, divided
/// by `m` when `standardize` is set.
pub fn logscore_onestep(
    design: &Design,
    params: &[f64],
    panel: &CountsPanel,
    origin: usize,
    y_obs: &[u64],
    standardize: bool,
) -> Result<f64> {
    let (lambda, psi) = one_step_distribution(design, params, panel, origin)?;
    if y_obs.len() != lambda.len() {
        return Err(Error::Data(
            "observation vector does not match units".into(),
        ));
    }
    let s: f64 = -(0..lambda.len())
        .map(|i| neg_bin_logpmf(y_obs[i], lambda[i], psi[i]))
        .sum::<f64>();
    Ok(if standardize {
        s / lambda.len() as f64
    } else {
        s
    })
}

/// Monte Carlo estimate of a multi-step log score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbScore {
    pub score: f64,
    /// Delta-method standard error of the score.
    pub mc_se: f64,
    /// Every conditional density underflowed; `score` is `+inf`.
    pub underflow: bool,
}

/// Turns per-path conditional log densities into a score estimate:
/// `-(logsumexp - log N)` with the delta-method standard error.
pub fn rb_estimate(log_dens: &[f64], scale: f64) -> RbScore {
    let n = log_dens.len() as f64;
    let max = log_dens.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return RbScore {
            score: f64::INFINITY,
            mc_se: f64::NAN,
            underflow: true,
        };
    }
    let w: Vec<f64> = log_dens.iter().map(|l| (l - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let var = if w.len() > 1 {
        w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let log_mean = max + mean.ln();
    RbScore {
        score: -log_mean / scale,
        mc_se: (var / n).sqrt() / mean / scale,
        underflow: false,
    }
}

fn conditional_log_density(
    state: &ModelState,
    buf: &[u64],
    base: usize,
    t: usize,
    y_obs: &[u64],
) -> f64 {
    (0..state.n_units())
        .map(|i| neg_bin_logpmf(y_obs[i], mean_at(state, buf, base, t, i), state.psi[i]))
        .sum()
}

/// Rao-Blackwellized log score of `y_obs` at row `origin + h`, `h >= 2`.
#[allow(clippy::too_many_arguments)]
pub fn logscore_rb(
    design: &Design,
    params: &[f64],
    panel: &CountsPanel,
    origin: usize,
    h: usize,
    y_obs: &[u64],
    n_paths: usize,
    seed: u64,
    standardize: bool,
) -> Result<RbScore> {
    if h < 2 {
        return Err(Error::Domain("Rao-Blackwell scores need h >= 2".into()));
    }
    let m = design.n_units();
    if y_obs.len() != m {
        return Err(Error::Data(
            "observation vector does not match units".into(),
        ));
    }
    let paths = simulate_paths(design, params, panel, origin, h - 1, n_paths, seed)?;
    let state = design.state(params)?;
    let (base, window) = seed_window(panel, origin, design.order());
    let log_dens: Vec<f64> = paths
        .iter()
        .map(|path| {
            let mut buf = window.clone();
            buf.extend_from_slice(path);
            conditional_log_density(&state, &buf, base, origin + h, y_obs)
        })
        .collect();
    let scale = if standardize { m as f64 } else { 1.0 };
    Ok(rb_estimate(&log_dens, scale))
}

/// Simulates a full panel of `n_weeks` rows. Rows before `p` are taken
/// from `initial` when given (row-major, `p x m`), otherwise drawn from
/// the endemic component alone.
pub fn simulate_counts(
    design: &Design,
    params: &[f64],
    n_weeks: usize,
    initial: Option<&[u64]>,
    seed: u64,
) -> Result<Vec<u64>> {
    if n_weeks > design.n_time() {
        return Err(Error::Data(format!(
            "design covers {} weeks, {n_weeks} requested",
            design.n_time()
        )));
    }
    let state = design.state(params)?;
    let (m, p) = (design.n_units(), design.order());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = Vec::with_capacity(n_weeks * m);
    match initial {
        Some(init) => {
            if init.len() != p * m {
                return Err(Error::Data(format!(
                    "initial rows must hold {p} x {m} counts"
                )));
            }
            buf.extend_from_slice(init);
        }
        None => {
            for t in 0..p {
                for i in 0..m {
                    buf.push(sample_neg_bin(&mut rng, state.nu[t * m + i], state.psi[i]));
                }
            }
        }
    }
    buf.truncate(n_weeks * m);
    for t in p..n_weeks {
        for i in 0..m {
            let lambda = mean_at(&state, &buf, 0, t, i);
            buf.push(sample_neg_bin(&mut rng, lambda, state.psi[i]));
        }
    }
    Ok(buf)
}

/// Empirical quantiles per horizon and unit over simulated paths. Result
/// index `[h - 1][i][q]`.
pub fn path_quantiles(paths: &[Vec<u64>], m: usize, probs: &[f64]) -> Vec<Vec<Vec<f64>>> {
    if paths.is_empty() {
        return Vec::new();
    }
    let h = paths[0].len() / m;
    (0..h)
        .map(|s| {
            (0..m)
                .map(|i| {
                    let mut v: Vec<u64> = paths.iter().map(|p| p[s * m + i]).collect();
                    v.sort_unstable();
                    probs
                        .iter()
                        .map(|q| {
                            let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
                            v[k] as f64
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OriginStatus {
    Fitted { converged: bool },
    Frozen,
    Fallback { from: IsoWeek, reason: String },
    Failed { reason: String },
}

impl OriginStatus {
    pub fn scored(&self) -> bool {
        !matches!(self, OriginStatus::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScore {
    pub horizon: usize,
    pub score: f64,
    pub mc_se: f64,
    pub n_paths: usize,
}

/// Sampled count vectors for one horizon, `n_paths x m` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBlock {
    pub horizon: usize,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginForecast {
    pub origin: usize,
    pub origin_week: IsoWeek,
    pub status: OriginStatus,
    /// One-step negative binomial means and dispersions per unit.
    pub lambda: Vec<f64>,
    pub psi: Vec<f64>,
    pub scores: Vec<HorizonScore>,
    pub samples: Vec<SampleBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    pub config: ForecastConfig,
    pub units: Vec<String>,
    pub origins: Vec<OriginForecast>,
}

/// One row of the scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub origin_week: IsoWeek,
    pub horizon: usize,
    pub score: f64,
    pub mc_se: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl ForecastSet {
    pub fn records(&self) -> Vec<ScoreRecord> {
        let mut out = Vec::new();
        for o in self.origins.iter().filter(|o| o.status.scored()) {
            for s in &o.scores {
                out.push(ScoreRecord {
                    origin_week: o.origin_week,
                    horizon: s.horizon,
                    score: s.score,
                    mc_se: s.mc_se,
                    n_paths: s.n_paths,
                    seed: self.config.seed,
                });
            }
        }
        out
    }

    /// Mean score and mean Monte Carlo s.e. per horizon over scored origins.
    pub fn mean_scores(&self) -> Vec<(usize, usize, f64, f64)> {
        (1..=self.config.horizons)
            .filter_map(|h| {
                let v: Vec<&HorizonScore> = self
                    .origins
                    .iter()
                    .filter(|o| o.status.scored())
                    .flat_map(|o| o.scores.iter().filter(move |s| s.horizon == h))
                    .collect();
                if v.is_empty() {
                    return None;
                }
                let n = v.len() as f64;
                Some((
                    h,
                    v.len(),
                    v.iter().map(|s| s.score).sum::<f64>() / n,
                    v.iter().map(|s| s.mc_se).sum::<f64>() / n,
                ))
            })
            .collect()
    }

    pub fn failed(&self) -> Vec<&OriginForecast> {
        self.origins.iter().filter(|o| !o.status.scored()).collect()
    }
}

/// Forecasts from `origin` with fixed coefficients, scored against the
/// panel for every horizon whose target is observed.
pub fn forecast_origin(
    design: &Design,
    params: &[f64],
    panel: &CountsPanel,
    origin: usize,
    config: &ForecastConfig,
) -> Result<OriginForecast> {
    config.validate()?;
    let m = design.n_units();
    let t_len = panel.n_weeks();
    let h_obs = config.horizons.min(t_len.saturating_sub(origin + 1));
    let (lambda, psi) = one_step_distribution(design, params, panel, origin)?;
    let scale = if config.standardize { m as f64 } else { 1.0 };
    let mut scores = Vec::with_capacity(h_obs);
    if h_obs >= 1 {
        let y = panel.row(origin + 1);
        let s: f64 = -(0..m)
            .map(|i| neg_bin_logpmf(y[i], lambda[i], psi[i]))
            .sum::<f64>();
        scores.push(HorizonScore {
            horizon: 1,
            score: s / scale,
            mc_se: 0.0,
            n_paths: 0,
        });
    }
    let path_len = if config.keep_samples {
        config.horizons.min(design.n_time() - origin - 1)
    } else {
        h_obs.saturating_sub(1)
    };
    let mut samples = Vec::new();
    if path_len > 0 {
        check_origin(design, panel, origin, path_len)?;
        let state = design.state(params)?;
        let (base, window) = seed_window(panel, origin, design.order());
        let n = config.n_paths;
        let mut log_dens = vec![vec![0.0; n]; h_obs.saturating_sub(1)];
        if config.keep_samples {
            samples = (2..=config.horizons)
                .map(|h| SampleBlock {
                    horizon: h,
                    counts: Vec::with_capacity(n * m),
                })
                .collect();
        }
        let mut buf = Vec::with_capacity(window.len() + path_len * m);
        for k in 0..n {
            let mut rng = path_rng(config.seed, origin, k);
            buf.clear();
            buf.extend_from_slice(&window);
            for s in 1..=path_len {
                let t = origin + s;
                if s >= 2 && s <= h_obs {
                    log_dens[s - 2][k] =
                        conditional_log_density(&state, &buf, base, t, panel.row(t));
                }
                for i in 0..m {
                    let lambda = mean_at(&state, &buf, base, t, i);
                    buf.push(sample_neg_bin(&mut rng, lambda, state.psi[i]));
                }
                if config.keep_samples && s >= 2 {
                    let row = &buf[buf.len() - m..];
                    samples[s - 2].counts.extend_from_slice(row);
                }
            }
            // the last horizon's density needs the path up to h_obs - 1 only
            if h_obs >= 2 && path_len < h_obs {
                let t = origin + h_obs;
                log_dens[h_obs - 2][k] =
                    conditional_log_density(&state, &buf, base, t, panel.row(t));
            }
        }
        samples.retain(|b| !b.counts.is_empty());
        for (k, ld) in log_dens.iter().enumerate() {
            let est = rb_estimate(ld, scale);
            scores.push(HorizonScore {
                horizon: k + 2,
                score: est.score,
                mc_se: est.mc_se,
                n_paths: n,
            });
        }
    }
    Ok(OriginForecast {
        origin,
        origin_week: panel.weeks()[origin],
        status: OriginStatus::Frozen,
        lambda,
        psi,
        scores,
        samples,
    })
}

/// Rolling-origin evaluation: origins `test_start - 1 ..= T - 2`, each
/// refitted on rows `0..=origin` (unless `config.refit` is off, in which
/// case `params` is used throughout) and scored for horizons up to `H`
/// whose targets are observed.
///
/// `design` must be built on the full panel; the serial-interval order is
/// taken from it.
pub fn rolling_forecasts(
    design: &Design,
    panel: &CountsPanel,
    test_start: usize,
    params: Option<&[f64]>,
    fit_opts: &FitOptions,
    config: &ForecastConfig,
) -> Result<ForecastSet> {
    config.validate()?;
    let t_len = panel.n_weeks();
    let p = design.order();
    if test_start < p + 2 || test_start >= t_len {
        return Err(Error::Config(format!(
            "test start row {test_start} must lie in {}..{t_len}",
            p + 2
        )));
    }
    let origins: Vec<usize> = (test_start - 1..t_len - 1).collect();
    let fit_opts = FitOptions {
        standard_errors: false,
        first_row: None,
        ..fit_opts.clone()
    };

    // coefficients per origin
    let fits: Vec<std::result::Result<(Vec<f64>, OriginStatus), String>> = if config.refit {
        par::map(&origins, |&o| {
            let train = panel.prefix(o + 1)?;
            fit_profile(design, &train, &fit_opts)
        })
        .into_iter()
        .map(|r| match r {
            Ok(f) if f.convergence.converged => Ok((
                f.coefficients.values,
                OriginStatus::Fitted { converged: true },
            )),
            Ok(f) => Err(format!(
                "not converged (gradient {:.3e})",
                f.convergence.gradient_norm
            )),
            Err(e) => Err(e.to_string()),
        })
        .collect()
    } else {
        let params = params.ok_or_else(|| {
            Error::Config("coefficients are required when refitting is disabled".into())
        })?;
        origins
            .iter()
            .map(|_| Ok((params.to_vec(), OriginStatus::Frozen)))
            .collect()
    };

    let mut resolved: Vec<std::result::Result<(Vec<f64>, OriginStatus), String>> =
        Vec::with_capacity(origins.len());
    let mut last_good: Option<(usize, Vec<f64>)> = None;
    for (o, fit) in origins.iter().zip(fits) {
        match fit {
            Ok((x, status)) => {
                last_good = Some((*o, x.clone()));
                resolved.push(Ok((x, status)));
            }
            Err(reason) => match (&last_good, config.reuse_on_failure) {
                (Some((prev, x)), true) => resolved.push(Ok((
                    x.clone(),
                    OriginStatus::Fallback {
                        from: panel.weeks()[*prev],
                        reason,
                    },
                ))),
                _ => resolved.push(Err(reason)),
            },
        }
    }

    let jobs: Vec<(usize, std::result::Result<(Vec<f64>, OriginStatus), String>)> =
        origins.iter().copied().zip(resolved).collect();
    let out = par::map(&jobs, |(o, fit)| -> Result<OriginForecast> {
        match fit {
            Ok((x, status)) => {
                let mut f = forecast_origin(design, x, panel, *o, config)?;
                f.status = status.clone();
                Ok(f)
            }
            Err(reason) => Ok(OriginForecast {
                origin: *o,
                origin_week: panel.weeks()[*o],
                status: OriginStatus::Failed {
                    reason: reason.clone(),
                },
                lambda: Vec::new(),
                psi: Vec::new(),
                scores: Vec::new(),
                samples: Vec::new(),
            }),
        }
    });
    Ok(ForecastSet {
        config: config.clone(),
        units: design.units().to_vec(),
        origins: out.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

/// Column header of the scores file.
pub const SCORES_HEADER: [&str; 6] = [
    "origin_week",
    "horizon",
    "score",
    "mc_se",
    "n_paths",
    "seed",
];

pub fn write_scores<W: Write>(w: W, records: &[ScoreRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SCORES_HEADER)?;
    for r in records {
        wr.write_record([
            r.origin_week.to_string(),
            r.horizon.to_string(),
            fmt_f64(r.score),
            fmt_f64(r.mc_se),
            r.n_paths.to_string(),
            r.seed.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

pub fn save_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scores(std::io::BufWriter::new(f), records)
}

pub fn read_scores<R: Read>(rdr: R, source: &Path) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(rdr);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SCORES_HEADER {
        return Err(Error::DataAt {
            path: source.to_path_buf(),
            line: 1,
            msg: format!("expected header {}", SCORES_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let bad = |msg: String| Error::DataAt {
            path: source.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != 6 {
            return Err(bad("ragged row".into()));
        }
        let num = |idx: usize| -> Result<f64> {
            rec[idx]
                .parse::<f64>()
                .map_err(|_| bad(format!("invalid number {:?}", &rec[idx])))
        };
        let int = |idx: usize| -> Result<u64> {
            rec[idx]
                .parse::<u64>()
                .map_err(|_| bad(format!("invalid integer {:?}", &rec[idx])))
        };
        out.push(ScoreRecord {
            origin_week: rec[0].parse().map_err(|e: Error| bad(e.to_string()))?,
            horizon: int(1)? as usize,
            score: num(2)?,
            mc_se: num(3)?,
            n_paths: int(4)? as usize,
            seed: int(5)?,
        });
    }
    Ok(out)
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(f, path)
}

/// Writes kept samples as `origin_week,horizon,path,<unit...>`, one row per
/// sampled count vector.
pub fn write_samples<W: Write>(w: W, set: &ForecastSet) -> Result<()> {
    let m = set.units.len();
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["origin_week".to_string(), "horizon".into(), "path".into()];
    header.extend(set.units.iter().cloned());
    wr.write_record(&header)?;
    for o in &set.origins {
        for b in &o.samples {
            for (k, row) in b.counts.chunks(m).enumerate() {
                let mut rec = vec![
                    o.origin_week.to_string(),
                    b.horizon.to_string(),
                    k.to_string(),
                ];
                rec.extend(row.iter().map(u64::to_string));
                wr.write_record(&rec)?;
            }
        }
    }
    wr.flush().map_err(|e| Error::io("<samples>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DispersionKind, ModelSpec};
    use crate::weights::SerialIntervalSpec;

    fn univariate(series: &[u64]) -> CountsPanel {
        let rows: Vec<Vec<u64>> = series.iter().map(|y| vec![*y]).collect();
        CountsPanel::from_rows(IsoWeek::new(2000, 1).unwrap(), &rows).unwrap()
    }

    fn endemic_only(panel: &CountsPanel, nu: f64) -> (Design, Vec<f64>) {
        let mut spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        spec.epidemic.enabled = false;
        spec.dispersion = DispersionKind::Poisson;
        let d = Design::simple(&spec, panel).unwrap();
        (d, vec![nu.ln()])
    }

    #[test]
    fn onestep_poisson_example() {
        let panel = univariate(&[1, 1, 0]);
        let (d, x) = endemic_only(&panel, 2.0);
        let s = logscore_onestep(&d, &x, &panel, 1, &[0], false).unwrap();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn paths_deterministic() {
        let panel = univariate(&[3; 20]);
        let (d, x) = endemic_only(&panel, 3.0);
        let a = simulate_paths(&d, &x, &panel, 10, 5, 1, 42).unwrap();
        let b = simulate_paths(&d, &x, &panel, 10, 5, 1, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&d, &x, &panel, 10, 5, 1, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn endemic_poisson_path_means() {
        let panel = univariate(&[3; 40]);
        let (d, x) = endemic_only(&panel, 3.0);
        let (n, h) = (4000, 5);
        let paths = simulate_paths(&d, &x, &panel, 30, h, n, 7).unwrap();
        for s in 0..h {
            let mean = paths.iter().map(|p| p[s] as f64).sum::<f64>() / n as f64;
            assert!((mean - 3.0).abs() < 3.0 * (3.0 / n as f64).sqrt(), "{mean}");
        }
    }

    #[test]
    fn rb_without_feedback_has_zero_se() {
        let panel = univariate(&[2, 5, 1, 4, 3, 0, 6]);
        let (d, x) = endemic_only(&panel, 2.5);
        let r = logscore_rb(&d, &x, &panel, 2, 3, &[3], 200, 1, false).unwrap();
        assert_eq!(r.mc_se, 0.0);
        let exact = -neg_bin_logpmf(3, 2.5, 0.0);
        assert!((r.score - exact).abs() < 1e-12);
    }

    #[test]
    fn rb_underflow_flag() {
        let r = rb_estimate(&[f64::NEG_INFINITY; 4], 1.0);
        assert!(r.underflow && r.score.is_infinite());
    }

    #[test]
    fn scores_round_trip() {
        let recs = vec![
            ScoreRecord {
                origin_week: "2011-W06".parse().unwrap(),
                horizon: 2,
                score: 1.234_567_890_123,
                mc_se: 0.01,
                n_paths: 1000,
                seed: 9,
            },
            ScoreRecord {
                origin_week: "2011-W07".parse().unwrap(),
                horizon: 1,
                score: f64::INFINITY,
                mc_se: 0.0,
                n_paths: 0,
                seed: 9,
            },
        ];
        let mut buf = Vec::new();
        write_scores(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("origin_week,horizon,score,mc_se,n_paths,seed\n"));
        let back = read_scores(&buf[..], Path::new("s.csv")).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn horizon_counts_follow_window() {
        let series: Vec<u64> = (0..30).map(|k| (k % 7) as u64).collect();
        let panel = univariate(&series);
        let (d, x) = endemic_only(&panel, 3.0);
        let cfg = ForecastConfig {
            horizons: 4,
            n_paths: 20,
            refit: false,
            ..Default::default()
        };
        let set =
            rolling_forecasts(&d, &panel, 20, Some(&x), &FitOptions::default(), &cfg).unwrap();
        let n_test = 30 - 20;
        for (h, count, _, _) in set.mean_scores() {
            assert_eq!(count, n_test - h + 1);
        }
    }
}
