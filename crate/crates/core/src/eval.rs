//! Diagnostics and forecast comparison: Pearson residuals and their
//! autocorrelation, sign-flip permutation tests on paired scores, and
//! baseline comparisons of score files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CountsPanel, IsoWeek};
use crate::error::{Error, Result};
use crate::forecast::{path_rng, ScoreRecord};
use crate::model::{conditional_mean, Design};
use crate::par;

/// Pearson residuals for rows `start..start + n_rows`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPanel {
    pub start: usize,
    pub m: usize,
    pub values: Vec<f64>,
}

impl ResidualPanel {
    pub fn n_rows(&self) -> usize {
        self.values.len() / self.m.max(1)
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[(t - self.start) * self.m + i]
    }

    pub fn unit(&self, i: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(i)
            .step_by(self.m)
            .copied()
            .collect()
    }
}

/// Residual denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualScale {
    /// Conditional standard deviation `sqrt(lambda + psi lambda^2)`.
    #[default]
    StdDev,
    /// Conditional variance without the square root.
    Variance,
}

/// `(Y - lambda) / sqrt(lambda + psi lambda^2)` for rows `p..T`.
pub fn pearson_residuals(
    design: &Design,
    params: &[f64],
    panel: &CountsPanel,
    scale: ResidualScale,
) -> Result<ResidualPanel> {
    let means = conditional_mean(design, params, panel)?;
    let psi = design.psi_at(params);
    let m = design.n_units();
    let mut values = Vec::with_capacity(means.endemic.len());
    for t in means.start..panel.n_weeks() {
        for (i, psi_i) in psi.iter().enumerate() {
            let lambda = means.lambda(t, i);
            let var = lambda + psi_i * lambda * lambda;
            let denom = match scale {
                ResidualScale::StdDev => var.sqrt(),
                ResidualScale::Variance => var,
            };
            values.push((panel.count(t, i) as f64 - lambda) / denom);
        }
    }
    Ok(ResidualPanel {
        start: means.start,
        m,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acf {
    /// Autocorrelations at lags `0..=max_lag`.
    pub values: Vec<f64>,
    /// Half-width of the approximate 95% band, `1.96 / sqrt(n)`.
    pub band: f64,
    /// Lags `>= 1` outside the band.
    pub crossings: Vec<usize>,
}

/// Sample autocorrelation function.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Acf> {
    let n = x.len();
    if n < 2 || max_lag >= n {
        return Err(Error::Domain(format!(
            "max lag {max_lag} too large for a series of length {n}"
        )));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let values: Vec<f64> = (0..=max_lag)
        .map(|k| {
            if c0 == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            (0..n - k)
                .map(|t| (x[t] - mean) * (x[t + k] - mean))
                .sum::<f64>()
                / c0
        })
        .collect();
    let band = 1.96 / (n as f64).sqrt();
    let crossings = (1..=max_lag).filter(|&k| values[k].abs() > band).collect();
    Ok(Acf {
        values,
        band,
        crossings,
    })
}

/// Per-unit ACF of residuals; `max_lag` must be below a quarter of the
/// series length.
pub fn residual_acf(residuals: &ResidualPanel, max_lag: usize) -> Result<Vec<Acf>> {
    let n = residuals.n_rows();
    if max_lag == 0 || 4 * max_lag >= n {
        return Err(Error::Domain(format!(
            "max lag must be between 1 and n/4 for {n} residual rows"
        )));
    }
    (0..residuals.m)
        .map(|i| acf(&residuals.unit(i), max_lag))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    /// `mean(a - b)`.
    pub statistic: f64,
    pub p_value: f64,
    pub n_perm: usize,
}

/// Minimum number of random permutations.
pub const MIN_PERMUTATIONS: usize = 999;
const BLOCK: usize = 1000;

fn paired_differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Data(format!(
            "paired series must be non-empty and of equal length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Data("scores must be finite".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

fn reaches(stat: f64, observed: f64, tol: f64) -> bool {
    stat.abs() >= observed.abs() - tol
}

/// Two-sided sign-flip permutation test of `mean(a - b) = 0` with
/// `p = (1 + #{|T*| >= |T|}) / (1 + n_perm)`.
pub fn permutation_test(
    a: &[f64],
    b: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<PermutationResult> {
    let d = paired_differences(a, b)?;
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::Config(format!(
            "at least {MIN_PERMUTATIONS} permutations are required"
        )));
    }
    let n = d.len() as f64;
    let observed = d.iter().sum::<f64>() / n;
    if d.iter().all(|v| *v == 0.0) {
        return Ok(PermutationResult {
            statistic: 0.0,
            p_value: 1.0,
            n_perm,
        });
    }
    let tol = 1e-10 * d.iter().map(|v| v.abs()).sum::<f64>() / n;
    let blocks: Vec<usize> = (0..n_perm.div_ceil(BLOCK)).collect();
    let hits: usize = par::map(&blocks, |&blk| {
        let mut rng = path_rng(seed, blk, 0);
        let reps = BLOCK.min(n_perm - blk * BLOCK);
        (0..reps)
            .filter(|_| {
                let s: f64 = d
                    .iter()
                    .map(|v| if rng.random::<bool>() { *v } else { -*v })
                    .sum();
                reaches(s / n, observed, tol)
            })
            .count()
    })
    .into_iter()
    .sum();
    Ok(PermutationResult {
        statistic: observed,
        p_value: (1 + hits) as f64 / (1 + n_perm) as f64,
        n_perm,
    })
}

/// Exact sign-flip p-value by enumerating all `2^n` sign patterns
/// (`n <= 24`).
pub fn permutation_test_exact(a: &[f64], b: &[f64]) -> Result<PermutationResult> {
    let d = paired_differences(a, b)?;
    if d.len() > 24 {
        return Err(Error::Domain(
            "exact enumeration limited to 24 pairs".into(),
        ));
    }
    let n = d.len() as f64;
    let observed = d.iter().sum::<f64>() / n;
    let tol = 1e-10 * d.iter().map(|v| v.abs()).sum::<f64>() / n;
    let total = 1usize << d.len();
    let hits = (0..total)
        .filter(|mask| {
            let s: f64 = d
                .iter()
                .enumerate()
                .map(|(k, v)| if mask >> k & 1 == 1 { -*v } else { *v })
                .sum();
            reaches(s / n, observed, tol)
        })
        .count();
    Ok(PermutationResult {
        statistic: observed,
        p_value: if d.iter().all(|v| *v == 0.0) {
            1.0
        } else {
            hits as f64 / total as f64
        },
        n_perm: total,
    })
}

/// Scores of one model aligned by `(origin week, horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub label: String,
    pub scores: BTreeMap<(IsoWeek, usize), f64>,
}

impl ScoreSeries {
    pub fn from_records(label: impl Into<String>, records: &[ScoreRecord]) -> Result<Self> {
        let label = label.into();
        let mut scores = BTreeMap::new();
        for r in records {
            if scores.insert((r.origin_week, r.horizon), r.score).is_some() {
                return Err(Error::Data(format!(
                    "{label}: duplicate row for origin {} horizon {}",
                    r.origin_week, r.horizon
                )));
            }
        }
        Ok(ScoreSeries { label, scores })
    }

    pub fn horizons(&self) -> BTreeSet<usize> {
        self.scores.keys().map(|k| k.1).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub horizon: usize,
    pub n: usize,
    pub mean_score: f64,
    pub baseline_mean: f64,
    /// `mean(model - baseline)`; negative favours the model.
    pub difference: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub n_perm: usize,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,horizon,n,mean_score,baseline_mean,difference,p_value\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.model, r.horizon, r.n, r.mean_score, r.baseline_mean, r.difference, r.p_value
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .chain([5])
            .max()
            .unwrap_or(5);
        let mut s = format!("baseline: {}\n", self.baseline);
        let _ = writeln!(
            s,
            "{:<width$}  {:>7}  {:>5}  {:>10}  {:>10}  {:>8}",
            "model", "horizon", "n", "mean", "difference", "p"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>7}  {:>5}  {:>10.4}  {:>10.4}  {:>8.4}",
                r.model, r.horizon, r.n, r.mean_score, r.difference, r.p_value
            );
        }
        s
    }
}

fn aligned(
    model: &ScoreSeries,
    baseline: &ScoreSeries,
    horizon: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let keys = |s: &ScoreSeries| -> BTreeSet<IsoWeek> {
        s.scores
            .keys()
            .filter(|k| k.1 == horizon)
            .map(|k| k.0)
            .collect()
    };
    let (km, kb) = (keys(model), keys(baseline));
    if km != kb {
        let mut rows: Vec<String> = km
            .symmetric_difference(&kb)
            .map(|w| {
                let owner = if km.contains(w) {
                    &model.label
                } else {
                    &baseline.label
                };
                format!("{w} (only in {owner})")
            })
            .collect();
        let more = rows.len().saturating_sub(10);
        rows.truncate(10);
        let mut msg = format!(
            "{} and {} are not aligned at horizon {horizon}: {}",
            model.label,
            baseline.label,
            rows.join(", ")
        );
        if more > 0 {
            let _ = write!(msg, " and {more} more");
        }
        return Err(Error::Data(msg));
    }
    Ok((
        km.iter().map(|w| model.scores[&(*w, horizon)]).collect(),
        km.iter().map(|w| baseline.scores[&(*w, horizon)]).collect(),
    ))
}

/// Mean score differences of every series against `baseline`, per
/// horizon, with permutation p-values.
pub fn compare_models(
    series: &[ScoreSeries],
    baseline: &str,
    horizons: Option<&[usize]>,
    n_perm: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if series.len() < 2 {
        return Err(Error::Config(
            "at least two score series are required".into(),
        ));
    }
    let base = series
        .iter()
        .find(|s| s.label == baseline)
        .ok_or_else(|| Error::Config(format!("baseline {baseline:?} not among the inputs")))?;
    let hs: Vec<usize> = match horizons {
        Some(h) => h.to_vec(),
        None => base.horizons().into_iter().collect(),
    };
    let mut rows = Vec::new();
    for s in series.iter().filter(|s| s.label != baseline) {
        for &h in &hs {
            let (a, b) = aligned(s, base, h)?;
            if a.is_empty() {
                return Err(Error::Data(format!("no scores at horizon {h}")));
            }
            let test = permutation_test(&a, &b, n_perm, seed)?;
            let n = a.len() as f64;
            rows.push(ComparisonRow {
                model: s.label.clone(),
                horizon: h,
                n: a.len(),
                mean_score: a.iter().sum::<f64>() / n,
                baseline_mean: b.iter().sum::<f64>() / n,
                difference: test.statistic,
                p_value: test.p_value,
            });
        }
    }
    Ok(ComparisonReport {
        baseline: baseline.to_string(),
        n_perm,
        seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DispersionKind, ModelSpec};
    use crate::weights::SerialIntervalSpec;

    #[test]
    fn pearson_examples() {
        let rows: Vec<Vec<u64>> = [4, 6, 4].iter().map(|y| vec![*y]).collect();
        let panel = CountsPanel::from_rows(IsoWeek::new(2000, 1).unwrap(), &rows).unwrap();
        let mut spec = ModelSpec::constant(SerialIntervalSpec::fixed(1));
        spec.epidemic.enabled = false;
        spec.dispersion = DispersionKind::Poisson;
        let d = Design::simple(&spec, &panel).unwrap();
        let r = pearson_residuals(&d, &[4f64.ln()], &panel, ResidualScale::StdDev).unwrap();
        assert!((r.get(1, 0) - 1.0).abs() < 1e-12);
        assert!(r.get(2, 0).abs() < 1e-12);
        let r = pearson_residuals(&d, &[4f64.ln()], &panel, ResidualScale::Variance).unwrap();
        assert!((r.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn acf_lag_zero_is_one() {
        let x: Vec<f64> = (0..50).map(|k| (k as f64 * 0.7).sin()).collect();
        let a = acf(&x, 5).unwrap();
        assert_eq!(a.values[0], 1.0);
    }

    #[test]
    fn identical_series_p_one() {
        let a = vec![0.3, 1.2, 0.8];
        let r = permutation_test(&a, &a, 999, 1).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn constant_shift_minimal_p() {
        let b: Vec<f64> = (0..50).map(|k| (k as f64).sqrt()).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 10.0).collect();
        let r = permutation_test(&a, &b, 999, 3).unwrap();
        assert_eq!(r.p_value, 1.0 / 1000.0);
        let exact = permutation_test_exact(&a[..10], &b[..10]).unwrap();
        // only the identity and the all-flipped pattern reach |T|
        assert_eq!(exact.p_value, 2.0 / 1024.0);
    }

    #[test]
    fn shift_invariance() {
        let a = vec![1.0, 2.5, 0.3, 0.9, 1.7, 2.2];
        let b = vec![1.1, 2.0, 0.7, 0.4, 1.9, 1.2];
        let p1 = permutation_test(&a, &b, 1999, 4).unwrap();
        let a2: Vec<f64> = a.iter().map(|v| v + 3.0).collect();
        let b2: Vec<f64> = b.iter().map(|v| v + 3.0).collect();
        let p2 = permutation_test(&a2, &b2, 1999, 4).unwrap();
        assert_eq!(p1.p_value, p2.p_value);
    }

    fn records(scores: &[f64], start: &str) -> Vec<ScoreRecord> {
        let mut w: IsoWeek = start.parse().unwrap();
        scores
            .iter()
            .map(|s| {
                let r = ScoreRecord {
                    origin_week: w,
                    horizon: 1,
                    score: *s,
                    mc_se: 0.0,
                    n_paths: 0,
                    seed: 1,
                };
                w = w.next();
                r
            })
            .collect()
    }

    #[test]
    fn compare_self_and_misaligned() {
        let s = records(&[1.0, 2.0, 3.0], "2010-W01");
        let a = ScoreSeries::from_records("a", &s).unwrap();
        let b = ScoreSeries::from_records("b", &s).unwrap();
        let rep = compare_models(&[a.clone(), b], "a", None, 999, 1).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].difference, 0.0);
        assert_eq!(rep.rows[0].p_value, 1.0);

        let c = ScoreSeries::from_records("c", &records(&[1.0, 2.0, 3.0], "2010-W02")).unwrap();
        let err = compare_models(&[a.clone(), c.clone()], "a", None, 999, 1).unwrap_err();
        assert!(err.to_string().contains("2010-W01"), "{err}");
        assert!(compare_models(&[a, c], "zzz", None, 999, 1).is_err());
    }
}
