//! Serial-interval lag weights and spatial power-law weights.
//!
//! Lag weights are computed for lags `d = 1..=p` and renormalized to a
//! probability vector (truncate, then normalize; no tail correction).
//! Spatial weights `(o_ji + 1)^(-rho)` are normalized per source row `j`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::NeighbourhoodMatrix;
use crate::error::{Error, Result};

/// Family of the discrete serial-interval distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiFamily {
    Fixed,
    #[serde(alias = "poisson")]
    ShiftedPoisson,
    Triangular,
    Geometric,
    Unrestricted,
}

impl SiFamily {
    pub const ALL: [SiFamily; 5] = [
        SiFamily::Fixed,
        SiFamily::ShiftedPoisson,
        SiFamily::Triangular,
        SiFamily::Geometric,
        SiFamily::Unrestricted,
    ];

    /// True for the families governed by a single weighting parameter kappa.
    pub fn is_parametric(self) -> bool {
        matches!(
            self,
            SiFamily::ShiftedPoisson | SiFamily::Triangular | SiFamily::Geometric
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            SiFamily::Fixed => "fixed",
            SiFamily::ShiftedPoisson => "shifted_poisson",
            SiFamily::Triangular => "triangular",
            SiFamily::Geometric => "geometric",
            SiFamily::Unrestricted => "unrestricted",
        }
    }

    /// Whether `kappa` lies in the family's parameter domain.
    pub fn kappa_in_domain(self, kappa: f64) -> bool {
        match self {
            SiFamily::ShiftedPoisson => kappa > 0.0 && kappa.is_finite(),
            SiFamily::Triangular | SiFamily::Geometric => kappa > 0.0 && kappa < 1.0,
            SiFamily::Fixed | SiFamily::Unrestricted => true,
        }
    }
}

impl fmt::Display for SiFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SiFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(SiFamily::Fixed),
            "shifted_poisson" | "poisson" => Ok(SiFamily::ShiftedPoisson),
            "triangular" => Ok(SiFamily::Triangular),
            "geometric" => Ok(SiFamily::Geometric),
            "unrestricted" => Ok(SiFamily::Unrestricted),
            other => Err(Error::Config(format!(
                "unknown serial interval family {other:?}"
            ))),
        }
    }
}

/// Serial-interval weighting scheme over lags `1..=order`.
///
/// `kappa` is only read by the parametric families; `logits` (length
/// `order - 1`, lag 1 is the reference category) only by `Unrestricted`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialIntervalSpec {
    pub family: SiFamily,
    pub order: usize,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub logits: Vec<f64>,
}

impl SerialIntervalSpec {
    pub fn fixed(order: usize) -> Self {
        SerialIntervalSpec {
            family: SiFamily::Fixed,
            order,
            kappa: None,
            logits: Vec::new(),
        }
    }

    pub fn parametric(family: SiFamily, order: usize, kappa: f64) -> Self {
        SerialIntervalSpec {
            family,
            order,
            kappa: Some(kappa),
            logits: Vec::new(),
        }
    }

    pub fn unrestricted(logits: Vec<f64>) -> Self {
        SerialIntervalSpec {
            family: SiFamily::Unrestricted,
            order: logits.len() + 1,
            kappa: None,
            logits,
        }
    }

    /// Unrestricted spec from positive (unnormalized) weights.
    pub fn unrestricted_from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("empty weight vector".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain(
                "weights must be finite and non-negative".into(),
            ));
        }
        if weights[0] <= 0.0 {
            return Err(Error::Domain(
                "lag-1 weight must be positive (reference category)".into(),
            ));
        }
        let logits = weights[1..].iter().map(|w| (w / weights[0]).ln()).collect();
        Ok(SerialIntervalSpec::unrestricted(logits))
    }

    /// Number of free serial-interval parameters entering the likelihood.
    pub fn n_free(&self) -> usize {
        match self.family {
            SiFamily::Fixed => 0,
            SiFamily::Unrestricted => self.order.saturating_sub(1),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Domain("serial interval order must be >= 1".into()));
        }
        match self.family {
            SiFamily::Unrestricted => {
                if self.logits.len() != self.order - 1 {
                    return Err(Error::Domain(format!(
                        "unrestricted order {} needs {} logits, got {}",
                        self.order,
                        self.order - 1,
                        self.logits.len()
                    )));
                }
                if self.logits.iter().any(|z| !z.is_finite()) {
                    return Err(Error::Domain("non-finite logit weight".into()));
                }
            }
            f if f.is_parametric() => {
                let k = self
                    .kappa
                    .ok_or_else(|| Error::Domain(format!("{f} family requires kappa")))?;
                if !f.kappa_in_domain(k) {
                    return Err(Error::Domain(format!("kappa {k} outside domain of {f}")));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Unnormalized weights `u_d`, `d = 1..=p`, in log space.
fn log_raw_weights(family: SiFamily, kappa: f64, p: usize) -> Vec<f64> {
    (1..=p)
        .map(|d| {
            let d = d as f64;
            match family {
                SiFamily::ShiftedPoisson => {
                    if d == 1.0 {
                        -kappa
                    } else {
                        (d - 1.0) * kappa.ln() - ln_gamma(d) - kappa
                    }
                }
                SiFamily::Triangular => (1.0 - kappa * d).max(0.0).ln(),
                SiFamily::Geometric => (d - 1.0) * (-kappa).ln_1p() + kappa.ln(),
                SiFamily::Fixed | SiFamily::Unrestricted => {
                    if d == 1.0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                }
            }
        })
        .collect()
}

fn normalize_log(log_u: &[f64]) -> Result<Vec<f64>> {
    let max = log_u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::Domain(
            "all lag weights are zero; cannot normalize".into(),
        ));
    }
    let e: Vec<f64> = log_u.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

/// Normalized lag weights as a probability vector over lags `1..=p`.
pub fn lag_weights(spec: &SerialIntervalSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let p = spec.order;
    match spec.family {
        SiFamily::Unrestricted => {
            let mut z = Vec::with_capacity(p);
            z.push(0.0);
            z.extend_from_slice(&spec.logits);
            normalize_log(&z)
        }
        f => normalize_log(&log_raw_weights(f, spec.kappa.unwrap_or(0.5), p)),
    }
}

/// Weighting parameter mapped to the real line: log for the shifted
/// Poisson family, logit for triangular and geometric.
pub fn kappa_transform(family: SiFamily, kappa: f64) -> Result<f64> {
    if !family.is_parametric() {
        return Err(Error::Domain(format!("{family} family has no kappa")));
    }
    if !family.kappa_in_domain(kappa) {
        return Err(Error::Domain(format!(
            "kappa {kappa} outside domain of {family}"
        )));
    }
    Ok(match family {
        SiFamily::ShiftedPoisson => kappa.ln(),
        _ => (kappa / (1.0 - kappa)).ln(),
    })
}

/// Inverse of [`kappa_transform`]; maps every real into the domain.
/// Extreme inputs are clamped so the result stays strictly inside it.
pub fn kappa_untransform(family: SiFamily, z: f64) -> f64 {
    match family {
        SiFamily::ShiftedPoisson => z.clamp(-700.0, 700.0).exp(),
        _ => {
            let k = 1.0 / (1.0 + (-z).exp());
            k.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
        }
    }
}

/// Kind of coupling between spatial units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialWeightSpec {
    /// No cross-unit transmission: `w_ji = 1{j = i}`.
    Identity,
    /// `w_ji = (o_ji + 1)^(-rho)`, row-normalized.
    PowerLaw { rho: f64 },
}

/// Row-normalized spatial weights, row-major with row `j` the source unit.
pub fn spatial_weights(spec: SpatialWeightSpec, nb: &NeighbourhoodMatrix) -> Result<Vec<f64>> {
    let m = nb.n_units();
    match spec {
        SpatialWeightSpec::Identity => Ok(identity(m)),
        SpatialWeightSpec::PowerLaw { rho } => {
            if rho.is_nan() || rho < 0.0 {
                return Err(Error::Domain(format!(
                    "power law decay must be >= 0, got {rho}"
                )));
            }
            if rho.is_infinite() {
                return Ok(identity(m));
            }
            let mut w = vec![0.0; m * m];
            for j in 0..m {
                let row = &mut w[j * m..(j + 1) * m];
                for (i, x) in row.iter_mut().enumerate() {
                    *x = (-rho * (nb.order(j, i) as f64).ln_1p()).exp();
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
            }
            Ok(w)
        }
    }
}

/// Derivative of the normalized power-law weights with respect to `log(rho)`.
pub fn spatial_weights_dlogrho(rho: f64, nb: &NeighbourhoodMatrix) -> Result<Vec<f64>> {
    let m = nb.n_units();
    let w = spatial_weights(SpatialWeightSpec::PowerLaw { rho }, nb)?;
    let mut dw = vec![0.0; m * m];
    if rho.is_infinite() {
        return Ok(dw);
    }
    for j in 0..m {
        let mean_l: f64 = (0..m)
            .map(|h| w[j * m + h] * (nb.order(j, h) as f64).ln_1p())
            .sum();
        for i in 0..m {
            let l = (nb.order(j, i) as f64).ln_1p();
            dw[j * m + i] = rho * w[j * m + i] * (mean_l - l);
        }
    }
    Ok(dw)
}

fn identity(m: usize) -> Vec<f64> {
    let mut w = vec![0.0; m * m];
    for i in 0..m {
        w[i * m + i] = 1.0;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn geometric_half_order_three() {
        let u = lag_weights(&SerialIntervalSpec::parametric(SiFamily::Geometric, 3, 0.5)).unwrap();
        assert!(
            close(&u, &[4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0], 1e-15),
            "{u:?}"
        );
    }

    #[test]
    fn triangular_quarter_order_four() {
        let u = lag_weights(&SerialIntervalSpec::parametric(
            SiFamily::Triangular,
            4,
            0.25,
        ))
        .unwrap();
        assert!(close(&u, &[0.5, 1.0 / 3.0, 1.0 / 6.0, 0.0], 1e-15), "{u:?}");
    }

    #[test]
    fn poisson_small_kappa_concentrates_on_lag_one() {
        let u = lag_weights(&SerialIntervalSpec::parametric(
            SiFamily::ShiftedPoisson,
            6,
            1e-300,
        ))
        .unwrap();
        assert!(close(&u, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1e-15), "{u:?}");
    }

    #[test]
    fn fixed_family() {
        let u = lag_weights(&SerialIntervalSpec::fixed(5)).unwrap();
        assert_eq!(u, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn poisson_mode() {
        for kappa in [1.5, 2.3, 3.9] {
            let u = lag_weights(&SerialIntervalSpec::parametric(
                SiFamily::ShiftedPoisson,
                10,
                kappa,
            ))
            .unwrap();
            let mode = (0..10).max_by(|&a, &b| u[a].total_cmp(&u[b])).unwrap() + 1;
            assert_eq!(mode, kappa.floor() as usize + 1);
        }
    }

    #[test]
    fn unrestricted_order_one_is_fixed() {
        let u = lag_weights(&SerialIntervalSpec::unrestricted(vec![])).unwrap();
        assert_eq!(u, lag_weights(&SerialIntervalSpec::fixed(1)).unwrap());
        let v =
            lag_weights(&SerialIntervalSpec::unrestricted_from_weights(&[2.0, 1.0, 1.0]).unwrap())
                .unwrap();
        assert!(close(&v, &[0.5, 0.25, 0.25], 1e-15));
    }

    #[test]
    fn domain_errors() {
        assert!(lag_weights(&SerialIntervalSpec::parametric(SiFamily::Geometric, 3, 1.0)).is_err());
        assert!(lag_weights(&SerialIntervalSpec::parametric(
            SiFamily::Triangular,
            3,
            0.0
        ))
        .is_err());
        assert!(lag_weights(&SerialIntervalSpec::parametric(
            SiFamily::ShiftedPoisson,
            3,
            -1.0
        ))
        .is_err());
        assert!(SerialIntervalSpec::unrestricted_from_weights(&[0.0, 0.0]).is_err());
        assert!(lag_weights(&SerialIntervalSpec::fixed(0)).is_err());
    }

    #[test]
    fn kappa_transforms() {
        assert_eq!(kappa_transform(SiFamily::Geometric, 0.5).unwrap(), 0.0);
        assert_eq!(kappa_transform(SiFamily::ShiftedPoisson, 1.0).unwrap(), 0.0);
        for f in [
            SiFamily::ShiftedPoisson,
            SiFamily::Triangular,
            SiFamily::Geometric,
        ] {
            let z = kappa_transform(f, 0.123).unwrap();
            assert!((kappa_untransform(f, z) - 0.123).abs() < 1e-12);
        }
        for z in [-1e6, -40.0, 0.0, 40.0, 1e6] {
            for f in [
                SiFamily::ShiftedPoisson,
                SiFamily::Triangular,
                SiFamily::Geometric,
            ] {
                assert!(f.kappa_in_domain(kappa_untransform(f, z)), "{f} {z}");
            }
        }
    }

    #[test]
    fn spatial_examples() {
        let nb3 = NeighbourhoodMatrix::chain(3);
        let flat = spatial_weights(SpatialWeightSpec::PowerLaw { rho: 0.0 }, &nb3).unwrap();
        assert!(flat.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));

        let nb2 = NeighbourhoodMatrix::chain(2);
        let w = spatial_weights(SpatialWeightSpec::PowerLaw { rho: 1.0 }, &nb2).unwrap();
        assert!(close(
            &w,
            &[2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0],
            1e-15
        ));

        let inf =
            spatial_weights(SpatialWeightSpec::PowerLaw { rho: f64::INFINITY }, &nb3).unwrap();
        assert_eq!(inf, identity(3));
        let big = spatial_weights(SpatialWeightSpec::PowerLaw { rho: 1e4 }, &nb3).unwrap();
        assert!(close(&big, &identity(3), 1e-300));
        assert_eq!(
            spatial_weights(SpatialWeightSpec::Identity, &nb3).unwrap(),
            identity(3)
        );
    }

    #[test]
    fn dlogrho_matches_finite_difference() {
        let nb = NeighbourhoodMatrix::chain(4);
        let rho: f64 = 1.3;
        let d = spatial_weights_dlogrho(rho, &nb).unwrap();
        let h = 1e-6;
        let up = spatial_weights(
            SpatialWeightSpec::PowerLaw {
                rho: (rho.ln() + h).exp(),
            },
            &nb,
        )
        .unwrap();
        let dn = spatial_weights(
            SpatialWeightSpec::PowerLaw {
                rho: (rho.ln() - h).exp(),
            },
            &nb,
        )
        .unwrap();
        for k in 0..16 {
            let fd = (up[k] - dn[k]) / (2.0 * h);
            assert!((fd - d[k]).abs() < 1e-8, "{k}: {fd} vs {}", d[k]);
        }
    }
}
