mod common;

use std::path::Path;

use proptest::prelude::*;

use endemic::data::{
    read_counts, write_counts, CountsPanel, CovariateTable, IsoWeek, NeighbourhoodMatrix,
    PopulationShares,
};
use endemic::inference::log_likelihood;
use endemic::model::{conditional_mean, Design, ModelSpec, SpatialKind};
use endemic::weights::{
    lag_weights, spatial_weights, SerialIntervalSpec, SiFamily, SpatialWeightSpec,
};

fn week() -> impl Strategy<Value = IsoWeek> {
    (1990i32..2030, 1u32..=52).prop_map(|(y, w)| IsoWeek::new(y, w).unwrap())
}

fn panel(max_t: usize, max_m: usize, max_count: u64) -> impl Strategy<Value = CountsPanel> {
    (week(), 2..=max_t, 1..=max_m).prop_flat_map(move |(start, t, m)| {
        proptest::collection::vec(0..=max_count, t * m).prop_map(move |counts| {
            let rows: Vec<Vec<u64>> = counts.chunks(m).map(<[u64]>::to_vec).collect();
            CountsPanel::from_rows(start, &rows).unwrap()
        })
    })
}

fn family_kappa() -> impl Strategy<Value = (SiFamily, f64)> {
    prop_oneof![
        (0.01f64..8.0).prop_map(|k| (SiFamily::ShiftedPoisson, k)),
        (0.001f64..0.999).prop_map(|k| (SiFamily::Triangular, k)),
        (0.001f64..0.999).prop_map(|k| (SiFamily::Geometric, k)),
    ]
}

/// Ring of `m` units.
fn ring(m: usize) -> NeighbourhoodMatrix {
    let order = (0..m * m)
        .map(|k| {
            let (j, i) = (k / m, k % m);
            let d = j.abs_diff(i);
            d.min(m - d) as u32
        })
        .collect();
    NeighbourhoodMatrix::new(m, order).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_round_trip(p in panel(40, 5, 100_000)) {
        let mut buf = Vec::new();
        write_counts(&p, &mut buf).unwrap();
        let back = read_counts(buf.as_slice(), Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &p);
        let mut again = Vec::new();
        write_counts(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn corrupted_files_are_rejected_or_valid(p in panel(12, 3, 50), line in 1usize..12, kind in 0usize..5) {
        let mut buf = Vec::new();
        write_counts(&p, &mut buf).unwrap();
        let mut lines: Vec<String> = String::from_utf8(buf).unwrap().lines().map(str::to_owned).collect();
        let k = line.min(lines.len() - 1);
        match kind {
            0 => lines[k].push_str(",1"),
            1 => lines[k] = lines[k].replacen(',', ",-", 1),
            2 => lines[k] = lines[k].replacen(',', ",,", 1),
            3 => { lines.remove(k); }
            _ => lines[k] = lines[k].replacen(',', ",0.5", 1),
        }
        let text = lines.join("\n");
        if let Ok(q) = read_counts(text.as_bytes(), Path::new("mem")) {
            // whatever loads must satisfy the panel invariants
            prop_assert!(q.n_weeks() >= 2);
            prop_assert_eq!(q.counts().len(), q.n_weeks() * q.n_units());
            for w in q.weeks().windows(2) {
                prop_assert_eq!(w[0].next(), w[1]);
            }
        }
    }

    #[test]
    fn lag_weights_normalized_and_shaped((family, kappa) in family_kappa(), p in 1usize..40) {
        let u = lag_weights(&SerialIntervalSpec::parametric(family, p, kappa)).unwrap();
        prop_assert_eq!(u.len(), p);
        prop_assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(u.iter().all(|w| *w >= 0.0));
        match family {
            SiFamily::Triangular | SiFamily::Geometric => {
                prop_assert!(u.windows(2).all(|w| w[1] <= w[0]));
            }
            _ => {
                // mode at floor(kappa) + 1 when it lies inside the support
                let mode = kappa.floor() as usize + 1;
                if kappa > 1.0 && mode <= p && kappa.fract() > 1e-6 {
                    let arg = u.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1;
                    prop_assert_eq!(arg, mode);
                }
            }
        }
    }

    #[test]
    fn unrestricted_weights_normalized(logits in proptest::collection::vec(-10.0f64..10.0, 0..12)) {
        let u = lag_weights(&SerialIntervalSpec::unrestricted(logits.clone())).unwrap();
        prop_assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let oracle = common::oracle_lag_weights(SiFamily::Unrestricted, 0.0, logits.len() + 1, &logits);
        for (a, b) in u.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_rows_sum_to_one(m in 1usize..9, rho in 0.0f64..6.0) {
        let w = spatial_weights(SpatialWeightSpec::PowerLaw { rho }, &ring(m)).unwrap();
        for row in w.chunks(m) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn epidemic_part_scales_with_counts(
        p_panel in panel(30, 3, 40),
        (family, kappa) in family_kappa(),
        order in 1usize..5,
        a_nu in -1.0f64..2.0,
        a_phi in -2.0f64..0.5,
        log_rho in -1.0f64..1.5,
    ) {
        prop_assume!(p_panel.n_weeks() > order + 1);
        let m = p_panel.n_units();
        let spec = ModelSpec {
            spatial: SpatialKind::PowerLaw,
            ..ModelSpec::constant(SerialIntervalSpec::parametric(family, order, kappa))
        };
        let nb = ring(m);
        let doubled = CountsPanel::new(
            p_panel.weeks().to_vec(),
            p_panel.units().to_vec(),
            p_panel.counts().iter().map(|y| 2 * y).collect(),
        )
        .unwrap();
        let d = Design::new(&spec, &p_panel, &CovariateTable::new(), Some(&nb), None, p_panel.n_weeks()).unwrap();
        let mut x = d.initial_values(&p_panel);
        let l = d.layout();
        x[l.index("end.alpha").unwrap()] = a_nu;
        x[l.index("epi.alpha").unwrap()] = a_phi;
        if let Some(k) = l.log_rho {
            x[k] = log_rho;
        }
        let state = d.state(&x).unwrap();
        for t in order..p_panel.n_weeks() {
            for i in 0..m {
                let (nu1, e1) = state.mean_parts(p_panel.counts(), t, i);
                let (nu2, e2) = state.mean_parts(doubled.counts(), t, i);
                prop_assert_eq!(nu1, nu2);
                prop_assert!((e2 - 2.0 * e1).abs() <= 1e-12 * e1.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn likelihood_invariant_to_unit_relabeling(
        p_panel in panel(25, 5, 30),
        perm_seed in any::<u64>(),
        kappa in 0.05f64..0.95,
        log_rho in -1.0f64..1.5,
        tau in -1.0f64..1.0,
    ) {
        let (t_len, m) = (p_panel.n_weeks(), p_panel.n_units());
        prop_assume!(t_len > 4);
        // permutation from the seed
        let mut perm: Vec<usize> = (0..m).collect();
        let mut s = perm_seed;
        for k in (1..m).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(k, (s >> 33) as usize % (k + 1));
        }
        let nb = ring(m);
        let pops: Vec<f64> = (0..m).map(|i| 1.0 + i as f64).collect();
        let units: Vec<String> = perm.iter().map(|&i| p_panel.units()[i].clone()).collect();
        let counts: Vec<u64> = (0..t_len)
            .flat_map(|t| perm.iter().map(move |&i| (t, i)))
            .map(|(t, i)| p_panel.count(t, i))
            .collect();
        let relabeled = CountsPanel::new(p_panel.weeks().to_vec(), units, counts).unwrap();
        let nb2 = NeighbourhoodMatrix::new(
            m,
            (0..m * m).map(|k| nb.order(perm[k / m], perm[k % m])).collect(),
        )
        .unwrap();
        let pops2: Vec<f64> = perm.iter().map(|&i| pops[i]).collect();

        let mut spec = ModelSpec {
            spatial: SpatialKind::PowerLaw,
            ..ModelSpec::constant(SerialIntervalSpec::parametric(SiFamily::Geometric, 3, kappa))
        };
        spec.epidemic.gravity = true;
        spec.endemic.harmonics = 1;
        let ll = |panel: &CountsPanel, nb: &NeighbourhoodMatrix, pops: &[f64]| {
            let shares = PopulationShares::from_values(pops).unwrap();
            let d = Design::new(&spec, panel, &CovariateTable::new(), Some(nb), Some(&shares), t_len).unwrap();
            let mut x = d.initial_values(panel);
            let l = d.layout();
            x[l.index("epi.alpha").unwrap()] = -0.7;
            x[l.index("epi.tau").unwrap()] = tau;
            x[l.index("end.sin1").unwrap()] = 0.3;
            if let Some(k) = l.log_rho {
            x[k] = log_rho;
        }
            let rows = endemic::inference::default_rows(&d, panel);
            log_likelihood(&d, &x, panel, rows).unwrap()
        };
        let a = ll(&p_panel, &nb, &pops);
        let b = ll(&relabeled, &nb2, &pops2);
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn multivariate_single_unit_reduces_to_univariate(
        series in proptest::collection::vec(0u64..50, 10..40),
        kappa in 0.05f64..0.95,
        order in 1usize..6,
        a_nu in -1.0f64..2.0,
        a_phi in -2.0f64..0.5,
    ) {
        let rows: Vec<Vec<u64>> = series.iter().map(|y| vec![*y]).collect();
        let panel = CountsPanel::from_rows(IsoWeek::new(2000, 1).unwrap(), &rows).unwrap();
        let si = SerialIntervalSpec::parametric(SiFamily::Geometric, order, kappa);
        let uni = Design::simple(&ModelSpec::constant(si.clone()), &panel).unwrap();
        let multi_spec = ModelSpec { spatial: SpatialKind::PowerLaw, ..ModelSpec::constant(si) };
        let nb = NeighbourhoodMatrix::new(1, vec![0]).unwrap();
        let multi = Design::new(&multi_spec, &panel, &CovariateTable::new(), Some(&nb), None, panel.n_weeks()).unwrap();
        let set = |d: &Design| {
            let mut x = d.initial_values(&panel);
            x[d.layout().index("end.alpha").unwrap()] = a_nu;
            x[d.layout().index("epi.alpha").unwrap()] = a_phi;
            x
        };
        let mu = conditional_mean(&uni, &set(&uni), &panel).unwrap();
        let mm = conditional_mean(&multi, &set(&multi), &panel).unwrap();
        let u = common::oracle_lag_weights(SiFamily::Geometric, kappa, order, &[]);
        for t in order..series.len() {
            let direct = a_nu.exp() + a_phi.exp() * (1..=order).map(|d| u[d - 1] * series[t - d] as f64).sum::<f64>();
            prop_assert!((mu.lambda(t, 0) - direct).abs() <= 1e-12 * direct);
            prop_assert!((mm.lambda(t, 0) - direct).abs() <= 1e-12 * direct);
        }
    }
}
