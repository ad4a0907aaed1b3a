use std::collections::BTreeMap;

use proptest::prelude::*;

use seqnet::dataset::{load_dataset, Dataset, ObservationRecord};
use seqnet::estimation::{estimate_point_effects_in, fit_pattern, wls_fit};
use seqnet::key::StratumKey;
use seqnet::net_effects::{exact_net_effects, verify_decomposition};
use seqnet::pattern::{constraints_from_table, parse_pattern, PatternSpec};
use seqnet::point_params::PointParams;
use seqnet::simulator::{population_table, simulate, DgpSpec};
use seqnet::stats::VarianceMode;
use seqnet::table::StratumTable;
use seqnet::target::{StrataMode, TargetKey};

fn binary_history(horizon: usize, code: u32) -> StratumKey {
    let z = (0..horizon).map(|t| (code >> (2 * t)) & 1).collect();
    let x = (0..horizon - 1).map(|t| vec![(code >> (2 * t + 1)) & 1]).collect();
    StratumKey::new(z, x).unwrap()
}

prop_compose! {
    fn complete_table()(horizon in 1usize..=3)
        (cells in prop::collection::vec((0.1f64..10.0, -100.0f64..100.0), 1 << (2 * horizon - 1)),
         horizon in Just(horizon)) -> StratumTable {
        let entries: Vec<_> = cells
            .iter()
            .enumerate()
            .map(|(code, &(w, m))| (binary_history(horizon, code as u32), w, m))
            .collect();
        StratumTable::exact(horizon, usize::from(horizon > 1), entries).unwrap()
    }
}

prop_compose! {
    /// A Markov-assignment process with a pattern that reads only the
    /// previous treatment.
    fn markov_dgp()(
        horizon in 1usize..=4,
        a in -1.0f64..1.0, b in -1.5f64..1.5, c in -1.5f64..1.5,
        d in -1.0f64..1.0, e in -1.5f64..1.5, f in -2.0f64..2.0,
        latent in 0.1f64..0.9, g in -5.0f64..5.0, beta in -3.0f64..3.0,
        truth in prop::collection::vec(-30.0f64..30.0, 3),
    ) -> DgpSpec {
        let src = format!(
            "horizon {horizon}\nsigma 1\nlatent {latent}\n\
             assign: logistic({a} + {b} * z[t-1] + {c} * x[t-1][1])\n\
             covariate: logistic({d} + {e} * z[t] + {f} * L)\n\
             baseline: 10 + {g} * L\ncovariate_effect {beta}\n\
             group first: when t == 1\n\
             group after_treated: when t > 1 and z[t-1] == 1\n\
             group after_untreated: when t > 1 and z[t-1] == 0\n\
             truth first {}\ntruth after_treated {}\ntruth after_untreated {}\n",
            truth[0], truth[1], truth[2]
        );
        DgpSpec::parse(&src).unwrap()
    }
}

fn records(horizon: usize, rows: &[(u32, f64)]) -> Vec<ObservationRecord> {
    rows.iter()
        .enumerate()
        .map(|(i, &(code, y))| {
            let k = binary_history(horizon, code);
            ObservationRecord {
                unit_id: format!("r{i}"),
                treatments: k.treatments,
                covariates: k.covariates,
                outcome: y,
            }
        })
        .collect()
}

fn point_effects(table: &StratumTable, mode: StrataMode) -> BTreeMap<TargetKey, f64> {
    estimate_point_effects_in(table, mode, VarianceMode::Known(1.0))
        .0
        .into_iter()
        .map(|e| (e.target, e.value))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_roundtrip_keeps_records(horizon in 1usize..=3,
        rows in prop::collection::vec((0u32..32, -1e6f64..1e6), 1..60)) {
        let max = 1u32 << (2 * horizon - 1);
        let rows: Vec<_> = rows.into_iter().map(|(c, y)| (c % max, y)).collect();
        let d = Dataset::from_records(records(horizon, &rows), horizon, usize::from(horizon > 1)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = load_dataset(&buf[..]).unwrap();
        prop_assert_eq!(back.records(), d.records());
    }

    #[test]
    fn point_parametrization_roundtrip(table in complete_table()) {
        let psi = PointParams::extract(&table).unwrap();
        let rebuilt = psi.reconstruct_table(&table).unwrap();
        for &leaf in table.leaves() {
            prop_assert!((rebuilt.node(leaf).mean - table.node(leaf).mean).abs() < 1e-9);
        }
    }

    #[test]
    fn point_effects_decompose_into_net_effects(table in complete_table()) {
        let r = verify_decomposition(&table);
        prop_assert!(r.skipped.is_empty());
        prop_assert!(r.max_deviation < 1e-9, "{}", r.max_deviation);
    }

    #[test]
    fn net_effects_ignore_weight_scale(table in complete_table(), scale in 0.01f64..100.0) {
        let entries: Vec<_> = table
            .leaves()
            .iter()
            .map(|&l| (table.key(l), table.node(l).weight * scale, table.node(l).mean))
            .collect();
        let scaled = StratumTable::exact(table.horizon(), usize::from(table.horizon() > 1), entries).unwrap();
        let (a, b) = (exact_net_effects(&table).unwrap(), exact_net_effects(&scaled).unwrap());
        for (k, v) in a.phis() {
            prop_assert!((b.phi(&k).unwrap() - v).abs() < 1e-9);
        }
    }

    #[test]
    fn constraints_hold_exactly_on_the_population(dgp in markov_dgp()) {
        let table = population_table(&dgp).unwrap();
        for mode in [StrataMode::Full, StrataMode::Markov] {
            let theta = point_effects(&table, mode);
            let rows = constraints_from_table(&dgp.pattern, &table, mode, VarianceMode::Known(1.0)).unwrap();
            prop_assert_eq!(rows.len(), theta.len());
            for r in &rows {
                let implied: f64 = r.coefficients.iter().zip(&dgp.truth).map(|(c, v)| c * v).sum();
                prop_assert!((theta[&r.target] - implied).abs() < 1e-9,
                    "{:?} {}: {} vs {}", mode, r.target, theta[&r.target], implied);
            }
        }
    }

    #[test]
    fn markov_fit_recovers_truth_on_the_population(dgp in markov_dgp()) {
        prop_assume!(dgp.horizon >= 2);
        let table = population_table(&dgp).unwrap();
        let full = fit_pattern(&dgp.pattern, &table, StrataMode::Full, VarianceMode::Known(1.0)).unwrap();
        let markov = fit_pattern(&dgp.pattern, &table, StrataMode::Markov, VarianceMode::Known(1.0)).unwrap();
        for j in 0..3 {
            prop_assert!((full.phi_hat[j] - dgp.truth[j]).abs() < 1e-7);
            prop_assert!((markov.phi_hat[j] - dgp.truth[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn fit_scales_with_known_variance(seed in 0u64..1000, s2 in 0.1f64..10.0) {
        let src = "horizon 2\nsigma 3\nassign: logistic(z[t-1] - 0.5)\ncovariate: logistic(z[t] - 0.2)\nbaseline: 5\ngroup a: when t == 1\ngroup b: when t == 2\ntruth a 1\ntruth b 2\n";
        let d = simulate(&DgpSpec::parse(src).unwrap().with_seed(seed), 300).unwrap();
        let spec = parse_pattern("group a: when t == 1\ngroup b: when t == 2\n").unwrap();
        let one = fit_pattern(&spec, d.table(), StrataMode::Full, VarianceMode::Known(1.0)).unwrap();
        let other = fit_pattern(&spec, d.table(), StrataMode::Full, VarianceMode::Known(s2)).unwrap();
        for i in 0..2 {
            prop_assert!((one.phi_hat[i] - other.phi_hat[i]).abs() < 1e-9);
            for j in 0..2 {
                prop_assert!((one.covariance[i][j] * s2 - other.covariance[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn saturated_groups_partition_the_strata(table in complete_table()) {
        let spec = PatternSpec::saturated(&table);
        for t in 1..=table.horizon() {
            for &id in table.treatment_nodes(t) {
                if table.node(id).symbol() == Some(0) {
                    continue;
                }
                let f = spec.features(table.horizon(), &table.key(id)).unwrap();
                prop_assert_eq!(f.iter().filter(|&&v| v == 1.0).count(), 1);
                prop_assert_eq!(f.iter().sum::<f64>(), 1.0);
            }
        }
    }

    #[test]
    fn simulation_is_determined_by_the_seed(seed in any::<u64>()) {
        let dgp = DgpSpec::parse(include_str!("../../../data/two_period.dgp")).unwrap().with_seed(seed);
        let csv = |d: Dataset| { let mut b = Vec::new(); d.write_csv(&mut b).unwrap(); b };
        prop_assert_eq!(csv(simulate(&dgp, 50).unwrap()), csv(simulate(&dgp, 50).unwrap()));
    }
}

#[test]
fn exact_constraints_fit_with_zero_residual() {
    let dgp = DgpSpec::parse(include_str!("../../../data/three_period.dgp")).unwrap();
    let table = population_table(&dgp).unwrap();
    let (est, _) = estimate_point_effects_in(&table, StrataMode::Full, VarianceMode::Known(1.0));
    let rows = constraints_from_table(&dgp.pattern, &table, StrataMode::Full, VarianceMode::Known(1.0)).unwrap();
    let fit = wls_fit(&rows, &est).unwrap();
    assert!(fit.chi2 < 1e-12);
    for (a, b) in fit.phi_hat.iter().zip(&dgp.truth) {
        assert!((a - b).abs() < 1e-9);
    }
}
