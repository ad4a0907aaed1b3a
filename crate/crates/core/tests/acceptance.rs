//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqnet::dataset::{Dataset, ObservationRecord};
use seqnet::estimation::{fit_pattern, proposition1_diagnostic, NetEffectFit};
use seqnet::key::StratumKey;
use seqnet::net_effects::verify_decomposition;
use seqnet::pattern::{parse_pattern, PatternSpec};
use seqnet::point_params::PointParams;
use seqnet::simulator::experiments::{
    equivalence_experiment, fit_experiment, motivation_experiment, population_equivalence,
};
use seqnet::simulator::{make_fixture_d0, simulate, DgpSpec};
use seqnet::stats::VarianceMode;
use seqnet::table::StratumTable;
use seqnet::target::{enumerate_targets, StrataMode};

const THREE_PERIOD: &str = include_str!("../../../data/three_period.dgp");
const TWO_PERIOD: &str = include_str!("../../../data/two_period.dgp");
const MARKOV8: &str = include_str!("../../../data/markov8.dgp");
const NULL_TWO_PERIOD: &str = include_str!("../../../data/null_two_period.dgp");
const THREE_GROUP: &str = include_str!("../../../data/three_group.pattern");
const BY_TIME: &str = include_str!("../../../data/by_time.pattern");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// All `2^{2T-1}` binary histories with random positive weights and means.
fn random_complete_table(rng: &mut ChaCha8Rng, horizon: usize) -> StratumTable {
    let bits = 2 * horizon - 1;
    let entries: Vec<(StratumKey, f64, f64)> = (0..1u32 << bits)
        .map(|code| {
            let z: Vec<u32> = (0..horizon).map(|t| (code >> (2 * t)) & 1).collect();
            let x: Vec<Vec<u32>> = (0..horizon - 1).map(|t| vec![(code >> (2 * t + 1)) & 1]).collect();
            let w = rng.random_range(0.2..5.0);
            let m = rng.random_range(-50.0..50.0);
            (StratumKey::new(z, x).unwrap(), w, m)
        })
        .collect();
    StratumTable::exact(horizon, usize::from(horizon > 1), entries).unwrap()
}

fn random_tables() -> Vec<StratumTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..200).map(|i| random_complete_table(&mut rng, 1 + i % 3)).collect()
}

fn roundtrip() -> Outcome {
    let mut worst: f64 = 0.0;
    for table in random_tables() {
        let psi = PointParams::extract(&table).unwrap();
        let rebuilt = psi.reconstruct_table(&table).unwrap();
        for &leaf in table.leaves() {
            worst = worst.max((table.node(leaf).mean - rebuilt.node(leaf).mean).abs());
        }
    }
    outcome(worst < 1e-10, format!("200 tables, max |μ − μ(Ψ)| = {worst:.2e}"))
}

fn decomposition() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut keys = 0;
    let mut missing = 0;
    for table in random_tables() {
        let r = verify_decomposition(&table);
        let expected: usize = (1..=table.horizon())
            .map(|t| table.treatment_nodes(t).iter().filter(|&&n| table.node(n).symbol() == Some(1)).count())
            .sum();
        missing += expected - r.entries.len() + r.skipped.len();
        keys += r.entries.len();
        worst = worst.max(r.max_deviation);
    }
    outcome(
        worst < 1e-10 && missing == 0,
        format!("{keys} keys, max deviation {worst:.2e}, {missing} not checked"),
    )
}

/// Two-period dataset with the given `(units, mean)` per history
/// `(z1, x1, z2)` in binary order.
fn two_period_dataset(cells: &[(usize, f64)], rng: &mut ChaCha8Rng) -> Dataset {
    let mut records = Vec::new();
    for (code, &(n, m)) in cells.iter().enumerate() {
        let (z1, x1, z2) = ((code >> 2) as u32 & 1, (code >> 1) as u32 & 1, code as u32 & 1);
        for _ in 0..n {
            records.push(ObservationRecord {
                unit_id: format!("u{}", records.len()),
                treatments: vec![z1, z2],
                covariates: vec![vec![x1]],
                outcome: m + rng.random_range(-3.0..3.0),
            });
        }
    }
    Dataset::from_records(records, 2, 1).unwrap()
}

/// Hand formulas for the pattern `{φ = ϕ1 at t = 1, φ = ϕ2 at t = 2}`, straight
/// from the records: returns `(ϕ1, ϕ2, var ϕ1, var ϕ2, cov)`.
fn closed_form_t2(d: &Dataset, sigma2: f64) -> (f64, f64, f64, f64, f64) {
    let mut sum: BTreeMap<(u32, u32, u32), (f64, f64)> = BTreeMap::new();
    for r in d.records() {
        let e = sum.entry((r.treatments[0], r.covariates[0][0], r.treatments[1])).or_default();
        e.0 += 1.0;
        e.1 += r.outcome;
    }
    let n = |z1: u32, x1: Option<u32>, z2: Option<u32>| -> f64 {
        sum.iter()
            .filter(|(k, _)| k.0 == z1 && x1.is_none_or(|x| k.1 == x) && z2.is_none_or(|z| k.2 == z))
            .map(|(_, v)| v.0)
            .sum()
    };
    let total = |z1: u32, x1: Option<u32>, z2: Option<u32>| -> f64 {
        sum.iter()
            .filter(|(k, _)| k.0 == z1 && x1.is_none_or(|x| k.1 == x) && z2.is_none_or(|z| k.2 == z))
            .map(|(_, v)| v.1)
            .sum()
    };
    let mean = |z1, x1, z2| total(z1, x1, z2) / n(z1, x1, z2);

    let theta = mean(1, None, None) - mean(0, None, None);
    let var_theta = sigma2 / n(1, None, None) + sigma2 / n(0, None, None);
    let (mut num, mut den) = (0.0, 0.0);
    for z1 in 0..2 {
        for x1 in 0..2 {
            let th = mean(z1, Some(x1), Some(1)) - mean(z1, Some(x1), Some(0));
            let v = sigma2 / n(z1, Some(x1), Some(1)) + sigma2 / n(z1, Some(x1), Some(0));
            num += th / v;
            den += 1.0 / v;
        }
    }
    let phi2 = num / den;
    let var2 = 1.0 / den;
    let delta = n(1, None, Some(1)) / n(1, None, None) - n(0, None, Some(1)) / n(0, None, None);
    let phi1 = theta - phi2 * delta;
    let var1 = var_theta + var2 * delta * delta;
    // φ̂1 = θ̂ − Δ φ̂2 with θ̂ independent of φ̂2
    let cov = -delta * var2;
    (phi1, phi2, var1, var2, cov)
}

fn compare_closed_form(d: &Dataset, sigma2: f64, by_time: &PatternSpec) -> (f64, f64) {
    let fit: NetEffectFit = fit_pattern(by_time, d.table(), StrataMode::Full, VarianceMode::Known(sigma2)).unwrap();
    let (p1, p2, v1, v2, c) = closed_form_t2(d, sigma2);
    let got = [fit.phi_hat[0], fit.phi_hat[1], fit.covariance[0][0], fit.covariance[1][1], fit.covariance[0][1]];
    let want = [p1, p2, v1, v2, c];
    let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // |cov| = |Δ| var(ϕ̂2) whichever sign convention is used
    let sign_gap = (fit.covariance[0][1].abs() - c.abs()).abs();
    (err, sign_gap)
}

fn closed_forms() -> Outcome {
    let by_time = parse_pattern(BY_TIME).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    for _ in 0..100 {
        let cells: Vec<(usize, f64)> = (0..8)
            .map(|_| (rng.random_range(1..40), rng.random_range(0.0..100.0)))
            .collect();
        let d = two_period_dataset(&cells, &mut rng);
        let sigma2 = rng.random_range(0.5..50.0);
        let (err, gap) = compare_closed_form(&d, sigma2, &by_time);
        worst = worst.max(err);
        worst_abs = worst_abs.max(gap);
    }
    outcome(
        worst < 1e-12 && worst_abs < 1e-12,
        format!("100 instances, max |generic − closed form| = {worst:.2e} (cov = −Δ var ϕ̂2)"),
    )
}

fn fixture_pipeline() -> Outcome {
    let d = make_fixture_d0();
    let sigma2 = 16.0;
    let known = VarianceMode::Known(sigma2);
    let saturated = PatternSpec::saturated(d.table());
    let sat = fit_pattern(&saturated, d.table(), StrataMode::Full, known).unwrap();
    let sat_err = sat
        .phi_hat
        .iter()
        .zip([30.0, 20.0, 20.0, 20.0, -20.0])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let three = fit_pattern(&parse_pattern(THREE_GROUP).unwrap(), d.table(), StrataMode::Full, known).unwrap();
    let three_err = three
        .phi_hat
        .iter()
        .zip([30.0, 20.0, -20.0])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (cf_err, _) = compare_closed_form(&d, sigma2, &parse_pattern(BY_TIME).unwrap());
    outcome(
        sat_err < 1e-9 && three_err < 1e-9 && cf_err < 1e-12,
        format!(
            "saturated {:?}, three-group {:?}, closed-form variance gap {cf_err:.2e}",
            sat.phi_hat.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>(),
            three.phi_hat.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>()
        ),
    )
}

fn consistency() -> Outcome {
    let dgp = DgpSpec::parse(THREE_PERIOD).unwrap();
    let known = VarianceMode::Known(dgp.sigma * dgp.sigma);
    let mut ok = true;
    let mut parts = Vec::new();
    let mut rmse = BTreeMap::new();
    for n in [500, 2000, 8000] {
        let r = fit_experiment(&dgp, n, 400, StrataMode::Full, known).unwrap();
        ok &= r.failures == 0;
        let worst_z = r.params.iter().map(|p| p.estimate.z(p.truth).abs()).fold(0.0, f64::max);
        ok &= worst_z < 4.0;
        rmse.insert(n, r.params.iter().map(|p| p.rmse).collect::<Vec<_>>());
        parts.push(format!("N={n}: max |bias|/MC-SE {worst_z:.2}"));
    }
    let ratios: Vec<f64> = rmse[&500].iter().zip(&rmse[&8000]).map(|(a, b)| a / b).collect();
    ok &= ratios.iter().all(|r| (3.3..=4.9).contains(r));
    parts.push(format!(
        "RMSE ratio 500/8000 {:?}",
        ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()
    ));
    outcome(ok, parts.join("; "))
}

fn independence() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    let d0 = make_fixture_d0();
    let dgp = DgpSpec::parse(THREE_PERIOD).unwrap();
    let d3 = simulate(&dgp, 2000).unwrap();
    for (name, d, sigma2) in [("fixture", &d0, 16.0), ("three-period", &d3, 100.0)] {
        let r = proposition1_diagnostic(d, VarianceMode::Known(sigma2), 1000, 11).unwrap();
        let cov_z = r.covariances.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
        let var_z = r.variances.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
        ok &= cov_z < 4.0 && var_z < 3.0 && !r.covariances.is_empty();
        parts.push(format!(
            "{name}: {} pairs max |z| {cov_z:.2}, {} variances max |z| {var_z:.2}",
            r.covariances.len(),
            r.variances.len()
        ));
    }
    outcome(ok, parts.join("; "))
}

fn causal_equivalence() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, src) in [("T=2", TWO_PERIOD), ("T=3", THREE_PERIOD)] {
        let dgp = DgpSpec::parse(src).unwrap().with_confounding(0.0);
        let c = population_equivalence(&dgp).unwrap();
        let dev = c.max_phi_deviation.max(c.max_nu_deviation);
        ok &= dev < 1e-10;
        parts.push(format!("{name} population gap {dev:.2e}"));
    }
    let dgp = DgpSpec::parse(TWO_PERIOD).unwrap();
    let r = equivalence_experiment(&dgp, 2000, 200, Some(2.0)).unwrap();
    let v = r.violation.unwrap();
    ok &= v.max_bias_z > 4.0;
    parts.push(format!(
        "ignorable arm max |bias|/MC-SE {:.2}, confounded arm {:.1}",
        r.ignorable.max_bias_z, v.max_bias_z
    ));
    outcome(ok, parts.join("; "))
}

fn markov_reduction() -> Outcome {
    let dgp = DgpSpec::parse(MARKOV8).unwrap();
    let known = VarianceMode::Known(dgp.sigma * dgp.sigma);
    let d = simulate(&dgp, 4000).unwrap();
    let (found, skipped) = enumerate_targets(d.table(), StrataMode::Full);
    let share = skipped.len() as f64 / (found.len() + skipped.len()) as f64;
    let r = fit_experiment(&dgp, 4000, 200, StrataMode::Markov, known).unwrap();
    let worst_z = r.params.iter().map(|p| p.estimate.z(p.truth).abs()).fold(0.0, f64::max);
    outcome(
        share > 0.5 && r.failures == 0 && worst_z < 4.0,
        format!(
            "full strata: {:.0}% of {} targets single-arm; markov fit {:?}, max |bias|/MC-SE {worst_z:.2}",
            100.0 * share,
            found.len() + skipped.len(),
            r.params.iter().map(|p| format!("{}={:.3}", p.name, p.estimate.mean)).collect::<Vec<_>>()
        ),
    )
}

fn motivation() -> Outcome {
    let dgp = DgpSpec::parse(NULL_TWO_PERIOD).unwrap();
    let alpha = 0.05;
    let r = motivation_experiment(&dgp, 4000, 500, alpha).unwrap();
    let nominal_se = (alpha * (1.0 - alpha) / r.point_effect_test.n as f64).sqrt();
    let level_z = (r.point_effect_test.rate - alpha) / nominal_se;
    outcome(
        r.standard_parameter_test.rate > 0.5 && level_z.abs() < 2.0 && r.failures == 0,
        format!(
            "standard-parameter test rejects {:.3}, point-effect test {:.3} ({level_z:+.2} MC-SE from {alpha})",
            r.standard_parameter_test.rate, r.point_effect_test.rate
        ),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("point parametrization roundtrip", Duration::from_secs(5), roundtrip),
        ("decomposition identity", Duration::from_secs(5), decomposition),
        ("closed-form WLS agreement", Duration::from_secs(60), closed_forms),
        ("fixture pipeline", Duration::from_secs(1), fixture_pipeline),
        ("unbiasedness and consistency", Duration::from_secs(120), consistency),
        ("independence of point effects", Duration::from_secs(60), independence),
        ("causal equivalence", Duration::from_secs(60), causal_equivalence),
        ("markov reduction", Duration::from_secs(180), markov_reduction),
        ("standard parameters vs point effects", Duration::from_secs(600), motivation),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let took = start.elapsed();
        let pass = o.pass && took <= *limit;
        failed += usize::from(!pass);
        println!(
            "[{}] {}. {name}: {} ({:.2} s, limit {} s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        eprintln!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
