//! Monte Carlo experiments around the estimators.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::dgp::{population_table, simulate, DgpSpec};
use super::montecarlo::{replicate, rmse, Rate, Summary};
use super::oracle::g_oracle;
use crate::error::{Error, Result};
use crate::estimation::{fit_pattern, NetEffectFit};
use crate::key::StratumKey;
use crate::net_effects::exact_net_effects;
use crate::pattern::PatternSpec;
use crate::stats::{StratumStats, VarianceMode};
use crate::table::StratumTable;
use crate::target::{enumerate_targets, StrataMode};

#[derive(Debug, Clone, Serialize)]
pub struct PopulationCheck {
    pub strata: usize,
    /// Largest `|φ(exact table) − φ(g-computation)|`.
    pub max_phi_deviation: f64,
    /// Largest `|ν(exact table) − ν(g-computation)|`.
    pub max_nu_deviation: f64,
}

/// Net effects of the exact population table against the g-computation
/// oracle of the same process.
pub fn population_equivalence(dgp: &DgpSpec) -> Result<PopulationCheck> {
    let table = population_table(dgp)?;
    let net = exact_net_effects(&table)?;
    let oracle = g_oracle(dgp)?;
    let mut max_phi: f64 = 0.0;
    for (key, &truth) in &oracle.phi {
        let v = net.phi(key).ok_or_else(|| Error::Incomplete {
            term: format!("φ{key}"),
        })?;
        max_phi = max_phi.max((v - truth).abs());
    }
    let mut max_nu: f64 = 0.0;
    for (key, &truth) in &oracle.nu {
        let v = net.nu(key).ok_or_else(|| Error::Incomplete {
            term: format!("ν{key}"),
        })?;
        max_nu = max_nu.max((v - truth).abs());
    }
    Ok(PopulationCheck {
        strata: oracle.phi.len(),
        max_phi_deviation: max_phi,
        max_nu_deviation: max_nu,
    })
}

/// Coefficients of every `φ` on the history means: `φ` is linear in the leaf
/// means once the proportions are fixed.
pub fn net_effect_gradients(table: &StratumTable) -> Result<BTreeMap<StratumKey, Vec<f64>>> {
    let leaves = table.leaves().len();
    let mut out: BTreeMap<StratumKey, Vec<f64>> = BTreeMap::new();
    for l in 0..leaves {
        let mut e = vec![0.0; leaves];
        e[l] = 1.0;
        let net = exact_net_effects(&table.with_leaf_means(&e)?)?;
        for (key, v) in net.phis() {
            out.entry(key).or_insert_with(|| vec![0.0; leaves])[l] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumBias {
    pub stratum: StratumKey,
    pub truth: f64,
    pub error: Summary,
    /// Share of replications whose 95% interval covers the truth.
    pub coverage: Rate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmReport {
    pub confounding: f64,
    /// Replications where some net effect was not computable.
    pub incomplete: usize,
    pub strata: Vec<StratumBias>,
    /// Largest `|mean error| / MC-SE` across strata.
    pub max_bias_z: f64,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub schema_version: u32,
    pub n: usize,
    pub reps: usize,
    pub population: PopulationCheck,
    pub ignorable: ArmReport,
    pub violation: Option<ArmReport>,
}

fn equivalence_arm(dgp: &DgpSpec, n: usize, reps: usize, seed: u64) -> Result<ArmReport> {
    let oracle = g_oracle(dgp)?;
    let z95 = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.975);
    let sigma2 = dgp.sigma * dgp.sigma;
    let runs = replicate(reps, seed, |_, rep_seed, _| -> Result<Option<BTreeMap<StratumKey, (f64, f64)>>> {
        let d = simulate(&dgp.with_seed(rep_seed), n)?;
        let table = d.table();
        let Ok(net) = exact_net_effects(table) else {
            return Ok(None);
        };
        let grads = net_effect_gradients(table)?;
        // var{ȳ} per history from its own spread; a latent variable that moves
        // the outcome makes it exceed σ²
        let mean_vars: Vec<f64> = table
            .leaves()
            .iter()
            .map(|&l| {
                let node = table.node(l);
                let s2 = if node.weight >= 2.0 { node.ssd / (node.weight - 1.0) } else { sigma2 };
                s2 / node.weight
            })
            .collect();
        let mut out = BTreeMap::new();
        for (key, v) in net.phis() {
            let g = &grads[&key];
            let var: f64 = g.iter().zip(&mean_vars).map(|(a, mv)| a * a * mv).sum();
            out.insert(key, (v, var.sqrt()));
        }
        Ok(Some(out))
    });
    let mut per: BTreeMap<StratumKey, (Vec<f64>, usize)> = BTreeMap::new();
    let mut incomplete = 0;
    for run in runs {
        match run? {
            None => incomplete += 1,
            Some(map) => {
                for (key, (v, se)) in map {
                    if let Some(&truth) = oracle.phi.get(&key) {
                        let e = per.entry(key).or_default();
                        e.0.push(v - truth);
                        e.1 += usize::from((v - truth).abs() <= z95 * se);
                    }
                }
            }
        }
    }
    let strata: Vec<StratumBias> = per
        .into_iter()
        .map(|(key, (errs, covered))| StratumBias {
            truth: oracle.phi[&key],
            stratum: key,
            error: Summary::of(&errs),
            coverage: Rate::of(covered, errs.len()),
        })
        .collect();
    let max_bias_z = strata.iter().map(|s| s.error.z(0.0).abs()).fold(0.0, f64::max);
    let mean_abs_error = strata.iter().map(|s| s.error.mean.abs()).sum::<f64>() / strata.len().max(1) as f64;
    Ok(ArmReport {
        confounding: dgp.confounding,
        incomplete,
        strata,
        max_bias_z,
        mean_abs_error,
    })
}

/// Net effects estimated from simulated data against the causal truth, under
/// ignorable assignment and, when `violation` is given, under assignment
/// confounded by the latent variable with that strength.
pub fn equivalence_experiment(
    dgp: &DgpSpec,
    n: usize,
    reps: usize,
    violation: Option<f64>,
) -> Result<EquivalenceReport> {
    let ignorable_dgp = dgp.with_confounding(0.0);
    Ok(EquivalenceReport {
        schema_version: crate::report::SCHEMA_VERSION,
        n,
        reps,
        population: population_equivalence(&ignorable_dgp)?,
        ignorable: equivalence_arm(&ignorable_dgp, n, reps, dgp.seed)?,
        violation: violation
            .map(|s| equivalence_arm(&dgp.with_confounding(s), n, reps, dgp.seed ^ 0x5EED))
            .transpose()?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub name: String,
    pub truth: f64,
    pub estimate: Summary,
    pub rmse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitExperiment {
    pub schema_version: u32,
    pub n: usize,
    pub reps: usize,
    pub mode: StrataMode,
    pub params: Vec<FitSummary>,
    /// Replications where the fit failed (e.g. not identified).
    pub failures: usize,
    /// Average share of candidate targets skipped for an empty arm.
    pub skipped_share: f64,
}

/// One fit of the DGP's own pattern to a simulated dataset.
pub fn fit_once(
    dgp: &DgpSpec,
    n: usize,
    mode: StrataMode,
    variance: VarianceMode,
) -> Result<(NetEffectFit, f64)> {
    let d = simulate(dgp, n)?;
    fit_table(&dgp.pattern, d.table(), mode, variance)
}

fn fit_table(
    pattern: &PatternSpec,
    table: &StratumTable,
    mode: StrataMode,
    variance: VarianceMode,
) -> Result<(NetEffectFit, f64)> {
    let (found, skipped) = enumerate_targets(table, mode);
    let share = skipped.len() as f64 / (found.len() + skipped.len()).max(1) as f64;
    Ok((fit_pattern(pattern, table, mode, variance)?, share))
}

/// Repeated fits of the DGP's pattern at sample size `n`.
pub fn fit_experiment(
    dgp: &DgpSpec,
    n: usize,
    reps: usize,
    mode: StrataMode,
    variance: VarianceMode,
) -> Result<FitExperiment> {
    let runs = replicate(reps, dgp.seed, |_, rep_seed, _| {
        fit_once(&dgp.with_seed(rep_seed), n, mode, variance)
    });
    let k = dgp.pattern.dimension();
    let mut values = vec![Vec::with_capacity(reps); k];
    let mut failures = 0;
    let mut shares = Vec::new();
    for run in runs {
        match run {
            Ok((fit, share)) => {
                for (col, v) in values.iter_mut().zip(&fit.phi_hat) {
                    col.push(*v);
                }
                shares.push(share);
            }
            Err(Error::Identifiability { .. }) | Err(Error::Usage(_)) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    let names = dgp.pattern.names();
    Ok(FitExperiment {
        schema_version: crate::report::SCHEMA_VERSION,
        n,
        reps,
        mode,
        params: (0..k)
            .map(|j| FitSummary {
                name: names[j].to_string(),
                truth: dgp.truth[j],
                estimate: Summary::of(&values[j]),
                rmse: rmse(&values[j], dgp.truth[j]),
            })
            .collect(),
        failures,
        skipped_share: Summary::of(&shares).mean,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MotivationReport {
    pub schema_version: u32,
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    /// Pooled test that the first treatment shifts every full-history mean
    /// by a common amount, taken as zero.
    pub standard_parameter_test: Rate,
    /// Wald test of `ϕ = 0` under the declared pattern.
    pub point_effect_test: Rate,
    pub failures: usize,
}

/// The deliberately wrong estimator: treats the first-treatment contrasts of
/// full-history means, `μ(z1=1, s) − μ(z1=0, s)` over the later history `s`,
/// as if they all equalled the net effect of `z1`, and tests that common value
/// against 0 with an inverse-variance pooled z-test.
pub fn standard_parameter_z(table: &StratumTable, variance: VarianceMode) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &leaf in table.leaves() {
        let node = table.node(leaf);
        if node.path[0] != 1 {
            continue;
        }
        let mut rest = node.path.clone();
        rest[0] = 0;
        let Some(other) = table.find_path(&rest) else {
            continue;
        };
        let other = table.node(other);
        let var = StratumStats::of(node).mean_variance(variance)
            + StratumStats::of(other).mean_variance(variance);
        if !(var > 0.0 && var.is_finite()) {
            continue;
        }
        num += (node.mean - other.mean) / var;
        den += 1.0 / var;
    }
    (den > 0.0).then(|| num / den.sqrt())
}

/// Rejection rates of a true null of no net effects (the DGP's truth must be
/// all zero) for the standard-parameter test and for the pattern test. Both
/// use the plug-in variance of each history mean: a latent variable that
/// moves the outcome makes `var(y | history)` exceed `σ²`.
pub fn motivation_experiment(
    dgp: &DgpSpec,
    n: usize,
    reps: usize,
    alpha: f64,
) -> Result<MotivationReport> {
    if dgp.truth.iter().any(|&v| v != 0.0) {
        return Err(Error::usage("the motivation experiment needs a null DGP"));
    }
    let k = dgp.pattern.dimension();
    let z_crit = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0);
    let chi_crit = ChiSquared::new(k as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha);
    let variance = VarianceMode::Estimated;
    let runs = replicate(reps, dgp.seed, |_, rep_seed, _| -> Result<Option<(bool, bool)>> {
        let d = simulate(&dgp.with_seed(rep_seed), n)?;
        let Some(z) = standard_parameter_z(d.table(), variance) else {
            return Ok(None);
        };
        let fit = match fit_table(&dgp.pattern, d.table(), StrataMode::Full, variance) {
            Ok((fit, _)) => fit,
            Err(Error::Identifiability { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let all: Vec<usize> = (0..k).collect();
        Ok(Some((z.abs() > z_crit, fit.wald(&all)? > chi_crit)))
    });
    let mut wrong = 0;
    let mut right = 0;
    let mut done = 0;
    let mut failures = 0;
    for run in runs {
        match run? {
            Some((w, r)) => {
                done += 1;
                wrong += usize::from(w);
                right += usize::from(r);
            }
            None => failures += 1,
        }
    }
    Ok(MotivationReport {
        schema_version: crate::report::SCHEMA_VERSION,
        n,
        reps,
        alpha,
        standard_parameter_test: Rate::of(wrong, done),
        point_effect_test: Rate::of(right, done),
        failures,
    })
}
