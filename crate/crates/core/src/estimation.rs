//! From stratum averages to fitted net effects: point-effect estimates,
//! weighted least squares on the pattern constraints, and diagnostics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::expr::{BinOp, Expr};
use crate::key::StratumKey;
use crate::pattern::{numerical_rank, ConstraintRow, Param, ParamKind, PatternSpec};
use crate::stats::{StratumStats, VarianceMode};
use crate::table::{NodeId, StratumTable};
use crate::target::{enumerate_targets, SkippedTarget, StrataMode, TargetKey};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointEffectEstimate {
    pub target: TargetKey,
    /// `θ̂ = μ̂(active arm) − μ̂(reference arm)`.
    pub value: f64,
    /// `var{μ̂(active)} + var{μ̂(reference)}`.
    pub variance: f64,
    pub active_count: f64,
    pub reference_count: f64,
}

/// Point-effect estimates on full-history strata.
pub fn estimate_point_effects(d: &Dataset, variance: VarianceMode) -> Vec<PointEffectEstimate> {
    estimate_point_effects_in(d.table(), StrataMode::Full, variance).0
}

/// Point-effect estimates in either strata mode, with the targets that could
/// not be estimated and why.
pub fn estimate_point_effects_in(
    table: &StratumTable,
    mode: StrataMode,
    variance: VarianceMode,
) -> (Vec<PointEffectEstimate>, Vec<SkippedTarget>) {
    let (targets, mut skipped) = enumerate_targets(table, mode);
    let mut out = Vec::with_capacity(targets.len());
    for target in targets {
        let pool = |ids: &[NodeId]| {
            StratumStats::pooled(ids.iter().map(|&m| table.node(m))).expect("arm is non-empty")
        };
        let (a, r) = (pool(&target.active), pool(&target.reference));
        if matches!(variance, VarianceMode::Estimated) && (a.count < 2.0 || r.count < 2.0) {
            skipped.push(SkippedTarget {
                target: target.key,
                reason: format!(
                    "arm counts {} and {}; estimated variance needs at least 2 per arm",
                    a.count, r.count
                ),
            });
            continue;
        }
        out.push(PointEffectEstimate {
            target: target.key,
            value: a.mean - r.mean,
            variance: a.mean_variance(variance) + r.mean_variance(variance),
            active_count: a.count,
            reference_count: r.count,
        });
    }
    for s in &skipped {
        log::info!("point effect {} not estimated: {}", s.target, s.reason);
    }
    (out, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residual {
    pub target: TargetKey,
    pub observed: f64,
    pub fitted: f64,
    pub residual: f64,
    /// `residual · sqrt(weight)`.
    pub standardized: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetEffectFit {
    pub phi_hat: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub residuals: Vec<Residual>,
    pub dropped_targets: Vec<SkippedTarget>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// `Σ weight · residual²`; χ² with `df` degrees of freedom when the
    /// pattern holds and the weights are the true inverse variances.
    pub chi2: f64,
    pub df: usize,
}

impl NetEffectFit {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.phi_hat.len())
            .map(|j| self.covariance[j][j].sqrt())
            .collect()
    }

    /// Two-sided p-value of the residual χ² (pattern goodness of fit).
    pub fn pattern_p_value(&self) -> Option<f64> {
        use statrs::distribution::ChiSquared;
        if self.df == 0 {
            return None;
        }
        let chi = ChiSquared::new(self.df as f64).ok()?;
        Some(1.0 - chi.cdf(self.chi2))
    }

    /// Wald statistic of `ϕ = 0` for the listed parameters.
    pub fn wald(&self, params: &[usize]) -> Result<f64> {
        let q = params.len();
        let s = DMatrix::from_fn(q, q, |i, j| self.covariance[params[i]][params[j]]);
        let v = DVector::from_iterator(q, params.iter().map(|&j| self.phi_hat[j]));
        let inv = s
            .try_inverse()
            .ok_or_else(|| Error::Diagnostic("parameter covariance is singular".into()))?;
        Ok((v.transpose() * inv * v)[(0, 0)])
    }
}

/// Weighted least squares of `θ̂` on the constraint coefficients.
///
/// Rows with zero weight are dropped; every other row must have an estimate
/// with the same target. Solved through the SVD of `W^{1/2} C`, so the
/// covariance `(Cᵀ W C)⁻¹` is `V Σ⁻² Vᵀ`.
pub fn wls_fit(rows: &[ConstraintRow], estimates: &[PointEffectEstimate]) -> Result<NetEffectFit> {
    let by_key: BTreeMap<&TargetKey, &PointEffectEstimate> =
        estimates.iter().map(|e| (&e.target, e)).collect();
    if by_key.len() != estimates.len() {
        return Err(Error::usage("duplicate point-effect estimates"));
    }
    let k = rows
        .first()
        .map(|r| r.coefficients.len())
        .ok_or_else(|| Error::usage("no constraint rows"))?;
    let mut used = Vec::new();
    let mut dropped = Vec::new();
    for row in rows {
        if row.coefficients.len() != k {
            return Err(Error::usage("constraint rows differ in length"));
        }
        if !(row.weight > 0.0 && row.weight.is_finite()) {
            dropped.push(SkippedTarget {
                target: row.target.clone(),
                reason: "weight is zero".into(),
            });
            continue;
        }
        let est = by_key
            .get(&row.target)
            .ok_or_else(|| Error::usage(format!("no estimate for constraint row {}", row.target)))?;
        used.push((row, *est));
    }
    let row_keys: std::collections::BTreeSet<&TargetKey> = rows.iter().map(|r| &r.target).collect();
    if let Some(e) = estimates.iter().find(|e| !row_keys.contains(&e.target)) {
        return Err(Error::usage(format!("no constraint row for estimate {}", e.target)));
    }
    for d in &dropped {
        log::info!("dropped from fit: {} ({})", d.target, d.reason);
    }

    let n = used.len();
    let a = DMatrix::from_fn(n, k, |i, j| used[i].0.weight.sqrt() * used[i].0.coefficients[j]);
    let b = DVector::from_iterator(n, used.iter().map(|(r, e)| r.weight.sqrt() * e.value));
    let svd = a.clone().svd(true, true);
    let sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let v = svd.v_t.as_ref().expect("requested V").transpose();
    let u = svd.u.as_ref().expect("requested U");
    let rank = numerical_rank(&sv);
    if rank < k || n < k {
        let top = sv.iter().cloned().fold(0.0, f64::max);
        let mut null_space: Vec<Vec<f64>> = (0..sv.len())
            .filter(|&i| sv[i] <= crate::pattern::RANK_TOLERANCE * top)
            .map(|i| v.column(i).iter().cloned().collect())
            .collect();
        if n < k {
            // directions beyond the thin SVD are unconstrained
            let full = a.transpose() * &a;
            let eig = full.symmetric_eigen();
            let etop = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            null_space = (0..k)
                .filter(|&i| eig.eigenvalues[i] <= crate::pattern::RANK_TOLERANCE * etop.max(f64::MIN_POSITIVE))
                .map(|i| eig.eigenvectors.column(i).iter().cloned().collect())
                .collect();
        }
        return Err(Error::Identifiability {
            rank: rank.min(n),
            k,
            null_space,
        });
    }
    let ut_b = u.transpose() * &b;
    let mut phi = DVector::zeros(k);
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..k {
        let vi = v.column(i);
        phi += vi * (ut_b[i] / sv[i]);
        cov += vi * vi.transpose() / (sv[i] * sv[i]);
    }
    // symmetrize away rounding
    let cov = (&cov + cov.transpose()) * 0.5;

    let phi_hat: Vec<f64> = phi.iter().cloned().collect();
    let residuals: Vec<Residual> = used
        .iter()
        .map(|(r, e)| {
            let fitted: f64 = r.coefficients.iter().zip(&phi_hat).map(|(c, p)| c * p).sum();
            let residual = e.value - fitted;
            Residual {
                target: r.target.clone(),
                observed: e.value,
                fitted,
                residual,
                standardized: residual * r.weight.sqrt(),
                weight: r.weight,
            }
        })
        .collect();
    let chi2 = residuals.iter().map(|r| r.standardized * r.standardized).sum();
    let mut singular_values = sv;
    singular_values.sort_by(|a, b| b.total_cmp(a));
    Ok(NetEffectFit {
        phi_hat,
        covariance: (0..k).map(|i| (0..k).map(|j| cov[(i, j)]).collect()).collect(),
        residuals,
        dropped_targets: dropped,
        rank,
        singular_values,
        chi2,
        df: n - k,
    })
}

/// The full pipeline on a stratified table: point effects, constraint rows,
/// weighted fit. Targets that could not be estimated are listed among the
/// fit's dropped targets.
pub fn fit_pattern(
    spec: &PatternSpec,
    table: &StratumTable,
    mode: StrataMode,
    variance: VarianceMode,
) -> Result<NetEffectFit> {
    let (estimates, skipped) = estimate_point_effects_in(table, mode, variance);
    let have: std::collections::BTreeSet<&TargetKey> = estimates.iter().map(|e| &e.target).collect();
    let rows: Vec<ConstraintRow> = crate::pattern::constraints_from_table(spec, table, mode, variance)?
        .into_iter()
        .filter(|r| have.contains(&r.target))
        .collect();
    let mut fit = wls_fit(&rows, &estimates)?;
    fit.dropped_targets.extend(skipped);
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedNetEffect {
    pub stratum: StratumKey,
    pub value: f64,
    pub std_error: f64,
}

/// `φ̂(stratum) = feature(stratum) · ϕ̂` for every active treatment stratum of
/// the table, with the standard error from the fit covariance.
pub fn fitted_net_effects(
    fit: &NetEffectFit,
    spec: &PatternSpec,
    table: &StratumTable,
) -> Result<Vec<FittedNetEffect>> {
    let k = fit.phi_hat.len();
    if spec.dimension() != k {
        return Err(Error::usage("pattern and fit differ in dimension"));
    }
    let mut out = Vec::new();
    for t in 1..=table.horizon() {
        for &id in table.treatment_nodes(t) {
            if table.node(id).symbol() == Some(0) {
                continue;
            }
            let stratum = table.key(id);
            let f = spec.features(table.horizon(), &stratum)?;
            let value = f.iter().zip(&fit.phi_hat).map(|(a, b)| a * b).sum();
            let mut var = 0.0;
            for i in 0..k {
                for j in 0..k {
                    var += f[i] * fit.covariance[i][j] * f[j];
                }
            }
            out.push(FittedNetEffect {
                stratum,
                value,
                std_error: var.max(0.0).sqrt(),
            });
        }
    }
    Ok(out)
}

/// Deterministic per-stream seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceCheck {
    pub a: TargetKey,
    pub b: TargetKey,
    pub empirical: f64,
    pub mc_se: f64,
    /// `var{θ̂}` from the stratum variances on the diagonal, 0 off it.
    pub expected: f64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Proposition1Report {
    pub reps: usize,
    pub sigma2: f64,
    pub variances: Vec<CovarianceCheck>,
    pub covariances: Vec<CovarianceCheck>,
    pub warnings: Vec<String>,
}

impl Proposition1Report {
    pub fn flags(&self) -> impl Iterator<Item = &CovarianceCheck> {
        self.variances.iter().chain(&self.covariances).filter(|c| c.flagged)
    }
}

/// Z-score beyond which an off-diagonal covariance is flagged.
pub const COVARIANCE_FLAG_Z: f64 = 4.0;
/// Z-score beyond which an empirical variance disagrees with its formula.
pub const VARIANCE_FLAG_Z: f64 = 3.0;

/// Monte Carlo check that point-effect estimates at different strata and
/// times are uncorrelated, holding the design of `d` fixed and redrawing
/// normal outcomes around its cell means.
///
/// With `VarianceMode::Estimated` the outcome variance is the pooled
/// within-history variance of `d`.
pub fn proposition1_diagnostic(
    d: &Dataset,
    variance: VarianceMode,
    reps: usize,
    seed: u64,
) -> Result<Proposition1Report> {
    let table = d.table();
    let mut warnings = Vec::new();
    let sigma2 = match variance {
        VarianceMode::Known(s) => s,
        VarianceMode::Estimated => {
            let leaves = table.leaves();
            let ssd: f64 = leaves.iter().map(|&l| table.node(l).ssd).sum();
            let dof = d.len() as f64 - leaves.len() as f64;
            if dof <= 0.0 {
                return Err(Error::Estimability {
                    key: "pooled variance".into(),
                    reason: "no within-history replication".into(),
                });
            }
            ssd / dof
        }
    };
    if reps < 100 {
        let w = format!("{reps} replications is too few for a reliable check (use at least 100)");
        log::warn!("{w}");
        warnings.push(w);
    }
    let known = VarianceMode::Known(sigma2);
    let (base, _) = estimate_point_effects_in(table, StrataMode::Full, known);
    let q = base.len();
    if reps == 0 || q == 0 {
        return Ok(Proposition1Report {
            reps,
            sigma2,
            variances: Vec::new(),
            covariances: Vec::new(),
            warnings,
        });
    }

    // a normal sample's average is normal, so each history's average is
    // redrawn directly around its observed mean
    let leaves: Vec<(f64, f64)> = table
        .leaves()
        .iter()
        .map(|&l| (table.node(l).mean, (sigma2 / table.node(l).weight).sqrt()))
        .collect();
    let draws: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let means: Vec<f64> = leaves
                .iter()
                .map(|&(m, sd)| m + sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let sim = table.with_leaf_means(&means).expect("same layout");
            let (est, _) = estimate_point_effects_in(&sim, StrataMode::Full, known);
            est.into_iter().map(|e| e.value).collect()
        })
        .collect();

    let rf = reps as f64;
    let mean: Vec<f64> = (0..q).map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / rf).collect();
    let check = |i: usize, j: usize| -> CovarianceCheck {
        let prods: Vec<f64> = draws
            .iter()
            .map(|d| (d[i] - mean[i]) * (d[j] - mean[j]))
            .collect();
        let empirical = prods.iter().sum::<f64>() / (rf - 1.0).max(1.0);
        let pm = prods.iter().sum::<f64>() / rf;
        let psd = (prods.iter().map(|p| (p - pm) * (p - pm)).sum::<f64>() / (rf - 1.0).max(1.0)).sqrt();
        let mc_se = psd / rf.sqrt();
        let expected = if i == j { base[i].variance } else { 0.0 };
        let z = if mc_se > 0.0 {
            (empirical - expected) / mc_se
        } else {
            0.0
        };
        let limit = if i == j { VARIANCE_FLAG_Z } else { COVARIANCE_FLAG_Z };
        CovarianceCheck {
            a: base[i].target.clone(),
            b: base[j].target.clone(),
            empirical,
            mc_se,
            expected,
            z,
            flagged: z.abs() > limit,
        }
    };
    let variances = (0..q).map(|i| check(i, i)).collect();
    let mut covariances = Vec::new();
    for i in 0..q {
        for j in (i + 1)..q {
            covariances.push(check(i, j));
        }
    }
    Ok(Proposition1Report {
        reps,
        sigma2,
        variances,
        covariances,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeTest {
    pub left: String,
    pub right: String,
    pub difference: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
    pub merged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PatternSuggestion {
    #[serde(serialize_with = "as_text")]
    pub spec: PatternSpec,
    /// Members of each suggested group, as names of the input parameters.
    pub groups: Vec<Vec<String>>,
    pub estimates: Vec<f64>,
    pub tests: Vec<MergeTest>,
}

fn as_text<S: serde::Serializer>(spec: &PatternSpec, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&spec.to_string())
}

struct Cluster {
    members: Vec<usize>,
    /// Estimate of the cluster is `a · ϕ̂`.
    a: DVector<f64>,
}

/// Greedy merging of the parameters of a fitted indicator pattern: the pair
/// with the smallest Wald |z| for equality is merged while it fails to reject
/// at level `alpha`. Merged estimates are the GLS common mean of the pair.
pub fn pattern_discovery(
    fit: &NetEffectFit,
    spec: &PatternSpec,
    alpha: f64,
) -> Result<PatternSuggestion> {
    let k = fit.phi_hat.len();
    if spec.dimension() != k {
        return Err(Error::usage("pattern and fit differ in dimension"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::usage("alpha must lie in (0, 1)"));
    }
    let phi = DVector::from_column_slice(&fit.phi_hat);
    let sigma = DMatrix::from_fn(k, k, |i, j| fit.covariance[i][j]);
    let std = StdNormal::new(0.0, 1.0).expect("standard normal");
    let crit = std.inverse_cdf(1.0 - alpha / 2.0);
    let names = spec.names();
    let label = |c: &Cluster| {
        c.members
            .iter()
            .map(|&m| names[m])
            .collect::<Vec<_>>()
            .join("+")
    };

    let mut clusters: Vec<Cluster> = (0..k)
        .map(|i| Cluster {
            members: vec![i],
            a: DVector::from_fn(k, |j, _| if i == j { 1.0 } else { 0.0 }),
        })
        .collect();
    let mut tests = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize, f64, f64)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let diff = &clusters[i].a - &clusters[j].a;
                let var = (diff.transpose() * &sigma * &diff)[(0, 0)];
                if var.is_nan() || var <= 0.0 {
                    return Err(Error::Diagnostic(format!(
                        "singular covariance: {} and {} cannot be compared",
                        label(&clusters[i]),
                        label(&clusters[j])
                    )));
                }
                let d = diff.dot(&phi);
                let z = d / var.sqrt();
                if best.is_none_or(|b| z.abs() < b.0.abs()) {
                    best = Some((z, i, j, d, var.sqrt()));
                }
            }
        }
        let Some((z, i, j, d, se)) = best else { break };
        let merged = z.abs() < crit;
        tests.push(MergeTest {
            left: label(&clusters[i]),
            right: label(&clusters[j]),
            difference: d,
            std_error: se,
            z,
            p_value: 2.0 * (1.0 - std.cdf(z.abs())),
            merged,
        });
        if !merged {
            break;
        }
        let (ai, aj) = (clusters[i].a.clone(), clusters[j].a.clone());
        let s = [
            (ai.transpose() * &sigma * &ai)[(0, 0)],
            (ai.transpose() * &sigma * &aj)[(0, 0)],
            (aj.transpose() * &sigma * &aj)[(0, 0)],
        ];
        // GLS weights S⁻¹1 / 1ᵀS⁻¹1 for the two correlated estimates
        let (wi, wj) = (s[2] - s[1], s[0] - s[1]);
        let total = wi + wj;
        let a = (ai * wi + aj * wj) / total;
        let cj = clusters.remove(j);
        let ci = &mut clusters[i];
        ci.members.extend(cj.members);
        ci.members.sort_unstable();
        ci.a = a;
    }
    clusters.sort_by_key(|c| c.members[0]);

    let mut params = Vec::new();
    for c in &clusters {
        let mut predicate: Option<Expr> = None;
        for &m in &c.members {
            let ParamKind::Group { predicate: p, .. } = &spec.params()[m].kind else {
                return Err(Error::usage(format!(
                    "`{}` is a term; discovery needs an indicator pattern",
                    names[m]
                )));
            };
            predicate = Some(match predicate {
                None => p.clone(),
                Some(acc) => Expr::Bin(BinOp::Or, Box::new(acc), Box::new(p.clone())),
            });
        }
        params.push(Param {
            name: if c.members.len() == 1 {
                names[c.members[0]].to_string()
            } else {
                format!("group{}", params.len() + 1)
            },
            kind: ParamKind::Group {
                predicate: predicate.expect("clusters are non-empty"),
                priority: None,
            },
            line: 0,
        });
    }
    Ok(PatternSuggestion {
        spec: PatternSpec::new(params)?,
        groups: clusters
            .iter()
            .map(|c| c.members.iter().map(|&m| names[m].to_string()).collect())
            .collect(),
        estimates: clusters.iter().map(|c| c.a.dot(&phi)).collect(),
        tests,
    })
}
