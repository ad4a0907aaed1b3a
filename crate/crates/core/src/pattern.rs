//! Declared patterns of net effects and the linear constraints they put on
//! point effects.
//!
//! A pattern file is line oriented; `#` starts a comment.
//!
//! ```text
//! group <name> [priority <int>]: when <predicate>
//! term <name>: <expression>
//! ```
//!
//! Every line declares one parameter `ϕ_j`, in file order. A `group` contributes
//! the indicator of the stratum belonging to it; a `term` contributes the value
//! of its expression. Predicates and expressions use the grammar of
//! [`crate::expr`] with `t`, `T`, `z[s]` (s ≤ t) and `x[s][i]` (s < t).
//!
//! Groups are tried in decreasing priority (default 0), ties in file order,
//! and the first match wins. Two matching groups that were both given the same
//! explicit priority are reported as ambiguous. When any group is declared,
//! every active treatment stratum must match one.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::expr::{parse_expr, Env, Expr};
use crate::key::StratumKey;
use crate::stats::{StratumStats, VarianceMode};
use crate::table::{NodeId, StratumTable};
use crate::target::{enumerate_targets, StrataMode, TargetKey};

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Group {
        predicate: Expr,
        priority: Option<i64>,
    },
    Term {
        expr: Expr,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    /// Source line, 0 for generated patterns.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    params: Vec<Param>,
    /// Indices of group parameters in evaluation order.
    order: Vec<usize>,
}

impl PatternSpec {
    pub fn new(params: Vec<Param>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Spec {
                line: 0,
                message: "pattern declares no parameters".into(),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Spec {
                    line: p.line,
                    message: format!("duplicate parameter name `{}`", p.name),
                });
            }
        }
        let mut order: Vec<usize> = params
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p.kind, ParamKind::Group { .. }))
            .map(|(i, _)| i)
            .collect();
        order.sort_by_key(|&i| match params[i].kind {
            ParamKind::Group { priority, .. } => -priority.unwrap_or(0),
            ParamKind::Term { .. } => 0,
        });
        Ok(Self { params, order })
    }

    /// One indicator group per estimable point effect of the table, in
    /// target order.
    pub fn saturated(table: &StratumTable) -> Self {
        let (targets, _) = enumerate_targets(table, StrataMode::Full);
        let params = targets
            .iter()
            .map(|target| {
                let TargetKey::Full { stratum } = &target.key else {
                    unreachable!("full mode yields full keys")
                };
                let t = stratum.treatments.len();
                let mut parts = vec![format!("t == {t}")];
                let mut name = format!("t{t}");
                for s in 1..=t {
                    let z = stratum.treatments[s - 1];
                    parts.push(format!("z[{s}] == {z}"));
                    name.push_str(&format!("_z{s}_{z}"));
                    if s < t {
                        for (i, v) in stratum.covariates[s - 1].iter().enumerate() {
                            parts.push(format!("x[{s}][{}] == {v}", i + 1));
                            name.push_str(&format!("_x{s}_{v}"));
                        }
                    }
                }
                Param {
                    name,
                    kind: ParamKind::Group {
                        predicate: parse_expr(&parts.join(" and "), false)
                            .expect("generated predicate parses"),
                        priority: None,
                    },
                    line: 0,
                }
            })
            .collect();
        Self::new(params).unwrap_or_else(|_| Self {
            params: Vec::new(),
            order: Vec::new(),
        })
    }

    /// `k`, the number of pattern parameters.
    pub fn dimension(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    fn has_groups(&self) -> bool {
        !self.order.is_empty()
    }

    /// Feature vector of the net effect `φ(stratum)`, where `stratum` ends on
    /// an active treatment level.
    pub fn features(&self, horizon: usize, stratum: &StratumKey) -> Result<Vec<f64>> {
        let t = stratum.treatments.len();
        let z: Vec<Option<u32>> = stratum.treatments.iter().map(|&v| Some(v)).collect();
        let x: Vec<Option<&[u32]>> = stratum.covariates.iter().map(|v| Some(&v[..])).collect();
        let env = Env {
            t,
            horizon,
            z: &z,
            x: &x,
            latent: None,
        };
        let spec_err = |p: &Param, m: String| Error::Spec {
            line: p.line,
            message: format!("`{}` at {stratum}: {m}", p.name),
        };
        let mut out = vec![0.0; self.params.len()];
        for (j, p) in self.params.iter().enumerate() {
            if let ParamKind::Term { expr } = &p.kind {
                let v = expr.eval(&env).map_err(|m| spec_err(p, m))?;
                if !v.is_finite() {
                    return Err(spec_err(p, format!("feature value {v} is not finite")));
                }
                out[j] = v;
            }
        }
        if self.has_groups() {
            let mut chosen: Option<usize> = None;
            for &j in &self.order {
                let p = &self.params[j];
                let ParamKind::Group {
                    predicate,
                    priority,
                } = &p.kind
                else {
                    continue;
                };
                if let Some(c) = chosen {
                    // only equal explicit priorities can clash
                    let ParamKind::Group { priority: pc, .. } = self.params[c].kind else {
                        unreachable!()
                    };
                    if pc.is_none() || pc != *priority {
                        break;
                    }
                }
                if predicate.eval(&env).map_err(|m| spec_err(p, m))? != 0.0 {
                    if let Some(c) = chosen {
                        return Err(Error::Ambiguity(format!(
                            "{stratum} matches both `{}` and `{}` at priority {}",
                            self.params[c].name,
                            p.name,
                            priority.unwrap_or(0)
                        )));
                    }
                    chosen = Some(j);
                }
            }
            match chosen {
                Some(j) => out[j] = 1.0,
                None => {
return Err(Error::Coverage(stratum.to_string()))
                }
            }
        }
        Ok(out)
    }
}

/// Parses a pattern file.
pub fn parse_pattern(source: &str) -> Result<PatternSpec> {
    let mut params = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let err = |m: String| Error::Parse { line, message: m };
        let (head, body) = text
            .split_once(':')
            .ok_or_else(|| err("expected `group <name>: when <predicate>` or `term <name>: <expr>`".into()))?;
        let head: Vec<&str> = head.split_whitespace().collect();
        let body = body.trim();
        let name_ok = |n: &str| {
            !n.is_empty() && n.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-' || c == '.')
        };
        let param = match head.as_slice() {
            ["group", name, rest @ ..] if name_ok(name) => {
                let priority = match rest {
                    [] => None,
                    ["priority", n] => Some(
                        n.parse::<i64>()
                            .map_err(|_| err(format!("bad priority `{n}`")))?,
                    ),
                    _ => return Err(err("expected `priority <int>` after the group name".into())),
                };
                let pred = body
                    .strip_prefix("when")
                    .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace) || r.starts_with('('))
                    .ok_or_else(|| err("group body must start with `when`".into()))?;
                Param {
                    name: name.to_string(),
                    kind: ParamKind::Group {
                        predicate: parse_expr(pred, false).map_err(err)?,
                        priority,
                    },
                    line,
                }
            }
            ["term", name] if name_ok(name) => Param {
                name: name.to_string(),
                kind: ParamKind::Term {
                    expr: parse_expr(body, false).map_err(err)?,
                },
                line,
            },
            _ => return Err(err(format!("unrecognized declaration `{}`", head.join(" ")))),
        };
        params.push(param);
    }
    PatternSpec::new(params)
}

impl FromStr for PatternSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_pattern(s)
    }
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            match &p.kind {
                ParamKind::Group {
                    predicate,
                    priority: Some(n),
                } => writeln!(f, "group {} priority {n}: when {predicate}", p.name)?,
                ParamKind::Group { predicate, .. } => {
                    writeln!(f, "group {}: when {predicate}", p.name)?
                }
                ParamKind::Term { expr } => writeln!(f, "term {}: {expr}", p.name)?,
            }
        }
        Ok(())
    }
}

/// `θ(target) = coefficients · ϕ`, to be fitted with weight `1 / var{θ̂}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintRow {
    pub target: TargetKey,
    pub coefficients: Vec<f64>,
    /// Zero marks a row kept for the record but excluded from fitting.
    pub weight: f64,
}

/// Constraint rows for every target of the dataset with both arms observed.
pub fn build_constraints(
    spec: &PatternSpec,
    d: &Dataset,
    mode: StrataMode,
    variance: VarianceMode,
) -> Result<Vec<ConstraintRow>> {
    constraints_from_table(spec, d.table(), mode, variance)
}

/// [`build_constraints`] on any stratified table, empirical or exact.
pub fn constraints_from_table(
    spec: &PatternSpec,
    table: &StratumTable,
    mode: StrataMode,
    variance: VarianceMode,
) -> Result<Vec<ConstraintRow>> {
    if mode == StrataMode::Markov {
        log::warn!("markov mode assumes assignment depends only on (z[t-1], x[t-1]); this is not checked");
    }
    let k = spec.dimension();
    let n = table.nodes().len();
    let horizon = table.horizon();

    // own features f(m) of every active treatment stratum
    let mut own: Vec<Option<Vec<f64>>> = vec![None; n];
    for t in 1..=horizon {
        for &id in table.treatment_nodes(t) {
            if table.node(id).symbol() != Some(0) {
                own[id] = Some(spec.features(horizon, &table.key(id))?);
            }
        }
    }

    // F(n) = Σ over the next treatment generation of W(m)/W(n)·(f(m) + F(m))
    let mut down = vec![vec![0.0; k]; n];
    for t in (1..horizon).rev() {
        for &id in table.treatment_nodes(t) {
            let node = table.node(id);
            let mut acc = vec![0.0; k];
            for &(_, cov) in &node.children {
                for &(_, m) in &table.node(cov).children {
                    let p = table.proportion(m, id);
                    for j in 0..k {
                        let f = own[m].as_ref().map_or(0.0, |f| f[j]);
                        acc[j] += p * (f + down[m][j]);
                    }
                }
            }
            down[id] = acc;
        }
    }

    let average = |ids: &[NodeId]| -> Vec<f64> {
        let total: f64 = ids.iter().map(|&m| table.node(m).weight).sum();
        let mut acc = vec![0.0; k];
        for &m in ids {
            let p = table.node(m).weight / total;
            for j in 0..k {
                acc[j] += p * down[m][j];
            }
        }
        acc
    };

    let (targets, skipped) = enumerate_targets(table, mode);
    for s in &skipped {
        log::info!("no constraint for {}: {}", s.target, s.reason);
    }
    let mut rows = Vec::with_capacity(targets.len());
    for target in targets {
        let level = target.key.level();
        // own feature averaged over the conditioning strata that were pooled
        let total: f64 = target.context.iter().map(|&c| table.node(c).weight).sum();
        let mut coefficients = vec![0.0; k];
        for &c in &target.context {
            let f = match table.node(c).child(level) {
                Some(m) => own[m].clone().expect("active stratum has features"),
                None => spec.features(horizon, &table.key(c).with_treatment(level))?,
            };
            let p = table.node(c).weight / total;
            for j in 0..k {
                coefficients[j] += p * f[j];
            }
        }
        let (a, r) = (average(&target.active), average(&target.reference));
        for j in 0..k {
            coefficients[j] += a[j] - r[j];
        }

        let arm = |ids: &[NodeId]| {
            StratumStats::pooled(ids.iter().map(|&m| table.node(m))).expect("arm is non-empty")
        };
        let var = arm(&target.active).mean_variance(variance)
            + arm(&target.reference).mean_variance(variance);
        let weight = if var.is_finite() && var > 0.0 {
            1.0 / var
        } else {
            log::info!("{} excluded from fitting: var{{θ̂}} = {var}", target.key);
            0.0
        };
        rows.push(ConstraintRow {
            target: target.key,
            coefficients,
            weight,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub rank: usize,
    pub k: usize,
    pub rows: usize,
    pub singular_values: Vec<f64>,
    /// `rank < k`: ϕ is not identified by these rows.
    pub deficient: bool,
}

/// Relative cut-off below which a singular value counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

pub(crate) fn numerical_rank(singular_values: &[f64]) -> usize {
    let top = singular_values.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * top)
        .count()
}

/// Rank of the unweighted coefficient matrix of `rows`.
pub fn constraint_rank_check(rows: &[ConstraintRow]) -> RankReport {
    let k = rows.first().map_or(0, |r| r.coefficients.len());
    if rows.is_empty() || k == 0 {
        return RankReport {
            rank: 0,
            k,
            rows: rows.len(),
            singular_values: Vec::new(),
            deficient: true,
        };
    }
    let m = DMatrix::from_fn(rows.len(), k, |i, j| rows[i].coefficients[j]);
    let mut singular_values: Vec<f64> = m.singular_values().iter().cloned().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let rank = numerical_rank(&singular_values);
    RankReport {
        rank,
        k,
        rows: rows.len(),
        singular_values,
        deficient: rank < k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(z: &[u32], x: &[u32]) -> StratumKey {
        StratumKey::new(z.to_vec(), x.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    const THREE: &str = "\
# early, second-last, last
group first: when t == 1
group rest: when t == 2 and not (z[1] == 1 and x[1] == 1)
group treated_high: when t == 2 and z[1] == 1 and x[1] == 1
";

    #[test]
    fn parses_groups_and_terms() {
        let p = parse_pattern("group all: when true\n").unwrap();
        assert_eq!(p.dimension(), 1);
        assert_eq!(p.features(3, &k(&[0, 1], &[1])).unwrap(), vec![1.0]);

        let p = parse_pattern(THREE).unwrap();
        assert_eq!(p.names(), ["first", "rest", "treated_high"]);
        assert_eq!(p.features(2, &k(&[1], &[])).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(p.features(2, &k(&[1, 1], &[1])).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(p.features(2, &k(&[0, 1], &[1])).unwrap(), vec![0.0, 1.0, 0.0]);

        let p = parse_pattern("term now: z[t]\nterm before: z[t-1]\nterm cov: x[t-1][1]\n").unwrap();
        assert_eq!(p.features(3, &k(&[1, 0, 2], &[1, 1])).unwrap(), vec![2.0, 0.0, 1.0]);
        assert_eq!(p.features(3, &k(&[1], &[])).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn display_roundtrips() {
        let p = parse_pattern(THREE).unwrap();
        let q = parse_pattern(&p.to_string()).unwrap();
        assert_eq!(q.to_string(), p.to_string());
        assert_eq!(q.features(2, &k(&[1, 1], &[1])).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn parse_errors_carry_lines() {
        for (src, line) in [
            ("group a: when t == 1\ngroup b: t == 2\n", 2),
            ("term a: y + 1\n", 1),
            ("\n\nwidget a: 1\n", 3),
            ("group a: when t ==\n", 1),
        ] {
            match parse_pattern(src) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{src}"),
                other => panic!("unexpected {other:?} for {src}"),
            }
        }
        assert!(matches!(
            parse_pattern("group a: when true\ngroup a: when true\n"),
            Err(Error::Spec { line: 2, .. })
        ));
    }

    #[test]
    fn first_match_wins_and_equal_priorities_clash() {
        let p = parse_pattern("group a: when t == 1\ngroup b: when true\n").unwrap();
        assert_eq!(p.features(2, &k(&[1], &[])).unwrap(), vec![1.0, 0.0]);
        let p = parse_pattern("group a: when t == 1\ngroup b priority 5: when true\n").unwrap();
        assert_eq!(p.features(2, &k(&[1], &[])).unwrap(), vec![0.0, 1.0]);
        let p = parse_pattern("group a priority 1: when t == 1\ngroup b priority 1: when true\n").unwrap();
        assert!(matches!(p.features(2, &k(&[1], &[])), Err(Error::Ambiguity(_))));
        assert_eq!(p.features(2, &k(&[0, 1], &[0])).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn uncovered_and_future_references() {
        let p = parse_pattern("group a: when t == 1\n").unwrap();
        assert!(matches!(p.features(2, &k(&[0, 1], &[0])), Err(Error::Coverage(_))));
        let p = parse_pattern("term a: x[t]\n").unwrap();
        assert!(matches!(p.features(2, &k(&[1], &[])), Err(Error::Spec { line: 1, .. })));
    }

    fn t2(p11: f64, p01: f64) -> StratumTable {
        // pr(x1=1)=0.5 in both z1 arms; pr(z2=1|z1) given
        let mut e = Vec::new();
        for z1 in 0..2u32 {
            let pz1 = 0.5;
            let p2 = if z1 == 1 { p11 } else { p01 };
            for x1 in 0..2u32 {
                for z2 in 0..2u32 {
                    let w = pz1 * 0.5 * if z2 == 1 { p2 } else { 1.0 - p2 };
                    e.push((k(&[z1, z2], &[x1]), w, (z1 + x1 + 3 * z2) as f64));
                }
            }
        }
        StratumTable::exact(2, 1, e).unwrap()
    }

    #[test]
    fn two_period_rows() {
        let p = parse_pattern("group one: when t == 1\ngroup two: when t == 2\n").unwrap();
        let rows =
            constraints_from_table(&p, &t2(0.8, 0.3), StrataMode::Full, VarianceMode::Known(1.0)).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].target, TargetKey::Full { stratum: k(&[1], &[]) });
        assert!((rows[0].coefficients[0] - 1.0).abs() < 1e-15);
        assert!((rows[0].coefficients[1] - 0.5).abs() < 1e-15);
        for r in &rows[1..] {
            assert_eq!(r.coefficients, vec![0.0, 1.0]);
        }
        let balanced =
            constraints_from_table(&p, &t2(0.4, 0.4), StrataMode::Full, VarianceMode::Known(1.0)).unwrap();
        assert!(balanced[0].coefficients[1].abs() < 1e-15);
    }

    #[test]
    fn rank_checks() {
        let row = |c: Vec<f64>| ConstraintRow {
            target: TargetKey::Full { stratum: k(&[1], &[]) },
            coefficients: c,
            weight: 1.0,
        };
        let same = vec![row(vec![1.0, 0.5]), row(vec![1.0, 0.5]), row(vec![1.0, 0.5])];
        let r = constraint_rank_check(&same);
        assert_eq!((r.rank, r.deficient), (1, true));
        let r = constraint_rank_check(&[row(vec![1.0])]);
        assert_eq!((r.rank, r.deficient), (1, false));
        let r = constraint_rank_check(&[row(vec![1.0, 0.2, 0.0]), row(vec![0.0, 1.0, 0.0]), row(vec![0.0, 0.0, 1.0])]);
        assert_eq!(r.rank, 3);
    }
}
