//! Point parametrization of the outcome means.
//!
//! A point effect contrasts two sibling strata that differ only in the last
//! symbol: `θ(..., z_t) = μ(..., z_t) − μ(..., z_t = 0)` for a treatment and
//! `γ(..., x_t) = μ(..., x_t) − μ(..., x_t = 0)` for a covariate. Together with
//! the grand mean they determine every full-history mean again, given the
//! proportions:
//!
//! ```text
//! μ(h) = μ + Σ_p [ eff(h[..p], h[p]) − Σ_v eff(h[..p], v) · pr(v | h[..p]) ]
//! ```
//!
//! where `p` runs over all positions of the interleaved history. Effects at
//! the reference level are zero and never stored.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::key::StratumKey;
use crate::table::{CovariateCodes, NodeId, StratumTable};

#[derive(Debug, Clone, PartialEq)]
pub struct PointParams {
    horizon: usize,
    codes: CovariateCodes,
    /// Keyed by the path of the contrasted stratum (prefix plus non-zero level).
    effects: BTreeMap<Vec<u32>, f64>,
    grand_mean: f64,
    non_estimable: Vec<StratumKey>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KeyedValue {
    pub key: StratumKey,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointParamsDump {
    pub schema_version: u32,
    pub theta: Vec<KeyedValue>,
    pub gamma: Vec<KeyedValue>,
    pub grand_mean: f64,
}

impl PointParams {
    /// Extracts Ψ from the stored stratum means of `table`. Contrasts whose
    /// reference arm is unobserved are recorded as non-estimable.
    pub fn extract(table: &StratumTable) -> Result<Self> {
        let root = table
            .root()
            .ok_or_else(|| Error::usage("cannot parametrize an empty table"))?;
        let mut effects = BTreeMap::new();
        let mut non_estimable = Vec::new();
        for node in table.nodes() {
            if node.children.is_empty() {
                continue;
            }
            let reference = node.child(0).map(|c| table.node(c).mean);
            for &(v, c) in &node.children {
                if v == 0 {
                    continue;
                }
                match reference {
                    Some(m0) => {
                        effects.insert(table.node(c).path.clone(), table.node(c).mean - m0);
                    }
                    None => non_estimable.push(table.key(c)),
                }
            }
        }
        Ok(Self {
            horizon: table.horizon(),
            codes: table.codes().clone(),
            effects,
            grand_mean: table.node(root).mean,
            non_estimable,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn grand_mean(&self) -> f64 {
        self.grand_mean
    }

    /// Contrasts that could not be formed because the reference arm is empty.
    pub fn non_estimable(&self) -> &[StratumKey] {
        &self.non_estimable
    }

    fn lookup(&self, key: &StratumKey) -> Option<f64> {
        let path = self.codes.path_of(key)?;
        match path.last() {
            Some(0) => Some(0.0),
            Some(_) => self.effects.get(&path).copied(),
            None => None,
        }
    }

    /// `θ(z_1..z_{t−1}, x_1..x_{t−1}, z_t)` addressed by the key ending in `z_t`.
    pub fn theta(&self, key: &StratumKey) -> Option<f64> {
        key.ends_with_treatment().then(|| self.lookup(key)).flatten()
    }

    /// `γ(z_1..z_t, x_1..x_{t−1}, x_t)` addressed by the key ending in `x_t`.
    pub fn gamma(&self, key: &StratumKey) -> Option<f64> {
        (!key.is_empty() && !key.ends_with_treatment())
            .then(|| self.lookup(key))
            .flatten()
    }

    pub fn thetas(&self) -> impl Iterator<Item = (StratumKey, f64)> + '_ {
        self.effects
            .iter()
            .filter(|(p, _)| p.len() % 2 == 1)
            .map(|(p, &v)| (self.codes.key_of(p), v))
    }

    pub fn gammas(&self) -> impl Iterator<Item = (StratumKey, f64)> + '_ {
        self.effects
            .iter()
            .filter(|(p, _)| p.len() % 2 == 0)
            .map(|(p, &v)| (self.codes.key_of(p), v))
    }

    /// Number of stored (non-reference) point effects.
    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    /// Rebuilds the mean of a full history from Ψ and the proportions of
    /// `proportions`, folding over positions left to right.
    pub fn reconstruct(&self, proportions: &StratumTable, history: &StratumKey) -> Result<f64> {
        if proportions.codes() != &self.codes || proportions.horizon() != self.horizon {
            return Err(Error::usage(
                "proportion table does not share the parametrization's levels",
            ));
        }
        if history.depth() != self.horizon || history.covariates.len() + 1 != self.horizon {
            return Err(Error::usage(format!("{history} is not a full history")));
        }
        let path = self.codes.path_of(history).ok_or_else(|| Error::Incomplete {
            term: format!("covariate level of {history}"),
        })?;
        self.reconstruct_path(proportions, &path)
    }

    fn reconstruct_path(&self, proportions: &StratumTable, path: &[u32]) -> Result<f64> {
        let mut acc = 0.0;
        let mut node: Option<NodeId> = proportions.root();
        for p in 0..path.len() {
            let id = node.ok_or_else(|| Error::Incomplete {
                term: format!("pr(· | {})", self.codes.key_of(&path[..p])),
            })?;
            let n = proportions.node(id);
            let mut centering = 0.0;
            let mut child_path = path[..p].to_vec();
            child_path.push(0);
            for &(v, c) in &n.children {
                if v == 0 {
                    continue;
                }
                *child_path.last_mut().unwrap() = v;
                centering += self.effect(&child_path)? * proportions.proportion(c, id);
            }
            let own = if path[p] == 0 {
                0.0
            } else {
                self.effect(&path[..=p])?
            };
            acc += own - centering;
            node = n.child(path[p]);
        }
        Ok(acc + self.grand_mean)
    }

    fn effect(&self, path: &[u32]) -> Result<f64> {
        self.effects.get(path).copied().ok_or_else(|| {
            let key = self.codes.key_of(path);
            let name = if path.len() % 2 == 1 { "θ" } else { "γ" };
            Error::Incomplete {
                term: format!("{name}{key}"),
            }
        })
    }

    /// Table with the same weights as `proportions` whose leaf means are the
    /// reconstructed standard parameters.
    pub fn reconstruct_table(&self, proportions: &StratumTable) -> Result<StratumTable> {
        let means = proportions
            .leaves()
            .iter()
            .map(|&id| self.reconstruct_path(proportions, &proportions.node(id).path))
            .collect::<Result<Vec<_>>>()?;
        proportions.with_leaf_means(&means)
    }

    pub fn dump(&self) -> PointParamsDump {
        PointParamsDump {
            schema_version: crate::report::SCHEMA_VERSION,
            theta: self
                .thetas()
                .map(|(key, value)| KeyedValue { key, value })
                .collect(),
            gamma: self
                .gammas()
                .map(|(key, value)| KeyedValue { key, value })
                .collect(),
            grand_mean: self.grand_mean,
        }
    }
}

fn contrast(table: &StratumTable, key: &StratumKey) -> Result<f64> {
    let parent = key
        .parent()
        .ok_or_else(|| Error::usage("the whole sample has no point effect"))?;
    let level_is_reference = match key.ends_with_treatment() {
        true => key.treatments.last() == Some(&0),
        false => key.covariates.last().is_some_and(|x| x.iter().all(|&c| c == 0)),
    };
    if level_is_reference {
        return Ok(0.0);
    }
    let missing = |what: &str| Error::Estimability {
        key: key.to_string(),
        reason: format!("{what} arm is empty"),
    };
    let arm = table.find(key).ok_or_else(|| missing("active"))?;
    let pid = table.find(&parent).ok_or_else(|| missing("active"))?;
    let reference = table.node(pid).child(0).ok_or_else(|| missing("reference"))?;
    Ok(table.node(arm).mean - table.node(reference).mean)
}

/// θ for the stratum key ending in `z_t > 0`.
pub fn point_effect_treatment(table: &StratumTable, key: &StratumKey) -> Result<f64> {
    if !key.ends_with_treatment() {
        return Err(Error::usage(format!("{key} does not end on a treatment")));
    }
    contrast(table, key)
}

/// γ for the stratum key ending in `x_t ≠ 0`.
pub fn point_effect_covariate(table: &StratumTable, key: &StratumKey) -> Result<f64> {
    if key.is_empty() || key.ends_with_treatment() {
        return Err(Error::usage(format!("{key} does not end on a covariate")));
    }
    contrast(table, key)
}

/// Proportion-weighted average of the full-history means, i.e. the overall mean.
pub fn grand_mean(table: &StratumTable) -> Result<f64> {
    let root = table.root().ok_or_else(|| Error::usage("empty table"))?;
    let leaves = table.leaves();
    let total = table.node(root).weight;
    Ok(leaves
        .iter()
        .map(|&l| table.node(l).mean * table.node(l).weight / total)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(z: &[u32], x: &[u32]) -> StratumKey {
        StratumKey::new(z.to_vec(), x.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    #[test]
    fn arithmetic_of_contrasts() {
        // μ(z1=1)=5, μ(z1=0)=2
        let t = StratumTable::exact(1, 0, vec![(k(&[1], &[]), 0.5, 5.0), (k(&[0], &[]), 0.5, 2.0)])
            .unwrap();
        assert_eq!(point_effect_treatment(&t, &k(&[1], &[])).unwrap(), 3.0);
        assert_eq!(point_effect_treatment(&t, &k(&[0], &[])).unwrap(), 0.0);
        assert_eq!(grand_mean(&t).unwrap(), 3.5);
    }

    #[test]
    fn covariate_contrast() {
        let t = StratumTable::exact(
            2,
            1,
            vec![
                (k(&[1, 0], &[1]), 0.25, 9.0),
                (k(&[1, 0], &[0]), 0.25, 4.0),
                (k(&[0, 0], &[0]), 0.5, 1.0),
            ],
        )
        .unwrap();
        assert_eq!(point_effect_covariate(&t, &k(&[1], &[1])).unwrap(), 5.0);
        // z1=0 has no x1=1 arm
        assert!(matches!(
            point_effect_covariate(&t, &k(&[0], &[1])),
            Err(Error::Estimability { .. })
        ));
    }

    #[test]
    fn missing_reference_arm_is_reported() {
        let t = StratumTable::exact(1, 0, vec![(k(&[1], &[]), 1.0, 5.0)]).unwrap();
        let err = point_effect_treatment(&t, &k(&[1], &[])).unwrap_err();
        assert!(err.to_string().contains("reference"));
        let psi = PointParams::extract(&t).unwrap();
        assert_eq!(psi.non_estimable(), &[k(&[1], &[])]);
        assert!(matches!(
            psi.reconstruct(&t, &k(&[1], &[])),
            Err(Error::Incomplete { .. })
        ));
    }

    #[test]
    fn t1_binary_reconstruction() {
        // θ = 4, μ = 0.3·7 + 0.7·3 = 4.2; μ(0) = μ − θ·pr(1) = 3, μ(1) = μ(0) + θ = 7
        let t = StratumTable::exact(1, 0, vec![(k(&[1], &[]), 0.3, 7.0), (k(&[0], &[]), 0.7, 3.0)])
            .unwrap();
        let psi = PointParams::extract(&t).unwrap();
        assert!((psi.theta(&k(&[1], &[])).unwrap() - 4.0).abs() < 1e-15);
        assert!((psi.grand_mean() - 4.2).abs() < 1e-15);
        assert!((psi.reconstruct(&t, &k(&[0], &[])).unwrap() - 3.0).abs() < 1e-14);
        assert!((psi.reconstruct(&t, &k(&[1], &[])).unwrap() - 7.0).abs() < 1e-14);
    }

    #[test]
    fn zero_effects_collapse_to_grand_mean() {
        let t = StratumTable::exact(
            2,
            1,
            vec![
                (k(&[0, 0], &[0]), 0.1, 6.0),
                (k(&[0, 1], &[0]), 0.2, 6.0),
                (k(&[1, 0], &[1]), 0.3, 6.0),
                (k(&[1, 1], &[1]), 0.15, 6.0),
                (k(&[1, 0], &[0]), 0.15, 6.0),
                (k(&[1, 1], &[0]), 0.1, 6.0),
            ],
        )
        .unwrap();
        let psi = PointParams::extract(&t).unwrap();
        assert!(psi.thetas().all(|(_, v)| v == 0.0));
        for &l in t.leaves() {
            let h = t.key(l);
            assert!((psi.reconstruct(&t, &h).unwrap() - 6.0).abs() < 1e-14);
        }
    }
}
