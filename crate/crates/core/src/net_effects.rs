//! Net effects of treatments computed exactly from a stratified table.
//!
//! Working backwards from the last treatment, the mean of every treatment
//! stratum `(…, z_t)` is marginalized from the full-history means, the
//! contributions of later active treatments are removed,
//!
//! ```text
//! ν(…, z_t) = μ(…, z_t) − Σ_{s>t} Σ_{paths} Σ_{z_s>0} φ(…, z_s) · pr(path, z_s | …, z_t)
//! ```
//!
//! and the net effect is `φ(…, z_t) = ν(…, z_t) − ν(…, z_t = 0)`. At `t = T`
//! nothing is removed, so `ν = μ` there.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::key::StratumKey;
use crate::point_params::KeyedValue;
use crate::table::{CovariateCodes, NodeId, StratumTable};

#[derive(Debug, Clone, PartialEq)]
pub struct NetEffectTable {
    codes: CovariateCodes,
    phi: BTreeMap<Vec<u32>, f64>,
    nu: BTreeMap<Vec<u32>, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetEffectDump {
    pub schema_version: u32,
    pub phi: Vec<KeyedValue>,
    pub nu: Vec<KeyedValue>,
}

impl NetEffectTable {
    /// `φ` addressed by the key ending in `z_t`; zero at the reference level.
    pub fn phi(&self, key: &StratumKey) -> Option<f64> {
        let path = self.codes.path_of(key)?;
        if path.len() % 2 == 0 {
            return None;
        }
        match path.last() {
            Some(0) => self.nu.contains_key(&path).then_some(0.0),
            _ => self.phi.get(&path).copied(),
        }
    }

    pub fn nu(&self, key: &StratumKey) -> Option<f64> {
        self.nu.get(&self.codes.path_of(key)?).copied()
    }

    pub fn phis(&self) -> impl Iterator<Item = (StratumKey, f64)> + '_ {
        self.phi.iter().map(|(p, &v)| (self.codes.key_of(p), v))
    }

    pub fn nus(&self) -> impl Iterator<Item = (StratumKey, f64)> + '_ {
        self.nu.iter().map(|(p, &v)| (self.codes.key_of(p), v))
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn dump(&self) -> NetEffectDump {
        NetEffectDump {
            schema_version: crate::report::SCHEMA_VERSION,
            phi: self
                .phis()
                .map(|(key, value)| KeyedValue { key, value })
                .collect(),
            nu: self
                .nus()
                .map(|(key, value)| KeyedValue { key, value })
                .collect(),
        }
    }

    fn phi_path(&self, path: &[u32]) -> Option<f64> {
        match path.last() {
            Some(0) => Some(0.0),
            _ => self.phi.get(path).copied(),
        }
    }
}

/// Per-node results of the backward pass; `None` where a reference arm is
/// missing somewhere the recursion needs it.
struct Backward {
    phi: Vec<Option<f64>>,
    nu: Vec<Option<f64>>,
    first_missing: Option<String>,
}

fn backward_pass(table: &StratumTable) -> Backward {
    let n = table.nodes().len();
    let mut marginal = vec![0.0; n];
    let mut downstream: Vec<Option<f64>> = vec![Some(0.0); n];
    let mut phi: Vec<Option<f64>> = vec![None; n];
    let mut nu: Vec<Option<f64>> = vec![None; n];
    let mut first_missing = None;
    let full = 2 * table.horizon() - 1;

    for depth in (0..=full).rev() {
        for &id in table.at_depth(depth) {
            let node = table.node(id);
            if node.children.is_empty() {
                marginal[id] = node.mean;
            } else {
                // running weighted mean, exact when all children agree
                let (mut w, mut m) = (0.0, 0.0);
                for &(_, c) in &node.children {
                    let wc = table.node(c).weight;
                    w += wc;
                    m += (marginal[c] - m) * (wc / w);
                }
                marginal[id] = m;
            }
            if node.is_treatment() {
                // Σ over the next treatment generation; later ones are folded
                // into their `downstream` value already.
                let mut acc = Some(0.0);
                for &(_, cov) in &node.children {
                    for &(sym, m) in &table.node(cov).children {
                        let own = if sym == 0 { Some(0.0) } else { phi[m] };
                        let term = own.zip(downstream[m]).map(|(a, b)| a + b);
                        acc = acc
                            .zip(term)
                            .map(|(a, t)| a + table.proportion(m, id) * t);
                    }
                }
                downstream[id] = acc;
                nu[id] = downstream[id].map(|d| marginal[id] - d);
            } else {
                let reference = node.child(0);
                for &(sym, m) in &node.children {
                    if sym == 0 {
                        continue;
                    }
                    phi[m] = match reference {
                        Some(r) => nu[m].zip(nu[r]).map(|(a, b)| a - b),
                        None => {
                            if first_missing.is_none() {
                                let key = table.key(m);
                                let mut z0 = key.clone();
                                *z0.treatments.last_mut().unwrap() = 0;
                                first_missing = Some(format!("reference arm {z0} for φ{key}"));
                            }
                            None
                        }
                    };
                }
            }
        }
    }
    Backward {
        phi,
        nu,
        first_missing,
    }
}

/// Net effects of every active treatment in every stratum of `table`, via the
/// backward recursion on the full-history means.
pub fn exact_net_effects(table: &StratumTable) -> Result<NetEffectTable> {
    if table.root().is_none() {
        return Err(Error::usage("empty table"));
    }
    let b = backward_pass(table);
    if let Some(term) = b.first_missing {
        return Err(Error::Incomplete { term });
    }
    Ok(collect(table, &b))
}

fn collect(table: &StratumTable, b: &Backward) -> NetEffectTable {
    let mut phi = BTreeMap::new();
    let mut nu = BTreeMap::new();
    for (id, node) in table.nodes().iter().enumerate() {
        if !node.is_treatment() {
            continue;
        }
        if let Some(v) = b.nu[id] {
            nu.insert(node.path.clone(), v);
        }
        if node.symbol() != Some(0) {
            if let Some(v) = b.phi[id] {
                phi.insert(node.path.clone(), v);
            }
        }
    }
    NetEffectTable {
        codes: table.codes().clone(),
        phi,
        nu,
    }
}

/// Weighted sum of φ over all later active-treatment strata below `start`,
/// enumerated explicitly.
fn descendant_sum(net: &NetEffectTable, table: &StratumTable, start: NodeId) -> Result<f64> {
    let base = table.node(start).weight;
    let mut stack: Vec<NodeId> = table.node(start).children.iter().map(|c| c.1).collect();
    let mut acc = 0.0;
    while let Some(id) = stack.pop() {
        let node = table.node(id);
        if node.is_treatment() && node.symbol() != Some(0) {
            let phi = net.phi_path(&node.path).ok_or_else(|| Error::Incomplete {
                term: format!("φ{}", table.key(id)),
            })?;
            acc += phi * node.weight / base;
        }
        stack.extend(node.children.iter().map(|c| c.1));
    }
    Ok(acc)
}

/// Expresses θ(…, z_t) through net effects: `φ(…, z_t)` plus the difference
/// between the proportion-weighted later net effects in the `z_t` arm and in
/// the `z_t = 0` arm.
pub fn decompose_point_effect(
    net: &NetEffectTable,
    proportions: &StratumTable,
    key: &StratumKey,
) -> Result<f64> {
    if !key.ends_with_treatment() {
        return Err(Error::usage(format!("{key} does not end on a treatment")));
    }
    if key.treatments.last() == Some(&0) {
        return Ok(0.0);
    }
    let arm = proportions.find(key).ok_or_else(|| Error::Incomplete {
        term: format!("stratum {key}"),
    })?;
    let parent = proportions.node(arm).parent.expect("treatment node has a parent");
    let reference = proportions
        .node(parent)
        .child(0)
        .ok_or_else(|| Error::Incomplete {
            term: format!("reference arm of {key}"),
        })?;
    let own = net.phi(key).ok_or_else(|| Error::Incomplete {
        term: format!("φ{key}"),
    })?;
    Ok(own + descendant_sum(net, proportions, arm)? - descendant_sum(net, proportions, reference)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionEntry {
    pub key: StratumKey,
    pub point_effect: f64,
    pub decomposition: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub entries: Vec<DecompositionEntry>,
    pub max_deviation: f64,
    /// Keys skipped because a net effect they need is not defined.
    pub skipped: Vec<StratumKey>,
}

impl DecompositionReport {
    pub fn flagged(&self, tolerance: f64) -> Vec<&DecompositionEntry> {
        self.entries
            .iter()
            .filter(|e| e.deviation > tolerance)
            .collect()
    }
}

/// Compares the point effect formed from the stored stratum means with its
/// decomposition into net effects, for every estimable treatment contrast.
pub fn verify_decomposition(table: &StratumTable) -> DecompositionReport {
    let b = backward_pass(table);
    let net = collect(table, &b);
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (id, node) in table.nodes().iter().enumerate() {
        if !node.is_treatment() || node.symbol() == Some(0) {
            continue;
        }
        let parent = node.parent.expect("treatment node has a parent");
        let Some(reference) = table.node(parent).child(0) else {
            continue;
        };
        let key = table.key(id);
        let point_effect = node.mean - table.node(reference).mean;
        match decompose_point_effect(&net, table, &key) {
            Ok(decomposition) => entries.push(DecompositionEntry {
                deviation: (point_effect - decomposition).abs(),
                key,
                point_effect,
                decomposition,
            }),
            Err(_) => skipped.push(key),
        }
    }
    let max_deviation = entries.iter().map(|e| e.deviation).fold(0.0, f64::max);
    DecompositionReport {
        entries,
        max_deviation,
        skipped,
    }
}
