use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::key::StratumKey;
use crate::table::{NodeId, StratumTable};

/// A point effect that can be estimated and constrained: either a full-history
/// stratum contrast, or the Markov-collapsed contrast on `(z_{t-1}, x_{t-1})`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKey {
    /// `θ(stratum)` where the stratum ends on an active treatment level.
    Full { stratum: StratumKey },
    /// `θ(z_{t-1}, x_{t-1})` for treatment level `level` at time `time ≥ 2`.
    Markov {
        time: usize,
        prev_treatment: u32,
        prev_covariate: Vec<u32>,
        level: u32,
    },
}

impl TargetKey {
    pub fn time(&self) -> usize {
        match self {
            TargetKey::Full { stratum } => stratum.treatments.len(),
            TargetKey::Markov { time, .. } => *time,
        }
    }

    pub fn level(&self) -> u32 {
        match self {
            TargetKey::Full { stratum } => *stratum.treatments.last().unwrap_or(&0),
            TargetKey::Markov { level, .. } => *level,
        }
    }

    /// The same target with the treatment set to the reference level.
    pub fn reference(&self) -> TargetKey {
        match self {
            TargetKey::Full { stratum } => {
                let mut s = stratum.clone();
                if let Some(z) = s.treatments.last_mut() {
                    *z = 0;
                }
                TargetKey::Full { stratum: s }
            }
            TargetKey::Markov {
                time,
                prev_treatment,
                prev_covariate,
                ..
            } => TargetKey::Markov {
                time: *time,
                prev_treatment: *prev_treatment,
                prev_covariate: prev_covariate.clone(),
                level: 0,
            },
        }
    }
}

impl fmt::Display for TargetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKey::Full { stratum } => write!(f, "{stratum}"),
            TargetKey::Markov {
                time,
                prev_treatment,
                prev_covariate,
                level,
            } => {
                let x = match prev_covariate.as_slice() {
                    [v] => v.to_string(),
                    v => format!("{v:?}"),
                };
                write!(
                    f,
                    "(z{}={prev_treatment}, x{}={x}, z{time}={level})",
                    time - 1,
                    time - 1
                )
            }
        }
    }
}

/// Which strata point effects are formed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrataMode {
    /// Full histories `(z_1^{t-1}, x_1^{t-1})`.
    #[default]
    Full,
    /// Histories collapsed to `(z_{t-1}, x_{t-1})` for `t ≥ 2`; valid only when
    /// assignment depends on the latest treatment and covariate alone.
    Markov,
}

/// The strata behind one target: `context` are the conditioning strata that
/// were collapsed together, `active` / `reference` the matching `z_t = level`
/// and `z_t = 0` treatment strata.
#[derive(Debug, Clone)]
pub struct TargetArms {
    pub key: TargetKey,
    pub context: Vec<NodeId>,
    pub active: Vec<NodeId>,
    pub reference: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedTarget {
    pub target: TargetKey,
    pub reason: String,
}

/// Every candidate target of the table in time order, split into those with
/// both arms observed and those skipped for an empty arm.
pub fn enumerate_targets(
    table: &StratumTable,
    mode: StrataMode,
) -> (Vec<TargetArms>, Vec<SkippedTarget>) {
    let mut found = Vec::new();
    let mut skipped = Vec::new();
    if table.root().is_none() {
        return (found, skipped);
    }
    for t in 1..=table.horizon() {
        let levels: BTreeSet<u32> = table
            .treatment_nodes(t)
            .iter()
            .filter_map(|&id| table.node(id).symbol())
            .filter(|&s| s > 0)
            .collect();
        let contexts = table.at_depth(2 * t - 2);
        let groups: Vec<(Option<TargetKey>, Vec<NodeId>)> = if mode == StrataMode::Full || t == 1 {
            contexts.iter().map(|&c| (None, vec![c])).collect()
        } else {
            let mut by: BTreeMap<(u32, u32), Vec<NodeId>> = BTreeMap::new();
            for &c in contexts {
                let p = &table.node(c).path;
                by.entry((p[2 * t - 4], p[2 * t - 3])).or_default().push(c);
            }
            by.into_iter()
                .map(|((z, x), ids)| {
                    let key = TargetKey::Markov {
                        time: t,
                        prev_treatment: z,
                        prev_covariate: table.codes().decode(t - 1, x).to_vec(),
                        level: 0,
                    };
                    (Some(key), ids)
                })
                .collect()
        };
        for (collapsed, context) in groups {
            let arm = |level: u32| -> Vec<NodeId> {
                context
                    .iter()
                    .filter_map(|&c| table.node(c).child(level))
                    .collect()
            };
            let reference = arm(0);
            for &level in &levels {
                let key = match &collapsed {
                    Some(TargetKey::Markov {
                        time,
                        prev_treatment,
                        prev_covariate,
                        ..
                    }) => TargetKey::Markov {
                        time: *time,
                        prev_treatment: *prev_treatment,
                        prev_covariate: prev_covariate.clone(),
                        level,
                    },
                    _ => TargetKey::Full {
                        stratum: table.key(context[0]).with_treatment(level),
                    },
                };
                let active = arm(level);
                let reason = match (active.is_empty(), reference.is_empty()) {
                    (false, false) => None,
                    (true, false) => Some("active arm is empty"),
                    (false, true) => Some("reference arm is empty"),
                    (true, true) => Some("both arms are empty"),
                };
                match reason {
                    Some(r) => skipped.push(SkippedTarget {
                        target: key,
                        reason: r.into(),
                    }),
                    None => found.push(TargetArms {
                        key,
                        context: context.clone(),
                        active,
                        reference: reference.clone(),
                    }),
                }
            }
        }
    }
    (found, skipped)
}
