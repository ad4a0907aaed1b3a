//! Stratum counts, means, mean-variances and conditional proportions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::key::StratumKey;
use crate::table::Node;

/// How `var{mean}` of a stratum is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", content = "sigma2", rename_all = "snake_case")]
pub enum VarianceMode {
    /// Outcome variance known and equal to `σ²` in every stratum: `σ²/n`.
    Known(f64),
    /// Unbiased plug-in `Σ(y − ȳ)² / (n(n − 1))`; needs `n ≥ 2`.
    #[default]
    Estimated,
}

impl FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "estimated" {
            return Ok(VarianceMode::Estimated);
        }
        if s == "known" {
            return Ok(VarianceMode::Known(1.0));
        }
        if let Some(v) = s.strip_prefix("known:") {
            let sigma2: f64 = v
                .parse()
                .map_err(|_| Error::usage(format!("bad variance `{v}`")))?;
            if !(sigma2 > 0.0 && sigma2.is_finite()) {
                return Err(Error::usage("known variance must be positive"));
            }
            return Ok(VarianceMode::Known(sigma2));
        }
        Err(Error::usage(format!(
            "variance mode must be `known:<sigma2>` or `estimated`, got `{s}`"
        )))
    }
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarianceMode::Known(s) => write!(f, "known:{s}"),
            VarianceMode::Estimated => write!(f, "estimated"),
        }
    }
}

/// `pr(A | B)` kept as the exact count ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportion {
    pub numerator: u64,
    pub denominator: u64,
}

impl Proportion {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

/// Outcome summary of one stratum (or of a union of strata).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumStats {
    /// `n(A)`; for exact tables this is the stratum weight.
    pub count: f64,
    pub mean: f64,
    /// Sum of squared deviations around `mean`.
    pub ssd: f64,
}

impl StratumStats {
    pub fn of(node: &Node) -> Self {
        Self {
            count: node.weight,
            mean: node.mean,
            ssd: node.ssd,
        }
    }

    /// Pools disjoint strata.
    pub fn pooled<'a, I: IntoIterator<Item = &'a Node>>(nodes: I) -> Option<Self> {
        let parts: Vec<Self> = nodes.into_iter().map(Self::of).collect();
        let count: f64 = parts.iter().map(|p| p.count).sum();
        if count <= 0.0 {
            return None;
        }
        let mean = parts.iter().map(|p| p.count * p.mean).sum::<f64>() / count;
        let ssd = parts
            .iter()
            .map(|p| p.ssd + p.count * (p.mean - mean) * (p.mean - mean))
            .sum();
        Some(Self { count, mean, ssd })
    }

    /// `var{μ̂(A)}`; infinite when the estimated mode has fewer than two units.
    pub fn mean_variance(&self, mode: VarianceMode) -> f64 {
        match mode {
            VarianceMode::Known(sigma2) => sigma2 / self.count,
            VarianceMode::Estimated if self.count >= 2.0 => {
                self.ssd / (self.count * (self.count - 1.0))
            }
            VarianceMode::Estimated => f64::INFINITY,
        }
    }
}

/// `pr(a | b)`: share of stratum `b` that also lies in `a`.
pub fn proportion(d: &Dataset, a: &StratumKey, b: &StratumKey) -> Result<Proportion> {
    if !b.is_prefix_of(a) {
        return Err(Error::usage(format!("{a} does not refine {b}")));
    }
    let table = d.table();
    let denom = table.find(b).map(|id| table.node(id).weight).unwrap_or(0.0);
    if denom == 0.0 {
        return Err(Error::Estimability {
            key: b.to_string(),
            reason: "conditioning stratum is empty".into(),
        });
    }
    let num = table.find(a).map(|id| table.node(id).weight).unwrap_or(0.0);
    Ok(Proportion {
        numerator: num as u64,
        denominator: denom as u64,
    })
}

/// Mean, count and dispersion of `y` over the stratum.
pub fn stratum_mean(d: &Dataset, key: &StratumKey) -> Result<StratumStats> {
    let table = d.table();
    table
        .find(key)
        .map(|id| StratumStats::of(table.node(id)))
        .ok_or_else(|| Error::Estimability {
            key: key.to_string(),
            reason: "stratum is empty".into(),
        })
}

pub fn stratum_mean_variance(d: &Dataset, key: &StratumKey, mode: VarianceMode) -> Result<f64> {
    let s = stratum_mean(d, key)?;
    if matches!(mode, VarianceMode::Estimated) && s.count < 2.0 {
        return Err(Error::Estimability {
            key: key.to_string(),
            reason: format!("{} unit(s); estimated variance needs at least 2", s.count),
        });
    }
    Ok(s.mean_variance(mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;

    fn ds(rows: &[(u32, u32, u32, f64)]) -> Dataset {
        let mut s = String::from("unit_id,z1,z2,x1_1,y\n");
        for (i, (z1, z2, x1, y)) in rows.iter().enumerate() {
            s.push_str(&format!("u{i},{z1},{z2},{x1},{y}\n"));
        }
        load_dataset(s.as_bytes()).unwrap()
    }

    fn k(z: &[u32], x: &[u32]) -> StratumKey {
        StratumKey::new(z.to_vec(), x.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    #[test]
    fn variance_mode_parsing() {
        assert_eq!("estimated".parse::<VarianceMode>().unwrap(), VarianceMode::Estimated);
        assert_eq!("known:2.5".parse::<VarianceMode>().unwrap(), VarianceMode::Known(2.5));
        assert!("known:-1".parse::<VarianceMode>().is_err());
        assert!("robust".parse::<VarianceMode>().is_err());
    }

    #[test]
    fn self_and_disjoint_proportions() {
        let d = ds(&[(0, 0, 0, 1.0), (1, 0, 1, 2.0), (1, 1, 1, 3.0)]);
        let a = k(&[1], &[]);
        assert_eq!(proportion(&d, &a, &a).unwrap().value(), 1.0);
        // (z1=1, x1=0) is absent inside z1=1
        assert_eq!(proportion(&d, &k(&[1], &[0]), &a).unwrap().value(), 0.0);
        assert!(matches!(
            proportion(&d, &k(&[0], &[]), &a),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            proportion(&d, &k(&[2, 0], &[0]), &k(&[2], &[])),
            Err(Error::Estimability { .. })
        ));
    }

    #[test]
    fn singleton_and_constant_means() {
        let d = ds(&[(0, 0, 0, 7.0), (1, 0, 1, 4.0), (1, 1, 1, 4.0)]);
        let s = stratum_mean(&d, &k(&[0], &[])).unwrap();
        assert_eq!((s.count, s.mean), (1.0, 7.0));
        assert_eq!(stratum_mean(&d, &k(&[1], &[])).unwrap().mean, 4.0);
        assert!(stratum_mean(&d, &k(&[1, 0], &[0])).is_err());
    }

    #[test]
    fn mean_variances() {
        let d = ds(&[(0, 0, 0, 1.0), (0, 0, 0, 2.0), (0, 0, 0, 3.0), (0, 0, 0, 4.0)]);
        let root = StratumKey::root();
        assert_eq!(
            stratum_mean_variance(&d, &root, VarianceMode::Known(1.0)).unwrap(),
            0.25
        );
        let d = ds(&[(0, 0, 0, 2.0), (0, 0, 0, 2.0), (0, 0, 0, 2.0)]);
        assert_eq!(stratum_mean_variance(&d, &root, VarianceMode::Estimated).unwrap(), 0.0);
        let d = ds(&[(0, 0, 0, 0.0), (0, 0, 0, 2.0)]);
        assert_eq!(stratum_mean_variance(&d, &root, VarianceMode::Estimated).unwrap(), 1.0);
        let d = ds(&[(0, 0, 0, 0.0)]);
        assert!(stratum_mean_variance(&d, &root, VarianceMode::Estimated).is_err());
    }
}
