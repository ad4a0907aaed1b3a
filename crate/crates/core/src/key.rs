use std::fmt;

use serde::{Deserialize, Serialize};

/// A stratum defined by a history prefix `(z_1..z_t, x_1..x_{t-1})`, optionally
/// extended by the covariate `x_t`.
///
/// Treatments and covariates interleave as `z_1, x_1, z_2, x_2, ...`, so a
/// valid key has either as many covariate vectors as treatments (it ends on a
/// covariate) or one fewer (it ends on a treatment). The empty key is the
/// whole sample.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct StratumKey {
    #[serde(rename = "z")]
    pub treatments: Vec<u32>,
    #[serde(rename = "x")]
    pub covariates: Vec<Vec<u32>>,
}

impl StratumKey {
    pub fn root() -> Self {
        Self::default()
    }

    /// Builds a key, checking the interleaving invariant.
    pub fn new(treatments: Vec<u32>, covariates: Vec<Vec<u32>>) -> Option<Self> {
        let (nz, nx) = (treatments.len(), covariates.len());
        if nz == nx || nz == nx + 1 {
            Some(Self {
                treatments,
                covariates,
            })
        } else {
            None
        }
    }

    /// Number of treatments in the prefix (`t`).
    pub fn depth(&self) -> usize {
        self.treatments.len()
    }

    /// Number of interleaved symbols.
    pub fn len(&self) -> usize {
        self.treatments.len() + self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ends_with_treatment(&self) -> bool {
        !self.treatments.is_empty() && self.treatments.len() > self.covariates.len()
    }

    pub fn is_well_formed(&self) -> bool {
        let (nz, nx) = (self.treatments.len(), self.covariates.len());
        nz == nx || nz == nx + 1
    }

    /// Appends `z_{t+1}`. Only valid on a key that ends on a covariate (or root).
    pub fn with_treatment(&self, level: u32) -> Self {
        debug_assert!(!self.ends_with_treatment());
        let mut k = self.clone();
        k.treatments.push(level);
        k
    }

    /// Appends `x_t`. Only valid on a key that ends on a treatment.
    pub fn with_covariate(&self, level: Vec<u32>) -> Self {
        debug_assert!(self.ends_with_treatment());
        let mut k = self.clone();
        k.covariates.push(level);
        k
    }

    /// Drops the last symbol.
    pub fn parent(&self) -> Option<Self> {
        if self.is_empty() {
            return None;
        }
        let mut k = self.clone();
        if k.ends_with_treatment() {
            k.treatments.pop();
        } else {
            k.covariates.pop();
        }
        Some(k)
    }

    /// `true` when `self` is a (non-strict) prefix of `other`.
    pub fn is_prefix_of(&self, other: &StratumKey) -> bool {
        self.len() <= other.len()
            && other.treatments.starts_with(&self.treatments)
            && other.covariates.starts_with(&self.covariates)
    }
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for i in 0..self.len() {
            if i > 0 {
                write!(f, ", ")?;
            }
            let t = i / 2 + 1;
            if i % 2 == 0 {
                write!(f, "z{}={}", t, self.treatments[i / 2])?;
            } else {
                let x = &self.covariates[i / 2];
                if x.len() == 1 {
                    write!(f, "x{}={}", t, x[0])?;
                } else {
                    write!(f, "x{}={:?}", t, x)?;
                }
            }
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaving_invariant() {
        assert!(StratumKey::new(vec![1], vec![]).is_some());
        assert!(StratumKey::new(vec![1], vec![vec![0]]).is_some());
        assert!(StratumKey::new(vec![], vec![vec![0]]).is_none());
        assert!(StratumKey::new(vec![1, 0, 1], vec![vec![0]]).is_none());
    }

    #[test]
    fn prefix_relation() {
        let a = StratumKey::new(vec![1], vec![]).unwrap();
        let b = StratumKey::new(vec![1, 0], vec![vec![1]]).unwrap();
        let c = StratumKey::new(vec![0, 0], vec![vec![1]]).unwrap();
        assert!(StratumKey::root().is_prefix_of(&b));
        assert!(a.is_prefix_of(&b));
        assert!(!a.is_prefix_of(&c));
        assert!(!b.is_prefix_of(&a));
        assert_eq!(b.parent().unwrap().parent().unwrap(), a);
    }

    #[test]
    fn display() {
        let b = StratumKey::new(vec![1, 0], vec![vec![1]]).unwrap();
        assert_eq!(b.to_string(), "(z1=1, x1=1, z2=0)");
        assert_eq!(StratumKey::root().to_string(), "()");
    }
}
