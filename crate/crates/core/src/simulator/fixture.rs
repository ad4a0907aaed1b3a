//! The two-period study fixture `D0`.
//!
//! Two binary treatments and one binary covariate, 160 units over the eight
//! histories `(z1, x1, z2)`:
//!
//! | z1 | x1 | z2 | units | mean |
//! |----|----|----|-------|------|
//! | 0  | 0  | 0  | 30    | 50   |
//! | 0  | 0  | 1  | 10    | 70   |
//! | 0  | 1  | 0  | 20    | 60   |
//! | 0  | 1  | 1  | 20    | 80   |
//! | 1  | 0  | 0  | 10    | 60   |
//! | 1  | 0  | 1  | 20    | 80   |
//! | 1  | 1  | 0  | 10    | 100  |
//! | 1  | 1  | 1  | 40    | 80   |
//!
//! Within a history the outcomes are the mean plus `+d, −d` pairs with
//! `d = 1, 2, 3, 4, 5, 1, …`, so every cell average is exact.
//!
//! By hand: the last-period point effects are `20, 20, 20, −20` for
//! `(z1, x1) = (0,0), (0,1), (1,0), (1,1)`; `μ(z1=1) = 80`, `μ(z1=0) = 62.5`,
//! `pr(z2=1 | z1=1) = 0.75`, `pr(z2=1 | z1=0) = 0.375`; the first-period net
//! effect is `17.5 + 5 + 7.5 = 30`; the grand mean is `71.25`.

use crate::dataset::{Dataset, ObservationRecord};

/// `(z1, x1, z2, units, mean)` of each history.
pub const D0_CELLS: [(u32, u32, u32, usize, f64); 8] = [
    (0, 0, 0, 30, 50.0),
    (0, 0, 1, 10, 70.0),
    (0, 1, 0, 20, 60.0),
    (0, 1, 1, 20, 80.0),
    (1, 0, 0, 10, 60.0),
    (1, 0, 1, 20, 80.0),
    (1, 1, 0, 10, 100.0),
    (1, 1, 1, 40, 80.0),
];

pub const D0_GRAND_MEAN: f64 = 71.25;

pub fn make_fixture_d0() -> Dataset {
    let mut records = Vec::with_capacity(160);
    for &(z1, x1, z2, units, mean) in &D0_CELLS {
        for j in 0..units {
            let d = ((j / 2) % 5 + 1) as f64;
            let y = if j % 2 == 0 { mean + d } else { mean - d };
            records.push(ObservationRecord {
                unit_id: format!("d0-{:03}", records.len() + 1),
                treatments: vec![z1, z2],
                covariates: vec![vec![x1]],
                outcome: y,
            });
        }
    }
    Dataset::from_records(records, 2, 1).expect("fixture is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::key::StratumKey;
    use crate::stats::stratum_mean;

    #[test]
    fn structure_and_means() {
        let d = make_fixture_d0();
        assert_eq!(d.len(), 160);
        let table = d.table();
        assert_eq!(table.leaves().len(), 8);
        let root = table.node(table.root().unwrap());
        assert!((root.mean - D0_GRAND_MEAN).abs() < 1e-12);
        let z1 = StratumKey::new(vec![1], vec![]).unwrap();
        assert!((stratum_mean(&d, &z1).unwrap().mean - 80.0).abs() < 1e-12);
        let z0 = StratumKey::new(vec![0], vec![]).unwrap();
        assert!((stratum_mean(&d, &z0).unwrap().mean - 62.5).abs() < 1e-12);
    }
}
