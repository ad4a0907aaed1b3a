//! Prefix trie over interleaved histories `z_1, x_1, z_2, ..., z_T`.
//!
//! Every node is a stratum; its children are the observed values of the next
//! symbol. Node statistics (total weight, weighted mean, pooled sum of squared
//! deviations) are aggregated from the cells underneath, and the cells are kept
//! sorted by path so that each node owns a contiguous range of them.
//!
//! The same structure serves empirical data (one cell per record, weight 1)
//! and exact tables (one cell per history, weight = probability). Covariate
//! vectors are interned per period with the zero vector always at code 0, so
//! "reference level" is code 0 at every position of a path.

use std::collections::BTreeSet;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::key::StratumKey;

pub type NodeId = usize;

/// Per-period interning of covariate vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateCodes {
    width: usize,
    levels: Vec<Vec<Vec<u32>>>,
}

impl CovariateCodes {
    pub fn new(width: usize, observed: &[BTreeSet<Vec<u32>>]) -> Self {
        let zero = vec![0u32; width];
        let levels = observed
            .iter()
            .map(|set| {
                let mut v = vec![zero.clone()];
                v.extend(set.iter().filter(|x| **x != zero).cloned());
                v
            })
            .collect();
        Self { width, levels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Code of covariate vector `x` at period `t` (1-based).
    pub fn encode(&self, t: usize, x: &[u32]) -> Option<u32> {
        self.levels
            .get(t.checked_sub(1)?)?
            .iter()
            .position(|l| l.as_slice() == x)
            .map(|i| i as u32)
    }

    pub fn decode(&self, t: usize, code: u32) -> &[u32] {
        &self.levels[t - 1][code as usize]
    }

    /// Interleaved symbol path for a key; `None` when some covariate vector was
    /// never seen (the stratum is empty).
    pub fn path_of(&self, key: &StratumKey) -> Option<Vec<u32>> {
        let mut path = Vec::with_capacity(key.len());
        for i in 0..key.len() {
            if i % 2 == 0 {
                path.push(key.treatments[i / 2]);
            } else {
                path.push(self.encode(i / 2 + 1, &key.covariates[i / 2])?);
            }
        }
        Some(path)
    }

    pub fn key_of(&self, path: &[u32]) -> StratumKey {
        let mut key = StratumKey::root();
        for (i, &s) in path.iter().enumerate() {
            if i % 2 == 0 {
                key.treatments.push(s);
            } else {
                key.covariates.push(self.decode(i / 2 + 1, s).to_vec());
            }
        }
        key
    }
}

/// Whether weights are counts of observed records or exact probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Empirical,
    Exact,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub path: Vec<u32>,
    pub weight: f64,
    pub mean: f64,
    pub ssd: f64,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub path: Vec<u32>,
    pub parent: Option<NodeId>,
    /// `(symbol, child)` sorted by symbol.
    pub children: Vec<(u32, NodeId)>,
    pub weight: f64,
    pub mean: f64,
    /// Pooled sum of squared deviations of the outcome around `mean`.
    pub ssd: f64,
    pub cells: Range<usize>,
}

impl Node {
    pub fn depth(&self) -> usize {
        self.path.len()
    }

    pub fn symbol(&self) -> Option<u32> {
        self.path.last().copied()
    }

    pub fn child(&self, symbol: u32) -> Option<NodeId> {
        self.children
            .binary_search_by_key(&symbol, |(s, _)| *s)
            .ok()
            .map(|i| self.children[i].1)
    }

    /// Time index `t` of the last symbol (0 for the root).
    pub fn time(&self) -> usize {
        self.path.len().div_ceil(2)
    }

    /// Path ends on a treatment `z_t`.
    pub fn is_treatment(&self) -> bool {
        self.path.len() % 2 == 1
    }
}

/// Stratified table of outcome statistics indexed by history prefix.
#[derive(Debug, Clone)]
pub struct StratumTable {
    horizon: usize,
    codes: CovariateCodes,
    kind: TableKind,
    nodes: Vec<Node>,
    by_depth: Vec<Vec<NodeId>>,
    cells: Vec<Cell>,
    origin: Vec<usize>,
}

impl StratumTable {
    /// Builds the trie from unsorted cells. `cells[i]` keeps its original index
    /// `i` reachable through [`StratumTable::cell_origin`].
    pub fn build(
        horizon: usize,
        codes: CovariateCodes,
        kind: TableKind,
        cells: Vec<Cell>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::usage("horizon must be at least 1"));
        }
        let full = 2 * horizon - 1;
        let mut order: Vec<usize> = (0..cells.len()).collect();
        for c in &cells {
            if c.path.len() != full {
                return Err(Error::usage(format!(
                    "history of length {} does not match horizon {}",
                    c.path.len(),
                    horizon
                )));
            }
        }
        order.sort_by(|&a, &b| cells[a].path.cmp(&cells[b].path));
        let mut slots: Vec<Option<Cell>> = cells.into_iter().map(Some).collect();
        let sorted: Vec<Cell> = order.iter().map(|&i| slots[i].take().unwrap()).collect();

        let mut table = StratumTable {
            horizon,
            codes,
            kind,
            nodes: Vec::new(),
            by_depth: vec![Vec::new(); full + 1],
            cells: sorted,
            origin: order,
        };
        if !table.cells.is_empty() {
            table.grow(None, Vec::new(), 0..table.cells.len());
        }
        Ok(table)
    }

    fn grow(&mut self, parent: Option<NodeId>, path: Vec<u32>, range: Range<usize>) -> NodeId {
        let depth = path.len();
        let (weight, mean, ssd) = pool(&self.cells[range.clone()]);
        let id = self.nodes.len();
        self.nodes.push(Node {
            path: path.clone(),
            parent,
            children: Vec::new(),
            weight,
            mean,
            ssd,
            cells: range.clone(),
        });
        self.by_depth[depth].push(id);
        if depth < 2 * self.horizon - 1 {
            let mut start = range.start;
            let mut children = Vec::new();
            while start < range.end {
                let sym = self.cells[start].path[depth];
                let mut end = start + 1;
                while end < range.end && self.cells[end].path[depth] == sym {
                    end += 1;
                }
                let mut child_path = path.clone();
                child_path.push(sym);
                let child = self.grow(Some(id), child_path, start..end);
                children.push((sym, child));
                start = end;
            }
            self.nodes[id].children = children;
        }
        id
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn codes(&self) -> &CovariateCodes {
        &self.codes
    }

    pub fn root(&self) -> Option<NodeId> {
        (!self.nodes.is_empty()).then_some(0)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Nodes whose path has exactly `len` symbols.
    pub fn at_depth(&self, len: usize) -> &[NodeId] {
        self.by_depth.get(len).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Nodes ending on treatment `z_t`.
    pub fn treatment_nodes(&self, t: usize) -> &[NodeId] {
        self.at_depth(2 * t - 1)
    }

    pub fn leaves(&self) -> &[NodeId] {
        self.at_depth(2 * self.horizon - 1)
    }

    pub fn find_path(&self, path: &[u32]) -> Option<NodeId> {
        let mut id = self.root()?;
        for &s in path {
            id = self.nodes[id].child(s)?;
        }
        Some(id)
    }

    pub fn find(&self, key: &StratumKey) -> Option<NodeId> {
        if key.len() > 2 * self.horizon - 1 || !key.is_well_formed() {
            return None;
        }
        self.find_path(&self.codes.path_of(key)?)
    }

    pub fn key(&self, id: NodeId) -> StratumKey {
        self.codes.key_of(&self.nodes[id].path)
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Original index of the cell at sorted position `pos`.
    pub fn cell_origin(&self, pos: usize) -> usize {
        self.origin[pos]
    }

    /// `W(child) / W(node)`.
    pub fn proportion(&self, child: NodeId, ancestor: NodeId) -> f64 {
        self.nodes[child].weight / self.nodes[ancestor].weight
    }

    /// Replaces the stored mean of one stratum without touching its children.
    /// Used to plant inconsistencies for the decomposition diagnostic.
    pub fn override_stratum_mean(&mut self, key: &StratumKey, mean: f64) -> Result<()> {
        let id = self
            .find(key)
            .ok_or_else(|| Error::usage(format!("stratum {key} not present")))?;
        self.nodes[id].mean = mean;
        Ok(())
    }

    /// Replaces every leaf mean (indexed like [`StratumTable::leaves`]) and
    /// re-aggregates the interior; weights are kept.
    pub fn with_leaf_means(&self, means: &[f64]) -> Result<Self> {
        let leaves = self.leaves();
        if means.len() != leaves.len() {
            return Err(Error::usage("one mean per leaf required"));
        }
        let cells = leaves
            .iter()
            .zip(means)
            .map(|(&id, &m)| {
                let n = &self.nodes[id];
                Cell {
                    path: n.path.clone(),
                    weight: n.weight,
                    mean: m,
                    ssd: n.ssd,
                }
            })
            .collect();
        StratumTable::build(self.horizon, self.codes.clone(), self.kind, cells)
    }

    /// Exact table from `(full history, weight, mean)` triples. Zero-weight
    /// histories are dropped.
    pub fn exact<I>(horizon: usize, width: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (StratumKey, f64, f64)>,
    {
        let entries: Vec<_> = entries.into_iter().filter(|e| e.1 > 0.0).collect();
        let mut observed = vec![BTreeSet::new(); horizon.saturating_sub(1)];
        for (k, w, m) in &entries {
            if k.depth() != horizon || k.covariates.len() + 1 != horizon {
                return Err(Error::usage(format!("{k} is not a full history")));
            }
            if k.covariates.iter().any(|x| x.len() != width) {
                return Err(Error::usage(format!("{k} has covariates of wrong width")));
            }
            if !w.is_finite() || !m.is_finite() {
                return Err(Error::usage(format!("{k} has a non-finite weight or mean")));
            }
            for (t, x) in k.covariates.iter().enumerate() {
                observed[t].insert(x.clone());
            }
        }
        let codes = CovariateCodes::new(width, &observed);
        let cells = entries
            .iter()
            .map(|(k, w, m)| Cell {
                path: codes.path_of(k).expect("interned above"),
                weight: *w,
                mean: *m,
                ssd: 0.0,
            })
            .collect();
        StratumTable::build(horizon, codes, TableKind::Exact, cells)
    }
}

fn pool(cells: &[Cell]) -> (f64, f64, f64) {
    // running update keeps a constant mean exact
    let (mut weight, mut mean, mut ssd) = (0.0, 0.0, 0.0);
    for c in cells {
        if c.weight == 0.0 {
            continue;
        }
        let total = weight + c.weight;
        let delta = c.mean - mean;
        mean += delta * (c.weight / total);
        ssd += c.ssd + delta * delta * weight * c.weight / total;
        weight = total;
    }
    (weight, mean, ssd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(z: &[u32], x: &[u32]) -> StratumKey {
        StratumKey::new(z.to_vec(), x.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    fn small() -> StratumTable {
        StratumTable::exact(
            2,
            1,
            vec![
                (key(&[0, 0], &[0]), 0.1, 1.0),
                (key(&[0, 1], &[0]), 0.2, 2.0),
                (key(&[1, 1], &[1]), 0.3, 3.0),
                (key(&[1, 0], &[0]), 0.4, 4.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn aggregates_weights_and_means() {
        let t = small();
        let root = t.node(0);
        assert!((root.weight - 1.0).abs() < 1e-15);
        assert!((root.mean - (0.1 + 0.4 + 0.9 + 1.6)).abs() < 1e-12);
        let z1 = t.find(&key(&[1], &[])).unwrap();
        assert!((t.node(z1).weight - 0.7).abs() < 1e-15);
        assert_eq!(t.leaves().len(), 4);
        assert_eq!(t.treatment_nodes(1).len(), 2);
    }

    #[test]
    fn absent_strata_are_not_materialized() {
        let t = small();
        assert!(t.find(&key(&[0, 0], &[1])).is_none());
        assert!(t.find(&key(&[2], &[])).is_none());
        // root + 2 (z1) + 3 (x1) + 4 leaves
        assert_eq!(t.nodes().len(), 10);
    }

    #[test]
    fn key_roundtrip() {
        let t = small();
        for id in 0..t.nodes().len() {
            assert_eq!(t.find(&t.key(id)), Some(id));
        }
    }

    #[test]
    fn zero_vector_has_code_zero_even_if_absent() {
        let mut seen = BTreeSet::new();
        seen.insert(vec![1, 2]);
        let codes = CovariateCodes::new(2, &[seen]);
        assert_eq!(codes.encode(1, &[0, 0]), Some(0));
        assert_eq!(codes.encode(1, &[1, 2]), Some(1));
        assert_eq!(codes.encode(1, &[2, 2]), None);
    }
}
