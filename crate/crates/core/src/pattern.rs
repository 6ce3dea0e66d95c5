//! Attribute patterns, Q-matrices, response matrices, assignments, and the
//! per-item equivalence-class partitions that drive constrained centroid
//! updates.
//!
//! Encoding convention: a pattern `(a_1, ..., a_K)` maps to the index
//! `sum_k a_k * 2^(k-1)`, i.e. attribute 1 is the least-significant bit.
//! All types here are immutable after construction.

use crate::error::{CdmError, Result};

/// Hard cap on the number of attributes; tables of size `2^K` must stay
/// enumerable.
pub const MAX_K: usize = 15;

fn check_k(k: usize) -> Result<()> {
    if k == 0 || k > MAX_K {
        return Err(CdmError::InvalidValue(format!(
            "number of attributes must be in 1..={MAX_K}, got {k}"
        )));
    }
    Ok(())
}

fn check_binary(v: &[u8], what: &str) -> Result<()> {
    if let Some(bad) = v.iter().find(|&&b| b > 1) {
        return Err(CdmError::InvalidValue(format!(
            "{what} entries must be 0 or 1, got {bad}"
        )));
    }
    Ok(())
}

/// A mastery profile: binary vector of length `K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributePattern {
    bits: Vec<u8>,
}

impl AttributePattern {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        check_k(bits.len())?;
        check_binary(&bits, "attribute pattern")?;
        Ok(Self { bits })
    }

    /// The all-zero pattern (no attributes mastered).
    pub fn zero(k: usize) -> Result<Self> {
        check_k(k)?;
        Ok(Self { bits: vec![0; k] })
    }

    /// The all-one pattern (full mastery).
    pub fn ones(k: usize) -> Result<Self> {
        check_k(k)?;
        Ok(Self { bits: vec![1; k] })
    }

    /// Inverse of [`AttributePattern::to_index`].
    pub fn from_index(index: usize, k: usize) -> Result<Self> {
        check_k(k)?;
        if index >= (1usize << k) {
            return Err(CdmError::InvalidValue(format!(
                "pattern index {index} out of range for K={k}"
            )));
        }
        let bits = (0..k).map(|b| ((index >> b) & 1) as u8).collect();
        Ok(Self { bits })
    }

    /// Pattern index with attribute 1 as the least-significant bit.
    pub fn to_index(&self) -> usize {
        self.bits
            .iter()
            .enumerate()
            .map(|(b, &a)| (a as usize) << b)
            .sum()
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn bit(&self, i: usize) -> u8 {
        self.bits[i]
    }

    /// True iff `a_k >= q_k` for every attribute: the pattern masters all
    /// attributes the row requires.
    pub fn dominates(&self, q_row: &[u8]) -> Result<bool> {
        if q_row.len() != self.bits.len() {
            return Err(CdmError::DimensionMismatch(format!(
                "pattern has K={} but row has length {}",
                self.bits.len(),
                q_row.len()
            )));
        }
        Ok(self.bits.iter().zip(q_row).all(|(&a, &q)| a >= q))
    }

    /// True iff the elementwise product with the row is zero: the pattern
    /// masters none of the required attributes.
    pub fn disjoint(&self, q_row: &[u8]) -> Result<bool> {
        if q_row.len() != self.bits.len() {
            return Err(CdmError::DimensionMismatch(format!(
                "pattern has K={} but row has length {}",
                self.bits.len(),
                q_row.len()
            )));
        }
        Ok(self.bits.iter().zip(q_row).all(|(&a, &q)| a * q == 0))
    }

    /// Human-readable bit-string with attribute 1 leftmost.
    pub fn bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }
}

/// All `2^K` patterns in index order.
pub fn all_patterns(k: usize) -> Result<Vec<AttributePattern>> {
    check_k(k)?;
    (0..(1usize << k))
        .map(|m| AttributePattern::from_index(m, k))
        .collect()
}

/// J x K binary structure matrix; row `j` lists the attributes item `j`
/// requires. Rows of all zeros are rejected: such items carry no attribute
/// information and break the equivalence-class partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QMatrix {
    entries: Vec<u8>,
    n_items: usize,
    k: usize,
}

impl QMatrix {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(CdmError::InvalidValue("Q-matrix has no rows".into()));
        }
        let k = rows[0].len();
        check_k(k)?;
        let mut entries = Vec::with_capacity(rows.len() * k);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(CdmError::DimensionMismatch(format!(
                    "Q-matrix row {j} has length {} but expected {k}",
                    row.len()
                )));
            }
            check_binary(row, "Q-matrix")?;
            if row.iter().all(|&q| q == 0) {
                return Err(CdmError::InvalidValue(format!(
                    "Q-matrix row {j} is all zeros"
                )));
            }
            entries.extend_from_slice(row);
        }
        Ok(Self { entries, n_items: rows.len(), k })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, j: usize) -> &[u8] {
        &self.entries[j * self.k..(j + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.chunks(self.k)
    }

    /// Sorted indices of the attributes required by item `j`.
    pub fn required_attrs(&self, j: usize) -> Vec<usize> {
        self.row(j)
            .iter()
            .enumerate()
            .filter(|(_, &q)| q == 1)
            .map(|(k, _)| k)
            .collect()
    }
}

/// N x J binary observed responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    entries: Vec<u8>,
    n_subjects: usize,
    n_items: usize,
}

impl ResponseMatrix {
    pub fn new(n_subjects: usize, n_items: usize, entries: Vec<u8>) -> Result<Self> {
        if entries.len() != n_subjects * n_items {
            return Err(CdmError::DimensionMismatch(format!(
                "expected {} entries for {n_subjects}x{n_items}, got {}",
                n_subjects * n_items,
                entries.len()
            )));
        }
        check_binary(&entries, "response matrix")?;
        Ok(Self { entries, n_subjects, n_items })
    }

    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(CdmError::InvalidValue("response matrix has no rows".into()));
        }
        let n_items = rows[0].len();
        let mut entries = Vec::with_capacity(rows.len() * n_items);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_items {
                return Err(CdmError::DimensionMismatch(format!(
                    "response row {i} has length {} but expected {n_items}",
                    row.len()
                )));
            }
            entries.extend_from_slice(row);
        }
        Self::new(rows.len(), n_items, entries)
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.entries[i * self.n_items..(i + 1) * self.n_items]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.chunks(self.n_items.max(1))
    }
}

/// Length-N vector of pattern indices: the class membership matrix in
/// index form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternAssignment {
    indices: Vec<usize>,
    k: usize,
}

impl PatternAssignment {
    pub fn new(indices: Vec<usize>, k: usize) -> Result<Self> {
        check_k(k)?;
        let m = 1usize << k;
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(CdmError::InvalidValue(format!(
                "assignment index {bad} out of range for K={k}"
            )));
        }
        Ok(Self { indices, k })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn index(&self, i: usize) -> usize {
        self.indices[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn pattern(&self, i: usize) -> AttributePattern {
        AttributePattern::from_index(self.indices[i], self.k)
            .expect("assignment indices are validated at construction")
    }
}

/// Which family of equality constraints ties centroid cells together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Two levels per item: patterns dominating the row versus the rest.
    Dina,
    /// One level per value of the sub-vector on the item's required
    /// attributes.
    Gdina,
}

/// Partition of the `2^K` pattern indices for one item; members of a group
/// share one centroid value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPartition {
    group_of: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl ItemPartition {
    fn from_keys(keys: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut group_of = Vec::with_capacity(keys.len());
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (m, &key) in keys.iter().enumerate() {
            let g = *map.entry(key).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(m);
            group_of.push(g);
        }
        Self { group_of, groups }
    }

    /// Group id of a pattern index; ids are assigned in first-occurrence
    /// order scanning pattern indices upward.
    pub fn group_of(&self, m: usize) -> usize {
        self.group_of[m]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

/// Per-item partitions of the pattern space under a model's constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceClasses {
    items: Vec<ItemPartition>,
    k: usize,
}

impl EquivalenceClasses {
    pub fn item(&self, j: usize) -> &ItemPartition {
        &self.items[j]
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Partition the pattern space per item.
///
/// Two-level models give `{patterns dominating q_j, complement}`; the
/// general model keys groups by the sub-vector on the item's required
/// attributes, giving `2^|K_j|` groups.
pub fn equivalence_classes(q: &QMatrix, model: ModelKind) -> EquivalenceClasses {
    let k = q.k();
    let m_total = 1usize << k;
    let items = (0..q.n_items())
        .map(|j| {
            let row = q.row(j);
            let keys: Vec<usize> = (0..m_total)
                .map(|m| match model {
                    ModelKind::Dina => {
                        let dom = (0..k).all(|b| ((m >> b) & 1) as u8 >= row[b]);
                        usize::from(dom)
                    }
                    ModelKind::Gdina => sub_pattern_index(m, row),
                })
                .collect();
            ItemPartition::from_keys(&keys)
        })
        .collect();
    EquivalenceClasses { items, k }
}

/// Pack the bits of pattern index `m` at the positions where `q_row` is 1,
/// lowest attribute first.
pub(crate) fn sub_pattern_index(m: usize, q_row: &[u8]) -> usize {
    let mut sub = 0usize;
    let mut bit = 0usize;
    for (b, &qb) in q_row.iter().enumerate() {
        if qb == 1 {
            sub |= ((m >> b) & 1) << bit;
            bit += 1;
        }
    }
    sub
}

/// Occupancy counts of the `2^K` classes; sums to N.
pub fn class_counts(a: &PatternAssignment) -> Vec<usize> {
    let mut counts = vec![0usize; 1 << a.k()];
    for &m in a.as_slice() {
        counts[m] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_encoding_convention() {
        // attribute 1 is the least-significant bit
        assert_eq!(AttributePattern::new(vec![0, 0, 0]).unwrap().to_index(), 0);
        assert_eq!(AttributePattern::new(vec![1, 0, 0]).unwrap().to_index(), 1);
        assert_eq!(AttributePattern::new(vec![0, 1, 0]).unwrap().to_index(), 2);
        assert_eq!(AttributePattern::new(vec![1, 1, 1]).unwrap().to_index(), 7);
    }

    #[test]
    fn round_trip_all_k5_patterns() {
        for m in 0..32 {
            let p = AttributePattern::from_index(m, 5).unwrap();
            assert_eq!(p.to_index(), m);
        }
    }

    #[test]
    fn from_index_rejects_out_of_range() {
        assert!(AttributePattern::from_index(8, 3).is_err());
        assert!(AttributePattern::from_index(0, 0).is_err());
        assert!(AttributePattern::from_index(0, MAX_K + 1).is_err());
    }

    #[test]
    fn dominates_cases() {
        let q = [1u8, 1, 0];
        let full = AttributePattern::new(vec![1, 1, 1]).unwrap();
        assert!(full.dominates(&q).unwrap());
        let a = AttributePattern::new(vec![0, 0, 1]).unwrap();
        assert!(!a.dominates(&q).unwrap());
        let same = AttributePattern::new(vec![1, 1, 0]).unwrap();
        assert!(same.dominates(&q).unwrap());
        assert!(full.dominates(&[1, 1]).is_err());
    }

    #[test]
    fn disjoint_cases() {
        let q = [1u8, 1, 0];
        let a = AttributePattern::new(vec![0, 0, 1]).unwrap();
        assert!(a.disjoint(&q).unwrap());
        let b = AttributePattern::new(vec![1, 0, 0]).unwrap();
        assert!(!b.disjoint(&q).unwrap());
        let zero = AttributePattern::zero(3).unwrap();
        assert!(zero.disjoint(&q).unwrap());
        assert!(zero.disjoint(&[1, 0, 1]).unwrap());
    }

    #[test]
    fn qmatrix_rejects_zero_row() {
        let err = QMatrix::new(vec![vec![1, 0], vec![0, 0]]);
        assert!(err.is_err());
    }

    #[test]
    fn qmatrix_rejects_ragged_and_nonbinary() {
        assert!(QMatrix::new(vec![vec![1, 0], vec![1]]).is_err());
        assert!(QMatrix::new(vec![vec![1, 2]]).is_err());
    }

    #[test]
    fn dina_partition_matches_worked_example() {
        // K=2, q = (1,0): {{(0,0),(0,1)}, {(1,0),(1,1)}}
        let q = QMatrix::new(vec![vec![1, 0]]).unwrap();
        let eq = equivalence_classes(&q, ModelKind::Dina);
        let part = eq.item(0);
        assert_eq!(part.n_groups(), 2);
        // indices: (0,0)=0, (1,0)=1, (0,1)=2, (1,1)=3
        assert_eq!(part.groups()[0], vec![0, 2]);
        assert_eq!(part.groups()[1], vec![1, 3]);
    }

    #[test]
    fn dina_partition_all_ones_row() {
        let k = 3;
        let q = QMatrix::new(vec![vec![1; k]]).unwrap();
        let eq = equivalence_classes(&q, ModelKind::Dina);
        let part = eq.item(0);
        assert_eq!(part.n_groups(), 2);
        assert_eq!(part.groups()[1], vec![7]);
        assert_eq!(part.groups()[0].len(), 7);
    }

    #[test]
    fn gdina_partition_groups_by_subvector() {
        // K=3, q=(1,1,0): 4 groups of size 2 keyed by (a1, a2).
        // Derived by enumerating all 8 patterns and grouping on the
        // restriction to the required attributes.
        let q = QMatrix::new(vec![vec![1, 1, 0]]).unwrap();
        let eq = equivalence_classes(&q, ModelKind::Gdina);
        let part = eq.item(0);
        assert_eq!(part.n_groups(), 4);
        for g in part.groups() {
            assert_eq!(g.len(), 2);
        }
        for m in 0..8usize {
            for m2 in 0..8usize {
                let same_sub = (m & 0b11) == (m2 & 0b11);
                assert_eq!(part.group_of(m) == part.group_of(m2), same_sub);
            }
        }
    }

    #[test]
    fn dina_group_membership_depends_only_on_domination() {
        let q = QMatrix::new(vec![vec![0, 1, 1], vec![1, 0, 0]]).unwrap();
        let eq = equivalence_classes(&q, ModelKind::Dina);
        for j in 0..2 {
            let part = eq.item(j);
            for m in 0..8usize {
                let p = AttributePattern::from_index(m, 3).unwrap();
                let dom = p.dominates(q.row(j)).unwrap();
                assert_eq!(part.group_of(m), usize::from(dom));
            }
        }
    }

    #[test]
    fn class_counts_basic() {
        let a = PatternAssignment::new(vec![0, 0, 1, 3], 2).unwrap();
        assert_eq!(class_counts(&a), vec![2, 1, 0, 1]);
        let empty = PatternAssignment::new(vec![], 2).unwrap();
        assert_eq!(class_counts(&empty), vec![0, 0, 0, 0]);
    }

    #[test]
    fn assignment_rejects_out_of_range() {
        assert!(PatternAssignment::new(vec![4], 2).is_err());
    }
}
