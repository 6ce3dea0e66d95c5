//! Ideal responses and item response probabilities for the conjunctive
//! (DINA), disjunctive (DINO), and general (GDINA) models, plus the
//! centroid constraint map used by the GNPC estimator.

use crate::error::{CdmError, Result};
use crate::pattern::{
    equivalence_classes, sub_pattern_index, AttributePattern, ModelKind, QMatrix,
};

/// Which deterministic gate defines the ideal response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdealKind {
    Dina,
    Dino,
}

/// Conjunctive ideal response: 1 iff the pattern masters every required
/// attribute.
pub fn ideal_dina(q_row: &[u8], alpha: &AttributePattern) -> Result<u8> {
    Ok(u8::from(alpha.dominates(q_row)?))
}

/// Disjunctive ideal response: 1 iff the pattern masters at least one
/// required attribute.
pub fn ideal_dino(q_row: &[u8], alpha: &AttributePattern) -> Result<u8> {
    Ok(u8::from(!alpha.disjoint(q_row)?))
}

pub fn ideal_response(kind: IdealKind, q_row: &[u8], alpha: &AttributePattern) -> Result<u8> {
    match kind {
        IdealKind::Dina => ideal_dina(q_row, alpha),
        IdealKind::Dino => ideal_dino(q_row, alpha),
    }
}

/// Full `2^K x J` table of ideal responses, pattern-major.
pub fn ideal_table(q: &QMatrix, kind: IdealKind) -> Vec<f64> {
    let k = q.k();
    let m_total = 1usize << k;
    let mut table = Vec::with_capacity(m_total * q.n_items());
    for m in 0..m_total {
        let alpha = AttributePattern::from_index(m, k)
            .expect("index enumerated within range");
        for row in q.rows() {
            let eta = ideal_response(kind, row, &alpha)
                .expect("Q-matrix rows match pattern length");
            table.push(f64::from(eta));
        }
    }
    table
}

/// Per-item slipping and guessing probabilities for two-level gate models.
#[derive(Debug, Clone, PartialEq)]
pub struct DinaItemParams {
    slip: Vec<f64>,
    guess: Vec<f64>,
}

impl DinaItemParams {
    pub fn new(slip: Vec<f64>, guess: Vec<f64>) -> Result<Self> {
        if slip.len() != guess.len() {
            return Err(CdmError::DimensionMismatch(format!(
                "{} slipping vs {} guessing parameters",
                slip.len(),
                guess.len()
            )));
        }
        for (j, (&s, &g)) in slip.iter().zip(&guess).enumerate() {
            if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&g) {
                return Err(CdmError::InvalidParameter(format!(
                    "item {j}: slipping/guessing must lie in [0,1], got s={s}, g={g}"
                )));
            }
        }
        Ok(Self { slip, guess })
    }

    /// Same `s`, `g` for every item.
    pub fn uniform(n_items: usize, s: f64, g: f64) -> Result<Self> {
        Self::new(vec![s; n_items], vec![g; n_items])
    }

    pub fn n_items(&self) -> usize {
        self.slip.len()
    }

    pub fn slip(&self, j: usize) -> f64 {
        self.slip[j]
    }

    pub fn guess(&self, j: usize) -> f64 {
        self.guess[j]
    }

    /// Positive-response probability given the ideal response:
    /// `1 - s_j` when capable, `g_j` otherwise.
    pub fn theta(&self, j: usize, eta: u8) -> f64 {
        if eta == 1 {
            1.0 - self.slip[j]
        } else {
            self.guess[j]
        }
    }
}

/// General-model parameters for one item, stored as positive-response
/// probabilities per sub-pattern of the required attributes.
///
/// Interaction coefficients for the identity link are recovered on demand
/// via [`GdinaItemParams::beta`] (subset inclusion-exclusion); the implied
/// probability for a full pattern is the table entry of its sub-pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct GdinaItemParams {
    attrs: Vec<usize>,
    probs: Vec<f64>,
}

impl GdinaItemParams {
    /// `attrs`: sorted attribute indices the item requires; `probs[s]` is
    /// the positive probability for sub-pattern index `s` (lowest required
    /// attribute = least-significant bit).
    pub fn from_probs(attrs: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if attrs.is_empty() {
            return Err(CdmError::InvalidParameter(
                "item must require at least one attribute".into(),
            ));
        }
        if attrs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CdmError::InvalidParameter(
                "required attribute indices must be strictly increasing".into(),
            ));
        }
        if probs.len() != 1 << attrs.len() {
            return Err(CdmError::DimensionMismatch(format!(
                "expected {} probabilities for {} required attributes, got {}",
                1 << attrs.len(),
                attrs.len(),
                probs.len()
            )));
        }
        if let Some(&bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CdmError::InvalidParameter(format!(
                "implied probability {bad} outside [0,1]"
            )));
        }
        Ok(Self { attrs, probs })
    }

    /// Build from interaction coefficients indexed by subset (empty set at
    /// index 0). Fails if any implied probability leaves `[0,1]`.
    pub fn from_beta(attrs: Vec<usize>, beta: Vec<f64>) -> Result<Self> {
        let n_sub = beta.len();
        if attrs.is_empty() || n_sub != 1 << attrs.len() {
            return Err(CdmError::DimensionMismatch(format!(
                "expected {} coefficients for {} required attributes, got {n_sub}",
                1usize << attrs.len(),
                attrs.len()
            )));
        }
        // prob(sub) = sum of beta over subsets of sub
        let probs: Vec<f64> = (0..n_sub)
            .map(|sub| {
                (0..n_sub)
                    .filter(|&s| s & sub == s)
                    .map(|s| beta[s])
                    .sum()
            })
            .collect();
        Self::from_probs(attrs, probs)
    }

    pub fn attrs(&self) -> &[usize] {
        &self.attrs
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Interaction coefficients by subset index: alternating subset sums of
    /// the probability table, so that the subset sums of the result give
    /// the table back.
    pub fn beta(&self) -> Vec<f64> {
        let n_sub = self.probs.len();
        (0..n_sub)
            .map(|sub| {
                (0..n_sub)
                    .filter(|&t| t & sub == t)
                    .map(|t| {
                        let sign = if (sub ^ t).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                        sign * self.probs[t]
                    })
                    .sum()
            })
            .collect()
    }

    /// Positive-response probability for a full attribute pattern.
    pub fn theta(&self, alpha: &AttributePattern) -> Result<f64> {
        if let Some(&max_attr) = self.attrs.last() {
            if max_attr >= alpha.k() {
                return Err(CdmError::DimensionMismatch(format!(
                    "item requires attribute {} but pattern has K={}",
                    max_attr + 1,
                    alpha.k()
                )));
            }
        }
        let mut sub = 0usize;
        for (bit, &attr) in self.attrs.iter().enumerate() {
            sub |= (alpha.bit(attr) as usize) << bit;
        }
        Ok(self.probs[sub])
    }
}

/// Per-cell centroid constraint: pinned to a value, or free within an
/// equality group of patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellTag {
    Fixed(u8),
    Free(usize),
}

/// Constraint map for a `2^K x J` centroid table: a tag per cell plus, per
/// item, the list of pattern groups behind the free tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentroidConstraints {
    k: usize,
    n_items: usize,
    tags: Vec<CellTag>,
    item_groups: Vec<Vec<Vec<usize>>>,
}

impl CentroidConstraints {
    /// GNPC map: cells where the conjunctive and disjunctive ideals agree
    /// are pinned to that common value; the rest are free, one singleton
    /// group per pattern.
    pub fn gnpc(q: &QMatrix) -> Self {
        let k = q.k();
        let m_total = 1usize << k;
        let n_items = q.n_items();
        let mut tags = vec![CellTag::Fixed(0); m_total * n_items];
        let mut item_groups = vec![Vec::new(); n_items];
        for (j, groups) in item_groups.iter_mut().enumerate() {
            let row = q.row(j);
            for m in 0..m_total {
                let alpha = AttributePattern::from_index(m, k).expect("in range");
                let tag = if alpha.dominates(row).expect("lengths match") {
                    CellTag::Fixed(1)
                } else if alpha.disjoint(row).expect("lengths match") {
                    CellTag::Fixed(0)
                } else {
                    groups.push(vec![m]);
                    CellTag::Free(groups.len() - 1)
                };
                tags[m * n_items + j] = tag;
            }
        }
        Self { k, n_items, tags, item_groups }
    }

    /// All cells free, grouped by the model's per-item equivalence classes.
    pub fn constrained(q: &QMatrix, model: ModelKind) -> Self {
        let k = q.k();
        let m_total = 1usize << k;
        let n_items = q.n_items();
        let eq = equivalence_classes(q, model);
        let mut tags = vec![CellTag::Fixed(0); m_total * n_items];
        let mut item_groups = Vec::with_capacity(n_items);
        for j in 0..n_items {
            let part = eq.item(j);
            for m in 0..m_total {
                tags[m * n_items + j] = CellTag::Free(part.group_of(m));
            }
            item_groups.push(part.groups().to_vec());
        }
        Self { k, n_items, tags, item_groups }
    }

    /// Every cell pinned to the ideal response of the given gate.
    pub fn fixed_ideal(q: &QMatrix, kind: IdealKind) -> Self {
        let k = q.k();
        let m_total = 1usize << k;
        let n_items = q.n_items();
        let mut tags = vec![CellTag::Fixed(0); m_total * n_items];
        for m in 0..m_total {
            let alpha = AttributePattern::from_index(m, k).expect("in range");
            for (j, row) in q.rows().enumerate() {
                let eta = ideal_response(kind, row, &alpha).expect("lengths match");
                tags[m * n_items + j] = CellTag::Fixed(eta);
            }
        }
        Self { k, n_items, tags, item_groups: vec![Vec::new(); n_items] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_patterns(&self) -> usize {
        1 << self.k
    }

    pub fn tag(&self, m: usize, j: usize) -> CellTag {
        self.tags[m * self.n_items + j]
    }

    /// Free-cell groups of item `j`: `groups(j)[g]` lists the pattern
    /// indices pooled into group `g`.
    pub fn groups(&self, j: usize) -> &[Vec<usize>] {
        &self.item_groups[j]
    }
}

/// GNPC centroid constraint map (see [`CentroidConstraints::gnpc`]).
pub fn gnpc_constraints(q: &QMatrix) -> CentroidConstraints {
    CentroidConstraints::gnpc(q)
}

/// Convex combination of the two gate ideals; the closed-form weight
/// solution makes the fitted value the class mean, so estimation updates
/// free cells directly and this is exposed for completeness.
pub fn gnpc_weighted_ideal(w: f64, eta_dina: u8, eta_dino: u8) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(CdmError::InvalidParameter(format!(
            "weight must lie in [0,1], got {w}"
        )));
    }
    Ok(w * f64::from(eta_dina) + (1.0 - w) * f64::from(eta_dino))
}
