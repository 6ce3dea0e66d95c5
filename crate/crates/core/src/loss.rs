//! The unified criterion: element-wise losses, proportion regularizers, and
//! the total loss over an assignment.

use crate::error::{CdmError, Result};
use crate::pattern::{PatternAssignment, ResponseMatrix};

/// Element-wise loss between a binary response and a centroid value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `|x - mu|`
    L1,
    /// `(x - mu)^2`
    L2,
    /// `-(x log mu + (1-x) log(1-mu))` with `mu` clamped away from 0 and 1
    CrossEntropy,
}

/// Regularizer `h` applied to the proportion of the assigned class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProportionPenalty {
    /// `h = 0`
    None,
    /// `h = -log pi`
    NegLog,
    /// `h = -lambda log pi`, `lambda > 0`
    ScaledNegLog(f64),
}

/// Clamp bound applied to centroid values before taking logs; pinned 0/1
/// cells and degenerate class means would otherwise produce infinities.
pub const CE_CLAMP: f64 = 1e-10;

/// Stand-in for `h(0)` under the log penalties: large but finite so that
/// total-loss arithmetic stays comparable.
pub const H_INF_SENTINEL: f64 = 1e18;

/// Nonnegative class proportions summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionVector {
    probs: Vec<f64>,
}

impl ProportionVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CdmError::InvalidValue("empty proportion vector".into()));
        }
        if let Some(&bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CdmError::InvalidValue(format!(
                "proportion {bad} outside [0,1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CdmError::InvalidValue(format!(
                "proportions sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(m: usize) -> Self {
        Self { probs: vec![1.0 / m as f64; m] }
    }

    /// Sample proportions from class counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(CdmError::InvalidValue(
                "cannot form proportions from zero total count".into(),
            ));
        }
        // exact ratios; renormalization would only add noise
        Ok(Self { probs: counts.iter().map(|&c| c as f64 / n as f64).collect() })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, m: usize) -> f64 {
        self.probs[m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Loss between one binary response and one centroid value.
pub fn item_loss(x: u8, mu: f64, kind: LossKind) -> f64 {
    let xf = f64::from(x);
    match kind {
        LossKind::L1 => (xf - mu).abs(),
        LossKind::L2 => (xf - mu) * (xf - mu),
        LossKind::CrossEntropy => {
            let c = mu.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
            if x == 1 {
                -c.ln()
            } else {
                -(1.0 - c).ln()
            }
        }
    }
}

/// Value of the proportion regularizer at `pi`.
pub fn penalty_value(pi: f64, penalty: ProportionPenalty) -> f64 {
    match penalty {
        ProportionPenalty::None => 0.0,
        ProportionPenalty::NegLog => {
            if pi <= 0.0 {
                H_INF_SENTINEL
            } else {
                -pi.ln()
            }
        }
        ProportionPenalty::ScaledNegLog(lambda) => {
            if pi <= 0.0 {
                H_INF_SENTINEL
            } else {
                -lambda * pi.ln()
            }
        }
    }
}

/// Loss of one subject against one class: summed item losses plus the
/// proportion penalty.
pub fn pattern_loss(
    x_row: &[u8],
    mu_row: &[f64],
    pi: f64,
    kind: LossKind,
    penalty: ProportionPenalty,
) -> Result<f64> {
    if x_row.len() != mu_row.len() {
        return Err(CdmError::DimensionMismatch(format!(
            "{} responses vs {} centroid values",
            x_row.len(),
            mu_row.len()
        )));
    }
    let mut total = penalty_value(pi, penalty);
    for (&x, &mu) in x_row.iter().zip(mu_row) {
        total += item_loss(x, mu, kind);
    }
    Ok(total)
}

/// Total loss of an assignment: the sum of each subject's loss against its
/// assigned class. Accumulated sequentially in subject order so equal
/// inputs give bitwise-equal totals.
pub fn total_loss(
    x: &ResponseMatrix,
    a: &PatternAssignment,
    centroids: &[f64],
    pi: &ProportionVector,
    kind: LossKind,
    penalty: ProportionPenalty,
) -> Result<f64> {
    let m_total = 1usize << a.k();
    let n_items = x.n_items();
    if x.n_subjects() != a.len() {
        return Err(CdmError::DimensionMismatch(format!(
            "{} subjects vs {} assignments",
            x.n_subjects(),
            a.len()
        )));
    }
    if centroids.len() != m_total * n_items {
        return Err(CdmError::DimensionMismatch(format!(
            "centroid table has {} cells, expected {m_total}x{n_items}",
            centroids.len()
        )));
    }
    if pi.len() != m_total {
        return Err(CdmError::DimensionMismatch(format!(
            "{} proportions vs {m_total} classes",
            pi.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..x.n_subjects() {
        let m = a.index(i);
        let mu_row = &centroids[m * n_items..(m + 1) * n_items];
        total += pattern_loss(x.row(i), mu_row, pi.get(m), kind, penalty)?;
    }
    Ok(total)
}

/// Expected loss of a Bernoulli response with mean `theta_true` against a
/// centroid value: `theta l(1, mu) + (1 - theta) l(0, mu)`.
pub fn expected_item_loss(theta_true: f64, mu: f64, kind: LossKind) -> f64 {
    theta_true * item_loss(1, mu, kind) + (1.0 - theta_true) * item_loss(0, mu, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::PatternAssignment;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn item_loss_values() {
        assert_eq!(item_loss(1, 0.0, LossKind::L1), 1.0);
        assert!((item_loss(1, 0.3, LossKind::L2) - 0.49).abs() < 1e-12);
        assert!(
            (item_loss(1, 0.5, LossKind::CrossEntropy) - 2.0f64.ln()).abs() < 1e-12
        );
    }

    #[test]
    fn matching_binary_centroid_has_negligible_loss() {
        for kind in [LossKind::L1, LossKind::L2, LossKind::CrossEntropy] {
            assert!(item_loss(1, 1.0, kind) < 1e-6);
            assert!(item_loss(0, 0.0, kind) < 1e-6);
        }
    }

    #[test]
    fn ce_clamps_instead_of_diverging() {
        assert!(item_loss(1, 0.0, LossKind::CrossEntropy).is_finite());
        assert!(item_loss(0, 1.0, LossKind::CrossEntropy).is_finite());
    }

    #[test]
    fn neg_log_penalty_sentinel() {
        assert_eq!(penalty_value(0.0, ProportionPenalty::NegLog), H_INF_SENTINEL);
        assert!((penalty_value(0.25, ProportionPenalty::NegLog) - 0.25f64.ln().abs())
            .abs()
            < 1e-12);
        assert_eq!(penalty_value(1.0, ProportionPenalty::None), 0.0);
        assert!(
            (penalty_value(0.5, ProportionPenalty::ScaledNegLog(2.0))
                - 2.0 * 2.0f64.ln())
            .abs()
                < 1e-12
        );
    }

    #[test]
    fn pattern_loss_hand_example() {
        // J=2, x=(1,0), mu=(0.9,0.1), cross-entropy, pi=0.25
        let got = pattern_loss(
            &[1, 0],
            &[0.9, 0.1],
            0.25,
            LossKind::CrossEntropy,
            ProportionPenalty::NegLog,
        )
        .unwrap();
        let want = -(0.9f64.ln()) - (0.9f64.ln()) - (0.25f64.ln());
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn none_penalty_reduces_to_item_sum() {
        let got = pattern_loss(&[1, 0, 1], &[0.2, 0.4, 0.9], 0.1, LossKind::L2,
            ProportionPenalty::None)
            .unwrap();
        let want = 0.64 + 0.16 + 0.01;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn total_loss_single_subject() {
        let x = ResponseMatrix::from_rows(vec![vec![1, 0]]).unwrap();
        let a = PatternAssignment::new(vec![1], 1).unwrap();
        let mu = vec![0.1, 0.2, 0.8, 0.3];
        let pi = ProportionVector::uniform(2);
        let total =
            total_loss(&x, &a, &mu, &pi, LossKind::L2, ProportionPenalty::None).unwrap();
        let per = pattern_loss(&[1, 0], &[0.8, 0.3], 0.5, LossKind::L2,
            ProportionPenalty::None)
            .unwrap();
        assert!((total - per).abs() < 1e-15);
    }

    #[test]
    fn total_loss_two_summation_orders_agree() {
        // class-partition order vs subject order on random instances
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let k = rng.random_range(1..=3usize);
            let m_total = 1usize << k;
            let n = rng.random_range(1..=40usize);
            let j = rng.random_range(1..=10usize);
            let x = ResponseMatrix::new(
                n,
                j,
                (0..n * j).map(|_| rng.random_range(0..=1u8)).collect(),
            )
            .unwrap();
            let a = PatternAssignment::new(
                (0..n).map(|_| rng.random_range(0..m_total)).collect(),
                k,
            )
            .unwrap();
            let mu: Vec<f64> = (0..m_total * j).map(|_| rng.random::<f64>()).collect();
            let pi = ProportionVector::uniform(m_total);
            for kind in [LossKind::L1, LossKind::L2, LossKind::CrossEntropy] {
                let direct =
                    total_loss(&x, &a, &mu, &pi, kind, ProportionPenalty::NegLog)
                        .unwrap();
                // independent order: group subjects by class first
                let mut by_class = 0.0;
                for m in 0..m_total {
                    for i in 0..n {
                        if a.index(i) == m {
                            by_class += pattern_loss(
                                x.row(i),
                                &mu[m * j..(m + 1) * j],
                                pi.get(m),
                                kind,
                                ProportionPenalty::NegLog,
                            )
                            .unwrap();
                        }
                    }
                }
                assert!((direct - by_class).abs() < 1e-9 * (1.0 + direct.abs()));
            }
        }
    }

    #[test]
    fn expected_loss_l2_worked_values() {
        // theta=0.2 against mu=0.3 and against the pinned 0 centroid
        let at_free = expected_item_loss(0.2, 0.3, LossKind::L2);
        let at_zero = expected_item_loss(0.2, 0.0, LossKind::L2);
        assert!((at_free - 0.17).abs() < 1e-12);
        assert!((at_zero - 0.2).abs() < 1e-12);
        assert!((at_free - at_zero - (-0.03)).abs() < 1e-12);
        // mu = theta gives the Bernoulli variance
        let v = expected_item_loss(0.2, 0.2, LossKind::L2);
        assert!((v - 0.16).abs() < 1e-12);
    }

    fn bernoulli_kl(p: f64, q: f64) -> f64 {
        p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
    }

    #[test]
    fn ce_expected_gap_is_kl_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let t: f64 = rng.random_range(0.05..0.95);
            let mu: f64 = rng.random_range(0.05..0.95);
            let gap = expected_item_loss(t, mu, LossKind::CrossEntropy)
                - expected_item_loss(t, t, LossKind::CrossEntropy);
            assert!((gap - bernoulli_kl(t, mu)).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_mean_minimizes_l2_and_ce_on_grid() {
        // grid search at resolution 1e-4 over a pooled class of responses
        let xs = [1u8, 0, 1, 1, 0, 1, 1, 1, 0, 1];
        let mean = xs.iter().map(|&v| f64::from(v)).sum::<f64>() / xs.len() as f64;
        for kind in [LossKind::L2, LossKind::CrossEntropy] {
            let mut best = (f64::INFINITY, 0.0);
            for step in 0..=10_000 {
                let mu = step as f64 * 1e-4;
                let loss: f64 = xs.iter().map(|&v| item_loss(v, mu, kind)).sum();
                if loss < best.0 {
                    best = (loss, mu);
                }
            }
            assert!(
                (best.1 - mean).abs() <= 1e-4 + 1e-12,
                "{kind:?} minimizer {} vs mean {mean}",
                best.1
            );
        }
    }

    #[test]
    fn l1_minimizer_is_median_not_mean() {
        // 7 ones, 3 zeros: mean 0.7, median 1
        let xs = [1u8, 1, 1, 1, 1, 1, 1, 0, 0, 0];
        let mut best = (f64::INFINITY, 0.0);
        for step in 0..=10_000 {
            let mu = step as f64 * 1e-4;
            let loss: f64 = xs.iter().map(|&v| item_loss(v, mu, LossKind::L1)).sum();
            if loss < best.0 {
                best = (loss, mu);
            }
        }
        assert!((best.1 - 1.0).abs() < 1e-9);
        let mean = 0.7;
        assert!((best.1 - mean).abs() > 0.2);
    }

    proptest! {
        #[test]
        fn ce_gap_dominates_squared_gap(
            t in 0.05f64..0.95,
            mu in 0.05f64..0.95,
        ) {
            let gap = expected_item_loss(t, mu, LossKind::CrossEntropy)
                - expected_item_loss(t, t, LossKind::CrossEntropy);
            prop_assert!(gap >= 2.0 * (t - mu) * (t - mu) - 1e-15);
        }

        #[test]
        fn losses_nonnegative(x in 0u8..=1, mu in 0.0f64..=1.0) {
            for kind in [LossKind::L1, LossKind::L2, LossKind::CrossEntropy] {
                prop_assert!(item_loss(x, mu, kind) >= 0.0);
            }
        }

        #[test]
        fn proportions_validate(sum_shift in -0.1f64..0.1) {
            let v = vec![0.25 + sum_shift, 0.25, 0.25, 0.25];
            let ok = ProportionVector::new(v).is_ok();
            prop_assert_eq!(ok, sum_shift.abs() < 1e-12);
        }
    }
}
