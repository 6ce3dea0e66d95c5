//! The five estimation procedures: nonparametric classification (NPC),
//! general nonparametric classification (GNPC), joint and classification
//! maximum likelihood (JMLE/CMLE) as specializations of one iterative
//! classification algorithm, and marginal maximum likelihood (MMLE) via EM.
//!
//! The iterative methods alternate an assignment step (each subject moves
//! to the class minimizing its loss) with a pooled-mean centroid and
//! sample-proportion update, which drives the criterion monotonically
//! downward until the assignment stabilizes.

use crate::error::{CdmError, Result};
use crate::ideal::{ideal_table, CellTag, CentroidConstraints, IdealKind};
use crate::loss::{
    item_loss, pattern_loss, penalty_value, total_loss, LossKind, ProportionPenalty,
    ProportionVector,
};
use crate::pattern::{class_counts, ModelKind, PatternAssignment, QMatrix, ResponseMatrix};

/// Which estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Npc(IdealKind),
    Gnpc,
    Jmle(ModelKind),
    Cmle(ModelKind),
    Mmle(ModelKind),
}

/// Full configuration of a fit. The constructors give each method its
/// canonical loss and penalty; fields stay public for deliberate overrides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSpec {
    pub method: Method,
    pub loss: LossKind,
    pub penalty: ProportionPenalty,
    pub max_iterations: usize,
    pub loss_tolerance: f64,
    pub em_max_iterations: usize,
    pub em_tolerance: f64,
}

impl EstimatorSpec {
    fn with_method(method: Method, loss: LossKind, penalty: ProportionPenalty) -> Self {
        Self {
            method,
            loss,
            penalty,
            max_iterations: 200,
            loss_tolerance: 1e-8,
            em_max_iterations: 500,
            em_tolerance: 1e-6,
        }
    }

    pub fn npc(kind: IdealKind) -> Self {
        Self::with_method(Method::Npc(kind), LossKind::L1, ProportionPenalty::None)
    }

    pub fn gnpc() -> Self {
        Self::with_method(Method::Gnpc, LossKind::L2, ProportionPenalty::None)
    }

    pub fn jmle(model: ModelKind) -> Self {
        Self::with_method(
            Method::Jmle(model),
            LossKind::CrossEntropy,
            ProportionPenalty::None,
        )
    }

    pub fn cmle(model: ModelKind) -> Self {
        Self::with_method(
            Method::Cmle(model),
            LossKind::CrossEntropy,
            ProportionPenalty::NegLog,
        )
    }

    pub fn mmle(model: ModelKind) -> Self {
        Self::with_method(
            Method::Mmle(model),
            LossKind::CrossEntropy,
            ProportionPenalty::None,
        )
    }

    /// Parse an estimator name as used by the CLI and experiment configs.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "npc" | "npc-dina" => Ok(Self::npc(IdealKind::Dina)),
            "npc-dino" => Ok(Self::npc(IdealKind::Dino)),
            "gnpc" => Ok(Self::gnpc()),
            "jmle-dina" => Ok(Self::jmle(ModelKind::Dina)),
            "jmle-gdina" => Ok(Self::jmle(ModelKind::Gdina)),
            "cmle-dina" => Ok(Self::cmle(ModelKind::Dina)),
            "cmle-gdina" => Ok(Self::cmle(ModelKind::Gdina)),
            "mmle-dina" => Ok(Self::mmle(ModelKind::Dina)),
            "mmle-gdina" => Ok(Self::mmle(ModelKind::Gdina)),
            other => Err(CdmError::InvalidParameter(format!(
                "unknown estimator '{other}'"
            ))),
        }
    }

    /// Canonical name for reports and CSV output.
    pub fn label(&self) -> &'static str {
        match self.method {
            Method::Npc(IdealKind::Dina) => "npc",
            Method::Npc(IdealKind::Dino) => "npc-dino",
            Method::Gnpc => "gnpc",
            Method::Jmle(ModelKind::Dina) => "jmle-dina",
            Method::Jmle(ModelKind::Gdina) => "jmle-gdina",
            Method::Cmle(ModelKind::Dina) => "cmle-dina",
            Method::Cmle(ModelKind::Gdina) => "cmle-gdina",
            Method::Mmle(ModelKind::Dina) => "mmle-dina",
            Method::Mmle(ModelKind::Gdina) => "mmle-gdina",
        }
    }
}

/// `2^K x J` centroid values plus the constraint map that pins fixed cells
/// and ties free cells into equality groups.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    values: Vec<f64>,
    constraints: CentroidConstraints,
}

impl CentroidTable {
    /// Fresh table: fixed cells at their pinned value, free cells at 0.5.
    pub fn new(constraints: CentroidConstraints) -> Self {
        let m_total = constraints.n_patterns();
        let n_items = constraints.n_items();
        let mut values = vec![0.5; m_total * n_items];
        for m in 0..m_total {
            for j in 0..n_items {
                if let CellTag::Fixed(v) = constraints.tag(m, j) {
                    values[m * n_items + j] = f64::from(v);
                }
            }
        }
        Self { values, constraints }
    }

    /// Table with explicit values; fixed cells must match their pins and
    /// free cells must be constant within each equality group.
    pub fn with_values(constraints: CentroidConstraints, values: Vec<f64>) -> Result<Self> {
        let m_total = constraints.n_patterns();
        let n_items = constraints.n_items();
        if values.len() != m_total * n_items {
            return Err(CdmError::DimensionMismatch(format!(
                "centroid table has {} cells, expected {m_total}x{n_items}",
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CdmError::InvalidValue(format!(
                "centroid value {bad} outside [0,1]"
            )));
        }
        for m in 0..m_total {
            for j in 0..n_items {
                if let CellTag::Fixed(v) = constraints.tag(m, j) {
                    if (values[m * n_items + j] - f64::from(v)).abs() > 1e-9 {
                        return Err(CdmError::InvalidValue(format!(
                            "cell ({m},{j}) is pinned to {v} but holds {}",
                            values[m * n_items + j]
                        )));
                    }
                }
            }
        }
        for j in 0..n_items {
            for group in constraints.groups(j) {
                let first = values[group[0] * n_items + j];
                if group
                    .iter()
                    .any(|&m| (values[m * n_items + j] - first).abs() > 1e-9)
                {
                    return Err(CdmError::InvalidValue(format!(
                        "free cells of item {j} differ within an equality group"
                    )));
                }
            }
        }
        Ok(Self { values, constraints })
    }

    pub fn k(&self) -> usize {
        self.constraints.k()
    }

    pub fn n_items(&self) -> usize {
        self.constraints.n_items()
    }

    pub fn n_patterns(&self) -> usize {
        self.constraints.n_patterns()
    }

    pub fn value(&self, m: usize, j: usize) -> f64 {
        self.values[m * self.n_items() + j]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let j = self.n_items();
        &self.values[m * j..(m + 1) * j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn constraints(&self) -> &CentroidConstraints {
        &self.constraints
    }

    /// Pooled-mean update given an assignment: every free equality group
    /// takes the mean response of the subjects assigned to its patterns.
    /// Groups with no subjects keep their current value; fixed cells are
    /// never touched.
    pub fn update_from_assignment(
        &mut self,
        x: &ResponseMatrix,
        a: &PatternAssignment,
    ) -> Result<()> {
        let m_total = self.n_patterns();
        let n_items = self.n_items();
        if x.n_items() != n_items {
            return Err(CdmError::DimensionMismatch(format!(
                "{} response columns vs {n_items} items",
                x.n_items()
            )));
        }
        if x.n_subjects() != a.len() || a.k() != self.k() {
            return Err(CdmError::DimensionMismatch(
                "assignment does not match responses or table".into(),
            ));
        }
        // per-class counts and per-class item sums in one pass
        let mut counts = vec![0usize; m_total];
        let mut sums = vec![0u64; m_total * n_items];
        for i in 0..x.n_subjects() {
            let m = a.index(i);
            counts[m] += 1;
            let row = x.row(i);
            let base = m * n_items;
            for (j, &v) in row.iter().enumerate() {
                sums[base + j] += u64::from(v);
            }
        }
        for j in 0..n_items {
            for group in self.constraints.groups(j) {
                let den: usize = group.iter().map(|&m| counts[m]).sum();
                if den == 0 {
                    continue;
                }
                let num: u64 = group.iter().map(|&m| sums[m * n_items + j]).sum();
                let mean = num as f64 / den as f64;
                for &m in group {
                    self.values[m * n_items + j] = mean;
                }
            }
        }
        Ok(())
    }
}

/// Fit output: the assignment, the fitted centroids and proportions, and
/// the per-iteration loss values. For EM fits the trajectory holds the
/// negative marginal log-likelihood, so it is non-increasing there too.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub assignment: PatternAssignment,
    pub centroids: CentroidTable,
    pub proportions: ProportionVector,
    pub loss_trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trajectory.last().expect("trajectory is never empty")
    }
}

/// Assign one subject to the class minimizing its loss; ties go to the
/// lowest pattern index.
pub fn classify_with_centroids(
    x_row: &[u8],
    centroids: &[f64],
    pi: &ProportionVector,
    kind: LossKind,
    penalty: ProportionPenalty,
) -> Result<usize> {
    let m_total = pi.len();
    let n_items = x_row.len();
    if centroids.len() != m_total * n_items {
        return Err(CdmError::DimensionMismatch(format!(
            "centroid table has {} cells, expected {m_total}x{n_items}",
            centroids.len()
        )));
    }
    let mut best = f64::INFINITY;
    let mut arg = 0usize;
    for m in 0..m_total {
        let loss = pattern_loss(
            x_row,
            &centroids[m * n_items..(m + 1) * n_items],
            pi.get(m),
            kind,
            penalty,
        )?;
        if loss < best {
            best = loss;
            arg = m;
        }
    }
    Ok(arg)
}

/// Batch assignment step. Produces exactly the same result as calling
/// [`classify_with_centroids`] per subject (same accumulation order), but
/// precomputes the per-cell log costs once for the cross-entropy loss.
fn assign_all(
    x: &ResponseMatrix,
    centroids: &[f64],
    pi: &ProportionVector,
    kind: LossKind,
    penalty: ProportionPenalty,
) -> Vec<usize> {
    let m_total = pi.len();
    let n_items = x.n_items();
    debug_assert_eq!(centroids.len(), m_total * n_items);
    let h: Vec<f64> = (0..m_total).map(|m| penalty_value(pi.get(m), penalty)).collect();
    // per-cell costs for x=1 and x=0, so the subject loop is log-free
    let cost1: Vec<f64> = centroids.iter().map(|&mu| item_loss(1, mu, kind)).collect();
    let cost0: Vec<f64> = centroids.iter().map(|&mu| item_loss(0, mu, kind)).collect();
    (0..x.n_subjects())
        .map(|i| {
            let row = x.row(i);
            let mut best = f64::INFINITY;
            let mut arg = 0usize;
            for m in 0..m_total {
                let base = m * n_items;
                let mut acc = h[m];
                for (j, &xv) in row.iter().enumerate() {
                    acc += if xv == 1 { cost1[base + j] } else { cost0[base + j] };
                }
                if acc < best {
                    best = acc;
                    arg = m;
                }
            }
            arg
        })
        .collect()
}

fn check_fit_inputs(x: &ResponseMatrix, q: &QMatrix) -> Result<()> {
    if x.n_items() != q.n_items() {
        return Err(CdmError::DimensionMismatch(format!(
            "{} response columns vs {} Q-matrix rows",
            x.n_items(),
            q.n_items()
        )));
    }
    if x.n_subjects() == 0 {
        return Err(CdmError::InvalidValue("no subjects to classify".into()));
    }
    Ok(())
}

/// The shared initial assignment: single-pass classification against the
/// conjunctive ideal responses under the absolute-difference loss.
fn npc_initial_assignment(x: &ResponseMatrix, q: &QMatrix) -> PatternAssignment {
    let ideals = ideal_table(q, IdealKind::Dina);
    let pi = ProportionVector::uniform(1 << q.k());
    let idx = assign_all(x, &ideals, &pi, LossKind::L1, ProportionPenalty::None);
    PatternAssignment::new(idx, q.k()).expect("assignment indices in range")
}

/// Single-pass nonparametric classification against fixed ideal-response
/// centroids.
pub fn npc_fit(x: &ResponseMatrix, q: &QMatrix, kind: IdealKind) -> Result<FitResult> {
    check_fit_inputs(x, q)?;
    let constraints = CentroidConstraints::fixed_ideal(q, kind);
    let table = CentroidTable::new(constraints);
    let m_total = table.n_patterns();
    let pi = ProportionVector::uniform(m_total);
    let idx = assign_all(x, table.values(), &pi, LossKind::L1, ProportionPenalty::None);
    let assignment = PatternAssignment::new(idx, q.k())?;
    let proportions = ProportionVector::from_counts(&class_counts(&assignment))?;
    let loss = total_loss(
        x,
        &assignment,
        table.values(),
        &proportions,
        LossKind::L1,
        ProportionPenalty::None,
    )?;
    Ok(FitResult {
        assignment,
        centroids: table,
        proportions,
        loss_trajectory: vec![loss],
        iterations: 1,
        converged: true,
    })
}

fn constraints_for(method: Method, q: &QMatrix) -> Result<CentroidConstraints> {
    match method {
        Method::Npc(kind) => Ok(CentroidConstraints::fixed_ideal(q, kind)),
        Method::Gnpc => Ok(CentroidConstraints::gnpc(q)),
        Method::Jmle(model) | Method::Cmle(model) | Method::Mmle(model) => {
            Ok(CentroidConstraints::constrained(q, model))
        }
    }
}

/// Iterative classification: alternate pooled-mean centroid and
/// sample-proportion updates with reassignment until the assignment
/// stabilizes, the loss decrease falls below tolerance, or the iteration
/// cap is reached. Starts from the NPC assignment.
pub fn iterative_fit(x: &ResponseMatrix, q: &QMatrix, spec: &EstimatorSpec) -> Result<FitResult> {
    if matches!(spec.method, Method::Mmle(_)) {
        return Err(CdmError::InvalidParameter(
            "marginal maximum likelihood uses mmle_em_fit, not the iterative classifier"
                .into(),
        ));
    }
    check_fit_inputs(x, q)?;
    let constraints = constraints_for(spec.method, q)?;
    let mut table = CentroidTable::new(constraints);
    let mut assignment = npc_initial_assignment(x, q);
    let mut trajectory = Vec::new();
    let mut converged = false;
    for _ in 0..spec.max_iterations {
        table.update_from_assignment(x, &assignment)?;
        let pi = ProportionVector::from_counts(&class_counts(&assignment))?;
        let idx = assign_all(x, table.values(), &pi, spec.loss, spec.penalty);
        let next = PatternAssignment::new(idx, q.k())?;
        let loss = total_loss(x, &next, table.values(), &pi, spec.loss, spec.penalty)?;
        let prev = trajectory.last().copied();
        trajectory.push(loss);
        let stable = next == assignment;
        assignment = next;
        if stable {
            converged = true;
            break;
        }
        if let Some(prev) = prev {
            if prev - loss < spec.loss_tolerance {
                converged = true;
                break;
            }
        }
    }
    // report the proportions and centroids consistent with the final
    // assignment
    table.update_from_assignment(x, &assignment)?;
    let proportions = ProportionVector::from_counts(&class_counts(&assignment))?;
    Ok(FitResult {
        iterations: trajectory.len(),
        assignment,
        centroids: table,
        proportions,
        loss_trajectory: trajectory,
        converged,
    })
}

/// Log-space E-step: per-subject class responsibilities and the marginal
/// log-likelihood. Centroid values are clamped away from 0 and 1 before
/// taking logs.
fn e_step(
    x: &ResponseMatrix,
    theta: &[f64],
    pi: &[f64],
    resp: &mut [f64],
) -> f64 {
    let m_total = pi.len();
    let n_items = x.n_items();
    let clamp = 1e-12;
    let log1: Vec<f64> = theta.iter().map(|&t| t.clamp(clamp, 1.0 - clamp).ln()).collect();
    let log0: Vec<f64> =
        theta.iter().map(|&t| (1.0 - t.clamp(clamp, 1.0 - clamp)).ln()).collect();
    let log_pi: Vec<f64> = pi
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();
    let mut ll = 0.0;
    let mut logp = vec![0.0f64; m_total];
    for i in 0..x.n_subjects() {
        let row = x.row(i);
        for m in 0..m_total {
            let base = m * n_items;
            let mut acc = log_pi[m];
            if acc.is_finite() {
                for (j, &xv) in row.iter().enumerate() {
                    acc += if xv == 1 { log1[base + j] } else { log0[base + j] };
                }
            }
            logp[m] = acc;
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logp.iter().map(|&lp| (lp - max).exp()).sum();
        let lse = max + sum.ln();
        ll += lse;
        for m in 0..m_total {
            resp[i * m_total + m] = (logp[m] - lse).exp();
        }
    }
    ll
}

/// EM for the marginal likelihood, starting from explicit item parameters
/// and proportions. The M-step pools responsibility-weighted item means
/// over the model's equivalence classes; classification is by maximum
/// posterior. The trajectory records the negative marginal log-likelihood
/// at each E-step.
pub fn mmle_em_from(
    x: &ResponseMatrix,
    q: &QMatrix,
    model: ModelKind,
    theta0: Vec<f64>,
    pi0: ProportionVector,
    spec: &EstimatorSpec,
) -> Result<FitResult> {
    check_fit_inputs(x, q)?;
    let constraints = CentroidConstraints::constrained(q, model);
    let mut table = CentroidTable::with_values(constraints, theta0)?;
    let m_total = table.n_patterns();
    if pi0.len() != m_total {
        return Err(CdmError::DimensionMismatch(format!(
            "{} initial proportions vs {m_total} classes",
            pi0.len()
        )));
    }
    let n = x.n_subjects();
    let n_items = x.n_items();
    let mut pi = pi0.as_slice().to_vec();
    let mut resp = vec![0.0f64; n * m_total];
    let mut trajectory = Vec::new();
    let mut converged = false;
    let mut prev_ll = f64::NEG_INFINITY;
    loop {
        let ll = e_step(x, table.values(), &pi, &mut resp);
        trajectory.push(-ll);
        if trajectory.len() > 1 && ll - prev_ll < spec.em_tolerance {
            converged = true;
            break;
        }
        if trajectory.len() >= spec.em_max_iterations {
            break;
        }
        prev_ll = ll;
        // M-step: proportions are mean responsibilities, item parameters
        // are weighted means pooled over equivalence classes
        let mut class_weight = vec![0.0f64; m_total];
        let mut weighted_sum = vec![0.0f64; m_total * n_items];
        for i in 0..n {
            let row = x.row(i);
            for m in 0..m_total {
                let w = resp[i * m_total + m];
                if w == 0.0 {
                    continue;
                }
                class_weight[m] += w;
                let base = m * n_items;
                for (j, &xv) in row.iter().enumerate() {
                    if xv == 1 {
                        weighted_sum[base + j] += w;
                    }
                }
            }
        }
        for m in 0..m_total {
            pi[m] = class_weight[m] / n as f64;
        }
        let mut values = table.values().to_vec();
        for j in 0..n_items {
            for group in table.constraints().groups(j) {
                let den: f64 = group.iter().map(|&m| class_weight[m]).sum();
                if den <= 1e-12 {
                    continue;
                }
                let num: f64 =
                    group.iter().map(|&m| weighted_sum[m * n_items + j]).sum();
                let mean = (num / den).clamp(0.0, 1.0);
                for &m in group {
                    values[m * n_items + j] = mean;
                }
            }
        }
        table = CentroidTable::with_values(table.constraints().clone(), values)?;
    }
    // maximum-posterior classification under the final parameters
    let idx: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for m in 0..m_total {
                let w = resp[i * m_total + m];
                if w > best {
                    best = w;
                    arg = m;
                }
            }
            arg
        })
        .collect();
    let assignment = PatternAssignment::new(idx, q.k())?;
    let proportions = ProportionVector::new(normalize(&pi))?;
    Ok(FitResult {
        iterations: trajectory.len(),
        assignment,
        centroids: table,
        proportions,
        loss_trajectory: trajectory,
        converged,
    })
}

fn normalize(pi: &[f64]) -> Vec<f64> {
    let sum: f64 = pi.iter().sum();
    pi.iter().map(|&p| p / sum).collect()
}

/// EM fit initialized from the NPC assignment: class counts with add-one
/// smoothing give the starting proportions, pooled group means with a
/// pseudo-observation of 0.5 give the starting item parameters. The
/// smoothing keeps every class alive at small N.
pub fn mmle_em_fit(
    x: &ResponseMatrix,
    q: &QMatrix,
    model: ModelKind,
    spec: &EstimatorSpec,
) -> Result<FitResult> {
    check_fit_inputs(x, q)?;
    let a0 = npc_initial_assignment(x, q);
    let counts = class_counts(&a0);
    let m_total = counts.len();
    let n = x.n_subjects();
    let pi0: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 + 1.0) / (n as f64 + m_total as f64))
        .collect();
    let constraints = CentroidConstraints::constrained(q, model);
    let n_items = x.n_items();
    let mut class_count = vec![0usize; m_total];
    let mut sums = vec![0u64; m_total * n_items];
    for i in 0..n {
        let m = a0.index(i);
        class_count[m] += 1;
        for (j, &v) in x.row(i).iter().enumerate() {
            sums[m * n_items + j] += u64::from(v);
        }
    }
    let mut theta0 = vec![0.5f64; m_total * n_items];
    for j in 0..n_items {
        for group in constraints.groups(j) {
            let den: usize = group.iter().map(|&m| class_count[m]).sum();
            let num: u64 = group.iter().map(|&m| sums[m * n_items + j]).sum();
            let smoothed = (num as f64 + 0.5) / (den as f64 + 1.0);
            for &m in group {
                theta0[m * n_items + j] = smoothed;
            }
        }
    }
    mmle_em_from(x, q, model, theta0, ProportionVector::new(normalize(&pi0))?, spec)
}

/// Run the estimator described by `spec`.
pub fn fit(x: &ResponseMatrix, q: &QMatrix, spec: &EstimatorSpec) -> Result<FitResult> {
    match spec.method {
        Method::Npc(kind) => npc_fit(x, q, kind),
        Method::Gnpc | Method::Jmle(_) | Method::Cmle(_) => iterative_fit(x, q, spec),
        Method::Mmle(model) => mmle_em_fit(x, q, model, spec),
    }
}

/// Post-fit diagnostic for the two-sided ordering constraint: capable
/// classes should share the highest value of an item, and no class should
/// fall below the zero-pattern class. Returns `(item, pattern)` pairs that
/// violate it. The iteration never enforces this; it only pools equals.
pub fn eq4_violations(table: &CentroidTable, q: &QMatrix) -> Vec<(usize, usize)> {
    let k = q.k();
    let m_total = 1usize << k;
    let tol = 1e-9;
    let mut out = Vec::new();
    for j in 0..q.n_items() {
        let row = q.row(j);
        let dom_value = table.value(m_total - 1, j); // full mastery dominates every row
        let zero_value = table.value(0, j);
        for m in 0..m_total {
            let dominates = (0..k).all(|b| ((m >> b) & 1) as u8 >= row[b]);
            if dominates {
                continue;
            }
            let v = table.value(m, j);
            if v > dom_value + tol || v < zero_value - tol {
                out.push((j, m));
            }
        }
    }
    out
}
