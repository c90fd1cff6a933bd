//! Group-structure estimators: unit-by-unit OLS, Two-Step Kmeans over the
//! unit coefficients, Panel Clusterwise Regression, the grouped-fixed-effects
//! variant, multi-restart search, and an exhaustive oracle for small
//! instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_condition_number;
use crate::panel::{GroupAssignment, PanelDataset};

/// Hard cap on iterations; hitting it marks the fit as non-converged.
pub const MAX_ITERATIONS: usize = 500;

/// Retry budget for drawing an initialization with every group nonempty.
const INIT_RETRIES: usize = 1000;

/// Absolute-or-relative tolerance used to call two distances/SSRs tied.
const TIE_TOL: f64 = 1e-12;

/// Condition-number ceiling above which a Gram matrix counts as singular.
const COND_LIMIT: f64 = 1e12;

/// Unit-level coefficient estimates: row `i` holds `beta_i` (N x K).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefMatrix {
    values: DMatrix<f64>,
}

impl CoefMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput("coefficient matrix must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("coefficient matrix has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    /// Rebuild from the stacked NK-vector `(beta_1', ..., beta_N')'`.
    pub fn from_stacked(stacked: &DVector<f64>, k: usize) -> Result<Self> {
        if k == 0 || !stacked.len().is_multiple_of(k) {
            return Err(Error::InvalidInput("stacked length is not a multiple of K".into()));
        }
        let n = stacked.len() / k;
        let mut m = DMatrix::zeros(n, k);
        for i in 0..n {
            for j in 0..k {
                m[(i, j)] = stacked[i * k + j];
            }
        }
        Self::new(m)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `beta_i` as a K-vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Stacked NK-vector view `(beta_1', ..., beta_N')'`.
    pub fn stacked(&self) -> DVector<f64> {
        let (n, k) = (self.n(), self.k());
        let mut out = DVector::zeros(n * k);
        for i in 0..n {
            for j in 0..k {
                out[i * k + j] = self.values[(i, j)];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tsk,
    Pcr,
    Gfe,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Tsk => write!(f, "tsk"),
            Method::Pcr => write!(f, "pcr"),
            Method::Gfe => write!(f, "gfe"),
        }
    }
}

/// Either input an estimator can consume: unit coefficients for TSK, the
/// panel itself for PCR/GFE.
#[derive(Clone, Copy)]
pub enum FitInput<'a> {
    Coefs(&'a CoefMatrix),
    Panel(&'a PanelDataset),
}

/// Recorded iteration history of one algorithm run: assignments
/// `gamma^(0)..gamma^(M)`, the centers computed after each assignment, and
/// the objective value per iteration.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub assignments: Vec<GroupAssignment>,
    /// Per-iteration G x K' center (TSK) or pooled-coefficient (PCR) matrix.
    /// Empty when the fit was reloaded from JSON.
    pub centers: Vec<DMatrix<f64>>,
    pub objectives: Vec<f64>,
    pub converged: bool,
}

impl FitTrace {
    /// Iteration count `M` (the trace records `M + 1` assignments).
    pub fn m(&self) -> usize {
        self.assignments.len() - 1
    }
}

/// Result of a group-structure fit.
#[derive(Debug, Clone)]
pub struct GroupFit {
    pub method: Method,
    pub group_count: usize,
    pub trace: FitTrace,
    pub gamma: GroupAssignment,
    /// Stacked group coefficients `(alpha_1', ..., alpha_G')'`, length G * K'.
    pub alpha: DVector<f64>,
    pub objective: f64,
    pub restarts: usize,
    pub winning_restart: usize,
    /// Coefficients per group in the fitted model (includes dummies for GFE).
    pub k_model: usize,
    /// Leading slope coefficients per group (excludes the dummy block).
    pub k_slopes: usize,
}

impl GroupFit {
    /// Slope block of group `g` (zero-based).
    pub fn group_slopes(&self, g: usize) -> DVector<f64> {
        self.alpha.rows(g * self.k_model, self.k_slopes).into_owned()
    }

    /// Full coefficient block of group `g` (zero-based).
    pub fn group_coefs(&self, g: usize) -> DVector<f64> {
        self.alpha.rows(g * self.k_model, self.k_model).into_owned()
    }
}

/// Unit-by-unit OLS `beta_i = (sum_t X X')^{-1} sum_t X Y`.
pub fn unit_ols(d: &PanelDataset) -> Result<CoefMatrix> {
    if d.t() < d.k() {
        return Err(Error::InvalidInput(format!(
            "unit OLS requires T >= K (T = {}, K = {})",
            d.t(),
            d.k()
        )));
    }
    let mut values = DMatrix::zeros(d.n(), d.k());
    for i in 0..d.n() {
        let gram = d.unit_gram(i);
        let cond = spd_condition_number(&gram);
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::SingularUnitGram {
                unit: d.unit_ids()[i].clone(),
                cond,
            });
        }
        let xty = d.x(i).transpose() * d.y(i);
        let beta = crate::linalg::solve_spd(&gram, &xty)?;
        values.row_mut(i).copy_from(&beta.transpose());
    }
    CoefMatrix::new(values)
}

/// SplitMix64-style mixer for deriving independent substream seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw a uniform initial assignment, retrying until every group is hit.
fn draw_initial_assignment(
    rng: &mut ChaCha8Rng,
    n: usize,
    groups: usize,
) -> Result<GroupAssignment> {
    if groups > n {
        return Err(Error::InvalidInput(format!(
            "cannot place {groups} nonempty groups across {n} units"
        )));
    }
    for _ in 0..INIT_RETRIES {
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..groups)).collect();
        let gamma = GroupAssignment::new(labels, groups)?;
        if gamma.first_empty_group().is_none() {
            return Ok(gamma);
        }
    }
    Err(Error::InitFailed {
        groups,
        tries: INIT_RETRIES,
    })
}

/// Argmin over candidate criteria with the deterministic tie rule: keep the
/// current label when it ties the minimum, otherwise take the smallest index.
fn assign_with_ties(criteria: &[f64], current: usize) -> usize {
    let minv = criteria.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * minv.abs().max(1.0);
    if criteria[current] - minv <= tol {
        return current;
    }
    criteria
        .iter()
        .position(|&c| c - minv <= tol)
        .expect("nonempty criteria")
}

// ---------------------------------------------------------------------------
// Two-Step Kmeans
// ---------------------------------------------------------------------------

/// Group means of the rows of `b` under `gamma` (G x K).
fn tsk_centers(b: &CoefMatrix, gamma: &GroupAssignment) -> Result<DMatrix<f64>> {
    let g = gamma.group_count();
    let k = b.k();
    let sizes = gamma.group_sizes();
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyGroup { group: empty + 1 });
    }
    let mut centers = DMatrix::zeros(g, k);
    for i in 0..b.n() {
        let gi = gamma.group_of(i);
        for j in 0..k {
            centers[(gi, j)] += b.values()[(i, j)];
        }
    }
    for gi in 0..g {
        let inv = 1.0 / sizes[gi] as f64;
        for j in 0..k {
            centers[(gi, j)] *= inv;
        }
    }
    Ok(centers)
}

fn tsk_objective_at(b: &CoefMatrix, gamma: &GroupAssignment, centers: &DMatrix<f64>) -> f64 {
    let mut obj = 0.0;
    for i in 0..b.n() {
        let gi = gamma.group_of(i);
        let mut d2 = 0.0;
        for j in 0..b.k() {
            let diff = b.values()[(i, j)] - centers[(gi, j)];
            d2 += diff * diff;
        }
        obj += d2;
    }
    obj
}

/// Kmeans objective at the optimal (group-mean) centers for `gamma`.
pub fn tsk_objective(b: &CoefMatrix, gamma: &GroupAssignment) -> Result<f64> {
    let centers = tsk_centers(b, gamma)?;
    Ok(tsk_objective_at(b, gamma, &centers))
}

/// One run of the Kmeans loop from a given initial assignment. Returns
/// `None` when an iteration empties a group (the restart is abandoned).
fn tsk_single_run(b: &CoefMatrix, init: GroupAssignment) -> Option<FitTrace> {
    let groups = init.group_count();
    let mut assignments = vec![init];
    let mut centers_seq = Vec::new();
    let mut objectives = Vec::new();

    let c0 = tsk_centers(b, &assignments[0]).ok()?;
    objectives.push(tsk_objective_at(b, &assignments[0], &c0));
    centers_seq.push(c0);

    for m in 1..=MAX_ITERATIONS {
        let prev = &assignments[m - 1];
        let centers = &centers_seq[m - 1];
        let mut labels = Vec::with_capacity(b.n());
        for i in 0..b.n() {
            let dists: Vec<f64> = (0..groups)
                .map(|g| {
                    let mut d2 = 0.0;
                    for j in 0..b.k() {
                        let diff = b.values()[(i, j)] - centers[(g, j)];
                        d2 += diff * diff;
                    }
                    d2
                })
                .collect();
            labels.push(assign_with_ties(&dists, prev.group_of(i)));
        }
        let gamma = GroupAssignment::new(labels, groups).ok()?;
        if gamma.first_empty_group().is_some() {
            return None;
        }
        let done = gamma == *prev;
        let centers_new = tsk_centers(b, &gamma).ok()?;
        objectives.push(tsk_objective_at(b, &gamma, &centers_new));
        centers_seq.push(centers_new);
        assignments.push(gamma);
        if done {
            return Some(FitTrace {
                assignments,
                centers: centers_seq,
                objectives,
                converged: true,
            });
        }
    }
    Some(FitTrace {
        assignments,
        centers: centers_seq,
        objectives,
        converged: false,
    })
}

/// Two-Step Kmeans: cluster the unit coefficient rows into `groups` groups,
/// keeping the best of `restarts` uniformly random initializations.
pub fn tsk_fit(b: &CoefMatrix, groups: usize, restarts: usize, seed: u64) -> Result<GroupFit> {
    validate_fit_request(b.n(), groups, restarts)?;
    let runs: Vec<Option<FitTrace>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
            let init = draw_initial_assignment(&mut rng, b.n(), groups).ok()?;
            tsk_single_run(b, init)
        })
        .collect();
    finish_fit(Method::Tsk, runs, restarts, b.k(), b.k(), |trace| {
        let gamma = trace.assignments.last().unwrap().clone();
        let centers = tsk_centers(b, &gamma)?;
        Ok((gamma, stack_rows(&centers)))
    })
}

// ---------------------------------------------------------------------------
// Panel Clusterwise Regression
// ---------------------------------------------------------------------------

/// Per-unit sufficient statistics for pooled regressions.
struct UnitStats {
    gram: Vec<DMatrix<f64>>,
    xty: Vec<DVector<f64>>,
    yty: Vec<f64>,
}

impl UnitStats {
    fn from_panel(d: &PanelDataset) -> Self {
        let gram = (0..d.n()).map(|i| d.unit_gram(i)).collect();
        let xty = (0..d.n()).map(|i| d.x(i).transpose() * d.y(i)).collect();
        let yty = (0..d.n()).map(|i| d.y(i).dot(d.y(i))).collect();
        Self { gram, xty, yty }
    }

    /// Pooled OLS coefficients per group, or `None` on a singular pooled Gram.
    fn pooled_coefs(&self, gamma: &GroupAssignment) -> Option<DMatrix<f64>> {
        let g = gamma.group_count();
        let k = self.gram[0].nrows();
        let mut coefs = DMatrix::zeros(g, k);
        for grp in 0..g {
            let members = gamma.members(grp);
            if members.is_empty() {
                return None;
            }
            let mut gram = DMatrix::zeros(k, k);
            let mut xty = DVector::zeros(k);
            for &i in &members {
                gram += &self.gram[i];
                xty += &self.xty[i];
            }
            let chol = gram.clone().cholesky()?;
            let diag_ok = {
                let l = chol.l();
                let mut dmin = f64::INFINITY;
                let mut dmax: f64 = 0.0;
                for j in 0..k {
                    dmin = dmin.min(l[(j, j)]);
                    dmax = dmax.max(l[(j, j)]);
                }
                dmin > 0.0 && (dmax / dmin).powi(2) < COND_LIMIT
            };
            if !diag_ok {
                return None;
            }
            coefs.row_mut(grp).copy_from(&chol.solve(&xty).transpose());
        }
        Some(coefs)
    }

    /// SSR of unit `i` under pooled coefficients `a` (one row per group).
    fn unit_ssr(&self, i: usize, a: &DVector<f64>) -> f64 {
        self.yty[i] - 2.0 * a.dot(&self.xty[i]) + (a.transpose() * &self.gram[i] * a)[(0, 0)]
    }

    fn objective(&self, gamma: &GroupAssignment, coefs: &DMatrix<f64>) -> f64 {
        (0..gamma.n())
            .map(|i| {
                let a = coefs.row(gamma.group_of(i)).transpose();
                self.unit_ssr(i, &a)
            })
            .sum()
    }
}

fn pcr_single_run(stats: &UnitStats, init: GroupAssignment) -> Option<FitTrace> {
    let groups = init.group_count();
    let n = init.n();
    let mut assignments = vec![init];
    let mut centers_seq = Vec::new();
    let mut objectives = Vec::new();

    let c0 = stats.pooled_coefs(&assignments[0])?;
    objectives.push(stats.objective(&assignments[0], &c0));
    centers_seq.push(c0);

    for m in 1..=MAX_ITERATIONS {
        let prev = &assignments[m - 1];
        let coefs = &centers_seq[m - 1];
        let group_vecs: Vec<DVector<f64>> =
            (0..groups).map(|g| coefs.row(g).transpose()).collect();
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let ssrs: Vec<f64> = group_vecs.iter().map(|a| stats.unit_ssr(i, a)).collect();
            labels.push(assign_with_ties(&ssrs, prev.group_of(i)));
        }
        let gamma = GroupAssignment::new(labels, groups).ok()?;
        if gamma.first_empty_group().is_some() {
            return None;
        }
        let done = gamma == *prev;
        let centers_new = stats.pooled_coefs(&gamma)?;
        objectives.push(stats.objective(&gamma, &centers_new));
        centers_seq.push(centers_new);
        assignments.push(gamma);
        if done {
            return Some(FitTrace {
                assignments,
                centers: centers_seq,
                objectives,
                converged: true,
            });
        }
    }
    Some(FitTrace {
        assignments,
        centers: centers_seq,
        objectives,
        converged: false,
    })
}

/// Pooled SSR objective at the optimal per-group pooled-OLS coefficients.
pub fn pcr_objective(d: &PanelDataset, gamma: &GroupAssignment) -> Result<f64> {
    if let Some(empty) = gamma.first_empty_group() {
        return Err(Error::EmptyGroup { group: empty + 1 });
    }
    let stats = UnitStats::from_panel(d);
    let coefs = stats
        .pooled_coefs(gamma)
        .ok_or_else(|| Error::Singular("pooled group Gram matrix".into()))?;
    Ok(stats.objective(gamma, &coefs))
}

/// Panel Clusterwise Regression: alternate pooled OLS per group and
/// per-unit reassignment by SSR, best of `restarts` random initializations.
pub fn pcr_fit(d: &PanelDataset, groups: usize, restarts: usize, seed: u64) -> Result<GroupFit> {
    validate_fit_request(d.n(), groups, restarts)?;
    let stats = UnitStats::from_panel(d);
    let runs: Vec<Option<FitTrace>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
            let init = draw_initial_assignment(&mut rng, d.n(), groups).ok()?;
            pcr_single_run(&stats, init)
        })
        .collect();
    finish_fit(Method::Pcr, runs, restarts, d.k(), d.k(), |trace| {
        let gamma = trace.assignments.last().unwrap().clone();
        let coefs = stats
            .pooled_coefs(&gamma)
            .ok_or_else(|| Error::Singular("pooled group Gram matrix".into()))?;
        Ok((gamma, stack_rows(&coefs)))
    })
}

/// Grouped fixed effects: PCR on the panel augmented with time dummies.
/// `alpha` blocks hold the K slope coefficients first, dummies after.
pub fn gfe_fit(d: &PanelDataset, groups: usize, restarts: usize, seed: u64) -> Result<GroupFit> {
    let augmented = d.augment_time_dummies()?;
    let mut fit = pcr_fit(&augmented, groups, restarts, seed)?;
    fit.method = Method::Gfe;
    fit.k_slopes = d.k();
    Ok(fit)
}

// ---------------------------------------------------------------------------
// Shared fit plumbing
// ---------------------------------------------------------------------------

fn validate_fit_request(n: usize, groups: usize, restarts: usize) -> Result<()> {
    if groups == 0 {
        return Err(Error::InvalidInput("groups must be >= 1".into()));
    }
    if groups > n {
        return Err(Error::InvalidInput(format!(
            "groups ({groups}) cannot exceed units ({n})"
        )));
    }
    if restarts == 0 {
        return Err(Error::InvalidInput("restarts must be >= 1".into()));
    }
    Ok(())
}

fn stack_rows(m: &DMatrix<f64>) -> DVector<f64> {
    let (g, k) = (m.nrows(), m.ncols());
    let mut out = DVector::zeros(g * k);
    for gi in 0..g {
        for j in 0..k {
            out[gi * k + j] = m[(gi, j)];
        }
    }
    out
}

/// Pick the winning restart, canonicalize labels by first occurrence in the
/// final assignment, and assemble the `GroupFit`.
fn finish_fit<F>(
    method: Method,
    runs: Vec<Option<FitTrace>>,
    restarts: usize,
    k_model: usize,
    k_slopes: usize,
    finalize: F,
) -> Result<GroupFit>
where
    F: Fn(&FitTrace) -> Result<(GroupAssignment, DVector<f64>)>,
{
    let mut best: Option<(usize, FitTrace)> = None;
    for (idx, run) in runs.into_iter().enumerate() {
        let Some(trace) = run else {
            log::debug!("restart {idx} abandoned (empty group or singular update)");
            continue;
        };
        let obj = *trace.objectives.last().unwrap();
        let better = match &best {
            None => true,
            Some((_, cur)) => obj < *cur.objectives.last().unwrap(),
        };
        if better {
            best = Some((idx, trace));
        }
    }
    let (winning_restart, trace) = best.ok_or(Error::AllRestartsFailed(restarts))?;

    let (gamma_raw, _) = finalize(&trace)?;
    let (perm, gamma) = gamma_raw.canonicalize();
    let trace = permute_trace(trace, &perm, k_model);
    let (_, alpha) = finalize(&trace)?;

    let objective = *trace.objectives.last().unwrap();
    let group_count = gamma.group_count();
    Ok(GroupFit {
        method,
        group_count,
        trace,
        gamma,
        alpha,
        objective,
        restarts,
        winning_restart,
        k_model,
        k_slopes,
    })
}

/// Apply a group relabeling to every recorded assignment and center matrix.
fn permute_trace(trace: FitTrace, perm: &[usize], k_model: usize) -> FitTrace {
    let assignments = trace.assignments.iter().map(|a| a.permuted(perm)).collect();
    let centers = trace
        .centers
        .iter()
        .map(|c| {
            let mut out = DMatrix::zeros(c.nrows(), k_model);
            for (old, &new) in perm.iter().enumerate() {
                out.row_mut(new).copy_from(&c.row(old));
            }
            out
        })
        .collect();
    FitTrace {
        assignments,
        centers,
        objectives: trace.objectives,
        converged: trace.converged,
    }
}

/// Objective of `gamma` at the method's closed-form optimal centers.
pub fn objective(method: Method, input: FitInput<'_>, gamma: &GroupAssignment) -> Result<f64> {
    if let Some(empty) = gamma.first_empty_group() {
        return Err(Error::EmptyGroup { group: empty + 1 });
    }
    match (method, input) {
        (Method::Tsk, FitInput::Coefs(b)) => tsk_objective(b, gamma),
        (Method::Pcr, FitInput::Panel(d)) => pcr_objective(d, gamma),
        (Method::Gfe, FitInput::Panel(d)) => pcr_objective(&d.augment_time_dummies()?, gamma),
        _ => Err(Error::InvalidInput(
            "objective: input kind does not match method".into(),
        )),
    }
}

/// Upper bound on the assignments an exhaustive search will evaluate.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

/// Global minimizer of the method objective by exhaustive enumeration of
/// assignments, modulo group relabeling. Assignments that occupy fewer than
/// `groups` groups are included (the optimum may merge groups); assignments
/// whose pooled Gram is singular are skipped for PCR/GFE.
pub fn brute_force_fit(method: Method, input: FitInput<'_>, groups: usize) -> Result<GroupFit> {
    let n = match input {
        FitInput::Coefs(b) => b.n(),
        FitInput::Panel(d) => d.n(),
    };
    validate_fit_request(n, groups, 1)?;
    let total = (groups as u64).checked_pow(n as u32);
    match total {
        Some(t) if t <= BRUTE_FORCE_LIMIT => {}
        _ => {
            return Err(Error::BruteForceTooLarge {
                groups,
                units: n,
                limit: BRUTE_FORCE_LIMIT,
            })
        }
    }

    let augmented;
    let (eval_input, k_model, k_slopes) = match (method, input) {
        (Method::Tsk, FitInput::Coefs(b)) => (FitInput::Coefs(b), b.k(), b.k()),
        (Method::Pcr, FitInput::Panel(d)) => (FitInput::Panel(d), d.k(), d.k()),
        (Method::Gfe, FitInput::Panel(d)) => {
            augmented = d.augment_time_dummies()?;
            let k = augmented.k();
            (FitInput::Panel(&augmented), k, d.k())
        }
        _ => {
            return Err(Error::InvalidInput(
                "brute_force_fit: input kind does not match method".into(),
            ))
        }
    };
    let eval_method = if method == Method::Gfe { Method::Pcr } else { method };

    let mut best: Option<(f64, GroupAssignment)> = None;
    let mut labels = vec![0usize; n];
    // Canonical enumeration: unit 0 is always group 0 and each unit may open
    // at most one new group, so every partition is visited exactly once.
    enumerate_canonical(&mut labels, 1, 1, groups, &mut |labels, used| {
        let gamma = match GroupAssignment::new(labels.to_vec(), used) {
            Ok(g) => g,
            Err(_) => return,
        };
        let obj = match objective(eval_method, eval_input, &gamma) {
            Ok(o) => o,
            Err(_) => return, // singular pooled Gram for this assignment
        };
        let better = best.as_ref().map(|(b, _)| obj < *b).unwrap_or(true);
        if better {
            best = Some((obj, gamma));
        }
    });
    let (objective_val, gamma_small) = best.ok_or(Error::AllRestartsFailed(0))?;

    // Report on the requested G groups (trailing groups possibly empty in
    // label space but gamma itself only uses the occupied ones).
    let gamma = GroupAssignment::new(gamma_small.labels().to_vec(), gamma_small.group_count())?;
    let centers_alpha = match eval_input {
        FitInput::Coefs(b) => stack_rows(&tsk_centers(b, &gamma)?),
        FitInput::Panel(d) => {
            let stats = UnitStats::from_panel(d);
            stack_rows(
                &stats
                    .pooled_coefs(&gamma)
                    .ok_or_else(|| Error::Singular("pooled group Gram matrix".into()))?,
            )
        }
    };
    let trace = FitTrace {
        assignments: vec![gamma.clone(), gamma.clone()],
        centers: Vec::new(),
        objectives: vec![objective_val, objective_val],
        converged: true,
    };
    Ok(GroupFit {
        method,
        group_count: gamma.group_count(),
        trace,
        gamma,
        alpha: centers_alpha,
        objective: objective_val,
        restarts: 0,
        winning_restart: 0,
        k_model,
        k_slopes,
    })
}

fn enumerate_canonical(
    labels: &mut Vec<usize>,
    pos: usize,
    used: usize,
    max_groups: usize,
    visit: &mut impl FnMut(&[usize], usize),
) {
    if pos == labels.len() {
        visit(labels, used);
        return;
    }
    for g in 0..used.min(max_groups) {
        labels[pos] = g;
        enumerate_canonical(labels, pos + 1, used, max_groups, visit);
    }
    if used < max_groups {
        labels[pos] = used;
        enumerate_canonical(labels, pos + 1, used + 1, max_groups, visit);
    }
}

// ---------------------------------------------------------------------------
// JSON serialization of fits
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FitJson {
    method: Method,
    groups: usize,
    /// Final assignment, one-based labels.
    gamma: Vec<usize>,
    alpha: Vec<f64>,
    objective: f64,
    iterations: usize,
    /// One-based assignment per iteration, `gamma^(0)..gamma^(M)`.
    trace_assignments: Vec<Vec<usize>>,
    trace_objectives: Vec<f64>,
    converged: bool,
    restarts: usize,
    winning_restart: usize,
    k_model: usize,
    k_slopes: usize,
}

impl GroupFit {
    pub fn to_json(&self) -> Result<String> {
        let j = FitJson {
            method: self.method,
            groups: self.group_count,
            gamma: self.gamma.one_based(),
            alpha: self.alpha.iter().cloned().collect(),
            objective: self.objective,
            iterations: self.trace.m(),
            trace_assignments: self.trace.assignments.iter().map(|a| a.one_based()).collect(),
            trace_objectives: self.trace.objectives.clone(),
            converged: self.trace.converged,
            restarts: self.restarts,
            winning_restart: self.winning_restart,
            k_model: self.k_model,
            k_slopes: self.k_slopes,
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    /// Inverse of [`GroupFit::to_json`]. Recorded centers are not serialized
    /// and come back empty; everything the selective machinery needs (the
    /// per-iteration assignments) survives the round trip.
    pub fn from_json(s: &str) -> Result<Self> {
        let j: FitJson = serde_json::from_str(s)?;
        if j.trace_assignments.is_empty() {
            return Err(Error::InvalidInput("fit JSON has an empty trace".into()));
        }
        let assignments = j
            .trace_assignments
            .iter()
            .map(|a| GroupAssignment::from_one_based(a, j.groups))
            .collect::<Result<Vec<_>>>()?;
        let gamma = GroupAssignment::from_one_based(&j.gamma, j.groups)?;
        if j.alpha.len() != j.groups * j.k_model {
            return Err(Error::InvalidInput("fit JSON alpha length mismatch".into()));
        }
        Ok(GroupFit {
            method: j.method,
            group_count: j.groups,
            trace: FitTrace {
                assignments,
                centers: Vec::new(),
                objectives: j.trace_objectives,
                converged: j.converged,
            },
            gamma,
            alpha: DVector::from_vec(j.alpha),
            objective: j.objective,
            restarts: j.restarts,
            winning_restart: j.winning_restart,
            k_model: j.k_model,
            k_slopes: j.k_slopes,
        })
    }
}
