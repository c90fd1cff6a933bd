//! Selective conditional inference: Wald statistics, constrained estimators,
//! perturbation decompositions, analytic truncation sets, truncated
//! chi-squared p-values, and the end-to-end selective test.

mod constraints;
mod decompose;
mod pvalue;
mod truncation;

pub use constraints::{quadratic_constraints_pcr, quadratic_constraints_tsk};
pub use decompose::{
    constrained_alpha, decompose_pcr, decompose_tsk, pooled_group_alpha, score_vector,
    wald_statistic, Decomposition, PerturbSpace, DEGENERATE_H,
};
pub use pvalue::truncated_chi2_pvalue;
pub use truncation::{feasible_set, quadratic_solution_set, QuadraticConstraint, TruncationSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{unit_ols, FitInput, FitTrace, GroupFit, Method};
use crate::panel::{GroupAssignment, LinearHypothesis, PanelDataset};
use crate::stats::chi2_sf;
use crate::variance::GroupCovariances;

/// Outcome of a (selective) hypothesis test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    /// Wald statistic.
    pub statistic: f64,
    /// Degrees of freedom = number of restrictions.
    pub df: usize,
    /// Unconditional chi-squared survival p-value.
    pub naive_p: f64,
    /// Trace-conditioned truncated chi-squared p-value.
    pub selective_p: f64,
    /// Truncation set on the phi scale.
    pub truncation: TruncationSet,
    pub hypothesis: HypothesisEcho,
    pub diagnostics: TestDiagnostics,
}

/// The hypothesis as supplied, echoed into the result for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisEcho {
    pub r_matrix: Vec<Vec<f64>>,
    pub r_vec: Vec<f64>,
}

impl HypothesisEcho {
    fn from_hypothesis(h: &LinearHypothesis) -> Self {
        let r = h.r_matrix();
        Self {
            r_matrix: (0..r.nrows())
                .map(|i| r.row(i).iter().cloned().collect())
                .collect(),
            r_vec: h.r_vec().iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestDiagnostics {
    /// Iterations of the conditioning trace.
    pub iterations: usize,
    /// Number of quadratic constraints intersected.
    pub constraints: usize,
    /// Chi-squared probability mass of the truncation set (may underflow to
    /// zero deep in the tail; diagnostic only).
    pub captured_mass: f64,
    /// True when the null fit exactly and the degenerate convention p = 1
    /// was applied.
    pub degenerate: bool,
}

impl TestResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn reject_at(&self, level: f64) -> bool {
        self.selective_p < level
    }
}

/// Chi-squared mass `P(W in S^2)` of a truncation set (diagnostic).
fn truncation_mass(df: usize, s: &TruncationSet) -> f64 {
    s.intervals()
        .iter()
        .map(|&(lo, hi)| {
            let a = chi2_sf(df, lo * lo).unwrap_or(0.0);
            let b = if hi.is_finite() {
                chi2_sf(df, hi * hi).unwrap_or(0.0)
            } else {
                0.0
            };
            (a - b).max(0.0)
        })
        .sum()
}

fn hypothesis_for_fit(fit: &GroupFit, h: &LinearHypothesis) -> Result<LinearHypothesis> {
    if h.coef_len() == fit.group_count * fit.k_model {
        return Ok(h.clone());
    }
    if fit.k_model > fit.k_slopes && h.coef_len() == fit.group_count * fit.k_slopes {
        // Slope-block hypothesis lifted onto the dummy-augmented coefficients.
        return h.expand_blocks(fit.group_count, fit.k_slopes, fit.k_model);
    }
    Err(Error::InvalidInput(format!(
        "hypothesis has {} columns; fit expects {} (or {} for the slope block)",
        h.coef_len(),
        fit.group_count * fit.k_model,
        fit.group_count * fit.k_slopes
    )))
}

/// End-to-end selective test: decompose, build the per-iteration quadratic
/// constraints, intersect them into the truncation set, and evaluate the
/// truncated chi-squared p-value alongside the naive one.
///
/// `input` supplies the unit coefficients for TSK fits (a panel is accepted
/// and unit OLS applied) and the raw panel for PCR/GFE fits (time dummies
/// are added internally for GFE). `cov` must be built on the fit's
/// coefficient blocks (K for TSK/PCR, K + T - 1 for GFE).
pub fn selective_test(
    fit: &GroupFit,
    input: FitInput<'_>,
    h: &LinearHypothesis,
    cov: &GroupCovariances,
) -> Result<TestResult> {
    let h = hypothesis_for_fit(fit, h)?;
    let (dec, constraints) = match fit.method {
        Method::Tsk => {
            let owned;
            let b = match input {
                FitInput::Coefs(b) => b,
                FitInput::Panel(d) => {
                    owned = unit_ols(d)?;
                    &owned
                }
            };
            let dec = decompose_tsk(b, fit, &h, cov)?;
            let cons = if dec.degenerate {
                Vec::new()
            } else {
                quadratic_constraints_tsk(&dec, &fit.trace)?
            };
            (dec, cons)
        }
        Method::Pcr | Method::Gfe => {
            let FitInput::Panel(d) = input else {
                return Err(Error::InvalidInput("PCR/GFE tests need the panel".into()));
            };
            let augmented;
            let d_model = if fit.method == Method::Gfe {
                augmented = d.augment_time_dummies()?;
                &augmented
            } else {
                d
            };
            let dec = decompose_pcr(d_model, fit, &h, cov)?;
            let cons = if dec.degenerate {
                Vec::new()
            } else {
                quadratic_constraints_pcr(&dec, &fit.trace, d_model)?
            };
            (dec, cons)
        }
    };

    let df = h.restrictions();
    let echo = HypothesisEcho::from_hypothesis(&h);
    if dec.degenerate {
        return Ok(TestResult {
            method: fit.method,
            statistic: 0.0,
            df,
            naive_p: 1.0,
            selective_p: 1.0,
            truncation: TruncationSet::full(),
            hypothesis: echo,
            diagnostics: TestDiagnostics {
                iterations: fit.trace.m(),
                constraints: 0,
                captured_mass: 1.0,
                degenerate: true,
            },
        });
    }

    let n_constraints = constraints.len();
    let truncation = feasible_set(&constraints, dec.phi_obs())?;
    let selective_p = truncated_chi2_pvalue(dec.h_obs, df, &truncation)?;
    let naive_p = chi2_sf(df, dec.h_obs)?;
    let captured_mass = truncation_mass(df, &truncation);
    Ok(TestResult {
        method: fit.method,
        statistic: dec.h_obs,
        df,
        naive_p,
        selective_p,
        truncation,
        hypothesis: echo,
        diagnostics: TestDiagnostics {
            iterations: fit.trace.m(),
            constraints: n_constraints,
            captured_mass,
            degenerate: false,
        },
    })
}

/// Naive Wald test: the chi-squared survival p-value that ignores the
/// estimated group structure.
pub fn naive_test(h_stat: f64, df: usize) -> Result<f64> {
    chi2_sf(df, h_stat)
}

/// Independent check of the truncation set: for each grid scale `phi`,
/// rebuild the perturbed data, replay every recorded assignment step with
/// centers refit on the perturbed data under the previous iteration's
/// assignment, and report whether all steps reproduce the recorded labels.
///
/// `input` must carry the panel (in the decomposition's space, so the
/// augmented panel for GFE) when the decomposition is in observation space;
/// it is not consulted for coefficient-space decompositions.
pub fn grid_truncation_oracle(
    dec: &Decomposition,
    trace: &FitTrace,
    input: FitInput<'_>,
    grid: &[f64],
) -> Result<Vec<bool>> {
    if grid.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidInput("grid scales must be finite and >= 0".into()));
    }
    match dec.space {
        PerturbSpace::Coef => Ok(grid
            .iter()
            .map(|&phi| replay_tsk(dec, trace, phi))
            .collect()),
        PerturbSpace::Obs => {
            let FitInput::Panel(d) = input else {
                return Err(Error::InvalidInput(
                    "observation-space oracle needs the panel".into(),
                ));
            };
            if d.k() * trace.assignments[0].group_count() != dec.alpha.len() {
                return Err(Error::InvalidInput(
                    "oracle panel does not match the decomposition (GFE needs the augmented panel)"
                        .into(),
                ));
            }
            grid.iter()
                .map(|&phi| replay_pcr(dec, trace, d, phi))
                .collect()
        }
    }
}

/// Tie rule shared with the estimators: keep the current label on a tie,
/// otherwise the smallest index.
fn argmin_keep_current(criteria: &[f64], current: usize) -> usize {
    let minv = criteria.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * minv.abs().max(1.0);
    if criteria[current] - minv <= tol {
        return current;
    }
    criteria.iter().position(|&c| c - minv <= tol).unwrap()
}

fn replay_tsk(dec: &Decomposition, trace: &FitTrace, phi: f64) -> bool {
    let k = dec.block;
    let data = dec.perturbed(phi);
    let n = trace.assignments[0].n();
    let groups = trace.assignments[0].group_count();
    for m in 1..=trace.m() {
        let prev = &trace.assignments[m - 1];
        let cur = &trace.assignments[m];
        // centers = group means of the perturbed rows under prev
        let sizes = prev.group_sizes();
        let mut centers = vec![DVector::zeros(k); groups];
        for i in 0..n {
            let g = prev.group_of(i);
            centers[g] += data.rows(i * k, k);
        }
        for g in 0..groups {
            if sizes[g] == 0 {
                return false;
            }
            centers[g] /= sizes[g] as f64;
        }
        for i in 0..n {
            let row = data.rows(i * k, k);
            let dists: Vec<f64> = (0..groups)
                .map(|g| (row - &centers[g]).norm_squared())
                .collect();
            if argmin_keep_current(&dists, prev.group_of(i)) != cur.group_of(i) {
                return false;
            }
        }
    }
    true
}

fn replay_pcr(dec: &Decomposition, trace: &FitTrace, d: &PanelDataset, phi: f64) -> Result<bool> {
    let t = d.t();
    let k = d.k();
    let y = dec.perturbed(phi);
    let n = trace.assignments[0].n();
    let groups = trace.assignments[0].group_count();
    for m in 1..=trace.m() {
        let prev = &trace.assignments[m - 1];
        let cur = &trace.assignments[m];
        let mut coefs: Vec<DVector<f64>> = Vec::with_capacity(groups);
        for g in 0..groups {
            let members = prev.members(g);
            if members.is_empty() {
                return Ok(false);
            }
            let mut gram = DMatrix::zeros(k, k);
            let mut xty = DVector::zeros(k);
            for &i in &members {
                gram += d.unit_gram(i);
                xty += d.x(i).transpose() * y.rows(i * t, t);
            }
            coefs.push(crate::linalg::solve_spd(&gram, &xty).map_err(|_| {
                Error::Singular(format!("oracle pooled Gram for group {}", g + 1))
            })?);
        }
        for i in 0..n {
            let yi = y.rows(i * t, t);
            let ssrs: Vec<f64> = (0..groups)
                .map(|g| (yi - d.x(i) * &coefs[g]).norm_squared())
                .collect();
            if argmin_keep_current(&ssrs, prev.group_of(i)) != cur.group_of(i) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Majority-overlap alignment of an estimated assignment to a reference
/// truth: returns the permutation `perm[estimated] = slot` maximizing the
/// overlap greedily (groups matched in decreasing overlap order).
pub fn align_groups_to(
    estimated: &GroupAssignment,
    truth: &GroupAssignment,
) -> Result<Vec<usize>> {
    if estimated.n() != truth.n() {
        return Err(Error::InvalidInput("assignments disagree on N".into()));
    }
    let ge = estimated.group_count();
    let gt = truth.group_count();
    let mut overlap = vec![vec![0usize; gt]; ge];
    for i in 0..estimated.n() {
        overlap[estimated.group_of(i)][truth.group_of(i)] += 1;
    }
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for e in 0..ge {
        for t in 0..gt {
            pairs.push((overlap[e][t], e, t));
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut perm = vec![usize::MAX; ge];
    let mut taken = vec![false; gt.max(ge)];
    for (_, e, t) in pairs {
        if perm[e] == usize::MAX && t < taken.len() && !taken[t] {
            perm[e] = t;
            taken[t] = true;
        }
    }
    // any estimated groups left over take the remaining slots
    let mut next_free = 0usize;
    for p in perm.iter_mut() {
        if *p == usize::MAX {
            while next_free < taken.len() && taken[next_free] {
                next_free += 1;
            }
            *p = next_free;
            if next_free < taken.len() {
                taken[next_free] = true;
            }
        }
    }
    Ok(perm)
}
