//! Per-iteration quadratic inequalities whose intersection is the truncation
//! set. Each recorded assignment step contributes, for every unit and every
//! competing group, one inequality saying the assigned group's criterion is
//! no larger than the competitor's along the perturbation line.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::FitTrace;
use crate::linalg::solve_spd;
use crate::panel::{GroupAssignment, PanelDataset};
use crate::selective::decompose::{Decomposition, PerturbSpace};
use crate::selective::truncation::QuadraticConstraint;

/// Group means of the unit blocks of `vec` under `gamma` (stacked G x block).
fn block_group_means(
    vec: &DVector<f64>,
    gamma: &GroupAssignment,
    block: usize,
) -> Result<Vec<DVector<f64>>> {
    let sizes = gamma.group_sizes();
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyGroup { group: empty + 1 });
    }
    let mut means = vec![DVector::zeros(block); gamma.group_count()];
    for i in 0..gamma.n() {
        let g = gamma.group_of(i);
        means[g] += vec.rows(i * block, block);
    }
    for (g, m) in means.iter_mut().enumerate() {
        *m /= sizes[g] as f64;
    }
    Ok(means)
}

/// TSK constraints: for each iteration `m >= 1`, centers are the group means
/// of the previous iteration's assignment, recomputed from the perturbed
/// coefficients `phi v + w`; unit `i` must prefer its recorded group over
/// every competitor. Emits `M * N * (G - 1)` constraints.
pub fn quadratic_constraints_tsk(
    dec: &Decomposition,
    trace: &FitTrace,
) -> Result<Vec<QuadraticConstraint>> {
    if dec.space != PerturbSpace::Coef {
        return Err(Error::InvalidInput(
            "TSK constraints need a coefficient-space decomposition".into(),
        ));
    }
    let k = dec.block;
    let m_total = trace.m();
    let n = trace.assignments[0].n();
    let groups = trace.assignments[0].group_count();
    let mut out = Vec::with_capacity(m_total * n * groups.saturating_sub(1));

    for m in 1..=m_total {
        let prev = &trace.assignments[m - 1];
        let cur = &trace.assignments[m];
        let v_means = block_group_means(&dec.v, prev, k)?;
        let w_means = block_group_means(&dec.w, prev, k)?;
        for i in 0..n {
            let vi = dec.v_block(i);
            let wi = dec.w_block(i);
            let assigned = cur.group_of(i);
            // distance quadratic to each candidate center
            let coef = |g: usize| -> (f64, f64, f64) {
                let dv = &vi - &v_means[g];
                let dw = &wi - &w_means[g];
                (dv.norm_squared(), 2.0 * dv.dot(&dw), dw.norm_squared())
            };
            let (a1, b1, c1) = coef(assigned);
            for g in 0..groups {
                if g == assigned {
                    continue;
                }
                let (a2, b2, c2) = coef(g);
                out.push(QuadraticConstraint::new(
                    a1 - a2,
                    b1 - b2,
                    c1 - c2,
                    m,
                    i,
                    g,
                    c1.max(c2),
                ));
            }
        }
    }
    Ok(out)
}

/// Pooled OLS coefficients per group of an arbitrary outcome vector under
/// `gamma`, returned stacked per group.
fn pooled_coefs_of(
    d: &PanelDataset,
    gamma: &GroupAssignment,
    y: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let k = d.k();
    let t = d.t();
    let mut out = Vec::with_capacity(gamma.group_count());
    for g in 0..gamma.group_count() {
        let members = gamma.members(g);
        if members.is_empty() {
            return Err(Error::EmptyGroup { group: g + 1 });
        }
        let mut gram = DMatrix::zeros(k, k);
        let mut xty = DVector::zeros(k);
        for &i in &members {
            gram += d.unit_gram(i);
            xty += d.x(i).transpose() * y.rows(i * t, t);
        }
        out.push(solve_spd(&gram, &xty).map_err(|_| {
            Error::Singular(format!("pooled Gram matrix for group {}", g + 1))
        })?);
    }
    Ok(out)
}

/// PCR/GFE constraints: for each iteration `m >= 1`, pooled coefficients are
/// refit on the perturbed outcomes under the previous assignment; unit `i`
/// must have the smallest SSR at its recorded group. Because the perturbed
/// outcome is linear in `phi` and so are the refit coefficients, each SSR is
/// an exact quadratic in `phi`.
pub fn quadratic_constraints_pcr(
    dec: &Decomposition,
    trace: &FitTrace,
    d: &PanelDataset,
) -> Result<Vec<QuadraticConstraint>> {
    if dec.space != PerturbSpace::Obs {
        return Err(Error::InvalidInput(
            "PCR constraints need an observation-space decomposition".into(),
        ));
    }
    if dec.block != d.t() {
        return Err(Error::InvalidInput("decomposition block size is not T".into()));
    }
    let t = d.t();
    let m_total = trace.m();
    let n = trace.assignments[0].n();
    let groups = trace.assignments[0].group_count();
    let mut out = Vec::with_capacity(m_total * n * groups.saturating_sub(1));

    for m in 1..=m_total {
        let prev = &trace.assignments[m - 1];
        let cur = &trace.assignments[m];
        let a_v = pooled_coefs_of(d, prev, &dec.v)?;
        let a_w = pooled_coefs_of(d, prev, &dec.w)?;
        for i in 0..n {
            let xi = d.x(i);
            let vi = dec.v.rows(i * t, t);
            let wi = dec.w.rows(i * t, t);
            let assigned = cur.group_of(i);
            let coef = |g: usize| -> (f64, f64, f64) {
                let rv = vi - xi * &a_v[g];
                let rw = wi - xi * &a_w[g];
                (rv.norm_squared(), 2.0 * rv.dot(&rw), rw.norm_squared())
            };
            let (a1, b1, c1) = coef(assigned);
            for g in 0..groups {
                if g == assigned {
                    continue;
                }
                let (a2, b2, c2) = coef(g);
                out.push(QuadraticConstraint::new(
                    a1 - a2,
                    b1 - b2,
                    c1 - c2,
                    m,
                    i,
                    g,
                    c1.max(c2),
                ));
            }
        }
    }
    Ok(out)
}
