//! Truncated chi-squared p-values, computed throughout in log space via
//! differences of log survival functions per interval.

use crate::error::{Error, Result};
use crate::selective::truncation::TruncationSet;
use crate::stats::{ln_1m_exp, ln_chi2_sf, ln_sum_exp};

/// log of `P(W in [a, b])` for `W ~ chi^2_df`, with `b` possibly infinite.
fn ln_interval_mass(df: usize, a: f64, b: f64) -> Result<f64> {
    if b <= a {
        return Ok(f64::NEG_INFINITY);
    }
    let ln_qa = ln_chi2_sf(df, a)?;
    let ln_qb = ln_chi2_sf(df, b)?;
    if ln_qb == f64::NEG_INFINITY {
        return Ok(ln_qa);
    }
    let ratio = ln_qb - ln_qa;
    if ratio >= 0.0 {
        // Masses this small vanish at double precision.
        return Ok(f64::NEG_INFINITY);
    }
    Ok(ln_qa + ln_1m_exp(ratio))
}

/// Selective p-value `P(W >= h, W in S^2) / P(W in S^2)` for `W ~ chi^2_r`,
/// where `S^2 = { phi^2 : phi in S }` and `S` lives on the phi scale.
pub fn truncated_chi2_pvalue(h: f64, r: usize, s: &TruncationSet) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidInput("degrees of freedom must be >= 1".into()));
    }
    if !h.is_finite() || h < 0.0 {
        return Err(Error::InvalidInput(format!("statistic must be finite and >= 0, got {h}")));
    }
    if s.is_empty() {
        return Err(Error::ZeroMassTruncation);
    }

    let mut ln_den_terms = Vec::with_capacity(s.intervals().len());
    let mut ln_num_terms = Vec::with_capacity(s.intervals().len());
    for &(lo, hi) in s.intervals() {
        let a = lo * lo;
        let b = if hi.is_finite() { hi * hi } else { f64::INFINITY };
        ln_den_terms.push(ln_interval_mass(r, a, b)?);
        ln_num_terms.push(ln_interval_mass(r, a.max(h), b)?);
    }
    let ln_den = ln_sum_exp(&ln_den_terms);
    if ln_den == f64::NEG_INFINITY {
        return Err(Error::ZeroMassTruncation);
    }
    let ln_num = ln_sum_exp(&ln_num_terms);
    Ok((ln_num - ln_den).exp().clamp(0.0, 1.0))
}
