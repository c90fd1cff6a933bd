//! Covariance estimators for the stacked group coefficients and assembly of
//! the hypothesis covariance `R Sigma R'`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::CoefMatrix;
use crate::linalg::{clip_psd, sym_inv, symmetrize};
use crate::panel::{GroupAssignment, LinearHypothesis, PanelDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMethod {
    Pesaran,
    DriscollKraay,
    Theoretical,
}

/// Block-diagonal covariance of the stacked group coefficients: one
/// K' x K' block per group.
#[derive(Debug, Clone)]
pub struct GroupCovariances {
    per_group: Vec<DMatrix<f64>>,
    method: CovMethod,
}

impl GroupCovariances {
    pub fn new(per_group: Vec<DMatrix<f64>>, method: CovMethod) -> Result<Self> {
        if per_group.is_empty() {
            return Err(Error::InvalidInput("need at least one group block".into()));
        }
        let k = per_group[0].nrows();
        for (g, b) in per_group.iter().enumerate() {
            if b.nrows() != k || b.ncols() != k {
                return Err(Error::InvalidInput(format!(
                    "group {} covariance block is not {k} x {k}",
                    g + 1
                )));
            }
            let asym = (b - b.transpose()).abs().max();
            if asym > 1e-10 * b.abs().max().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "group {} covariance block is not symmetric",
                    g + 1
                )));
            }
        }
        Ok(Self { per_group, method })
    }

    pub fn method(&self) -> CovMethod {
        self.method
    }

    pub fn group_count(&self) -> usize {
        self.per_group.len()
    }

    /// Block size K'.
    pub fn k(&self) -> usize {
        self.per_group[0].nrows()
    }

    pub fn group_block(&self, g: usize) -> &DMatrix<f64> {
        &self.per_group[g]
    }

    /// Full block-diagonal GK' x GK' matrix.
    pub fn block_diagonal(&self) -> DMatrix<f64> {
        let k = self.k();
        let g = self.group_count();
        let mut out = DMatrix::zeros(g * k, g * k);
        for (gi, b) in self.per_group.iter().enumerate() {
            out.view_mut((gi * k, gi * k), (k, k)).copy_from(b);
        }
        out
    }

    /// Diagnostic JSON: method tag, block size, and each block's entries
    /// in column-major order.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct CovJson {
            method: CovMethod,
            k: usize,
            per_group: Vec<Vec<f64>>,
        }
        let j = CovJson {
            method: self.method,
            k: self.k(),
            per_group: self
                .per_group
                .iter()
                .map(|b| b.iter().cloned().collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }
}

/// Pesaran mean-group covariance: per-group sample covariance of the unit
/// coefficients scaled by the group size,
/// `[n_g (n_g - 1)]^{-1} sum_{i in g} (beta_i - alpha_g)(beta_i - alpha_g)'`.
pub fn pesaran_group_cov(b: &CoefMatrix, gamma: &GroupAssignment) -> Result<GroupCovariances> {
    if gamma.n() != b.n() {
        return Err(Error::InvalidInput("assignment and coefficients disagree on N".into()));
    }
    let k = b.k();
    let mut blocks = Vec::with_capacity(gamma.group_count());
    for g in 0..gamma.group_count() {
        let members = gamma.members(g);
        let ng = members.len();
        if ng < 2 {
            return Err(Error::SingletonGroup { group: g + 1 });
        }
        let mut mean = DVector::zeros(k);
        for &i in &members {
            mean += b.row(i);
        }
        mean /= ng as f64;
        let mut acc = DMatrix::zeros(k, k);
        for &i in &members {
            let dev = b.row(i) - &mean;
            acc += &dev * dev.transpose();
        }
        acc /= (ng * (ng - 1)) as f64;
        blocks.push(symmetrize(&acc));
    }
    GroupCovariances::new(blocks, CovMethod::Pesaran)
}

/// Bartlett kernel weight `k(|t - s| / L)`, 1 - x on [0, 1] and 0 beyond.
pub fn bartlett_weight(lag: usize, bandwidth: usize) -> f64 {
    let x = lag as f64 / bandwidth as f64;
    if x <= 1.0 {
        1.0 - x
    } else {
        0.0
    }
}

/// Newey-West-style default bandwidth `floor(4 (T/100)^{2/9}) + 1`.
pub fn default_bandwidth(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize + 1
}

/// Driscoll-Kraay covariance of the pooled per-group coefficients:
/// `Q_g^{-1} [ T^{-2} sum_{i,j,t,s} (w_ts / n_g^2) X_it X_js' U_it U_js ] Q_g^{-1}`
/// with `Q_g = (n_g T)^{-1} sum_{i,t} X_it X_it'` and residuals
/// `U_it = Y_it - X_it' alpha_{g_i}`.
///
/// Blocks are eigenvalue-clipped at zero (with a warning) when the weighted
/// double sum dips numerically below positive semidefinite.
pub fn driscoll_kraay_cov(
    d: &PanelDataset,
    gamma: &GroupAssignment,
    alpha: &DVector<f64>,
    bandwidth: usize,
) -> Result<GroupCovariances> {
    if gamma.n() != d.n() {
        return Err(Error::InvalidInput("assignment and panel disagree on N".into()));
    }
    if bandwidth == 0 {
        return Err(Error::InvalidInput("bandwidth must be >= 1".into()));
    }
    let k = d.k();
    let g_count = gamma.group_count();
    if alpha.len() != g_count * k {
        return Err(Error::InvalidInput(format!(
            "alpha length {} is not G * K = {}",
            alpha.len(),
            g_count * k
        )));
    }
    let t = d.t();
    let mut blocks = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let members = gamma.members(g);
        if members.is_empty() {
            return Err(Error::EmptyGroup { group: g + 1 });
        }
        let ng = members.len() as f64;
        let alpha_g = alpha.rows(g * k, k).into_owned();

        // Cross-sectional score sums h_t = sum_{i in g} X_it U_it.
        let mut h: DMatrix<f64> = DMatrix::zeros(k, t);
        let mut q: DMatrix<f64> = DMatrix::zeros(k, k);
        for &i in &members {
            let xi = d.x(i);
            q += xi.transpose() * xi;
            let fitted = xi * &alpha_g;
            let resid = d.y(i) - fitted;
            for ti in 0..t {
                for kk in 0..k {
                    h[(kk, ti)] += xi[(ti, kk)] * resid[ti];
                }
            }
        }
        q /= ng * t as f64;

        // Bartlett-weighted long-run sum over lags.
        let mut inner: DMatrix<f64> = &h * h.transpose(); // lag 0
        let max_lag = bandwidth.min(t.saturating_sub(1));
        for lag in 1..=max_lag {
            let w = bartlett_weight(lag, bandwidth);
            if w == 0.0 {
                continue;
            }
            let mut acc: DMatrix<f64> = DMatrix::zeros(k, k);
            for ti in lag..t {
                let ht = h.column(ti);
                let hs = h.column(ti - lag);
                acc += ht * hs.transpose();
            }
            inner += w * (&acc + acc.transpose());
        }
        inner /= (t * t) as f64 * ng * ng;

        let q_inv = sym_inv(&q).map_err(|_| Error::Singular(format!(
            "Driscoll-Kraay Q matrix for group {}",
            g + 1
        )))?;
        let block = &q_inv * inner * &q_inv;
        let (clipped, did_clip) = clip_psd(&block);
        if did_clip {
            log::warn!(
                "Driscoll-Kraay block for group {} had negative eigenvalues; clipped to PSD",
                g + 1
            );
        }
        blocks.push(clipped);
    }
    GroupCovariances::new(blocks, CovMethod::DriscollKraay)
}

/// Known-variance covariance `sigma^2 n_g^{-1} Sigma^{-1}` per group, for
/// the homoskedastic common-Gram setting.
pub fn theoretical_cov(
    sigma_xx: &DMatrix<f64>,
    sigma2: f64,
    gamma: &GroupAssignment,
) -> Result<GroupCovariances> {
    if sigma2 <= 0.0 || !sigma2.is_finite() {
        return Err(Error::InvalidInput("sigma^2 must be positive".into()));
    }
    if sigma_xx.nrows() != sigma_xx.ncols() {
        return Err(Error::InvalidInput("Sigma must be square".into()));
    }
    let inv = sym_inv(sigma_xx).map_err(|_| Error::Singular("Sigma".into()))?;
    let sizes = gamma.group_sizes();
    let mut blocks = Vec::with_capacity(gamma.group_count());
    for g in 0..gamma.group_count() {
        if sizes[g] == 0 {
            return Err(Error::EmptyGroup { group: g + 1 });
        }
        blocks.push(symmetrize(&(&inv * (sigma2 / sizes[g] as f64))));
    }
    GroupCovariances::new(blocks, CovMethod::Theoretical)
}

/// Hypothesis covariance `R bdiag(Sigma_g) R'`, symmetrized. Errors when
/// numerically singular (smallest eigenvalue below `1e-12` of the largest).
pub fn hypothesis_cov(cov: &GroupCovariances, h: &LinearHypothesis) -> Result<DMatrix<f64>> {
    let gk = cov.group_count() * cov.k();
    if h.coef_len() != gk {
        return Err(Error::InvalidInput(format!(
            "hypothesis expects {} coefficients but covariance has {gk}",
            h.coef_len()
        )));
    }
    let r = h.r_matrix();
    // R bdiag R' without forming the dense block diagonal.
    let k = cov.k();
    let mut out = DMatrix::zeros(r.nrows(), r.nrows());
    for g in 0..cov.group_count() {
        let rg = r.columns(g * k, k);
        out += rg * cov.group_block(g) * rg.transpose();
    }
    let out = symmetrize(&out);
    let eig = out.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if max_ev.is_nan() || max_ev <= 0.0 || min_ev < 1e-12 * max_ev {
        return Err(Error::SingularHypothesisCov);
    }
    Ok(out)
}
