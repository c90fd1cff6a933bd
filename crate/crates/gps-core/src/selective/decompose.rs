//! Perturbation decompositions: express the data vector as
//! `phi * v + w` with `phi` the square root of the Wald statistic, `v` the
//! hypothesis-aligned direction, and `w` held fixed by the conditioning.
//!
//! The TSK path decomposes the stacked unit coefficients; the PCR/GFE path
//! decomposes the stacked outcomes, which determines the score vector
//! `s = X' y` used by the theory.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{CoefMatrix, GroupFit, Method};
use crate::linalg::{solve_spd, sym_inv_sqrt};
use crate::panel::{GroupAssignment, LinearHypothesis, PanelDataset};
use crate::variance::{hypothesis_cov, GroupCovariances};

/// Wald statistics below this are treated as an exact null fit, where the
/// perturbation direction is undefined and the test reports p = 1.
pub const DEGENERATE_H: f64 = 1e-14;

/// Which space the perturbation lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbSpace {
    /// Stacked unit coefficients (length N*K), TSK.
    Coef,
    /// Stacked outcomes (length N*T), PCR and GFE.
    Obs,
}

/// The computed decomposition `data = phi_obs * v + w` plus the pieces the
/// constraint builder needs.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub space: PerturbSpace,
    /// Perturbation direction (NK for coefficients, NT for outcomes).
    pub v: DVector<f64>,
    /// Invariant component in the same space.
    pub w: DVector<f64>,
    /// Unit direction of the standardized restriction deviation (length r).
    pub j_dir: DVector<f64>,
    /// Observed Wald statistic.
    pub h_obs: f64,
    /// Rows per unit block: K for coefficient space, T for outcome space.
    pub block: usize,
    /// True when the null fits exactly and no direction exists.
    pub degenerate: bool,
    /// Unconstrained stacked group coefficients used in the decomposition.
    pub alpha: DVector<f64>,
    /// Constrained stacked group coefficients.
    pub alpha_constrained: DVector<f64>,
}

impl Decomposition {
    /// Data vector rebuilt at perturbation scale `phi`.
    pub fn perturbed(&self, phi: f64) -> DVector<f64> {
        &self.v * phi + &self.w
    }

    /// Observed scale `sqrt(h_obs)`.
    pub fn phi_obs(&self) -> f64 {
        self.h_obs.sqrt()
    }

    /// Unit block `[v]_i` of the direction.
    pub fn v_block(&self, i: usize) -> DVector<f64> {
        self.v.rows(i * self.block, self.block).into_owned()
    }

    /// Unit block `[w]_i` of the invariant part.
    pub fn w_block(&self, i: usize) -> DVector<f64> {
        self.w.rows(i * self.block, self.block).into_owned()
    }
}

/// Wald statistic `(R alpha - r)' cov_R^{-1} (R alpha - r)`.
pub fn wald_statistic(
    alpha: &DVector<f64>,
    cov_r: &DMatrix<f64>,
    h: &LinearHypothesis,
) -> Result<f64> {
    let dev = h.deviation(alpha)?;
    if cov_r.nrows() != dev.len() || cov_r.ncols() != dev.len() {
        return Err(Error::InvalidInput("cov_R dimension mismatch".into()));
    }
    let inv_sqrt = sym_inv_sqrt(cov_r).map_err(|_| Error::SingularHypothesisCov)?;
    let z = &inv_sqrt * dev;
    Ok(z.norm_squared())
}

/// Constrained estimator
/// `alpha_R = alpha - W^{-1} R' [R W^{-1} R']^{-1} (R alpha - r)` for a
/// symmetric positive definite weight `W`; satisfies `R alpha_R = r`.
pub fn constrained_alpha(
    alpha: &DVector<f64>,
    h: &LinearHypothesis,
    weight: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let p = alpha.len();
    if weight.nrows() != p || weight.ncols() != p {
        return Err(Error::InvalidInput("weight dimension mismatch".into()));
    }
    let dev = h.deviation(alpha)?;
    // W^{-1} R' column by column.
    let r = h.r_matrix();
    let mut winv_rt = DMatrix::zeros(p, r.nrows());
    for row in 0..r.nrows() {
        let col = solve_spd(weight, &r.row(row).transpose())?;
        winv_rt.column_mut(row).copy_from(&col);
    }
    let bracket = r * &winv_rt;
    let bracket_inv_dev = solve_spd(&bracket, &dev)
        .map_err(|_| Error::Singular("constrained estimator bracket R W^-1 R'".into()))?;
    Ok(alpha - &winv_rt * bracket_inv_dev)
}

/// `Sigma_alpha R'` assembled blockwise (GK' x r).
fn cov_rt(cov: &GroupCovariances, h: &LinearHypothesis) -> DMatrix<f64> {
    let k = cov.k();
    let g = cov.group_count();
    let r = h.r_matrix();
    let mut out = DMatrix::zeros(g * k, r.nrows());
    for gi in 0..g {
        let rg = r.columns(gi * k, k); // r x k
        let prod = cov.group_block(gi) * rg.transpose(); // k x r
        out.view_mut((gi * k, 0), (k, r.nrows())).copy_from(&prod);
    }
    out
}

/// Shared core: from `alpha`, the hypothesis, and the working covariance,
/// compute the Wald statistic, direction, and group-coefficient movement
/// `alpha - alpha_R = C u` with `C = Sigma_alpha R'`.
struct CoreParts {
    h_obs: f64,
    j_dir: DVector<f64>,
    alpha_constrained: DVector<f64>,
    /// `C * Sigma_R^{-1/2} j_dir`; the group-space direction (GK').
    dir_gk: DVector<f64>,
    degenerate: bool,
}

fn core_parts(
    alpha: &DVector<f64>,
    h: &LinearHypothesis,
    cov: &GroupCovariances,
) -> Result<CoreParts> {
    let sigma_r = hypothesis_cov(cov, h)?;
    let inv_sqrt = sym_inv_sqrt(&sigma_r).map_err(|_| Error::SingularHypothesisCov)?;
    let dev = h.deviation(alpha)?;
    let z = &inv_sqrt * &dev;
    let h_obs = z.norm_squared();
    let c = cov_rt(cov, h);
    let r = h.restrictions();

    if h_obs <= DEGENERATE_H {
        return Ok(CoreParts {
            h_obs: 0.0,
            j_dir: DVector::zeros(r),
            alpha_constrained: alpha.clone(),
            dir_gk: DVector::zeros(alpha.len()),
            degenerate: true,
        });
    }
    let j_dir = &z / z.norm();
    // u = Sigma_R^{-1} dev computed through the same inverse square root so
    // that sqrt(h) * dir_gk reproduces alpha - alpha_R exactly.
    let u = &inv_sqrt * &z;
    let alpha_constrained = alpha - &c * &u;
    let dir_gk = &c * (&inv_sqrt * &j_dir);
    Ok(CoreParts {
        h_obs,
        j_dir,
        alpha_constrained,
        dir_gk,
        degenerate: false,
    })
}

/// Group means of the coefficient rows under `gamma` as a stacked GK vector.
fn group_means_stacked(b: &CoefMatrix, gamma: &GroupAssignment) -> Result<DVector<f64>> {
    let k = b.k();
    let sizes = gamma.group_sizes();
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyGroup { group: empty + 1 });
    }
    let mut out = DVector::zeros(gamma.group_count() * k);
    for i in 0..b.n() {
        let g = gamma.group_of(i);
        for j in 0..k {
            out[g * k + j] += b.values()[(i, j)];
        }
    }
    for g in 0..gamma.group_count() {
        let inv = 1.0 / sizes[g] as f64;
        for j in 0..k {
            out[g * k + j] *= inv;
        }
    }
    Ok(out)
}

/// Pooled per-group OLS coefficients as a stacked GK' vector.
pub fn pooled_group_alpha(d: &PanelDataset, gamma: &GroupAssignment) -> Result<DVector<f64>> {
    let k = d.k();
    let mut out = DVector::zeros(gamma.group_count() * k);
    for g in 0..gamma.group_count() {
        let members = gamma.members(g);
        if members.is_empty() {
            return Err(Error::EmptyGroup { group: g + 1 });
        }
        let mut gram = DMatrix::zeros(k, k);
        let mut xty = DVector::zeros(k);
        for &i in &members {
            gram += d.unit_gram(i);
            xty += d.x(i).transpose() * d.y(i);
        }
        let coef = solve_spd(&gram, &xty)
            .map_err(|_| Error::Singular(format!("pooled Gram matrix for group {}", g + 1)))?;
        out.rows_mut(g * k, k).copy_from(&coef);
    }
    Ok(out)
}

/// TSK decomposition of the stacked unit coefficients.
pub fn decompose_tsk(
    b: &CoefMatrix,
    fit: &GroupFit,
    h: &LinearHypothesis,
    cov: &GroupCovariances,
) -> Result<Decomposition> {
    if fit.method != Method::Tsk {
        return Err(Error::InvalidInput("decompose_tsk needs a TSK fit".into()));
    }
    if b.n() != fit.gamma.n() {
        return Err(Error::InvalidInput("coefficients and fit disagree on N".into()));
    }
    let k = b.k();
    if h.coef_len() != fit.group_count * k || cov.k() != k {
        return Err(Error::InvalidInput(
            "hypothesis/covariance dimensions do not match the fit".into(),
        ));
    }
    let gamma = &fit.gamma;
    let alpha = group_means_stacked(b, gamma)?;
    let parts = core_parts(&alpha, h, cov)?;

    let n = b.n();
    let stacked = b.stacked();
    let mut v = DVector::zeros(n * k);
    let mut w = DVector::zeros(n * k);
    for i in 0..n {
        let g = gamma.group_of(i);
        for j in 0..k {
            let idx = i * k + j;
            v[idx] = parts.dir_gk[g * k + j];
            // w = D alpha_R + (B - D alpha)
            w[idx] = parts.alpha_constrained[g * k + j] + stacked[idx] - alpha[g * k + j];
        }
    }
    Ok(Decomposition {
        space: PerturbSpace::Coef,
        v,
        w,
        j_dir: parts.j_dir,
        h_obs: parts.h_obs,
        block: k,
        degenerate: parts.degenerate,
        alpha,
        alpha_constrained: parts.alpha_constrained,
    })
}

/// PCR/GFE decomposition of the stacked outcomes. For GFE fits, pass the
/// dummy-augmented panel (the orchestrator in [`crate::selective`] does so).
pub fn decompose_pcr(
    d: &PanelDataset,
    fit: &GroupFit,
    h: &LinearHypothesis,
    cov: &GroupCovariances,
) -> Result<Decomposition> {
    if fit.method == Method::Tsk {
        return Err(Error::InvalidInput("decompose_pcr needs a PCR or GFE fit".into()));
    }
    if d.n() != fit.gamma.n() {
        return Err(Error::InvalidInput("panel and fit disagree on N".into()));
    }
    let k = d.k();
    if k != fit.k_model {
        return Err(Error::InvalidInput(format!(
            "panel has K = {k} but fit was computed with K' = {} (GFE fits need the augmented panel)",
            fit.k_model
        )));
    }
    if h.coef_len() != fit.group_count * k || cov.k() != k {
        return Err(Error::InvalidInput(
            "hypothesis/covariance dimensions do not match the fit".into(),
        ));
    }
    let gamma = &fit.gamma;
    let alpha = pooled_group_alpha(d, gamma)?;
    let parts = core_parts(&alpha, h, cov)?;

    let n = d.n();
    let t = d.t();
    let mut v = DVector::zeros(n * t);
    let mut w = DVector::zeros(n * t);
    for i in 0..n {
        let g = gamma.group_of(i);
        let xi = d.x(i);
        let dir_g = parts.dir_gk.rows(g * k, k);
        let alpha_g = alpha.rows(g * k, k);
        let alpha_rg = parts.alpha_constrained.rows(g * k, k);
        let vi = xi * dir_g;
        // w = X alpha_R + (y - X alpha)
        let wi = xi * alpha_rg + d.y(i) - xi * alpha_g;
        v.rows_mut(i * t, t).copy_from(&vi);
        w.rows_mut(i * t, t).copy_from(&wi);
    }
    Ok(Decomposition {
        space: PerturbSpace::Obs,
        v,
        w,
        j_dir: parts.j_dir,
        h_obs: parts.h_obs,
        block: t,
        degenerate: parts.degenerate,
        alpha,
        alpha_constrained: parts.alpha_constrained,
    })
}

/// Score vector `s = X' y` (stacked by unit, length NK).
pub fn score_vector(d: &PanelDataset, y: &DVector<f64>) -> DVector<f64> {
    let (n, t, k) = (d.n(), d.t(), d.k());
    let mut s = DVector::zeros(n * k);
    for i in 0..n {
        let yi = y.rows(i * t, t);
        let si = d.x(i).transpose() * yi;
        s.rows_mut(i * k, k).copy_from(&si);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{pcr_fit, tsk_fit};
    use crate::panel::PanelDataset;
    use crate::variance::{pesaran_group_cov, theoretical_cov};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wald_scalar_hand_value() {
        // R = (1, -1), alpha = (3, 1), cov_R = 2 -> h = 4 / 2 = 2
        let h = LinearHypothesis::new(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let alpha = DVector::from_vec(vec![3.0, 1.0]);
        let cov_r = DMatrix::from_row_slice(1, 1, &[2.0]);
        assert_relative_eq!(wald_statistic(&alpha, &cov_r, &h).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn wald_zero_when_null_exact() {
        let h = LinearHypothesis::new(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let alpha = DVector::from_vec(vec![2.0, 2.0]);
        let cov_r = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert_relative_eq!(wald_statistic(&alpha, &cov_r, &h).unwrap(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn wald_invariant_to_restriction_rescaling() {
        let alpha = DVector::from_vec(vec![3.0, 1.0]);
        for &c in &[2.0, -0.5, 10.0] {
            let h1 = LinearHypothesis::new(
                DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
                DVector::from_vec(vec![0.5]),
            )
            .unwrap();
            let h2 = LinearHypothesis::new(
                DMatrix::from_row_slice(1, 2, &[c, -c]),
                DVector::from_vec(vec![0.5 * c]),
            )
            .unwrap();
            // cov_R transforms as c^2 under scaling of R
            let cov1 = DMatrix::from_row_slice(1, 1, &[2.0]);
            let cov2 = DMatrix::from_row_slice(1, 1, &[2.0 * c * c]);
            assert_relative_eq!(
                wald_statistic(&alpha, &cov1, &h1).unwrap(),
                wald_statistic(&alpha, &cov2, &h2).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn constrained_alpha_identity_weight() {
        let h = LinearHypothesis::new(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let alpha = DVector::from_vec(vec![3.0, 1.0]);
        let ar = constrained_alpha(&alpha, &h, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(ar[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(ar[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn constrained_alpha_weighted_hand_value() {
        // weight = diag(3, 1): alpha_R = (3,1) - (0.5, -1.5) = (2.5, 2.5)
        let h = LinearHypothesis::new(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let alpha = DVector::from_vec(vec![3.0, 1.0]);
        let weight = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let ar = constrained_alpha(&alpha, &h, &weight).unwrap();
        assert_relative_eq!(ar[0], 2.5, epsilon = 1e-12);
        assert_relative_eq!(ar[1], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn constrained_alpha_feasible_point_fixed() {
        let h = LinearHypothesis::new(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let alpha = DVector::from_vec(vec![2.0, 2.0]);
        let weight = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 7.0]));
        let ar = constrained_alpha(&alpha, &h, &weight).unwrap();
        assert_relative_eq!((ar - &alpha).norm(), 0.0, epsilon = 1e-12);
    }

    fn random_coefs(n: usize, k: usize, seed: u64) -> CoefMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        CoefMatrix::new(DMatrix::from_row_slice(n, k, &vals)).unwrap()
    }

    fn slope_equality(groups: usize, k: usize) -> LinearHypothesis {
        // alpha_1 = alpha_2 (first two groups, all coefficients)
        let mut r = DMatrix::zeros(k, groups * k);
        for j in 0..k {
            r[(j, j)] = 1.0;
            r[(j, k + j)] = -1.0;
        }
        LinearHypothesis::new(r, DVector::zeros(k)).unwrap()
    }

    #[test]
    fn tsk_reconstruction_identity() {
        let b = random_coefs(12, 2, 3);
        let fit = tsk_fit(&b, 2, 16, 9).unwrap();
        let cov = pesaran_group_cov(&b, &fit.gamma).unwrap();
        let h = slope_equality(2, 2);
        let dec = decompose_tsk(&b, &fit, &h, &cov).unwrap();
        let rebuilt = dec.perturbed(dec.phi_obs());
        let orig = b.stacked();
        assert!(
            (&rebuilt - &orig).norm() <= 1e-8 * orig.norm().max(1.0),
            "reconstruction failed: {}",
            (&rebuilt - &orig).norm()
        );
        assert_relative_eq!(dec.j_dir.norm(), 1.0, epsilon = 1e-12);
        // constrained estimates satisfy the restriction
        assert_relative_eq!(
            h.deviation(&dec.alpha_constrained).unwrap().norm(),
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn pcr_reconstruction_and_score_identity() {
        let n = 8;
        let t = 6;
        let k = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut y = Vec::new();
        let mut x = Vec::new();
        for i in 0..n {
            let a: [f64; 2] = if i < 4 { [2.0, 1.0] } else { [4.0, 2.0] };
            for _ in 0..t {
                let x1: f64 = rng.gen_range(-1.0..1.0);
                let x2: f64 = rng.gen_range(-1.0..1.0);
                x.push(x1);
                x.push(x2);
                y.push(a[0] * x1 + a[1] * x2 + 0.5 * rng.gen_range(-1.0..1.0));
            }
        }
        let d = PanelDataset::from_arrays(n, t, k, &y, &x).unwrap();
        let fit = pcr_fit(&d, 2, 16, 2).unwrap();
        let cov = theoretical_cov(&DMatrix::identity(2, 2), 1.0, &fit.gamma).unwrap();
        let h = slope_equality(2, 2);
        let dec = decompose_pcr(&d, &fit, &h, &cov).unwrap();
        let rebuilt = dec.perturbed(dec.phi_obs());
        let orig = d.stacked_y();
        assert!((&rebuilt - &orig).norm() <= 1e-8 * orig.norm().max(1.0));
        // score-space identity s(phi) = X' y(phi) at the observed scale
        let s_orig = score_vector(&d, &orig);
        let s_rebuilt = score_vector(&d, &rebuilt);
        assert!((&s_rebuilt - &s_orig).norm() <= 1e-8 * s_orig.norm().max(1.0));
    }

    #[test]
    fn degenerate_direction_flagged() {
        // All rows identical: group means equal, H0 exact, h = 0.
        let b = CoefMatrix::new(DMatrix::from_row_slice(
            4,
            1,
            &[1.0, 1.0, 1.0, 1.0],
        ))
        .unwrap();
        let gamma = GroupAssignment::new(vec![0, 0, 1, 1], 2).unwrap();
        let fit = GroupFit {
            method: Method::Tsk,
            group_count: 2,
            trace: crate::estimators::FitTrace {
                assignments: vec![gamma.clone(), gamma.clone()],
                centers: vec![],
                objectives: vec![0.0, 0.0],
                converged: true,
            },
            gamma,
            alpha: DVector::from_vec(vec![1.0, 1.0]),
            objective: 0.0,
            restarts: 1,
            winning_restart: 0,
            k_model: 1,
            k_slopes: 1,
        };
        let h = LinearHypothesis::new(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let cov = theoretical_cov(&DMatrix::identity(1, 1), 1.0, &fit.gamma).unwrap();
        let dec = decompose_tsk(&b, &fit, &h, &cov).unwrap();
        assert!(dec.degenerate);
        assert_eq!(dec.h_obs, 0.0);
        // B = w exactly in the degenerate case
        assert_relative_eq!((&dec.w - b.stacked()).norm(), 0.0, epsilon = 1e-12);
    }
}
