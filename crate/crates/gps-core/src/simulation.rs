//! Monte Carlo engine: the two-cluster panel data-generating processes and
//! the rejection-rate study comparing predetermined, naive, and conditional
//! procedures at a nominal level.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared as ChiSquaredDist, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{derive_seed, gfe_fit, pcr_fit, tsk_fit, unit_ols, FitInput, GroupFit, Method};
use crate::panel::{GroupAssignment, LinearHypothesis, PanelDataset};
use crate::selective::{align_groups_to, selective_test, wald_statistic};
use crate::stats::chi2_sf;
use crate::variance::{
    default_bandwidth, driscoll_kraay_cov, hypothesis_cov, pesaran_group_cov, CovMethod,
    GroupCovariances,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dgp {
    Dgp1,
    Dgp2,
    Dgp3,
}

impl Dgp {
    /// Group slope vectors `(alpha_1, alpha_2)`.
    pub fn slopes(self) -> ([f64; 2], [f64; 2]) {
        match self {
            Dgp::Dgp1 => ([2.0, 1.0], [2.0, 1.0]),
            Dgp::Dgp2 => ([2.0, 1.0], [4.0, 1.0]),
            Dgp::Dgp3 => ([2.0, 1.0], [4.0, 2.0]),
        }
    }
}

impl std::fmt::Display for Dgp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dgp::Dgp1 => write!(f, "dgp1"),
            Dgp::Dgp2 => write!(f, "dgp2"),
            Dgp::Dgp3 => write!(f, "dgp3"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Baseline,
    UnitFe,
    Gfe,
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Case::Baseline => write!(f, "baseline"),
            Case::UnitFe => write!(f, "unit_fe"),
            Case::Gfe => write!(f, "gfe"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Predetermined,
    NaiveTsk,
    NaivePcr,
    NaiveGfe,
    ConditionalTsk,
    ConditionalPcr,
    ConditionalGfe,
}

impl Procedure {
    fn method(self) -> Option<Method> {
        match self {
            Procedure::Predetermined => None,
            Procedure::NaiveTsk | Procedure::ConditionalTsk => Some(Method::Tsk),
            Procedure::NaivePcr | Procedure::ConditionalPcr => Some(Method::Pcr),
            Procedure::NaiveGfe | Procedure::ConditionalGfe => Some(Method::Gfe),
        }
    }
}

impl std::fmt::Display for Procedure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Procedure::Predetermined => "predetermined",
            Procedure::NaiveTsk => "naive_tsk",
            Procedure::NaivePcr => "naive_pcr",
            Procedure::NaiveGfe => "naive_gfe",
            Procedure::ConditionalTsk => "conditional_tsk",
            Procedure::ConditionalPcr => "conditional_pcr",
            Procedure::ConditionalGfe => "conditional_gfe",
        };
        write!(f, "{s}")
    }
}

/// The three hypotheses of the study, stated on two groups of two slopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum StudyHypothesis {
    /// All slopes equal across the two groups.
    H01,
    /// Second slope equal across the two groups.
    H02,
    /// First slope zero in both groups.
    H03,
}

impl StudyHypothesis {
    pub fn build(self, k: usize) -> Result<LinearHypothesis> {
        match self {
            StudyHypothesis::H01 => {
                let mut r = DMatrix::zeros(k, 2 * k);
                for j in 0..k {
                    r[(j, j)] = 1.0;
                    r[(j, k + j)] = -1.0;
                }
                LinearHypothesis::new(r, DVector::zeros(k))
            }
            StudyHypothesis::H02 => {
                let mut r = DMatrix::zeros(1, 2 * k);
                r[(0, 1)] = 1.0;
                r[(0, k + 1)] = -1.0;
                LinearHypothesis::new(r, DVector::zeros(1))
            }
            StudyHypothesis::H03 => {
                let mut r = DMatrix::zeros(2, 2 * k);
                r[(0, 0)] = 1.0;
                r[(1, k)] = 1.0;
                LinearHypothesis::new(r, DVector::zeros(2))
            }
        }
    }

    /// Is the hypothesis true under the DGP (size row) or false (power row)?
    pub fn is_true_under(self, dgp: Dgp) -> bool {
        let (a1, a2) = dgp.slopes();
        match self {
            StudyHypothesis::H01 => a1 == a2,
            StudyHypothesis::H02 => a1[1] == a2[1],
            StudyHypothesis::H03 => a1[0] == 0.0 && a2[0] == 0.0,
        }
    }
}

impl std::fmt::Display for StudyHypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StudyHypothesis::H01 => write!(f, "h01"),
            StudyHypothesis::H02 => write!(f, "h02"),
            StudyHypothesis::H03 => write!(f, "h03"),
        }
    }
}

fn default_rho() -> f64 {
    0.5
}
fn default_rho_s() -> f64 {
    0.2
}
fn default_ell() -> f64 {
    0.3
}
fn default_x_corr() -> f64 {
    0.4
}
fn default_level() -> f64 {
    0.05
}
fn default_restarts() -> usize {
    50
}
fn default_hypotheses() -> Vec<StudyHypothesis> {
    vec![StudyHypothesis::H01, StudyHypothesis::H02, StudyHypothesis::H03]
}
fn default_procedures() -> Vec<Procedure> {
    vec![
        Procedure::Predetermined,
        Procedure::NaiveTsk,
        Procedure::NaivePcr,
        Procedure::NaiveGfe,
        Procedure::ConditionalTsk,
        Procedure::ConditionalPcr,
        Procedure::ConditionalGfe,
    ]
}
fn default_tsk_cov() -> CovMethod {
    CovMethod::Pesaran
}
fn default_pcr_cov() -> CovMethod {
    CovMethod::DriscollKraay
}

/// Configuration of one Monte Carlo scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    pub reps: usize,
    pub seed: u64,
    pub dgp: Dgp,
    pub case: Case,
    #[serde(default = "default_rho")]
    pub rho_u: f64,
    #[serde(default = "default_rho")]
    pub rho_x: f64,
    #[serde(default = "default_rho_s")]
    pub rho_s: f64,
    #[serde(default = "default_ell")]
    pub ell: f64,
    #[serde(default = "default_x_corr")]
    pub x_innov_corr: f64,
    /// True cluster sizes; defaults to `(N/3, 2N/3)`.
    #[serde(default)]
    pub cluster_sizes: Option<(usize, usize)>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Driscoll-Kraay bandwidth; defaults to `floor(4 (T/100)^{2/9}) + 1`.
    #[serde(default)]
    pub bandwidth: Option<usize>,
    #[serde(default = "default_hypotheses")]
    pub hypotheses: Vec<StudyHypothesis>,
    #[serde(default = "default_procedures")]
    pub procedures: Vec<Procedure>,
    #[serde(default = "default_tsk_cov")]
    pub tsk_covariance: CovMethod,
    #[serde(default = "default_pcr_cov")]
    pub pcr_covariance: CovMethod,
}

impl SimConfig {
    pub fn cluster_sizes(&self) -> (usize, usize) {
        self.cluster_sizes.unwrap_or((self.n / 3, self.n - self.n / 3))
    }

    pub fn validate(&self) -> Result<()> {
        let (n1, n2) = self.cluster_sizes();
        if n1 + n2 != self.n || n1 < 2 || n2 < 2 {
            return Err(Error::InvalidInput(format!(
                "cluster sizes ({n1}, {n2}) must be >= 2 each and sum to N = {}",
                self.n
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be >= 1".into()));
        }
        if self.t < 2 {
            return Err(Error::InvalidInput("T must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.rho_u.abs()) || !(0.0..1.0).contains(&self.rho_x.abs()) {
            return Err(Error::InvalidInput("AR coefficients must lie in (-1, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.rho_s) || self.ell <= 0.0 {
            return Err(Error::InvalidInput("need 0 <= rho_S <= 1 and ell > 0".into()));
        }
        if !(0.0..1.0).contains(&self.level) {
            return Err(Error::InvalidInput("level must lie in (0, 1)".into()));
        }
        if self.x_innov_corr.abs() >= 1.0 {
            return Err(Error::InvalidInput("regressor innovation correlation in (-1,1)".into()));
        }
        if self.procedures.is_empty() || self.hypotheses.is_empty() {
            return Err(Error::InvalidInput("need at least one procedure and hypothesis".into()));
        }
        Ok(())
    }

    pub fn bandwidth_or_default(&self) -> usize {
        self.bandwidth.unwrap_or_else(|| default_bandwidth(self.t))
    }
}

/// Within-cluster spatial correlation matrix
/// `rho_S exp(-D/ell) + (1 - rho_S) I` on an equally spaced unit-interval
/// grid; unit diagonal by construction.
pub fn spatial_cov(n_g: usize, rho_s: f64, ell: f64) -> Result<DMatrix<f64>> {
    if n_g < 2 {
        return Err(Error::InvalidInput("spatial_cov needs n_g >= 2".into()));
    }
    let mut s = DMatrix::zeros(n_g, n_g);
    for i in 0..n_g {
        for j in 0..n_g {
            let si = i as f64 / (n_g - 1) as f64;
            let sj = j as f64 / (n_g - 1) as f64;
            let kernel = rho_s * (-(si - sj).abs() / ell).exp();
            s[(i, j)] = if i == j { kernel + (1.0 - rho_s) } else { kernel };
        }
    }
    // The kernel is PD for rho_S < 1; assert instead of repairing.
    if s.clone().cholesky().is_none() {
        return Err(Error::Singular("spatial covariance is not PD".into()));
    }
    Ok(s)
}

/// Block-diagonal Cholesky factors of the cross-sectional covariance, one
/// block per true cluster.
struct SpatialFactors {
    blocks: Vec<DMatrix<f64>>,
    sizes: Vec<usize>,
}

impl SpatialFactors {
    fn build(cfg: &SimConfig) -> Result<Self> {
        let (n1, n2) = cfg.cluster_sizes();
        let mut blocks = Vec::new();
        for &ng in &[n1, n2] {
            let s = spatial_cov(ng, cfg.rho_s, cfg.ell)?;
            blocks.push(
                s.cholesky()
                    .ok_or_else(|| Error::Singular("spatial covariance".into()))?
                    .l(),
            );
        }
        Ok(Self {
            blocks,
            sizes: vec![n1, n2],
        })
    }

    /// Correlated cross-sectional draw `L z` with `z` standard normal.
    fn normal_draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n: usize = self.sizes.iter().sum();
        let mut out = DVector::zeros(n);
        let mut offset = 0;
        for (block, &ng) in self.blocks.iter().zip(&self.sizes) {
            let z = DVector::from_fn(ng, |_, _| rng.sample::<f64, _>(StandardNormal));
            out.rows_mut(offset, ng).copy_from(&(block * z));
            offset += ng;
        }
        out
    }

    /// Variance-standardized multivariate t(6) draw: `L z / sqrt(w/6)`
    /// scaled by `sqrt((nu - 2) / nu)` so its covariance equals the kernel.
    fn t6_draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        const NU: f64 = 6.0;
        let z = self.normal_draw(rng);
        let chi: f64 = ChiSquaredDist::new(NU).unwrap().sample(rng);
        let scale = ((NU - 2.0) / NU).sqrt() / (chi / NU).sqrt();
        z * scale
    }
}

/// Simulate one replication of the two-cluster panel. Deterministic in
/// `(cfg.seed, rep)` and independent across reps.
pub fn simulate_panel(cfg: &SimConfig, rep: usize) -> Result<(PanelDataset, GroupAssignment)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, rep as u64));
    let factors = SpatialFactors::build(cfg)?;
    let (n1, _n2) = cfg.cluster_sizes();
    let n = cfg.n;
    let t = cfg.t;
    let k = 2usize;

    let corr = cfg.x_innov_corr;
    let corr_resid = (1.0 - corr * corr).sqrt();
    let draw_x_innov_pair = |rng: &mut ChaCha8Rng| {
        let a = factors.normal_draw(rng);
        let b = factors.normal_draw(rng);
        let second = &a * corr + &b * corr_resid;
        (a, second)
    };

    // Regressors: AR(1) per coefficient with stationary initialization.
    let mut x_cur = {
        let (a, b) = draw_x_innov_pair(&mut rng);
        [a, b]
    };
    let innov_x = (1.0 - cfg.rho_x * cfg.rho_x).sqrt();
    let mut x_path: Vec<[DVector<f64>; 2]> = Vec::with_capacity(t);
    for _ in 0..t {
        let (e1, e2) = draw_x_innov_pair(&mut rng);
        x_cur[0] = &x_cur[0] * cfg.rho_x + e1 * innov_x;
        x_cur[1] = &x_cur[1] * cfg.rho_x + e2 * innov_x;
        x_path.push([x_cur[0].clone(), x_cur[1].clone()]);
    }

    // Errors: AR(1), Gaussian innovations in the first half of the sample,
    // variance-matched t(6) in the second half, stationary initialization.
    let mut u_cur = factors.normal_draw(&mut rng);
    let innov_u = (1.0 - cfg.rho_u * cfg.rho_u).sqrt();
    let mut u_path: Vec<DVector<f64>> = Vec::with_capacity(t);
    for ti in 1..=t {
        let eps = if ti <= t / 2 {
            factors.normal_draw(&mut rng)
        } else {
            factors.t6_draw(&mut rng)
        };
        u_cur = &u_cur * cfg.rho_u + eps * innov_u;
        u_path.push(u_cur.clone());
    }

    // Intercept components by case.
    let mu: DVector<f64> = match cfg.case {
        Case::Baseline => DVector::zeros(n),
        Case::UnitFe | Case::Gfe => {
            DVector::from_fn(n, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal))
        }
    };
    let eta = |g: usize, ti: usize| -> f64 {
        if cfg.case != Case::Gfe {
            return 0.0;
        }
        let tau = 2.0 * std::f64::consts::PI * (ti as f64 + 1.0) / t as f64;
        if g == 0 {
            0.8 * tau.sin()
        } else {
            2.0 + (tau + std::f64::consts::FRAC_PI_4).sin()
        }
    };

    let (a1, a2) = cfg.dgp.slopes();
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n1)).collect();
    let truth = GroupAssignment::new(labels, 2)?;

    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let g = truth.group_of(i);
        let alpha = if g == 0 { a1 } else { a2 };
        let mut yi = DVector::zeros(t);
        let mut xi = DMatrix::zeros(t, k);
        for ti in 0..t {
            let x1 = x_path[ti][0][i];
            let x2 = x_path[ti][1][i];
            xi[(ti, 0)] = x1;
            xi[(ti, 1)] = x2;
            yi[ti] = alpha[0] * x1 + alpha[1] * x2 + mu[i] + eta(g, ti) + u_path[ti][i];
        }
        y.push(yi);
        x.push(xi);
    }
    let unit_ids = (1..=n).map(|i| format!("u{i}")).collect();
    let time_ids = (1..=t).map(|s| s.to_string()).collect();
    Ok((PanelDataset::new(y, x, unit_ids, time_ids)?, truth))
}

/// One row of the rejection table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectionRow {
    pub t: usize,
    pub dgp: Dgp,
    pub case: Case,
    pub hypothesis: StudyHypothesis,
    pub procedure: Procedure,
    pub rate: f64,
    /// Binomial standard error of the rate.
    pub se: f64,
    pub reps_used: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<RejectionRow>,
    /// True when more than 5% of replications failed for some row.
    pub invalid: bool,
}

impl StudyResult {
    pub fn row(&self, hypothesis: StudyHypothesis, procedure: Procedure) -> Option<&RejectionRow> {
        self.rows
            .iter()
            .find(|r| r.hypothesis == hypothesis && r.procedure == procedure)
    }
}

/// Everything one procedure needs from a replication.
struct RepFits {
    tsk: Option<(crate::estimators::CoefMatrix, GroupFit, GroupCovariances)>,
    pcr: Option<(GroupFit, GroupCovariances)>,
    gfe: Option<(GroupFit, GroupCovariances, PanelDataset)>,
    predetermined: Option<(DVector<f64>, GroupCovariances)>,
}

fn covariance_for(
    method: CovMethod,
    d: &PanelDataset,
    gamma: &GroupAssignment,
    alpha: &DVector<f64>,
    coefs: Option<&crate::estimators::CoefMatrix>,
    bandwidth: usize,
) -> Result<GroupCovariances> {
    match method {
        CovMethod::Pesaran => {
            let b = coefs.ok_or_else(|| {
                Error::InvalidInput("Pesaran covariance needs unit coefficients".into())
            })?;
            pesaran_group_cov(b, gamma)
        }
        CovMethod::DriscollKraay => driscoll_kraay_cov(d, gamma, alpha, bandwidth),
        CovMethod::Theoretical => Err(Error::InvalidInput(
            "theoretical covariance needs known Sigma and sigma^2; not available in studies".into(),
        )),
    }
}

/// Relabel an entire fit (final assignment, trace, coefficient blocks).
fn permute_fit(fit: &GroupFit, perm: &[usize]) -> GroupFit {
    let k = fit.k_model;
    let mut alpha = DVector::zeros(fit.alpha.len());
    for (old, &new) in perm.iter().enumerate() {
        alpha
            .rows_mut(new * k, k)
            .copy_from(&fit.alpha.rows(old * k, k));
    }
    let mut centers = Vec::with_capacity(fit.trace.centers.len());
    for c in &fit.trace.centers {
        let mut out = DMatrix::zeros(c.nrows(), c.ncols());
        for (old, &new) in perm.iter().enumerate() {
            out.row_mut(new).copy_from(&c.row(old));
        }
        centers.push(out);
    }
    GroupFit {
        method: fit.method,
        group_count: fit.group_count,
        trace: crate::estimators::FitTrace {
            assignments: fit.trace.assignments.iter().map(|a| a.permuted(perm)).collect(),
            centers,
            objectives: fit.trace.objectives.clone(),
            converged: fit.trace.converged,
        },
        gamma: fit.gamma.permuted(perm),
        alpha,
        objective: fit.objective,
        restarts: fit.restarts,
        winning_restart: fit.winning_restart,
        k_model: fit.k_model,
        k_slopes: fit.k_slopes,
    }
}

fn prepare_fits(cfg: &SimConfig, rep: usize) -> Result<(PanelDataset, GroupAssignment, RepFits)> {
    let (raw, truth) = simulate_panel(cfg, rep)?;
    // Unit effects are removed by the within transformation whenever present.
    let d = match cfg.case {
        Case::Baseline => raw,
        Case::UnitFe | Case::Gfe => raw.within_transform()?,
    };
    let bw = cfg.bandwidth_or_default();
    let fit_seed = derive_seed(cfg.seed ^ 0x5151_5151, rep as u64);

    let needs = |m: Method| {
        cfg.procedures
            .iter()
            .any(|p| p.method() == Some(m))
    };

    let tsk = if needs(Method::Tsk) {
        let b = unit_ols(&d)?;
        let fit = tsk_fit(&b, 2, cfg.restarts, fit_seed)?;
        let cov = covariance_for(cfg.tsk_covariance, &d, &fit.gamma, &fit.alpha, Some(&b), bw)?;
        Some((b, fit, cov))
    } else {
        None
    };
    let pcr = if needs(Method::Pcr) {
        let fit = pcr_fit(&d, 2, cfg.restarts, fit_seed)?;
        let cov = covariance_for(cfg.pcr_covariance, &d, &fit.gamma, &fit.alpha, None, bw)?;
        Some((fit, cov))
    } else {
        None
    };
    let gfe = if needs(Method::Gfe) {
        let fit = gfe_fit(&d, 2, cfg.restarts, fit_seed)?;
        let augmented = d.augment_time_dummies()?;
        let cov = covariance_for(cfg.pcr_covariance, &augmented, &fit.gamma, &fit.alpha, None, bw)?;
        Some((fit, cov, augmented))
    } else {
        None
    };
    let predetermined = if cfg.procedures.contains(&Procedure::Predetermined) {
        let alpha = crate::selective::pooled_group_alpha(&d, &truth)?;
        let cov = driscoll_kraay_cov(&d, &truth, &alpha, bw)?;
        Some((alpha, cov))
    } else {
        None
    };
    Ok((d, truth, RepFits { tsk, pcr, gfe, predetermined }))
}

fn evaluate(
    cfg: &SimConfig,
    d: &PanelDataset,
    truth: &GroupAssignment,
    fits: &RepFits,
    hyp: StudyHypothesis,
    proc: Procedure,
) -> Result<bool> {
    let k = d.k();
    let h = hyp.build(k)?;
    let power_row = !hyp.is_true_under(cfg.dgp);

    let naive_reject = |alpha: &DVector<f64>, cov: &GroupCovariances, h: &LinearHypothesis| -> Result<bool> {
        let cov_r = hypothesis_cov(cov, h)?;
        let stat = wald_statistic(alpha, &cov_r, h)?;
        Ok(chi2_sf(h.restrictions(), stat)? < cfg.level)
    };

    match proc {
        Procedure::Predetermined => {
            let (alpha, cov) = fits
                .predetermined
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("predetermined fit missing".into()))?;
            naive_reject(alpha, cov, &h)
        }
        Procedure::NaiveTsk | Procedure::ConditionalTsk => {
            let (b, fit, cov) = fits
                .tsk
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("tsk fit missing".into()))?;
            let (fit_aligned, cov_aligned);
            let (fit, cov) = if power_row {
                let perm = align_groups_to(&fit.gamma, truth)?;
                fit_aligned = permute_fit(fit, &perm);
                cov_aligned =
                    covariance_for(cfg.tsk_covariance, d, &fit_aligned.gamma, &fit_aligned.alpha, Some(b), cfg.bandwidth_or_default())?;
                (&fit_aligned, &cov_aligned)
            } else {
                (fit, cov)
            };
            if proc == Procedure::NaiveTsk {
                naive_reject(&fit.alpha, cov, &h)
            } else {
                let res = selective_test(fit, FitInput::Coefs(b), &h, cov)?;
                Ok(res.selective_p < cfg.level)
            }
        }
        Procedure::NaivePcr | Procedure::ConditionalPcr => {
            let (fit, cov) = fits
                .pcr
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("pcr fit missing".into()))?;
            let (fit_aligned, cov_aligned);
            let (fit, cov) = if power_row {
                let perm = align_groups_to(&fit.gamma, truth)?;
                fit_aligned = permute_fit(fit, &perm);
                cov_aligned = covariance_for(
                    cfg.pcr_covariance,
                    d,
                    &fit_aligned.gamma,
                    &fit_aligned.alpha,
                    None,
                    cfg.bandwidth_or_default(),
                )?;
                (&fit_aligned, &cov_aligned)
            } else {
                (fit, cov)
            };
            if proc == Procedure::NaivePcr {
                naive_reject(&fit.alpha, cov, &h)
            } else {
                let res = selective_test(fit, FitInput::Panel(d), &h, cov)?;
                Ok(res.selective_p < cfg.level)
            }
        }
        Procedure::NaiveGfe | Procedure::ConditionalGfe => {
            let (fit, cov, augmented) = fits
                .gfe
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("gfe fit missing".into()))?;
            let (fit_aligned, cov_aligned);
            let (fit, cov) = if power_row {
                let perm = align_groups_to(&fit.gamma, truth)?;
                fit_aligned = permute_fit(fit, &perm);
                cov_aligned = covariance_for(
                    cfg.pcr_covariance,
                    augmented,
                    &fit_aligned.gamma,
                    &fit_aligned.alpha,
                    None,
                    cfg.bandwidth_or_default(),
                )?;
                (&fit_aligned, &cov_aligned)
            } else {
                (fit, cov)
            };
            let h_wide = h.expand_blocks(2, fit.k_slopes, fit.k_model)?;
            if proc == Procedure::NaiveGfe {
                naive_reject(&fit.alpha, cov, &h_wide)
            } else {
                let res = selective_test(fit, FitInput::Panel(d), &h_wide, cov)?;
                Ok(res.selective_p < cfg.level)
            }
        }
    }
}

/// Run the full rejection study: simulate `reps` panels, apply every
/// requested procedure to every hypothesis, and tabulate rejection
/// frequencies with binomial standard errors. Per-replication failures are
/// logged and excluded; a row is invalid when they exceed 5% of reps.
pub fn run_rejection_study(cfg: &SimConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let cells: Vec<(StudyHypothesis, Procedure)> = cfg
        .hypotheses
        .iter()
        .flat_map(|&h| cfg.procedures.iter().map(move |&p| (h, p)))
        .collect();

    let outcomes: Vec<Vec<Option<bool>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| match prepare_fits(cfg, rep) {
            Ok((d, truth, fits)) => cells
                .iter()
                .map(|&(h, p)| match evaluate(cfg, &d, &truth, &fits, h, p) {
                    Ok(reject) => Some(reject),
                    Err(e) => {
                        log::warn!("rep {rep}: {p} on {h} failed: {e}");
                        None
                    }
                })
                .collect(),
            Err(e) => {
                log::warn!("rep {rep}: simulation/fit failed: {e}");
                vec![None; cells.len()]
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(cells.len());
    let mut invalid = false;
    for (ci, &(h, p)) in cells.iter().enumerate() {
        let mut used = 0usize;
        let mut rejections = 0usize;
        for rep in &outcomes {
            match rep[ci] {
                Some(true) => {
                    used += 1;
                    rejections += 1;
                }
                Some(false) => used += 1,
                None => {}
            }
        }
        let failures = cfg.reps - used;
        if failures * 20 > cfg.reps {
            invalid = true;
        }
        let rate = if used > 0 { rejections as f64 / used as f64 } else { f64::NAN };
        let se = if used > 0 {
            (rate * (1.0 - rate) / used as f64).sqrt()
        } else {
            f64::NAN
        };
        rows.push(RejectionRow {
            t: cfg.t,
            dgp: cfg.dgp,
            case: cfg.case,
            hypothesis: h,
            procedure: p,
            rate,
            se,
            reps_used: used,
            failures,
        });
    }
    Ok(StudyResult { rows, invalid })
}

/// Write rejection rows as CSV (one row per `(T, DGP, case, hypothesis,
/// procedure)`).
pub fn write_rejection_csv<W: std::io::Write>(rows: &[RejectionRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "t",
        "dgp",
        "case",
        "hypothesis",
        "procedure",
        "rate",
        "se",
        "reps_used",
        "failures",
    ])?;
    for r in rows {
        wtr.write_record([
            r.t.to_string(),
            r.dgp.to_string(),
            r.case.to_string(),
            r.hypothesis.to_string(),
            r.procedure.to_string(),
            format!("{:.6}", r.rate),
            format!("{:.6}", r.se),
            r.reps_used.to_string(),
            r.failures.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_cfg() -> SimConfig {
        SimConfig {
            n: 12,
            t: 8,
            reps: 2,
            seed: 7,
            dgp: Dgp::Dgp3,
            case: Case::Baseline,
            rho_u: 0.5,
            rho_x: 0.5,
            rho_s: 0.2,
            ell: 0.3,
            x_innov_corr: 0.4,
            cluster_sizes: None,
            level: 0.05,
            restarts: 8,
            bandwidth: None,
            hypotheses: vec![StudyHypothesis::H01],
            procedures: vec![Procedure::Predetermined, Procedure::NaivePcr],
            tsk_covariance: CovMethod::Pesaran,
            pcr_covariance: CovMethod::DriscollKraay,
        }
    }

    #[test]
    fn spatial_cov_values() {
        let s = spatial_cov(41, 0.2, 0.3).unwrap();
        for i in 0..41 {
            assert_relative_eq!(s[(i, i)], 1.0, epsilon = 1e-14);
        }
        // adjacent units on the 41-point grid: distance 1/40
        let expect = 0.2 * (-(1.0 / 40.0) / 0.3f64).exp();
        assert_relative_eq!(s[(0, 1)], expect, epsilon = 1e-14);
        // rho_S = 0 is the identity
        let id = spatial_cov(5, 0.0, 0.3).unwrap();
        assert_relative_eq!(id, DMatrix::identity(5, 5), epsilon = 1e-14);
    }

    #[test]
    fn simulated_panel_shapes_and_truth() {
        let cfg = tiny_cfg();
        let (d, truth) = simulate_panel(&cfg, 0).unwrap();
        assert_eq!(d.n(), 12);
        assert_eq!(d.t(), 8);
        assert_eq!(d.k(), 2);
        // g_i = 1 for the first n1 units
        let (n1, _) = cfg.cluster_sizes();
        for i in 0..n1 {
            assert_eq!(truth.group_of(i), 0);
        }
        for i in n1..12 {
            assert_eq!(truth.group_of(i), 1);
        }
    }

    #[test]
    fn simulation_is_deterministic_per_rep() {
        let cfg = tiny_cfg();
        let (d1, _) = simulate_panel(&cfg, 3).unwrap();
        let (d2, _) = simulate_panel(&cfg, 3).unwrap();
        assert_eq!(d1, d2);
        let (d3, _) = simulate_panel(&cfg, 4).unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn unit_variance_moment_check() {
        // rho_U = rho_S = 0, Gaussian only: marginal error variance is 1.
        let mut cfg = tiny_cfg();
        cfg.n = 30;
        cfg.t = 40;
        cfg.rho_u = 0.0;
        cfg.rho_x = 0.0;
        cfg.rho_s = 1e-12; // effectively independent
        cfg.dgp = Dgp::Dgp1;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for rep in 0..40 {
            let (d, truth) = simulate_panel(&cfg, rep).unwrap();
            let (a1, _) = cfg.dgp.slopes();
            for i in 0..d.n() {
                let _ = truth.group_of(i);
                for t in 0..d.t() / 2 {
                    // first half: Gaussian segment
                    let resid = d.y(i)[t] - a1[0] * d.x(i)[(t, 0)] - a1[1] * d.x(i)[(t, 1)];
                    sum_sq += resid * resid;
                    count += 1;
                }
            }
        }
        let var = sum_sq / count as f64;
        assert!((var - 1.0).abs() < 0.05, "error variance {var} not within 5% of 1");
    }

    #[test]
    fn x_innovation_correlation_matches() {
        let mut cfg = tiny_cfg();
        cfg.n = 40;
        cfg.t = 60;
        cfg.rho_x = 0.0;
        cfg.rho_s = 1e-12;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for rep in 0..20 {
            let (d, _) = simulate_panel(&cfg, rep).unwrap();
            for i in 0..d.n() {
                for t in 0..d.t() {
                    let a = d.x(i)[(t, 0)];
                    let b = d.x(i)[(t, 1)];
                    sxy += a * b;
                    sxx += a * a;
                    syy += b * b;
                }
            }
        }
        let corr = sxy / (sxx.sqrt() * syy.sqrt());
        assert!((corr - 0.4).abs() < 0.03, "regressor correlation {corr}");
    }

    #[test]
    fn cross_cluster_independence() {
        let mut cfg = tiny_cfg();
        cfg.n = 30;
        cfg.t = 30;
        cfg.rho_u = 0.0;
        cfg.rho_x = 0.0;
        cfg.rho_s = 0.9;
        cfg.ell = 10.0; // strong within-cluster correlation
        cfg.dgp = Dgp::Dgp1;
        let (n1, _) = cfg.cluster_sizes();
        let mut within = 0.0;
        let mut across = 0.0;
        let mut count = 0usize;
        for rep in 0..60 {
            let (d, _) = simulate_panel(&cfg, rep).unwrap();
            let (a1, _) = cfg.dgp.slopes();
            let resid = |i: usize, t: usize| {
                d.y(i)[t] - a1[0] * d.x(i)[(t, 0)] - a1[1] * d.x(i)[(t, 1)]
            };
            for t in 0..d.t() {
                within += resid(0, t) * resid(1, t); // same cluster, adjacent
                across += resid(0, t) * resid(n1, t); // different clusters
                count += 1;
            }
        }
        within /= count as f64;
        across /= count as f64;
        assert!(within > 0.4, "within-cluster correlation too small: {within}");
        assert!(across.abs() < 0.1, "cross-cluster correlation should vanish: {across}");
    }

    #[test]
    fn single_rep_study_zero_one_table() {
        let cfg = tiny_cfg();
        let mut one = cfg.clone();
        one.reps = 1;
        let res = run_rejection_study(&one).unwrap();
        for row in &res.rows {
            assert!(row.rate == 0.0 || row.rate == 1.0);
            assert_eq!(row.reps_used + row.failures, 1);
        }
    }

    #[test]
    fn study_deterministic_under_parallelism() {
        // reduction is order-independent, so jobs do not change the table
        let cfg = tiny_cfg();
        let r1 = run_rejection_study(&cfg).unwrap();
        let r2 = run_rejection_study(&cfg).unwrap();
        for (a, b) in r1.rows.iter().zip(&r2.rows) {
            assert_eq!(a.rate.to_bits(), b.rate.to_bits());
        }
    }

    #[test]
    fn config_defaults_from_minimal_json() {
        let json = r#"{"n": 12, "t": 8, "reps": 1, "seed": 1, "dgp": "dgp1", "case": "baseline"}"#;
        let cfg: SimConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.rho_u, 0.5);
        assert_eq!(cfg.rho_s, 0.2);
        assert_eq!(cfg.ell, 0.3);
        assert_eq!(cfg.x_innov_corr, 0.4);
        assert_eq!(cfg.level, 0.05);
        assert_eq!(cfg.restarts, 50);
        assert_eq!(cfg.cluster_sizes(), (4, 8));
        assert_eq!(cfg.procedures.len(), 7);
    }
}

#[cfg(test)]
mod case_tests {
    use super::*;

    fn cfg_for(case: Case) -> SimConfig {
        SimConfig {
            n: 12,
            t: 10,
            reps: 2,
            seed: 31,
            dgp: Dgp::Dgp1,
            case,
            rho_u: 0.5,
            rho_x: 0.5,
            rho_s: 0.2,
            ell: 0.3,
            x_innov_corr: 0.4,
            cluster_sizes: None,
            level: 0.05,
            restarts: 8,
            bandwidth: None,
            hypotheses: vec![StudyHypothesis::H01],
            procedures: vec![Procedure::Predetermined, Procedure::ConditionalPcr],
            tsk_covariance: CovMethod::Pesaran,
            pcr_covariance: CovMethod::DriscollKraay,
        }
    }

    #[test]
    fn unit_effects_shift_unit_means() {
        // The unit-effect case adds mu_i to every observation of unit i;
        // with equal slopes the cross-unit spread of time means grows.
        let base = cfg_for(Case::Baseline);
        let fe = cfg_for(Case::UnitFe);
        let spread = |cfg: &SimConfig| -> f64 {
            let (a1, _) = cfg.dgp.slopes();
            let mut total = 0.0;
            for rep in 0..20 {
                let (d, _) = simulate_panel(cfg, rep).unwrap();
                // residual unit means with the regressor part removed
                let means: Vec<f64> = (0..d.n())
                    .map(|i| {
                        (0..d.t())
                            .map(|t| {
                                d.y(i)[t] - a1[0] * d.x(i)[(t, 0)] - a1[1] * d.x(i)[(t, 1)]
                            })
                            .sum::<f64>()
                            / d.t() as f64
                    })
                    .collect();
                let grand = means.iter().sum::<f64>() / means.len() as f64;
                total += means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
            }
            total
        };
        assert!(
            spread(&fe) > 1.5 * spread(&base),
            "unit effects did not widen the unit means"
        );
    }

    #[test]
    fn group_time_paths_differ_across_clusters() {
        // In the group-effects case the two clusters get distinct
        // deterministic intercept paths; cluster outcome means separate.
        let cfg = cfg_for(Case::Gfe);
        let (n1, _) = cfg.cluster_sizes();
        let mut gap = 0.0;
        for rep in 0..20 {
            let (d, _) = simulate_panel(&cfg, rep).unwrap();
            let mean_of = |range: std::ops::Range<usize>| -> f64 {
                let mut s = 0.0;
                let mut c = 0;
                for i in range {
                    s += d.y(i).sum();
                    c += d.t();
                }
                s / c as f64
            };
            gap += mean_of(n1..d.n()) - mean_of(0..n1);
        }
        gap /= 20.0;
        // second cluster's path has a +2 level component; the first is
        // centered near zero
        assert!(gap > 1.0, "cluster intercept gap too small: {gap}");
    }

    #[test]
    fn studies_run_under_every_case() {
        for case in [Case::Baseline, Case::UnitFe, Case::Gfe] {
            let res = run_rejection_study(&cfg_for(case)).unwrap();
            assert!(!res.rows.is_empty());
            for row in &res.rows {
                assert_eq!(row.reps_used + row.failures, 2);
            }
        }
    }
}
