//! Property tests for the spec-level invariants: projection idempotence,
//! dummy-matrix structure, quadratic solution sets, truncated p-values, and
//! scale invariance of the TSK trace.

use gps_core::estimators::{tsk_fit, CoefMatrix, FitInput};
use gps_core::panel::{
    group_dummy_kron, group_dummy_matrix, GroupAssignment, LinearHypothesis, PanelDataset,
};
use gps_core::selective::{
    quadratic_solution_set, selective_test, truncated_chi2_pvalue, TruncationSet,
};
use gps_core::stats::chi2_sf;
use gps_core::variance::{driscoll_kraay_cov, pesaran_group_cov};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_panel() -> impl Strategy<Value = PanelDataset> {
    (2usize..6, 2usize..7, 1usize..3).prop_flat_map(|(n, t, k)| {
        (
            proptest::collection::vec(-5.0..5.0f64, n * t),
            proptest::collection::vec(-5.0..5.0f64, n * t * k),
        )
            .prop_map(move |(y, x)| PanelDataset::from_arrays(n, t, k, &y, &x).unwrap())
    })
}

proptest! {
    #[test]
    fn within_transform_is_idempotent(d in arb_panel()) {
        let once = d.within_transform().unwrap();
        let twice = once.within_transform().unwrap();
        for i in 0..d.n() {
            prop_assert!((once.y(i) - twice.y(i)).abs().max() <= 1e-12);
            prop_assert!((once.x(i) - twice.x(i)).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn dummy_matrix_structure(labels in proptest::collection::vec(0usize..4, 2..30), k in 1usize..4) {
        let g = labels.iter().max().unwrap() + 1;
        let gamma = GroupAssignment::new(labels, g).unwrap();
        let d = group_dummy_matrix(&gamma);
        // exactly one 1 per row
        for i in 0..gamma.n() {
            let row_sum: f64 = d.row(i).iter().sum();
            prop_assert!((row_sum - 1.0).abs() < 1e-15);
            prop_assert!(d.row(i).iter().all(|&v| v == 0.0 || v == 1.0));
        }
        // random index probes of the Kronecker expansion
        let big = group_dummy_kron(&gamma, k);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let i = rng.gen_range(0..gamma.n());
            let a = rng.gen_range(0..k);
            let gg = rng.gen_range(0..g);
            let b = rng.gen_range(0..k);
            let expect = d[(i, gg)] * f64::from(a == b);
            prop_assert_eq!(big[(i * k + a, gg * k + b)], expect);
        }
    }

    #[test]
    fn quadratic_set_membership_matches_sign(
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        c in -3.0..3.0f64,
        phi in 0.0..10.0f64,
    ) {
        let set = quadratic_solution_set(a, b, c);
        let value = (a * phi + b) * phi + c;
        // skip the numerical boundary band
        if value.abs() > 1e-6 {
            prop_assert_eq!(set.contains(phi, 0.0), value <= 0.0,
                "a={} b={} c={} phi={} value={}", a, b, c, phi, value);
        }
    }

    #[test]
    fn truncated_pvalue_in_unit_interval(
        h in 0.0..200.0f64,
        r in 1usize..8,
        lo in 0.0..6.0f64,
        width in 0.01..6.0f64,
        unbounded in proptest::bool::ANY,
    ) {
        let mut intervals = vec![(lo, lo + width)];
        if unbounded {
            intervals.push((lo + width + 1.0, f64::INFINITY));
        }
        let s = TruncationSet::from_intervals(intervals).unwrap();
        let p = truncated_chi2_pvalue(h, r, &s).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn untruncated_pvalue_equals_survival(h in 0.0..80.0f64, r in 1usize..8) {
        let p = truncated_chi2_pvalue(h, r, &TruncationSet::full()).unwrap();
        prop_assert!((p - chi2_sf(r, h).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn truncation_intersection_shrinks(
        cuts in proptest::collection::vec(0.0..10.0f64, 4),
        other in proptest::collection::vec(0.0..10.0f64, 2),
    ) {
        let mut c = cuts.clone();
        c.sort_by(|x, y| x.partial_cmp(y).unwrap());
        if c[1] >= c[2] {
            return Ok(());
        }
        let s1 = TruncationSet::from_intervals(vec![(c[0], c[1]), (c[2], c[3].max(c[2]))]).unwrap();
        let mut o = other.clone();
        o.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let s2 = TruncationSet::from_intervals(vec![(o[0], o[1])]).unwrap();
        let inter = s1.intersect(&s2);
        prop_assert!(inter.subset_of(&s1, 1e-12));
        prop_assert!(inter.subset_of(&s2, 1e-12));
    }
}

/// Rescaling every coefficient by c > 0 leaves the TSK assignment trace
/// unchanged and, with the covariance re-estimated from the scaled data and
/// a zero restriction target, the Wald statistic and selective p-value too.
#[test]
fn tsk_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 14;
    let values: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-2.0..2.0f64)).collect();
    let b1 = CoefMatrix::new(DMatrix::from_row_slice(n, 2, &values)).unwrap();
    let h = LinearHypothesis::new(
        DMatrix::from_row_slice(2, 4, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
        DVector::zeros(2),
    )
    .unwrap();
    for &c in &[0.1, 3.0, 250.0] {
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        let b2 = CoefMatrix::new(DMatrix::from_row_slice(n, 2, &scaled)).unwrap();
        let f1 = tsk_fit(&b1, 2, 16, 5).unwrap();
        let f2 = tsk_fit(&b2, 2, 16, 5).unwrap();
        assert_eq!(f1.gamma, f2.gamma, "assignment changed under scaling by {c}");
        assert_eq!(f1.trace.assignments, f2.trace.assignments);
        let cov1 = pesaran_group_cov(&b1, &f1.gamma).unwrap();
        let cov2 = pesaran_group_cov(&b2, &f2.gamma).unwrap();
        let r1 = selective_test(&f1, FitInput::Coefs(&b1), &h, &cov1).unwrap();
        let r2 = selective_test(&f2, FitInput::Coefs(&b2), &h, &cov2).unwrap();
        assert!(
            (r1.statistic - r2.statistic).abs() <= 1e-8 * r1.statistic.max(1.0),
            "h changed: {} vs {}",
            r1.statistic,
            r2.statistic
        );
        assert!((r1.selective_p - r2.selective_p).abs() <= 1e-8);
    }
}

/// With white-noise residuals and independent units, the Driscoll-Kraay
/// covariance at bandwidth 1 approaches the heteroskedasticity-only
/// sandwich built from own-unit terms.
#[test]
fn dk_matches_hc_sandwich_under_white_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let n = 20;
    let t = 2000;
    let k = 2;
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t * k);
    for _ in 0..n * t {
        let x1: f64 = rng.gen_range(-1.0..1.0);
        let x2: f64 = rng.gen_range(-1.0..1.0);
        x.push(x1);
        x.push(x2);
        // pure noise around a common slope
        y.push(2.0 * x1 - x2 + rng.gen_range(-1.0..1.0f64));
    }
    let d = PanelDataset::from_arrays(n, t, k, &y, &x).unwrap();
    let gamma = GroupAssignment::new(vec![0; n], 1).unwrap();
    let alpha = gps_core::selective::pooled_group_alpha(&d, &gamma).unwrap();
    let dk = driscoll_kraay_cov(&d, &gamma, &alpha, 1).unwrap();

    // hand-built sandwich: own-unit, own-period terms only
    let mut q = DMatrix::zeros(k, k);
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let xi = d.x(i);
        q += xi.transpose() * xi;
        let resid = d.y(i) - xi * alpha.rows(0, k);
        for ti in 0..t {
            let row = xi.row(ti).transpose();
            meat += &row * row.transpose() * resid[ti] * resid[ti];
        }
    }
    q /= (n * t) as f64;
    meat /= ((t * t) as f64) * (n as f64) * (n as f64);
    let q_inv = q.try_inverse().unwrap();
    let sandwich = &q_inv * meat * &q_inv;

    let diff = (dk.group_block(0) - &sandwich).abs().max();
    let scale = sandwich.abs().max();
    assert!(
        diff <= 0.10 * scale,
        "DK(L=1) differs from HC sandwich by {diff:.3e} vs scale {scale:.3e}"
    );
}

proptest! {
    /// `R bdiag(Sigma_g) R'` for PSD blocks and full-rank R is symmetric
    /// PSD whenever it is accepted at all.
    #[test]
    fn hypothesis_cov_is_symmetric_psd(
        seeds in proptest::collection::vec(0u64..1000, 2),
        rows in 1usize..3,
    ) {
        let k = 2;
        let g = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seeds[0] * 7919 + seeds[1]);
        let blocks: Vec<DMatrix<f64>> = (0..g)
            .map(|_| {
                let a = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0f64));
                &a * a.transpose()
            })
            .collect();
        let cov = gps_core::variance::GroupCovariances::new(
            blocks,
            gps_core::variance::CovMethod::Theoretical,
        )
        .unwrap();
        let r = DMatrix::from_fn(rows, g * k, |_, _| rng.gen_range(-1.0..1.0f64));
        let Ok(h) = LinearHypothesis::new(r, DVector::zeros(rows)) else {
            return Ok(());
        };
        match gps_core::variance::hypothesis_cov(&cov, &h) {
            Ok(m) => {
                prop_assert!((&m - m.transpose()).abs().max() <= 1e-10 * m.abs().max().max(1.0));
                let eig = m.symmetric_eigen();
                let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
                for ev in eig.eigenvalues.iter() {
                    prop_assert!(*ev >= -1e-8 * max_ev.abs());
                }
            }
            // random PSD blocks can be singular along R; rejecting is correct
            Err(gps_core::error::Error::SingularHypothesisCov) => {}
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
        }
    }
}

/// An exactly-null PCR instance takes the degenerate branch: h = 0 and the
/// convention p = 1 on the full half-line.
#[test]
fn pcr_degenerate_null_reports_p_one() {
    // two units per group, outcomes generated by one shared coefficient so
    // both pooled estimates coincide exactly
    let n = 4;
    let t = 6;
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut state = 7u64;
    let mut rand = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state % 1000) as f64 / 500.0 - 1.0
    };
    for _ in 0..n {
        for _ in 0..t {
            let xv = rand();
            x.push(xv);
            y.push(3.0 * xv); // exact fit, no noise
        }
    }
    let d = PanelDataset::from_arrays(n, t, 1, &y, &x).unwrap();
    let fit = gps_core::estimators::pcr_fit(&d, 2, 16, 3).unwrap();
    let h = LinearHypothesis::new(
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        DVector::zeros(1),
    )
    .unwrap();
    let cov = gps_core::variance::theoretical_cov(
        &DMatrix::identity(1, 1),
        1.0,
        &fit.gamma,
    )
    .unwrap();
    let res = selective_test(&fit, gps_core::estimators::FitInput::Panel(&d), &h, &cov).unwrap();
    assert_eq!(res.statistic, 0.0);
    assert_eq!(res.selective_p, 1.0);
    assert!(res.truncation.is_full());
    assert!(res.diagnostics.degenerate);
}
