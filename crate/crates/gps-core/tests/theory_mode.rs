//! Exact-theory checks: with Gaussian noise, known variance, and a common
//! Gram matrix across units, selective p-values under a true null are
//! uniform while naive p-values collapse toward zero.

use gps_core::estimators::{pcr_fit, tsk_fit, CoefMatrix, FitInput};
use gps_core::panel::{LinearHypothesis, PanelDataset};
use gps_core::selective::selective_test;
use gps_core::variance::theoretical_cov;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn ks_distance(pvals: &mut [f64]) -> f64 {
    pvals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = pvals.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &p) in pvals.iter().enumerate() {
        let hi = (i as f64 + 1.0) / n - p;
        let lo = p - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

fn all_slopes_equal(k: usize) -> LinearHypothesis {
    let mut r = DMatrix::zeros(k, 2 * k);
    for j in 0..k {
        r[(j, j)] = 1.0;
        r[(j, k + j)] = -1.0;
    }
    LinearHypothesis::new(r, DVector::zeros(k)).unwrap()
}

/// TSK path: coefficients drawn directly from the homogeneous null.
fn tsk_pvalues(reps: usize, n: usize, restarts: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let k = 2;
    let h01 = all_slopes_equal(k);
    let sigma = DMatrix::identity(k, k);
    let mut selective = Vec::with_capacity(reps);
    let mut naive = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep as u64 * 7919));
        let vals: Vec<f64> = (0..n * k)
            .map(|j| {
                let base = if j % k == 0 { 0.5 } else { -0.3 };
                base + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let b = CoefMatrix::new(DMatrix::from_row_slice(n, k, &vals)).unwrap();
        let fit = tsk_fit(&b, 2, restarts, seed ^ rep as u64).unwrap();
        let cov = theoretical_cov(&sigma, 1.0, &fit.gamma).unwrap();
        let res = selective_test(&fit, FitInput::Coefs(&b), &h01, &cov).unwrap();
        selective.push(res.selective_p);
        naive.push(res.naive_p);
    }
    (selective, naive)
}

/// PCR path: identical regressor matrix across units, Gaussian errors.
fn pcr_pvalues(reps: usize, n: usize, t: usize, restarts: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let k = 2;
    let h01 = all_slopes_equal(k);
    let mut xrng = ChaCha8Rng::seed_from_u64(991);
    let xcommon: Vec<f64> = (0..t * k).map(|_| xrng.sample::<f64, _>(StandardNormal)).collect();
    let xmat = DMatrix::from_row_slice(t, k, &xcommon);
    let gram = xmat.transpose() * &xmat;
    let beta0 = DVector::from_vec(vec![0.5, -0.3]);
    let mut selective = Vec::with_capacity(reps);
    let mut naive = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep as u64 * 6007));
        let mean = &xmat * &beta0;
        let y: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                DVector::from_fn(t, |r, _| mean[r] + rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let x = vec![xmat.clone(); n];
        let unit_ids = (1..=n).map(|i| format!("u{i}")).collect();
        let time_ids = (1..=t).map(|s| s.to_string()).collect();
        let d = PanelDataset::new(y, x, unit_ids, time_ids).unwrap();
        let fit = pcr_fit(&d, 2, restarts, seed ^ rep as u64).unwrap();
        let cov = theoretical_cov(&gram, 1.0, &fit.gamma).unwrap();
        let res = selective_test(&fit, FitInput::Panel(&d), &h01, &cov).unwrap();
        selective.push(res.selective_p);
        naive.push(res.naive_p);
    }
    (selective, naive)
}

#[test]
fn tsk_selective_uniform_under_null() {
    let (mut sel, mut nai) = tsk_pvalues(500, 20, 1, 20240601);
    let ks_sel = ks_distance(&mut sel);
    let ks_nai = ks_distance(&mut nai);
    println!("TSK theory mode: selective KS = {ks_sel:.4}, naive KS = {ks_nai:.4}");
    assert!(ks_sel < 0.08, "selective p-values not uniform: KS = {ks_sel:.4}");
    assert!(ks_nai > 0.2, "naive p-values unexpectedly uniform: KS = {ks_nai:.4}");
}

#[test]
fn pcr_selective_uniform_under_null() {
    let (mut sel, mut nai) = pcr_pvalues(500, 16, 10, 1, 77);
    let ks_sel = ks_distance(&mut sel);
    let ks_nai = ks_distance(&mut nai);
    println!("PCR theory mode: selective KS = {ks_sel:.4}, naive KS = {ks_nai:.4}");
    assert!(ks_sel < 0.08, "selective p-values not uniform: KS = {ks_sel:.4}");
    assert!(ks_nai > 0.2, "naive p-values unexpectedly uniform: KS = {ks_nai:.4}");
}
