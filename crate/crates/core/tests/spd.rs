use approx::assert_abs_diff_eq;
use diffem_core::linalg::{
    cholesky, jacobi_eigh, logsumexp, spd_sqrt, spd_sqrt_differential, symmetrise, CholeskyFactor,
    SpdMatrix,
};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;

fn fro(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn cholesky_identity() {
    let a = SpdMatrix::new(Array2::<f64>::eye(2)).unwrap();
    let l = cholesky(&a);
    assert_abs_diff_eq!(fro(&(l.lower() - &Array2::<f64>::eye(2))), 0.0, epsilon = 1e-14);
}

#[test]
fn cholesky_diagonal() {
    let a = SpdMatrix::new(array![[4.0, 0.0], [0.0, 9.0]]).unwrap();
    let l = cholesky(&a);
    assert_abs_diff_eq!(l.lower()[[0, 0]], 2.0, epsilon = 1e-14);
    assert_abs_diff_eq!(l.lower()[[1, 1]], 3.0, epsilon = 1e-14);
    assert_abs_diff_eq!(l.lower()[[1, 0]], 0.0, epsilon = 1e-14);
}

#[test]
fn cholesky_two_by_two() {
    // Factor of [[2,1],[1,2]], checked by direct multiplication against the
    // input.
    let input = array![[2.0, 1.0], [1.0, 2.0]];
    let a = SpdMatrix::new(input.clone()).unwrap();
    let l = cholesky(&a);
    assert_abs_diff_eq!(l.lower()[[0, 0]], 2.0_f64.sqrt(), epsilon = 1e-14);
    assert_abs_diff_eq!(l.lower()[[1, 0]], 1.0 / 2.0_f64.sqrt(), epsilon = 1e-14);
    assert_abs_diff_eq!(l.lower()[[1, 1]], (1.5_f64).sqrt(), epsilon = 1e-14);
    let recon = l.reconstruct();
    assert!(fro(&(&recon - &input)) <= 1e-10 * fro(&input));
}

#[test]
fn cholesky_failure_carries_pivot() {
    let bad = array![[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
    match CholeskyFactor::compute(&bad) {
        Err(diffem_core::CoreError::DegenerateCovariance { index }) => assert_eq!(index, 1),
        other => panic!("expected pivot failure, got {other:?}"),
    }
}

#[test]
fn sqrt_scaled_identity() {
    let a = SpdMatrix::new(Array2::<f64>::eye(3) * 4.0).unwrap();
    let r = spd_sqrt(a.entries());
    assert!(fro(&(&r - &(Array2::<f64>::eye(3) * 2.0))) < 1e-12);

    let i4 = SpdMatrix::new(Array2::<f64>::eye(4)).unwrap();
    let r = spd_sqrt(i4.entries());
    assert!(fro(&(&r - &Array2::<f64>::eye(4))) < 1e-12);
}

#[test]
fn sqrt_two_by_two_hand_diagonalised() {
    // [[2,1],[1,2]] has eigenvalues 1 and 3; the reconstruction
    // P diag(1, sqrt 3) P^T gives (1+sqrt3)/2 on the diagonal and
    // (sqrt3-1)/2 off it.
    let a = array![[2.0, 1.0], [1.0, 2.0]];
    let r = spd_sqrt(&a);
    let s3 = 3.0_f64.sqrt();
    assert_abs_diff_eq!(r[[0, 0]], (1.0 + s3) / 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r[[1, 1]], (1.0 + s3) / 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r[[0, 1]], (s3 - 1.0) / 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r[[1, 0]], (s3 - 1.0) / 2.0, epsilon = 1e-12);
}

#[test]
fn sqrt_differential_identity_direction() {
    let a = Array2::<f64>::eye(3);
    let h = array![[1.0, 2.0, 0.5], [2.0, -1.0, 0.0], [0.5, 0.0, 3.0]];
    let d = spd_sqrt_differential(&a, &h);
    assert!(!d.near_singular);
    assert!(fro(&(&d.matrix - &(&h * 0.5))) < 1e-12);
}

#[test]
fn sqrt_differential_scaled_identity() {
    let a = Array2::<f64>::eye(2) * 4.0;
    let h = Array2::<f64>::eye(2);
    let d = spd_sqrt_differential(&a, &h);
    assert!(fro(&(&d.matrix - &(Array2::<f64>::eye(2) / 4.0))) < 1e-12);
}

#[test]
fn sqrt_differential_mixed_eigenvalues() {
    // Divisor sqrt(1) + sqrt(4) = 3 for the off-diagonal entry.
    let a = array![[1.0, 0.0], [0.0, 4.0]];
    let h = array![[0.0, 1.0], [1.0, 0.0]];
    let d = spd_sqrt_differential(&a, &h);
    assert_abs_diff_eq!(d.matrix[[0, 1]], 1.0 / 3.0, epsilon = 1e-13);
    assert_abs_diff_eq!(d.matrix[[1, 0]], 1.0 / 3.0, epsilon = 1e-13);
    assert_abs_diff_eq!(d.matrix[[0, 0]], 0.0, epsilon = 1e-13);

    // Sylvester identity R dR + dR R = H.
    let r = spd_sqrt(&a);
    let resid = &(r.dot(&d.matrix) + d.matrix.dot(&r)) - &h;
    assert!(fro(&resid) <= 1e-8);
}

#[test]
fn sqrt_differential_masks_zero_divisors() {
    let a = array![[0.0, 0.0], [0.0, 0.0]];
    let h = array![[1.0, 0.0], [0.0, 1.0]];
    let d = spd_sqrt_differential(&a, &h);
    assert!(d.near_singular);
    assert!(d.matrix.iter().all(|v| *v == 0.0));
}

#[test]
fn logsumexp_basics() {
    let two = Array1::from_vec(vec![0.0, 0.0]);
    assert_abs_diff_eq!(logsumexp(two.view()).unwrap(), 2.0_f64.ln(), epsilon = 1e-15);

    let single = Array1::from_vec(vec![-3.25]);
    assert_eq!(logsumexp(single.view()).unwrap(), -3.25);

    let large = Array1::from_vec(vec![1000.0, 1000.0]);
    let v = logsumexp(large.view()).unwrap();
    assert!(v.is_finite());
    assert_abs_diff_eq!(v, 1000.0 + 2.0_f64.ln(), epsilon = 1e-12);

    let empty = Array1::from_vec(vec![]);
    assert!(logsumexp(empty.view()).is_err());
}

// Deterministic pseudo-random SPD matrix with condition number at most
// `cond`, built from the eigenvector frame of a hashed symmetric matrix.
fn random_spd(d: usize, cond: f64, seed: u64) -> Array2<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let raw = Array2::from_shape_fn((d, d), |_| next());
    let frame = jacobi_eigh(&symmetrise(&raw)).eigenvectors;
    let mut a = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        // Log-uniform eigenvalues spanning the requested condition number.
        let t = if d == 1 { 0.0 } else { j as f64 / (d - 1) as f64 };
        let lam = cond.powf(t - 0.5);
        for r in 0..d {
            for c in 0..d {
                a[[r, c]] += lam * frame[[r, j]] * frame[[c, j]];
            }
        }
    }
    symmetrise(&a)
}

#[test]
fn sqrt_composition_reconstructs() {
    for seed in 0..40u64 {
        let d = 1 + (seed % 5) as usize;
        let a = random_spd(d, 1e6, seed);
        let r = spd_sqrt(&a);
        let rr = r.dot(&r);
        assert!(
            fro(&(&rr - &a)) <= 1e-9 * fro(&a),
            "seed {seed}: relative residual {}",
            fro(&(&rr - &a)) / fro(&a)
        );
    }
}

#[test]
fn sqrt_differential_matches_central_differences() {
    let eps = 1e-5;
    for seed in 0..25u64 {
        let d = 2 + (seed % 4) as usize; // d <= 5
        let a = random_spd(d, 1e3, seed);
        let h = symmetrise(&random_spd(d, 10.0, seed + 1000));
        let dr = spd_sqrt_differential(&a, &h).matrix;

        let mut ap = a.clone();
        let mut am = a.clone();
        ap.scaled_add(eps, &h);
        am.scaled_add(-eps, &h);
        let fd = (&spd_sqrt(&ap) - &spd_sqrt(&am)) / (2.0 * eps);

        let denom = fro(&dr).max(1e-300);
        assert!(
            fro(&(&fd - &dr)) <= 1e-5 * denom,
            "seed {seed}: relative fd error {}",
            fro(&(&fd - &dr)) / denom
        );
    }
}

#[test]
fn cholesky_logdet_matches_eigenvalues() {
    for seed in 0..20u64 {
        let d = 1 + (seed % 6) as usize;
        let a = random_spd(d, 1e4, seed);
        let spd = SpdMatrix::new(a.clone()).unwrap();
        let logdet = cholesky(&spd).log_det();
        let eig_sum: f64 = jacobi_eigh(&a).eigenvalues.iter().map(|l| l.ln()).sum();
        assert!(
            (logdet - eig_sum).abs() <= 1e-9 * logdet.abs().max(1.0),
            "seed {seed}: {logdet} vs {eig_sum}"
        );
    }
}

proptest! {
    #[test]
    fn logsumexp_shift_invariance(values in proptest::collection::vec(-50.0..50.0f64, 1..12), c in -100.0..100.0f64) {
        let v = Array1::from_vec(values);
        let shifted = &v + c;
        let lhs = logsumexp(shifted.view()).unwrap();
        let rhs = logsumexp(v.view()).unwrap() + c;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn jacobi_orthogonality_and_reconstruction(seed in 0u64..500) {
        let d = 2 + (seed % 5) as usize;
        let a = random_spd(d, 1e5, seed);
        let dec = jacobi_eigh(&a);
        let ptp = dec.eigenvectors.t().dot(&dec.eigenvectors);
        prop_assert!(fro(&(&ptp - &Array2::<f64>::eye(d))) <= 1e-10);
        let recon = dec.reconstruct();
        prop_assert!(fro(&(&recon - &a)) <= 1e-10 * fro(&a).max(1.0));
        for j in 1..d {
            prop_assert!(dec.eigenvalues[j] >= dec.eigenvalues[j - 1]);
        }
    }
}
