use deepgcn::data::random_connected_graph;
use deepgcn::graph_ops::{
    apply_spectra_shift, build_renormalized_affinity, component_rescaling_check, degree_root_vector,
    eigendecompose, Graph, DEFAULT_EIGEN_CAP,
};
use deepgcn::linalg::{frobenius_norm, spectral_norm, symmetric_eigen, DenseMatrix, DenseVector, SPECTRAL_ITERS, SPECTRAL_TOL};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn to_na(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

fn sorted_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = to_na(a).symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn graph(n: usize, density: f64, seed: u64) -> Graph {
    random_connected_graph(n, density, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn gaussian(n: usize, rng: &mut impl Rng) -> DenseVector {
    DenseVector::new((0..n).map(|_| rng.sample(StandardNormal)).collect())
}

#[test]
fn jacobi_matches_nalgebra_on_random_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [1, 2, 5, 17, 40] {
        let b = DenseMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let a = b.add(&b.transpose()).unwrap();
        let (ours, vecs) = symmetric_eigen(&a).unwrap();
        let oracle = sorted_eigenvalues(&a);
        for (x, y) in ours.iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0), "n={n}: {x} vs {y}");
        }
        let vt_v = to_na(&vecs).transpose() * to_na(&vecs);
        assert!((vt_v - DMatrix::identity(n, n)).amax() <= 1e-10);
    }
}

#[test]
fn spectral_norm_matches_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let a = DenseMatrix::from_fn(4, 3, |_, _| rng.sample(StandardNormal));
        let sigma = to_na(&a).singular_values().max();
        let ours = spectral_norm(&a, SPECTRAL_ITERS, SPECTRAL_TOL);
        assert!((ours - sigma).abs() <= 1e-6, "{ours} vs {sigma}");
    }
}

#[test]
fn eigendecompose_matches_nalgebra_on_affinity() {
    for seed in 0..5 {
        let g = graph(60, 0.08, seed);
        let op = build_renormalized_affinity(&g);
        let basis = eigendecompose(&op, DEFAULT_EIGEN_CAP).unwrap();
        let oracle = sorted_eigenvalues(&op.matrix().to_dense());
        for (x, y) in basis.values.iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-10);
        }
    }
}

#[test]
fn degree_root_vector_is_the_top_eigenvector() {
    let g = graph(30, 0.1, 9);
    let op = build_renormalized_affinity(&g);
    let v = degree_root_vector(&g);
    let av = op.matrix().mul_vec(v.as_slice());
    for (x, y) in av.iter().zip(v.as_slice()) {
        assert!((x - y).abs() <= 1e-12 * y.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affinity_spectrum_in_half_open_unit_interval(n in 2usize..60, density in 0.0f64..0.5, seed in any::<u64>()) {
        let g = graph(n, density, seed);
        let op = build_renormalized_affinity(&g);
        let values = sorted_eigenvalues(&op.matrix().to_dense());
        prop_assert!(values[0] > -1.0 + 1e-12, "min {}", values[0]);
        prop_assert!((values[n - 1] - 1.0).abs() <= 1e-10, "max {}", values[n - 1]);
        let near_one = values.iter().filter(|&&l| (l - 1.0).abs() <= 1e-8).count();
        prop_assert_eq!(near_one, 1);
    }

    #[test]
    fn shift_moves_eigenvalues_and_keeps_eigenvectors(n in 2usize..40, seed in any::<u64>(), r in -1.0f64..5.0) {
        let g = graph(n, 0.2, seed);
        let op = build_renormalized_affinity(&g);
        let basis = eigendecompose(&op, DEFAULT_EIGEN_CAP).unwrap();
        let shifted = apply_spectra_shift(&op, r).unwrap();
        let oracle = sorted_eigenvalues(&shifted.matrix().to_dense());
        for (l, s) in basis.values.iter().zip(&oracle) {
            prop_assert!((l + r - s).abs() <= 1e-10);
        }
        for i in 0..n {
            let u = basis.eigenvector(i);
            let au = shifted.matrix().mul_vec(u.as_slice());
            let lambda = basis.values[i] + r;
            for (x, y) in au.iter().zip(u.as_slice()) {
                prop_assert!((x - lambda * y).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn norm_sandwich_against_svd(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let s = spectral_norm(&a, SPECTRAL_ITERS, SPECTRAL_TOL);
        let f = frobenius_norm(&a);
        let oracle_f = to_na(&a).norm();
        prop_assert!((f - oracle_f).abs() <= 1e-12 * oracle_f.max(1.0));
        prop_assert!(s <= f * (1.0 + 1e-12));
        prop_assert!(f <= (rows.min(cols) as f64).sqrt() * s * (1.0 + 1e-9));
    }

    #[test]
    fn component_rescaling_holds(n in 2usize..200, seed in any::<u64>(), r in -2.0f64..5.0) {
        let g = graph(n, 4.0 / n as f64, seed);
        let op = build_renormalized_affinity(&g);
        let basis = eigendecompose(&op, DEFAULT_EIGEN_CAP).unwrap();
        let shifted = apply_spectra_shift(&op, r).unwrap();
        let x = gaussian(n, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert!(component_rescaling_check(&shifted, &basis, &x).unwrap() <= 1e-8);
    }
}
