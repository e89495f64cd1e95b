//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Convergence tolerance for the singular-value iteration, relative to the
/// current estimate so matrices of any scale converge equally well.
pub const SPECTRAL_TOL: f64 = 1e-12;
/// Iteration cap for the singular-value iteration.
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

/// Largest singular value of `m`, computed by singular value iteration on
/// the Gram matrix `m' m` with the full identity basis (orthogonal
/// iteration).
///
/// Starting from the complete basis rather than a single vector means the
/// dominant singular direction is always represented, whatever its
/// orientation; a lone start vector can be (nearly) orthogonal to it and
/// stall on a sub-dominant value. The estimate is the largest Rayleigh
/// quotient over the basis, declared converged once its relative change
/// stays under [`SPECTRAL_TOL`] for three consecutive iterations. A
/// relative test matters: deviation matrices shrink toward zero over a
/// run, and an absolute cut-off would stop the iteration before the
/// estimate settles at small scales. Everything is deterministic, so
/// repeated calls return the same bits.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let n = m.ncols();
    let gram = m.transpose() * m;
    let mut basis = DMatrix::identity(n, n);
    let mut theta = f64::INFINITY;
    let mut stable = 0;
    for _ in 0..SPECTRAL_MAX_ITERS {
        let image = &gram * &basis;
        let mut next: f64 = 0.0;
        for j in 0..n {
            next = next.max(basis.column(j).dot(&image.column(j)));
        }
        basis = image.qr().q();
        if (next - theta).abs() <= SPECTRAL_TOL * next.abs() {
            stable += 1;
            if stable >= 3 {
                theta = next;
                break;
            }
        } else {
            stable = 0;
        }
        theta = next;
    }
    theta.max(0.0).sqrt()
}

/// Entry-wise mean of a non-empty slice of equal-length vectors,
/// accumulated in ascending index order.
pub fn mean_vector(vectors: &[DVector<f64>]) -> DVector<f64> {
    assert!(!vectors.is_empty(), "mean of zero vectors");
    let dim = vectors[0].len();
    let mut acc = DVector::zeros(dim);
    for v in vectors {
        for l in 0..dim {
            acc[l] += v[l];
        }
    }
    let count = vectors.len() as f64;
    for l in 0..dim {
        acc[l] /= count;
    }
    acc
}

/// Stacks `rows[i] - center` as row `i` of a matrix.
pub fn deviation_matrix(rows: &[DVector<f64>], center: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), center.len(), |i, j| rows[i][j] - center[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spectral_norm_of_zero_matrix_is_zero() {
        let m = DMatrix::zeros(4, 3);
        assert_eq!(spectral_norm(&m), 0.0);
    }

    #[test]
    fn spectral_norm_of_diagonal_picks_largest_entry() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 3.0, 1.5]));
        assert!((spectral_norm(&m) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_svd_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let rows = rng.random_range(1..8);
            let cols = rng.random_range(1..8);
            let m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0));
            let oracle = m.clone().svd(false, false).singular_values[0];
            assert!(
                (spectral_norm(&m) - oracle).abs() <= 1e-10 * oracle.max(1.0),
                "power iteration diverged from SVD: {} vs {}",
                spectral_norm(&m),
                oracle
            );
        }
    }

    #[test]
    fn spectral_norm_keeps_relative_accuracy_at_tiny_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for scale in [1.0, 1e-8, 1e-16, 1e-30] {
            let m = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0) * scale);
            let oracle = m.clone().svd(false, false).singular_values[0];
            let got = spectral_norm(&m);
            assert!(
                (got - oracle).abs() <= 1e-10 * oracle,
                "scale {scale}: {got} vs {oracle}"
            );
        }
    }

    #[test]
    fn mean_vector_averages_componentwise() {
        let vs = vec![
            DVector::from_vec(vec![1.0, 3.0]),
            DVector::from_vec(vec![3.0, 1.0]),
        ];
        assert_eq!(mean_vector(&vs), DVector::from_vec(vec![2.0, 2.0]));
    }

    #[test]
    fn deviation_matrix_subtracts_center_rowwise() {
        let rows = vec![
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![5.0, 6.0]),
        ];
        let center = DVector::from_vec(vec![1.0, 1.0]);
        let d = deviation_matrix(&rows, &center);
        assert_eq!(d[(0, 0)], 0.0);
        assert_eq!(d[(1, 1)], 5.0);
    }
}
