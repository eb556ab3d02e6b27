//! Symmetric eigenvalue helpers: dense solves through nalgebra and a Lanczos
//! iteration for operators that are too large to materialize.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};

/// Largest dimension for which [`opnorm`] uses a dense eigensolve.
pub const DENSE_OPNORM_MAX: usize = 2048;

/// Eigen-decomposition with eigenvalues sorted in descending order; column
/// `k` of `vectors` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(a: &DMatrix<f64>, tol: f64) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::arg(format!(
            "matrix is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = max_asymmetry(a);
    if asym > tol {
        return Err(Error::arg(format!(
            "matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"
        )));
    }
    Ok(())
}

pub fn sym_eigen(a: &DMatrix<f64>) -> SortedEigen {
    let eig = SymmetricEigen::new(a.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    SortedEigen { values, vectors }
}

/// Eigenvalues only, descending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

/// Operator norm of a symmetric matrix: the largest absolute eigenvalue.
pub fn opnorm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    if n <= DENSE_OPNORM_MAX {
        return a
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
    }
    let ext = lanczos(n, |x, y| dense_matvec(a, x, y), &[], &LanczosOptions::default());
    ext.max.abs().max(ext.min.abs())
}

pub fn dense_matvec(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let xv = DVector::from_column_slice(x);
    let out = a * xv;
    y.copy_from_slice(out.as_slice());
}

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            tol: 1e-10,
            seed: 0x5eed_1a2c,
        }
    }
}

/// Extreme Ritz pairs of a symmetric operator.
#[derive(Debug, Clone)]
pub struct Extremes {
    pub max: f64,
    pub min: f64,
    /// Ritz vector for `max`, unit norm.
    pub max_vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for q in basis {
        let c = dot(q, v);
        axpy(-c, q, v);
    }
}

/// Lanczos with full reorthogonalization on the orthogonal complement of
/// `deflate` (whose vectors must be orthonormal). The start vector is drawn
/// from a fixed seed so results are reproducible.
pub fn lanczos<F>(dim: usize, apply: F, deflate: &[Vec<f64>], opts: &LanczosOptions) -> Extremes
where
    F: Fn(&[f64], &mut [f64]),
{
    let free = dim.saturating_sub(deflate.len());
    let max_iter = opts.max_iter.min(free).max(1);

    let mut rng = crate::rng::from_seed(opts.seed);
    let mut q: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    project_out(&mut q, deflate);
    project_out(&mut q, deflate);
    let norm = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= norm);

    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; dim];
    let mut last: Option<(SortedEigen, usize)> = None;
    let mut converged = false;

    for k in 0..max_iter {
        apply(&basis[k], &mut w);
        let a = dot(&basis[k], &w);
        alphas.push(a);
        project_out(&mut w, deflate);
        // Two passes of classical Gram-Schmidt keep the basis orthogonal.
        for _ in 0..2 {
            project_out(&mut w, &basis);
            project_out(&mut w, deflate);
        }
        let b = dot(&w, &w).sqrt();

        let m = alphas.len();
        let check = m == max_iter || b < 1e-13 || m % 8 == 0;
        if check {
            let t = DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    alphas[i]
                } else if i + 1 == j {
                    betas[i]
                } else if j + 1 == i {
                    betas[j]
                } else {
                    0.0
                }
            });
            let eig = sym_eigen(&t);
            let scale = eig.values[0].abs().max(eig.values[m - 1].abs()).max(1.0);
            let res_top = (b * eig.vectors[(m - 1, 0)]).abs();
            let res_bot = (b * eig.vectors[(m - 1, m - 1)]).abs();
            let done = b < 1e-13 || (res_top <= opts.tol * scale && res_bot <= opts.tol * scale);
            last = Some((eig, m));
            if done {
                converged = true;
                break;
            }
        }
        if k + 1 == max_iter {
            break;
        }
        betas.push(b);
        let next: Vec<f64> = w.iter().map(|x| x / b).collect();
        basis.push(next);
    }

    let (eig, m) = last.expect("at least one Lanczos check");
    let mut vec = vec![0.0; dim];
    for j in 0..m {
        axpy(eig.vectors[(j, 0)], &basis[j], &mut vec);
    }
    let nv = dot(&vec, &vec).sqrt();
    vec.iter_mut().for_each(|x| *x /= nv);
    Extremes {
        max: eig.values[0],
        min: eig.values[m - 1],
        max_vector: vec,
        iterations: m,
        converged: converged || m == free,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_sym(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn eigen_sorted_descending_and_reconstructs() {
        let a = random_sym(9, 1);
        let e = sym_eigen(&a);
        for w in e.values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let d = DMatrix::from_diagonal(&DVector::from_vec(e.values.clone()));
        let rec = &e.vectors * d * e.vectors.transpose();
        assert!((rec - a).abs().max() < 1e-12);
    }

    #[test]
    fn opnorm_simple() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0]));
        assert!((opnorm(&a) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn lanczos_matches_dense() {
        let a = random_sym(120, 7);
        let vals = sym_eigenvalues(&a);
        let ext = lanczos(120, |x, y| dense_matvec(&a, x, y), &[], &LanczosOptions::default());
        assert!((ext.max - vals[0]).abs() < 1e-9);
        assert!((ext.min - vals[119]).abs() < 1e-9);
    }

    #[test]
    fn lanczos_deflation_finds_second() {
        let a = random_sym(80, 3);
        let e = sym_eigen(&a);
        let top: Vec<f64> = e.vectors.column(0).iter().copied().collect();
        let ext = lanczos(80, |x, y| dense_matvec(&a, x, y), &[top], &LanczosOptions::default());
        assert!((ext.max - e.values[1]).abs() < 1e-9);
    }

    #[test]
    fn symmetry_check() {
        let mut a = random_sym(4, 2);
        assert!(check_symmetric(&a, 1e-12).is_ok());
        a[(0, 1)] += 1e-6;
        assert!(check_symmetric(&a, 1e-12).is_err());
    }
}
