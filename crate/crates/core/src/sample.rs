//! Random parameter draws used by experiments and tests.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::opnorm;
use crate::model::IsingModel;

/// Outlier direction with i.i.d. Uniform[-1,1] entries.
pub fn random_u<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// External field with i.i.d. Uniform[-scale, scale] entries.
pub fn random_h<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| scale * rng.random_range(-1.0..=1.0)).collect()
}

/// Field with i.i.d. N(0, scale^2) entries.
pub fn gaussian_h<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Wishart-type PSD matrix `G G^T` rescaled to operator norm `op`.
pub fn random_psd<R: Rng + ?Sized>(n: usize, op: f64, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut a = &g * g.transpose();
    a = (&a + a.transpose()) * 0.5;
    let norm = opnorm(&a);
    if norm > 0.0 {
        a *= op / norm;
    }
    a
}

/// Outlier model with uniform `u`, PSD interaction of norm `j_op` and uniform field.
pub fn random_model<R: Rng + ?Sized>(n: usize, beta: f64, j_op: f64, h_scale: f64, rng: &mut R) -> IsingModel {
    let u = random_u(n, rng);
    let j = if j_op > 0.0 {
        random_psd(n, j_op, rng)
    } else {
        DMatrix::zeros(n, n)
    };
    let h = random_h(n, h_scale, rng);
    IsingModel::new(beta, u, j, h).expect("sampled parameters are valid")
}
