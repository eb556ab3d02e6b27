//! Mean-field approximation of the outlier model.
//!
//! The self-consistent magnetization `m*` solves
//! `m = (1/n) sum_i u_i tanh(h_i - 2 beta m u_i)`, and with
//! `v*_i = sech^2(h_i - 2 beta m* u_i)`, `w*_i = u_i sech(h_i - 2 beta m* u_i)`
//! and `alpha* = 2 beta / (1 + (2 beta/n) |w*|^2)` the covariance and correlation
//! are approximated by
//!
//! ```text
//! Cov ≈ diag(v*) - (alpha*/n) (v* ⊙ u)(v* ⊙ u)^T
//! Cor ≈ I - (alpha*/n) w* w*^T
//! ```
//!
//! For `J = 0` the exact moments can also be written through the cumulant
//! generating function of the cavity magnetization; [`cov_via_cavity`]
//! implements that route as an independent check on the enumeration engine.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::exact::{enumerate, Limits};
use crate::linalg::{check_symmetric, opnorm};
use crate::model::IsingModel;
use crate::numeric::{adaptive_simpson, log_sum_exp, sech, LogSumExp};

const FP_TOL: f64 = 1e-13;
const FP_MAX_ITER: usize = 200;

fn check_outlier_inputs(beta: f64, u: &[f64], h: &[f64]) -> Result<()> {
    check_dim(u.len(), h.len())?;
    if u.is_empty() {
        return Err(Error::arg("empty direction vector"));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::arg(format!("beta must be finite and >= 0, got {beta}")));
    }
    if u.iter().any(|x| !(x.abs() <= 1.0)) {
        return Err(Error::arg("entries of u must lie in [-1, 1]"));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("h must be finite"));
    }
    Ok(())
}

/// Residual `g(m) = m - (1/n) sum u_i tanh(h_i - 2 beta m u_i)` and its derivative.
fn fixed_point_map(beta: f64, u: &[f64], h: &[f64], m: f64) -> (f64, f64) {
    let n = u.len() as f64;
    let mut s = 0.0;
    let mut ds = 0.0;
    for (&ui, &hi) in u.iter().zip(h) {
        let a = hi - 2.0 * beta * m * ui;
        s += ui * a.tanh();
        ds += ui * ui * sech(a).powi(2);
    }
    (m - s / n, 1.0 + 2.0 * beta * ds / n)
}

/// Solves for `(m*, lambda*)` with `lambda* = -2 beta m*`.
///
/// `g` is increasing with `g' >= 1` and `g(-1) <= 0 <= g(1)`, so Newton steps
/// safeguarded by the bracket `[-1, 1]` always converge.
pub fn solve_fixed_point(beta: f64, u: &[f64], h: &[f64]) -> Result<(f64, f64)> {
    check_outlier_inputs(beta, u, h)?;
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut m = 0.0;
    for _ in 0..FP_MAX_ITER {
        let (g, dg) = fixed_point_map(beta, u, h, m);
        if g.abs() <= FP_TOL {
            return Ok((m, -2.0 * beta * m));
        }
        if g > 0.0 {
            hi = m;
        } else {
            lo = m;
        }
        let newton = m - g / dg;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if next == m || hi - lo <= f64::EPSILON * 2.0 {
            return Ok((m, -2.0 * beta * m));
        }
        m = next;
    }
    Err(Error::Convergence(format!(
        "fixed point not found in {FP_MAX_ITER} iterations"
    )))
}

/// Mean-field parameters of the outlier model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxParams {
    pub beta: f64,
    pub u: Vec<f64>,
    pub m_star: f64,
    pub lambda_star: f64,
    pub v_star: Vec<f64>,
    pub w_star: Vec<f64>,
    pub alpha_star: f64,
    /// `F''(lambda*) = (1/n) sum w*_i^2`.
    pub f_second: f64,
}

pub fn approx_params(beta: f64, u: &[f64], h: &[f64]) -> Result<ApproxParams> {
    let (m_star, lambda_star) = solve_fixed_point(beta, u, h)?;
    let n = u.len() as f64;
    let mut v_star = Vec::with_capacity(u.len());
    let mut w_star = Vec::with_capacity(u.len());
    for (&ui, &hi) in u.iter().zip(h) {
        let s = sech(hi + lambda_star * ui);
        v_star.push(s * s);
        w_star.push(ui * s);
    }
    let f_second = w_star.iter().map(|w| w * w).sum::<f64>() / n;
    let alpha_star = 2.0 * beta / (1.0 + 2.0 * beta * f_second);
    Ok(ApproxParams {
        beta,
        u: u.to_vec(),
        m_star,
        lambda_star,
        v_star,
        w_star,
        alpha_star,
        f_second,
    })
}

impl ApproxParams {
    pub fn n(&self) -> usize {
        self.u.len()
    }
}

/// `diag(v*) - (alpha*/n)(v* ⊙ u)(v* ⊙ u)^T`.
pub fn approx_covariance(p: &ApproxParams) -> DMatrix<f64> {
    let n = p.n();
    let a: Vec<f64> = p.v_star.iter().zip(&p.u).map(|(v, u)| v * u).collect();
    let c = p.alpha_star / n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { p.v_star[i] } else { 0.0 };
        d - c * a[i] * a[j]
    })
}

/// `I - (alpha*/n) w* w*^T`.
pub fn approx_correlation(p: &ApproxParams) -> DMatrix<f64> {
    let n = p.n();
    let c = p.alpha_star / n as f64;
    DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - c * p.w_star[i] * p.w_star[j])
}

/// Largest absolute eigenvalue of `a - b`.
pub fn opnorm_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    check_symmetric(a, 1e-10)?;
    check_symmetric(b, 1e-10)?;
    let mut d = a - b;
    d = (&d + d.transpose()) * 0.5;
    Ok(opnorm(&d))
}

fn require_outlier_only(model: &IsingModel) -> Result<()> {
    if model.is_outlier_only() {
        Ok(())
    } else {
        Err(Error::arg("cavity identities need J = 0"))
    }
}

/// `Psi^(I)(s) = log E[exp(s M^(I))]` for each `s` in `s_values`.
///
/// The cavity measure removes the sites in `cavity` from the model and keeps
/// the weight `exp(-(beta/n) <u^(I),x>^2 + <h^(I),x>)`; the magnetization
/// `M^(I) = <u^(I),x>/n` keeps the full-model normalization `1/n`.
pub fn cavity_cgf(model: &IsingModel, cavity: &[usize], s_values: &[f64], limits: &Limits) -> Result<Vec<f64>> {
    require_outlier_only(model)?;
    let n = model.n();
    let mut removed = vec![false; n];
    for &i in cavity {
        if i >= n {
            return Err(Error::arg(format!("site {i} out of range for n = {n}")));
        }
        if removed[i] {
            return Err(Error::arg(format!("site {i} listed twice")));
        }
        removed[i] = true;
    }
    if cavity.len() > 2 {
        return Err(Error::arg("cavities of more than two sites are not supported"));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    let k = keep.len();
    if k == 0 {
        return Ok(vec![0.0; s_values.len()]);
    }
    limits.check_enum("cavity_cgf", k)?;
    let u: Vec<f64> = keep.iter().map(|&i| model.u()[i]).collect();
    let h: Vec<f64> = keep.iter().map(|&i| model.h()[i]).collect();
    // Rescaling beta keeps the per-spin coupling beta/n of the full model.
    let sub = IsingModel::outlier(model.beta() * k as f64 / n as f64, u.clone(), h)?;
    let inv_n = 1.0 / n as f64;
    let m = s_values.len();
    let parts = enumerate(
        &sub,
        limits.exec,
        || vec![LogSumExp::new(); m + 1],
        |acc, _, x, lw| {
            let mag = u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() * inv_n;
            acc[m].add(lw);
            for (a, &s) in acc.iter_mut().zip(s_values) {
                a.add(lw + s * mag);
            }
        },
    );
    let mut total = vec![LogSumExp::new(); m + 1];
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    let log_z = total[m].value();
    Ok(total[..m].iter().map(|t| t.value() - log_z).collect())
}

/// `Cov(X_i, X_j)` (the variance when `i == j`) from the cavity identities.
pub fn cov_via_cavity(model: &IsingModel, i: usize, j: usize, limits: &Limits) -> Result<f64> {
    require_outlier_only(model)?;
    let n = model.n();
    if i >= n || j >= n {
        return Err(Error::arg(format!("site out of range for n = {n}")));
    }
    let beta = model.beta();
    let u = model.u();
    let h = model.h();
    if i == j {
        let s = 2.0 * beta * u[i];
        let psi = cavity_cgf(model, &[i], &[s, -s], limits)?;
        let up = h[i] + psi[1];
        let down = -h[i] + psi[0];
        let lse = log_sum_exp([up, down]);
        return Ok(4.0 * (up + down - 2.0 * lse).exp());
    }
    let p = 2.0 * beta * (u[i] + u[j]);
    let q = 2.0 * beta * (u[i] - u[j]);
    let psi = cavity_cgf(model, &[i, j], &[p, -p, q, -q], limits)?;
    let c = 2.0 * beta * u[i] * u[j] / n as f64;
    // Log-weights of the four joint states of (x_i, x_j).
    let lpp = -c + h[i] + h[j] + psi[1];
    let lmm = -c - h[i] - h[j] + psi[0];
    let lpm = c + h[i] - h[j] + psi[3];
    let lmp = c - h[i] + h[j] + psi[2];
    // Cov = 4 Xi / Theta^2 with Xi = G++ G-- - G+- G-+ and Theta = sum of G.
    let a = lpp + lmm;
    let b = lpm + lmp;
    let log_theta = log_sum_exp([lpp, lmm, lpm, lmp]);
    let d = a - b;
    let xi_scaled = if d.abs() < 1.0 {
        d.exp_m1() * (b - 2.0 * log_theta).exp()
    } else {
        (a - 2.0 * log_theta).exp() - (b - 2.0 * log_theta).exp()
    };
    Ok(4.0 * xi_scaled)
}

/// Full covariance matrix from the cavity identities.
pub fn cov_matrix_via_cavity(model: &IsingModel, limits: &Limits) -> Result<DMatrix<f64>> {
    let n = model.n();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = cov_via_cavity(model, i, j, limits)?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// `(n^{1+delta} Gamma(1-delta))^{-1}`, the MLSI lower bound for measures whose
/// localization process stays controlled.
pub fn gamma_mlsi_bound(n: usize, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::arg("n must be positive"));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::arg(format!("delta must lie in [0, 1), got {delta}")));
    }
    Ok(1.0 / ((n as f64).powf(1.0 + delta) * libm::tgamma(1.0 - delta)))
}

/// `L / (1 - 2 L ||J||)`, the covariance bound after adding a PSD interaction
/// of norm `j_op` to a measure with covariance bounded by `L`.
pub fn hs_bound(l: f64, j_op: f64) -> Result<f64> {
    if !(l >= 0.0 && j_op >= 0.0) {
        return Err(Error::domain("L and ||J|| must be nonnegative"));
    }
    if !(2.0 * l * j_op < 1.0) {
        return Err(Error::domain(format!("2 L ||J|| = {} must be < 1", 2.0 * l * j_op)));
    }
    Ok(l / (1.0 - 2.0 * l * j_op))
}

/// `exp(-int_0^1 c / (1 - c(1 - lambda)) d lambda)` with `c = 2(1+alpha)||J||`,
/// evaluated by adaptive Simpson quadrature.
pub fn theorem_main_bound(j_op: f64, alpha: f64) -> Result<f64> {
    let c = main_bound_constant(j_op, alpha)?;
    let integrand = |lambda: f64| c / (1.0 - c * (1.0 - lambda));
    Ok((-adaptive_simpson(&integrand, 0.0, 1.0, 1e-14)).exp())
}

/// Closed form of [`theorem_main_bound`], `1 - 2(1+alpha)||J||`.
pub fn theorem_main_bound_closed(j_op: f64, alpha: f64) -> Result<f64> {
    Ok(1.0 - main_bound_constant(j_op, alpha)?)
}

fn main_bound_constant(j_op: f64, alpha: f64) -> Result<f64> {
    if !(j_op >= 0.0 && alpha >= 0.0) {
        return Err(Error::domain("||J|| and alpha must be nonnegative"));
    }
    let c = 2.0 * (1.0 + alpha) * j_op;
    if !(c < 1.0) {
        return Err(Error::domain(format!("2(1+alpha)||J|| = {c} must be < 1")));
    }
    Ok(c)
}

/// Convenience: `approx_params` for the `beta`, `u`, `h` of a model.
pub fn model_params(model: &IsingModel) -> Result<ApproxParams> {
    approx_params(model.beta(), model.u(), model.h())
}

/// Eigenvalues of the correlation approximant, ascending.
pub fn approx_correlation_spectrum(p: &ApproxParams) -> Vec<f64> {
    let mut v: Vec<f64> = approx_correlation(p).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}
