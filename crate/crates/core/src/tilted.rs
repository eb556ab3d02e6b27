//! Quadratically tilted moments of normalized sums of independent `±1`
//! variables and their Gaussian counterparts.
//!
//! Throughout, `h_m(x) = x^m exp(-gamma x^2)` and
//! `Z = omega^{-1/2} sum_k a_k (xi_k - E xi_k)` with `omega = sum_k a_k^2 Var(xi_k)`.
//! A mean shift `mu` moves the evaluation point (`h_m(Z + mu)`); the Gaussian
//! comparator always stays centred.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::cap;
use crate::numeric::{gaussian_moment, ln_binomial, log_sum_exp, KahanSum};
use crate::par::{self, Exec};

/// Largest ensemble enumerated over all sign patterns.
pub const GENERAL_PATH_MAX_N: usize = 20;

/// Largest equal-weight ensemble handled by the binomial path.
pub const BINOMIAL_PATH_MAX_N: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiltedEnsemble {
    weights: Vec<f64>,
    means: Vec<f64>,
    gamma: f64,
    mu: f64,
    omega: f64,
}

impl TiltedEnsemble {
    pub fn custom(weights: Vec<f64>, means: Vec<f64>, gamma: f64, mu: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::arg("ensemble needs at least one summand"));
        }
        crate::error::check_dim(weights.len(), means.len())?;
        if weights.iter().any(|a| !(a.abs() <= 1.0)) {
            return Err(Error::arg("weights must satisfy |a_k| <= 1"));
        }
        if means.iter().any(|m| !(m.abs() < 1.0)) {
            return Err(Error::arg("means must lie in (-1, 1)"));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::arg(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        if !mu.is_finite() {
            return Err(Error::arg("mu must be finite"));
        }
        let mut acc = KahanSum::new();
        for (a, m) in weights.iter().zip(&means) {
            acc.add(a * a * (1.0 - m * m));
        }
        let omega = acc.value();
        if !(omega > 0.0) {
            return Err(Error::arg("ensemble has zero variance"));
        }
        Ok(TiltedEnsemble {
            weights,
            means,
            gamma,
            mu,
            omega,
        })
    }

    /// `n` unit-weight summands with common mean `mean`.
    pub fn equal_weight(n: usize, mean: f64, gamma: f64, mu: f64) -> Result<Self> {
        TiltedEnsemble::custom(vec![1.0; n], vec![mean; n], gamma, mu)
    }

    /// `n` unit-weight fair coins: `omega = n`.
    pub fn fair_coin(n: usize, gamma: f64, mu: f64) -> Result<Self> {
        TiltedEnsemble::equal_weight(n, 0.0, gamma, mu)
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        TiltedEnsemble::custom(self.weights.clone(), self.means.clone(), gamma, self.mu)
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        TiltedEnsemble::custom(self.weights.clone(), self.means.clone(), self.gamma, mu)
    }

    fn is_equal_weight(&self) -> bool {
        let (a, m) = (self.weights[0], self.means[0]);
        self.weights.iter().all(|&w| w == a) && self.means.iter().all(|&x| x == m)
    }

    /// Atoms `(log P, z)` of the law of `Z`.
    fn atoms(&self, exec: Exec) -> Result<Vec<(f64, f64)>> {
        let n = self.n();
        let scale = 1.0 / self.omega.sqrt();
        if self.is_equal_weight() {
            cap("binomial tilted path", n, BINOMIAL_PATH_MAX_N)?;
            let (a, m) = (self.weights[0], self.means[0]);
            let p = 0.5 * (1.0 + m);
            let (lp, lq) = (p.ln(), (1.0 - p).ln());
            let nf = n as f64;
            return Ok(par::map_indexed(exec, n + 1, |k| {
                let kf = k as f64;
                let logp = ln_binomial(n as u64, k as u64) + kf * lp + (nf - kf) * lq;
                (logp, a * (2.0 * kf - nf - nf * m) * scale)
            }));
        }
        cap("general tilted path", n, GENERAL_PATH_MAX_N)?;
        let lp_up: Vec<f64> = self.means.iter().map(|m| (0.5 * (1.0 + m)).ln()).collect();
        let lp_down: Vec<f64> = self.means.iter().map(|m| (0.5 * (1.0 - m)).ln()).collect();
        let centre: f64 = self.weights.iter().zip(&self.means).map(|(a, m)| a * m).sum();
        Ok(par::map_indexed(exec, 1usize << n, |bits| {
            let mut logp = 0.0;
            let mut s = 0.0;
            for k in 0..n {
                if bits >> k & 1 == 1 {
                    logp += lp_up[k];
                    s += self.weights[k];
                } else {
                    logp += lp_down[k];
                    s -= self.weights[k];
                }
            }
            (logp, (s - centre) * scale)
        }))
    }
}

/// `h_m(x) = x^m exp(-gamma x^2)`; zero for negative `m`.
#[inline]
pub fn h(m: i32, gamma: f64, x: f64) -> f64 {
    if m < 0 {
        0.0
    } else {
        x.powi(m) * (-gamma * x * x).exp()
    }
}

/// `E[G^m exp(-gamma G^2)]` for a standard Gaussian `G`.
pub fn gaussian_tilted_moment(m: u32, gamma: f64) -> f64 {
    if m % 2 == 1 {
        return 0.0;
    }
    let mut v = (1.0 + 2.0 * gamma).powf(-0.5);
    let mut k = 2;
    while k <= m {
        v *= f64::from(k - 1) / (1.0 + 2.0 * gamma);
        k += 2;
    }
    v
}

/// `E[G_a^k exp(-gamma G_a^2)]` for `G_a ~ N(0, a)`.
pub fn scaled_gaussian_tilted_moment(k: u32, a: f64, gamma: f64) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let d = 1.0 + 2.0 * a * gamma;
    d.powf(-0.5) * gaussian_moment(k) * (a / d).powi(k as i32 / 2)
}

/// Exact `E[h_m(Z + mu)]` for the ensemble.
pub fn exact_tilted_moment(ens: &TiltedEnsemble, m: u32) -> Result<f64> {
    exact_tilted_moment_with(ens, m, Exec::default())
}

pub fn exact_tilted_moment_with(ens: &TiltedEnsemble, m: u32, exec: Exec) -> Result<f64> {
    let atoms = ens.atoms(exec)?;
    let mut acc = KahanSum::new();
    for &(lp, z) in &atoms {
        acc.add(lp.exp() * h(m as i32, ens.gamma, z + ens.mu));
    }
    Ok(acc.value())
}

/// Monte Carlo estimate and standard error of `E[h_m(Z + mu)]`.
///
/// Samples are drawn in fixed chunks, each from its own stream of the
/// generator keyed by `seed`, so the estimate does not depend on the thread
/// count.
pub fn mc_tilted_moment(ens: &TiltedEnsemble, m: u32, samples: usize, seed: u64) -> Result<(f64, f64)> {
    mc_tilted_moment_with(ens, m, samples, seed, Exec::default())
}

const MC_CHUNK: usize = 8192;

pub fn mc_tilted_moment_with(
    ens: &TiltedEnsemble,
    m: u32,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<(f64, f64)> {
    if samples < 1000 {
        return Err(Error::arg(format!("need at least 1000 samples, got {samples}")));
    }
    let scale = 1.0 / ens.omega.sqrt();
    let equal = ens.is_equal_weight();
    let binom = if equal {
        let p = 0.5 * (1.0 + ens.means[0]);
        Some(Binomial::new(ens.n() as u64, p).map_err(|e| Error::arg(e.to_string()))?)
    } else {
        None
    };
    let centre: f64 = ens.weights.iter().zip(&ens.means).map(|(a, m)| a * m).sum();
    let chunks = samples.div_ceil(MC_CHUNK);
    let parts = par::map_indexed(exec, chunks, |c| {
        let mut rng = crate::rng::stream(seed, c as u64);
        let count = MC_CHUNK.min(samples - c * MC_CHUNK);
        let mut s1 = KahanSum::new();
        let mut s2 = KahanSum::new();
        for _ in 0..count {
            let z = match &binom {
                Some(b) => {
                    let k = b.sample(&mut rng) as f64;
                    let nf = ens.n() as f64;
                    ens.weights[0] * (2.0 * k - nf - nf * ens.means[0]) * scale
                }
                None => {
                    let mut s = 0.0;
                    for (a, mk) in ens.weights.iter().zip(&ens.means) {
                        let up = rng.random::<f64>() < 0.5 * (1.0 + mk);
                        s += if up { *a } else { -a };
                    }
                    (s - centre) * scale
                }
            };
            let v = h(m as i32, ens.gamma, z + ens.mu);
            s1.add(v);
            s2.add(v * v);
        }
        (s1, s2)
    });
    let mut s1 = KahanSum::new();
    let mut s2 = KahanSum::new();
    for (a, b) in &parts {
        s1.merge(a);
        s2.merge(b);
    }
    let nf = samples as f64;
    let mean = s1.value() / nf;
    let var = ((s2.value() - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok((mean, (var / nf).sqrt()))
}

/// `|E[h_m(Z + mu)] - E[h_m(G)]|` for this ensemble. This is one term of the
/// supremum defining the deficit over the whole class, hence a lower bound on it.
pub fn deficit(ens: &TiltedEnsemble, m: u32) -> Result<f64> {
    Ok((exact_tilted_moment(ens, m)? - gaussian_tilted_moment(m, ens.gamma)).abs())
}

/// Constant `C` in the hypothesis `|t| <= C beta / sqrt(n)` used for the
/// advisory flag of [`tilted_variance`].
pub const TILT_HYPOTHESIS_C: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiltedVariance {
    /// Variance of `W` under the law proportional to `exp(tW - beta W^2)`.
    pub variance: f64,
    /// Mean of `W` under the same law.
    pub mean: f64,
    /// `zeta / (1 + 2 beta zeta)`, the value for a Gaussian `W`.
    pub gaussian_prediction: f64,
    /// `Var(W) = omega / n`.
    pub zeta: f64,
    pub gamma: f64,
    pub mu: f64,
    /// Whether `|t| <= C beta / sqrt(n)` holds; evaluation proceeds either way.
    pub within_hypothesis: bool,
}

/// Tilted variance of `W = n^{-1/2} sum_k a_k (xi_k - E xi_k)`, using the
/// ensemble's summands (its own `gamma` and `mu` are ignored).
///
/// For `beta > 0` it is evaluated through
/// `Var = (omega/n) (E h_2/E h_0 - (E h_1/E h_0)^2)` at `Z + mu`, with
/// `gamma = zeta beta` and `mu = -(t / 2 beta) sqrt(n / omega)`; at `beta = 0`
/// the exponential tilt is applied directly.
pub fn tilted_variance(ens: &TiltedEnsemble, t: f64, beta: f64) -> Result<TiltedVariance> {
    if !(beta >= 0.0 && beta.is_finite() && t.is_finite()) {
        return Err(Error::arg("need finite t and beta >= 0"));
    }
    let n = ens.n() as f64;
    let zeta = ens.omega / n;
    let within_hypothesis = t.abs() <= TILT_HYPOTHESIS_C * beta / n.sqrt();
    let gaussian_prediction = zeta / (1.0 + 2.0 * beta * zeta);
    let atoms = ens.atoms(Exec::default())?;
    let root_zeta = zeta.sqrt();
    if beta == 0.0 {
        let (mean, variance) = weighted_moments(atoms.iter().map(|&(lp, z)| {
            let w = root_zeta * z;
            (lp + t * w, w)
        }));
        return Ok(TiltedVariance {
            variance,
            mean,
            gaussian_prediction,
            zeta,
            gamma: 0.0,
            mu: 0.0,
            within_hypothesis,
        });
    }
    let gamma = zeta * beta;
    let mu = -(t / (2.0 * beta)) * (n / ens.omega).sqrt();
    let mut e = [KahanSum::new(), KahanSum::new(), KahanSum::new()];
    for &(lp, z) in &atoms {
        let p = lp.exp();
        let y = z + mu;
        let base = p * (-gamma * y * y).exp();
        e[0].add(base);
        e[1].add(base * y);
        e[2].add(base * y * y);
    }
    let (e0, e1, e2) = (e[0].value(), e[1].value(), e[2].value());
    let r1 = e1 / e0;
    let variance = zeta * (e2 / e0 - r1 * r1);
    let mean = root_zeta * r1 + t / (2.0 * beta);
    Ok(TiltedVariance {
        variance,
        mean,
        gaussian_prediction,
        zeta,
        gamma,
        mu,
        within_hypothesis,
    })
}

/// Mean and variance of `w` under weights `exp(logw)` (normalized here).
fn weighted_moments(items: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let log_z = log_sum_exp(items.clone().map(|(l, _)| l));
    let mut m = KahanSum::new();
    for (l, w) in items.clone() {
        m.add((l - log_z).exp() * w);
    }
    let mean = m.value();
    let mut v = KahanSum::new();
    for (l, w) in items {
        v.add((l - log_z).exp() * (w - mean) * (w - mean));
    }
    (mean, v.value())
}

/// Direct evaluation of the tilted mean and variance of `W` from its atoms,
/// without the moment identity.
pub fn tilted_variance_direct(ens: &TiltedEnsemble, t: f64, beta: f64) -> Result<(f64, f64)> {
    let atoms = ens.atoms(Exec::default())?;
    let root_zeta = (ens.omega / ens.n() as f64).sqrt();
    Ok(weighted_moments(atoms.iter().map(|&(lp, z)| {
        let w = root_zeta * z;
        (lp + t * w - beta * w * w, w)
    })))
}

/// Coefficients `c_{m,l,i}`, `i = -l..=l`, of
/// `h_m^{(l)} = sum_i c_{m,l,i} gamma^{(l+i)/2} h_{m+i}`; entry `i + l` of the
/// returned vector holds `c_{m,l,i}`.
pub fn hm_derivative_coeffs(m: u32, ell: u32) -> Vec<i64> {
    let l = ell as usize;
    let mut c = vec![0i64; 2 * l + 1];
    c[l] = 1;
    for step in 0..l {
        let mut next = vec![0i64; 2 * l + 1];
        for idx in (l - step)..=(l + step) {
            let v = c[idx];
            if v == 0 {
                continue;
            }
            let i = idx as i64 - l as i64;
            // (h_k)' = k h_{k-1} - 2 gamma h_{k+1}
            next[idx - 1] += (m as i64 + i) * v;
            next[idx + 1] -= 2 * v;
        }
        c = next;
    }
    c
}

/// `h_m^{(l)}(x)` through the coefficient table.
pub fn hm_derivative_eval(m: u32, ell: u32, gamma: f64, x: f64) -> f64 {
    let c = hm_derivative_coeffs(m, ell);
    let l = ell as i32;
    let mut acc = 0.0;
    for (idx, &v) in c.iter().enumerate() {
        if v == 0 {
            continue;
        }
        let i = idx as i32 - l;
        acc += v as f64 * gamma.powf(f64::from(l + i) / 2.0) * h(m as i32 + i, gamma, x);
    }
    acc
}

/// Solution `f_m = -h_{m-1}/(1+2 gamma)` of the Stein equation for `h~_m`.
pub fn poisson_solution_eval(m: u32, gamma: f64, x: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::arg("the Poisson solution needs m >= 1"));
    }
    Ok(-h(m as i32 - 1, gamma, x) / (1.0 + 2.0 * gamma))
}

/// `h~_m = h_m - (m-1)/(1+2 gamma) h_{m-2}`.
pub fn tilde_h_eval(m: u32, gamma: f64, x: f64) -> f64 {
    h(m as i32, gamma, x) - (f64::from(m) - 1.0) / (1.0 + 2.0 * gamma) * h(m as i32 - 2, gamma, x)
}

/// `E[h~_m(G)]`, zero for `m >= 1`.
pub fn tilde_h_gaussian_mean(m: u32, gamma: f64) -> f64 {
    let lower = if m >= 2 { gaussian_tilted_moment(m - 2, gamma) } else { 0.0 };
    gaussian_tilted_moment(m, gamma) - (f64::from(m) - 1.0) / (1.0 + 2.0 * gamma) * lower
}

/// `f_m'(x) - x f_m(x) - (h~_m(x) - E h~_m(G))`; vanishes identically.
pub fn stein_residual(m: u32, gamma: f64, x: f64) -> Result<f64> {
    let f = poisson_solution_eval(m, gamma, x)?;
    let df = -hm_derivative_eval(m - 1, 1, gamma, x) / (1.0 + 2.0 * gamma);
    Ok(df - x * f - (tilde_h_eval(m, gamma, x) - tilde_h_gaussian_mean(m, gamma)))
}

/// `E[f_m^{(l)}(G_a)]` for `G_a ~ N(0, a)`, from the derivative table and the
/// Gaussian moments of the tilted law. Vanishes exactly when `m + l` is even.
pub fn gaussian_parity_expectation(m: u32, ell: u32, a: f64, gamma: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::arg("f_m needs m >= 1"));
    }
    if !(0.5..=1.0).contains(&a) {
        return Err(Error::arg(format!("a must lie in [1/2, 1], got {a}")));
    }
    let c = hm_derivative_coeffs(m - 1, ell);
    let l = ell as i64;
    let mut acc = 0.0;
    for (idx, &v) in c.iter().enumerate() {
        if v == 0 {
            continue;
        }
        let i = idx as i64 - l;
        let k = m as i64 - 1 + i;
        if k < 0 {
            continue;
        }
        acc += v as f64 * gamma.powf((l + i) as f64 / 2.0) * scaled_gaussian_tilted_moment(k as u32, a, gamma);
    }
    Ok(-acc / (1.0 + 2.0 * gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::adaptive_simpson;
    use proptest::prelude::*;
    use rand::Rng;

    fn gauss_quad<F: Fn(f64) -> f64>(f: F, var: f64) -> f64 {
        let sd = var.sqrt();
        let dens = |x: f64| (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let g = |x: f64| f(x) * dens(x);
        let mut total = 0.0;
        let mut lo = -40.0 * sd;
        while lo < 40.0 * sd {
            total += adaptive_simpson(&g, lo, lo + sd, 1e-15);
            lo += sd;
        }
        total
    }

    #[test]
    fn gaussian_moment_examples() {
        assert_eq!(gaussian_tilted_moment(0, 0.0), 1.0);
        assert_eq!(gaussian_tilted_moment(1, 3.0), 0.0);
        assert!((gaussian_tilted_moment(2, 1.5) - 0.125).abs() < 1e-16);
    }

    #[test]
    fn gaussian_moment_matches_quadrature() {
        for gamma in [0.0, 0.5, 2.0, 8.0] {
            for m in 0..=10u32 {
                let q = gauss_quad(|x| h(m as i32, gamma, x), 1.0);
                assert!((gaussian_tilted_moment(m, gamma) - q).abs() < 1e-12, "m={m} gamma={gamma}");
            }
        }
    }

    #[test]
    fn ensemble_validation() {
        let e = TiltedEnsemble::custom(vec![0.5, 1.0], vec![0.2, -0.6], 1.0, 0.0).unwrap();
        assert!((e.omega() - (0.25 * 0.96 + 0.64)).abs() < 1e-15);
        assert!(TiltedEnsemble::custom(vec![1.5], vec![0.0], 1.0, 0.0).is_err());
        assert!(TiltedEnsemble::custom(vec![1.0], vec![1.0], 1.0, 0.0).is_err());
        assert!(TiltedEnsemble::custom(vec![1.0], vec![0.0], -1.0, 0.0).is_err());
    }

    #[test]
    fn exact_moment_examples() {
        for gamma in [0.0, 0.3, 2.0] {
            let e = TiltedEnsemble::fair_coin(1, gamma, 0.0).unwrap();
            assert!((exact_tilted_moment(&e, 2).unwrap() - (-gamma).exp()).abs() < 1e-15);
        }
        let sym = TiltedEnsemble::custom(vec![0.3, 1.0, -0.7, 0.5], vec![0.0; 4], 1.2, 0.0).unwrap();
        assert_eq!(exact_tilted_moment(&sym, 1).unwrap().abs(), 0.0);
        let big = TiltedEnsemble::fair_coin(1001, 1.0, 0.0).unwrap();
        assert!(exact_tilted_moment(&big, 1).unwrap().abs() < 1e-17);
    }

    #[test]
    fn binomial_and_general_paths_agree() {
        let eq = TiltedEnsemble::equal_weight(12, 0.3, 0.8, 0.1).unwrap();
        let mut w = eq.weights().to_vec();
        w[0] = 1.0 - 1e-15;
        let gen = TiltedEnsemble::custom(w, eq.means().to_vec(), 0.8, 0.1).unwrap();
        for m in 0..5 {
            let a = exact_tilted_moment(&eq, m).unwrap();
            let b = exact_tilted_moment(&gen, m).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn general_path_capacity() {
        let w: Vec<f64> = (0..21).map(|k| 0.5 + 0.01 * k as f64).collect();
        let e = TiltedEnsemble::custom(w, vec![0.0; 21], 1.0, 0.0).unwrap();
        assert!(exact_tilted_moment(&e, 2).unwrap_err().is_capacity());
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let weights = vec![0.9, -0.4, 1.0, 0.7, 0.2, -1.0, 0.6, 0.8, -0.3, 0.5, 1.0, 0.45];
        let means = vec![0.1, -0.3, 0.0, 0.5, 0.2, -0.1, 0.0, 0.3, -0.6, 0.0, 0.25, 0.4];
        let e = TiltedEnsemble::custom(weights, means, 0.7, 0.2).unwrap();
        let exact = exact_tilted_moment(&e, 2).unwrap();
        let (est, se) = mc_tilted_moment(&e, 2, 1_000_000, 7).unwrap();
        assert!((est - exact).abs() <= 4.0 * se, "{est} ± {se} vs {exact}");

        let sym = TiltedEnsemble::fair_coin(50, 1.0, 0.0).unwrap();
        let (est, se) = mc_tilted_moment(&sym, 1, 100_000, 3).unwrap();
        assert!(est.abs() <= 4.0 * se);

        let big = TiltedEnsemble::fair_coin(10_000, 2.0, 0.0).unwrap();
        let exact = exact_tilted_moment(&big, 0).unwrap();
        let (est, se) = mc_tilted_moment(&big, 0, 200_000, 11).unwrap();
        assert!((est - exact).abs() <= 4.0 * se);

        assert_eq!(
            mc_tilted_moment(&big, 0, 5000, 1).unwrap(),
            mc_tilted_moment(&big, 0, 5000, 1).unwrap()
        );
        assert_eq!(
            mc_tilted_moment_with(&e, 2, 30_000, 5, Exec::Sequential).unwrap(),
            mc_tilted_moment_with(&e, 2, 30_000, 5, Exec::Parallel).unwrap()
        );
        assert!(mc_tilted_moment(&big, 0, 10, 1).is_err());
    }

    #[test]
    fn deficit_examples() {
        let e = TiltedEnsemble::fair_coin(40, 0.0, 0.0).unwrap();
        assert!(deficit(&e, 0).unwrap() < 1e-14);
        let e = TiltedEnsemble::fair_coin(41, 1.0, 0.0).unwrap();
        let d = deficit(&e, 1).unwrap();
        assert!(d < 1e-14, "odd deficit {d}");
        let d1 = deficit(&TiltedEnsemble::fair_coin(256, 4.0, 0.0).unwrap(), 2).unwrap();
        let d2 = deficit(&TiltedEnsemble::fair_coin(512, 4.0, 0.0).unwrap(), 2).unwrap();
        assert!((0.35..=0.7).contains(&(d2 / d1)), "ratio {}", d2 / d1);
    }

    #[test]
    fn tilted_variance_examples() {
        let e = TiltedEnsemble::equal_weight(64, 0.3, 0.0, 0.0).unwrap();
        let v = tilted_variance(&e, 0.0, 0.0).unwrap();
        assert!((v.variance - v.zeta).abs() < 1e-14);
        let fair = TiltedEnsemble::fair_coin(64, 0.0, 0.0).unwrap();
        let v = tilted_variance(&fair, 0.1, 2.0).unwrap();
        assert_eq!(v.zeta, 1.0);
        assert_eq!(v.gaussian_prediction, 1.0 / 5.0);
    }

    #[test]
    fn tilted_variance_identity_matches_direct() {
        let e = TiltedEnsemble::custom(
            vec![1.0, 0.5, -0.8, 0.9, 0.3, 1.0, 0.7, -0.2],
            vec![0.1, 0.0, -0.4, 0.2, 0.5, 0.0, -0.1, 0.3],
            0.0,
            0.0,
        )
        .unwrap();
        for (t, beta) in [(0.0, 1.0), (0.5, 2.0), (-1.0, 0.3), (0.7, 0.0)] {
            let v = tilted_variance(&e, t, beta).unwrap();
            let (mean, var) = tilted_variance_direct(&e, t, beta).unwrap();
            assert!((v.variance - var).abs() < 1e-12);
            assert!((v.mean - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn tilted_variance_rate_at_moderate_n() {
        let beta = 16.0;
        let n = 1024;
        let e = TiltedEnsemble::fair_coin(n, 0.0, 0.0).unwrap();
        let v = tilted_variance(&e, beta / (n as f64).sqrt(), beta).unwrap();
        assert!(v.within_hypothesis);
        let scaled = (v.variance - v.gaussian_prediction).abs() * n as f64 * (1.0 + 2.0 * beta * v.zeta);
        assert!(scaled <= 10.0 * (1.0 + beta).ln().powi(2));
    }

    #[test]
    fn derivative_coefficients() {
        assert_eq!(hm_derivative_coeffs(5, 0), vec![1]);
        for m in 0..6 {
            assert_eq!(hm_derivative_coeffs(m, 1), vec![m as i64, 0, -2]);
            let mm = m as i64;
            assert_eq!(hm_derivative_coeffs(m, 2), vec![mm * (mm - 1), 0, -2 * (2 * mm + 1), 0, 4]);
        }
    }

    // Oracle: central finite differences of h_m.
    #[test]
    fn derivative_table_matches_finite_differences() {
        let mut r = crate::rng::from_seed(9);
        for _ in 0..100 {
            let m: u32 = r.random_range(0..=6);
            let gamma = r.random_range(0.1..3.0);
            let x: f64 = r.random_range(-2.0..2.0);
            let step = 1e-4;
            let fd2 = (h(m as i32, gamma, x + step) - 2.0 * h(m as i32, gamma, x) + h(m as i32, gamma, x - step))
                / (step * step);
            let table = hm_derivative_eval(m, 2, gamma, x);
            assert!((fd2 - table).abs() <= 1e-6 * table.abs().max(1.0), "m={m} x={x}");
            let fd1 = (h(m as i32, gamma, x + step) - h(m as i32, gamma, x - step)) / (2.0 * step);
            assert!((fd1 - hm_derivative_eval(m, 1, gamma, x)).abs() <= 1e-6 * fd1.abs().max(1.0));
        }
    }

    #[test]
    fn poisson_solution_examples() {
        for gamma in [0.0, 0.5, 3.0] {
            for x in [-1.0, 0.2, 2.5] {
                let f1 = poisson_solution_eval(1, gamma, x).unwrap();
                assert!((f1 + (-gamma * x * x).exp() / (1.0 + 2.0 * gamma)).abs() < 1e-16);
            }
            for m in 1..9 {
                assert!(tilde_h_gaussian_mean(m, gamma).abs() < 1e-15);
            }
        }
        assert!(poisson_solution_eval(0, 1.0, 0.0).is_err());
    }

    #[test]
    fn stein_residual_vanishes() {
        let mut r = crate::rng::from_seed(10);
        for _ in 0..100 {
            let m = r.random_range(1..=8);
            let gamma = [0.5, 2.0, 8.0][r.random_range(0..3)];
            let x = r.random_range(-4.0..4.0);
            assert!(stein_residual(m, gamma, x).unwrap().abs() <= 1e-9);
            // Finite-difference check of f_m' as an independent derivative.
            let s = 1e-5;
            let fd = (poisson_solution_eval(m, gamma, x + s).unwrap() - poisson_solution_eval(m, gamma, x - s).unwrap())
                / (2.0 * s);
            let f = poisson_solution_eval(m, gamma, x).unwrap();
            let res = fd - x * f - (tilde_h_eval(m, gamma, x) - tilde_h_gaussian_mean(m, gamma));
            assert!(res.abs() < 1e-6);
        }
    }

    #[test]
    fn parity_expectations() {
        for gamma in [0.5f64, 2.0, 8.0] {
            for m in 1..=6 {
                for ell in 0..=4 {
                    if (m + ell) % 2 == 0 {
                        for a in [0.5, 0.75, 1.0] {
                            assert!(gaussian_parity_expectation(m, ell, a, gamma).unwrap().abs() <= 1e-14);
                        }
                    }
                }
            }
        }
        assert!((gaussian_parity_expectation(1, 0, 0.7, 0.0).unwrap() + 1.0).abs() < 1e-15);
        // m = 2, l = 1, a = 1 reduces to -(1 + 2 gamma)^{-5/2}.
        for gamma in [1.0, 4.0, 16.0] {
            let v = gaussian_parity_expectation(2, 1, 1.0, gamma).unwrap();
            assert!((v + (1.0 + 2.0 * gamma).powf(-2.5)).abs() < 1e-15);
        }
        assert!(gaussian_parity_expectation(2, 1, 0.3, 1.0).is_err());
    }

    // Oracle: quadrature of f_m^{(l)} against the N(0, a) density.
    #[test]
    fn parity_expectation_matches_quadrature() {
        for (m, ell) in [(2u32, 1u32), (3, 2), (1, 2), (4, 3), (3, 0)] {
            for a in [0.5, 1.0] {
                let gamma = 1.3;
                let f = |x: f64| -hm_derivative_eval(m - 1, ell, gamma, x) / (1.0 + 2.0 * gamma);
                let q = gauss_quad(f, a);
                let v = gaussian_parity_expectation(m, ell, a, gamma).unwrap();
                assert!((q - v).abs() < 1e-11, "m={m} l={ell}: {q} vs {v}");
            }
        }
    }

    #[test]
    fn derivative_sup_norm_bound() {
        for gamma in [0.5f64, 2.0, 8.0] {
            for m in 0..=6u32 {
                for ell in 0..=4u32 {
                    let bound = 3f64.powi(ell as i32) * f64::from(m + 1).powi(m as i32 + 1)
                        / gamma.powf((f64::from(m) - f64::from(ell)) / 2.0);
                    let sup = (0..=4000)
                        .map(|k| hm_derivative_eval(m, ell, gamma, -10.0 + 0.005 * k as f64).abs())
                        .fold(0.0, f64::max);
                    assert!(sup <= bound, "m={m} l={ell} gamma={gamma}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn omega_consistent(seed in 0u64..1000, n in 1usize..15) {
            let mut r = crate::rng::from_seed(seed);
            let w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..=1.0)).collect();
            let m: Vec<f64> = (0..n).map(|_| r.random_range(-0.9..0.9)).collect();
            if let Ok(e) = TiltedEnsemble::custom(w.clone(), m.clone(), 1.0, 0.0) {
                let direct: f64 = w.iter().zip(&m).map(|(a, b)| a * a * (1.0 - b * b)).sum();
                prop_assert!((e.omega() - direct).abs() < 1e-12);
                // Z has unit variance: E[Z^2] at gamma = 0.
                let e0 = e.with_gamma(0.0).unwrap();
                prop_assert!((exact_tilted_moment(&e0, 2).unwrap() - 1.0).abs() < 1e-10);
                prop_assert!(exact_tilted_moment(&e0, 1).unwrap().abs() < 1e-12);
            }
        }
    }
}
