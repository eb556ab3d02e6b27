//! The random-scan Glauber kernel on the full hypercube, stored sparsely:
//! each state has `n` neighbours, so the kernel needs `O(n 2^n)` memory rather
//! than a dense `4^n` matrix.

use nalgebra::DMatrix;

use super::{cap, log_weights, Limits};
use crate::error::{Error, Result};
use crate::linalg::{lanczos, sym_eigen, LanczosOptions};
use crate::model::{IsingModel, SpinConfig};
use crate::numeric::{log_sum_exp, sigmoid, KahanSum};
use crate::par::{self, Exec};

/// Largest state space handled by a dense eigensolve in [`spectral_gap`];
/// larger spaces use Lanczos.
const DENSE_STATES: usize = 1 << 10;

/// Largest n for which [`GlauberKernel::to_dense`] materializes the matrix.
pub const DENSE_KERNEL_MAX_N: usize = 12;

#[derive(Debug, Clone)]
pub struct GlauberKernel {
    n: usize,
    pi: Vec<f64>,
    /// `flip[x * n + i]`: probability of moving from `x` to `x` with bit `i` flipped.
    flip: Vec<f64>,
    stay: Vec<f64>,
    exec: Exec,
}

/// Builds the Glauber kernel of `model`.
pub fn transition_matrix(model: &IsingModel, limits: &Limits) -> Result<GlauberKernel> {
    GlauberKernel::new(model, limits)
}

impl GlauberKernel {
    pub fn new(model: &IsingModel, limits: &Limits) -> Result<Self> {
        let n = model.n();
        limits.check_kernel("Glauber kernel", n)?;
        let lw = log_weights(model, limits)?;
        let log_z = log_sum_exp(lw.iter().copied());
        let pi: Vec<f64> = lw.iter().map(|l| (l - log_z).exp()).collect();
        let states = lw.len();
        let inv_n = 1.0 / n as f64;
        let rows = par::map_indexed(limits.exec, states, |x| {
            let mut row = vec![0.0; n];
            let mut out = KahanSum::new();
            for (i, r) in row.iter_mut().enumerate() {
                let y = x ^ (1 << i);
                *r = inv_n * sigmoid(lw[y] - lw[x]);
                out.add(*r);
            }
            (row, 1.0 - out.value())
        });
        let mut flip = Vec::with_capacity(states * n);
        let mut stay = Vec::with_capacity(states);
        for (row, s) in rows {
            flip.extend(row);
            stay.push(s);
        }
        Ok(GlauberKernel {
            n,
            pi,
            flip,
            stay,
            exec: limits.exec,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> usize {
        self.pi.len()
    }

    /// Normalized stationary distribution, indexed by state bits.
    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    #[inline]
    pub fn flip_prob(&self, x: usize, i: usize) -> f64 {
        self.flip[x * self.n + i]
    }

    #[inline]
    pub fn hold_prob(&self, x: usize) -> f64 {
        self.stay[x]
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        if x == y {
            return self.stay[x];
        }
        let d = x ^ y;
        if d.is_power_of_two() {
            self.flip_prob(x, d.trailing_zeros() as usize)
        } else {
            0.0
        }
    }

    /// `out = P v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        par::for_each_mut(self.exec, out, |x, o| {
            let mut acc = self.stay[x] * v[x];
            for i in 0..self.n {
                acc += self.flip[x * self.n + i] * v[x ^ (1 << i)];
            }
            *o = acc;
        });
    }

    /// `out = dist P`, the law after one step started from `dist`.
    pub fn step_distribution(&self, dist: &[f64], out: &mut [f64]) {
        par::for_each_mut(self.exec, out, |y, o| {
            let mut acc = dist[y] * self.stay[y];
            for i in 0..self.n {
                let x = y ^ (1 << i);
                acc += dist[x] * self.flip[x * self.n + i];
            }
            *o = acc;
        });
    }

    /// `out = D^{1/2} P D^{-1/2} v`. The off-diagonal entries of the
    /// symmetrized kernel are `sqrt(P(x,y) P(y,x))`.
    pub fn apply_symmetrized(&self, v: &[f64], out: &mut [f64]) {
        par::for_each_mut(self.exec, out, |x, o| {
            let mut acc = self.stay[x] * v[x];
            for i in 0..self.n {
                let y = x ^ (1 << i);
                acc += (self.flip[x * self.n + i] * self.flip[y * self.n + i]).sqrt() * v[y];
            }
            *o = acc;
        });
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        cap("dense transition matrix", self.n, DENSE_KERNEL_MAX_N)?;
        let s = self.states();
        Ok(DMatrix::from_fn(s, s, |x, y| self.entry(x, y)))
    }

    fn symmetrized_dense(&self) -> DMatrix<f64> {
        let s = self.states();
        let mut a = DMatrix::zeros(s, s);
        for x in 0..s {
            a[(x, x)] = self.stay[x];
            for i in 0..self.n {
                let y = x ^ (1 << i);
                a[(x, y)] = (self.flip_prob(x, i) * self.flip_prob(y, i)).sqrt();
            }
        }
        a
    }

    /// `1 - lambda_2` of the symmetrized kernel.
    pub fn spectral_gap(&self) -> f64 {
        let s = self.states();
        if s == 1 {
            return 1.0;
        }
        let lambda2 = if s <= DENSE_STATES {
            sym_eigen(&self.symmetrized_dense()).values[1]
        } else {
            let root: Vec<f64> = self.pi.iter().map(|p| p.sqrt()).collect();
            let norm = root.iter().map(|r| r * r).sum::<f64>().sqrt();
            let top: Vec<f64> = root.iter().map(|r| r / norm).collect();
            let opts = LanczosOptions {
                max_iter: 500,
                tol: 1e-12,
                ..LanczosOptions::default()
            };
            lanczos(s, |v, o| self.apply_symmetrized(v, o), &[top], &opts).max
        };
        (1.0 - lambda2).clamp(0.0, 1.0)
    }

    /// `Q(S, S^c) / pi(S)` for the set marked by `mask`.
    pub fn conductance_mask(&self, mask: &[bool]) -> Result<f64> {
        if mask.len() != self.states() {
            return Err(Error::Dimension {
                expected: self.states(),
                got: mask.len(),
            });
        }
        let inside = mask.iter().filter(|&&b| b).count();
        if inside == 0 || inside == mask.len() {
            return Err(Error::arg("conductance needs a nonempty proper subset"));
        }
        let mut flow = KahanSum::new();
        let mut mass = KahanSum::new();
        for x in 0..self.states() {
            if !mask[x] {
                continue;
            }
            mass.add(self.pi[x]);
            for i in 0..self.n {
                if !mask[x ^ (1 << i)] {
                    flow.add(self.pi[x] * self.flip_prob(x, i));
                }
            }
        }
        if mass.value() <= 0.0 {
            return Err(Error::arg("set has zero stationary mass"));
        }
        Ok(flow.value() / mass.value())
    }

    /// Total variation distance to stationarity after `t` steps from `start`,
    /// for `t = 0, 1, ...` until it falls to `eps` or `max_steps` is reached.
    pub fn tv_curve(&self, start: usize, eps: f64, max_steps: u64) -> Vec<f64> {
        let mut dist = vec![0.0; self.states()];
        dist[start] = 1.0;
        let mut next = vec![0.0; self.states()];
        let mut curve = vec![self.tv(&dist)];
        let mut t = 0;
        while *curve.last().unwrap() > eps && t < max_steps {
            self.step_distribution(&dist, &mut next);
            std::mem::swap(&mut dist, &mut next);
            curve.push(self.tv(&dist));
            t += 1;
        }
        curve
    }

    fn tv(&self, dist: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for (d, p) in dist.iter().zip(&self.pi) {
            acc.add((d - p).abs());
        }
        0.5 * acc.value()
    }
}

pub fn spectral_gap(model: &IsingModel, limits: &Limits) -> Result<f64> {
    Ok(GlauberKernel::new(model, limits)?.spectral_gap())
}

/// Default cap on the number of steps [`tv_mixing_time`] will simulate.
pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

/// Least `t` with `TV(delta_start P^t, pi) <= eps`.
pub fn tv_mixing_time(model: &IsingModel, eps: f64, start: &SpinConfig, limits: &Limits) -> Result<u64> {
    let kernel = GlauberKernel::new(model, limits)?;
    kernel_mixing_time(&kernel, eps, start, DEFAULT_MAX_STEPS)
}

fn kernel_mixing_time(kernel: &GlauberKernel, eps: f64, start: &SpinConfig, max_steps: u64) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::arg(format!("eps must lie in (0,1), got {eps}")));
    }
    crate::error::check_dim(kernel.n, start.len())?;
    let curve = kernel.tv_curve(start.to_bits() as usize, eps, max_steps);
    if *curve.last().unwrap() > eps {
        return Err(Error::Convergence(format!(
            "TV distance still above {eps} after {max_steps} steps"
        )));
    }
    Ok(curve.len() as u64 - 1)
}

/// Conductance `Q(S,S^c)/pi(S)` of the set `{x : in_set(x)}`.
pub fn conductance<F>(model: &IsingModel, in_set: F, limits: &Limits) -> Result<f64>
where
    F: Fn(&SpinConfig) -> bool,
{
    let kernel = GlauberKernel::new(model, limits)?;
    let n = model.n();
    let mask: Vec<bool> = (0..kernel.states())
        .map(|b| in_set(&SpinConfig::from_bits(n, b as u64)))
        .collect();
    kernel.conductance_mask(&mask)
}

/// Kernel-level summary of a chain.
#[derive(Debug, Clone)]
pub struct ChainDiagnostics {
    pub gap: f64,
    pub mlsi_upper: f64,
    /// `(eps, t_mix(eps))` in the order requested.
    pub tmix: Vec<(f64, u64)>,
}

pub fn chain_diagnostics(
    model: &IsingModel,
    eps: &[f64],
    start: &SpinConfig,
    mlsi: &super::MlsiOptions,
    limits: &Limits,
) -> Result<ChainDiagnostics> {
    let kernel = GlauberKernel::new(model, limits)?;
    let gap = kernel.spectral_gap();
    let mlsi_upper = super::mlsi::estimate_on_kernel(&kernel, model, mlsi)?;
    let tmix = eps
        .iter()
        .map(|&e| Ok((e, kernel_mixing_time(&kernel, e, start, DEFAULT_MAX_STEPS)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainDiagnostics { gap, mlsi_upper, tmix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sample;
    use rand::Rng;

    fn free(n: usize) -> IsingModel {
        IsingModel::outlier(0.0, vec![0.0; n], vec![0.0; n]).unwrap()
    }

    #[test]
    fn small_kernels() {
        let lim = Limits::default();
        let p = transition_matrix(&free(1), &lim).unwrap().to_dense().unwrap();
        assert!((p.add_scalar(-0.5)).abs().max() < 1e-15);

        let p = transition_matrix(&free(2), &lim).unwrap().to_dense().unwrap();
        for x in 0..4 {
            for y in 0..4 {
                let d = (x ^ y) as u32;
                let expect = match d.count_ones() {
                    0 => 0.5,
                    1 => 0.25,
                    _ => 0.0,
                };
                assert!((p[(x, y)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn kernel_is_stochastic_and_reversible() {
        let mut r = rng::from_seed(1);
        let m = sample::random_model(3, 2.0, 0.4, 1.0, &mut r);
        let k = transition_matrix(&m, &Limits::default()).unwrap();
        let p = k.to_dense().unwrap();
        let pi = k.stationary();
        for x in 0..8 {
            assert!((p.row(x).sum() - 1.0).abs() < 1e-12);
            for y in 0..8 {
                assert!((pi[x] * p[(x, y)] - pi[y] * p[(y, x)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn glauber_preserves_gibbs_measure() {
        let mut r = rng::from_seed(2);
        for n in 1..=4 {
            let m = sample::random_model(n, 3.0, 0.3, 1.0, &mut r);
            let k = transition_matrix(&m, &Limits::default()).unwrap();
            // Independent oracle: each column built from conditional_plus_prob.
            let s = 1usize << n;
            let mut pushed = vec![0.0; s];
            for x in 0..s {
                let cx = SpinConfig::from_bits(n, x as u64);
                for i in 0..n {
                    let p_plus = m.conditional_plus_prob(&cx, i).unwrap();
                    for (up, p) in [(true, p_plus), (false, 1.0 - p_plus)] {
                        let mut y = cx.clone();
                        y.set(i, up);
                        pushed[y.to_bits() as usize] += k.stationary()[x] * p / n as f64;
                    }
                }
            }
            for x in 0..s {
                assert!((pushed[x] - k.stationary()[x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gap_examples() {
        let lim = Limits::default();
        assert!((spectral_gap(&free(1), &lim).unwrap() - 1.0).abs() < 1e-14);
        // Product chain: eigenvalues 1 - |A|/n over subsets A.
        assert!((spectral_gap(&free(3), &lim).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_gap_agrees_with_dense() {
        let mut r = rng::from_seed(3);
        let m = sample::random_model(10, 4.0, 0.3, 0.5, &mut r);
        let k = transition_matrix(&m, &Limits::default()).unwrap();
        let dense = 1.0 - sym_eigen(&k.symmetrized_dense()).values[1];
        let root: Vec<f64> = k.stationary().iter().map(|p| p.sqrt()).collect();
        let ext = lanczos(
            k.states(),
            |v, o| k.apply_symmetrized(v, o),
            &[root],
            &LanczosOptions {
                max_iter: 500,
                tol: 1e-12,
                ..LanczosOptions::default()
            },
        );
        assert!((1.0 - ext.max - dense).abs() < 1e-9);
        // Product chain at n = 11 takes the Lanczos path.
        assert!((spectral_gap(&free(11), &Limits::default()).unwrap() - 1.0 / 11.0).abs() < 1e-9);
    }

    #[test]
    fn ferromagnetic_gap_collapses() {
        let n = 12;
        let gap = |beta: f64| {
            let j = DMatrix::from_element(n, n, beta / n as f64);
            spectral_gap(&IsingModel::ising(j, vec![0.0; n]).unwrap(), &Limits::default()).unwrap()
        };
        assert!(gap(0.7) < gap(0.3) / 5.0);
    }

    #[test]
    fn mixing_time_examples() {
        let lim = Limits::default();
        let m = free(1);
        assert_eq!(tv_mixing_time(&m, 0.25, &SpinConfig::constant(1, 1).unwrap(), &lim).unwrap(), 1);

        let n = 8;
        let t = tv_mixing_time(&free(n), 0.25, &SpinConfig::constant(n, 1).unwrap(), &lim).unwrap() as f64;
        let centre = n as f64 * ((n as f64).ln() + 4f64.ln()) / 2.0;
        assert!((t - centre).abs() <= 2.0 * n as f64, "t = {t}");
        assert!(tv_mixing_time(&m, 1.5, &SpinConfig::constant(1, 1).unwrap(), &lim).is_err());
    }

    #[test]
    fn mixing_time_is_monotone_in_eps() {
        let mut r = rng::from_seed(4);
        for _ in 0..20 {
            let m = sample::random_model(5, 3.0, 0.3, 1.0, &mut r);
            let x0 = SpinConfig::random(5, &mut r);
            let lim = Limits::default();
            assert!(tv_mixing_time(&m, 0.1, &x0, &lim).unwrap() >= tv_mixing_time(&m, 0.3, &x0, &lim).unwrap());
        }
    }

    #[test]
    fn conductance_examples() {
        let lim = Limits::default();
        let first_up = |x: &SpinConfig| x.get(0) > 0.0;
        assert!((conductance(&free(2), first_up, &lim).unwrap() - 0.25).abs() < 1e-15);
        assert!(conductance(&free(2), |_| true, &lim).is_err());
        assert!(conductance(&free(2), |_| false, &lim).is_err());

        let mut r = rng::from_seed(5);
        let m = sample::random_model(4, 2.0, 0.3, 1.0, &mut r);
        let k = transition_matrix(&m, &lim).unwrap();
        let mask: Vec<bool> = (0..16).map(|x| x % 3 == 0).collect();
        let comp: Vec<bool> = mask.iter().map(|b| !b).collect();
        let mass = |mk: &[bool]| -> f64 { (0..16).filter(|&x| mk[x]).map(|x| k.stationary()[x]).sum() };
        let lhs = k.conductance_mask(&mask).unwrap() * mass(&mask);
        let rhs = k.conductance_mask(&comp).unwrap() * mass(&comp);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    // Exhaustive over all subsets of the 16-state space.
    #[test]
    fn cheeger_upper_bound() {
        let mut r = rng::from_seed(6);
        for _ in 0..5 {
            let n = r.random_range(2..=4);
            let m = sample::random_model(n, 2.0, 0.3, 1.0, &mut r);
            let k = transition_matrix(&m, &Limits::default()).unwrap();
            let s = k.states();
            let mut best = f64::INFINITY;
            for set in 1..(1u32 << s) - 1 {
                let mask: Vec<bool> = (0..s).map(|x| set >> x & 1 == 1).collect();
                let mass: f64 = (0..s).filter(|&x| mask[x]).map(|x| k.stationary()[x]).sum();
                if mass <= 0.5 {
                    best = best.min(k.conductance_mask(&mask).unwrap());
                }
            }
            assert!(k.spectral_gap() <= 2.0 * best + 1e-12);
        }
    }

    #[test]
    fn kernel_capacity() {
        let lim = Limits {
            max_kernel_n: 4,
            ..Limits::default()
        };
        assert!(spectral_gap(&free(5), &lim).unwrap_err().is_capacity());
        let k = transition_matrix(&free(13), &Limits::default()).unwrap();
        assert!(k.to_dense().unwrap_err().is_capacity());
    }
}
