//! Brute-force engine over all `2^n` configurations.
//!
//! States are walked in Gray-code order so each log-weight is an O(n) update
//! of its predecessor. The index range is cut into a fixed number of
//! contiguous blocks; every block owns its accumulator and blocks are merged
//! in order, which keeps results independent of the thread count.

mod kernel;
mod mlsi;

pub use kernel::{
    chain_diagnostics, conductance, spectral_gap, transition_matrix, tv_mixing_time, ChainDiagnostics,
    GlauberKernel,
};
pub use mlsi::{mlsi_upper_estimate, MlsiOptions};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::IsingModel;
use crate::numeric::{KahanSum, LogSumExp};
use crate::par::{self, Exec};

/// Size caps for the enumeration and kernel engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    /// Largest n for partition functions and moments.
    pub max_enum_n: usize,
    /// Largest n for kernel spectra, mixing times and conductance.
    pub max_kernel_n: usize,
    pub exec: Exec,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_enum_n: 24,
            max_kernel_n: 14,
            exec: Exec::default(),
        }
    }
}

impl Limits {
    pub fn with_exec(exec: Exec) -> Self {
        Limits {
            exec,
            ..Limits::default()
        }
    }

    pub(crate) fn check_enum(&self, what: &'static str, n: usize) -> Result<()> {
        cap(what, n, self.max_enum_n.min(40))
    }

    pub(crate) fn check_kernel(&self, what: &'static str, n: usize) -> Result<()> {
        cap(what, n, self.max_kernel_n.min(26))
    }
}

pub(crate) fn cap(what: &'static str, n: usize, cap: usize) -> Result<()> {
    if n > cap {
        Err(Error::Capacity { what, n, cap })
    } else {
        Ok(())
    }
}

const BLOCKS: usize = 64;

/// Incremental evaluator of the log-weight along single-site flips.
struct Walker<'a> {
    model: &'a IsingModel,
    x: Vec<f64>,
    s: f64,
    g: Vec<f64>,
    quad: f64,
    hx: f64,
    inv_n: f64,
}

impl<'a> Walker<'a> {
    fn at(model: &'a IsingModel, bits: u64) -> Self {
        let n = model.n();
        let x: Vec<f64> = (0..n).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let u = model.u();
        let h = model.h();
        let s = (0..n).map(|i| u[i] * x[i]).sum();
        let hx = (0..n).map(|i| h[i] * x[i]).sum();
        let (g, quad) = if model.is_outlier_only() {
            (Vec::new(), 0.0)
        } else {
            let j = model.j();
            let g: Vec<f64> = (0..n).map(|r| (0..n).map(|c| j[(r, c)] * x[c]).sum()).collect();
            let quad = (0..n).map(|i| x[i] * g[i]).sum();
            (g, quad)
        };
        Walker {
            model,
            x,
            s,
            g,
            quad,
            hx,
            inv_n: 1.0 / n as f64,
        }
    }

    #[inline]
    fn flip(&mut self, i: usize) {
        let delta = -2.0 * self.x[i];
        self.s += delta * self.model.u()[i];
        self.hx += delta * self.model.h()[i];
        if !self.g.is_empty() {
            let j = self.model.j();
            self.quad += 2.0 * delta * self.g[i] + delta * delta * j[(i, i)];
            for (k, gk) in self.g.iter_mut().enumerate() {
                *gk += delta * j[(k, i)];
            }
        }
        self.x[i] = -self.x[i];
    }

    #[inline]
    fn log_weight(&self) -> f64 {
        -(self.model.beta() * self.inv_n) * self.s * self.s + self.quad + self.hx
    }
}

#[inline]
fn gray(k: u64) -> u64 {
    k ^ (k >> 1)
}

/// Visits every state once. `visit(acc, bits, x, log_weight)` sees the spin
/// vector as `f64`s; the per-block accumulators are returned in block order.
pub(crate) fn enumerate<A, M, V>(model: &IsingModel, exec: Exec, make: M, visit: V) -> Vec<A>
where
    A: Send,
    M: Fn() -> A + Sync + Send,
    V: Fn(&mut A, u64, &[f64], f64) + Sync + Send,
{
    let total = 1u64 << model.n();
    let ranges = par::blocks(total as usize, BLOCKS);
    par::map_indexed(exec, ranges.len(), |b| {
        let range = &ranges[b];
        let mut acc = make();
        let start = range.start as u64;
        let mut code = gray(start);
        let mut w = Walker::at(model, code);
        visit(&mut acc, code, &w.x, w.log_weight());
        for k in (start + 1)..(range.end as u64) {
            let i = k.trailing_zeros() as usize;
            w.flip(i);
            code ^= 1 << i;
            visit(&mut acc, code, &w.x, w.log_weight());
        }
        acc
    })
}

/// Log-weights of all states, indexed by the bit encoding of
/// [`SpinConfig::from_bits`](crate::SpinConfig::from_bits).
pub fn log_weights(model: &IsingModel, limits: &Limits) -> Result<Vec<f64>> {
    limits.check_kernel("log_weights", model.n())?;
    let parts = enumerate(model, limits.exec, Vec::new, |acc: &mut Vec<(u64, f64)>, bits, _, lw| {
        acc.push((bits, lw))
    });
    let mut out = vec![0.0; 1usize << model.n()];
    for part in parts {
        for (bits, lw) in part {
            out[bits as usize] = lw;
        }
    }
    Ok(out)
}

/// `log Z`, the log-sum-exp of the log-weight over all states.
pub fn partition_function(model: &IsingModel, limits: &Limits) -> Result<f64> {
    limits.check_enum("partition_function", model.n())?;
    Ok(log_partition(model, limits.exec))
}

fn log_partition(model: &IsingModel, exec: Exec) -> f64 {
    let parts = enumerate(model, exec, LogSumExp::new, |acc, _, _, lw| acc.add(lw));
    let mut total = LogSumExp::new();
    for p in &parts {
        total.merge(p);
    }
    total.value()
}

/// Exact first and second moments of the Gibbs measure.
#[derive(Debug, Clone)]
pub struct GibbsSummary {
    pub log_z: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `D^{-1/2} cov D^{-1/2}`. Rows flagged in `degenerate` are set to the
    /// corresponding unit vector.
    pub cor: DMatrix<f64>,
    /// Sites whose variance vanishes to machine precision.
    pub degenerate: Vec<bool>,
}

pub fn gibbs_moments(model: &IsingModel, limits: &Limits) -> Result<GibbsSummary> {
    let n = model.n();
    limits.check_enum("gibbs_moments", n)?;
    let exec = limits.exec;
    let log_z = log_partition(model, exec);

    let parts = enumerate(
        model,
        exec,
        || vec![KahanSum::new(); n + 1],
        |acc, _, x, lw| {
            let p = (lw - log_z).exp();
            for (a, &xi) in acc.iter_mut().zip(x) {
                a.add(p * xi);
            }
            acc[n].add(p);
        },
    );
    let mut mean_acc = vec![KahanSum::new(); n + 1];
    for part in &parts {
        for (m, a) in mean_acc.iter_mut().zip(part) {
            m.merge(a);
        }
    }
    // Dividing by the accumulated mass removes the rounding of log_z, which
    // grows with the size of the log-weights.
    let mass = mean_acc[n].value();
    let mean: Vec<f64> = mean_acc[..n].iter().map(|k| (k.value() / mass).clamp(-1.0, 1.0)).collect();

    let tri = n * (n + 1) / 2;
    let parts = enumerate(
        model,
        exec,
        || (vec![KahanSum::new(); tri], vec![0.0; n]),
        |(acc, d), _, x, lw| {
            let p = (lw - log_z).exp();
            for i in 0..n {
                d[i] = x[i] - mean[i];
            }
            let mut k = 0;
            for i in 0..n {
                let pdi = p * d[i];
                for &dj in &d[i..] {
                    acc[k].add(pdi * dj);
                    k += 1;
                }
            }
        },
    );
    let mut cov_acc = vec![KahanSum::new(); tri];
    for (part, _) in &parts {
        for (c, a) in cov_acc.iter_mut().zip(part) {
            c.merge(a);
        }
    }
    let mut cov = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let v = cov_acc[k].value() / mass;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
            k += 1;
        }
    }

    let degenerate: Vec<bool> = (0..n)
        .map(|i| 1.0 - mean[i].abs() <= 4.0 * f64::EPSILON || !(cov[(i, i)] > 0.0))
        .collect();
    let cor = correlation_from(&cov, &degenerate);
    Ok(GibbsSummary {
        log_z,
        mean: DVector::from_vec(mean),
        cov,
        cor,
        degenerate,
    })
}

pub(crate) fn correlation_from(cov: &DMatrix<f64>, degenerate: &[bool]) -> DMatrix<f64> {
    let n = cov.nrows();
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if degenerate[i] || degenerate[j] {
            0.0
        } else {
            cov[(i, j)] / (sd[i] * sd[j])
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{opnorm, sym_eigenvalues};
    use crate::model::SpinConfig;
    use crate::rng;
    use crate::sample;
    use rand::Rng;

    fn naive_log_z(model: &IsingModel) -> f64 {
        let n = model.n();
        crate::numeric::log_sum_exp(
            (0..1u64 << n).map(|b| model.energy_exponent(&SpinConfig::from_bits(n, b)).unwrap()),
        )
    }

    #[test]
    fn trivial_partition_functions() {
        let lim = Limits::default();
        let m = IsingModel::outlier(0.0, vec![0.0; 7], vec![0.0; 7]).unwrap();
        assert!((partition_function(&m, &lim).unwrap() - 7.0 * 2f64.ln()).abs() < 1e-13);
        for a in [0.0, 0.7, -3.0, 40.0] {
            let m = IsingModel::outlier(0.0, vec![0.0], vec![a]).unwrap();
            let expect = crate::numeric::log_two_cosh(a);
            assert!((partition_function(&m, &lim).unwrap() - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let lim = Limits {
            max_enum_n: 5,
            ..Limits::default()
        };
        let m = IsingModel::outlier(0.0, vec![0.0; 6], vec![0.0; 6]).unwrap();
        assert!(partition_function(&m, &lim).unwrap_err().is_capacity());
        assert!(gibbs_moments(&m, &lim).unwrap_err().is_capacity());
    }

    // Oracle: every term is an exact rational multiple of a power of two once the
    // parameters are dyadic, so the sum can be carried out in i128 without
    // rounding and compared with the floating-point engine.
    #[test]
    fn partition_function_matches_exact_integer_sum() {
        let mut r = rng::from_seed(8);
        let n = 10;
        let scale = 1i64 << 12;
        let u: Vec<i64> = (0..n).map(|_| r.random_range(-scale..=scale)).collect();
        let h: Vec<i64> = (0..n).map(|_| r.random_range(-scale..=scale) / 4).collect();
        let mut j = vec![vec![0i64; n]; n];
        for a in 0..n {
            for b in a + 1..n {
                let v = r.random_range(-scale..=scale) / 16;
                j[a][b] = v;
                j[b][a] = v;
            }
        }
        let to_f = |v: i64| v as f64 / scale as f64;
        // beta/n = 1/8 keeps all exponents dyadic.
        let beta = n as f64 / 8.0;
        let model = IsingModel::new(
            beta,
            u.iter().map(|&v| to_f(v)).collect(),
            DMatrix::from_fn(n, n, |a, b| to_f(j[a][b])),
            h.iter().map(|&v| to_f(v)).collect(),
        )
        .unwrap();
        // Exponents in units of 2^-27: exact integers.
        let exps: Vec<i128> = (0..1u64 << n)
            .map(|bits| {
                let x: Vec<i128> = (0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect();
                let s: i128 = (0..n).map(|i| u[i] as i128 * x[i]).sum();
                let quad: i128 = (0..n)
                    .flat_map(|a| (0..n).map(move |b| (a, b)))
                    .map(|(a, b)| j[a][b] as i128 * x[a] * x[b])
                    .sum();
                let hx: i128 = (0..n).map(|i| h[i] as i128 * x[i]).sum();
                // -(1/8) s^2 / 2^24 + (quad + hx)/2^12, over common denominator 2^27
                -s * s + (quad + hx) * (1 << 15)
            })
            .collect();
        let max = *exps.iter().max().unwrap();
        // log Z = max/2^27 + log sum exp((e - max)/2^27); the residual sum is
        // evaluated term by term in f64 after the exact integer shift.
        let unit = (1u64 << 27) as f64;
        let mut acc = KahanSum::new();
        for e in &exps {
            acc.add(((e - max) as f64 / unit).exp());
        }
        let oracle = max as f64 / unit + acc.value().ln();
        let got = partition_function(&model, &Limits::default()).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-10, "{got} vs {oracle}");
    }

    #[test]
    fn gray_code_matches_naive_evaluation() {
        let mut r = rng::from_seed(2);
        let m = sample::random_model(12, 5.0, 0.4, 1.5, &mut r);
        let lw = log_weights(&m, &Limits::default()).unwrap();
        for _ in 0..1000 {
            let bits = r.random_range(0..1u64 << 12);
            let e = m.energy_exponent(&SpinConfig::from_bits(12, bits)).unwrap();
            assert!((lw[bits as usize] - e).abs() < 1e-11);
        }
    }

    #[test]
    fn policies_are_bit_identical() {
        let mut r = rng::from_seed(6);
        let m = sample::random_model(11, 2.0, 0.3, 1.0, &mut r);
        let a = gibbs_moments(&m, &Limits::with_exec(Exec::Sequential)).unwrap();
        let b = gibbs_moments(&m, &Limits::with_exec(Exec::Parallel)).unwrap();
        assert_eq!(a.log_z.to_bits(), b.log_z.to_bits());
        assert_eq!(a.cov, b.cov);
    }

    #[test]
    fn product_measure_moments() {
        let h = vec![0.3, -1.2, 2.0, 0.0];
        let m = IsingModel::outlier(0.0, vec![0.5; 4], h.clone()).unwrap();
        let s = gibbs_moments(&m, &Limits::default()).unwrap();
        for i in 0..4 {
            assert!((s.mean[i] - h[i].tanh()).abs() < 1e-14);
            for j in 0..4 {
                let expect = if i == j { crate::numeric::sech(h[i]).powi(2) } else { 0.0 };
                assert!((s.cov[(i, j)] - expect).abs() < 1e-14);
                assert!((s.cor[(i, j)] - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
        assert!((s.log_z - naive_log_z(&m)).abs() < 1e-12);
    }

    #[test]
    fn two_spin_coupling() {
        for t in [0.1, 0.5, -0.8] {
            let j = DMatrix::from_row_slice(2, 2, &[0.0, t, t, 0.0]);
            let m = IsingModel::ising(j, vec![0.0; 2]).unwrap();
            let s = gibbs_moments(&m, &Limits::default()).unwrap();
            // States ++ and -- have weight e^{2t}, mixed states e^{-2t}.
            assert!((s.cov[(0, 1)] - (2.0 * t).tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_site_is_flagged() {
        let m = IsingModel::outlier(0.0, vec![0.0; 3], vec![0.2, 800.0, -0.1]).unwrap();
        let s = gibbs_moments(&m, &Limits::default()).unwrap();
        assert_eq!(s.degenerate, vec![false, true, false]);
        assert_eq!(s.cor[(1, 1)], 1.0);
        assert_eq!(s.cor[(0, 1)], 0.0);
    }

    #[test]
    fn identity_shift_leaves_moments_unchanged() {
        let mut r = rng::from_seed(9);
        let m = sample::random_model(8, 3.0, 0.3, 1.0, &mut r);
        let a = gibbs_moments(&m, &Limits::default()).unwrap();
        let b = gibbs_moments(&m.with_identity_shift(0.7), &Limits::default()).unwrap();
        assert!((b.log_z - a.log_z - 0.7 * 8.0).abs() < 1e-11);
        assert!((a.cov - b.cov).abs().max() < 1e-12);
        assert!((a.mean - b.mean).abs().max() < 1e-12);
    }

    #[test]
    fn summary_invariants_on_random_models() {
        let mut r = rng::from_seed(10);
        for k in 0..15 {
            let n = 3 + k % 8;
            let m = sample::random_model(n, 4.0, 0.35, 2.0, &mut r);
            let s = gibbs_moments(&m, &Limits::default()).unwrap();
            assert!(*sym_eigenvalues(&s.cov).last().unwrap() >= -1e-10);
            let max_var = (0..n).map(|i| s.cov[(i, i)]).fold(0.0, f64::max);
            let cov_op = opnorm(&s.cov);
            let cor_op = opnorm(&s.cor);
            assert!(cov_op <= cor_op * max_var + 1e-12);
            assert!(cov_op <= n as f64 && cor_op <= n as f64 + 1e-12);
            for i in 0..n {
                assert!((s.cor[(i, i)] - 1.0).abs() < 1e-12);
                assert!(s.mean[i].abs() <= 1.0);
                for j in 0..n {
                    assert!(s.cov[(i, j)].abs() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn hubbard_stratonovich_bound_holds() {
        let mut r = rng::from_seed(12);
        for _ in 0..5 {
            let op = r.random_range(0.1..0.4);
            let j = sample::random_psd(8, op, &mut r);
            for _ in 0..10 {
                let h = sample::gaussian_h(8, 1.0, &mut r);
                let m = IsingModel::ising(j.clone(), h).unwrap();
                let s = gibbs_moments(&m, &Limits::default()).unwrap();
                assert!(opnorm(&s.cov) <= 1.0 / (1.0 - 2.0 * op) + 1e-9);
            }
        }
    }
}
