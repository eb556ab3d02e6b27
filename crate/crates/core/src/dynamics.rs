//! Large-n Glauber simulation and the slow-mixing diagnostics for graph
//! Hamiltonians `H(x) = -(1/sqrt d) <x, A x>`.

use rand::Rng;
use serde::Serialize;

use crate::ensembles::Graph;
use crate::error::{check_dim, Error, Result};
use crate::model::{IsingModel, SpinConfig};
use crate::numeric::{ln_binomial, sigmoid, LogSumExp};
use crate::par::{map_indexed, Exec};
use crate::rng;

/// Observables recorded every `thin` steps, starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub steps: u64,
    pub thin: u64,
    pub t: Vec<u64>,
    /// `<u, x> / n`.
    pub magnetization: Vec<f64>,
    /// Unnormalized log-weight of the current state.
    pub energy: Vec<f64>,
    /// `<x, reference> / n`; the reference is the starting state.
    pub overlap: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// CSV with header `t,magnetization,energy,overlap`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,magnetization,energy,overlap\n");
        for k in 0..self.len() {
            out.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                self.t[k], self.magnetization[k], self.energy[k], self.overlap[k]
            ));
        }
        out
    }
}

/// Running state of a chain with `<u,x>`, `Jx`, `<x,Jx>` and `<h,x>` kept
/// up to date under single flips.
struct ChainState<'a> {
    model: &'a IsingModel,
    x: Vec<f64>,
    s: f64,
    g: Vec<f64>,
    quad: f64,
    hx: f64,
    overlap: f64,
}

impl<'a> ChainState<'a> {
    fn new(model: &'a IsingModel, x0: &SpinConfig) -> Self {
        let n = model.n();
        let x: Vec<f64> = (0..n).map(|i| x0.get(i)).collect();
        let dot = |v: &[f64]| v.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        let s = dot(model.u());
        let hx = dot(model.h());
        let g: Vec<f64> = if model.is_outlier_only() {
            Vec::new()
        } else {
            (0..n).map(|i| (0..n).map(|k| model.j()[(i, k)] * x[k]).sum()).collect()
        };
        let quad = if g.is_empty() { 0.0 } else { dot(&g) };
        ChainState {
            model,
            x,
            s,
            g,
            quad,
            hx,
            overlap: n as f64,
        }
    }

    fn log_odds(&self, i: usize) -> f64 {
        let m = self.model;
        let n = m.n() as f64;
        let u = m.u()[i];
        let field = if self.g.is_empty() {
            0.0
        } else {
            self.g[i] - m.j()[(i, i)] * self.x[i]
        };
        -(4.0 * m.beta() / n) * u * (self.s - u * self.x[i]) + 4.0 * field + 2.0 * m.h()[i]
    }

    fn flip(&mut self, i: usize, reference: &[f64]) {
        let m = self.model;
        let d = -2.0 * self.x[i];
        self.s += m.u()[i] * d;
        self.hx += m.h()[i] * d;
        self.overlap += reference[i] * d;
        if !self.g.is_empty() {
            let j = m.j();
            self.quad += 2.0 * d * self.g[i] + j[(i, i)] * d * d;
            for (k, gk) in self.g.iter_mut().enumerate() {
                *gk += d * j[(k, i)];
            }
        }
        self.x[i] = -self.x[i];
    }

    fn energy(&self) -> f64 {
        -(self.model.beta() / self.model.n() as f64) * self.s * self.s + self.quad + self.hx
    }
}

/// Runs `steps` random-scan Glauber updates from `x0`, recording observables
/// every `thin` steps. The update rule matches [`IsingModel::glauber_step`]
/// draw for draw.
pub fn run_glauber(model: &IsingModel, x0: &SpinConfig, steps: u64, thin: u64, seed: u64) -> Result<Trace> {
    check_dim(model.n(), x0.len())?;
    if thin == 0 {
        return Err(Error::arg("thin must be >= 1"));
    }
    let n = model.n();
    let nf = n as f64;
    let mut rng = rng::from_seed(seed);
    let reference: Vec<f64> = (0..n).map(|i| x0.get(i)).collect();
    let mut st = ChainState::new(model, x0);
    let cap = (steps / thin + 1) as usize;
    let mut trace = Trace {
        steps,
        thin,
        t: Vec::with_capacity(cap),
        magnetization: Vec::with_capacity(cap),
        energy: Vec::with_capacity(cap),
        overlap: Vec::with_capacity(cap),
    };
    let record = |trace: &mut Trace, st: &ChainState, t: u64| {
        trace.t.push(t);
        trace.magnetization.push(st.s / nf);
        trace.energy.push(st.energy());
        trace.overlap.push(st.overlap / nf);
    };
    record(&mut trace, &st, 0);
    for t in 1..=steps {
        let i = rng.random_range(0..n);
        let up = rng.random::<f64>() < sigmoid(st.log_odds(i));
        if up != (st.x[i] > 0.0) {
            st.flip(i, &reference);
        }
        if t % thin == 0 {
            record(&mut trace, &st, t);
        }
    }
    Ok(trace)
}

/// Independent chains, one per seed, returned in seed order.
pub fn run_glauber_many(
    model: &IsingModel,
    x0: &SpinConfig,
    steps: u64,
    thin: u64,
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<Trace>> {
    map_indexed(exec, seeds.len(), |k| run_glauber(model, x0, steps, thin, seeds[k]))
        .into_iter()
        .collect()
}

fn check_graph(g: &Graph, x: &SpinConfig, d: f64) -> Result<()> {
    check_dim(g.n(), x.len())?;
    if !(d > 0.0) {
        return Err(Error::arg(format!("d must be positive, got {d}")));
    }
    Ok(())
}

/// `sum_j A_ij x_j`, exact in integers.
fn neighbor_sum(g: &Graph, x: &SpinConfig, i: usize) -> i64 {
    g.neighbors(i).iter().map(|&j| x.spins()[j] as i64).sum()
}

/// `H(x) = -(1/sqrt d) <x, A x>`.
pub fn hamiltonian(g: &Graph, x: &SpinConfig, d: f64) -> Result<f64> {
    check_graph(g, x, d)?;
    let q: i64 = (0..g.n()).map(|i| x.spins()[i] as i64 * neighbor_sum(g, x, i)).sum();
    Ok(-(q as f64) / d.sqrt())
}

/// `d_i H(x) = -(2/sqrt d) sum_j A_ij x_j`.
pub fn local_field(g: &Graph, x: &SpinConfig, i: usize, d: f64) -> Result<f64> {
    check_graph(g, x, d)?;
    if i >= g.n() {
        return Err(Error::arg(format!("site {i} out of range")));
    }
    Ok(-2.0 * neighbor_sum(g, x, i) as f64 / d.sqrt())
}

/// Sites where a single flip lowers `H` by less than `2 kappa`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GappedReport {
    pub kappa: f64,
    pub violating_sites: Vec<usize>,
    pub delta_achieved: f64,
}

impl GappedReport {
    pub fn is_gapped(&self, delta: f64) -> bool {
        self.delta_achieved <= delta
    }
}

pub fn gapped_check(g: &Graph, x: &SpinConfig, kappa: f64, d: f64) -> Result<GappedReport> {
    check_graph(g, x, d)?;
    if !(kappa > 0.0) {
        return Err(Error::arg(format!("kappa must be positive, got {kappa}")));
    }
    let scale = 2.0 / d.sqrt();
    let violating_sites: Vec<usize> = (0..g.n())
        .filter(|&i| -(x.spins()[i] as i64 * neighbor_sum(g, x, i)) as f64 * scale < kappa)
        .collect();
    Ok(GappedReport {
        kappa,
        delta_achieved: violating_sites.len() as f64 / g.n().max(1) as f64,
        violating_sites,
    })
}

/// Result of a local search on `H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ascent {
    pub state: SpinConfig,
    pub sweeps: usize,
    /// True when the last sweep made no move, so `state` is a local maximum.
    pub converged: bool,
}

/// Single-flip ascent on `H`: sweeps the sites in order and flips every site
/// with `x_i d_iH < 0`. Ties are left alone, so `H` increases strictly with
/// every flip.
pub fn greedy_ascent(g: &Graph, x0: &SpinConfig, d: f64, max_sweeps: usize) -> Result<Ascent> {
    check_graph(g, x0, d)?;
    if max_sweeps == 0 {
        return Err(Error::arg("max_sweeps must be >= 1"));
    }
    let mut x = x0.clone();
    let mut sums: Vec<i64> = (0..g.n()).map(|i| neighbor_sum(g, &x, i)).collect();
    for sweep in 1..=max_sweeps {
        let mut moved = false;
        for i in 0..g.n() {
            let xi = x.spins()[i] as i64;
            // x_i d_iH < 0  <=>  x_i sum_j A_ij x_j > 0.
            if xi * sums[i] > 0 {
                x.flip(i);
                for &k in g.neighbors(i) {
                    sums[k] -= 2 * xi;
                }
                moved = true;
            }
        }
        if !moved {
            return Ok(Ascent {
                state: x,
                sweeps: sweep,
                converged: true,
            });
        }
    }
    Ok(Ascent {
        state: x,
        sweeps: max_sweeps,
        converged: false,
    })
}

/// Ascent over pair swaps of one `+1` and one `-1` spin, which keeps
/// `<1, x> = 0`. In each sweep every `+1` site is paired with the `-1` site
/// giving the largest strict increase of `H`, if any.
pub fn balanced_greedy_ascent(g: &Graph, x0: &SpinConfig, d: f64, max_sweeps: usize) -> Result<Ascent> {
    check_graph(g, x0, d)?;
    if max_sweeps == 0 {
        return Err(Error::arg("max_sweeps must be >= 1"));
    }
    if x0.sum() != 0 {
        return Err(Error::arg(format!("start must be balanced, <1,x> = {}", x0.sum())));
    }
    let n = g.n();
    let mut x = x0.clone();
    let mut sums: Vec<i64> = (0..n).map(|i| neighbor_sum(g, &x, i)).collect();
    // sqrt(d)/4 times the change of H under swapping i and j.
    let gain = |x: &SpinConfig, sums: &[i64], i: usize, j: usize| -> i64 {
        let (xi, xj) = (x.spins()[i] as i64, x.spins()[j] as i64);
        let a = if g.has_edge(i, j) { 1 } else { 0 };
        xi * sums[i] + xj * sums[j] - 2 * a * xi * xj
    };
    for sweep in 1..=max_sweeps {
        let mut moved = false;
        for i in 0..n {
            if x.spins()[i] != 1 {
                continue;
            }
            let best = (0..n)
                .filter(|&j| x.spins()[j] == -1)
                .map(|j| (gain(&x, &sums, i, j), j))
                .fold(None, |acc: Option<(i64, usize)>, c| match acc {
                    Some(b) if b.0 >= c.0 => Some(b),
                    _ => Some(c),
                });
            if let Some((gv, j)) = best {
                if gv > 0 {
                    for site in [i, j] {
                        let xs = x.spins()[site] as i64;
                        x.flip(site);
                        for &k in g.neighbors(site) {
                            sums[k] -= 2 * xs;
                        }
                    }
                    moved = true;
                }
            }
        }
        if !moved {
            return Ok(Ascent {
                state: x,
                sweeps: sweep,
                converged: true,
            });
        }
    }
    Ok(Ascent {
        state: x,
        sweeps: max_sweeps,
        converged: false,
    })
}

/// Conductance of `S = {x_1 = +1}` under Glauber dynamics for the
/// Curie–Weiss law `pi ∝ exp(-beta0 (sum_i x_i)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CwConductance {
    pub n: usize,
    pub beta0: f64,
    pub ratio: f64,
    /// `4 / (n e^{4 beta0})`.
    pub bound: f64,
    pub passes: bool,
}

/// Exact `Q(S, S^c) / pi(S)` by summing over the number `k` of `+1` spins
/// among sites `2..n`; the weight depends on `x` only through `sum x_i`.
pub fn cw_conductance_exact(n: usize, beta0: f64) -> Result<CwConductance> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::arg(format!("n must be even and positive, got {n}")));
    }
    if !(beta0 >= 0.0 && beta0.is_finite()) {
        return Err(Error::arg("beta0 must be finite and >= 0"));
    }
    let nf = n as f64;
    let mut mass = LogSumExp::new();
    let mut flow = LogSumExp::new();
    for k in 0..n {
        let lb = ln_binomial((n - 1) as u64, k as u64);
        // Sum of spins with x_1 = +1, and after flipping x_1.
        let sx = (2 * k + 2) as f64 - nf;
        let sy = sx - 2.0;
        let (lx, ly) = (-beta0 * sx * sx, -beta0 * sy * sy);
        mass.add(lb + lx);
        // Heat-bath move probability (1/n) w_y / (w_x + w_y).
        let lmove = -nf.ln() + ln_sigmoid(ly - lx);
        flow.add(lb + lx + lmove);
    }
    let ratio = (flow.value() - mass.value()).exp();
    let bound = 4.0 / (nf * (4.0 * beta0).exp());
    Ok(CwConductance {
        n,
        beta0,
        ratio,
        bound,
        passes: ratio <= bound,
    })
}

fn ln_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Outcome of the energy-drop inequality `H(y) <= H(x) - rho kappa n / 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyDrop {
    /// `H(x) - H(y) - rho kappa n / 4`.
    pub margin: f64,
    pub holds: bool,
}

/// Requires `||x - y||_1 = rho n`.
pub fn energy_drop_check(g: &Graph, x: &SpinConfig, y: &SpinConfig, kappa: f64, rho: f64, d: f64) -> Result<EnergyDrop> {
    check_graph(g, x, d)?;
    check_dim(x.len(), y.len())?;
    let nf = g.n() as f64;
    let l1 = 2.0 * x.hamming(y) as f64;
    if (l1 - rho * nf).abs() > 1e-9 * nf.max(1.0) {
        return Err(Error::arg(format!("||x - y||_1 = {l1} but rho n = {}", rho * nf)));
    }
    let margin = hamiltonian(g, x, d)? - hamiltonian(g, y, d)? - rho * kappa * nf / 4.0;
    Ok(EnergyDrop { margin, holds: margin >= 0.0 })
}

/// Greedy search from `seeds.len()` uniformly random starts; returns each
/// ascent with its gapped report at `kappa`.
pub fn gapped_search(
    g: &Graph,
    d: f64,
    kappa: f64,
    max_sweeps: usize,
    seeds: &[u64],
    balanced: bool,
    exec: Exec,
) -> Result<Vec<(Ascent, GappedReport)>> {
    if balanced && g.n() % 2 == 1 {
        return Err(Error::arg("balanced search needs even n"));
    }
    map_indexed(exec, seeds.len(), |k| {
        let mut r = rng::from_seed(seeds[k]);
        let start = if balanced {
            let mut spins: Vec<i8> = (0..g.n()).map(|i| if i < g.n() / 2 { 1 } else { -1 }).collect();
            rand::seq::SliceRandom::shuffle(spins.as_mut_slice(), &mut r);
            SpinConfig::new(spins)?
        } else {
            SpinConfig::random(g.n(), &mut r)
        };
        let asc = if balanced {
            balanced_greedy_ascent(g, &start, d, max_sweeps)?
        } else {
            greedy_ascent(g, &start, d, max_sweeps)?
        };
        let rep = gapped_check(g, &asc.state, kappa, d)?;
        Ok((asc, rep))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{erdos_renyi, random_regular};
    use crate::exact::{conductance, gibbs_moments, Limits};
    use proptest::prelude::*;

    fn edge() -> Graph {
        Graph::from_edges(2, &[(0, 1)]).unwrap()
    }

    fn cfg(v: &[i8]) -> SpinConfig {
        SpinConfig::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_steps_gives_initial_point() {
        let m = IsingModel::outlier(1.0, vec![1.0; 5], vec![0.0; 5]).unwrap();
        let x = SpinConfig::constant(5, 1).unwrap();
        let tr = run_glauber(&m, &x, 0, 3, 1).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.magnetization[0], 1.0);
        assert_eq!(tr.overlap[0], 1.0);
        assert!((tr.energy[0] - m.energy_exponent(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn trace_length_and_determinism() {
        let m = IsingModel::outlier(2.0, vec![0.5; 9], vec![0.1; 9]).unwrap();
        let x = SpinConfig::constant(9, -1).unwrap();
        let a = run_glauber(&m, &x, 1000, 7, 42).unwrap();
        assert_eq!(a.len(), 1000 / 7 + 1);
        assert_eq!(a, run_glauber(&m, &x, 1000, 7, 42).unwrap());
        assert_ne!(a, run_glauber(&m, &x, 1000, 7, 43).unwrap());
    }

    #[test]
    fn incremental_chain_matches_reference_steps() {
        let mut r = crate::rng::from_seed(5);
        let model = crate::sample::random_model(8, 3.0, 0.3, 0.5, &mut r);
        let x0 = SpinConfig::random(8, &mut r);
        let tr = run_glauber(&model, &x0, 500, 1, 11).unwrap();
        let mut rr = crate::rng::from_seed(11);
        let mut x = x0.clone();
        for t in 1..=500 {
            model.glauber_step_in_place(&mut x, &mut rr).unwrap();
            let e = model.energy_exponent(&x).unwrap();
            assert!((tr.energy[t] - e).abs() < 1e-9, "step {t}");
            let m = crate::model::magnetization(model.u(), &x).unwrap();
            assert!((tr.magnetization[t] - m).abs() < 1e-12);
            let ov = x.spins().iter().zip(x0.spins()).map(|(a, b)| (*a as f64) * (*b as f64)).sum::<f64>() / 8.0;
            assert!((tr.overlap[t] - ov).abs() < 1e-12);
        }
    }

    #[test]
    fn free_chain_magnetization_is_centered() {
        let n = 100;
        let m = IsingModel::outlier(0.0, vec![1.0; n], vec![0.0; n]).unwrap();
        let x = SpinConfig::constant(n, 1).unwrap();
        let steps = 100_000u64;
        let tr = run_glauber(&m, &x, steps, 1, 3).unwrap();
        let half = &tr.magnetization[(steps / 2) as usize..];
        let mean = half.iter().sum::<f64>() / half.len() as f64;
        // Stationary sd of M is 1/sqrt(n); successive values are correlated
        // over about n steps, so the effective sample count is half.len()/n.
        let sigma = (1.0 / n as f64).sqrt() / (half.len() as f64 / (2.0 * n as f64)).sqrt();
        assert!(mean.abs() <= 4.0 * sigma, "mean {mean}, sigma {sigma}");
    }

    #[test]
    fn many_chains_are_policy_independent() {
        let m = IsingModel::outlier(1.0, vec![1.0; 6], vec![0.0; 6]).unwrap();
        let x = SpinConfig::constant(6, 1).unwrap();
        let seeds = [1, 2, 3, 4];
        let a = run_glauber_many(&m, &x, 200, 10, &seeds, Exec::Sequential).unwrap();
        let b = run_glauber_many(&m, &x, 200, 10, &seeds, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[2], run_glauber(&m, &x, 200, 10, 3).unwrap());
    }

    #[test]
    fn graph_energy_examples() {
        let g = edge();
        assert_eq!(local_field(&g, &cfg(&[1, 1]), 0, 1.0).unwrap(), -2.0);
        assert_eq!(hamiltonian(&g, &cfg(&[1, 1]), 1.0).unwrap(), -2.0);
        let iso = Graph::empty(3);
        assert_eq!(local_field(&iso, &cfg(&[1, -1, 1]), 1, 2.0).unwrap(), 0.0);
        assert_eq!(hamiltonian(&iso, &cfg(&[1, -1, 1]), 2.0).unwrap(), 0.0);
        assert!(hamiltonian(&g, &cfg(&[1, 1]), 0.0).is_err());
    }

    #[test]
    fn flip_identity() {
        let g = erdos_renyi(10, 0.4, 2).unwrap();
        let mut r = crate::rng::from_seed(1);
        for _ in 0..20 {
            let x = SpinConfig::random(10, &mut r);
            let h = hamiltonian(&g, &x, 4.0).unwrap();
            for i in 0..10 {
                let lhs = x.get(i) * local_field(&g, &x, i, 4.0).unwrap();
                let rhs = (h - hamiltonian(&g, &x.flipped(i), 4.0).unwrap()) / 2.0;
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn graph_gibbs_law_matches_exact_engine() {
        let n = 10;
        let d: f64 = 3.0;
        let beta = 0.4;
        let g = erdos_renyi(n, 0.3, 6).unwrap();
        let j = -beta * g.adjacency();
        let summary = gibbs_moments(&IsingModel::ising(j, vec![0.0; n]).unwrap(), &Limits::default()).unwrap();
        let lw: Vec<f64> = (0..1u64 << n)
            .map(|b| beta * d.sqrt() * hamiltonian(&g, &SpinConfig::from_bits(n, b), d).unwrap())
            .collect();
        let log_z = crate::numeric::log_sum_exp(lw.iter().copied());
        assert!((log_z - summary.log_z).abs() < 1e-10);
        for a in 0..n {
            for c in 0..n {
                let e: f64 = lw
                    .iter()
                    .enumerate()
                    .map(|(b, l)| {
                        let x = SpinConfig::from_bits(n, b as u64);
                        (l - log_z).exp() * x.get(a) * x.get(c)
                    })
                    .sum();
                let cov = e - summary.mean[a] * summary.mean[c];
                assert!((cov - summary.cov[(a, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gapped_examples() {
        let rep = gapped_check(&edge(), &cfg(&[1, -1]), 1.0, 1.0).unwrap();
        assert!(rep.violating_sites.is_empty());
        assert!(rep.is_gapped(0.0));
        let rep = gapped_check(&Graph::empty(5), &cfg(&[1, 1, -1, 1, -1]), 0.5, 1.0).unwrap();
        assert_eq!(rep.delta_achieved, 1.0);
        assert!(gapped_check(&edge(), &cfg(&[1, 1]), 0.0, 1.0).is_err());
    }

    #[test]
    fn gapped_set_matches_flip_differences() {
        let mut r = crate::rng::from_seed(8);
        for k in 0..50u64 {
            let n = 4 + (k % 9) as usize;
            let g = erdos_renyi(n, 0.5, k).unwrap();
            let x = SpinConfig::random(n, &mut r);
            let kappa = 0.3 + (k % 3) as f64;
            let d = 2.0;
            let rep = gapped_check(&g, &x, kappa, d).unwrap();
            let h = hamiltonian(&g, &x, d).unwrap();
            let oracle: Vec<usize> = (0..n)
                .filter(|&i| (h - hamiltonian(&g, &x.flipped(i), d).unwrap()) / 2.0 < kappa)
                .collect();
            assert_eq!(rep.violating_sites, oracle);
        }
    }

    #[test]
    fn greedy_on_single_edge() {
        let out = greedy_ascent(&edge(), &cfg(&[1, 1]), 1.0, 5).unwrap();
        assert!(out.converged);
        assert_eq!(hamiltonian(&edge(), &out.state, 1.0).unwrap(), 2.0);
        assert_eq!(out.state.sum(), 0);
    }

    #[test]
    fn greedy_reaches_local_maximum() {
        let g = random_regular(200, 5, 1).unwrap();
        let mut r = crate::rng::from_seed(2);
        let x0 = SpinConfig::random(200, &mut r);
        let out = greedy_ascent(&g, &x0, 5.0, 1000).unwrap();
        assert!(out.converged);
        for i in 0..200 {
            assert!(out.state.get(i) * local_field(&g, &out.state, i, 5.0).unwrap() >= 0.0);
        }
        assert!(hamiltonian(&g, &out.state, 5.0).unwrap() >= hamiltonian(&g, &x0, 5.0).unwrap());
    }

    #[test]
    fn greedy_is_monotone_per_sweep() {
        let g = erdos_renyi(150, 0.05, 4).unwrap();
        let mut x = SpinConfig::random(150, &mut crate::rng::from_seed(3));
        let mut h = hamiltonian(&g, &x, 7.5).unwrap();
        for _ in 0..20 {
            x = greedy_ascent(&g, &x, 7.5, 1).unwrap().state;
            let next = hamiltonian(&g, &x, 7.5).unwrap();
            assert!(next >= h);
            h = next;
        }
    }

    /// Best balanced swap by brute force on `H`.
    fn best_swap_gain(g: &Graph, x: &SpinConfig, d: f64) -> f64 {
        let h = hamiltonian(g, x, d).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..g.n() {
            for j in 0..g.n() {
                if x.spins()[i] == 1 && x.spins()[j] == -1 {
                    let y = x.flipped(i).flipped(j);
                    best = best.max(hamiltonian(g, &y, d).unwrap() - h);
                }
            }
        }
        best
    }

    #[test]
    fn balanced_path_is_fixed() {
        let g = Graph::path(4).unwrap();
        let x = cfg(&[1, -1, 1, -1]);
        assert!(best_swap_gain(&g, &x, 1.0) <= 0.0);
        let out = balanced_greedy_ascent(&g, &x, 1.0, 10).unwrap();
        assert_eq!(out.state, x);
        assert!(out.converged);
        assert!(balanced_greedy_ascent(&g, &cfg(&[1, 1, 1, -1]), 1.0, 10).is_err());
    }

    #[test]
    fn balanced_ascent_stays_balanced() {
        for seed in 0..10 {
            let g = erdos_renyi(30, 0.2, seed).unwrap();
            let res = gapped_search(&g, 6.0, 0.1, 200, &[seed], true, Exec::Sequential).unwrap();
            let out = &res[0].0;
            assert_eq!(out.state.sum(), 0);
            if out.converged {
                assert!(best_swap_gain(&g, &out.state, 6.0) <= 1e-12);
            }
        }
    }

    #[test]
    fn cw_small_cases() {
        let c = cw_conductance_exact(2, 0.0).unwrap();
        assert!((c.ratio - 0.25).abs() < 1e-15);
        assert!((c.bound - 2.0).abs() < 1e-15);
        let c = cw_conductance_exact(100, 1.0).unwrap();
        assert!(c.passes);
        assert!((c.bound - 7.326_255_555_493_672e-4).abs() < 1e-15);
        assert!(cw_conductance_exact(7, 1.0).is_err());
    }

    #[test]
    fn cw_matches_exact_engine() {
        for n in [2usize, 4, 8, 12] {
            for beta0 in [0.0, 0.1, 0.5] {
                let model = IsingModel::outlier(beta0 * n as f64, vec![1.0; n], vec![0.0; n]).unwrap();
                let oracle = conductance(&model, |x| x.get(0) > 0.0, &Limits::default()).unwrap();
                let c = cw_conductance_exact(n, beta0).unwrap();
                assert!((c.ratio - oracle).abs() < 1e-12 * oracle.max(1e-300), "n={n} b={beta0}");
            }
        }
    }

    #[test]
    fn cw_scaling_form() {
        for n in [100usize, 10_000] {
            for beta0 in [0.25, 0.5, 1.0, 2.0] {
                let c = cw_conductance_exact(n, beta0).unwrap();
                assert!(c.ratio * (4.0 * beta0).exp() * n as f64 <= 4.0);
            }
        }
    }

    #[test]
    fn energy_drop_examples() {
        let g = edge();
        let x = cfg(&[1, -1]);
        let same = energy_drop_check(&g, &x, &x, 0.7, 0.0, 1.0).unwrap();
        assert_eq!(same.margin, 0.0);
        assert!(same.holds);
        let y = cfg(&[-1, -1]);
        let r = energy_drop_check(&g, &x, &y, 2.0, 1.0, 1.0).unwrap();
        // H(x) = 2, H(y) = -2, rho kappa n / 4 = 1.
        assert!((r.margin - 3.0).abs() < 1e-15);
        assert!(energy_drop_check(&g, &x, &y, 2.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn graph_ops_reject_bad_dimensions() {
        assert!(hamiltonian(&edge(), &cfg(&[1, 1, 1]), 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn greedy_never_decreases_h(seed in 0u64..1000, n in 2usize..40, p in 0.05f64..0.9) {
            let g = erdos_renyi(n, p, seed).unwrap();
            let x0 = SpinConfig::random(n, &mut crate::rng::from_seed(seed ^ 7));
            let out = greedy_ascent(&g, &x0, 3.0, 50).unwrap();
            prop_assert!(hamiltonian(&g, &out.state, 3.0).unwrap() >= hamiltonian(&g, &x0, 3.0).unwrap());
        }

        #[test]
        fn balanced_never_decreases_h(seed in 0u64..1000, half in 1usize..15) {
            let n = 2 * half;
            let g = erdos_renyi(n, 0.3, seed).unwrap();
            let out = gapped_search(&g, 2.0, 0.5, 30, &[seed], true, Exec::Sequential).unwrap();
            prop_assert_eq!(out[0].0.state.sum(), 0);
        }
    }
}
