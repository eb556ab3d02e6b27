//! Witness search for the entropy contraction `Ent(Pf) <= (1 - rho) Ent(f)`.
//!
//! Every positive `f` certifies `rho_LS <= 1 - Ent(Pf)/Ent(f)`, so the best
//! witness found gives an upper bound on the constant. We never claim the
//! optimum. Witnesses are parametrized as `f = exp(g)` and improved by
//! gradient ascent of the ratio with backtracking.

use rand::Rng;
use rand_distr::StandardNormal;

use super::kernel::GlauberKernel;
use super::{cap, Limits};
use crate::error::Result;
use crate::model::IsingModel;
use crate::numeric::KahanSum;

/// Largest n accepted by the witness search.
pub const MLSI_MAX_N: usize = 12;

#[derive(Debug, Clone)]
pub struct MlsiOptions {
    /// Random starting witnesses on top of the canonical ones.
    pub restarts: usize,
    pub seed: u64,
    /// Ascent iterations per start.
    pub iterations: usize,
}

impl Default for MlsiOptions {
    fn default() -> Self {
        MlsiOptions {
            restarts: 4,
            seed: 0,
            iterations: 150,
        }
    }
}

/// Upper bound on the discrete-time MLSI constant of the Glauber chain.
pub fn mlsi_upper_estimate(model: &IsingModel, opts: &MlsiOptions, limits: &Limits) -> Result<f64> {
    cap("mlsi_upper_estimate", model.n(), MLSI_MAX_N)?;
    let kernel = GlauberKernel::new(model, limits)?;
    estimate_on_kernel(&kernel, model, opts)
}

pub(crate) fn estimate_on_kernel(kernel: &GlauberKernel, model: &IsingModel, opts: &MlsiOptions) -> Result<f64> {
    cap("mlsi_upper_estimate", model.n(), MLSI_MAX_N)?;
    let mut best = 0.0f64;
    for g in starts(model, opts) {
        if let Some(r) = ascend(kernel, g, opts.iterations) {
            best = best.max(r);
        }
    }
    Ok((1.0 - best).clamp(0.0, 1.0))
}

fn starts(model: &IsingModel, opts: &MlsiOptions) -> Vec<Vec<f64>> {
    let n = model.n();
    let states = 1usize << n;
    let spin = |x: usize, i: usize| if x >> i & 1 == 1 { 1.0 } else { -1.0 };
    let mut out = Vec::new();
    for i in 0..n {
        out.push((0..states).map(|x| if spin(x, i) > 0.0 { 0.0 } else { (0.05f64).ln() }).collect());
    }
    let mut directions: Vec<Vec<f64>> = vec![vec![1.0; n]];
    if model.u().iter().any(|&v| v != 0.0) {
        directions.push(model.u().to_vec());
    }
    for dir in &directions {
        let proj = |x: usize| (0..n).map(|i| dir[i] * spin(x, i)).sum::<f64>();
        for theta in [1.0, 3.0] {
            out.push((0..states).map(|x| theta * proj(x)).collect());
        }
        out.push((0..states).map(|x| if proj(x) > 0.0 { 0.0 } else { (0.05f64).ln() }).collect());
    }
    let mut rng = crate::rng::from_seed(opts.seed);
    for _ in 0..opts.restarts {
        out.push((0..states).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    }
    out
}

fn entropy(pi: &[f64], f: &[f64]) -> (f64, f64) {
    let mut mean = KahanSum::new();
    let mut flogf = KahanSum::new();
    for (p, v) in pi.iter().zip(f) {
        mean.add(p * v);
        if *v > 0.0 {
            flogf.add(p * v * v.ln());
        }
    }
    let e = mean.value();
    ((flogf.value() - e * e.ln()).max(0.0), e)
}

/// Contraction ratio `Ent(Pf)/Ent(f)` at `f = exp(g)`.
fn ratio(kernel: &GlauberKernel, g: &[f64], f: &mut [f64], pf: &mut [f64]) -> Option<(f64, f64, f64, f64, f64)> {
    let top = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (fi, gi) in f.iter_mut().zip(g) {
        *fi = (gi - top).exp();
    }
    kernel.apply(f, pf);
    let pi = kernel.stationary();
    let (ent_f, mean_f) = entropy(pi, f);
    if !(ent_f > 1e-14 * mean_f.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let (ent_pf, mean_pf) = entropy(pi, pf);
    Some((ent_pf / ent_f, ent_f, ent_pf, mean_f, mean_pf))
}

fn ascend(kernel: &GlauberKernel, mut g: Vec<f64>, iterations: usize) -> Option<f64> {
    let s = g.len();
    let mut f = vec![0.0; s];
    let mut pf = vec![0.0; s];
    let mut tmp = vec![0.0; s];
    let mut grad = vec![0.0; s];
    let (mut r, mut ent_f, mut ent_pf, mut mean_f, mut mean_pf) = ratio(kernel, &g, &mut f, &mut pf)?;
    let mut step = 1.0;
    for _ in 0..iterations {
        // L^2(pi) gradient of the ratio with respect to g.
        let log_mean_pf = mean_pf.ln();
        for x in 0..s {
            tmp[x] = pf[x].ln() - log_mean_pf;
        }
        kernel.apply(&tmp, &mut grad);
        let log_mean_f = mean_f.ln();
        let mut sup = 0.0f64;
        for x in 0..s {
            let a = f[x].ln() - log_mean_f;
            let d = f[x] * (grad[x] * ent_f - ent_pf * a) / (ent_f * ent_f);
            grad[x] = d;
            sup = sup.max(d.abs());
        }
        if !(sup > 0.0) {
            break;
        }
        let mut improved = false;
        let mut trial = vec![0.0; s];
        while step > 1e-10 {
            for x in 0..s {
                trial[x] = g[x] + step * grad[x] / sup;
            }
            if let Some(next) = ratio(kernel, &trial, &mut f, &mut pf) {
                if next.0 > r {
                    g.copy_from_slice(&trial);
                    let gain = next.0 - r;
                    (r, ent_f, ent_pf, mean_f, mean_pf) = next;
                    improved = gain > 1e-13;
                    step *= 2.0;
                    break;
                }
            }
            step *= 0.5;
        }
        // f and pf must describe the accepted g.
        ratio(kernel, &g, &mut f, &mut pf)?;
        if !improved {
            break;
        }
    }
    Some(r.min(1.0))
}
