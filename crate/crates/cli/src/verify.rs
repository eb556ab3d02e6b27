//! The acceptance battery behind `spinlab verify`.
//!
//! Every criterion uses fixed seeds, so two runs give identical reports.
//! Runtimes are measured but kept out of the serialized report.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use spinlab::approx::{
    approx_correlation, approx_correlation_spectrum, approx_covariance, approx_params, cov_matrix_via_cavity,
    opnorm_error, ApproxParams,
};
use spinlab::dynamics::{cw_conductance_exact, gapped_check, hamiltonian};
use spinlab::ensembles::{erdos_renyi, random_regular};
use spinlab::exact::{gibbs_moments, spectral_gap, Limits};
use spinlab::linalg::{opnorm, sym_eigenvalues};
use spinlab::tilted::{
    deficit, gaussian_parity_expectation, stein_residual, tilted_variance, TiltedEnsemble,
};
use spinlab::{rng, sample, Exec, IsingModel, SpinConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

/// Deliberate faults for checking that the battery can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Replaces `alpha* = 2 beta / (1 + 2 beta F'')` by `2 beta`.
    AlphaStar,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    /// Runtime budget in seconds; exceeding it fails the criterion.
    pub budget_s: f64,
    pub measured: Value,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub level: &'static str,
    pub all_passed: bool,
    pub criteria: Vec<CriterionReport>,
}

impl Report {
    pub fn criterion(&self, id: u8) -> Option<&CriterionReport> {
        self.criteria.iter().find(|c| c.id == id)
    }
}

// Tolerances and thresholds of the acceptance criteria.
pub const CAVITY_TOL: f64 = 1e-10;
pub const BETA_ZERO_TOL: f64 = 1e-12;
pub const SCALING_RATIO_MAX: f64 = 0.65;
pub const CONTRACTION_SLACK: f64 = 1e-12;
pub const HS_SLACK: f64 = 1e-9;
pub const FERRO_GAP_RATIO_MIN: f64 = 5.0;
pub const OUTLIER_GAP_FACTOR: f64 = 0.5;
pub const OUTLIER_J_OP: f64 = 0.3;
pub const EVEN_RATIO: (f64, f64) = (0.35, 0.7);
pub const ODD_RATIO: (f64, f64) = (0.55, 0.85);
pub const VARIANCE_GROWTH_MAX: f64 = 1.5;
pub const VARIANCE_LOG_FACTOR: f64 = 10.0;
pub const PARITY_TOL: f64 = 1e-13;
pub const STEIN_TOL: f64 = 1e-9;
pub const CW_CONSTANT: f64 = 4.0;
pub const RAMANUJAN_SLACK: f64 = 0.2;
pub const RAMANUJAN_MIN_RUNS: usize = 19;

struct Outcome {
    passed: bool,
    measured: Value,
}

type Check = fn(Fault) -> Outcome;

struct Spec {
    id: u8,
    name: &'static str,
    budget_s: f64,
    fast: bool,
    run: Check,
}

const SPECS: [Spec; 14] = [
    Spec { id: 1, name: "cavity_covariance_exact", budget_s: 30.0, fast: true, run: c01_cavity },
    Spec { id: 2, name: "beta_zero_collapse", budget_s: 5.0, fast: true, run: c02_beta_zero },
    Spec { id: 3, name: "correlation_scaling", budget_s: 600.0, fast: false, run: c03_scaling },
    Spec { id: 4, name: "correlation_contraction", budget_s: 600.0, fast: false, run: c04_contraction },
    Spec { id: 5, name: "hubbard_stratonovich_bound", budget_s: 300.0, fast: false, run: c05_hs },
    Spec { id: 6, name: "ferro_transition_signature", budget_s: 120.0, fast: true, run: c06_ferro },
    Spec { id: 7, name: "outlier_gap_desk_check", budget_s: 300.0, fast: false, run: c07_outlier_gap },
    Spec { id: 8, name: "tilted_parity_rates", budget_s: 60.0, fast: true, run: c08_parity_rates },
    Spec { id: 9, name: "tilted_variance_accuracy", budget_s: 120.0, fast: true, run: c09_variance },
    Spec { id: 10, name: "gaussian_parity_identities", budget_s: 10.0, fast: true, run: c10_parity },
    Spec { id: 11, name: "stein_residual", budget_s: 5.0, fast: true, run: c11_stein },
    Spec { id: 12, name: "curie_weiss_conductance", budget_s: 60.0, fast: true, run: c12_cw },
    Spec { id: 13, name: "gapped_detector_soundness", budget_s: 10.0, fast: true, run: c13_gapped },
    Spec { id: 14, name: "regular_graph_spectra", budget_s: 180.0, fast: false, run: c14_ramanujan },
];

fn run_spec(spec: &Spec, fault: Fault) -> CriterionReport {
    let t0 = Instant::now();
    let out = (spec.run)(fault);
    let elapsed = t0.elapsed();
    CriterionReport {
        id: spec.id,
        name: spec.name,
        passed: out.passed && elapsed.as_secs_f64() <= spec.budget_s,
        budget_s: spec.budget_s,
        measured: out.measured,
        elapsed,
    }
}

/// Runs the battery. The fast level runs the cheap criteria; the full level
/// runs all fifteen, the last of which repeats the others and compares the
/// serialized results byte for byte.
pub fn run(level: Level, fault: Fault) -> Report {
    let chosen: Vec<&Spec> = SPECS.iter().filter(|s| level == Level::Full || s.fast).collect();
    let mut criteria: Vec<CriterionReport> = chosen.iter().map(|s| run_spec(s, fault)).collect();
    if level == Level::Full {
        criteria.push(determinism(&chosen, &criteria, fault));
    }
    Report {
        level: match level {
            Level::Fast => "fast",
            Level::Full => "full",
        },
        all_passed: criteria.iter().all(|c| c.passed),
        criteria,
    }
}

/// Runs a single criterion by id (1 to 14).
pub fn run_one(id: u8, fault: Fault) -> Option<CriterionReport> {
    SPECS.iter().find(|s| s.id == id).map(|s| run_spec(s, fault))
}

fn determinism(specs: &[&Spec], first: &[CriterionReport], fault: Fault) -> CriterionReport {
    let t0 = Instant::now();
    let mut mismatched = Vec::new();
    for (spec, a) in specs.iter().zip(first) {
        let b = run_spec(spec, fault);
        let (sa, sb) = (serde_json::to_string(a).unwrap(), serde_json::to_string(&b).unwrap());
        if sa != sb {
            mismatched.push(spec.id);
        }
    }
    CriterionReport {
        id: 15,
        name: "determinism",
        passed: mismatched.is_empty(),
        budget_s: f64::INFINITY,
        measured: json!({ "rerun": specs.len(), "mismatched": mismatched }),
        elapsed: t0.elapsed(),
    }
}

fn seq() -> Limits {
    Limits::with_exec(Exec::default())
}

fn params(model: &IsingModel, fault: Fault) -> ApproxParams {
    let mut p = approx_params(model.beta(), model.u(), model.h()).expect("valid model");
    if fault == Fault::AlphaStar {
        p.alpha_star = 2.0 * p.beta;
    }
    p
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn c01_cavity(_: Fault) -> Outcome {
    let mut r = rng::from_seed(101);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = 2 + k % 9;
        let beta = r.random_range(0.1..6.0);
        let model = IsingModel::outlier(beta, sample::random_u(n, &mut r), sample::random_h(n, 1.0, &mut r)).unwrap();
        let exact = gibbs_moments(&model, &seq()).unwrap();
        let cav = cov_matrix_via_cavity(&model, &seq()).unwrap();
        worst = worst.max((&cav - &exact.cov).abs().max());
    }
    Outcome {
        passed: worst <= CAVITY_TOL,
        measured: json!({ "models": 50, "max_abs_diff": worst, "tol": CAVITY_TOL }),
    }
}

fn c02_beta_zero(fault: Fault) -> Outcome {
    let mut r = rng::from_seed(102);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = 10;
        let model = IsingModel::outlier(0.0, sample::random_u(n, &mut r), sample::random_h(n, 2.0, &mut r)).unwrap();
        let exact = gibbs_moments(&model, &seq()).unwrap();
        let approx = approx_covariance(&params(&model, fault));
        worst = worst.max((&approx - &exact.cov).abs().max());
    }
    Outcome {
        passed: worst <= BETA_ZERO_TOL,
        measured: json!({ "fields": 20, "max_abs_diff": worst, "tol": BETA_ZERO_TOL }),
    }
}

/// The 100 instances per size shared by criteria 3 and 4.
fn scaling_instances(n: usize) -> Vec<IsingModel> {
    let mut r = rng::stream(103, n as u64);
    (0..100)
        .map(|_| IsingModel::outlier(1.0, sample::random_u(n, &mut r), sample::random_h(n, 1.0, &mut r)).unwrap())
        .collect()
}

const SCALING_SIZES: [usize; 3] = [8, 12, 16];

fn c03_scaling(fault: Fault) -> Outcome {
    let mut medians = Vec::new();
    for n in SCALING_SIZES {
        let errs: Vec<f64> = spinlab::par::map_indexed(Exec::default(), 100, {
            let models = scaling_instances(n);
            move |k| {
                let exact = gibbs_moments(&models[k], &Limits::with_exec(Exec::Sequential)).unwrap();
                opnorm_error(&exact.cor, &approx_correlation(&params(&models[k], fault))).unwrap()
            }
        });
        medians.push(median(errs));
    }
    let ratio = medians[2] / medians[0];
    Outcome {
        passed: ratio <= SCALING_RATIO_MAX,
        measured: json!({
            "n": SCALING_SIZES,
            "median_error": medians,
            "ratio_16_over_8": ratio,
            "max_ratio": SCALING_RATIO_MAX,
        }),
    }
}

fn c04_contraction(fault: Fault) -> Outcome {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for n in SCALING_SIZES {
        for m in scaling_instances(n) {
            let p = params(&m, fault);
            let spec = approx_correlation_spectrum(&p);
            // Independent check of the analytic spectrum.
            let dense = sym_eigenvalues(&approx_correlation(&p));
            for l in spec.iter().chain(&dense) {
                lo = lo.min(*l);
                hi = hi.max(*l);
            }
        }
    }
    Outcome {
        passed: lo >= 0.0 && hi <= 1.0 + CONTRACTION_SLACK,
        measured: json!({ "instances": 300, "min_eigenvalue": lo, "max_eigenvalue": hi }),
    }
}

fn c05_hs(_: Fault) -> Outcome {
    let n = 10;
    let mut r = rng::from_seed(105);
    let mut violations = 0usize;
    let mut worst_slack = f64::INFINITY;
    let mut checked = 0usize;
    for _ in 0..50 {
        let j_op = r.random_range(0.1..=0.4);
        let j = sample::random_psd(n, j_op, &mut r);
        let actual_op = opnorm(&j);
        let bound = 1.0 / (1.0 - 2.0 * actual_op);
        for _ in 0..20 {
            let model = IsingModel::ising(j.clone(), sample::random_h(n, 1.0, &mut r)).unwrap();
            let cov = gibbs_moments(&model, &seq()).unwrap().cov;
            let c = opnorm(&cov);
            checked += 1;
            worst_slack = worst_slack.min(bound + HS_SLACK - c);
            if c > bound + HS_SLACK {
                violations += 1;
            }
        }
    }
    Outcome {
        passed: violations == 0,
        measured: json!({ "checked": checked, "violations": violations, "min_slack": worst_slack }),
    }
}

fn c06_ferro(_: Fault) -> Outcome {
    let n = 12;
    let gaps: Vec<f64> = [0.3, 0.45, 0.7]
        .iter()
        .map(|&beta| {
            let j = DMatrix::from_element(n, n, beta / n as f64);
            spectral_gap(&IsingModel::ising(j, vec![0.0; n]).unwrap(), &seq()).unwrap()
        })
        .collect();
    let ratio = gaps[0] / gaps[2];
    Outcome {
        passed: ratio >= FERRO_GAP_RATIO_MIN,
        measured: json!({
            "beta": [0.3, 0.45, 0.7],
            "n_gap": gaps.iter().map(|g| g * n as f64).collect::<Vec<_>>(),
            "ratio_03_over_07": ratio,
        }),
    }
}

fn c07_outlier_gap(_: Fault) -> Outcome {
    let n = 12;
    let floor = OUTLIER_GAP_FACTOR * (1.0 - 2.0 * OUTLIER_J_OP);
    let mut min_ngap = f64::INFINITY;
    let mut runs = 0usize;
    for beta in [1.0, 4.0] {
        for seed in 0..20u64 {
            let mut r = rng::stream(107, seed);
            let model = sample::random_model(n, beta, OUTLIER_J_OP, 1.0, &mut r);
            min_ngap = min_ngap.min(n as f64 * spectral_gap(&model, &seq()).unwrap());
            runs += 1;
        }
    }
    Outcome {
        passed: min_ngap >= floor,
        measured: json!({ "runs": runs, "min_n_gap": min_ngap, "floor": floor }),
    }
}

const OMEGAS: [usize; 3] = [256, 512, 1024];

fn c08_parity_rates(_: Fault) -> Outcome {
    let gamma = 4.0;
    let even: Vec<f64> = OMEGAS
        .iter()
        .map(|&w| deficit(&TiltedEnsemble::fair_coin(w, gamma, 0.0).unwrap(), 2).unwrap())
        .collect();
    // P(+1) = 0.6, so each summand has mean 0.2 and omega = 0.96 n doubles with n.
    let odd: Vec<f64> = OMEGAS
        .iter()
        .map(|&n| deficit(&TiltedEnsemble::equal_weight(n, 0.2, gamma, 0.0).unwrap(), 1).unwrap())
        .collect();
    let ratios = |d: &[f64]| vec![d[1] / d[0], d[2] / d[1]];
    let (re, ro) = (ratios(&even), ratios(&odd));
    let inside = |r: &[f64], (a, b): (f64, f64)| r.iter().all(|x| (a..=b).contains(x));
    Outcome {
        passed: inside(&re, EVEN_RATIO) && inside(&ro, ODD_RATIO),
        measured: json!({
            "even_deficits": even,
            "even_ratios": re,
            "odd_omega": OMEGAS.iter().map(|&n| 0.96 * n as f64).collect::<Vec<_>>(),
            "odd_deficits": odd,
            "odd_ratios": ro,
        }),
    }
}

fn c09_variance(_: Fault) -> Outcome {
    let beta = 16.0;
    let scaled: Vec<f64> = [512usize, 1024, 2048]
        .iter()
        .map(|&n| {
            let ens = TiltedEnsemble::fair_coin(n, 0.0, 0.0).unwrap();
            let t = beta / (n as f64).sqrt();
            let v = tilted_variance(&ens, t, beta).unwrap();
            let z = v.zeta;
            (v.variance - z / (1.0 + 2.0 * beta * z)).abs() * n as f64 * (1.0 + 2.0 * beta * z)
        })
        .collect();
    let cap = VARIANCE_LOG_FACTOR * (1.0 + beta).ln().powi(2);
    let monotone = scaled.windows(2).all(|w| w[1] <= VARIANCE_GROWTH_MAX * w[0]);
    Outcome {
        passed: monotone && scaled.iter().all(|&s| s <= cap),
        measured: json!({ "n": [512, 1024, 2048], "scaled_error": scaled, "cap": cap }),
    }
}

fn c10_parity(_: Fault) -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    for m in 1..=6u32 {
        for ell in 0..=4u32 {
            if (m + ell) % 2 == 1 {
                continue;
            }
            for a in [0.5, 0.75, 1.0] {
                for gamma in [0.0, 0.5, 2.0, 8.0] {
                    worst = worst.max(gaussian_parity_expectation(m, ell, a, gamma).unwrap().abs());
                    cases += 1;
                }
            }
        }
    }
    Outcome {
        passed: worst <= PARITY_TOL,
        measured: json!({ "cases": cases, "max_abs": worst }),
    }
}

fn c11_stein(_: Fault) -> Outcome {
    let mut r = rng::from_seed(111);
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    for m in 1..=8u32 {
        for gamma in [0.5, 2.0, 8.0] {
            for _ in 0..100 {
                let x = r.random_range(-5.0..5.0);
                worst = worst.max(stein_residual(m, gamma, x).unwrap().abs());
                cases += 1;
            }
        }
    }
    Outcome {
        passed: worst <= STEIN_TOL,
        measured: json!({ "cases": cases, "max_residual": worst }),
    }
}

fn c12_cw(_: Fault) -> Outcome {
    let mut cells = Vec::new();
    let mut passed = true;
    for n in [100usize, 10_000, 1_000_000] {
        for beta0 in [0.25, 0.5, 1.0, 2.0] {
            let c = cw_conductance_exact(n, beta0).unwrap();
            let bound = CW_CONSTANT / (n as f64 * (4.0 * beta0).exp());
            passed &= c.ratio <= bound;
            cells.push(json!({ "n": n, "beta0": beta0, "ratio": c.ratio, "bound": bound }));
        }
    }
    Outcome {
        passed,
        measured: json!({ "cells": cells }),
    }
}

fn c13_gapped(_: Fault) -> Outcome {
    let mut r = rng::from_seed(113);
    let mut mismatches = 0usize;
    for k in 0..50u64 {
        let n = 2 + (k % 11) as usize;
        let g = erdos_renyi(n, r.random_range(0.1..0.9), k).unwrap();
        let x = SpinConfig::random(n, &mut r);
        let d = r.random_range(1.0..5.0);
        let kappa = r.random_range(0.05..2.0);
        let rep = gapped_check(&g, &x, kappa, d).unwrap();
        let h = hamiltonian(&g, &x, d).unwrap();
        let oracle: Vec<usize> = (0..n)
            .filter(|&i| (h - hamiltonian(&g, &x.flipped(i), d).unwrap()) / 2.0 < kappa)
            .collect();
        if rep.violating_sites != oracle {
            mismatches += 1;
        }
    }
    Outcome {
        passed: mismatches == 0,
        measured: json!({ "pairs": 50, "mismatches": mismatches }),
    }
}

fn c14_ramanujan(_: Fault) -> Outcome {
    let limit = 2.0 * 2f64.sqrt() + RAMANUJAN_SLACK;
    let lambda2: Vec<f64> = spinlab::par::map_indexed(Exec::default(), 20, |k| {
        let g = random_regular(1000, 3, 1400 + k as u64).unwrap();
        sym_eigenvalues(&g.adjacency())[1]
    });
    let good = lambda2.iter().filter(|&&l| l <= limit).count();
    Outcome {
        passed: good >= RAMANUJAN_MIN_RUNS,
        measured: json!({ "lambda2": lambda2, "limit": limit, "within": good }),
    }
}
