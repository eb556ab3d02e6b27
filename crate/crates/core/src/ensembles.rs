//! Random graphs, disorder matrices, spectra and the parameter regimes in
//! which the rapid-mixing guarantees apply.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, lanczos, opnorm, sym_eigen, LanczosOptions};
use crate::rng;

/// Simple undirected graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from undirected edges; loops and repeated edges are errors.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        let mut seen = HashSet::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::arg(format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            if a == b {
                return Err(Error::arg(format!("self-loop at {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::arg(format!("repeated edge ({a}, {b})")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Graph { n, adj })
    }

    pub fn empty(n: usize) -> Self {
        Graph {
            n,
            adj: vec![Vec::new(); n],
        }
    }

    pub fn complete(n: usize) -> Self {
        Graph {
            n,
            adj: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
        }
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::arg("a cycle needs at least 3 vertices"));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::from_edges(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    /// Edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, list) in self.adj.iter().enumerate() {
            for &j in list {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for (i, list) in self.adj.iter().enumerate() {
            for &j in list {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yi, list) in y.iter_mut().zip(&self.adj) {
            *yi = list.iter().map(|&j| x[j]).sum();
        }
    }

    /// True when every vertex has degree `d`.
    pub fn is_regular(&self, d: usize) -> bool {
        self.adj.iter().all(|l| l.len() == d)
    }
}

/// Uniform-pairing attempts before switching to the edge-switch chain.
pub const PAIRING_RETRIES: usize = 500;

/// How a random regular graph was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegularInfo {
    pub attempts: usize,
    /// True when every pairing was rejected and the graph came from
    /// edge-switch randomization of a circulant start.
    pub fallback: bool,
}

/// Uniform random `d`-regular graph by the configuration model, rejecting any
/// pairing with loops or repeated edges.
pub fn random_regular(n: usize, d: usize, seed: u64) -> Result<Graph> {
    random_regular_with_info(n, d, seed).map(|(g, _)| g)
}

pub fn random_regular_with_info(n: usize, d: usize, seed: u64) -> Result<(Graph, RegularInfo)> {
    if d == 0 || d >= n {
        return Err(Error::arg(format!("need 1 <= d < n, got d = {d}, n = {n}")));
    }
    if (n * d) % 2 == 1 {
        return Err(Error::arg(format!("n d must be even, got n = {n}, d = {d}")));
    }
    let mut rng = rng::from_seed(seed);
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    for attempt in 1..=PAIRING_RETRIES {
        stubs.shuffle(&mut rng);
        if let Some(edges) = simple_pairing(&stubs) {
            let g = Graph::from_edges(n, &edges)?;
            return Ok((
                g,
                RegularInfo {
                    attempts: attempt,
                    fallback: false,
                },
            ));
        }
    }
    let g = edge_switch(circulant(n, d)?, 20 * n * d, &mut rng)?;
    Ok((
        g,
        RegularInfo {
            attempts: PAIRING_RETRIES,
            fallback: true,
        },
    ))
}

fn simple_pairing(stubs: &[usize]) -> Option<Vec<(usize, usize)>> {
    let mut seen = HashSet::with_capacity(stubs.len() / 2);
    let mut edges = Vec::with_capacity(stubs.len() / 2);
    for pair in stubs.chunks_exact(2) {
        let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
        if a == b || !seen.insert((a, b)) {
            return None;
        }
        edges.push((a, b));
    }
    Some(edges)
}

/// Deterministic `d`-regular start: vertex `i` joins `i ± 1, ..., i ± d/2`
/// and, for odd `d`, the antipode `i + n/2`.
fn circulant(n: usize, d: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::with_capacity(n * d / 2);
    for i in 0..n {
        for k in 1..=d / 2 {
            let j = (i + k) % n;
            edges.push((i.min(j), i.max(j)));
        }
        if d % 2 == 1 && i < n / 2 {
            edges.push((i, i + n / 2));
        }
    }
    Ok(edges)
}

fn edge_switch<R: Rng + ?Sized>(mut edges: Vec<(usize, usize)>, switches: usize, rng: &mut R) -> Result<Graph> {
    let mut set: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let m = edges.len();
    for _ in 0..switches {
        let (p, q) = (rng.random_range(0..m), rng.random_range(0..m));
        if p == q {
            continue;
        }
        let (a, b) = edges[p];
        let (c, e) = edges[q];
        let (x, y) = if rng.random::<bool>() { ((a, c), (b, e)) } else { ((a, e), (b, c)) };
        if x.0 == x.1 || y.0 == y.1 {
            continue;
        }
        let (kx, ky) = (key(x.0, x.1), key(y.0, y.1));
        if kx == ky || set.contains(&kx) || set.contains(&ky) {
            continue;
        }
        set.remove(&edges[p]);
        set.remove(&edges[q]);
        set.insert(kx);
        set.insert(ky);
        edges[p] = kx;
        edges[q] = ky;
    }
    let n = edges.iter().map(|&(_, b)| b + 1).max().unwrap_or(0);
    let n = n.max(edges.iter().map(|&(a, _)| a + 1).max().unwrap_or(0));
    Graph::from_edges(n, &edges)
}

/// `G(n, p)`: every pair is an edge independently with probability `p`.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::arg(format!("p must lie in [0, 1], got {p}")));
    }
    if p == 1.0 {
        return Ok(Graph::complete(n));
    }
    let mut edges = Vec::new();
    if p > 0.0 {
        // Geometric skipping over the pairs (v, w), w < v.
        let mut rng = rng::from_seed(seed);
        let log_q = (1.0 - p).ln();
        let (mut v, mut w): (usize, i64) = (1, -1);
        while v < n {
            let r: f64 = 1.0 - rng.random::<f64>();
            w += 1 + (r.ln() / log_q).floor() as i64;
            while w >= v as i64 && v < n {
                w -= v as i64;
                v += 1;
            }
            if v < n {
                edges.push((w as usize, v));
            }
        }
    }
    Graph::from_edges(n, &edges)
}

/// Symmetric disorder matrix with zero diagonal and i.i.d. upper entries
/// `N(-mu_mean/n, beta^2/n)`.
pub fn sk_matrix(n: usize, beta: f64, mu_mean: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(beta >= 0.0) {
        return Err(Error::arg("beta must be >= 0"));
    }
    let nf = n as f64;
    let normal = Normal::new(-mu_mean / nf, beta / nf.sqrt()).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = rng::from_seed(seed);
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            let v = normal.sample(&mut rng);
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    Ok(j)
}

/// Dense eigensolves are used up to this dimension.
pub const DENSE_SPECTRUM_MAX: usize = 4096;

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    /// Descending. All eigenvalues when `complete`, otherwise
    /// `[lambda_1, lambda_2, lambda_n]`.
    pub eigenvalues: Vec<f64>,
    pub complete: bool,
    pub lambda_max: f64,
    pub lambda_2: f64,
    pub lambda_min: f64,
    /// `lambda_1 - lambda_n`.
    pub spectral_width: f64,
    /// `lambda_2 - lambda_n`.
    pub second_width: f64,
    /// Unit top eigenvector.
    pub top_vector: Vec<f64>,
    pub top_vector_max_abs: f64,
}

impl SpectralReport {
    fn from_parts(eigenvalues: Vec<f64>, complete: bool, top: Vec<f64>) -> Self {
        let lambda_max = eigenvalues[0];
        let lambda_2 = if eigenvalues.len() > 1 { eigenvalues[1] } else { lambda_max };
        let lambda_min = *eigenvalues.last().unwrap();
        let top_vector_max_abs = top.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        SpectralReport {
            eigenvalues,
            complete,
            lambda_max,
            lambda_2,
            lambda_min,
            spectral_width: lambda_max - lambda_min,
            second_width: lambda_2 - lambda_min,
            top_vector: top,
            top_vector_max_abs,
        }
    }
}

/// Spectrum of a symmetric matrix.
pub fn spectrum(a: &DMatrix<f64>) -> Result<SpectralReport> {
    check_symmetric(a, 1e-10)?;
    let n = a.nrows();
    if n == 0 {
        return Err(Error::arg("empty matrix"));
    }
    if n <= DENSE_SPECTRUM_MAX {
        let e = sym_eigen(a);
        let top = e.vectors.column(0).iter().copied().collect();
        return Ok(SpectralReport::from_parts(e.values, true, top));
    }
    Ok(iterative_spectrum(n, |x, y| crate::linalg::dense_matvec(a, x, y)))
}

/// Spectrum of a graph's adjacency matrix; sparse iteration above the dense cap.
pub fn graph_spectrum(g: &Graph) -> Result<SpectralReport> {
    if g.n() == 0 {
        return Err(Error::arg("empty graph"));
    }
    if g.n() <= DENSE_SPECTRUM_MAX {
        return spectrum(&g.adjacency());
    }
    Ok(iterative_spectrum(g.n(), |x, y| g.apply(x, y)))
}

fn iterative_spectrum<F: Fn(&[f64], &mut [f64])>(n: usize, apply: F) -> SpectralReport {
    let opts = LanczosOptions::default();
    let first = lanczos(n, &apply, &[], &opts);
    let second = lanczos(n, &apply, std::slice::from_ref(&first.max_vector), &opts);
    SpectralReport::from_parts(vec![first.max, second.max, first.min], false, first.max_vector)
}

/// Splitting `-beta A + shift I = -(outlier_scale/n) u u^T + J` with `J` PSD.
#[derive(Debug, Clone)]
pub struct AntiferroDecomposition {
    /// Outlier strength in the model's `-(beta/n) <u,x>^2` normalization.
    pub outlier_scale: f64,
    /// Top eigenvector rescaled to `max |u_i| = 1`, largest entry positive.
    pub u: Vec<f64>,
    pub j: DMatrix<f64>,
    /// `||J||_op = beta (max(lambda_2, 0) - min(lambda_n, 0))`.
    pub j_opnorm: f64,
    pub shift: f64,
    /// Set when `lambda_1 - lambda_2 < 1e-8`; the split is then not unique.
    pub degenerate: bool,
    pub reconstruction_error: f64,
}

pub fn decompose_antiferro(a: &DMatrix<f64>, beta: f64) -> Result<AntiferroDecomposition> {
    if !(beta >= 0.0) {
        return Err(Error::arg("beta must be >= 0"));
    }
    let rep = spectrum(a)?;
    if !rep.complete {
        return Err(Error::Capacity {
            what: "decompose_antiferro",
            n: a.nrows(),
            cap: DENSE_SPECTRUM_MAX,
        });
    }
    let n = a.nrows();
    let top = &rep.top_vector;
    let (pos, _) = top
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
    let sign = top[pos].signum();
    let inf = top[pos].abs();
    let u: Vec<f64> = top.iter().map(|x| sign * x / inf).collect();
    let lambda1 = rep.lambda_max;
    let outlier_scale = beta * lambda1 * n as f64 * inf * inf;
    let shift = beta * rep.lambda_2.max(0.0);
    let mut j = -beta * a.clone();
    for r in 0..n {
        for c in 0..n {
            j[(r, c)] += beta * lambda1 * top[r] * top[c];
        }
        j[(r, r)] += shift;
    }
    j = (&j + j.transpose()) * 0.5;
    let j_opnorm = beta * (rep.lambda_2.max(0.0) - rep.lambda_min.min(0.0));
    let mut lhs = -beta * a.clone();
    for r in 0..n {
        lhs[(r, r)] += shift;
    }
    let rank_one = DMatrix::from_fn(n, n, |r, c| -(outlier_scale / n as f64) * u[r] * u[c]);
    let reconstruction_error = opnorm(&(lhs - rank_one - &j));
    Ok(AntiferroDecomposition {
        outlier_scale,
        u,
        j,
        j_opnorm,
        shift,
        degenerate: lambda1 - rep.lambda_2 < 1e-8,
        reconstruction_error,
    })
}

/// Ensemble whose regime conditions are checked by [`regime_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleDescriptor {
    /// A given `d`-regular graph with known `lambda_2` and `lambda_n`.
    Regular { n: usize, d: usize, lambda2: f64, lambda_min: f64 },
    /// A uniformly random `d`-regular graph. `fixed_degree` selects the
    /// bounded-degree threshold `1/(8 sqrt(d-1))`.
    RandomRegular {
        n: usize,
        d: usize,
        #[serde(default)]
        fixed_degree: bool,
    },
    /// `G(n, p)`; `c` is the non-explicit constant of the threshold, default 1.
    ErdosRenyi {
        n: usize,
        p: f64,
        #[serde(default = "default_c")]
        c: f64,
    },
    /// Gaussian disorder with mean `-mu/n`.
    Sk { n: usize, mu: f64 },
    /// Interaction `beta M` for a fixed symmetric `M` with the given extreme
    /// eigenvalues; only the spectral width rule applies.
    Matrix { lambda_max: f64, lambda_min: f64 },
}

fn default_c() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeRule {
    pub rule: String,
    /// `beta` must lie strictly below this value.
    pub threshold: f64,
    /// Name of the constraint attaining the threshold, or of a failed side condition.
    pub binding: String,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub beta: f64,
    pub epsilon: f64,
    pub rules: Vec<RegimeRule>,
}

impl RegimeReport {
    pub fn all_pass(&self) -> bool {
        self.rules.iter().all(|r| r.passes)
    }

    pub fn rule(&self, name: &str) -> Option<&RegimeRule> {
        self.rules.iter().find(|r| r.rule == name)
    }
}

fn min_rule(rule: &str, beta: f64, parts: &[(&str, f64)]) -> RegimeRule {
    let (name, threshold) = parts
        .iter()
        .fold(("", f64::INFINITY), |acc, &(n, t)| if t < acc.1 { (n, t) } else { acc });
    RegimeRule {
        rule: rule.to_string(),
        threshold,
        binding: name.to_string(),
        passes: beta < threshold,
    }
}

fn width_threshold(width: f64) -> f64 {
    if width > 0.0 {
        0.5 / width
    } else {
        f64::INFINITY
    }
}

/// Evaluates every applicable threshold for `beta`; `epsilon` enters through
/// the `n^{1-epsilon}` constraints.
pub fn regime_check(desc: &EnsembleDescriptor, beta: f64, epsilon: f64) -> Result<RegimeReport> {
    if !(beta >= 0.0) {
        return Err(Error::arg("beta must be >= 0"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::arg("epsilon must lie in (0, 1)"));
    }
    let pow = |n: usize| (n as f64).powf(1.0 - epsilon);
    let mut rules = Vec::new();
    match *desc {
        EnsembleDescriptor::Regular { n, d, lambda2, lambda_min } => {
            let second = lambda2 - lambda_min;
            let t = if second > 0.0 { 1.0 / (2.0 * second) } else { f64::INFINITY };
            rules.push(min_rule(
                "regular_graph",
                beta,
                &[("second_width", t), ("outlier_strength", pow(n) / d as f64)],
            ));
            rules.push(min_rule(
                "spectral_width",
                beta,
                &[("spectral_width", width_threshold(d as f64 - lambda_min))],
            ));
        }
        EnsembleDescriptor::RandomRegular { n, d, fixed_degree } => {
            if fixed_degree {
                let t = if d > 1 { 1.0 / (8.0 * ((d - 1) as f64).sqrt()) } else { f64::INFINITY };
                rules.push(min_rule("random_regular", beta, &[("fixed_degree", t)]));
            } else {
                let df = d as f64;
                let spread = (df * (1.0 - df / n as f64)).sqrt();
                rules.push(min_rule(
                    "random_regular",
                    beta,
                    &[("spectral_bound", 1.0 / (8.0 * spread)), ("outlier_strength", pow(n) / df)],
                ));
            }
        }
        EnsembleDescriptor::ErdosRenyi { n, p, c } => {
            let np = n as f64 * p;
            rules.push(min_rule(
                "erdos_renyi",
                beta,
                &[("spectral_bound", c / (8.0 * np.sqrt())), ("outlier_strength", pow(n) / np)],
            ));
        }
        EnsembleDescriptor::Sk { n, mu } => {
            let mut r = min_rule("sk", beta, &[("disorder", 0.125)]);
            if !(0.0..=pow(n)).contains(&mu) {
                r.passes = false;
                r.binding = "mean_range".to_string();
            }
            rules.push(r);
        }
        EnsembleDescriptor::Matrix { lambda_max, lambda_min } => {
            rules.push(min_rule(
                "spectral_width",
                beta,
                &[("spectral_width", width_threshold(lambda_max - lambda_min))],
            ));
        }
    }
    Ok(RegimeReport { beta, epsilon, rules })
}

/// Provenance header stored with an edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub n: usize,
    pub model: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

/// Text form: a `#`-prefixed JSON header line, then one `i j` pair per line
/// with `i < j`.
pub fn write_edge_list(g: &Graph, header: &GraphHeader) -> Result<String> {
    if header.n != g.n() {
        return Err(Error::Dimension {
            expected: g.n(),
            got: header.n,
        });
    }
    let mut out = String::new();
    out.push_str("# ");
    out.push_str(&serde_json::to_string(header)?);
    out.push('\n');
    for (i, j) in g.edges() {
        writeln!(out, "{i} {j}").expect("write to string");
    }
    Ok(out)
}

pub fn read_edge_list(text: &str) -> Result<(Graph, GraphHeader)> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::arg("empty edge list"))?;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| Error::arg("edge list must start with a '#' header line"))?;
    let header: GraphHeader = serde_json::from_str(json.trim())?;
    let mut edges = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::arg(format!("bad edge on line {}", k + 2)))
        };
        let (i, j) = (parse(it.next())?, parse(it.next())?);
        if it.next().is_some() || i >= j {
            return Err(Error::arg(format!("bad edge on line {}", k + 2)));
        }
        edges.push((i, j));
    }
    Ok((Graph::from_edges(header.n, &edges)?, header))
}
