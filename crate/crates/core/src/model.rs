//! Spin configurations, the outlier Ising measure and single-site Glauber updates.
//!
//! The measure on `{-1,+1}^n` has unnormalized log-weight
//!
//! ```text
//! -(beta/n) <u,x>^2 + <x,Jx> + <h,x>
//! ```
//!
//! where `u` is the direction of the negative rank-one outlier.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::sigmoid;

/// A point of the hypercube `{-1,+1}^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct SpinConfig(Vec<i8>);

impl TryFrom<Vec<i8>> for SpinConfig {
    type Error = Error;

    fn try_from(v: Vec<i8>) -> Result<Self> {
        SpinConfig::new(v)
    }
}

impl From<SpinConfig> for Vec<i8> {
    fn from(x: SpinConfig) -> Self {
        x.0
    }
}

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(pos) = spins.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::arg(format!(
                "spin {pos} is {}, expected -1 or +1",
                spins[pos]
            )));
        }
        Ok(SpinConfig(spins))
    }

    /// Constant configuration; `sign` must be +1 or -1.
    pub fn constant(n: usize, sign: i8) -> Result<Self> {
        SpinConfig::new(vec![sign; n])
    }

    /// Decodes the low `n` bits of `bits`: bit `i` set means `x_i = +1`.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        debug_assert!(n <= 64);
        SpinConfig((0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn to_bits(&self) -> u64 {
        debug_assert!(self.0.len() <= 64);
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &s)| if s == 1 { acc | 1 << i } else { acc })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        SpinConfig((0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        f64::from(self.0[i])
    }

    pub fn set(&mut self, i: usize, up: bool) {
        self.0[i] = if up { 1 } else { -1 };
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut y = self.clone();
        y.flip(i);
        y
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.0.len(), self.0.iter().map(|&s| f64::from(s)))
    }

    pub fn sum(&self) -> i64 {
        self.0.iter().map(|&s| i64::from(s)).sum()
    }

    pub fn hamming(&self, other: &SpinConfig) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// `<u,x>/n`.
pub fn magnetization(u: &[f64], x: &SpinConfig) -> Result<f64> {
    check_dim(u.len(), x.len())?;
    if u.is_empty() {
        return Ok(0.0);
    }
    Ok(dot_spins(u, x) / u.len() as f64)
}

#[inline]
pub(crate) fn dot_spins(v: &[f64], x: &SpinConfig) -> f64 {
    v.iter().zip(x.spins()).map(|(a, &s)| a * f64::from(s)).sum()
}

const SYMMETRY_TOL: f64 = 1e-12;

/// The Ising measure with a negative rank-one outlier. Immutable after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    n: usize,
    beta: f64,
    u: Vec<f64>,
    j: DMatrix<f64>,
    h: Vec<f64>,
    j_is_zero: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRecord {
    n: usize,
    beta: f64,
    u: Vec<f64>,
    #[serde(rename = "J")]
    j: Vec<Vec<f64>>,
    h: Vec<f64>,
}

impl IsingModel {
    pub fn new(beta: f64, u: Vec<f64>, j: DMatrix<f64>, h: Vec<f64>) -> Result<Self> {
        let n = u.len();
        if n == 0 {
            return Err(Error::arg("model dimension must be positive"));
        }
        check_dim(n, h.len())?;
        check_dim(n, j.nrows())?;
        check_dim(n, j.ncols())?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::arg(format!("beta must be finite and >= 0, got {beta}")));
        }
        if let Some(i) = u.iter().position(|x| !(x.abs() <= 1.0)) {
            return Err(Error::arg(format!("|u_{i}| = {} exceeds 1", u[i].abs())));
        }
        if h.iter().chain(j.iter()).any(|x| !x.is_finite()) {
            return Err(Error::arg("J and h must be finite"));
        }
        crate::linalg::check_symmetric(&j, SYMMETRY_TOL)?;
        let j_is_zero = j.iter().all(|&x| x == 0.0);
        Ok(IsingModel {
            n,
            beta,
            u,
            j,
            h,
            j_is_zero,
        })
    }

    /// Pure outlier model, `J = 0`.
    pub fn outlier(beta: f64, u: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        let n = u.len();
        IsingModel::new(beta, u, DMatrix::zeros(n, n), h)
    }

    /// Plain Ising model `exp(<x,Jx> + <h,x>)` without an outlier.
    pub fn ising(j: DMatrix<f64>, h: Vec<f64>) -> Result<Self> {
        let n = h.len();
        IsingModel::new(0.0, vec![0.0; n], j, h)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn j(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// True when `J` is identically zero.
    pub fn is_outlier_only(&self) -> bool {
        self.j_is_zero
    }

    /// Same measure with `c I` added to `J`; only the normalizing constant changes.
    pub fn with_identity_shift(&self, c: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.n {
            m.j[(i, i)] += c;
        }
        m.j_is_zero = m.j.iter().all(|&x| x == 0.0);
        m
    }

    pub fn with_field(&self, h: Vec<f64>) -> Result<Self> {
        IsingModel::new(self.beta, self.u.clone(), self.j.clone(), h)
    }

    /// Unnormalized log-weight of `x`.
    pub fn energy_exponent(&self, x: &SpinConfig) -> Result<f64> {
        check_dim(self.n, x.len())?;
        let s = dot_spins(&self.u, x);
        let mut quad = 0.0;
        if !self.j_is_zero {
            for i in 0..self.n {
                let xi = x.get(i);
                let row: f64 = (0..self.n).map(|k| self.j[(i, k)] * x.get(k)).sum();
                quad += xi * row;
            }
        }
        Ok(-(self.beta / self.n as f64) * s * s + quad + dot_spins(&self.h, x))
    }

    /// `log P(x_i = +1 | rest) - log P(x_i = -1 | rest)`.
    pub fn log_odds(&self, x: &SpinConfig, i: usize) -> Result<f64> {
        check_dim(self.n, x.len())?;
        if i >= self.n {
            return Err(Error::arg(format!("site {i} out of range for n = {}", self.n)));
        }
        let s_rest = dot_spins(&self.u, x) - self.u[i] * x.get(i);
        let mut field = 0.0;
        if !self.j_is_zero {
            for k in 0..self.n {
                if k != i {
                    field += self.j[(i, k)] * x.get(k);
                }
            }
        }
        Ok(-(4.0 * self.beta / self.n as f64) * self.u[i] * s_rest + 4.0 * field + 2.0 * self.h[i])
    }

    /// Heat-bath probability that site `i` is +1 given the other coordinates of `x`.
    pub fn conditional_plus_prob(&self, x: &SpinConfig, i: usize) -> Result<f64> {
        Ok(sigmoid(self.log_odds(x, i)?))
    }

    pub fn conditional_minus_prob(&self, x: &SpinConfig, i: usize) -> Result<f64> {
        Ok(sigmoid(-self.log_odds(x, i)?))
    }

    /// One random-scan Glauber update: a uniform site is resampled from its
    /// conditional law.
    pub fn glauber_step<R: Rng + ?Sized>(&self, x: &SpinConfig, rng: &mut R) -> Result<SpinConfig> {
        let mut y = x.clone();
        self.glauber_step_in_place(&mut y, rng)?;
        Ok(y)
    }

    pub fn glauber_step_in_place<R: Rng + ?Sized>(&self, x: &mut SpinConfig, rng: &mut R) -> Result<usize> {
        let i = rng.random_range(0..self.n);
        let p = self.conditional_plus_prob(x, i)?;
        x.set(i, rng.random::<f64>() < p);
        Ok(i)
    }

    pub fn to_json(&self) -> String {
        let rec = ModelRecord {
            n: self.n,
            beta: self.beta,
            u: self.u.clone(),
            j: (0..self.n)
                .map(|r| (0..self.n).map(|c| self.j[(r, c)]).collect())
                .collect(),
            h: self.h.clone(),
        };
        serde_json::to_string(&rec).expect("model record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: ModelRecord = serde_json::from_str(s)?;
        check_dim(rec.n, rec.u.len())?;
        check_dim(rec.n, rec.j.len())?;
        for row in &rec.j {
            check_dim(rec.n, row.len())?;
        }
        let j = DMatrix::from_fn(rec.n, rec.n, |r, c| rec.j[r][c]);
        IsingModel::new(rec.beta, rec.u, j, rec.h)
    }
}
