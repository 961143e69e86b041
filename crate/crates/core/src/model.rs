//! Exponential families over enumerable finite state spaces.
//!
//! A family is `p_θ(x) = c(x) exp(θ·φ(x) − Λ(θ))` with the state space listed
//! explicitly, so the log-partition function and every moment of `φ` are
//! finite sums. This module also owns the compact parameter region: an
//! axis-aligned box `[−M, M]^d` and the shrinking boundary layer that freezes
//! the learner near its faces.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Natural parameter vector.
pub type Param = DVector<f64>;

/// Largest number of visible units for which the hypercube is enumerated.
pub const MAX_VISIBLE_UNITS: usize = 12;

/// Smallest Fisher eigenvalue below which a family is treated as
/// non-identifiable.
pub const IDENTIFIABILITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FiniteExpFamily {
    states: Vec<Vec<i32>>,
    /// Row-major `|states| × dim`.
    phi: Vec<f64>,
    log_carrier: Vec<f64>,
    dim: usize,
    bound: f64,
    index: HashMap<Vec<i32>, usize>,
    flips: Option<FlipTable>,
}

/// For a binary hypercube: the state reached by forcing coordinate `j` to 1
/// or 0, stored at `s * p + j`.
#[derive(Debug, Clone)]
pub(crate) struct FlipTable {
    pub(crate) coords: usize,
    pub(crate) on: Vec<usize>,
    pub(crate) off: Vec<usize>,
}

impl FiniteExpFamily {
    pub fn new(states: Vec<Vec<i32>>, phi: Vec<Vec<f64>>, log_carrier: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Empty("state list"));
        }
        if phi.len() != states.len() {
            return Err(Error::InvalidModel(format!(
                "{} sufficient-statistic rows for {} states",
                phi.len(),
                states.len()
            )));
        }
        if log_carrier.len() != states.len() {
            return Err(Error::InvalidModel(format!(
                "{} carrier entries for {} states",
                log_carrier.len(),
                states.len()
            )));
        }
        let dim = phi[0].len();
        if dim == 0 {
            return Err(Error::InvalidModel("sufficient statistic has no components".into()));
        }
        let coords = states[0].len();
        let mut index = HashMap::with_capacity(states.len());
        for (s, x) in states.iter().enumerate() {
            if x.len() != coords {
                return Err(Error::InvalidModel(format!("state {s} has {} coordinates, expected {coords}", x.len())));
            }
            if index.insert(x.clone(), s).is_some() {
                return Err(Error::InvalidModel(format!("duplicate state {x:?}")));
            }
        }
        let mut flat = Vec::with_capacity(states.len() * dim);
        for (s, row) in phi.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidModel(format!("phi row {s} has length {}, expected {dim}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("phi row {s} is not finite")));
            }
            flat.extend_from_slice(row);
        }
        if log_carrier.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("log carrier must be finite".into()));
        }
        let bound = flat.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let flips = FlipTable::build(&states, &index);
        Ok(Self { states, phi: flat, log_carrier, dim, bound, index, flips })
    }

    /// Fully-visible Boltzmann machine on `{0,1}^p`.
    ///
    /// States are listed in lexicographic order (first coordinate most
    /// significant). The sufficient statistic walks the upper triangle of
    /// `x xᵀ` row by row, so `θ` holds `W_jj` on the diagonal slots and
    /// `2 W_jk` on the off-diagonal ones. For `p = 2` that is
    /// `(x₁², x₁x₂, x₂²)`.
    pub fn fvbm(p: usize) -> Result<Self> {
        if !(1..=MAX_VISIBLE_UNITS).contains(&p) {
            return Err(Error::VisibleUnitsOutOfRange(p));
        }
        let count = 1usize << p;
        let mut states = Vec::with_capacity(count);
        let mut phi = Vec::with_capacity(count);
        for k in 0..count {
            let x: Vec<i32> = (0..p).map(|j| ((k >> (p - 1 - j)) & 1) as i32).collect();
            let mut row = Vec::with_capacity(p * (p + 1) / 2);
            for j in 0..p {
                for l in j..p {
                    row.push(f64::from(x[j] * x[l]));
                }
            }
            states.push(x);
            phi.push(row);
        }
        Self::new(states, phi, vec![0.0; count])
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        match spec {
            ModelSpec::Named(NamedModel::Fvbm { p }) => Self::fvbm(*p),
            ModelSpec::Generic { states, phi, log_carrier } => {
                let carrier = log_carrier.clone().unwrap_or_else(|| vec![0.0; states.len()]);
                Self::new(states.clone(), phi.clone(), carrier)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<i32>] {
        &self.states
    }

    pub fn state_index(&self, x: &[i32]) -> Option<usize> {
        self.index.get(x).copied()
    }

    /// `φ(x)` for the state at index `s`.
    pub fn phi(&self, s: usize) -> &[f64] {
        &self.phi[s * self.dim..(s + 1) * self.dim]
    }

    pub fn suff_stats(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_states(), self.dim, &self.phi)
    }

    pub fn log_carrier(&self) -> &[f64] {
        &self.log_carrier
    }

    /// `C = max_j max_x |φ_j(x)|`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Number of coordinates of each state point.
    pub fn coords(&self) -> usize {
        self.states[0].len()
    }

    pub(crate) fn flips(&self) -> Option<&FlipTable> {
        self.flips.as_ref()
    }

    pub fn is_binary_hypercube(&self) -> bool {
        self.flips.is_some()
    }

    pub fn check_dim(&self, theta: &Param) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: theta.len() });
        }
        Ok(())
    }

    /// Unnormalized log-weights `log c(x) + θ·φ(x)`, one per state.
    pub fn log_weights(&self, theta: &Param) -> Result<Vec<f64>> {
        self.check_dim(theta)?;
        Ok(self
            .log_carrier
            .iter()
            .enumerate()
            .map(|(s, lc)| lc + dot(self.phi(s), theta.as_slice()))
            .collect())
    }

    pub fn log_partition(&self, theta: &Param) -> Result<f64> {
        Ok(log_sum_exp(&self.log_weights(theta)?))
    }

    pub fn probabilities(&self, theta: &Param) -> Result<DVector<f64>> {
        let w = self.log_weights(theta)?;
        let lse = log_sum_exp(&w);
        Ok(DVector::from_iterator(w.len(), w.iter().map(|v| (v - lse).exp())))
    }

    /// `E_θ[φ(X)] = ∇Λ(θ)`.
    pub fn mean_parameter(&self, theta: &Param) -> Result<DVector<f64>> {
        let p = self.probabilities(theta)?;
        Ok(self.expectation(p.as_slice()))
    }

    /// `Σ_x w(x) φ(x)` for an arbitrary weight vector over states.
    pub fn expectation(&self, weights: &[f64]) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dim);
        for (s, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (m, v) in mean.iter_mut().zip(self.phi(s)) {
                *m += w * v;
            }
        }
        mean
    }

    /// Covariance of `φ` under a probability vector over states.
    pub fn covariance(&self, weights: &[f64]) -> DMatrix<f64> {
        let mean = self.expectation(weights);
        let d = self.dim;
        let mut cov = DMatrix::zeros(d, d);
        for (s, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let row = self.phi(s);
            for a in 0..d {
                let da = row[a] - mean[a];
                for b in a..d {
                    cov[(a, b)] += w * da * (row[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[(a, b)] = cov[(b, a)];
            }
        }
        cov
    }

    /// `∇²Λ(θ) = Cov_θ[φ(X)]` with its smallest eigenvalue.
    pub fn fisher_info(&self, theta: &Param) -> Result<FisherInfo> {
        let p = self.probabilities(theta)?;
        let matrix = self.covariance(p.as_slice());
        let min_eigenvalue = min_symmetric_eigenvalue(&matrix);
        Ok(FisherInfo { matrix, min_eigenvalue })
    }

    /// Probes the smallest Fisher eigenvalue at `probes` uniform points of
    /// the box and reports whether the sufficient statistics look linearly
    /// dependent.
    pub fn assess_identifiability(&self, bx: &ParamBox, probes: usize, key: StreamKey) -> Result<Identifiability> {
        let mut rng = key.rng(0, 0);
        let mut worst = f64::INFINITY;
        for _ in 0..probes {
            let theta = bx.sample_uniform(&mut rng);
            worst = worst.min(self.fisher_info(&theta)?.min_eigenvalue);
        }
        Ok(Identifiability { probes, min_eigenvalue: worst, degenerate: worst < IDENTIFIABILITY_TOLERANCE })
    }
}

impl FlipTable {
    fn build(states: &[Vec<i32>], index: &HashMap<Vec<i32>, usize>) -> Option<Self> {
        let coords = states[0].len();
        if coords == 0 || coords > MAX_VISIBLE_UNITS || states.len() != 1 << coords {
            return None;
        }
        if states.iter().flatten().any(|v| *v != 0 && *v != 1) {
            return None;
        }
        let mut on = Vec::with_capacity(states.len() * coords);
        let mut off = Vec::with_capacity(states.len() * coords);
        let mut y = vec![0; coords];
        for x in states {
            for j in 0..coords {
                y.copy_from_slice(x);
                y[j] = 1;
                on.push(*index.get(&y)?);
                y[j] = 0;
                off.push(*index.get(&y)?);
            }
        }
        Some(Self { coords, on, off })
    }
}

#[derive(Debug, Clone)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

impl FisherInfo {
    pub fn violates_identifiability(&self) -> bool {
        self.min_eigenvalue < IDENTIFIABILITY_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Identifiability {
    pub probes: usize,
    pub min_eigenvalue: f64,
    pub degenerate: bool,
}

/// Model document accepted on disk: `{"type":"fvbm","p":2}` or an explicit
/// `{"states":[..],"phi":[[..]],"log_carrier":[..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Named(NamedModel),
    Generic {
        states: Vec<Vec<i32>>,
        phi: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        log_carrier: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NamedModel {
    Fvbm { p: usize },
}

/// The compact parameter region `[−M, M]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub half_width: f64,
    pub dim: usize,
}

impl ParamBox {
    pub fn new(half_width: f64, dim: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Config(format!("box half-width must be positive, got {half_width}")));
        }
        if dim == 0 {
            return Err(Error::Config("box dimension must be positive".into()));
        }
        Ok(Self { half_width, dim })
    }

    pub fn contains(&self, theta: &Param) -> bool {
        theta.len() == self.dim && theta.iter().all(|v| v.abs() <= self.half_width)
    }

    /// Strict interior test used for the true parameter.
    pub fn contains_interior(&self, theta: &Param) -> bool {
        theta.len() == self.dim && theta.iter().all(|v| v.abs() < self.half_width)
    }

    /// Euclidean distance to the nearest face; for a box this is the
    /// smallest per-coordinate gap.
    pub fn boundary_distance(&self, theta: &Param) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: theta.len() });
        }
        if !self.contains(theta) {
            return Err(Error::OutsideBox(theta.iter().copied().collect()));
        }
        Ok(theta
            .iter()
            .map(|v| (self.half_width - v).min(v + self.half_width))
            .fold(f64::INFINITY, f64::min))
    }

    /// Membership in `∂Θ_t`: within `2 η_t √d C` of the boundary.
    pub fn in_boundary_layer(&self, theta: &Param, eta: f64, bound: f64) -> Result<bool> {
        boundary_layer_contains(self, theta, eta, bound, self.dim)
    }

    /// `max ‖θ − θ'‖` over the box.
    pub fn diameter(&self) -> f64 {
        2.0 * self.half_width * (self.dim as f64).sqrt()
    }

    /// Largest distance from `point` to any point of the box.
    pub fn max_distance_from(&self, point: &Param) -> f64 {
        point
            .iter()
            .map(|v| {
                let far = self.half_width + v.abs();
                far * far
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn clip(&self, theta: &Param) -> Param {
        theta.map(|v| v.clamp(-self.half_width, self.half_width))
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Param {
        DVector::from_fn(self.dim, |_, _| rng.random_range(-self.half_width..=self.half_width))
    }
}

pub fn boundary_layer_contains(bx: &ParamBox, theta: &Param, eta: f64, bound: f64, dim: usize) -> Result<bool> {
    let dist = bx.boundary_distance(theta)?;
    Ok(dist <= 2.0 * eta * (dim as f64).sqrt() * bound)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}
