//! Random-scan Gibbs kernels as explicit transition matrices.
//!
//! A random-scan sweep picks one coordinate uniformly and resamples it from
//! its exact conditional under `p_θ`. On an enumerated hypercube the whole
//! kernel is a `|X| × |X|` row-stochastic matrix, which makes `k_θ^m`, the
//! L2 spectral gap and the kernel metric `ρ` exact linear algebra.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridInfo, ProductGrid};
use crate::model::{FiniteExpFamily, FlipTable, Param};

/// Tolerance for the reversibility precondition of [`spectral_gap`].
pub const REVERSIBILITY_TOLERANCE: f64 = 1e-10;

/// Single-site conditionals of the random-scan Gibbs sampler at one `θ`.
#[derive(Debug, Clone)]
pub struct RandomScanGibbs<'a> {
    flips: &'a FlipTable,
    /// `P(x_j = 1 | x_{−j})` at `s * p + j`.
    prob_on: Vec<f64>,
}

impl<'a> RandomScanGibbs<'a> {
    pub fn at(fam: &'a FiniteExpFamily, theta: &Param) -> Result<Self> {
        let flips = fam.flips().ok_or_else(|| {
            Error::NonBinaryStateSpace(format!("{} states of {} coordinates", fam.num_states(), fam.coords()))
        })?;
        let lw = fam.log_weights(theta)?;
        let prob_on = flips
            .on
            .iter()
            .zip(&flips.off)
            .map(|(&on, &off)| logistic(lw[on] - lw[off]))
            .collect();
        Ok(Self { flips, prob_on })
    }

    pub fn coords(&self) -> usize {
        self.flips.coords
    }

    /// One random-scan step from state index `s`.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let p = self.flips.coords;
        let j = if p == 1 { 0 } else { rng.random_range(0..p) };
        let k = s * p + j;
        if rng.random::<f64>() < self.prob_on[k] {
            self.flips.on[k]
        } else {
            self.flips.off[k]
        }
    }

    /// `m` consecutive steps.
    pub fn walk<R: Rng + ?Sized>(&self, mut s: usize, m: usize, rng: &mut R) -> usize {
        for _ in 0..m {
            s = self.step(s, rng);
        }
        s
    }

    pub fn matrix(&self, theta: &Param) -> KernelMatrix {
        let p = self.flips.coords;
        let n = self.prob_on.len() / p;
        let w = 1.0 / p as f64;
        let mut probs = DMatrix::zeros(n, n);
        for s in 0..n {
            for j in 0..p {
                let k = s * p + j;
                probs[(s, self.flips.on[k])] += w * self.prob_on[k];
                probs[(s, self.flips.off[k])] += w * (1.0 - self.prob_on[k]);
            }
        }
        KernelMatrix { theta: theta.clone(), probs }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub theta: Param,
    pub probs: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    /// Largest `|Σ_y K(x,y) − 1|`.
    pub fn row_sum_error(&self) -> f64 {
        self.probs.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.probs.min()
    }

    /// `max_y |(πᵀK)(y) − π(y)|`.
    pub fn stationarity_error(&self, pi: &DVector<f64>) -> f64 {
        let moved = self.probs.tr_mul(pi);
        (moved - pi).amax()
    }

    /// `max_{x,y} |π(x)K(x,y) − π(y)K(y,x)|`.
    pub fn reversibility_error(&self, pi: &DVector<f64>) -> f64 {
        let n = self.num_states();
        let mut worst = 0.0_f64;
        for x in 0..n {
            for y in (x + 1)..n {
                worst = worst.max((pi[x] * self.probs[(x, y)] - pi[y] * self.probs[(y, x)]).abs());
            }
        }
        worst
    }

    /// Writes the matrix as CSV, one row per source state, header of state
    /// labels.
    pub fn write_csv<W: Write>(&self, fam: &FiniteExpFamily, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let labels: Vec<String> = fam.states().iter().map(|x| state_label(x)).collect();
        let mut header = vec!["state".to_string()];
        header.extend(labels.iter().cloned());
        wtr.write_record(&header)?;
        for (s, label) in labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.probs.row(s).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn state_label(x: &[i32]) -> String {
    let inner: Vec<String> = x.iter().map(|v| v.to_string()).collect();
    format!("[{}]", inner.join(";"))
}

pub fn build_gibbs_random_scan(fam: &FiniteExpFamily, theta: &Param) -> Result<KernelMatrix> {
    Ok(RandomScanGibbs::at(fam, theta)?.matrix(theta))
}

/// Exact `K^m` by repeated squaring.
pub fn kernel_power(k: &KernelMatrix, m: usize) -> Result<KernelMatrix> {
    if m == 0 {
        return Err(Error::NonPositivePower);
    }
    let mut result: Option<DMatrix<f64>> = None;
    let mut base = k.probs.clone();
    let mut e = m;
    loop {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => r * &base,
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        base = &base * &base;
    }
    Ok(KernelMatrix { theta: k.theta.clone(), probs: result.expect("m >= 1") })
}

/// `α(θ)`: the largest absolute eigenvalue of `D^{1/2} K D^{−1/2}` once the
/// eigenvalue 1 (constant functions) is removed.
pub fn spectral_gap(fam: &FiniteExpFamily, k: &KernelMatrix) -> Result<f64> {
    let pi = fam.probabilities(&k.theta)?;
    if pi.len() != k.num_states() {
        return Err(Error::DimensionMismatch { expected: pi.len(), got: k.num_states() });
    }
    let gap = k.reversibility_error(&pi);
    if gap > REVERSIBILITY_TOLERANCE {
        return Err(Error::NotReversible(gap));
    }
    let n = pi.len();
    if n < 2 {
        return Ok(0.0);
    }
    let sq: Vec<f64> = pi.iter().map(|v| v.sqrt()).collect();
    let mut sym = DMatrix::from_fn(n, n, |x, y| sq[x] * k.probs[(x, y)] / sq[y]);
    sym = (&sym + sym.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig[1..].iter().map(|v| v.abs()).fold(0.0, f64::max))
}

/// `ρ(K₁, K₂) = max_x Σ_y |K₁(x,y) − K₂(x,y)|`.
pub fn kernel_distance(k1: &KernelMatrix, k2: &KernelMatrix) -> Result<f64> {
    if k1.probs.shape() != k2.probs.shape() {
        return Err(Error::DimensionMismatch { expected: k1.num_states(), got: k2.num_states() });
    }
    Ok((&k1.probs - &k2.probs)
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaEstimate {
    pub zeta: f64,
    pub pairs: usize,
    pub grid: GridInfo,
}

/// Lower estimate of the kernel Lipschitz constant `ζ` from axis-adjacent
/// grid pairs.
pub fn estimate_zeta(fam: &FiniteExpFamily, grid: &ProductGrid) -> Result<ZetaEstimate> {
    estimate_zeta_with(grid, |theta| build_gibbs_random_scan(fam, theta))
}

pub fn estimate_zeta_with<F>(grid: &ProductGrid, build: F) -> Result<ZetaEstimate>
where
    F: Fn(&Param) -> Result<KernelMatrix> + Sync,
{
    if grid.len() < 2 {
        return Err(Error::Empty("zeta grid needs at least two points"));
    }
    let kernels: Vec<KernelMatrix> =
        (0..grid.len()).into_par_iter().map(|i| build(&grid.point(i))).collect::<Result<_>>()?;
    let h = grid.spacing();
    let mut zeta = 0.0_f64;
    let mut pairs = 0;
    if h > 0.0 {
        for i in 0..grid.len() {
            for j in grid.forward_neighbors(i) {
                zeta = zeta.max(kernel_distance(&kernels[i], &kernels[j])? / h);
                pairs += 1;
            }
        }
    }
    Ok(ZetaEstimate { zeta, pairs, grid: grid.info() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub argmax: Vec<f64>,
    pub grid: GridInfo,
}

/// `α̂ = max_θ α(θ)` over the grid.
pub fn max_spectral_gap(fam: &FiniteExpFamily, grid: &ProductGrid) -> Result<AlphaEstimate> {
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let theta = grid.point(i);
            spectral_gap(fam, &build_gibbs_random_scan(fam, &theta)?)
        })
        .collect::<Result<_>>()?;
    let (best, alpha) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    Ok(AlphaEstimate { alpha, argmax: grid.point(best).iter().copied().collect(), grid: grid.info() })
}
