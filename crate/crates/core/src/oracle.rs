//! Ground truth: exact sampling from `p_θ*`, the MLE, the two sample
//! constraints and the constants that enter the convergence bounds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridInfo, ProductGrid};
use crate::kernel::{build_gibbs_random_scan, estimate_zeta, kernel_power, max_spectral_gap};
use crate::learner::{state_frequencies, CdData};
use crate::model::{dot, FiniteExpFamily, Param, ParamBox};
use crate::rng::{domain, StreamKey};

pub const MLE_MAX_ITERATIONS: usize = 200;
pub const MLE_RESIDUAL_TOLERANCE: f64 = 1e-10;
const MLE_STEP_TOLERANCE: f64 = 1e-8;

/// An i.i.d. sample from `p_θ*`.
#[derive(Debug, Clone)]
pub struct DataSample {
    pub data: CdData,
    pub theta_star: Param,
    pub seed: u64,
}

impl DataSample {
    pub fn n(&self) -> usize {
        self.data.len()
    }
}

/// Draws `n` exact categorical samples from the enumerated `p_θ*`.
pub fn sample_iid(fam: &FiniteExpFamily, theta_star: &Param, n: usize, seed: u64) -> Result<DataSample> {
    if n == 0 {
        return Err(Error::Empty("sample size"));
    }
    let probs = fam.probabilities(theta_star)?;
    let mut acc = 0.0;
    let cumulative: Vec<f64> = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    let mut rng = StreamKey::new(seed).child(domain::DATA).rng_at(0);
    let items = (0..n)
        .map(|_| crate::learner::sample_cumulative(&cumulative, rng.random::<f64>()))
        .collect();
    Ok(DataSample { data: CdData::new(fam, items)?, theta_star: theta_star.clone(), seed })
}

/// Result of the Newton solve for `∇Λ(θ̂) = (1/n) Σ φ(X_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mle {
    /// Unclipped solution.
    pub theta: Param,
    pub in_box: bool,
    pub residual: f64,
    pub iterations: usize,
    clipped: Param,
}

impl Mle {
    /// `θ̂` projected onto the box; equals `theta` when `in_box`.
    pub fn clipped(&self) -> &Param {
        &self.clipped
    }
}

/// Damped Newton ascent on the concave log-likelihood `θ·μ̂ − Λ(θ)` with
/// Armijo backtracking.
pub fn mle(fam: &FiniteExpFamily, data: &CdData, bx: &ParamBox) -> Result<Mle> {
    mle_from_mean(fam, data.empirical_mean(), bx)
}

pub fn mle_from_mean(fam: &FiniteExpFamily, target: &DVector<f64>, bx: &ParamBox) -> Result<Mle> {
    let d = fam.dim();
    if target.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.len() });
    }
    let neg_ll = |theta: &Param| -> Result<f64> { Ok(fam.log_partition(theta)? - dot(theta.as_slice(), target.as_slice())) };
    let mut theta = DVector::zeros(d);
    let mut value = neg_ll(&theta)?;
    for iteration in 0..MLE_MAX_ITERATIONS {
        let probs = fam.probabilities(&theta)?;
        let grad = target - fam.expectation(probs.as_slice());
        let residual = grad.norm();
        let hessian = fam.covariance(probs.as_slice());
        let step = solve_spd(hessian, &grad)?;
        if residual < MLE_RESIDUAL_TOLERANCE && step.norm() < MLE_STEP_TOLERANCE {
            let clipped = bx.clip(&theta);
            return Ok(Mle { in_box: bx.contains(&theta), theta, residual, iterations: iteration, clipped });
        }
        let slope = grad.dot(&step);
        // Below this the predicted decrease is lost in the rounding of the
        // objective, so Armijo cannot discriminate and the full Newton step is
        // judged by the gradient instead.
        let resolution = 16.0 * f64::EPSILON * value.abs().max(1.0);
        if slope < resolution {
            let candidate = &theta + &step;
            let next_residual = (target - fam.mean_parameter(&candidate)?).norm();
            if next_residual < residual {
                value = neg_ll(&candidate)?;
                theta = candidate;
            }
            continue;
        }
        let mut t = 1.0;
        loop {
            let candidate = &theta + &step * t;
            let next = neg_ll(&candidate)?;
            if next <= value - 1e-4 * t * slope || t < 1e-12 {
                if next <= value {
                    theta = candidate;
                    value = next;
                }
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::MleNonExistent(format!(
        "Newton did not converge in {MLE_MAX_ITERATIONS} iterations; the empirical mean is on or near the boundary of the mean-parameter space"
    )))
}

fn solve_spd(matrix: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = matrix.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    matrix
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Degenerate("Fisher information is singular; statistics are not identifiable".into()))
}

/// Verdict on one inequality, with `margin = bound − observed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub pass: bool,
    pub margin: f64,
}

/// `√n ‖θ̂_n − θ*‖ < n^γ`.
pub fn check_constraint_mle(mle: &Mle, n: usize, theta_star: &Param, gamma: f64) -> ConstraintCheck {
    let n = n as f64;
    let margin = n.powf(gamma) - n.sqrt() * (&mle.theta - theta_star).norm();
    ConstraintCheck { pass: margin > 0.0, margin }
}

/// Worst grid point of the empirical-process constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalProcessCheck {
    pub pass: bool,
    pub margin: f64,
    pub sup_deviation: f64,
    pub worst_theta: Vec<f64>,
    pub grid: GridInfo,
}

/// `√n ‖(1/n) Σ_i E[φ | k_θ^m(X_i,·)] − E_{p_θ*}[E[φ | k_θ^m(X,·)]]‖` at
/// one `θ`, from exact `K^m` rows.
pub fn empirical_process_deviation(
    fam: &FiniteExpFamily,
    data: &CdData,
    p_star: &DVector<f64>,
    theta: &Param,
    m: usize,
) -> Result<f64> {
    let km = kernel_power(&build_gibbs_random_scan(fam, theta)?, m)?;
    let freq = state_frequencies(fam.num_states(), data.items());
    let diff = DVector::from_iterator(freq.len(), freq.iter().zip(p_star.iter()).map(|(f, p)| f - p));
    let mixed = km.probs.transpose() * diff;
    let dev = fam.expectation(mixed.as_slice());
    Ok((data.len() as f64).sqrt() * dev.norm())
}

/// `sup_θ` of [`empirical_process_deviation`] over the grid, compared to
/// `n^γ`.
pub fn check_constraint_empirical_process(
    fam: &FiniteExpFamily,
    data: &CdData,
    theta_star: &Param,
    m: usize,
    gamma: f64,
    grid: &ProductGrid,
) -> Result<EmpiricalProcessCheck> {
    if grid.is_empty() {
        return Err(Error::Empty("theta grid"));
    }
    let p_star = fam.probabilities(theta_star)?;
    let devs: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| empirical_process_deviation(fam, data, &p_star, &grid.point(i), m))
        .collect::<Result<_>>()?;
    let (worst, sup) = argmax(&devs);
    let margin = (data.len() as f64).powf(gamma) - sup;
    Ok(EmpiricalProcessCheck {
        pass: margin > 0.0,
        margin,
        sup_deviation: sup,
        worst_theta: grid.point(worst).iter().copied().collect(),
        grid: grid.info(),
    })
}

fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc })
}

/// A sample with its MLE and both constraint verdicts.
#[derive(Debug, Clone)]
pub struct CheckedSample {
    pub sample: DataSample,
    pub mle: Mle,
    pub mle_check: ConstraintCheck,
    pub process_check: EmpiricalProcessCheck,
}

impl CheckedSample {
    pub fn new(
        fam: &FiniteExpFamily,
        sample: DataSample,
        bx: &ParamBox,
        m: usize,
        gamma: f64,
        grid: &ProductGrid,
    ) -> Result<Self> {
        let mle = mle(fam, &sample.data, bx)?;
        let mle_check = check_constraint_mle(&mle, sample.n(), &sample.theta_star, gamma);
        let process_check =
            check_constraint_empirical_process(fam, &sample.data, &sample.theta_star, m, gamma, grid)?;
        Ok(Self { sample, mle, mle_check, process_check })
    }

    pub fn constraints_pass(&self) -> bool {
        self.mle_check.pass && self.process_check.pass
    }
}

/// `f(θ) = √(exp(−2Λ(θ*) + Λ(θ) + Λ(2θ* − θ)) − 1)`, whose Lipschitz
/// constant is `L`. `2θ* − θ` may leave the box; `Λ` is finite everywhere.
pub fn chi_square_root(fam: &FiniteExpFamily, theta_star: &Param, theta: &Param) -> Result<f64> {
    let reflected = theta_star * 2.0 - theta;
    let exponent = -2.0 * fam.log_partition(theta_star)? + fam.log_partition(theta)? + fam.log_partition(&reflected)?;
    Ok(exponent.exp_m1().max(0.0).sqrt())
}

/// Constants that depend on the model, box and `θ*` but not on `n`, `m`
/// or `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    #[serde(rename = "C")]
    pub c: f64,
    pub d: usize,
    pub lambda: f64,
    pub lambda_argmin: Vec<f64>,
    #[serde(rename = "L")]
    pub l: f64,
    pub alpha: f64,
    pub alpha_argmax: Vec<f64>,
    pub zeta: f64,
    pub diam: f64,
    pub grid: GridInfo,
}

impl ModelConstants {
    pub fn compute(fam: &FiniteExpFamily, bx: &ParamBox, theta_star: &Param, grid: &ProductGrid) -> Result<Self> {
        fam.check_dim(theta_star)?;
        if bx.dim != fam.dim() {
            return Err(Error::DimensionMismatch { expected: fam.dim(), got: bx.dim });
        }
        if !bx.contains_interior(theta_star) {
            return Err(Error::Config("theta_star must lie strictly inside the box".into()));
        }
        let per_point: Vec<(f64, f64)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let theta = grid.point(i);
                Ok((fam.fisher_info(&theta)?.min_eigenvalue, chi_square_root(fam, theta_star, &theta)?))
            })
            .collect::<Result<_>>()?;
        let (lambda_at, lambda) = per_point
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, (l, _))| if *l < acc.1 { (i, *l) } else { acc });
        let f: Vec<f64> = per_point.iter().map(|(_, f)| *f).collect();
        let alpha = max_spectral_gap(fam, grid)?;
        let zeta = if grid.len() >= 2 { estimate_zeta(fam, grid)?.zeta } else { 0.0 };
        Ok(Self {
            c: fam.bound(),
            d: fam.dim(),
            lambda,
            lambda_argmin: grid.point(lambda_at).iter().copied().collect(),
            l: grid.max_difference_quotient(&f),
            alpha: alpha.alpha,
            alpha_argmax: alpha.argmax,
            zeta,
            diam: bx.diameter(),
            grid: grid.info(),
        })
    }

    /// `√d C L α^m`.
    pub fn mixing_term(&self, m: usize) -> f64 {
        (self.d as f64).sqrt() * self.c * self.l * self.alpha.powi(m as i32)
    }

    /// Smallest `m ≥ 1` with `√d C L α^m < target`, if any.
    pub fn smallest_m_below(&self, target: f64) -> Option<usize> {
        if target <= 0.0 {
            return None;
        }
        let base = (self.d as f64).sqrt() * self.c * self.l;
        if base < target {
            return Some(1);
        }
        if self.alpha <= 0.0 {
            return Some(1);
        }
        if self.alpha >= 1.0 {
            return None;
        }
        // α^m < target / base  ⇔  m > ln(target/base) / ln α
        let approx = ((target / base).ln() / self.alpha.ln()).floor().max(1.0) as usize;
        (approx.saturating_sub(2).max(1)..approx + 4).find(|&m| self.mixing_term(m) < target)
    }

    /// Smallest `m` with `a_m > 0`.
    pub fn m_star(&self) -> Option<usize> {
        self.smallest_m_below(self.lambda)
    }

    pub fn theory(&self, m: usize, n: usize, gamma: f64) -> Result<TheoryConstants> {
        if m == 0 {
            return Err(Error::NonPositivePower);
        }
        if n == 0 {
            return Err(Error::Empty("sample size"));
        }
        if !(gamma > 0.0 && gamma < 0.5) {
            return Err(Error::Config(format!("gamma must lie in (0, 1/2), got {gamma}")));
        }
        let mix = self.mixing_term(m);
        let a_m = self.lambda - mix;
        let b_nm = (1.0 + mix) * (n as f64).powf(gamma - 0.5);
        let beta = (n as f64).powf((1.0 - 2.0 * gamma) / 6.0);
        let hypotheses_met = a_m > 0.0;
        Ok(TheoryConstants {
            model: self.clone(),
            m,
            n,
            gamma,
            mixing_term: mix,
            a_m,
            b_nm,
            beta,
            ball_radius: hypotheses_met.then(|| beta * b_nm / a_m),
            k_m: hypotheses_met.then(|| (1.0 + mix) / a_m + self.diam / 4.0),
            m_star: self.m_star(),
            hypotheses_met,
        })
    }
}

/// Constants for one `(m, n, γ)`. `ball_radius` and `K_m` are `None` when
/// `a_m ≤ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    #[serde(flatten)]
    pub model: ModelConstants,
    pub m: usize,
    pub n: usize,
    pub gamma: f64,
    pub mixing_term: f64,
    pub a_m: f64,
    pub b_nm: f64,
    pub beta: f64,
    pub ball_radius: Option<f64>,
    #[serde(rename = "K_m")]
    pub k_m: Option<f64>,
    pub m_star: Option<usize>,
    pub hypotheses_met: bool,
}

impl TheoryConstants {
    /// `K_m n^{−(1−2γ)/3}`.
    pub fn rate_bound(&self) -> Option<f64> {
        self.k_m.map(|k| k * (self.n as f64).powf(-(1.0 - 2.0 * self.gamma) / 3.0))
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        let mut out = self.clone();
        out.beta = beta;
        out.ball_radius = self.hypotheses_met.then(|| beta * self.b_nm / self.a_m);
        out
    }

    pub fn require_hypotheses(&self) -> Result<()> {
        if self.hypotheses_met {
            Ok(())
        } else {
            Err(Error::HypothesesUnmet(format!(
                "a_m = λ − √d C L α^m = {:.3e} ≤ 0 at m = {}{}",
                self.a_m,
                self.m,
                self.m_star.map(|s| format!("; smallest admissible m is {s}")).unwrap_or_default()
            )))
        }
    }
}

/// All constants at once.
#[allow(clippy::too_many_arguments)]
pub fn compute_constants(
    fam: &FiniteExpFamily,
    bx: &ParamBox,
    theta_star: &Param,
    m: usize,
    n: usize,
    gamma: f64,
    grid: &ProductGrid,
) -> Result<TheoryConstants> {
    ModelConstants::compute(fam, bx, theta_star, grid)?.theory(m, n, gamma)
}
