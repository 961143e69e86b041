//! Exact and statistical checks of the bounds that drive convergence: the
//! bias of `g_cd`, the quadratic drift of `h(θ) = ‖θ − θ̂_n‖`, the two
//! super-martingales, the occupancy of `∂Θ_t ∪ B`, and the `δ_n` rate.
//!
//! Conditional expectations given `θ_t` are computed exactly from `K_θ^m`
//! rows. The `n` chains are conditionally independent, so
//!
//! ```text
//! E[h²(θ_{t+1}) | θ_t] = ‖θ_t + η_t ḡ − θ̂‖² + η_t² tr Cov[g_cd | θ_t]
//! ```
//!
//! with `ḡ = E[g_cd | θ_t]` and `Cov[g_cd | θ_t] = n⁻² Σ_i Cov_{k^m(x_i,·)}[φ]`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{build_gibbs_random_scan, kernel_power};
use crate::learner::{state_frequencies, tail_start, CdData, Trajectory};
use crate::model::{FiniteExpFamily, Param, ParamBox};
use crate::oracle::{CheckedSample, TheoryConstants};

/// Tolerance for "≤ 0" and "≥ 0" verdicts on exact quantities.
pub const EXACT_TOLERANCE: f64 = 1e-10;
/// Absolute tolerance on finite-run surrogates of limits.
pub const LIMIT_TOLERANCE: f64 = 0.05;
/// A fitted slope above this counts as "not converging".
pub const CONVERGENCE_SLOPE: f64 = -0.05;

/// Exact conditional moments of `g_cd` for a fixed sample.
#[derive(Debug, Clone)]
pub struct ExactCd<'a> {
    fam: &'a FiniteExpFamily,
    freq: Vec<f64>,
    empirical_mean: DVector<f64>,
    n: usize,
    m: usize,
}

/// First two moments of `g_cd(θ)` given `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdMoments {
    pub mean: DVector<f64>,
    pub cov_trace: f64,
}

impl<'a> ExactCd<'a> {
    pub fn new(fam: &'a FiniteExpFamily, data: &CdData, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::NonPositivePower);
        }
        Ok(Self {
            fam,
            freq: state_frequencies(fam.num_states(), data.items()),
            empirical_mean: data.empirical_mean().clone(),
            n: data.len(),
            m,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn moments(&self, theta: &Param) -> Result<CdMoments> {
        let km = kernel_power(&build_gibbs_random_scan(self.fam, theta)?, self.m)?;
        let d = self.fam.dim();
        let mut chain_mean = DVector::zeros(d);
        let mut trace = 0.0;
        for (s, &w) in self.freq.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row: Vec<f64> = km.probs.row(s).iter().copied().collect();
            let e = self.fam.expectation(&row);
            let second: f64 = row
                .iter()
                .enumerate()
                .map(|(y, p)| p * self.fam.phi(y).iter().map(|v| v * v).sum::<f64>())
                .sum();
            trace += w * (second - e.norm_squared());
            chain_mean += e * w;
        }
        Ok(CdMoments { mean: &self.empirical_mean - chain_mean, cov_trace: trace / self.n as f64 })
    }

    /// `E[h²(θ_{t+1}) | θ_t]` for the guarded update.
    pub fn expected_h2_next(&self, theta: &Param, eta: f64, theta_hat: &Param, frozen: bool) -> Result<f64> {
        if frozen {
            return Ok((theta - theta_hat).norm_squared());
        }
        let mom = self.moments(theta)?;
        Ok((theta + &mom.mean * eta - theta_hat).norm_squared() + eta * eta * mom.cov_trace)
    }
}

/// `E[g_cd(θ) | data]` from exact `K_θ^m` rows.
pub fn exact_expected_cd_gradient(fam: &FiniteExpFamily, theta: &Param, data: &CdData, m: usize) -> Result<DVector<f64>> {
    Ok(ExactCd::new(fam, data, m)?.moments(theta)?.mean)
}

/// Pass/fail summary of a per-step check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub steps: usize,
    pub violations: usize,
    /// `None` when no step was checked.
    pub worst_slack: Option<f64>,
}

impl Verdict {
    pub fn from_slacks(check: &str, slacks: impl IntoIterator<Item = f64>, tolerance: f64) -> Self {
        let (mut steps, mut violations, mut worst) = (0, 0, None::<f64>);
        for s in slacks {
            steps += 1;
            if s < -tolerance {
                violations += 1;
            }
            worst = Some(worst.map_or(s, |w| w.min(s)));
        }
        Self { check: check.to_string(), steps, violations, worst_slack: worst }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCheck {
    pub bias_norm: f64,
    pub bound: f64,
    pub slack: f64,
}

/// `‖E[g_cd − g | θ]‖ ≤ b_{n,m} + √d C L α^m ‖θ − θ̂_n‖`, evaluated exactly.
/// Refuses unless the sample passed both constraints.
pub fn check_bias_bound(
    fam: &FiniteExpFamily,
    theta: &Param,
    sample: &CheckedSample,
    constants: &TheoryConstants,
) -> Result<BiasCheck> {
    require_constraints(sample)?;
    let exact = ExactCd::new(fam, &sample.sample.data, constants.m)?;
    bias_with(&exact, fam, theta, sample, constants)
}

fn bias_with(
    exact: &ExactCd<'_>,
    fam: &FiniteExpFamily,
    theta: &Param,
    sample: &CheckedSample,
    constants: &TheoryConstants,
) -> Result<BiasCheck> {
    let cd_mean = exact.moments(theta)?.mean;
    let g = sample.sample.data.empirical_mean() - fam.mean_parameter(theta)?;
    let bias_norm = (cd_mean - g).norm();
    let bound = constants.b_nm + constants.mixing_term * (theta - &sample.mle.theta).norm();
    Ok(BiasCheck { bias_norm, bound, slack: bound - bias_norm })
}

/// [`check_bias_bound`] at every point of `points`.
pub fn bias_sweep(
    fam: &FiniteExpFamily,
    points: &[Param],
    sample: &CheckedSample,
    constants: &TheoryConstants,
) -> Result<Vec<BiasCheck>> {
    require_constraints(sample)?;
    let exact = ExactCd::new(fam, &sample.sample.data, constants.m)?;
    points.par_iter().map(|th| bias_with(&exact, fam, th, sample, constants)).collect()
}

fn require_constraints(sample: &CheckedSample) -> Result<()> {
    if sample.constraints_pass() {
        Ok(())
    } else {
        Err(Error::HypothesesUnmet(format!(
            "sample fails the data constraints (MLE margin {:.4}, empirical-process margin {:.4})",
            sample.mle_check.margin, sample.process_check.margin
        )))
    }
}

/// One step of the drift inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub t: usize,
    pub h: f64,
    /// `E[h²(θ_{t+1}) | θ_t]`.
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub in_boundary: bool,
    pub in_ball: bool,
}

/// Everything needed to evaluate per-step checks along one trajectory.
#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub exact: ExactCd<'a>,
    pub theta_hat: Param,
    pub constants: &'a TheoryConstants,
}

impl<'a> StepContext<'a> {
    pub fn new(fam: &'a FiniteExpFamily, data: &CdData, theta_hat: Param, constants: &'a TheoryConstants) -> Result<Self> {
        Ok(Self { exact: ExactCd::new(fam, data, constants.m)?, theta_hat, constants })
    }

    fn in_ball(&self, h: f64) -> bool {
        self.constants.ball_radius.is_some_and(|r| h <= r)
    }

    fn noise_term(&self, eta: f64) -> f64 {
        let c = self.constants;
        4.0 * c.model.d as f64 * eta * eta * c.model.c * c.model.c
    }
}

/// `E[h²(θ_{t+1})|θ_t] ≤ h² − 2η_t[a_m h² − b_{n,m} h]𝕀(θ_t ∉ ∂Θ_t) + 4dη_t²C²`.
pub fn check_drift(ctx: &StepContext<'_>, t: usize, theta: &Param, eta: f64, frozen: bool) -> Result<DriftRow> {
    let c = ctx.constants;
    let h = (theta - &ctx.theta_hat).norm();
    let lhs = ctx.exact.expected_h2_next(theta, eta, &ctx.theta_hat, frozen)?;
    let pull = if frozen { 0.0 } else { 2.0 * eta * (c.a_m * h * h - c.b_nm * h) };
    let rhs = h * h - pull + ctx.noise_term(eta);
    Ok(DriftRow { t, h, lhs, rhs, slack: rhs - lhs, in_boundary: frozen, in_ball: ctx.in_ball(h) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
    pub verdict: Verdict,
}

/// [`check_drift`] at every update `t < T` of a trajectory.
pub fn drift_report(ctx: &StepContext<'_>, traj: &Trajectory) -> Result<DriftReport> {
    let rows: Vec<DriftRow> = (0..traj.horizon())
        .into_par_iter()
        .map(|t| check_drift(ctx, t, &traj.thetas[t], traj.etas[t], traj.boundary_hits[t]))
        .collect::<Result<_>>()?;
    let verdict = Verdict::from_slacks("drift", rows.iter().map(|r| r.slack), EXACT_TOLERANCE);
    Ok(DriftReport { rows, verdict })
}

/// Increments of the two super-martingales at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleRow {
    pub t: usize,
    pub eta: f64,
    pub h: f64,
    pub h_next: f64,
    pub in_boundary: bool,
    pub in_ball: bool,
    /// `Y_{t+1}`, active when `θ_t ∉ ∂Θ_t ∪ B`.
    pub y: f64,
    pub y_active: bool,
    pub y_cond_mean: f64,
    /// `Z_{t+1}`, active when `θ_t ∈ ∂Θ_t ∪ B`.
    pub z: f64,
    pub z_active: bool,
    pub z_cond_mean: f64,
    /// `Σ_{s≤t} Y_{s+1}𝕀(·) / Σ_{s≤t} η_s`.
    pub y_normalized_sum: f64,
    pub z_normalized_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub rows: Vec<MartingaleRow>,
    /// Conditional means of active `Y𝕀` increments must be `≤ 0`.
    pub y_verdict: Verdict,
    pub z_verdict: Verdict,
    /// Largest `|increment 𝕀| / η_t` seen along the run.
    pub h_observed: f64,
    /// Analytic bound on the same ratio over the whole box.
    pub h_analytic: f64,
    /// Maxima of the normalized partial sums over the tail window.
    pub y_tail_max: f64,
    pub z_tail_max: f64,
    pub tail_start: usize,
}

impl MartingaleReport {
    pub fn partial_sums_pass(&self, epsilon: f64) -> bool {
        self.y_tail_max <= epsilon && self.z_tail_max <= epsilon
    }
}

/// `Y` and `Z` along a trajectory, with their exact conditional means.
pub fn martingale_increments(
    ctx: &StepContext<'_>,
    traj: &Trajectory,
    bx: &ParamBox,
    tail_fraction: f64,
) -> Result<MartingaleReport> {
    let c = ctx.constants;
    c.require_hypotheses()?;
    let (beta, b, a) = (c.beta, c.b_nm, c.a_m);
    let y_shift = 2.0 * beta * (beta - 1.0) * b * b / a;
    let z_shift = b * b / (2.0 * a);
    let horizon = traj.horizon();
    let h: Vec<f64> = traj.thetas.iter().map(|th| (th - &ctx.theta_hat).norm()).collect();
    let expected: Vec<f64> = (0..horizon)
        .into_par_iter()
        .map(|t| ctx.exact.expected_h2_next(&traj.thetas[t], traj.etas[t], &ctx.theta_hat, traj.boundary_hits[t]))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(horizon);
    let (mut ys, mut zs, mut eta_sum) = (0.0, 0.0, 0.0);
    let mut h_observed = 0.0_f64;
    for t in 0..horizon {
        let eta = traj.etas[t];
        let frozen = traj.boundary_hits[t];
        let in_ball = ctx.in_ball(h[t]);
        let noise = ctx.noise_term(eta);
        let dh2 = h[t + 1] * h[t + 1] - h[t] * h[t];
        let edh2 = expected[t] - h[t] * h[t];
        let y = dh2 + eta * y_shift - noise;
        let z = dh2 - eta * z_shift - noise;
        let z_active = frozen || in_ball;
        let y_active = !z_active;
        if y_active {
            ys += y;
        } else {
            zs += z;
        }
        eta_sum += eta;
        if eta > 0.0 {
            h_observed = h_observed.max(if y_active { y.abs() } else { z.abs() } / eta);
        }
        rows.push(MartingaleRow {
            t,
            eta,
            h: h[t],
            h_next: h[t + 1],
            in_boundary: frozen,
            in_ball,
            y,
            y_active,
            y_cond_mean: edh2 + eta * y_shift - noise,
            z,
            z_active,
            z_cond_mean: edh2 - eta * z_shift - noise,
            y_normalized_sum: ys / eta_sum,
            z_normalized_sum: zs / eta_sum,
        });
    }
    // signs are checked as slack = −E[·𝕀 | θ_t]
    let y_verdict = Verdict::from_slacks(
        "supermartingale_y",
        rows.iter().filter(|r| r.y_active).map(|r| -r.y_cond_mean),
        EXACT_TOLERANCE,
    );
    let z_verdict = Verdict::from_slacks(
        "supermartingale_z",
        rows.iter().filter(|r| r.z_active).map(|r| -r.z_cond_mean),
        EXACT_TOLERANCE,
    );

    let (d, cc) = (c.model.d as f64, c.model.c);
    let eta_max = traj.etas.iter().copied().fold(0.0, f64::max);
    let reach = bx.max_distance_from(&ctx.theta_hat);
    let step_part = 4.0 * d.sqrt() * cc * reach + 8.0 * d * cc * cc * eta_max;
    let h_analytic = step_part + y_shift.max(z_shift);

    let start = tail_start(horizon, tail_fraction).min(horizon.saturating_sub(1));
    let tail = &rows[start..];
    let y_tail_max = tail.iter().map(|r| r.y_normalized_sum).fold(f64::NEG_INFINITY, f64::max);
    let z_tail_max = tail.iter().map(|r| r.z_normalized_sum).fold(f64::NEG_INFINITY, f64::max);
    Ok(MartingaleReport { rows, y_verdict, z_verdict, h_observed, h_analytic, y_tail_max, z_tail_max, tail_start: start })
}

/// `4β(β−1) / (4β(β−1) + 1)`.
pub fn occupancy_threshold(beta: f64) -> f64 {
    let q = 4.0 * beta * (beta - 1.0);
    q / (q + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    /// `Σ η_s 𝕀(θ_s ∈ ∂Θ_s ∪ B) / Σ η_s` over the whole run.
    pub full: f64,
    /// Minimum of the prefix fractions over the tail window.
    pub tail_min: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// η-weighted time spent in `∂Θ_t ∪ B`.
pub fn occupancy_fraction(
    traj: &Trajectory,
    theta_hat: &Param,
    constants: &TheoryConstants,
    tail_fraction: f64,
) -> Result<Occupancy> {
    constants.require_hypotheses()?;
    let radius = constants.ball_radius.expect("radius exists when a_m > 0");
    let horizon = traj.horizon();
    if horizon == 0 {
        return Err(Error::Empty("trajectory has no updates"));
    }
    let start = tail_start(horizon, tail_fraction);
    let (mut num, mut den) = (0.0, 0.0);
    let mut tail_min = f64::INFINITY;
    for t in 0..=horizon {
        let inside = traj.boundary_hits[t] || (&traj.thetas[t] - theta_hat).norm() <= radius;
        den += traj.etas[t];
        if inside {
            num += traj.etas[t];
        }
        if t >= start {
            tail_min = tail_min.min(num / den);
        }
    }
    let threshold = occupancy_threshold(constants.beta);
    Ok(Occupancy { full: num / den, tail_min, threshold, pass: tail_min >= threshold - LIMIT_TOLERANCE })
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// `δ_n` replicates at one sample size, with the rate bound when defined.
#[derive(Debug, Clone, PartialEq)]
pub struct RateInput {
    pub n: usize,
    pub deltas: Vec<f64>,
    /// `K_m n^{−(1−2γ)/3}`, absent when `a_m ≤ 0`.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub bound: Option<f64>,
    pub coverage: Option<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<RatePoint>,
    pub converging: bool,
}

pub const MIN_RATE_SIZES: usize = 3;
pub const MIN_RATE_REPLICATES: usize = 10;

/// Least-squares fit of `log median δ_n` against `log n`.
pub fn rate_fit(inputs: &[RateInput]) -> Result<RateFit> {
    let mut sizes: Vec<usize> = inputs.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < MIN_RATE_SIZES || sizes.len() != inputs.len() {
        return Err(Error::Config(format!(
            "rate fit needs at least {MIN_RATE_SIZES} distinct sample sizes, one entry each"
        )));
    }
    if let Some(r) = inputs.iter().find(|r| r.deltas.len() < MIN_RATE_REPLICATES) {
        return Err(Error::Config(format!(
            "rate fit needs at least {MIN_RATE_REPLICATES} replicates per sample size; n = {} has {}",
            r.n,
            r.deltas.len()
        )));
    }
    let medians: Vec<f64> = inputs.iter().map(|r| median(&r.deltas)).collect();
    if medians.iter().any(|m| m.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::Degenerate("a median δ_n is zero, so its logarithm is undefined".into()));
    }
    let xs: Vec<f64> = inputs.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let points = inputs
        .iter()
        .zip(&medians)
        .zip(xs.iter().zip(&ys))
        .map(|((r, &med), (x, y))| RatePoint {
            n: r.n,
            median: med,
            q25: quantile(&r.deltas, 0.25),
            q75: quantile(&r.deltas, 0.75),
            bound: r.bound,
            coverage: r
                .bound
                .map(|b| r.deltas.iter().filter(|d| **d < b).count() as f64 / r.deltas.len() as f64),
            residual: y - (intercept + slope * x),
        })
        .collect();
    Ok(RateFit { slope, intercept, points, converging: slope < CONVERGENCE_SLOPE })
}
