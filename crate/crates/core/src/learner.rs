//! Contrastive divergence with an annealed learning rate.
//!
//! Each iteration starts one Gibbs chain at every datum, runs it `m` steps at
//! the current `θ_t`, and moves along the difference of empirical
//! sufficient-statistic means:
//!
//! ```text
//! g_cd(θ) = (1/n) Σ φ(X_i) − (1/n) Σ φ(X_i^(m))
//! θ_{t+1} = θ_t + η_t g_cd(θ_t) · 𝕀(θ_t ∉ ∂Θ_t)
//! ```
//!
//! `‖g_cd‖ ≤ 2√d C`, so freezing the update inside the boundary layer
//! `∂Θ_t` keeps every iterate in the box. Chains are restarted from the data
//! at every iteration (plain CD, not persistent CD).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{kernel_power, RandomScanGibbs};
use crate::model::{FiniteExpFamily, Param, ParamBox};
use crate::rng::StreamKey;

/// Learning-rate schedule, indexed from `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    /// `η_t = η₀`.
    Fixed { eta0: f64 },
    /// `η_t = η₀ / (t + 1)`.
    Harmonic { eta0: f64 },
    /// `η_t = η₀ / (t + 1)^r` with `1/2 < r ≤ 1`.
    Power { eta0: f64, exponent: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let eta0 = match *self {
            Schedule::Fixed { eta0 } | Schedule::Harmonic { eta0 } => eta0,
            Schedule::Power { eta0, exponent } => {
                if !(exponent > 0.5 && exponent <= 1.0) {
                    return Err(Error::InvalidSchedule(format!(
                        "power exponent must lie in (1/2, 1], got {exponent}"
                    )));
                }
                eta0
            }
        };
        if !(eta0.is_finite() && eta0 > 0.0) {
            return Err(Error::InvalidSchedule(format!("eta0 must be positive, got {eta0}")));
        }
        Ok(())
    }

    pub fn eta(&self, t: usize) -> f64 {
        let k = (t + 1) as f64;
        match *self {
            Schedule::Fixed { eta0 } => eta0,
            Schedule::Harmonic { eta0 } => eta0 / k,
            Schedule::Power { eta0, exponent } => eta0 / k.powf(exponent),
        }
    }

    pub fn eta0(&self) -> f64 {
        match *self {
            Schedule::Fixed { eta0 } | Schedule::Harmonic { eta0 } | Schedule::Power { eta0, .. } => eta0,
        }
    }

    /// Analytic check of the learning-rate condition: `Σ η_t² < ∞` and
    /// `Σ_{s≤t} η_s / √(log t) → ∞`.
    pub fn learning_rate_condition(&self) -> ScheduleVerdict {
        let (square_summable, partial_sums_outgrow_sqrt_log) = match *self {
            Schedule::Fixed { .. } => (false, true),
            Schedule::Harmonic { .. } => (true, true),
            Schedule::Power { exponent, .. } => (exponent > 0.5, exponent <= 1.0),
        };
        let detail = match (square_summable, partial_sums_outgrow_sqrt_log) {
            (true, true) => "pass".to_string(),
            (false, true) => "fails Σ η_t² < ∞".to_string(),
            (true, false) => "fails Σ η_s / √(log t) → ∞".to_string(),
            (false, false) => "fails both conditions".to_string(),
        };
        ScheduleVerdict {
            square_summable,
            partial_sums_outgrow_sqrt_log,
            pass: square_summable && partial_sums_outgrow_sqrt_log,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleVerdict {
    pub square_summable: bool,
    pub partial_sums_outgrow_sqrt_log: bool,
    pub pass: bool,
    pub detail: String,
}

/// How `X_i^(m)` is drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Simulate `m` random-scan Gibbs steps from the datum.
    #[default]
    Path,
    /// Draw the endpoint from the exact row `k_θ^m(X_i, ·)`. Same law as
    /// `Path`, cost independent of `m`.
    ExactRow,
}

/// A data sample prepared for CD: state indices and `(1/n) Σ φ(X_i)`.
#[derive(Debug, Clone)]
pub struct CdData {
    items: Vec<usize>,
    empirical_mean: DVector<f64>,
}

impl CdData {
    pub fn new(fam: &FiniteExpFamily, items: Vec<usize>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("data sample"));
        }
        let states = fam.num_states();
        if let Some(&bad) = items.iter().find(|&&s| s >= states) {
            return Err(Error::StateIndexOutOfRange { index: bad, states });
        }
        let empirical_mean = fam.expectation(&state_frequencies(states, &items));
        Ok(Self { items, empirical_mean })
    }

    /// Builds from state points rather than indices.
    pub fn from_points(fam: &FiniteExpFamily, points: &[Vec<i32>]) -> Result<Self> {
        let items = points
            .iter()
            .map(|x| fam.state_index(x).ok_or_else(|| Error::UnknownState(x.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(fam, items)
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn empirical_mean(&self) -> &DVector<f64> {
        &self.empirical_mean
    }

    /// Number of data points at each state index.
    pub fn counts(&self, states: usize) -> Vec<usize> {
        let mut counts = vec![0; states];
        for &s in &self.items {
            counts[s] += 1;
        }
        counts
    }
}

pub(crate) fn state_frequencies(states: usize, items: &[usize]) -> Vec<f64> {
    let mut freq = vec![0.0; states];
    let w = 1.0 / items.len() as f64;
    for &s in items {
        freq[s] += w;
    }
    freq
}

/// One realization of `g_cd(θ)`. The chain for datum `i` at iteration `t`
/// draws from the stream `key.rng(t, i)`.
pub fn cd_gradient(
    fam: &FiniteExpFamily,
    theta: &Param,
    data: &CdData,
    m: usize,
    sampler: Sampler,
    key: StreamKey,
    t: u64,
) -> Result<DVector<f64>> {
    if m == 0 {
        return Err(Error::NonPositivePower);
    }
    let states = fam.num_states();
    let gibbs = RandomScanGibbs::at(fam, theta)?;
    let step_key = key.child(t);
    let mut ends = vec![0usize; states];
    match sampler {
        Sampler::Path => {
            for (i, &x) in data.items.iter().enumerate() {
                let mut rng = step_key.rng_at(i as u64);
                ends[gibbs.walk(x, m, &mut rng)] += 1;
            }
        }
        Sampler::ExactRow => {
            let km = kernel_power(&gibbs.matrix(theta), m)?;
            let cumulative: Vec<Vec<f64>> = km
                .probs
                .row_iter()
                .map(|r| {
                    let mut acc = 0.0;
                    r.iter()
                        .map(|v| {
                            acc += v;
                            acc
                        })
                        .collect()
                })
                .collect();
            for (i, &x) in data.items.iter().enumerate() {
                let mut rng = step_key.rng_at(i as u64);
                let u: f64 = rand::Rng::random(&mut rng);
                ends[sample_cumulative(&cumulative[x], u)] += 1;
            }
        }
    }
    let n = data.len() as f64;
    let model_mean = fam.expectation(&ends.iter().map(|&c| c as f64 / n).collect::<Vec<_>>());
    Ok(&data.empirical_mean - model_mean)
}

pub(crate) fn sample_cumulative(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().expect("non-empty row");
    let target = u * total;
    cumulative.iter().position(|&c| target < c).unwrap_or(cumulative.len() - 1)
}

/// Settings of one CD run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdConfig {
    pub m: usize,
    pub schedule: Schedule,
    pub param_box: ParamBox,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default)]
    pub sampler: Sampler,
    pub theta0: Vec<f64>,
}

impl CdConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        self.schedule.validate()?;
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.theta0.len() != dim || self.param_box.dim != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: self.theta0.len() });
        }
        if !self.param_box.contains(&DVector::from_column_slice(&self.theta0)) {
            return Err(Error::OutsideBox(self.theta0.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: Param,
    pub eta: f64,
    pub boundary_hit: bool,
}

/// The guarded update from `θ_t`.
#[allow(clippy::too_many_arguments)]
pub fn cd_step(
    fam: &FiniteExpFamily,
    data: &CdData,
    theta: &Param,
    t: usize,
    schedule: &Schedule,
    bx: &ParamBox,
    m: usize,
    sampler: Sampler,
    key: StreamKey,
) -> Result<StepOutcome> {
    let eta = schedule.eta(t);
    if bx.in_boundary_layer(theta, eta, fam.bound())? {
        return Ok(StepOutcome { next: theta.clone(), eta, boundary_hit: true });
    }
    let g = cd_gradient(fam, theta, data, m, sampler, key, t as u64)?;
    let next = theta + g * eta;
    if !bx.contains(&next) {
        return Err(Error::OutsideBox(next.iter().copied().collect()));
    }
    Ok(StepOutcome { next, eta, boundary_hit: false })
}

/// Record of one CD run. Entries `thetas`, `etas` and `boundary_hits` are
/// indexed by `t = 0..=T`; the flag at `T` is evaluated but never acted on.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub thetas: Vec<Param>,
    pub etas: Vec<f64>,
    pub boundary_hits: Vec<bool>,
    pub burn_in: usize,
    /// `θ̄_t` for `t = burn_in..=T`.
    pub weighted_avgs: Vec<Param>,
}

impl Trajectory {
    /// Assembles a trajectory from recorded iterates, computing the running
    /// weighted averages.
    pub fn from_parts(thetas: Vec<Param>, etas: Vec<f64>, boundary_hits: Vec<bool>, burn_in: usize) -> Result<Self> {
        if thetas.is_empty() || thetas.len() != etas.len() || thetas.len() != boundary_hits.len() {
            return Err(Error::Degenerate(format!(
                "trajectory columns disagree: {} thetas, {} etas, {} flags",
                thetas.len(),
                etas.len(),
                boundary_hits.len()
            )));
        }
        if burn_in >= thetas.len() {
            return Err(Error::Empty("weighted-average window"));
        }
        let dim = thetas[0].len();
        let mut num = DVector::zeros(dim);
        let mut den = 0.0;
        let mut weighted_avgs = Vec::with_capacity(thetas.len() - burn_in);
        for (theta, eta) in thetas.iter().zip(&etas).skip(burn_in) {
            num += theta * *eta;
            den += eta;
            weighted_avgs.push(&num / den);
        }
        Ok(Self { thetas, etas, boundary_hits, burn_in, weighted_avgs })
    }

    /// Number of updates `T`.
    pub fn horizon(&self) -> usize {
        self.thetas.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.thetas[0].len()
    }

    pub fn weighted_avg(&self, t: usize) -> Option<&Param> {
        t.checked_sub(self.burn_in).and_then(|k| self.weighted_avgs.get(k))
    }

    /// Boundary hits over updates `0..T`.
    pub fn boundary_hit_count(&self) -> usize {
        self.boundary_hits[..self.horizon()].iter().filter(|h| **h).count()
    }

    /// Boundary hits among updates in the tail window.
    pub fn tail_boundary_hits(&self, tail_fraction: f64) -> usize {
        let start = tail_start(self.horizon(), tail_fraction);
        self.boundary_hits[start..self.horizon()].iter().filter(|h| **h).count()
    }
}

/// Runs CD from `config.theta0` for `config.iterations` updates.
pub fn run_cd(fam: &FiniteExpFamily, data: &CdData, config: &CdConfig, key: StreamKey) -> Result<Trajectory> {
    config.validate(fam.dim())?;
    let bx = &config.param_box;
    let horizon = config.iterations;
    let mut thetas = Vec::with_capacity(horizon + 1);
    let mut etas = Vec::with_capacity(horizon + 1);
    let mut hits = Vec::with_capacity(horizon + 1);
    let mut theta = DVector::from_column_slice(&config.theta0);
    for t in 0..horizon {
        let step = cd_step(fam, data, &theta, t, &config.schedule, bx, config.m, config.sampler, key)?;
        thetas.push(std::mem::replace(&mut theta, step.next));
        etas.push(step.eta);
        hits.push(step.boundary_hit);
    }
    let eta = config.schedule.eta(horizon);
    hits.push(bx.in_boundary_layer(&theta, eta, fam.bound())?);
    etas.push(eta);
    thetas.push(theta);
    Trajectory::from_parts(thetas, etas, hits, config.burn_in)
}

/// `θ̄ = Σ_{s=t0}^{t} η_s θ_s / Σ_{s=t0}^{t} η_s`, summed from scratch.
pub fn weighted_average(thetas: &[Param], etas: &[f64], t0: usize, t: usize) -> Result<Param> {
    if t0 > t || t >= thetas.len() || t >= etas.len() {
        return Err(Error::Empty("weighted-average window"));
    }
    let den: f64 = etas[t0..=t].iter().sum();
    if den <= 0.0 {
        return Err(Error::Empty("weighted-average window has zero total weight"));
    }
    let mut num = DVector::zeros(thetas[t0].len());
    for s in t0..=t {
        num += &thetas[s] * etas[s];
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaN {
    /// `max ‖θ̄_t − θ*‖` over the tail window.
    pub tail_max: f64,
    /// `‖θ̄_T − θ*‖`.
    pub final_distance: f64,
    pub window_start: usize,
    pub window_end: usize,
}

/// First index of the tail window `[⌈(1 − f) T⌉, T]`.
pub fn tail_start(horizon: usize, tail_fraction: f64) -> usize {
    let tail = (tail_fraction * horizon as f64 + 1e-9).floor() as usize;
    horizon - tail.min(horizon)
}

/// Finite-horizon surrogate for `limsup_t ‖θ̄_t − θ*‖`.
pub fn delta_n(traj: &Trajectory, theta_star: &Param, tail_fraction: f64) -> Result<DeltaN> {
    delta_n_of_series(traj.burn_in, &traj.weighted_avgs, theta_star, tail_fraction)
}

/// As [`delta_n`] for a series of averages whose first entry is `θ̄_{first}`.
pub fn delta_n_of_series(first: usize, avgs: &[Param], theta_star: &Param, tail_fraction: f64) -> Result<DeltaN> {
    if avgs.is_empty() {
        return Err(Error::Empty("weighted-average series"));
    }
    let horizon = first + avgs.len() - 1;
    let window_start = tail_start(horizon, tail_fraction).max(first);
    let tail_max = avgs[window_start - first..]
        .iter()
        .map(|a| (a - theta_star).norm())
        .fold(0.0, f64::max);
    let final_distance = (avgs.last().expect("non-empty") - theta_star).norm();
    Ok(DeltaN { tail_max, final_distance, window_start, window_end: horizon })
}

/// Exact log-likelihood gradient `g(θ) = (1/n) Σ φ(X_i) − ∇Λ(θ)`.
pub fn exact_gradient(fam: &FiniteExpFamily, theta: &Param, empirical_mean: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(empirical_mean - fam.mean_parameter(theta)?)
}

/// `θ + η g(θ)` under the same boundary guard as [`cd_step`].
pub fn exact_gradient_step(
    fam: &FiniteExpFamily,
    theta: &Param,
    empirical_mean: &DVector<f64>,
    eta: f64,
    bx: &ParamBox,
) -> Result<StepOutcome> {
    if bx.in_boundary_layer(theta, eta, fam.bound())? {
        return Ok(StepOutcome { next: theta.clone(), eta, boundary_hit: true });
    }
    let next = theta + exact_gradient(fam, theta, empirical_mean)? * eta;
    Ok(StepOutcome { next, eta, boundary_hit: false })
}

/// Deterministic gradient ascent with the given schedule; returns the final
/// iterate.
pub fn run_exact_gradient(
    fam: &FiniteExpFamily,
    empirical_mean: &DVector<f64>,
    schedule: &Schedule,
    bx: &ParamBox,
    theta0: Param,
    iterations: usize,
) -> Result<Param> {
    schedule.validate()?;
    let mut theta = theta0;
    for t in 0..iterations {
        theta = exact_gradient_step(fam, &theta, empirical_mean, schedule.eta(t), bx)?.next;
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(v: &[f64]) -> Param {
        DVector::from_column_slice(v)
    }

    fn fvbm2() -> FiniteExpFamily {
        FiniteExpFamily::fvbm(2).unwrap()
    }

    #[test]
    fn schedules() {
        let h = Schedule::Harmonic { eta0: 2.0 };
        assert_eq!(h.eta(0), 2.0);
        assert_eq!(h.eta(3), 0.5);
        assert!(h.learning_rate_condition().pass);
        let f = Schedule::Fixed { eta0: 0.1 };
        assert_eq!(f.eta(1000), 0.1);
        let v = f.learning_rate_condition();
        assert!(!v.pass);
        assert_eq!(v.detail, "fails Σ η_t² < ∞");
        let p = Schedule::Power { eta0: 1.0, exponent: 0.75 };
        assert!((p.eta(15) - 16f64.powf(-0.75)).abs() < 1e-15);
        assert!(p.validate().is_ok());
        assert!(Schedule::Power { eta0: 1.0, exponent: 0.5 }.validate().is_err());
        assert!(Schedule::Power { eta0: 1.0, exponent: 1.2 }.validate().is_err());
        assert!(Schedule::Harmonic { eta0: 0.0 }.validate().is_err());
    }

    #[test]
    fn schedule_json() {
        let s: Schedule = serde_json::from_str(r#"{"kind":"power","eta0":1.0,"exponent":0.6}"#).unwrap();
        assert_eq!(s, Schedule::Power { eta0: 1.0, exponent: 0.6 });
        let back: Schedule = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn gradient_is_bounded() {
        let fam = fvbm2();
        let data = CdData::new(&fam, vec![0, 1, 2, 3, 3, 3]).unwrap();
        let cap = 2.0 * 3f64.sqrt();
        for t in 0..200 {
            for sampler in [Sampler::Path, Sampler::ExactRow] {
                let g = cd_gradient(&fam, &theta(&[1.0, -2.0, 0.5]), &data, 3, sampler, StreamKey::new(1), t).unwrap();
                assert!(g.norm() <= cap);
            }
        }
    }

    #[test]
    fn unknown_datum_rejected() {
        let fam = fvbm2();
        assert!(matches!(CdData::from_points(&fam, &[vec![0, 2]]), Err(Error::UnknownState(_))));
        assert!(matches!(CdData::new(&fam, vec![4]), Err(Error::StateIndexOutOfRange { .. })));
        assert!(matches!(CdData::new(&fam, vec![]), Err(Error::Empty(_))));
    }

    #[test]
    fn single_datum_mean() {
        // from (0,0) at θ = 0 one step lands on (0,0) w.p. 1/2, (0,1) and (1,0)
        // w.p. 1/4, so E φ(X^(1)) = (1/4, 0, 1/4)
        let fam = fvbm2();
        let data = CdData::from_points(&fam, &[vec![0, 0]]).unwrap();
        let reps = 100_000;
        let mut sum = DVector::zeros(3);
        let mut sq = DVector::zeros(3);
        for t in 0..reps {
            let g = cd_gradient(&fam, &theta(&[0.0; 3]), &data, 1, Sampler::Path, StreamKey::new(9), t).unwrap();
            sq += g.component_mul(&g);
            sum += g;
        }
        let mean = &sum / reps as f64;
        let expected = [-0.25, 0.0, -0.25];
        for j in 0..3 {
            let var = sq[j] / reps as f64 - mean[j] * mean[j];
            let se = (var / reps as f64).sqrt().max(1e-12);
            assert!((mean[j] - expected[j]).abs() <= 4.0 * se, "component {j}: {} vs {}", mean[j], expected[j]);
        }
    }

    #[test]
    fn frozen_when_in_layer() {
        let fam = fvbm2();
        let bx = ParamBox::new(3.0, 3).unwrap();
        let data = CdData::new(&fam, vec![0, 3]).unwrap();
        let sched = Schedule::Harmonic { eta0: 1.0 };
        // η_0 = 1, layer width 2√3 ≈ 3.46 > 3 - 2.99
        let t = theta(&[2.99, 0.0, 0.0]);
        let out = cd_step(&fam, &data, &t, 0, &sched, &bx, 2, Sampler::Path, StreamKey::new(0)).unwrap();
        assert!(out.boundary_hit);
        assert_eq!(out.next, t);
    }

    #[test]
    fn zero_gradient_realization_keeps_theta() {
        // one datum at state 1 stays put w.p. logistic(0.5) ≈ 0.62
        let fam = FiniteExpFamily::fvbm(1).unwrap();
        let bx = ParamBox::new(3.0, 1).unwrap();
        let data = CdData::new(&fam, vec![1]).unwrap();
        let t = theta(&[0.5]);
        let sched = Schedule::Harmonic { eta0: 0.1 };
        let mut found = false;
        for t_idx in 0..64 {
            let g = cd_gradient(&fam, &t, &data, 1, Sampler::Path, StreamKey::new(3), t_idx as u64).unwrap();
            if g.norm() == 0.0 {
                let out = cd_step(&fam, &data, &t, t_idx, &sched, &bx, 1, Sampler::Path, StreamKey::new(3)).unwrap();
                assert_eq!(out.next, t);
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn weighted_average_examples() {
        let c = theta(&[0.3, -1.0]);
        let thetas = vec![c.clone(); 10];
        let etas: Vec<f64> = (0..10).map(|t| 1.0 / (t + 1) as f64).collect();
        assert!((weighted_average(&thetas, &etas, 2, 9).unwrap() - &c).norm() < 1e-15);

        let thetas: Vec<Param> = (0..6).map(|t| theta(&[t as f64])).collect();
        let fixed = vec![0.5; 6];
        assert!((weighted_average(&thetas, &fixed, 1, 4).unwrap()[0] - 2.5).abs() < 1e-15);

        assert!(weighted_average(&thetas, &fixed, 4, 3).is_err());
    }

    #[test]
    fn weighted_average_alternating() {
        let a = theta(&[1.0, 2.0]);
        let b = theta(&[-3.0, 0.5]);
        let n = 500;
        let thetas: Vec<Param> = (0..n).map(|s| if s % 2 == 0 { a.clone() } else { b.clone() }).collect();
        let etas: Vec<f64> = (0..n).map(|s| 1.0 / (s + 1) as f64).collect();
        let t0 = 7;
        // independent oracle: split weights by parity
        let (mut wa, mut wb) = (0.0, 0.0);
        for (s, e) in etas.iter().enumerate().take(n).skip(t0) {
            if s % 2 == 0 {
                wa += e;
            } else {
                wb += e;
            }
        }
        let oracle = (&a * wa + &b * wb) / (wa + wb);
        let got = weighted_average(&thetas, &etas, t0, n - 1).unwrap();
        assert!((got - oracle).norm() < 1e-12);
        let traj = Trajectory::from_parts(thetas.clone(), etas.clone(), vec![false; n], t0).unwrap();
        for t in [t0, t0 + 1, 100, n - 1] {
            let direct = weighted_average(&thetas, &etas, t0, t).unwrap();
            assert!((traj.weighted_avg(t).unwrap() - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn delta_n_examples() {
        let star = theta(&[0.5, 1.0, 0.5]);
        let avgs = vec![star.clone(); 50];
        assert_eq!(delta_n_of_series(0, &avgs, &star, 0.1).unwrap().tail_max, 0.0);

        let e1 = theta(&[1.0, 0.0, 0.0]);
        let avgs: Vec<Param> = (1..=1000).map(|t| &star + &e1 / t as f64).collect();
        let d = delta_n_of_series(1, &avgs, &star, 0.1).unwrap();
        assert_eq!(d.window_start, 900);
        assert!((d.tail_max - 1.0 / 900.0).abs() < 1e-15);
        assert!((d.final_distance - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn exact_gradient_fixed_points() {
        let fam = fvbm2();
        let data = CdData::new(&fam, vec![0, 1, 2, 3]).unwrap();
        let g = exact_gradient(&fam, &theta(&[0.0; 3]), data.empirical_mean()).unwrap();
        assert!(g.norm() < 1e-15);
        let bx = ParamBox::new(3.0, 3).unwrap();
        let out = exact_gradient_step(&fam, &theta(&[0.0; 3]), data.empirical_mean(), 0.5, &bx).unwrap();
        assert_eq!(out.next, theta(&[0.0; 3]));
    }

    #[test]
    fn run_is_deterministic_and_feasible() {
        let fam = fvbm2();
        let data = CdData::new(&fam, vec![0, 1, 2, 3, 3, 3, 3, 2, 1, 3]).unwrap();
        let cfg = CdConfig {
            m: 2,
            schedule: Schedule::Harmonic { eta0: 5.0 },
            param_box: ParamBox::new(3.0, 3).unwrap(),
            iterations: 300,
            burn_in: 10,
            sampler: Sampler::Path,
            theta0: vec![0.0; 3],
        };
        let a = run_cd(&fam, &data, &cfg, StreamKey::new(42)).unwrap();
        let b = run_cd(&fam, &data, &cfg, StreamKey::new(42)).unwrap();
        assert_eq!(a, b);
        let c = run_cd(&fam, &data, &cfg, StreamKey::new(43)).unwrap();
        assert_ne!(a.thetas, c.thetas);
        let cap = 2.0 * 3f64.sqrt();
        for t in 0..a.horizon() {
            assert!(cfg.param_box.contains(&a.thetas[t]));
            assert!((&a.thetas[t + 1] - &a.thetas[t]).norm() <= cap * a.etas[t] + 1e-15);
            if a.boundary_hits[t] {
                assert_eq!(a.thetas[t + 1], a.thetas[t]);
            }
        }
        assert_eq!(a.thetas.len(), 301);
        assert_eq!(a.weighted_avgs.len(), 291);
    }

    #[test]
    fn config_validation() {
        let mut cfg = CdConfig {
            m: 2,
            schedule: Schedule::Harmonic { eta0: 1.0 },
            param_box: ParamBox::new(3.0, 3).unwrap(),
            iterations: 10,
            burn_in: 10,
            sampler: Sampler::Path,
            theta0: vec![0.0; 3],
        };
        assert!(cfg.validate(3).is_err());
        cfg.burn_in = 0;
        assert!(cfg.validate(3).is_ok());
        cfg.theta0 = vec![4.0, 0.0, 0.0];
        assert!(cfg.validate(3).is_err());
    }
}
