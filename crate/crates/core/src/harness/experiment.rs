use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::output::{
    cell_dir, fmt, fmt_opt, header, write_csv, write_drift, write_json, write_martingale, write_trajectory,
    TrajectoryMeta,
};
use super::plot;
use crate::diagnostics::{
    bias_sweep, drift_report, martingale_increments, occupancy_fraction, quantile, DriftReport, MartingaleReport,
    Occupancy, StepContext, Verdict, LIMIT_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::grid::ProductGrid;
use crate::learner::{delta_n, run_cd, CdData, DeltaN, Trajectory};
use crate::model::{FiniteExpFamily, Param, ParamBox};
use crate::oracle::{
    check_constraint_empirical_process, check_constraint_mle, mle, sample_iid, CheckedSample, ConstraintCheck,
    DataSample, EmpiricalProcessCheck, ModelConstants, TheoryConstants,
};
use crate::rng::{domain, StreamKey};

/// Model, box, grid and grid constants shared by every cell.
#[derive(Debug, Clone)]
pub struct Setup {
    pub fam: FiniteExpFamily,
    pub bx: ParamBox,
    pub grid: ProductGrid,
    pub theta_star: Param,
    pub constants: ModelConstants,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let fam = cfg.family()?;
        let bx = cfg.param_box()?;
        let grid = ProductGrid::new(&bx, cfg.grid_points)?;
        let theta_star = cfg.theta_star();
        let constants = ModelConstants::compute(&fam, &bx, &theta_star, &grid)?;
        Ok(Self { fam, bx, grid, theta_star, constants })
    }

    pub fn theory(&self, cfg: &RunConfig, n: usize, m: usize) -> Result<TheoryConstants> {
        self.constants.theory(m, n, cfg.gamma)
    }
}

/// Seed of the data sample for `(n, seed)`; shared by every `m`.
pub fn data_seed(master: u64, n: usize, seed: u64) -> u64 {
    StreamKey::new(master).child(domain::DATA).child(n as u64).child(seed).raw()
}

/// Key of the CD randomness for `(n, m, seed)`.
pub fn cd_key(master: u64, n: usize, m: usize, seed: u64) -> StreamKey {
    StreamKey::new(master).child(domain::CD).child(n as u64).child(m as u64).child(seed)
}

/// Diagnostics of one trajectory.
#[derive(Debug, Clone)]
pub struct CellDiagnostics {
    pub constraints_pass: bool,
    pub drift: DriftReport,
    /// Present only when `a_m > 0`.
    pub martingale: Option<MartingaleReport>,
    pub occupancy: Option<Occupancy>,
    /// Bias-bound sweep over the grid; present only when the constraints pass.
    pub bias: Option<Verdict>,
}

impl CellDiagnostics {
    /// Verdicts that count: those whose hypotheses hold for this cell.
    pub fn binding_verdicts(&self) -> Vec<Verdict> {
        let mut out = Vec::new();
        if !self.constraints_pass {
            return out;
        }
        out.push(self.drift.verdict.clone());
        if let Some(mg) = &self.martingale {
            out.push(mg.y_verdict.clone());
            out.push(mg.z_verdict.clone());
        }
        out.extend(self.bias.clone());
        out
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub meta: TrajectoryMeta,
    /// Absent when the MLE does not exist for the sample.
    pub mle_check: Option<ConstraintCheck>,
    pub process_check: EmpiricalProcessCheck,
    pub theory: TheoryConstants,
    pub trajectory: Trajectory,
    pub delta: DeltaN,
    pub tail_boundary_hits: usize,
    pub diagnostics: Option<CellDiagnostics>,
}

impl CellResult {
    pub fn theta_hat(&self) -> Option<Param> {
        self.meta.theta_hat.as_deref().map(DVector::from_column_slice)
    }

    pub fn constraints_pass(&self) -> bool {
        self.mle_check.is_some_and(|c| c.pass) && self.process_check.pass
    }
}

/// Runs the per-trajectory checks.
#[allow(clippy::too_many_arguments)]
pub fn diagnose_trajectory(
    setup: &Setup,
    cfg: &RunConfig,
    theory: &TheoryConstants,
    checked: &CheckedSample,
    traj: &Trajectory,
    bias: bool,
) -> Result<CellDiagnostics> {
    let ctx = StepContext::new(&setup.fam, &checked.sample.data, checked.mle.theta.clone(), theory)?;
    let drift = drift_report(&ctx, traj)?;
    let (martingale, occupancy) = if theory.hypotheses_met {
        (
            Some(martingale_increments(&ctx, traj, &setup.bx, cfg.tail_fraction)?),
            Some(occupancy_fraction(traj, &checked.mle.theta, theory, cfg.tail_fraction)?),
        )
    } else {
        (None, None)
    };
    let constraints_pass = checked.constraints_pass();
    let bias = if bias && constraints_pass {
        let points: Vec<Param> = setup.grid.points().collect();
        let checks = bias_sweep(&setup.fam, &points, checked, theory)?;
        Some(Verdict::from_slacks("bias", checks.iter().map(|c| c.slack), 0.0))
    } else {
        None
    };
    Ok(CellDiagnostics { constraints_pass, drift, martingale, occupancy, bias })
}

/// Runs one `(n, m, seed)` cell.
pub fn run_cell(setup: &Setup, cfg: &RunConfig, n: usize, m: usize, seed: u64, diagnose: bool) -> Result<CellResult> {
    let dseed = data_seed(cfg.master_seed, n, seed);
    let sample = sample_iid(&setup.fam, &setup.theta_star, n, dseed)?;
    let fit = match mle(&setup.fam, &sample.data, &setup.bx) {
        Ok(fit) => Some(fit),
        Err(Error::MleNonExistent(_)) => None,
        Err(e) => return Err(e),
    };
    let mle_check = fit.as_ref().map(|f| check_constraint_mle(f, n, &setup.theta_star, cfg.gamma));
    let process_check =
        check_constraint_empirical_process(&setup.fam, &sample.data, &setup.theta_star, m, cfg.gamma, &setup.grid)?;
    let theory = setup.theory(cfg, n, m)?;
    let trajectory = run_cd(&setup.fam, &sample.data, &cfg.cd_config(m)?, cd_key(cfg.master_seed, n, m, seed))?;
    let delta = delta_n(&trajectory, &setup.theta_star, cfg.tail_fraction)?;
    let tail_boundary_hits = trajectory.tail_boundary_hits(cfg.tail_fraction);
    let meta = TrajectoryMeta {
        seed,
        master_seed: cfg.master_seed,
        data_seed: dseed,
        schedule: cfg.schedule,
        m,
        n,
        t0: cfg.burn_in,
        box_half_width: cfg.box_half_width,
        iterations: cfg.iterations,
        sampler: cfg.sampler,
        theta_star: cfg.theta_star.clone(),
        theta_hat: fit.as_ref().map(|f| f.theta.iter().copied().collect()),
        data_counts: sample.data.counts(setup.fam.num_states()),
    };
    let diagnostics = match (diagnose, fit, mle_check) {
        (true, Some(fit), Some(check)) => {
            let checked = CheckedSample { sample, mle: fit, mle_check: check, process_check: process_check.clone() };
            Some(diagnose_trajectory(setup, cfg, &theory, &checked, &trajectory, cfg.bias_sweep)?)
        }
        _ => None,
    };
    Ok(CellResult { n, m, seed, meta, mle_check, process_check, theory, trajectory, delta, tail_boundary_hits, diagnostics })
}

/// Rebuilds the checked sample of a stored cell from its sidecar.
pub fn checked_sample_from_meta(setup: &Setup, cfg: &RunConfig, meta: &TrajectoryMeta) -> Result<CheckedSample> {
    let items: Vec<usize> =
        meta.data_counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect();
    let data = CdData::new(&setup.fam, items)?;
    let sample = DataSample { data, theta_star: setup.theta_star.clone(), seed: meta.data_seed };
    CheckedSample::new(&setup.fam, sample, &setup.bx, meta.m, cfg.gamma, &setup.grid)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: RunConfig,
    pub setup: Setup,
    /// Cells ordered by `(n, m, seed)` as listed in the config.
    pub cells: Vec<CellResult>,
}

/// Cells of one `(n, m)` pair.
pub type Group<'a> = ((usize, usize), Vec<&'a CellResult>);

impl ExperimentResult {
    pub fn groups(&self) -> Vec<Group<'_>> {
        let mut map: BTreeMap<(usize, usize), Vec<&CellResult>> = BTreeMap::new();
        for c in &self.cells {
            map.entry((c.n, c.m)).or_default().push(c);
        }
        map.into_iter().collect()
    }

    pub fn deltas(&self, n: usize, m: usize) -> Vec<f64> {
        self.cells.iter().filter(|c| c.n == n && c.m == m).map(|c| c.delta.tail_max).collect()
    }

    /// Verdicts of every cell whose hypotheses hold, merged per check.
    pub fn merged_verdicts(&self) -> Vec<Verdict> {
        let mut merged: BTreeMap<String, Verdict> = BTreeMap::new();
        for c in &self.cells {
            if let Some(diag) = &c.diagnostics {
                for v in diag.binding_verdicts() {
                    merge_verdict(&mut merged, v);
                }
            }
        }
        merged.into_values().collect()
    }
}

pub(crate) fn merge_verdict(map: &mut BTreeMap<String, Verdict>, v: Verdict) {
    map.entry(v.check.clone())
        .and_modify(|acc| {
            acc.steps += v.steps;
            acc.violations += v.violations;
            acc.worst_slack = match (acc.worst_slack, v.worst_slack) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        })
        .or_insert(v);
}

/// Runs every cell of the config, in parallel across cells.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    let setup = Setup::new(cfg)?;
    let mut plan = Vec::new();
    for &n in &cfg.n_values {
        for &m in &cfg.m_values {
            for &seed in &cfg.seeds {
                plan.push((n, m, seed));
            }
        }
    }
    let cells = plan
        .par_iter()
        .map(|&(n, m, seed)| run_cell(&setup, cfg, n, m, seed, true))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { config: cfg.clone(), setup, cells })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellSummary {
    n: usize,
    m: usize,
    seed: u64,
    delta_n: DeltaN,
    boundary_hits: usize,
    tail_boundary_hits: usize,
    mle_check: Option<ConstraintCheck>,
    empirical_process_check: EmpiricalProcessCheck,
    hypotheses_met: bool,
    verdicts: Vec<Verdict>,
    occupancy: Option<Occupancy>,
    martingale_tail: Option<MartingaleTail>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MartingaleTail {
    y_tail_max: f64,
    z_tail_max: f64,
    epsilon: f64,
    pass: bool,
    h_observed: f64,
    h_analytic: f64,
}

pub(crate) fn write_cell_diagnostics(dir: &Path, diag: &CellDiagnostics) -> Result<()> {
    write_drift(&dir.join("drift.csv"), &diag.drift)?;
    if let Some(mg) = &diag.martingale {
        write_martingale(&dir.join("martingale.csv"), mg)?;
    }
    let mut verdicts = vec![diag.drift.verdict.clone()];
    if let Some(mg) = &diag.martingale {
        verdicts.push(mg.y_verdict.clone());
        verdicts.push(mg.z_verdict.clone());
    }
    verdicts.extend(diag.bias.clone());
    write_json(&dir.join("verdicts.json"), &verdicts)
}

fn martingale_tail(diag: &CellDiagnostics) -> Option<MartingaleTail> {
    diag.martingale.as_ref().map(|mg| MartingaleTail {
        y_tail_max: mg.y_tail_max,
        z_tail_max: mg.z_tail_max,
        epsilon: LIMIT_TOLERANCE,
        pass: mg.partial_sums_pass(LIMIT_TOLERANCE),
        h_observed: mg.h_observed,
        h_analytic: mg.h_analytic,
    })
}

/// Writes the full bundle under `out`.
pub fn write_experiment(result: &ExperimentResult, out: &Path) -> Result<()> {
    let cfg = &result.config;
    write_json(&out.join("config.json"), cfg)?;
    let theories: Vec<&TheoryConstants> = result.groups().into_iter().map(|(_, cells)| &cells[0].theory).collect();
    write_json(&out.join("constants.json"), &theories)?;

    for c in &result.cells {
        let dir = cell_dir(out, c.n, c.m, c.seed);
        write_trajectory(&dir.join("trajectory.csv"), &c.trajectory, c.theta_hat().as_ref(), &result.setup.theta_star)?;
        write_json(&dir.join("trajectory.json"), &c.meta)?;
        if let Some(diag) = &c.diagnostics {
            write_cell_diagnostics(&dir, diag)?;
        }
        let summary = CellSummary {
            n: c.n,
            m: c.m,
            seed: c.seed,
            delta_n: c.delta,
            boundary_hits: c.trajectory.boundary_hit_count(),
            tail_boundary_hits: c.tail_boundary_hits,
            mle_check: c.mle_check,
            empirical_process_check: c.process_check.clone(),
            hypotheses_met: c.theory.hypotheses_met,
            verdicts: c.diagnostics.as_ref().map(|d| d.binding_verdicts()).unwrap_or_default(),
            occupancy: c.diagnostics.as_ref().and_then(|d| d.occupancy),
            martingale_tail: c.diagnostics.as_ref().and_then(martingale_tail),
        };
        write_json(&dir.join("summary.json"), &summary)?;
    }

    // the MLE check does not depend on m; report it once per (n, seed)
    let first_m = cfg.m_values[0];
    write_csv(
        &out.join("constraint_mle.csv"),
        &header(&["seed", "n", "pass", "margin"]),
        result
            .cells
            .iter()
            .filter(|c| c.m == first_m)
            .map(|c| {
                vec![
                    c.seed.to_string(),
                    c.n.to_string(),
                    c.mle_check.is_some_and(|k| k.pass).to_string(),
                    fmt_opt(c.mle_check.map(|k| k.margin)),
                ]
            }),
    )?;
    for &m in &cfg.m_values {
        write_csv(
            &out.join(format!("constraint_empirical_process_m{m}.csv")),
            &header(&["seed", "n", "pass", "margin"]),
            result.cells.iter().filter(|c| c.m == m).map(|c| {
                vec![c.seed.to_string(), c.n.to_string(), c.process_check.pass.to_string(), fmt(c.process_check.margin)]
            }),
        )?;
    }

    write_csv(
        &out.join("cells.csv"),
        &header(&[
            "n",
            "m",
            "seed",
            "delta_n",
            "final_distance",
            "boundary_hits",
            "tail_boundary_hits",
            "mle_pass",
            "empirical_process_pass",
            "drift_violations",
            "drift_worst_slack",
        ]),
        result.cells.iter().map(|c| {
            let drift = c.diagnostics.as_ref().map(|d| &d.drift.verdict);
            vec![
                c.n.to_string(),
                c.m.to_string(),
                c.seed.to_string(),
                fmt(c.delta.tail_max),
                fmt(c.delta.final_distance),
                c.trajectory.boundary_hit_count().to_string(),
                c.tail_boundary_hits.to_string(),
                c.mle_check.is_some_and(|k| k.pass).to_string(),
                c.process_check.pass.to_string(),
                drift.map(|v| v.violations.to_string()).unwrap_or_default(),
                fmt_opt(drift.and_then(|v| v.worst_slack)),
            ]
        }),
    )?;

    let groups = result.groups();
    write_csv(
        &out.join("delta_summary.csv"),
        &header(&["n", "m", "replicates", "median", "q25", "q75", "rate_bound", "coverage"]),
        groups.iter().map(|((n, m), cells)| {
            let deltas: Vec<f64> = cells.iter().map(|c| c.delta.tail_max).collect();
            let bound = cells[0].theory.rate_bound();
            let coverage = bound.map(|b| deltas.iter().filter(|d| **d < b).count() as f64 / deltas.len() as f64);
            vec![
                n.to_string(),
                m.to_string(),
                deltas.len().to_string(),
                fmt(quantile(&deltas, 0.5)),
                fmt(quantile(&deltas, 0.25)),
                fmt(quantile(&deltas, 0.75)),
                fmt_opt(bound),
                fmt_opt(coverage),
            ]
        }),
    )?;

    let curves = curves(result);
    write_csv(
        &out.join("curves.csv"),
        &header(&["n", "m", "t", "median", "q25", "q75"]),
        curves.iter().flat_map(|c| {
            c.points.iter().map(move |p| {
                vec![c.n.to_string(), c.m.to_string(), p.0.to_string(), fmt(p.1), fmt(p.2), fmt(p.3)]
            })
        }),
    )?;
    if cfg.svg {
        std::fs::write(out.join("curves.svg"), plot::svg(&curves))?;
    }
    write_json(&out.join("verdicts.json"), &result.merged_verdicts())
}

/// `‖θ̄_t − θ*‖` quantiles across seeds for one `(n, m)`.
#[derive(Debug, Clone)]
pub struct Curve {
    pub n: usize,
    pub m: usize,
    /// `(t, median, q25, q75)`.
    pub points: Vec<(usize, f64, f64, f64)>,
}

pub fn curves(result: &ExperimentResult) -> Vec<Curve> {
    let star = &result.setup.theta_star;
    result
        .groups()
        .into_iter()
        .map(|((n, m), cells)| {
            let t0 = cells[0].trajectory.burn_in;
            let horizon = cells[0].trajectory.horizon();
            let points = (t0..=horizon)
                .map(|t| {
                    let d: Vec<f64> = cells
                        .iter()
                        .map(|c| (c.trajectory.weighted_avg(t).expect("t ≥ burn-in") - star).norm())
                        .collect();
                    (t, quantile(&d, 0.5), quantile(&d, 0.25), quantile(&d, 0.75))
                })
                .collect();
            Curve { n, m, points }
        })
        .collect()
}
