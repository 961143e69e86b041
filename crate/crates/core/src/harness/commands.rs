use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::experiment::{
    checked_sample_from_meta, diagnose_trajectory, merge_verdict, run_experiment, write_cell_diagnostics,
    write_experiment, ExperimentResult, Setup,
};
use super::output::{cell_name, ensure_writable, fmt, fmt_opt, header, read_trajectory, write_csv, write_json, TrajectoryMeta};
use crate::diagnostics::{rate_fit, RateFit, RateInput, Verdict};
use crate::error::{Error, Result};
use crate::learner::ScheduleVerdict;
use crate::model::Identifiability;
use crate::oracle::{ModelConstants, TheoryConstants};
use crate::rng::{domain, StreamKey};

/// A named pass/fail line of a command report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: ModelConstants,
    pub identifiability: Identifiability,
    pub schedule: ScheduleVerdict,
    /// Smallest `m` with `a_m > 0`.
    pub m_star: Option<usize>,
    pub constants: Vec<TheoryConstants>,
    pub checks: Vec<Check>,
}

const IDENTIFIABILITY_PROBES: usize = 256;

/// Constants on the configured grid plus the analytic schedule verdict.
pub fn verify_assumptions(cfg: &RunConfig) -> Result<AssumptionReport> {
    let setup = Setup::new(cfg)?;
    let key = StreamKey::new(cfg.master_seed).child(domain::PROBE);
    let identifiability = setup.fam.assess_identifiability(&setup.bx, IDENTIFIABILITY_PROBES, key)?;
    let schedule = cfg.schedule.learning_rate_condition();
    let mc = &setup.constants;
    let m_star = mc.m_star();
    let mut constants = Vec::new();
    for &m in &cfg.m_values {
        for &n in &cfg.n_values {
            constants.push(mc.theory(m, n, cfg.gamma)?);
        }
    }
    let mut checks = vec![
        Check::new("bounded_statistics", mc.c.is_finite(), format!("C = {}", mc.c)),
        Check::new(
            "identifiability",
            !identifiability.degenerate && mc.lambda > 0.0,
            format!("λ = {:e} on the grid, {:e} at {} random probes", mc.lambda, identifiability.min_eigenvalue, IDENTIFIABILITY_PROBES),
        ),
        Check::new("spectral_gap", mc.alpha < 1.0, format!("α̂ = {}", mc.alpha)),
        Check::new("kernel_lipschitz", mc.zeta.is_finite(), format!("ζ̂ = {}", mc.zeta)),
        Check::new("learning_rate", schedule.pass, schedule.detail.clone()),
        Check::new(
            "mixing_dominated",
            m_star.is_some(),
            match m_star {
                Some(m) => format!("a_m > 0 from m = {m}"),
                None => "no m makes a_m positive".into(),
            },
        ),
    ];
    for &m in &cfg.m_values {
        let tc = mc.theory(m, cfg.n_values[0], cfg.gamma)?;
        checks.push(Check::new(
            format!("a_m_positive_m{m}"),
            tc.hypotheses_met,
            format!("a_m = {:e}", tc.a_m),
        ));
    }
    Ok(AssumptionReport { model: mc.clone(), identifiability, schedule, m_star, constants, checks })
}

pub fn write_assumptions(report: &AssumptionReport, out: &Path) -> Result<()> {
    write_json(&out.join("constants.json"), report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Fit per `m`.
    pub fits: BTreeMap<usize, RateFit>,
    pub checks: Vec<Check>,
}

impl RateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub const SLOPE_RANGE: (f64, f64) = (-0.60, -0.15);
pub const MAX_SLOPE_GAP: f64 = 0.15;

/// Fits the `δ_n` rate per `m` and evaluates the convergence checks.
pub fn rate_report(result: &ExperimentResult) -> Result<RateReport> {
    let cfg = &result.config;
    let mut fits = BTreeMap::new();
    let mut checks = Vec::new();
    for &m in &cfg.m_values {
        let inputs: Vec<RateInput> = cfg
            .n_values
            .iter()
            .map(|&n| {
                let bound = result.cells.iter().find(|c| c.n == n && c.m == m).and_then(|c| c.theory.rate_bound());
                RateInput { n, deltas: result.deltas(n, m), bound }
            })
            .collect();
        let fit = rate_fit(&inputs)?;
        let mut by_n = fit.points.clone();
        by_n.sort_by_key(|p| p.n);
        let medians: Vec<String> = by_n.iter().map(|p| format!("{:.4}", p.median)).collect();
        checks.push(Check::new(
            format!("median_decreasing_m{m}"),
            by_n.windows(2).all(|w| w[1].median < w[0].median),
            format!("medians {}", medians.join(" > ")),
        ));
        let (first, last) = (by_n[0].median, by_n[by_n.len() - 1].median);
        checks.push(Check::new(
            format!("median_halved_m{m}"),
            last < 0.5 * first,
            format!("{last:.4} vs 0.5 x {first:.4}"),
        ));
        checks.push(Check::new(
            format!("slope_in_range_m{m}"),
            fit.slope >= SLOPE_RANGE.0 && fit.slope <= SLOPE_RANGE.1,
            format!("slope {:.4}, target −(1−2γ)/3 = {:.4}", fit.slope, -(1.0 - 2.0 * cfg.gamma) / 3.0),
        ));
        fits.insert(m, fit);
    }
    if fits.len() >= 2 {
        let slopes: Vec<f64> = fits.values().map(|f| f.slope).collect();
        let gap = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - slopes.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check::new("m_insensitive_slope", gap < MAX_SLOPE_GAP, format!("slope spread {gap:.4}")));
    }
    Ok(RateReport { fits, checks })
}

/// Runs the experiment, writes the bundle and the rate summary.
pub fn rate_sweep(cfg: &RunConfig, out: &Path) -> Result<RateReport> {
    let result = run_experiment(cfg)?;
    let report = rate_report(&result)?;
    write_experiment(&result, out)?;
    write_csv(
        &out.join("rate_summary.csv"),
        &header(&["m", "n", "median_delta_n", "q25", "q75", "rate_bound", "coverage"]),
        report.fits.iter().flat_map(|(m, fit)| {
            fit.points.iter().map(move |p| {
                vec![
                    m.to_string(),
                    p.n.to_string(),
                    fmt(p.median),
                    fmt(p.q25),
                    fmt(p.q75),
                    fmt_opt(p.bound),
                    fmt_opt(p.coverage),
                ]
            })
        }),
    )?;
    write_json(&out.join("rate_fit.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellVerdicts {
    pub cell: String,
    pub hypotheses_met: bool,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub cells: Vec<CellVerdicts>,
    /// Verdicts of cells whose hypotheses hold, merged per check.
    pub merged: Vec<Verdict>,
}

impl DiagnoseReport {
    pub fn passed(&self) -> bool {
        self.merged.iter().all(|v| v.passed())
    }
}

/// Re-runs the diagnostics on every trajectory stored under `out/cells`.
pub fn diagnose(cfg: &RunConfig, out: &Path) -> Result<DiagnoseReport> {
    let setup = Setup::new(cfg)?;
    let cells_dir = out.join("cells");
    let mut names: Vec<String> = std::fs::read_dir(&cells_dir)
        .map_err(|e| Error::Config(format!("no stored trajectories under {}: {e}", cells_dir.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("trajectory.json").is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Config(format!("no stored trajectories under {}", cells_dir.display())));
    }
    let cells = names
        .par_iter()
        .map(|name| -> Result<CellVerdicts> {
            let dir = cells_dir.join(name);
            let meta: TrajectoryMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("trajectory.json"))?)?;
            debug_assert_eq!(cell_name(meta.n, meta.m, meta.seed), *name);
            let traj = read_trajectory(&dir.join("trajectory.csv"), meta.t0)?;
            let theory = setup.theory(cfg, meta.n, meta.m)?;
            let target = out.join("diagnose").join(name);
            let checked = match checked_sample_from_meta(&setup, cfg, &meta) {
                Ok(c) => c,
                Err(Error::MleNonExistent(_)) => {
                    write_json(&target.join("verdicts.json"), &Vec::<Verdict>::new())?;
                    return Ok(CellVerdicts { cell: name.clone(), hypotheses_met: false, verdicts: Vec::new() });
                }
                Err(e) => return Err(e),
            };
            let diag = diagnose_trajectory(&setup, cfg, &theory, &checked, &traj, cfg.bias_sweep)?;
            write_cell_diagnostics(&target, &diag)?;
            Ok(CellVerdicts { cell: name.clone(), hypotheses_met: diag.constraints_pass, verdicts: diag.binding_verdicts() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut merged = BTreeMap::new();
    for c in &cells {
        for v in &c.verdicts {
            merge_verdict(&mut merged, v.clone());
        }
    }
    let report = DiagnoseReport { cells, merged: merged.into_values().collect() };
    write_json(&out.join("diagnose").join("verdicts.json"), &report)?;
    Ok(report)
}

/// `run`: the full experiment bundle.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<ExperimentResult> {
    ensure_writable(out)?;
    let result = run_experiment(cfg)?;
    write_experiment(&result, out)?;
    Ok(result)
}
