//! Files written by the harness. Floats use the shortest representation
//! that round-trips, so reruns are byte-identical and readers recover the
//! exact values.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{DriftReport, MartingaleReport};
use crate::error::{Error, Result};
use crate::learner::{Sampler, Schedule, Trajectory};

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn unwritable(path: &Path, source: std::io::Error) -> Error {
    Error::Unwritable { path: path.to_path_buf(), source }
}

/// Creates `dir` and proves a file can be written there.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| unwritable(dir, e))?;
    fs::remove_file(&probe).map_err(|e| unwritable(dir, e))
}

pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| unwritable(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| unwritable(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| unwritable(path, e))
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Run metadata stored next to `trajectory.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub master_seed: u64,
    pub data_seed: u64,
    pub schedule: Schedule,
    pub m: usize,
    pub n: usize,
    pub t0: usize,
    #[serde(rename = "M")]
    pub box_half_width: f64,
    pub iterations: usize,
    pub sampler: Sampler,
    pub theta_star: Vec<f64>,
    /// Absent when the MLE does not exist.
    pub theta_hat: Option<Vec<f64>>,
    /// Number of data points at each state index.
    pub data_counts: Vec<usize>,
}

pub fn cell_name(n: usize, m: usize, seed: u64) -> String {
    format!("n{n}_m{m}_s{seed}")
}

pub fn cell_dir(out: &Path, n: usize, m: usize, seed: u64) -> PathBuf {
    out.join("cells").join(cell_name(n, m, seed))
}

/// Columns `t, eta_t, theta_*, boundary_hit, thetabar_*, dist_to_mle,
/// dist_to_true`; the last two measure `θ̄_t` and are blank during burn-in.
pub fn write_trajectory(
    path: &Path,
    traj: &Trajectory,
    theta_hat: Option<&DVector<f64>>,
    theta_star: &DVector<f64>,
) -> Result<()> {
    let d = traj.dim();
    let mut head = header(&["t", "eta_t"]);
    head.extend((1..=d).map(|j| format!("theta_{j}")));
    head.push("boundary_hit".into());
    head.extend((1..=d).map(|j| format!("thetabar_{j}")));
    head.extend(header(&["dist_to_mle", "dist_to_true"]));
    let rows = (0..=traj.horizon()).map(|t| {
        let mut row = vec![t.to_string(), fmt(traj.etas[t])];
        row.extend(traj.thetas[t].iter().map(|v| fmt(*v)));
        row.push(u8::from(traj.boundary_hits[t]).to_string());
        match traj.weighted_avg(t) {
            Some(avg) => {
                row.extend(avg.iter().map(|v| fmt(*v)));
                row.push(fmt_opt(theta_hat.map(|h| (avg - h).norm())));
                row.push(fmt((avg - theta_star).norm()));
            }
            None => row.extend(std::iter::repeat_n(String::new(), d + 2)),
        }
        row
    });
    write_csv(path, &head, rows)
}

/// Reads back the iterates, rates and flags of a stored trajectory.
pub fn read_trajectory(path: &Path, burn_in: usize) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let head = r.headers()?.clone();
    let d = head.iter().filter(|h| h.starts_with("theta_")).count();
    let bad = |msg: String| Error::Degenerate(format!("{}: {msg}", path.display()));
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("bad number {s:?}: {e}")));
    let (mut thetas, mut etas, mut hits) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.get(0) != Some(k.to_string().as_str()) {
            return Err(bad(format!("row {k} is out of order")));
        }
        etas.push(num(&rec[1])?);
        let theta = (0..d).map(|j| num(&rec[2 + j])).collect::<Result<Vec<_>>>()?;
        thetas.push(DVector::from_vec(theta));
        hits.push(match &rec[2 + d] {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("bad boundary flag {other:?}"))),
        });
    }
    Trajectory::from_parts(thetas, etas, hits, burn_in)
}

pub fn write_drift(path: &Path, report: &DriftReport) -> Result<()> {
    let head = header(&["t", "h", "lhs", "rhs", "slack", "in_boundary", "in_ball"]);
    let rows = report.rows.iter().map(|r| {
        vec![
            r.t.to_string(),
            fmt(r.h),
            fmt(r.lhs),
            fmt(r.rhs),
            fmt(r.slack),
            u8::from(r.in_boundary).to_string(),
            u8::from(r.in_ball).to_string(),
        ]
    });
    write_csv(path, &head, rows)
}

pub fn write_martingale(path: &Path, report: &MartingaleReport) -> Result<()> {
    let head = header(&[
        "t",
        "eta_t",
        "h",
        "h_next",
        "in_boundary",
        "in_ball",
        "y",
        "y_active",
        "y_cond_mean",
        "z",
        "z_active",
        "z_cond_mean",
        "y_normalized_sum",
        "z_normalized_sum",
    ]);
    let rows = report.rows.iter().map(|r| {
        vec![
            r.t.to_string(),
            fmt(r.eta),
            fmt(r.h),
            fmt(r.h_next),
            u8::from(r.in_boundary).to_string(),
            u8::from(r.in_ball).to_string(),
            fmt(r.y),
            u8::from(r.y_active).to_string(),
            fmt(r.y_cond_mean),
            fmt(r.z),
            u8::from(r.z_active).to_string(),
            fmt(r.z_cond_mean),
            fmt(r.y_normalized_sum),
            fmt(r.z_normalized_sum),
        ]
    });
    write_csv(path, &head, rows)
}
