use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{CdConfig, Sampler, Schedule};
use crate::model::{FiniteExpFamily, ModelSpec, NamedModel, Param, ParamBox};

/// One experiment: every `(n, m, seed)` cell of the product is run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "defaults::model")]
    pub model: ModelSpec,
    #[serde(default = "defaults::theta_star")]
    pub theta_star: Vec<f64>,
    #[serde(default = "defaults::box_half_width")]
    pub box_half_width: f64,
    #[serde(default = "defaults::n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "defaults::m_values")]
    pub m_values: Vec<usize>,
    #[serde(default = "defaults::schedule")]
    pub schedule: Schedule,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::burn_in")]
    pub burn_in: usize,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::master_seed")]
    pub master_seed: u64,
    /// Points per axis of the grid behind λ, L, α, ζ and the sup in the
    /// empirical-process constraint.
    #[serde(default = "defaults::grid_points")]
    pub grid_points: usize,
    #[serde(default = "defaults::tail_fraction")]
    pub tail_fraction: f64,
    /// Starting point; the origin when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub sampler: Sampler,
    /// Also sweep the bias bound over the grid for every cell.
    #[serde(default = "defaults::yes")]
    pub bias_sweep: bool,
    #[serde(default = "defaults::out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "defaults::yes")]
    pub svg: bool,
}

mod defaults {
    use super::*;

    pub fn model() -> ModelSpec {
        ModelSpec::Named(NamedModel::Fvbm { p: 2 })
    }
    pub fn theta_star() -> Vec<f64> {
        vec![0.5, 1.0, 0.5]
    }
    pub fn box_half_width() -> f64 {
        3.0
    }
    pub fn n_values() -> Vec<usize> {
        vec![100, 1_000, 10_000]
    }
    pub fn m_values() -> Vec<usize> {
        vec![2, 4]
    }
    pub fn schedule() -> Schedule {
        Schedule::Harmonic { eta0: 30.0 }
    }
    pub fn iterations() -> usize {
        1000
    }
    pub fn burn_in() -> usize {
        50
    }
    pub fn gamma() -> f64 {
        0.45
    }
    pub fn seeds() -> Vec<u64> {
        (0..20).collect()
    }
    pub fn master_seed() -> u64 {
        2024
    }
    pub fn grid_points() -> usize {
        9
    }
    pub fn tail_fraction() -> f64 {
        0.1
    }
    pub fn yes() -> bool {
        true
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("out")
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn family(&self) -> Result<FiniteExpFamily> {
        FiniteExpFamily::from_spec(&self.model).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn param_box(&self) -> Result<ParamBox> {
        ParamBox::new(self.box_half_width, self.theta_star.len())
    }

    pub fn theta_star(&self) -> Param {
        DVector::from_column_slice(&self.theta_star)
    }

    pub fn theta0(&self) -> Vec<f64> {
        self.theta0.clone().unwrap_or_else(|| vec![0.0; self.theta_star.len()])
    }

    pub fn cd_config(&self, m: usize) -> Result<CdConfig> {
        Ok(CdConfig {
            m,
            schedule: self.schedule,
            param_box: self.param_box()?,
            iterations: self.iterations,
            burn_in: self.burn_in,
            sampler: self.sampler,
            theta0: self.theta0(),
        })
    }

    /// Checks every field; all failures are [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let fam = self.family()?;
        let d = fam.dim();
        if self.theta_star.len() != d {
            return bad(format!("theta_star has {} entries, the model has dimension {d}", self.theta_star.len()));
        }
        if !(self.box_half_width.is_finite() && self.box_half_width > 0.0) {
            return bad(format!("box_half_width must be positive, got {}", self.box_half_width));
        }
        let bx = self.param_box().map_err(|e| Error::Config(e.to_string()))?;
        if !bx.contains_interior(&self.theta_star()) {
            return bad("theta_star must lie strictly inside the box".into());
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return bad("n_values must be non-empty and every n >= 1".into());
        }
        if self.m_values.is_empty() || self.m_values.contains(&0) {
            return bad("m_values must be non-empty and every m >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return bad(format!("gamma must lie in (0, 1/2), got {}", self.gamma));
        }
        if self.grid_points == 0 {
            return bad("grid_points must be at least 1".into());
        }
        crate::grid::ProductGrid::new(&bx, self.grid_points)?;
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return bad(format!("tail_fraction must lie in (0, 1], got {}", self.tail_fraction));
        }
        if (self.tail_fraction * self.iterations as f64 + 1e-9).floor() < 1.0 {
            return bad("tail window is empty; raise iterations or tail_fraction".into());
        }
        if fam.num_states() < 2 || !fam.is_binary_hypercube() {
            return bad("the random-scan Gibbs kernel needs the full binary hypercube as state space".into());
        }
        for &m in &self.m_values {
            self.cd_config(m)?.validate(d).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}
