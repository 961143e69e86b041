//! Product grids over the parameter box.
//!
//! Suprema and infima over `Θ` (λ, L, α, ζ and the empirical-process
//! deviation) are approximated on the same regular grid, and every report
//! carries the grid's description.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Param, ParamBox};

pub const MAX_GRID_POINTS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductGrid {
    pub half_width: f64,
    pub dim: usize,
    pub points_per_axis: usize,
}

/// Grid provenance embedded in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub points_per_axis: usize,
    pub dim: usize,
    pub half_width: f64,
    pub spacing: f64,
    pub total_points: usize,
}

impl ProductGrid {
    pub fn new(bx: &ParamBox, points_per_axis: usize) -> Result<Self> {
        if points_per_axis == 0 {
            return Err(Error::Config("grid needs at least one point per axis".into()));
        }
        let total = (points_per_axis as f64).powi(bx.dim as i32);
        if total > MAX_GRID_POINTS as f64 {
            return Err(Error::Config(format!(
                "{points_per_axis}^{} grid points exceeds the cap of {MAX_GRID_POINTS}",
                bx.dim
            )));
        }
        Ok(Self { half_width: bx.half_width, dim: bx.dim, points_per_axis })
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        if self.points_per_axis == 1 {
            0.0
        } else {
            2.0 * self.half_width / (self.points_per_axis - 1) as f64
        }
    }

    pub fn info(&self) -> GridInfo {
        GridInfo {
            points_per_axis: self.points_per_axis,
            dim: self.dim,
            half_width: self.half_width,
            spacing: self.spacing(),
            total_points: self.len(),
        }
    }

    fn axis_value(&self, k: usize) -> f64 {
        if self.points_per_axis == 1 {
            0.0
        } else {
            -self.half_width + k as f64 * self.spacing()
        }
    }

    /// Point with flat index `idx`; the last axis varies fastest.
    pub fn point(&self, mut idx: usize) -> Param {
        let mut v = DVector::zeros(self.dim);
        for a in (0..self.dim).rev() {
            v[a] = self.axis_value(idx % self.points_per_axis);
            idx /= self.points_per_axis;
        }
        v
    }

    pub fn points(&self) -> impl Iterator<Item = Param> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// Flat indices of the neighbours one step up along each axis.
    pub fn forward_neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let k = self.points_per_axis;
        (0..self.dim).filter_map(move |a| {
            let stride = k.pow((self.dim - 1 - a) as u32);
            let coord = (idx / stride) % k;
            (coord + 1 < k).then_some(idx + stride)
        })
    }

    /// Largest `|f(θ) − f(θ')| / ‖θ − θ'‖` over axis-adjacent pairs, given `f`
    /// already evaluated at every grid point.
    pub fn max_difference_quotient(&self, values: &[f64]) -> f64 {
        let h = self.spacing();
        if h == 0.0 {
            return 0.0;
        }
        let mut best = 0.0_f64;
        for i in 0..self.len() {
            for j in self.forward_neighbors(i) {
                best = best.max((values[i] - values[j]).abs() / h);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_and_center() {
        let bx = ParamBox::new(3.0, 3).unwrap();
        let g = ProductGrid::new(&bx, 9).unwrap();
        assert_eq!(g.len(), 729);
        assert_eq!(g.point(0).as_slice(), &[-3.0, -3.0, -3.0]);
        assert_eq!(g.point(728).as_slice(), &[3.0, 3.0, 3.0]);
        assert_eq!(g.point(364).as_slice(), &[0.0, 0.0, 0.0]);
        assert!(g.points().all(|p| bx.contains(&p)));
    }

    #[test]
    fn neighbour_count() {
        let bx = ParamBox::new(1.0, 3).unwrap();
        let g = ProductGrid::new(&bx, 4).unwrap();
        let pairs: usize = (0..g.len()).map(|i| g.forward_neighbors(i).count()).sum();
        assert_eq!(pairs, 3 * 3 * 16);
        for i in 0..g.len() {
            for j in g.forward_neighbors(i) {
                let d = (g.point(i) - g.point(j)).norm();
                assert!((d - g.spacing()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_function_quotient() {
        let bx = ParamBox::new(2.0, 2).unwrap();
        let g = ProductGrid::new(&bx, 5).unwrap();
        let values: Vec<f64> = g.points().map(|p| 3.0 * p[0] - 0.5 * p[1]).collect();
        assert!((g.max_difference_quotient(&values) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_grid_rejected() {
        let bx = ParamBox::new(1.0, 21).unwrap();
        assert!(ProductGrid::new(&bx, 9).is_err());
    }
}
