//! Uniform cell-centered phase-space grids and the discrete inner products
//! built on them.
//!
//! Cell centers are `x_p = x_min + (p - 1/2) dx` for `p = 1..nx` (stored
//! 0-based), and likewise in `v`. All inner products carry the cell measure,
//! so `inner_v(1, 1)` is the velocity-domain length.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VpfpError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub dx: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub nv: usize,
    pub dv: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(
        x_min: f64,
        x_max: f64,
        nx: usize,
        v_min: f64,
        v_max: f64,
        nv: usize,
    ) -> Result<Self> {
        if nx < 2 || nv < 2 {
            return Err(VpfpError::Config(format!(
                "grid needs at least 2 cells per axis, got nx={nx}, nv={nv}"
            )));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(VpfpError::Config(format!(
                "invalid x bounds [{x_min}, {x_max}]"
            )));
        }
        if !(v_max > v_min) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(VpfpError::Config(format!(
                "invalid v bounds [{v_min}, {v_max}]"
            )));
        }
        let dx = (x_max - x_min) / nx as f64;
        let dv = (v_max - v_min) / nv as f64;
        let x = (0..nx).map(|p| x_min + (p as f64 + 0.5) * dx).collect();
        let v = (0..nv).map(|q| v_min + (q as f64 + 0.5) * dv).collect();
        Ok(PhaseGrid {
            x_min,
            x_max,
            nx,
            dx,
            v_min,
            v_max,
            nv,
            dv,
            x,
            v,
        })
    }

    /// Length of the truncated velocity domain.
    pub fn lv(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn lx(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn inner_x(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_len("grid::inner_x", self.nx, a.len())?;
        check_len("grid::inner_x", self.nx, b.len())?;
        Ok(dot(a, b) * self.dx)
    }

    pub fn inner_v(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_len("grid::inner_v", self.nv, a.len())?;
        check_len("grid::inner_v", self.nv, b.len())?;
        Ok(dot(a, b) * self.dv)
    }

    /// Phase-space inner product; tensors are stored `nx x nv`.
    pub fn inner_xv(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
        self.check_tensor("grid::inner_xv", a)?;
        self.check_tensor("grid::inner_xv", b)?;
        Ok(a.dot(b) * self.dx * self.dv)
    }

    pub fn norm2_x(&self, a: &[f64]) -> Result<f64> {
        Ok(self.inner_x(a, a)?.sqrt())
    }

    pub fn norm2_v(&self, a: &[f64]) -> Result<f64> {
        Ok(self.inner_v(a, a)?.sqrt())
    }

    pub fn norm2_xv(&self, a: &DMatrix<f64>) -> Result<f64> {
        Ok(self.inner_xv(a, a)?.sqrt())
    }

    pub fn norm1_x(&self, a: &[f64]) -> Result<f64> {
        check_len("grid::norm1_x", self.nx, a.len())?;
        Ok(a.iter().map(|t| t.abs()).sum::<f64>() * self.dx)
    }

    pub fn norm1_v(&self, a: &[f64]) -> Result<f64> {
        check_len("grid::norm1_v", self.nv, a.len())?;
        Ok(a.iter().map(|t| t.abs()).sum::<f64>() * self.dv)
    }

    pub fn norm1_xv(&self, a: &DMatrix<f64>) -> Result<f64> {
        self.check_tensor("grid::norm1_xv", a)?;
        Ok(a.iter().map(|t| t.abs()).sum::<f64>() * self.dx * self.dv)
    }

    /// Zeroth velocity moment of a dense tensor, one value per spatial cell.
    pub fn velocity_sum(&self, f: &DMatrix<f64>) -> Vec<f64> {
        (0..f.nrows())
            .map(|p| f.row(p).iter().sum::<f64>() * self.dv)
            .collect()
    }

    pub fn check_tensor(&self, module: &'static str, f: &DMatrix<f64>) -> Result<()> {
        if f.nrows() != self.nx || f.ncols() != self.nv {
            return Err(VpfpError::dim(
                module,
                format!("{}x{}", self.nx, self.nv),
                format!("{}x{}", f.nrows(), f.ncols()),
            ));
        }
        Ok(())
    }

    /// Dense tensor sampled from `f(x, v)` at cell centers.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.nx, self.nv, |p, q| f(self.x[p], self.v[q]))
    }
}

/// Free-function constructor mirroring [`PhaseGrid::new`].
pub fn make_grid(
    x_min: f64,
    x_max: f64,
    nx: usize,
    v_min: f64,
    v_max: f64,
    nv: usize,
) -> Result<PhaseGrid> {
    PhaseGrid::new(x_min, x_max, nx, v_min, v_max, nv)
}

pub(crate) fn check_len(module: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(VpfpError::dim(module, expected, got));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(s, t)| s * t).sum()
}
