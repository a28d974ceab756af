//! Transport `-v d_x f` with periodic first-order upwinding, in full-tensor
//! form and projected onto low-rank factors.
//!
//! The discrete operator is `-(v+ (x) D- + v- (x) D+)` with
//! `v+ = max(v, 0)`, `v- = min(v, 0)` and periodic one-sided differences
//! `D-`, `D+` in `x`. Every projection below equals the projection of the
//! full-tensor operator applied to the reconstructed tensor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VpfpError};
use crate::grid::PhaseGrid;

#[derive(Debug, Clone)]
pub struct UpwindOps {
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub dx: f64,
}

impl UpwindOps {
    pub fn new(grid: &PhaseGrid) -> Self {
        UpwindOps {
            v_plus: grid.v.iter().map(|&v| v.max(0.0)).collect(),
            v_minus: grid.v.iter().map(|&v| v.min(0.0)).collect(),
            dx: grid.dx,
        }
    }

    /// Periodic backward difference `(u_p - u_{p-1}) / dx`.
    pub fn d_minus(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        (0..n)
            .map(|p| (u[p] - u[(p + n - 1) % n]) / self.dx)
            .collect()
    }

    /// Periodic forward difference `(u_{p+1} - u_p) / dx`.
    pub fn d_plus(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        (0..n).map(|p| (u[(p + 1) % n] - u[p]) / self.dx).collect()
    }

    fn d_minus_cols(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        map_cols(m, |c| self.d_minus(c))
    }

    fn d_plus_cols(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        map_cols(m, |c| self.d_plus(c))
    }
}

fn map_cols(m: &DMatrix<f64>, op: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (j, col) in m.column_iter().enumerate() {
        out.column_mut(j).copy_from_slice(&op(col.as_slice()));
    }
    out
}

/// Courant number `dt * max|v| / dx` of the explicit transport.
pub fn cfl_number(dt: f64, grid: &PhaseGrid) -> f64 {
    let vmax = grid.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    dt * vmax / grid.dx
}

pub fn apply_advection_full(f: &DMatrix<f64>, grid: &PhaseGrid) -> Result<DMatrix<f64>> {
    grid.check_tensor("advection::apply_advection_full", f)?;
    let up = UpwindOps::new(grid);
    let dm = up.d_minus_cols(f);
    let dp = up.d_plus_cols(f);
    Ok(DMatrix::from_fn(grid.nx, grid.nv, |p, q| {
        -(up.v_plus[q] * dm[(p, q)] + up.v_minus[q] * dp[(p, q)])
    }))
}

/// Velocity moments of the split advection speeds against a basis.
#[derive(Debug, Clone)]
pub struct VelocityMoments {
    /// `C+_{lj} = <v+ V_l, V_j>_v`.
    pub c_plus: DMatrix<f64>,
    pub c_minus: DMatrix<f64>,
    /// `m+_l = <v+ V_l, 1>_v`.
    pub m_plus: DVector<f64>,
    pub m_minus: DVector<f64>,
}

pub fn velocity_moment_mats(v_basis: &DMatrix<f64>, grid: &PhaseGrid) -> Result<VelocityMoments> {
    if v_basis.nrows() != grid.nv {
        return Err(VpfpError::dim(
            "advection::velocity_moment_mats",
            grid.nv,
            v_basis.nrows(),
        ));
    }
    let up = UpwindOps::new(grid);
    let scaled = |w: &[f64]| {
        let mut m = v_basis.clone();
        for q in 0..grid.nv {
            m.row_mut(q).scale_mut(w[q]);
        }
        m
    };
    let vp = scaled(&up.v_plus);
    let vm = scaled(&up.v_minus);
    let vt = v_basis.transpose();
    let col_sums = |m: &DMatrix<f64>| {
        DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() * grid.dv))
    };
    Ok(VelocityMoments {
        c_plus: &vt * &vp * grid.dv,
        c_minus: &vt * &vm * grid.dv,
        m_plus: col_sums(&vp),
        m_minus: col_sums(&vm),
    })
}

/// `Dm_{ik} = <D- X_k, X_i>_x` and `Dp_{ik} = <D+ X_k, X_i>_x`.
pub fn spatial_difference_mats(
    x_basis: &DMatrix<f64>,
    grid: &PhaseGrid,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if x_basis.nrows() != grid.nx {
        return Err(VpfpError::dim(
            "advection::spatial_difference_mats",
            grid.nx,
            x_basis.nrows(),
        ));
    }
    let up = UpwindOps::new(grid);
    let xt = x_basis.transpose();
    Ok((
        &xt * up.d_minus_cols(x_basis) * grid.dx,
        &xt * up.d_plus_cols(x_basis) * grid.dx,
    ))
}

/// `<A_h f, V_j>_v` for `f = sum_l K_l V_l`; returns `nx x r`.
pub fn project_advection_k(
    k: &DMatrix<f64>,
    v_basis: &DMatrix<f64>,
    grid: &PhaseGrid,
) -> Result<DMatrix<f64>> {
    let mom = velocity_moment_mats(v_basis, grid)?;
    project_advection_k_with(k, &mom, grid)
}

pub fn project_advection_k_with(
    k: &DMatrix<f64>,
    mom: &VelocityMoments,
    grid: &PhaseGrid,
) -> Result<DMatrix<f64>> {
    if k.nrows() != grid.nx || k.ncols() != mom.c_plus.nrows() {
        return Err(VpfpError::dim(
            "advection::project_advection_k",
            format!("{}x{}", grid.nx, mom.c_plus.nrows()),
            format!("{}x{}", k.nrows(), k.ncols()),
        ));
    }
    let up = UpwindOps::new(grid);
    Ok(-(up.d_minus_cols(k) * &mom.c_plus + up.d_plus_cols(k) * &mom.c_minus))
}

/// `<A_h f, X_i V_j>_xv` for `f = X S V^T`; returns `r x r`. The S-step
/// applies the sign of the backward substep.
pub fn project_advection_s(
    s: &DMatrix<f64>,
    x_basis: &DMatrix<f64>,
    v_basis: &DMatrix<f64>,
    grid: &PhaseGrid,
) -> Result<DMatrix<f64>> {
    let (dm, dp) = spatial_difference_mats(x_basis, grid)?;
    let mom = velocity_moment_mats(v_basis, grid)?;
    Ok(project_advection_s_with(s, &dm, &dp, &mom))
}

pub fn project_advection_s_with(
    s: &DMatrix<f64>,
    dm: &DMatrix<f64>,
    dp: &DMatrix<f64>,
    mom: &VelocityMoments,
) -> DMatrix<f64> {
    -(dm * s * &mom.c_plus + dp * s * &mom.c_minus)
}

/// `<A_h f, X_i>_x` for `f = sum_k X_k L_k`; returns `nv x r`.
pub fn project_advection_l(
    l: &DMatrix<f64>,
    x_basis: &DMatrix<f64>,
    grid: &PhaseGrid,
) -> Result<DMatrix<f64>> {
    if l.nrows() != grid.nv {
        return Err(VpfpError::dim(
            "advection::project_advection_l",
            grid.nv,
            l.nrows(),
        ));
    }
    let (dm, dp) = spatial_difference_mats(x_basis, grid)?;
    Ok(project_advection_l_with(l, &dm, &dp, grid))
}

pub fn project_advection_l_with(
    l: &DMatrix<f64>,
    dm: &DMatrix<f64>,
    dp: &DMatrix<f64>,
    grid: &PhaseGrid,
) -> DMatrix<f64> {
    let up = UpwindOps::new(grid);
    let mut lp = l * dm.transpose();
    let mut lm = l * dp.transpose();
    for q in 0..grid.nv {
        lp.row_mut(q).scale_mut(up.v_plus[q]);
        lm.row_mut(q).scale_mut(up.v_minus[q]);
    }
    -(lp + lm)
}

/// `<A_h f, 1>_v` for `f = sum_l K_l V_l`, one value per spatial cell.
pub fn advection_density_moment(
    k: &DMatrix<f64>,
    v_basis: &DMatrix<f64>,
    grid: &PhaseGrid,
) -> Result<Vec<f64>> {
    let mom = velocity_moment_mats(v_basis, grid)?;
    if k.nrows() != grid.nx || k.ncols() != v_basis.ncols() {
        return Err(VpfpError::dim(
            "advection::advection_density_moment",
            format!("{}x{}", grid.nx, v_basis.ncols()),
            format!("{}x{}", k.nrows(), k.ncols()),
        ));
    }
    let up = UpwindOps::new(grid);
    let out = -(up.d_minus_cols(k) * &mom.m_plus + up.d_plus_cols(k) * &mom.m_minus);
    Ok(out.iter().copied().collect())
}
