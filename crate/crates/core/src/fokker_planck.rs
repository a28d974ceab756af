//! Conservative, separable discretization of the linear Fokker-Planck
//! operator `d_v (M d_v (f / M))` with a geometric-mean face Maxwellian.
//!
//! With `M` a Gaussian centered at the local field `E_p`, the face ratio
//! `sqrt(M_{p,q} / M_{p,q+1})` factors as `alpha_{q+1/2} * beta_p` with
//!
//! ```text
//! alpha_{q+1/2} = exp(dv (v_q + v_{q+1}) / 4),   beta_p = exp(-dv E_p / 2)
//! ```
//!
//! so the three-point stencil at `(p, q)` is
//!
//! ```text
//! dv^2 L_h(f) = a+ b f_{q+1} - (1/(a+ b) + a- b) f_q + 1/(a- b) f_{q-1}
//! ```
//!
//! where `a+-` are the face weights at `q +- 1/2`. Velocity boundary faces
//! carry zero flux and their terms are dropped, which keeps per-cell mass
//! exactly conserved.
//!
//! The operator is the tensor sum `beta (x) T_alpha + beta^-1 (x) T_inv_alpha`:
//! `T_alpha` collects the `alpha` terms (upper bidiagonal) and `T_inv_alpha`
//! the `1/alpha` terms (lower bidiagonal). Each of them conserves mass on its
//! own.

use nalgebra::DMatrix;
use std::f64::consts::PI;

use crate::error::{Result, VpfpError};
use crate::grid::{check_len, PhaseGrid};
use crate::linalg::Tridiag;

/// Largest admissible `|dv * E_p / 2|` before `exp` overflows.
pub const MAX_EXPONENT: f64 = 700.0;

/// Tolerance for the orthonormality check on incoming bases.
pub const ORTHO_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FPWeights {
    /// Interior face weights `alpha_{q+1/2}`, `q = 1..nv-1`.
    pub alpha_half: Vec<f64>,
    pub beta: Vec<f64>,
    /// Local relaxation parameter per spatial cell.
    pub eps: Vec<f64>,
    /// Field the weights were built from.
    pub e: Vec<f64>,
    /// Analytic Maxwellian `exp(-(v - E)^2 / 2) / sqrt(2 pi)`, `nx x nv`.
    pub m: DMatrix<f64>,
    /// Maxwellian renormalized to unit discrete velocity mass per cell.
    pub m_tilde: DMatrix<f64>,
}

impl FPWeights {
    /// Geometric-mean face value of the normalized Maxwellian at `(p, q+1/2)`.
    pub fn m_face(&self, p: usize, q: usize) -> f64 {
        (self.m_tilde[(p, q)] * self.m_tilde[(p, q + 1)]).sqrt()
    }

    pub fn nx(&self) -> usize {
        self.beta.len()
    }
}

pub fn alpha_faces(grid: &PhaseGrid) -> Vec<f64> {
    (0..grid.nv - 1)
        .map(|q| (grid.dv * (grid.v[q] + grid.v[q + 1]) / 4.0).exp())
        .collect()
}

pub fn maxwellian(v: f64, e: f64) -> f64 {
    (-(v - e) * (v - e) / 2.0).exp() / (2.0 * PI).sqrt()
}

pub fn compute_weights(e: &[f64], eps: &[f64], grid: &PhaseGrid) -> Result<FPWeights> {
    check_len("fokker_planck::compute_weights", grid.nx, e.len())?;
    check_len("fokker_planck::compute_weights", grid.nx, eps.len())?;
    if let Some(p) = eps.iter().position(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(VpfpError::Config(format!(
            "fokker_planck: eps must be positive, got {} at cell {p}",
            eps[p]
        )));
    }
    let mut beta = Vec::with_capacity(grid.nx);
    for (p, &ep) in e.iter().enumerate() {
        let arg = -grid.dv * ep / 2.0;
        if !arg.is_finite() || arg.abs() > MAX_EXPONENT {
            return Err(VpfpError::Range {
                module: "fokker_planck::compute_weights",
                detail: format!("exp overflow for beta at cell {p} (E = {ep:e})"),
            });
        }
        beta.push(arg.exp());
    }
    let m = DMatrix::from_fn(grid.nx, grid.nv, |p, q| maxwellian(grid.v[q], e[p]));
    let mut m_tilde = m.clone();
    for p in 0..grid.nx {
        let mass: f64 = m.row(p).iter().sum::<f64>() * grid.dv;
        if !(mass > 0.0) {
            return Err(VpfpError::Range {
                module: "fokker_planck::compute_weights",
                detail: format!("Maxwellian underflows on the velocity grid at cell {p}"),
            });
        }
        m_tilde.row_mut(p).scale_mut(1.0 / mass);
    }
    Ok(FPWeights {
        alpha_half: alpha_faces(grid),
        beta,
        eps: eps.to_vec(),
        e: e.to_vec(),
        m,
        m_tilde,
    })
}

/// Applies `L_h` to one velocity row at spatial cell with weight `beta`.
fn apply_row(
    alpha: &[f64],
    beta: f64,
    dv: f64,
    row: impl Fn(usize) -> f64,
    nv: usize,
    out: &mut [f64],
) {
    let inv_dv2 = 1.0 / (dv * dv);
    for q in 0..nv {
        let mut s = 0.0;
        if q + 1 < nv {
            let a = alpha[q] * beta;
            s += a * row(q + 1) - row(q) / a;
        }
        if q > 0 {
            let a = alpha[q - 1] * beta;
            s -= a * row(q) - row(q - 1) / a;
        }
        out[q] = s * inv_dv2;
    }
}

/// Full-tensor application of `L_h` (no `1/eps` factor).
pub fn apply_fp_full(
    f: &DMatrix<f64>,
    weights: &FPWeights,
    grid: &PhaseGrid,
) -> Result<DMatrix<f64>> {
    grid.check_tensor("fokker_planck::apply_fp_full", f)?;
    check_len("fokker_planck::apply_fp_full", grid.nx, weights.beta.len())?;
    let mut out = DMatrix::zeros(grid.nx, grid.nv);
    let mut buf = vec![0.0; grid.nv];
    for p in 0..grid.nx {
        apply_row(
            &weights.alpha_half,
            weights.beta[p],
            grid.dv,
            |q| f[(p, q)],
            grid.nv,
            &mut buf,
        );
        for q in 0..grid.nv {
            out[(p, q)] = buf[q];
        }
    }
    Ok(out)
}

/// Velocity factors of the separable operator.
#[derive(Debug, Clone, PartialEq)]
pub struct FPVelocityOps {
    pub t_alpha: Tridiag,
    pub t_inv_alpha: Tridiag,
}

impl FPVelocityOps {
    /// `beta T_alpha + beta^-1 T_inv_alpha` as a single tridiagonal operator.
    pub fn at_beta(&self, beta: f64) -> Tridiag {
        self.t_alpha.combine(beta, &self.t_inv_alpha, 1.0 / beta)
    }
}

pub fn velocity_ops(weights: &FPWeights, grid: &PhaseGrid) -> FPVelocityOps {
    velocity_ops_from_alpha(&weights.alpha_half, grid)
}

pub fn velocity_ops_from_alpha(alpha: &[f64], grid: &PhaseGrid) -> FPVelocityOps {
    let n = grid.nv;
    let inv_dv2 = 1.0 / (grid.dv * grid.dv);
    let mut t_alpha = Tridiag::zeros(n);
    let mut t_inv = Tridiag::zeros(n);
    for q in 0..n {
        if q + 1 < n {
            t_alpha.upper[q] = alpha[q] * inv_dv2;
            t_inv.diag[q] -= inv_dv2 / alpha[q];
        }
        if q > 0 {
            t_alpha.diag[q] -= alpha[q - 1] * inv_dv2;
            t_inv.lower[q] = inv_dv2 / alpha[q - 1];
        }
    }
    FPVelocityOps {
        t_alpha,
        t_inv_alpha: t_inv,
    }
}

/// Applies a tridiagonal velocity operator to every column of `basis`
/// (`nv x r`).
pub fn apply_columns(t: &Tridiag, basis: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(basis.nrows(), basis.ncols());
    for (j, col) in basis.column_iter().enumerate() {
        let res = t.apply(col.as_slice());
        out.column_mut(j).copy_from_slice(&res);
    }
    out
}

pub(crate) fn check_orthonormal(
    module: &'static str,
    basis: &DMatrix<f64>,
    weight: f64,
) -> Result<()> {
    let r = basis.ncols();
    let gram = basis.transpose() * basis * weight;
    let dev = (gram - DMatrix::<f64>::identity(r, r)).amax();
    if dev > ORTHO_TOL {
        return Err(VpfpError::NotOrthonormal {
            module,
            deviation: dev,
        });
    }
    Ok(())
}

/// Velocity Gram matrices `A_{jl} = <T_alpha V_l, V_j>_v` and
/// `B_{jl} = <T_inv_alpha V_l, V_j>_v`.
pub fn gram_velocity(
    v_basis: &DMatrix<f64>,
    ops: &FPVelocityOps,
    grid: &PhaseGrid,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if v_basis.nrows() != grid.nv {
        return Err(VpfpError::dim(
            "fokker_planck::gram_velocity",
            grid.nv,
            v_basis.nrows(),
        ));
    }
    check_orthonormal("fokker_planck::gram_velocity", v_basis, grid.dv)?;
    Ok(gram_velocity_unchecked(v_basis, ops, grid.dv))
}

pub(crate) fn gram_velocity_unchecked(
    v_basis: &DMatrix<f64>,
    ops: &FPVelocityOps,
    dv: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let vt = v_basis.transpose();
    let a = &vt * apply_columns(&ops.t_alpha, v_basis) * dv;
    let b = &vt * apply_columns(&ops.t_inv_alpha, v_basis) * dv;
    (a, b)
}

/// Spatial Gram matrices with the relaxation scale folded in:
/// `P_{ik} = sum_p (beta_p / eps_p) X_{k,p} X_{i,p} dx`,
/// `Q_{ik} = sum_p X_{k,p} X_{i,p} / (beta_p eps_p) dx`.
pub fn gram_spatial(
    x_basis: &DMatrix<f64>,
    weights: &FPWeights,
    grid: &PhaseGrid,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if x_basis.nrows() != grid.nx {
        return Err(VpfpError::dim(
            "fokker_planck::gram_spatial",
            grid.nx,
            x_basis.nrows(),
        ));
    }
    check_orthonormal("fokker_planck::gram_spatial", x_basis, grid.dx)?;
    Ok(gram_spatial_unchecked(x_basis, weights, grid.dx))
}

pub(crate) fn gram_spatial_unchecked(
    x_basis: &DMatrix<f64>,
    weights: &FPWeights,
    dx: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut xb = x_basis.clone();
    let mut xq = x_basis.clone();
    for p in 0..x_basis.nrows() {
        let (b, e) = (weights.beta[p], weights.eps[p]);
        xb.row_mut(p).scale_mut(b / e);
        xq.row_mut(p).scale_mut(1.0 / (b * e));
    }
    let xt = x_basis.transpose();
    (&xt * xb * dx, &xt * xq * dx)
}
