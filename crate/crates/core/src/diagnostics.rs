//! Asymptotic-preserving diagnostics: micro-macro decomposition, AP errors,
//! the coercivity and fluctuation constants of the relaxation analysis, and
//! randomized audits of the corresponding inequalities.
//!
//! AP errors use the analytic Maxwellian. The micro-macro split, the
//! coercivity audit and the residual certificate use the renormalized one so
//! that the fluctuation has exactly zero velocity mass.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::advection::project_advection_l;
use crate::error::{Result, VpfpError};
use crate::fokker_planck::{apply_fp_full, FPWeights};
use crate::grid::PhaseGrid;
use crate::steppers::LStepTrace;

/// Absolute slack allowed on one-sided inequality checks.
pub const CHECK_SLACK: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MicroMacro {
    pub rho: Vec<f64>,
    /// `f - rho M_tilde`.
    pub g: DMatrix<f64>,
}

pub fn micro_macro(f: &DMatrix<f64>, weights: &FPWeights, grid: &PhaseGrid) -> Result<MicroMacro> {
    grid.check_tensor("diagnostics::micro_macro", f)?;
    let rho = grid.velocity_sum(f);
    let g = DMatrix::from_fn(grid.nx, grid.nv, |p, q| {
        f[(p, q)] - rho[p] * weights.m_tilde[(p, q)]
    });
    Ok(MicroMacro { rho, g })
}

fn equilibrium_gap(
    f: &DMatrix<f64>,
    weights: &FPWeights,
    grid: &PhaseGrid,
    module: &'static str,
) -> Result<DMatrix<f64>> {
    grid.check_tensor(module, f)?;
    let rho = grid.velocity_sum(f);
    Ok(DMatrix::from_fn(grid.nx, grid.nv, |p, q| {
        f[(p, q)] - rho[p] * weights.m[(p, q)]
    }))
}

/// `||f - rho M||` in discrete `L1(x, v)`.
pub fn ap_error_global(f: &DMatrix<f64>, weights: &FPWeights, grid: &PhaseGrid) -> Result<f64> {
    let gap = equilibrium_gap(f, weights, grid, "diagnostics::ap_error_global")?;
    grid.norm1_xv(&gap)
}

/// `||f(x_p, .) - rho_p M_p||` in discrete `L1(v)`, per spatial cell.
pub fn ap_error_pointwise(
    f: &DMatrix<f64>,
    weights: &FPWeights,
    grid: &PhaseGrid,
) -> Result<Vec<f64>> {
    let gap = equilibrium_gap(f, weights, grid, "diagnostics::ap_error_pointwise")?;
    Ok((0..grid.nx)
        .map(|p| gap.row(p).iter().map(|t| t.abs()).sum::<f64>() * grid.dv)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APConstants {
    pub lambda_n: f64,
    pub gamma_h: f64,
    pub kappa_h: f64,
    /// `gamma / (gamma - kappa M_max)`; absent when the small-fluctuation
    /// assumption fails.
    pub theta: Option<f64>,
    pub m_min: f64,
    pub m_max: f64,
    pub delta_beta_inf: f64,
    pub beta_bar: f64,
    pub c_beta: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub assumption_ok: bool,
}

pub fn ap_constants(weights: &FPWeights, grid: &PhaseGrid) -> APConstants {
    let dv2 = grid.dv * grid.dv;
    let lambda_n = 4.0 / dv2 * (PI / (2.0 * grid.nv as f64)).sin().powi(2);
    let (mut m_min, mut m_max) = (f64::INFINITY, 0.0f64);
    for p in 0..weights.nx() {
        for q in 0..grid.nv - 1 {
            let m = weights.m_face(p, q);
            m_min = m_min.min(m);
            m_max = m_max.max(m);
        }
    }
    let gamma_h = m_min * lambda_n / (1.0 + (grid.lv() * m_max).sqrt()).powi(2);

    let beta_bar = weights.beta.iter().sum::<f64>() / weights.beta.len() as f64;
    let delta_beta_inf = weights
        .beta
        .iter()
        .map(|b| (b - beta_bar).abs())
        .fold(0.0, f64::max);
    let c_beta = weights
        .beta
        .iter()
        .map(|b| 1.0 / (b * beta_bar))
        .fold(0.0, f64::max);
    let alpha_min = weights
        .alpha_half
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let alpha_max = weights.alpha_half.iter().copied().fold(0.0, f64::max);
    let kappa_h = delta_beta_inf * (2.0 * alpha_max / dv2 + c_beta * 2.0 / (alpha_min * dv2));

    let assumption_ok = kappa_h * m_max < gamma_h;
    let theta = assumption_ok.then(|| gamma_h / (gamma_h - kappa_h * m_max));
    APConstants {
        lambda_n,
        gamma_h,
        kappa_h,
        theta,
        m_min,
        m_max,
        delta_beta_inf,
        beta_bar,
        c_beta,
        alpha_min,
        alpha_max,
        assumption_ok,
    }
}

/// `-<L_h(f), g / M_tilde> / (gamma_h ||g / M_tilde||^2)` for `f = rho M_tilde + g`.
pub fn coercivity_ratio(
    rho: &[f64],
    g: &DMatrix<f64>,
    weights: &FPWeights,
    grid: &PhaseGrid,
    gamma_h: f64,
) -> Result<f64> {
    grid.check_tensor("diagnostics::coercivity_ratio", g)?;
    let f = DMatrix::from_fn(grid.nx, grid.nv, |p, q| {
        rho[p] * weights.m_tilde[(p, q)] + g[(p, q)]
    });
    let u = g.component_div(&weights.m_tilde);
    let lf = apply_fp_full(&f, weights, grid)?;
    let num = -grid.inner_xv(&lf, &u)?;
    let den = gamma_h * grid.inner_xv(&u, &u)?;
    Ok(num / den)
}

/// Relative fluctuation `g = M_tilde (u - <u, M_tilde>_v)`, which has zero
/// velocity mass in every cell.
pub fn fluctuation_from_relative(
    u: &DMatrix<f64>,
    weights: &FPWeights,
    grid: &PhaseGrid,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(grid.nx, grid.nv);
    for p in 0..grid.nx {
        let mean: f64 = (0..grid.nv)
            .map(|q| u[(p, q)] * weights.m_tilde[(p, q)])
            .sum::<f64>()
            * grid.dv;
        for q in 0..grid.nv {
            g[(p, q)] = weights.m_tilde[(p, q)] * (u[(p, q)] - mean);
        }
    }
    g
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub trials: usize,
    pub gamma_h: f64,
    /// Smallest observed `-<L f, u> / (gamma_h ||u||^2)`.
    pub min_ratio: f64,
    pub passed: bool,
}

pub fn verify_coercivity(
    weights: &FPWeights,
    grid: &PhaseGrid,
    trials: usize,
    seed: u64,
) -> Result<CoercivityReport> {
    let consts = ap_constants(weights, grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = f64::INFINITY;
    for _ in 0..trials {
        let u = DMatrix::from_fn(grid.nx, grid.nv, |_, _| rng.random_range(-1.0..1.0));
        let g = fluctuation_from_relative(&u, weights, grid);
        let rho: Vec<f64> = (0..grid.nx).map(|_| rng.random_range(0.1..2.0)).collect();
        let ratio = coercivity_ratio(&rho, &g, weights, grid, consts.gamma_h)?;
        min_ratio = min_ratio.min(ratio);
    }
    Ok(CoercivityReport {
        trials,
        gamma_h: consts.gamma_h,
        min_ratio,
        passed: trials == 0 || min_ratio >= 1.0,
    })
}

/// Orthogonal complement of the spatial projector: `h - X X^T h dx`.
pub fn complement_x(h: &DMatrix<f64>, x_basis: &DMatrix<f64>, dx: f64) -> DMatrix<f64> {
    h - x_basis * (x_basis.transpose() * h) * dx
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub trials: usize,
    pub kappa_h: f64,
    /// Largest `||(I - P_X) L_h f||` over trials, with `||f|| = 1`.
    pub max_lhs: f64,
    /// `max_lhs / kappa_h` (zero when `kappa_h = 0`).
    pub tightness: f64,
    pub passed: bool,
}

pub fn verify_projection_bound(
    x_basis: &DMatrix<f64>,
    weights: &FPWeights,
    grid: &PhaseGrid,
    trials: usize,
    seed: u64,
) -> Result<ProjectionReport> {
    if x_basis.nrows() != grid.nx {
        return Err(VpfpError::dim(
            "diagnostics::verify_projection_bound",
            grid.nx,
            x_basis.nrows(),
        ));
    }
    crate::fokker_planck::check_orthonormal(
        "diagnostics::verify_projection_bound",
        x_basis,
        grid.dx,
    )?;
    let consts = ap_constants(weights, grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = x_basis.ncols();
    let mut max_lhs = 0.0f64;
    let mut passed = true;
    for _ in 0..trials {
        let y = DMatrix::from_fn(r, grid.nv, |_, _| rng.random_range(-1.0..1.0));
        let mut f = x_basis * y;
        f /= grid.norm2_xv(&f)?;
        let lf = apply_fp_full(&f, weights, grid)?;
        let lhs = grid.norm2_xv(&complement_x(&lf, x_basis, grid.dx))?;
        max_lhs = max_lhs.max(lhs);
        passed &= lhs <= consts.kappa_h + CHECK_SLACK;
    }
    let tightness = if consts.kappa_h > 0.0 {
        max_lhs / consts.kappa_h
    } else {
        0.0
    };
    Ok(ProjectionReport {
        trials,
        kappa_h: consts.kappa_h,
        max_lhs,
        tightness,
        passed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub constants: APConstants,
    /// Relaxation parameter used in the bounds (largest cell value).
    pub eps: f64,
    pub uniform_eps: bool,
    pub g_norm: f64,
    pub rho_norm: f64,
    pub residual: f64,
    pub residual_bound: Option<f64>,
    pub distance: f64,
    pub distance_bound: Option<f64>,
    /// `||L_h f - eps G||`, zero up to roundoff for a uniform `eps`.
    pub projected_defect: f64,
    pub residual_ok: bool,
    pub distance_ok: bool,
    /// Both bounds hold, or the small-fluctuation assumption fails and
    /// nothing is asserted.
    pub passed: bool,
}

/// Residual certificate for the state produced by an L-step.
///
/// `G = (f^{n+1} - f^(2)) / h - P_X A_h f^(2)` is evaluated on the
/// reconstructed tensors, with `A_h f = v d_x f` (sign of the transport
/// term on the left-hand side).
pub fn residual_certificate(trace: &LStepTrace, grid: &PhaseGrid) -> Result<CertificateReport> {
    let w = &trace.weights;
    if !(trace.h > 0.0) {
        return Err(VpfpError::Config(
            "diagnostics::residual_certificate needs a positive step".into(),
        ));
    }
    let consts = ap_constants(w, grid);
    let eps = w.eps.iter().copied().fold(0.0, f64::max);
    let eps_min = w.eps.iter().copied().fold(f64::INFINITY, f64::min);
    let x = &trace.x_new;
    let f_new = x * trace.l_after.transpose();
    let adv_l = project_advection_l(&trace.l_before, x, grid)?;
    let g_mat = x * ((&trace.l_after - &trace.l_before) / trace.h - adv_l).transpose();
    let g_norm = grid.norm2_xv(&g_mat)?;

    let lf = apply_fp_full(&f_new, w, grid)?;
    let residual = grid.norm2_xv(&lf)?;
    let projected_defect = grid.norm2_xv(&(&lf - &g_mat * eps))?;
    let mm = micro_macro(&f_new, w, grid)?;
    let rho_norm = grid.norm2_x(&mm.rho)?;
    let distance = grid.norm2_xv(&mm.g)?;

    let (residual_bound, distance_bound) = match consts.theta {
        Some(theta) => {
            let core = eps * g_norm + consts.kappa_h * consts.m_max * grid.lv().sqrt() * rho_norm;
            (
                Some(theta * core),
                Some(consts.m_max / consts.gamma_h * theta * core),
            )
        }
        None => (None, None),
    };
    let residual_ok = residual_bound.is_some_and(|b| residual <= b + CHECK_SLACK);
    let distance_ok = distance_bound.is_some_and(|b| distance <= b + CHECK_SLACK);
    Ok(CertificateReport {
        passed: !consts.assumption_ok || (residual_ok && distance_ok),
        constants: consts,
        eps,
        uniform_eps: eps == eps_min,
        g_norm,
        rho_norm,
        residual,
        residual_bound,
        distance,
        distance_bound,
        projected_defect,
        residual_ok,
        distance_ok,
    })
}
