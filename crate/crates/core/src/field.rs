//! Periodic 1D Poisson solve `-phi'' = rho - eta` under the zero-mean gauge,
//! with `E = -phi'` from a centered difference.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{check_len, PhaseGrid};
use crate::linalg::Tridiag;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldState {
    pub rho: Vec<f64>,
    pub eta: Vec<f64>,
    pub phi: Vec<f64>,
    pub e: Vec<f64>,
    /// `mean(rho - eta)` removed from the source before solving.
    pub mean_removed: f64,
    /// Set when the removed mean exceeds `1e-6 * max(1, max|rho - eta|)`.
    pub neutrality_warning: bool,
}

impl FieldState {
    /// `0.5 * sum E^2 dx`.
    pub fn energy(&self, grid: &PhaseGrid) -> f64 {
        0.5 * self.e.iter().map(|e| e * e).sum::<f64>() * grid.dx
    }
}

pub const NEUTRALITY_TOL: f64 = 1e-6;

pub fn solve_poisson(rho: &[f64], eta: &[f64], grid: &PhaseGrid) -> Result<FieldState> {
    let n = grid.nx;
    check_len("field::solve_poisson", n, rho.len())?;
    check_len("field::solve_poisson", n, eta.len())?;

    let src: Vec<f64> = rho.iter().zip(eta).map(|(r, h)| r - h).collect();
    let mean = src.iter().sum::<f64>() / n as f64;
    let max_abs = src.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let neutrality_warning = mean.abs() > NEUTRALITY_TOL * max_abs.max(1.0);
    if neutrality_warning {
        log::debug!("field: removing non-neutral mean {mean:.3e} from Poisson source");
    }

    // The periodic Laplacian is singular on constants. Pinning the last node
    // leaves a nonsingular Dirichlet-type tridiagonal system on the first n-1
    // nodes; the dropped equation holds automatically for a zero-mean source.
    // The gauge is then restored by subtracting the mean.
    let h2 = grid.dx * grid.dx;
    let m = n - 1;
    let mut t = Tridiag::zeros(m);
    for i in 0..m {
        t.diag[i] = 2.0;
        if i > 0 {
            t.lower[i] = -1.0;
        }
        if i + 1 < m {
            t.upper[i] = -1.0;
        }
    }
    let rhs: Vec<f64> = src[..m].iter().map(|s| (s - mean) * h2).collect();
    let mut phi = t.solve(&rhs, "field::solve_poisson")?;
    phi.push(0.0);
    let phi_mean = phi.iter().sum::<f64>() / n as f64;
    phi.iter_mut().for_each(|p| *p -= phi_mean);

    let e = gradient_field(&phi, grid.dx);
    Ok(FieldState {
        rho: rho.to_vec(),
        eta: eta.to_vec(),
        phi,
        e,
        mean_removed: mean,
        neutrality_warning,
    })
}

/// `E_p = -(phi_{p+1} - phi_{p-1}) / (2 dx)` with periodic wraparound.
pub fn gradient_field(phi: &[f64], dx: f64) -> Vec<f64> {
    let n = phi.len();
    (0..n)
        .map(|p| -(phi[(p + 1) % n] - phi[(p + n - 1) % n]) / (2.0 * dx))
        .collect()
}

/// Largest residual of the periodic 3-point Laplacian against the
/// mean-projected source.
pub fn laplacian_residual(state: &FieldState, grid: &PhaseGrid) -> f64 {
    let n = grid.nx;
    let h2 = grid.dx * grid.dx;
    let phi = &state.phi;
    (0..n)
        .map(|p| {
            let lap = (-phi[(p + 1) % n] + 2.0 * phi[p] - phi[(p + n - 1) % n]) / h2;
            let s = state.rho[p] - state.eta[p] - state.mean_removed;
            (lap - s).abs()
        })
        .fold(0.0, f64::max)
}
