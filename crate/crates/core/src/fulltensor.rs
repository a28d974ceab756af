//! Full-tensor IMEX reference solvers. They share the transport stencil,
//! the collision stencil and the Poisson solver with the low-rank schemes, so
//! any difference between the two is splitting and truncation error.

use nalgebra::DMatrix;

use crate::advection::apply_advection_full;
use crate::diagnostics::ap_error_global;
use crate::error::Result;
use crate::fokker_planck::{
    alpha_faces, apply_fp_full, velocity_ops_from_alpha, FPVelocityOps, FPWeights,
};
use crate::grid::{check_len, PhaseGrid};
use crate::linalg::Tridiag;
use crate::steppers::{field_level, FieldLevel, StepConfig, StepReport};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    pub f: DMatrix<f64>,
}

impl DenseState {
    pub fn density(&self, grid: &PhaseGrid) -> Vec<f64> {
        grid.velocity_sum(&self.f)
    }

    pub fn mass(&self, grid: &PhaseGrid) -> f64 {
        self.density(grid).iter().sum::<f64>() * grid.dx
    }
}

/// Full-tensor stepper bound to one grid, background charge and config.
#[derive(Debug, Clone)]
pub struct FullStepper {
    pub grid: PhaseGrid,
    pub eta: Vec<f64>,
    pub cfg: StepConfig,
    ops: FPVelocityOps,
}

impl FullStepper {
    pub fn new(grid: &PhaseGrid, eta: &[f64], cfg: StepConfig) -> Result<Self> {
        cfg.validate(grid)?;
        check_len("fulltensor::FullStepper eta", grid.nx, eta.len())?;
        Ok(FullStepper {
            grid: grid.clone(),
            eta: eta.to_vec(),
            ops: velocity_ops_from_alpha(&alpha_faces(grid), grid),
            cfg,
        })
    }

    pub fn step(&self, f: &DMatrix<f64>) -> Result<(DMatrix<f64>, StepReport)> {
        match self.cfg.order {
            1 => self.step_first(f),
            _ => self.step_second(f),
        }
    }

    /// Solves `(I - c/eps_p L_p) g_p = rhs_p` for every spatial cell.
    fn implicit_solve(&self, rhs: &DMatrix<f64>, w: &FPWeights, c: f64) -> Result<DMatrix<f64>> {
        let grid = &self.grid;
        let id = Tridiag::identity(grid.nv);
        let mut out = DMatrix::zeros(grid.nx, grid.nv);
        for p in 0..grid.nx {
            let sys = id.combine(1.0, &self.ops.at_beta(w.beta[p]), -c / w.eps[p]);
            let row: Vec<f64> = rhs.row(p).iter().copied().collect();
            let sol = sys
                .solve(&row, "fulltensor::implicit_solve")
                .map_err(|e| tag_cell(e, p))?;
            for q in 0..grid.nv {
                out[(p, q)] = sol[q];
            }
        }
        Ok(out)
    }

    /// `L_h f / eps`, row by row.
    fn collision(&self, f: &DMatrix<f64>, w: &FPWeights) -> Result<DMatrix<f64>> {
        let mut lf = apply_fp_full(f, w, &self.grid)?;
        for p in 0..self.grid.nx {
            lf.row_mut(p).scale_mut(1.0 / w.eps[p]);
        }
        Ok(lf)
    }

    fn predict(&self, rho: &[f64], f: &DMatrix<f64>, dt: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let adv = apply_advection_full(f, &self.grid)?;
        let flux = self.grid.velocity_sum(&adv);
        Ok((
            rho.iter().zip(&flux).map(|(r, a)| r + dt * a).collect(),
            adv,
        ))
    }

    pub fn step_first(&self, f: &DMatrix<f64>) -> Result<(DMatrix<f64>, StepReport)> {
        let grid = &self.grid;
        grid.check_tensor("fulltensor::step_first", f)?;
        let dt = self.cfg.dt;
        let rho = grid.velocity_sum(f);
        let (rho_hat, adv) = self.predict(&rho, f, dt)?;
        let level = field_level(&rho_hat, &self.eta, &self.cfg, grid)?;
        let f_new = self.implicit_solve(&(f + adv * dt), &level.weights, dt)?;
        let report = self.report(&f_new, rho_hat, &level)?;
        Ok((f_new, report))
    }

    pub fn step_second(&self, f: &DMatrix<f64>) -> Result<(DMatrix<f64>, StepReport)> {
        let grid = &self.grid;
        grid.check_tensor("fulltensor::step_second", f)?;
        let dt = self.cfg.dt;
        let rho = grid.velocity_sum(f);
        let lvl_n = field_level(&rho, &self.eta, &self.cfg, grid)?;

        let (rho_half, adv_n) = self.predict(&rho, f, dt / 2.0)?;
        let lvl_half = field_level(&rho_half, &self.eta, &self.cfg, grid)?;
        let f_half = self.implicit_solve(&(f + adv_n * (dt / 2.0)), &lvl_half.weights, dt / 2.0)?;

        let (rho_hat, adv_half) = self.predict(&rho, &f_half, dt)?;
        let lvl_end = field_level(&rho_hat, &self.eta, &self.cfg, grid)?;
        let rhs = f + adv_half * dt + self.collision(f, &lvl_n.weights)? * (dt / 2.0);
        let f_new = self.implicit_solve(&rhs, &lvl_end.weights, dt / 2.0)?;
        let report = self.report(&f_new, rho_hat, &lvl_end)?;
        Ok((f_new, report))
    }

    fn report(
        &self,
        f: &DMatrix<f64>,
        rho_hat: Vec<f64>,
        level: &FieldLevel,
    ) -> Result<StepReport> {
        let grid = &self.grid;
        Ok(StepReport {
            mass: grid.velocity_sum(f).iter().sum::<f64>() * grid.dx,
            field_energy: 0.5 * level.weights.e.iter().map(|e| e * e).sum::<f64>() * grid.dx,
            ap_error: ap_error_global(f, &level.weights, grid)?,
            neutrality_warning: level.field.as_ref().is_some_and(|s| s.neutrality_warning),
            e: level.weights.e.clone(),
            rho_hat,
        })
    }
}

fn tag_cell(e: crate::error::VpfpError, p: usize) -> crate::error::VpfpError {
    match e {
        crate::error::VpfpError::Singular { module, detail, .. } => {
            crate::error::VpfpError::Singular {
                module,
                index: p,
                detail: format!("spatial cell {p}: {detail}"),
            }
        }
        other => other,
    }
}

pub fn full_step_first(
    f: &DMatrix<f64>,
    eta: &[f64],
    grid: &PhaseGrid,
    cfg: &StepConfig,
) -> Result<(DMatrix<f64>, StepReport)> {
    FullStepper::new(grid, eta, cfg.clone())?.step_first(f)
}

pub fn full_step_second(
    f: &DMatrix<f64>,
    eta: &[f64],
    grid: &PhaseGrid,
    cfg: &StepConfig,
) -> Result<(DMatrix<f64>, StepReport)> {
    FullStepper::new(grid, eta, cfg.clone())?.step_second(f)
}
