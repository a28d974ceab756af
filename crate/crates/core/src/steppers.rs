//! Fully discrete low-rank IMEX integrators.
//!
//! Order 1 is a Lie K-S-L sweep with the collision operator implicit in the
//! K and L substeps and explicit in the backward S substep. Order 2 is a
//! K(h/2) S(h/2) L(h) S(h/2) K(h/2) Strang sweep where every substep uses a
//! two-stage IMEX scheme whose implicit part is the trapezoidal rule.
//!
//! Fields at future times are obtained from density predictors built from
//! the zeroth moment of the transport term, so no nonlinear iteration is
//! needed: the collision operator conserves mass cell by cell.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::advection::{
    advection_density_moment, project_advection_k_with, project_advection_l_with,
    project_advection_s_with, spatial_difference_mats, velocity_moment_mats,
};
use crate::diagnostics::ap_error_global;
use crate::error::{Result, VpfpError};
use crate::field::{solve_poisson, FieldState};
use crate::fokker_planck::{
    apply_columns, compute_weights, gram_spatial, gram_velocity, velocity_ops,
    velocity_ops_from_alpha, FPVelocityOps, FPWeights,
};
use crate::grid::{check_len, PhaseGrid};
use crate::linalg::{dense_solve, unvec, vec_of, BlockTridiag};
use crate::lowrank::{weighted_qr, LowRankState};

/// How the electric field entering the collision operator is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldMode {
    /// Poisson solve on the predicted density.
    SelfConsistent,
    /// A prescribed field, held fixed in time.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    pub order: u8,
    /// Relaxation parameter per spatial cell.
    pub eps: Vec<f64>,
    pub field_mode: FieldMode,
}

impl StepConfig {
    pub fn new(dt: f64, order: u8, eps: Vec<f64>) -> Self {
        StepConfig {
            dt,
            order,
            eps,
            field_mode: FieldMode::SelfConsistent,
        }
    }

    pub fn validate(&self, grid: &PhaseGrid) -> Result<()> {
        if !(self.dt >= 0.0) || !self.dt.is_finite() {
            return Err(VpfpError::Config(format!(
                "time step must be finite and >= 0, got {}",
                self.dt
            )));
        }
        if self.order != 1 && self.order != 2 {
            return Err(VpfpError::Config(format!(
                "order must be 1 or 2, got {}",
                self.order
            )));
        }
        check_len("steppers::StepConfig eps", grid.nx, self.eps.len())?;
        if let Some(p) = self.eps.iter().position(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(VpfpError::Config(format!(
                "eps must be positive, got {} at cell {p}",
                self.eps[p]
            )));
        }
        if let FieldMode::Fixed(e) = &self.field_mode {
            check_len("steppers::StepConfig field", grid.nx, e.len())?;
        }
        Ok(())
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    /// Predicted density used for the end-of-step field.
    pub rho_hat: Vec<f64>,
    /// Field used by the collision operator at the end of the step.
    pub e: Vec<f64>,
    pub mass: f64,
    pub field_energy: f64,
    /// `||f - rho M||_{L1}` with the end-of-step field.
    pub ap_error: f64,
    pub neutrality_warning: bool,
}

/// Inputs and outputs of the final L-step of a first-order step, kept for
/// residual certificates.
#[derive(Debug, Clone)]
pub struct LStepTrace {
    pub x_new: DMatrix<f64>,
    /// `L^(2) = V^n (S^(2))^T`.
    pub l_before: DMatrix<f64>,
    /// `L^{n+1}` before re-orthogonalization.
    pub l_after: DMatrix<f64>,
    pub weights: FPWeights,
    pub h: f64,
}

/// Field plus collision weights at one time level.
#[derive(Debug, Clone)]
pub struct FieldLevel {
    pub field: Option<FieldState>,
    pub weights: FPWeights,
}

impl FieldLevel {
    fn energy(&self, grid: &PhaseGrid) -> f64 {
        0.5 * self.weights.e.iter().map(|e| e * e).sum::<f64>() * grid.dx
    }

    fn warning(&self) -> bool {
        self.field.as_ref().is_some_and(|f| f.neutrality_warning)
    }
}

pub(crate) fn field_level(
    rho: &[f64],
    eta: &[f64],
    cfg: &StepConfig,
    grid: &PhaseGrid,
) -> Result<FieldLevel> {
    match &cfg.field_mode {
        FieldMode::SelfConsistent => {
            let field = solve_poisson(rho, eta, grid)?;
            let weights = compute_weights(&field.e, &cfg.eps, grid)?;
            Ok(FieldLevel {
                field: Some(field),
                weights,
            })
        }
        FieldMode::Fixed(e) => Ok(FieldLevel {
            field: None,
            weights: compute_weights(e, &cfg.eps, grid)?,
        }),
    }
}

/// `rho^n + frac * <A_h f^n, 1>_v`, from the factors only.
pub fn predict_density(
    state: &LowRankState,
    grid: &PhaseGrid,
    dt_fraction: f64,
) -> Result<Vec<f64>> {
    let rho = state.density(grid);
    let flux = advection_density_moment(&state.to_k(), &state.v, grid)?;
    Ok(rho
        .iter()
        .zip(&flux)
        .map(|(r, a)| r + dt_fraction * a)
        .collect())
}

/// `(beta_p A + beta_p^-1 B) / eps_p`: projected collision matrix at cell `p`.
fn k_collision(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &FPWeights, p: usize) -> DMatrix<f64> {
    let beta = w.beta[p];
    (a * beta + b / beta) / w.eps[p]
}

/// Solves `(I - c F_p) K_p = rhs_p` for every spatial row `p`.
fn k_implicit_solve(
    rhs: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &FPWeights,
    c: f64,
) -> Result<DMatrix<f64>> {
    let r = rhs.ncols();
    let mut out = DMatrix::zeros(rhs.nrows(), r);
    for p in 0..rhs.nrows() {
        let m = DMatrix::<f64>::identity(r, r) - k_collision(a, b, w, p) * c;
        let sol = dense_solve(m, &rhs.row(p).transpose(), "steppers::k_step", p)?;
        out.set_row(p, &sol.transpose());
    }
    Ok(out)
}

/// Applies the projected collision operator of the K-step to every row.
fn k_collision_apply(
    k: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &FPWeights,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(k.nrows(), k.ncols());
    for p in 0..k.nrows() {
        let row = k_collision(a, b, w, p) * k.row(p).transpose();
        out.set_row(p, &row.transpose());
    }
    out
}

/// Backward-Euler K-step with frozen `V`; returns `(X^{n+1}, S^(1))`.
///
/// `adv_k` is the transport projection evaluated at the incoming state.
pub fn k_step_implicit(
    state: &LowRankState,
    weights: &FPWeights,
    ops: &FPVelocityOps,
    adv_k: &DMatrix<f64>,
    h: f64,
    grid: &PhaseGrid,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (a, b) = gram_velocity(&state.v, ops, grid)?;
    let rhs = state.to_k() + adv_k * h;
    let k_new = k_implicit_solve(&rhs, &a, &b, weights, h)?;
    Ok(weighted_qr(&k_new, grid.dx))
}

/// `P S A^T + Q S B^T`: the projected collision term of the S-step.
fn s_collision(
    s: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> DMatrix<f64> {
    p * s * a.transpose() + q * s * b.transpose()
}

/// Forward-Euler backward-in-time S-step.
pub fn s_step_explicit(
    s1: &DMatrix<f64>,
    x_new: &DMatrix<f64>,
    v_old: &DMatrix<f64>,
    weights: &FPWeights,
    ops: &FPVelocityOps,
    h: f64,
    grid: &PhaseGrid,
) -> Result<DMatrix<f64>> {
    let (a, b) = gram_velocity(v_old, ops, grid)?;
    let (p, q) = gram_spatial(x_new, weights, grid)?;
    let (dm, dp) = spatial_difference_mats(x_new, grid)?;
    let mom = velocity_moment_mats(v_old, grid)?;
    let adv = project_advection_s_with(s1, &dm, &dp, &mom);
    Ok(s1 - (adv + s_collision(s1, &p, &q, &a, &b)) * h)
}

/// Block-tridiagonal operator `I - c (P (x) T_alpha + Q (x) T_inv_alpha)`
/// with `r x r` blocks indexed by velocity cell.
fn l_system(p: &DMatrix<f64>, q: &DMatrix<f64>, ops: &FPVelocityOps, c: f64) -> BlockTridiag {
    let n = ops.t_alpha.len();
    let r = p.nrows();
    let ta = &ops.t_alpha;
    let ti = &ops.t_inv_alpha;
    let block = |sa: f64, si: f64| -(p * sa + q * si) * c;
    BlockTridiag {
        lower: (0..n)
            .map(|k| {
                if k > 0 {
                    block(ta.lower[k], ti.lower[k])
                } else {
                    DMatrix::zeros(r, r)
                }
            })
            .collect(),
        diag: (0..n)
            .map(|k| DMatrix::<f64>::identity(r, r) + block(ta.diag[k], ti.diag[k]))
            .collect(),
        upper: (0..n)
            .map(|k| {
                if k + 1 < n {
                    block(ta.upper[k], ti.upper[k])
                } else {
                    DMatrix::zeros(r, r)
                }
            })
            .collect(),
    }
}

fn l_implicit_solve(
    rhs: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    ops: &FPVelocityOps,
    c: f64,
) -> Result<DMatrix<f64>> {
    let sys = l_system(p, q, ops, c);
    let b: Vec<DVector<f64>> = rhs.row_iter().map(|row| row.transpose()).collect();
    let sol = sys.solve(&b, "steppers::l_step")?;
    let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    for (k, s) in sol.iter().enumerate() {
        out.set_row(k, &s.transpose());
    }
    Ok(out)
}

/// `T_alpha L P^T + T_inv_alpha L Q^T`: projected collision term of the L-step.
fn l_collision(
    l: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    ops: &FPVelocityOps,
) -> DMatrix<f64> {
    apply_columns(&ops.t_alpha, l) * p.transpose()
        + apply_columns(&ops.t_inv_alpha, l) * q.transpose()
}

/// Backward-Euler L-step with frozen `X`. Returns the new state together
/// with the pre-orthogonalization `L^{n+1}`.
#[allow(clippy::too_many_arguments)]
pub fn l_step_implicit(
    s2: &DMatrix<f64>,
    x_new: &DMatrix<f64>,
    v_old: &DMatrix<f64>,
    weights: &FPWeights,
    ops: &FPVelocityOps,
    adv_l: &DMatrix<f64>,
    h: f64,
    grid: &PhaseGrid,
) -> Result<(LowRankState, DMatrix<f64>)> {
    let (p, q) = gram_spatial(x_new, weights, grid)?;
    let l2 = v_old * s2.transpose();
    let rhs = &l2 + adv_l * h;
    let l_new = l_implicit_solve(&rhs, &p, &q, ops, h)?;
    let state = LowRankState::from_l(&l_new, x_new.clone(), grid);
    Ok((state, l_new))
}

/// The three collision operators of a second-order step, at `t^n`,
/// `t^{n+1/2}` and `t^{n+1}`.
#[derive(Debug, Clone, Copy)]
pub struct Imex2Fields<'a> {
    pub start: &'a FPWeights,
    pub half: &'a FPWeights,
    pub end: &'a FPWeights,
}

/// Which factor a second-order substep advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substep {
    K,
    S,
    L,
}

/// One two-stage IMEX substep of length `h`:
///
/// ```text
/// U*    = U + h/2 [Adv(U)  + C_half(U*)]
/// U_new = U + h   [Adv(U*) + (C_start(U) + C_end(U_new)) / 2]
/// ```
///
/// For `K` the frozen basis is `v`, for `L` it is `x`, and for `S` both are
/// frozen and the right-hand side changes sign. The returned factor has the
/// same layout as `u` and is not re-orthogonalized.
pub fn imex2_substep(
    kind: Substep,
    u: &DMatrix<f64>,
    x: &DMatrix<f64>,
    v: &DMatrix<f64>,
    fields: Imex2Fields<'_>,
    ops: &FPVelocityOps,
    h: f64,
    grid: &PhaseGrid,
) -> Result<DMatrix<f64>> {
    match kind {
        Substep::K => {
            let (a, b) = gram_velocity(v, ops, grid)?;
            let mom = velocity_moment_mats(v, grid)?;
            let adv = |k: &DMatrix<f64>| project_advection_k_with(k, &mom, grid);
            let stage_rhs = u + adv(u)? * (h / 2.0);
            let k_star = k_implicit_solve(&stage_rhs, &a, &b, fields.half, h / 2.0)?;
            let step_rhs =
                u + adv(&k_star)? * h + k_collision_apply(u, &a, &b, fields.start) * (h / 2.0);
            k_implicit_solve(&step_rhs, &a, &b, fields.end, h / 2.0)
        }
        Substep::S => {
            let (a, b) = gram_velocity(v, ops, grid)?;
            let (dm, dp) = spatial_difference_mats(x, grid)?;
            let mom = velocity_moment_mats(v, grid)?;
            let grams = |w: &FPWeights| gram_spatial(x, w, grid);
            let (p0, q0) = grams(fields.start)?;
            let (ph, qh) = grams(fields.half)?;
            let (p1, q1) = grams(fields.end)?;
            let r = u.nrows();
            // vec(P S A^T + Q S B^T) = (A (x) P + B (x) Q) vec(S)
            let kron_op = |p: &DMatrix<f64>, q: &DMatrix<f64>| a.kronecker(p) + b.kronecker(q);
            let id = DMatrix::<f64>::identity(r * r, r * r);
            let adv = |s: &DMatrix<f64>| project_advection_s_with(s, &dm, &dp, &mom);

            let stage_rhs = u - adv(u) * (h / 2.0);
            let stage_m = &id + kron_op(&ph, &qh) * (h / 2.0);
            let s_star = unvec(
                &dense_solve(stage_m, &vec_of(&stage_rhs), "steppers::s_stage", 0)?,
                r,
                r,
            );

            let step_rhs = u - adv(&s_star) * h - s_collision(u, &p0, &q0, &a, &b) * (h / 2.0);
            let step_m = &id + kron_op(&p1, &q1) * (h / 2.0);
            Ok(unvec(
                &dense_solve(step_m, &vec_of(&step_rhs), "steppers::s_step", 0)?,
                r,
                r,
            ))
        }
        Substep::L => {
            let (dm, dp) = spatial_difference_mats(x, grid)?;
            let grams = |w: &FPWeights| gram_spatial(x, w, grid);
            let (p0, q0) = grams(fields.start)?;
            let (ph, qh) = grams(fields.half)?;
            let (p1, q1) = grams(fields.end)?;
            let adv = |l: &DMatrix<f64>| project_advection_l_with(l, &dm, &dp, grid);

            let stage_rhs = u + adv(u) * (h / 2.0);
            let l_star = l_implicit_solve(&stage_rhs, &ph, &qh, ops, h / 2.0)?;
            let step_rhs = u + adv(&l_star) * h + l_collision(u, &p0, &q0, ops) * (h / 2.0);
            l_implicit_solve(&step_rhs, &p1, &q1, ops, h / 2.0)
        }
    }
}

/// Low-rank time stepper bound to one grid, background charge and config.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub grid: PhaseGrid,
    pub eta: Vec<f64>,
    pub cfg: StepConfig,
    ops: FPVelocityOps,
}

impl Stepper {
    pub fn new(grid: &PhaseGrid, eta: &[f64], cfg: StepConfig) -> Result<Self> {
        cfg.validate(grid)?;
        check_len("steppers::Stepper eta", grid.nx, eta.len())?;
        let alpha = crate::fokker_planck::alpha_faces(grid);
        Ok(Stepper {
            grid: grid.clone(),
            eta: eta.to_vec(),
            ops: velocity_ops_from_alpha(&alpha, grid),
            cfg,
        })
    }

    pub fn ops(&self) -> &FPVelocityOps {
        &self.ops
    }

    pub fn field_level(&self, rho: &[f64]) -> Result<FieldLevel> {
        field_level(rho, &self.eta, &self.cfg, &self.grid)
    }

    pub fn step(&self, state: &LowRankState) -> Result<(LowRankState, StepReport)> {
        match self.cfg.order {
            1 => self.step_first_order(state),
            _ => self.step_second_order(state),
        }
    }

    pub fn step_first_order(&self, state: &LowRankState) -> Result<(LowRankState, StepReport)> {
        let (next, report, _) = self.first_order_with_dt(state, self.cfg.dt)?;
        Ok((next, report))
    }

    /// First-order step that also returns the L-step trace.
    pub fn step_first_order_traced(
        &self,
        state: &LowRankState,
    ) -> Result<(LowRankState, StepReport, LStepTrace)> {
        self.first_order_with_dt(state, self.cfg.dt)
    }

    fn first_order_with_dt(
        &self,
        state: &LowRankState,
        dt: f64,
    ) -> Result<(LowRankState, StepReport, LStepTrace)> {
        let grid = &self.grid;
        state.check_shape(grid)?;
        // Step 1: density prediction and the end-of-step field
        let rho_hat = predict_density(state, grid, dt)?;
        let level = self.field_level(&rho_hat)?;
        let w = &level.weights;

        // Step 2: K, S, L
        let mom = velocity_moment_mats(&state.v, grid)?;
        let adv_k = project_advection_k_with(&state.to_k(), &mom, grid)?;
        let (x_new, s1) = k_step_implicit(state, w, &self.ops, &adv_k, dt, grid)?;

        let s2 = s_step_explicit(&s1, &x_new, &state.v, w, &self.ops, dt, grid)?;

        let l2 = &state.v * s2.transpose();
        let (dm, dp) = spatial_difference_mats(&x_new, grid)?;
        let adv_l = project_advection_l_with(&l2, &dm, &dp, grid);
        let (next, l_new) = l_step_implicit(&s2, &x_new, &state.v, w, &self.ops, &adv_l, dt, grid)?;

        let report = self.report(&next, rho_hat, &level)?;
        let trace = LStepTrace {
            x_new,
            l_before: l2,
            l_after: l_new,
            weights: level.weights,
            h: dt,
        };
        Ok((next, report, trace))
    }

    pub fn step_second_order(&self, state: &LowRankState) -> Result<(LowRankState, StepReport)> {
        let grid = &self.grid;
        let dt = self.cfg.dt;
        state.check_shape(grid)?;

        // Step 1: fields at t^n, t^{n+1/2}, t^{n+1}
        let rho_n = state.density(grid);
        let lvl_n = self.field_level(&rho_n)?;
        let rho_half = predict_density(state, grid, dt / 2.0)?;
        let lvl_half = self.field_level(&rho_half)?;
        let (f_half, _, _) = self.first_order_with_dt(state, dt / 2.0)?;
        let flux_half = advection_density_moment(&f_half.to_k(), &f_half.v, grid)?;
        let rho_hat: Vec<f64> = rho_n
            .iter()
            .zip(&flux_half)
            .map(|(r, a)| r + dt * a)
            .collect();
        let lvl_end = self.field_level(&rho_hat)?;
        let fields = Imex2Fields {
            start: &lvl_n.weights,
            half: &lvl_half.weights,
            end: &lvl_end.weights,
        };

        // Step 2: K(dt/2) S(dt/2) L(dt) S(dt/2) K(dt/2)
        let ops = &self.ops;
        let k1 = imex2_substep(
            Substep::K,
            &state.to_k(),
            &state.x,
            &state.v,
            fields,
            ops,
            dt / 2.0,
            grid,
        )?;
        let (x1, s1) = weighted_qr(&k1, grid.dx);

        let s2 = imex2_substep(Substep::S, &s1, &x1, &state.v, fields, ops, dt / 2.0, grid)?;

        let l2 = &state.v * s2.transpose();
        let l3 = imex2_substep(Substep::L, &l2, &x1, &state.v, fields, ops, dt, grid)?;
        let mid = LowRankState::from_l(&l3, x1, grid);

        let s4 = imex2_substep(
            Substep::S,
            &mid.s,
            &mid.x,
            &mid.v,
            fields,
            ops,
            dt / 2.0,
            grid,
        )?;

        let k4 = &mid.x * &s4;
        let k_end = imex2_substep(Substep::K, &k4, &mid.x, &mid.v, fields, ops, dt / 2.0, grid)?;
        let next = LowRankState::from_k(&k_end, mid.v, grid);

        let report = self.report(&next, rho_hat, &lvl_end)?;
        Ok((next, report))
    }

    fn report(
        &self,
        next: &LowRankState,
        rho_hat: Vec<f64>,
        level: &FieldLevel,
    ) -> Result<StepReport> {
        let grid = &self.grid;
        let f = next.reconstruct();
        Ok(StepReport {
            mass: next.mass(grid),
            field_energy: level.energy(grid),
            ap_error: ap_error_global(&f, &level.weights, grid)?,
            neutrality_warning: level.warning(),
            e: level.weights.e.clone(),
            rho_hat,
        })
    }
}

pub fn step_first_order(
    state: &LowRankState,
    eta: &[f64],
    grid: &PhaseGrid,
    cfg: &StepConfig,
) -> Result<(LowRankState, StepReport)> {
    Stepper::new(grid, eta, cfg.clone())?.step_first_order(state)
}

pub fn step_second_order(
    state: &LowRankState,
    eta: &[f64],
    grid: &PhaseGrid,
    cfg: &StepConfig,
) -> Result<(LowRankState, StepReport)> {
    Stepper::new(grid, eta, cfg.clone())?.step_second_order(state)
}

/// Velocity operators for a grid, independent of the field.
pub fn grid_velocity_ops(weights: &FPWeights, grid: &PhaseGrid) -> FPVelocityOps {
    velocity_ops(weights, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advection::{apply_advection_full, project_advection_k, project_advection_l};
    use crate::fokker_planck::apply_fp_full;
    use crate::grid::make_grid;
    use crate::linalg::Tridiag;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_state(rng: &mut ChaCha8Rng, g: &PhaseGrid, r: usize) -> LowRankState {
        let (x, _) = weighted_qr(&rand_mat(rng, g.nx, r), g.dx);
        let (v, _) = weighted_qr(&rand_mat(rng, g.nv, r), g.dv);
        LowRankState {
            x,
            s: rand_mat(rng, r, r),
            v,
        }
    }

    fn rand_weights(rng: &mut ChaCha8Rng, g: &PhaseGrid, eps: f64) -> FPWeights {
        let e: Vec<f64> = (0..g.nx).map(|_| rng.random_range(-1.0..1.0)).collect();
        compute_weights(&e, &vec![eps; g.nx], g).unwrap()
    }

    #[test]
    fn predictor_conserves_and_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = make_grid(0.0, 1.0, 10, -4.0, 4.0, 8).unwrap();
        let st = rand_state(&mut rng, &g, 3);
        let dt = 0.01;
        let rho_hat = predict_density(&st, &g, dt).unwrap();
        let f = st.reconstruct();
        let dense = g.velocity_sum(&(&f + apply_advection_full(&f, &g).unwrap() * dt));
        for p in 0..10 {
            assert!((rho_hat[p] - dense[p]).abs() < 1e-12);
        }
        let m0: f64 = st.density(&g).iter().sum();
        let m1: f64 = rho_hat.iter().sum();
        assert!((m0 - m1).abs() < 1e-12);

        let flat = LowRankState {
            x: DMatrix::from_element(10, 1, 1.0),
            s: DMatrix::from_element(1, 1, 1.0),
            v: DMatrix::from_element(8, 1, 1.0 / g.lv().sqrt()),
        };
        let flat = LowRankState::from_k(&flat.to_k(), flat.v.clone(), &g);
        let rho = flat.density(&g);
        let pred = predict_density(&flat, &g, 0.3).unwrap();
        for p in 0..10 {
            assert!((rho[p] - pred[p]).abs() < 1e-14);
        }
    }

    #[test]
    fn k_step_trivial_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = make_grid(0.0, 1.0, 8, -4.0, 4.0, 6).unwrap();
        let st = rand_state(&mut rng, &g, 2);
        let w = rand_weights(&mut rng, &g, 1.0);
        let ops = velocity_ops(&w, &g);
        let adv = project_advection_k(&st.to_k(), &st.v, &g).unwrap();
        let (x, s1) = k_step_implicit(&st, &w, &ops, &adv, 0.0, &g).unwrap();
        assert!((&x * &s1 - st.to_k()).amax() < 1e-13);

        // collisionless limit
        let w_inf = compute_weights(&w.e, &[1e300; 8], &g).unwrap();
        let h = 0.01;
        let (x, s1) = k_step_implicit(&st, &w_inf, &ops, &adv, h, &g).unwrap();
        let expect = st.to_k() + &adv * h;
        assert!((&x * &s1 - expect).amax() < 1e-13);
    }

    #[test]
    fn k_step_complete_basis_matches_full_backward_euler() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = make_grid(0.0, 1.0, 4, -2.0, 2.0, 4).unwrap();
        let st = rand_state(&mut rng, &g, 4);
        let w = rand_weights(&mut rng, &g, 0.3);
        let ops = velocity_ops(&w, &g);
        let h = 0.05;
        let adv = project_advection_k(&st.to_k(), &st.v, &g).unwrap();
        let (x, s1) = k_step_implicit(&st, &w, &ops, &adv, h, &g).unwrap();
        let lowrank = &x * &s1 * st.v.transpose();

        let f = st.reconstruct();
        let rhs = &f + apply_advection_full(&f, &g).unwrap() * h;
        let mut oracle = DMatrix::zeros(4, 4);
        for p in 0..4 {
            let m =
                DMatrix::<f64>::identity(4, 4) - ops.at_beta(w.beta[p]).to_dense() * (h / w.eps[p]);
            let row = m.lu().solve(&rhs.row(p).transpose()).unwrap();
            oracle.set_row(p, &row.transpose());
        }
        assert!((lowrank - oracle).amax() < 1e-10);
    }

    #[test]
    fn s_step_matches_dense_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = make_grid(0.0, 1.0, 6, -3.0, 3.0, 6).unwrap();
        let st = rand_state(&mut rng, &g, 2);
        let w = rand_weights(&mut rng, &g, 0.7);
        let ops = velocity_ops(&w, &g);
        let h = 0.02;
        assert_eq!(
            s_step_explicit(&st.s, &st.x, &st.v, &w, &ops, 0.0, &g).unwrap(),
            st.s
        );
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(
            s_step_explicit(&zero, &st.x, &st.v, &w, &ops, h, &g).unwrap(),
            zero
        );

        let s2 = s_step_explicit(&st.s, &st.x, &st.v, &w, &ops, h, &g).unwrap();
        let f = st.reconstruct();
        let rhs = apply_advection_full(&f, &g).unwrap() + apply_fp_full(&f, &w, &g).unwrap() / 0.7;
        let proj = st.x.transpose() * rhs * &st.v * (g.dx * g.dv);
        let oracle = &st.s - proj * h;
        assert!((s2 - oracle).amax() < 1e-12);
    }

    #[test]
    fn l_step_scalar_reduces_to_thomas() {
        let g = make_grid(0.0, 1.0, 5, -3.0, 3.0, 12).unwrap();
        let w = compute_weights(&[0.0; 5], &[1.0; 5], &g).unwrap();
        let ops = velocity_ops(&w, &g);
        let x = DMatrix::from_element(5, 1, 1.0 / g.lx().sqrt());
        let v0 = DMatrix::from_fn(12, 1, |q, _| (-(g.v[q] - 0.5).powi(2)).exp());
        let (v, r) = weighted_qr(&v0, g.dv);
        let h = 0.1;
        let adv = DMatrix::zeros(12, 1);
        let (st, l_new) = l_step_implicit(&r, &x, &v, &w, &ops, &adv, h, &g).unwrap();
        // scalar oracle: (I - h (T_a + T_i)) l = l2
        let l2: Vec<f64> = (&v * r.transpose()).iter().copied().collect();
        let t: Tridiag = Tridiag::identity(12).combine(1.0, &ops.at_beta(1.0), -h);
        let oracle = t.solve(&l2, "test").unwrap();
        for q in 0..12 {
            assert!((l_new[(q, 0)] - oracle[q]).abs() < 1e-12);
        }
        st.check_orthonormal(&g).unwrap();
    }

    #[test]
    fn l_step_block_thomas_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = make_grid(0.0, 1.0, 7, -3.0, 3.0, 8).unwrap();
        let st = rand_state(&mut rng, &g, 3);
        let w = rand_weights(&mut rng, &g, 0.2);
        let ops = velocity_ops(&w, &g);
        let h = 0.05;
        let adv = project_advection_l(&st.to_l(), &st.x, &g).unwrap();
        let (_, l_new) = l_step_implicit(&st.s, &st.x, &st.v, &w, &ops, &adv, h, &g).unwrap();

        let (p, q) = gram_spatial(&st.x, &w, &g).unwrap();
        let dense = DMatrix::<f64>::identity(24, 24)
            - (ops.t_alpha.to_dense().kronecker(&p) + ops.t_inv_alpha.to_dense().kronecker(&q)) * h;
        let rhs = st.to_l() + &adv * h;
        // row-major flattening: index = q * r + i
        let b = DVector::from_iterator(
            24,
            (0..8)
                .flat_map(|k| (0..3).map(move |i| (k, i)))
                .map(|(k, i)| rhs[(k, i)]),
        );
        let sol = dense.lu().solve(&b).unwrap();
        for k in 0..8 {
            for i in 0..3 {
                assert!((l_new[(k, i)] - sol[k * 3 + i]).abs() < 1e-10);
            }
        }
        let (id_state, l_id) =
            l_step_implicit(&st.s, &st.x, &st.v, &w, &ops, &adv, 0.0, &g).unwrap();
        assert!((l_id - st.to_l()).amax() < 1e-14);
        assert!((id_state.reconstruct() - st.reconstruct()).amax() < 1e-12);
    }

    #[test]
    fn imex2_identity_and_scalar_amplification() {
        let g = make_grid(0.0, 1.0, 6, -4.0, 4.0, 10).unwrap();
        let ops = velocity_ops_from_alpha(&crate::fokker_planck::alpha_faces(&g), &g);
        let eps = vec![0.05; 6];
        let w0 = compute_weights(&[0.3; 6], &eps, &g).unwrap();
        let wh = compute_weights(&[-0.2; 6], &eps, &g).unwrap();
        let w1 = compute_weights(&[0.7; 6], &eps, &g).unwrap();
        let fields = Imex2Fields {
            start: &w0,
            half: &wh,
            end: &w1,
        };
        let x = DMatrix::from_element(6, 1, 1.0 / g.lx().sqrt());
        let v0 = DMatrix::from_fn(10, 1, |q, _| (-(g.v[q] - 1.0).powi(2)).exp() + 0.2);
        let (v, _) = weighted_qr(&v0, g.dv);
        let k = DMatrix::from_element(6, 1, 1.3);

        for kind in [Substep::K, Substep::S, Substep::L] {
            let u = match kind {
                Substep::K => k.clone(),
                Substep::S => DMatrix::from_element(1, 1, 0.8),
                Substep::L => &v * 0.8,
            };
            let same = imex2_substep(kind, &u, &x, &v, fields, &ops, 0.0, &g).unwrap();
            assert!((same - &u).amax() < 1e-14);
        }

        // x-independent rank-1 K: transport vanishes and the K-substep is a
        // scalar linear recurrence
        let h = 0.01;
        let (a, b) = gram_velocity(&v, &ops, &g).unwrap();
        let lam = |w: &FPWeights| (w.beta[0] * a[(0, 0)] + b[(0, 0)] / w.beta[0]) / w.eps[0];
        let amp = (1.0 + h / 2.0 * lam(&w0)) / (1.0 - h / 2.0 * lam(&w1));
        let out = imex2_substep(Substep::K, &k, &x, &v, fields, &ops, h, &g).unwrap();
        for p in 0..6 {
            assert!((out[(p, 0)] - 1.3 * amp).abs() < 1e-13 * 1.3);
        }
    }

    // Dense oracle for one two-stage substep: apply the same scheme to the
    // full tensor and project with the frozen bases.
    #[test]
    fn imex2_matches_dense_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = make_grid(0.0, 1.0, 6, -3.0, 3.0, 6).unwrap();
        let st = rand_state(&mut rng, &g, 2);
        let ops = velocity_ops_from_alpha(&crate::fokker_planck::alpha_faces(&g), &g);
        let w0 = rand_weights(&mut rng, &g, 0.5);
        let wh = rand_weights(&mut rng, &g, 0.5);
        let w1 = rand_weights(&mut rng, &g, 0.5);
        let fields = Imex2Fields {
            start: &w0,
            half: &wh,
            end: &w1,
        };
        let h = 0.02;
        let n = 36;
        let flat = |f: &DMatrix<f64>| vec_of(f);
        // projected operators as dense maps on coefficient vectors
        let full_op = |f: &DMatrix<f64>, w: &FPWeights| apply_fp_full(f, w, &g).unwrap() / 0.5;
        let _ = n;

        // S substep oracle on r^2 unknowns
        let proj_s = |f: &DMatrix<f64>| st.x.transpose() * f * &st.v * (g.dx * g.dv);
        let recon = |s: &DMatrix<f64>| &st.x * s * st.v.transpose();
        let adv_s = |s: &DMatrix<f64>| proj_s(&apply_advection_full(&recon(s), &g).unwrap());
        let c_s = |s: &DMatrix<f64>, w: &FPWeights| proj_s(&full_op(&recon(s), w));
        let lin = |op: &dyn Fn(&DMatrix<f64>) -> DMatrix<f64>| {
            let mut m = DMatrix::zeros(4, 4);
            for c in 0..4 {
                let mut e = DMatrix::zeros(2, 2);
                e[(c % 2, c / 2)] = 1.0;
                m.set_column(c, &flat(&op(&e)));
            }
            m
        };
        let u = st.s.clone();
        let id = DMatrix::<f64>::identity(4, 4);
        let ch = lin(&|s| c_s(s, &wh));
        let c1 = lin(&|s| c_s(s, &w1));
        let s_star = unvec(
            &(&id + ch * (h / 2.0))
                .lu()
                .solve(&flat(&(&u - adv_s(&u) * (h / 2.0))))
                .unwrap(),
            2,
            2,
        );
        let rhs = &u - adv_s(&s_star) * h - c_s(&u, &w0) * (h / 2.0);
        let oracle = unvec(
            &(&id + c1 * (h / 2.0)).lu().solve(&flat(&rhs)).unwrap(),
            2,
            2,
        );
        let got = imex2_substep(Substep::S, &u, &st.x, &st.v, fields, &ops, h, &g).unwrap();
        assert!((got - oracle).amax() < 1e-10);

        // K substep oracle
        let k = st.to_k();
        let recon_k = |k: &DMatrix<f64>| k * st.v.transpose();
        let proj_k = |f: &DMatrix<f64>| f * &st.v * g.dv;
        let adv_k = |k: &DMatrix<f64>| proj_k(&apply_advection_full(&recon_k(k), &g).unwrap());
        let c_k = |k: &DMatrix<f64>, w: &FPWeights| proj_k(&full_op(&recon_k(k), w));
        let lin_k = |w: &FPWeights| {
            let mut m = DMatrix::zeros(12, 12);
            for c in 0..12 {
                let mut e = DMatrix::zeros(6, 2);
                e[(c % 6, c / 6)] = 1.0;
                m.set_column(c, &flat(&c_k(&e, w)));
            }
            m
        };
        let id = DMatrix::<f64>::identity(12, 12);
        let k_star = unvec(
            &(&id - lin_k(&wh) * (h / 2.0))
                .lu()
                .solve(&flat(&(&k + adv_k(&k) * (h / 2.0))))
                .unwrap(),
            6,
            2,
        );
        let rhs = &k + adv_k(&k_star) * h + c_k(&k, &w0) * (h / 2.0);
        let oracle = unvec(
            &(&id - lin_k(&w1) * (h / 2.0))
                .lu()
                .solve(&flat(&rhs))
                .unwrap(),
            6,
            2,
        );
        let got = imex2_substep(Substep::K, &k, &st.x, &st.v, fields, &ops, h, &g).unwrap();
        assert!((got - oracle).amax() < 1e-10);

        // L substep oracle
        let l = st.to_l();
        let recon_l = |l: &DMatrix<f64>| &st.x * l.transpose();
        let proj_l = |f: &DMatrix<f64>| f.transpose() * &st.x * g.dx;
        let adv_l = |l: &DMatrix<f64>| proj_l(&apply_advection_full(&recon_l(l), &g).unwrap());
        let c_l = |l: &DMatrix<f64>, w: &FPWeights| proj_l(&full_op(&recon_l(l), w));
        let lin_l = |w: &FPWeights| {
            let mut m = DMatrix::zeros(12, 12);
            for c in 0..12 {
                let mut e = DMatrix::zeros(6, 2);
                e[(c % 6, c / 6)] = 1.0;
                m.set_column(c, &flat(&c_l(&e, w)));
            }
            m
        };
        let l_star = unvec(
            &(&id - lin_l(&wh) * (h / 2.0))
                .lu()
                .solve(&flat(&(&l + adv_l(&l) * (h / 2.0))))
                .unwrap(),
            6,
            2,
        );
        let rhs = &l + adv_l(&l_star) * h + c_l(&l, &w0) * (h / 2.0);
        let oracle = unvec(
            &(&id - lin_l(&w1) * (h / 2.0))
                .lu()
                .solve(&flat(&rhs))
                .unwrap(),
            6,
            2,
        );
        let got = imex2_substep(Substep::L, &l, &st.x, &st.v, fields, &ops, h, &g).unwrap();
        assert!((got - oracle).amax() < 1e-10);
    }

    fn uniform_equilibrium(g: &PhaseGrid, r: usize) -> (LowRankState, Vec<f64>) {
        let rho = 1.7;
        let f = g.sample(|_, v| rho * crate::fokker_planck::maxwellian(v, 0.0));
        let st = LowRankState::from_dense(&f, r, g).unwrap();
        let eta = vec![st.density(g)[0]; g.nx];
        (st, eta)
    }

    #[test]
    fn equilibrium_is_fixed_point_for_both_orders() {
        let g = make_grid(0.0, 1.0, 12, -6.0, 6.0, 32).unwrap();
        for order in [1u8, 2] {
            for r in [1, 3] {
                let (st, eta) = uniform_equilibrium(&g, r);
                let f0 = st.reconstruct();
                let cfg = StepConfig::new(0.01, order, vec![1e-3; 12]);
                let stepper = Stepper::new(&g, &eta, cfg).unwrap();
                let mut cur = st;
                for _ in 0..3 {
                    cur = stepper.step(&cur).unwrap().0;
                }
                assert!(
                    (cur.reconstruct() - &f0).amax() < 1e-10,
                    "order {order} rank {r}"
                );
            }
        }
    }

    #[test]
    fn frozen_basis_rank_one_maxwellian_invariant_under_constant_field() {
        // x-independent data: transport vanishes identically
        let g = make_grid(0.0, 1.0, 8, -6.0, 6.0, 40).unwrap();
        let e0 = 0.4;
        let f = g.sample(|_, v| 2.0 * crate::fokker_planck::maxwellian(v, e0));
        let st = LowRankState::from_dense(&f, 1, &g).unwrap();
        let mut cfg = StepConfig::new(0.05, 1, vec![0.01; 8]);
        cfg.field_mode = FieldMode::Fixed(vec![e0; 8]);
        let stepper = Stepper::new(&g, &[0.0; 8], cfg).unwrap();
        let (next, report) = stepper.step(&st).unwrap();
        assert!((next.reconstruct() - &f).amax() < 1e-10);
        let w = compute_weights(&[e0; 8], &[0.01; 8], &g).unwrap();
        assert!((report.ap_error - ap_error_global(&f, &w, &g).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn implicit_solves_succeed_for_stiff_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = make_grid(0.0, 1.0, 10, -6.0, 6.0, 16).unwrap();
        let st = rand_state(&mut rng, &g, 3);
        for eps in [1.0, 1e-3, 1e-8] {
            let w = rand_weights(&mut rng, &g, eps);
            let ops = velocity_ops(&w, &g);
            let adv = project_advection_k(&st.to_k(), &st.v, &g).unwrap();
            let (x, s1) = k_step_implicit(&st, &w, &ops, &adv, 0.1, &g).unwrap();
            let s2 = s_step_explicit(&s1, &x, &st.v, &w, &ops, 0.0, &g).unwrap();
            let adv_l = project_advection_l(&(&st.v * s2.transpose()), &x, &g).unwrap();
            let (next, _) = l_step_implicit(&s2, &x, &st.v, &w, &ops, &adv_l, 0.1, &g).unwrap();
            assert!(next.reconstruct().iter().all(|t| t.is_finite()));
            next.check_orthonormal(&g).unwrap();
        }
    }

    #[test]
    fn config_validation() {
        let g = make_grid(0.0, 1.0, 4, -1.0, 1.0, 4).unwrap();
        assert!(StepConfig::new(0.1, 3, vec![1.0; 4]).validate(&g).is_err());
        assert!(StepConfig::new(-0.1, 1, vec![1.0; 4]).validate(&g).is_err());
        assert!(StepConfig::new(0.1, 1, vec![1.0; 3]).validate(&g).is_err());
        assert!(StepConfig::new(0.1, 1, vec![0.0; 4]).validate(&g).is_err());
        StepConfig::new(0.1, 2, vec![1.0; 4]).validate(&g).unwrap();
    }
}
