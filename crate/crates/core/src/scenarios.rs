//! Initial data, background charges and relaxation profiles of the
//! reference experiments, and the study drivers built on top of them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::config::{steps_for, ScenarioConfig, ScenarioKind, SolverKind};
use crate::diagnostics::{
    ap_constants, ap_error_global, ap_error_pointwise, residual_certificate, verify_coercivity,
    verify_projection_bound, APConstants, CertificateReport, CoercivityReport, ProjectionReport,
};
use crate::error::{Result, VpfpError};
use crate::field::solve_poisson;
use crate::fokker_planck::{compute_weights, FPWeights};
use crate::fulltensor::FullStepper;
use crate::grid::PhaseGrid;
use crate::lowrank::LowRankState;
use crate::steppers::{FieldMode, StepConfig, StepReport, Stepper};

/// Cold-beam temperature of the bump-on-tail data.
pub const T_COLD: f64 = 5e-3;

/// Modified Bessel function `I_0` by its power series.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..60 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Knudsen profile of the mixed-regime test: order one on the left,
/// `eps0` for `x > 0.3`.
pub fn mixed_eps(x: f64, eps0: f64) -> f64 {
    if x <= 0.3 {
        eps0 + 0.5 * ((5.0 - 10.0 * x).tanh() + (5.0 + 10.0 * x).tanh())
    } else {
        eps0
    }
}

/// Midpoint-rule constant making `C e^{cos(pi x)}` carry the same charge as
/// the mixed-regime density on `grid`.
pub fn mixed_c_eta(grid: &PhaseGrid) -> f64 {
    let rho: f64 = grid.x.iter().map(|&x| mixed_rho0(x)).sum();
    let shape: f64 = grid.x.iter().map(|&x| (PI * x).cos().exp()).sum();
    rho / shape
}

fn mixed_rho0(x: f64) -> f64 {
    (2.0 * PI).sqrt() / 6.0 * (2.0 + (PI * x).sin())
}

fn gaussian(v: f64, center: f64, temp: f64) -> f64 {
    (-(v - center) * (v - center) / (2.0 * temp)).exp()
}

pub fn scenario_grid(cfg: &ScenarioConfig) -> Result<PhaseGrid> {
    let (x_min, x_max) = match cfg.scenario {
        ScenarioKind::MixedRegime => (-1.0, 1.0),
        _ => (0.0, 1.0),
    };
    PhaseGrid::new(x_min, x_max, cfg.nx, -cfg.v_max, cfg.v_max, cfg.nv)
}

#[derive(Debug, Clone)]
pub struct InitialData {
    pub grid: PhaseGrid,
    pub f0: DMatrix<f64>,
    pub eta: Vec<f64>,
    pub eps: Vec<f64>,
    /// Field of the initial density.
    pub e0: Vec<f64>,
    /// `sum (rho0 - eta) dx` for the prescribed density profile.
    pub neutrality_residual: f64,
    /// `sum (<f0, 1>_v - eta) dx` for the sampled distribution.
    pub discrete_charge: f64,
}

/// Whether a scenario starts from a local Maxwellian at the initial field.
fn starts_at_equilibrium(cfg: &ScenarioConfig) -> bool {
    match cfg.scenario {
        ScenarioKind::EqConv | ScenarioKind::MixedRegime => true,
        ScenarioKind::ApTest => cfg.order == 2,
        ScenarioKind::NoneqConv | ScenarioKind::BumpOnTail => false,
    }
}

pub fn build_initial(cfg: &ScenarioConfig, grid: &PhaseGrid) -> Result<InitialData> {
    let sqrt2pi = (2.0 * PI).sqrt();
    let (rho0, eta): (Vec<f64>, Vec<f64>) = match cfg.scenario {
        ScenarioKind::NoneqConv | ScenarioKind::EqConv | ScenarioKind::ApTest => {
            let i0 = bessel_i0(1.0);
            grid.x
                .iter()
                .map(|&x| {
                    let c = (2.0 * PI * x).cos();
                    (sqrt2pi * (2.0 + c), 2.0 * sqrt2pi * c.exp() / i0)
                })
                .unzip()
        }
        ScenarioKind::MixedRegime => {
            let c_eta = mixed_c_eta(grid);
            grid.x
                .iter()
                .map(|&x| (mixed_rho0(x), c_eta * (PI * x).cos().exp()))
                .unzip()
        }
        ScenarioKind::BumpOnTail => grid
            .x
            .iter()
            .map(|&x| {
                (
                    0.3 + (-(x - 0.3) * (x - 0.3) / 0.01).exp(),
                    0.3 + (-(x - 0.6) * (x - 0.6) / 0.01).exp(),
                )
            })
            .unzip(),
    };
    let neutrality_residual = rho0.iter().zip(&eta).map(|(r, e)| r - e).sum::<f64>() * grid.dx;
    let e_profile = solve_poisson(&rho0, &eta, grid)?.e;

    let f0 = match cfg.scenario {
        ScenarioKind::BumpOnTail => DMatrix::from_fn(grid.nx, grid.nv, |p, q| {
            let v = grid.v[q];
            rho0[p] / sqrt2pi * (gaussian(v, 0.0, 1.0) + gaussian(v, 1.5, T_COLD))
        }),
        _ if starts_at_equilibrium(cfg) => DMatrix::from_fn(grid.nx, grid.nv, |p, q| {
            rho0[p] / sqrt2pi * gaussian(grid.v[q], e_profile[p], 1.0)
        }),
        _ => DMatrix::from_fn(grid.nx, grid.nv, |p, q| {
            rho0[p] / sqrt2pi * gaussian(grid.v[q], 1.5, 1.0)
        }),
    };
    let eps = match cfg.scenario {
        ScenarioKind::MixedRegime => grid.x.iter().map(|&x| mixed_eps(x, cfg.eps)).collect(),
        _ => vec![cfg.eps; grid.nx],
    };
    let rho_f = grid.velocity_sum(&f0);
    let discrete_charge = rho_f.iter().zip(&eta).map(|(r, e)| r - e).sum::<f64>() * grid.dx;
    let e0 = solve_poisson(&rho_f, &eta, grid)?.e;
    Ok(InitialData {
        grid: grid.clone(),
        f0,
        eta,
        eps,
        e0,
        neutrality_residual,
        discrete_charge,
    })
}

#[derive(Debug, Clone)]
pub enum SolverState {
    LowRank(LowRankState),
    Full(DMatrix<f64>),
}

#[derive(Debug, Clone)]
enum Engine {
    LowRank(Stepper),
    Full(FullStepper),
}

/// One time-marching run of either solver.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub init: InitialData,
    pub state: SolverState,
    engine: Engine,
    pub time: f64,
    pub steps_taken: usize,
    /// Field used by the collision operator in the most recent step.
    pub efield: Vec<f64>,
    /// Weighted truncation error of the rank-r initial data (zero for the
    /// full-tensor solver).
    pub truncation_error: f64,
    pub neutrality_warnings: usize,
}

impl Simulation {
    pub fn new(
        init: InitialData,
        solver: SolverKind,
        rank: usize,
        step: StepConfig,
    ) -> Result<Self> {
        let grid = &init.grid;
        let (state, engine, truncation_error) = match solver {
            SolverKind::LowRank => {
                let (st, tail) = LowRankState::from_dense_with_error(&init.f0, rank, grid)?;
                (
                    SolverState::LowRank(st),
                    Engine::LowRank(Stepper::new(grid, &init.eta, step)?),
                    tail,
                )
            }
            SolverKind::Full => (
                SolverState::Full(init.f0.clone()),
                Engine::Full(FullStepper::new(grid, &init.eta, step)?),
                0.0,
            ),
        };
        let efield = match &step_config(&engine).field_mode {
            FieldMode::Fixed(e) => e.clone(),
            FieldMode::SelfConsistent => init.e0.clone(),
        };
        Ok(Simulation {
            init,
            state,
            engine,
            time: 0.0,
            steps_taken: 0,
            efield,
            truncation_error,
            neutrality_warnings: 0,
        })
    }

    /// Builds initial data and a stepper from a scenario configuration.
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let grid = scenario_grid(cfg)?;
        let init = build_initial(cfg, &grid)?;
        let step = StepConfig::new(cfg.dt, cfg.order, init.eps.clone());
        Self::new(init, cfg.solver, cfg.rank, step)
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.init.grid
    }

    pub fn dt(&self) -> f64 {
        step_config(&self.engine).dt
    }

    pub fn advance(&mut self) -> Result<StepReport> {
        let n = self.steps_taken;
        let report = match (&self.engine, &self.state) {
            (Engine::LowRank(s), SolverState::LowRank(st)) => {
                let (next, rep) = s.step(st).map_err(|e| e.at_step(n))?;
                self.state = SolverState::LowRank(next);
                rep
            }
            (Engine::Full(s), SolverState::Full(f)) => {
                let (next, rep) = s.step(f).map_err(|e| e.at_step(n))?;
                self.state = SolverState::Full(next);
                rep
            }
            _ => unreachable!("engine and state kinds always match"),
        };
        if !report.mass.is_finite() || !report.ap_error.is_finite() {
            return Err(VpfpError::Range {
                module: "scenarios::Simulation",
                detail: format!("non-finite solution after step {n}"),
            }
            .at_step(n));
        }
        self.steps_taken += 1;
        self.time = self.steps_taken as f64 * self.dt();
        self.efield = report.e.clone();
        self.neutrality_warnings += report.neutrality_warning as usize;
        Ok(report)
    }

    pub fn dense(&self) -> DMatrix<f64> {
        match &self.state {
            SolverState::LowRank(st) => st.reconstruct(),
            SolverState::Full(f) => f.clone(),
        }
    }

    pub fn density(&self) -> Vec<f64> {
        match &self.state {
            SolverState::LowRank(st) => st.density(self.grid()),
            SolverState::Full(f) => self.grid().velocity_sum(f),
        }
    }

    pub fn weights(&self) -> Result<FPWeights> {
        compute_weights(&self.efield, &self.init.eps, self.grid())
    }

    pub fn ap_error(&self) -> Result<f64> {
        ap_error_global(&self.dense(), &self.weights()?, self.grid())
    }

    pub fn ap_error_pointwise(&self) -> Result<Vec<f64>> {
        ap_error_pointwise(&self.dense(), &self.weights()?, self.grid())
    }

    /// Advances `n` steps, calling `observe` after each.
    pub fn run(
        &mut self,
        n: usize,
        mut observe: impl FnMut(&Self, &StepReport) -> Result<()>,
    ) -> Result<()> {
        for _ in 0..n {
            let rep = self.advance()?;
            observe(self, &rep)?;
        }
        Ok(())
    }
}

fn step_config(engine: &Engine) -> &StepConfig {
    match engine {
        Engine::LowRank(s) => &s.cfg,
        Engine::Full(s) => &s.cfg,
    }
}

/// Ordinary least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|t| t.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Pearson correlation coefficient.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(s, t)| (s - ma) * (t - mb)).sum();
    let va: f64 = a.iter().map(|s| (s - ma) * (s - ma)).sum();
    let vb: f64 = b.iter().map(|t| (t - mb) * (t - mb)).sum();
    cov / (va * vb).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTable {
    /// `(dt_k, ||f^{dt_k}(T) - f^{dt_{k+1}}(T)||_{L1})`.
    pub rows: Vec<(f64, f64)>,
    pub slope: f64,
}

/// Successive-difference convergence study on the given initial data.
pub fn run_ladder(init: &InitialData, cfg: &ScenarioConfig) -> Result<ConvergenceTable> {
    if cfg.levels < 3 {
        return Err(VpfpError::Config(format!(
            "a ladder needs at least 3 levels, got {}",
            cfg.levels
        )));
    }
    let mut finals = Vec::with_capacity(cfg.levels);
    let mut dts = Vec::with_capacity(cfg.levels);
    for k in 0..cfg.levels {
        let dt = cfg.dt / (1u64 << k) as f64;
        let n = steps_for(dt, cfg.t_final)?;
        let step = StepConfig::new(dt, cfg.order, init.eps.clone());
        let mut sim = Simulation::new(init.clone(), cfg.solver, cfg.rank, step)?;
        sim.run(n, |_, _| Ok(()))?;
        log::info!("ladder level {k}: dt = {dt:e}, {n} steps");
        finals.push(sim.dense());
        dts.push(dt);
    }
    let grid = &init.grid;
    let mut rows = Vec::with_capacity(cfg.levels - 1);
    for k in 0..cfg.levels - 1 {
        rows.push((dts[k], grid.norm1_xv(&(&finals[k] - &finals[k + 1]))?));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().copied().unzip();
    let slope = loglog_slope(&x, &y);
    Ok(ConvergenceTable { rows, slope })
}

pub fn run_convergence(cfg: &ScenarioConfig) -> Result<ConvergenceTable> {
    let grid = scenario_grid(cfg)?;
    run_ladder(&build_initial(cfg, &grid)?, cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct APSeries {
    /// `(t^n, E_AP(t^n))`, starting at `t = 0`.
    pub rows: Vec<(f64, f64)>,
}

impl APSeries {
    /// Mean over the last quarter of the steps.
    pub fn plateau(&self) -> f64 {
        let n = self.rows.len() - 1;
        let tail = (n / 4).max(1);
        self.rows[self.rows.len() - tail..]
            .iter()
            .map(|r| r.1)
            .sum::<f64>()
            / tail as f64
    }

    pub fn max(&self) -> f64 {
        self.rows.iter().map(|r| r.1).fold(0.0, f64::max)
    }
}

/// Records the global AP error after every step of one run.
pub fn run_ap_series(sim: &mut Simulation, n: usize) -> Result<APSeries> {
    let mut rows = vec![(0.0, sim.ap_error()?)];
    sim.run(n, |s, rep| {
        rows.push((s.time, rep.ap_error));
        Ok(())
    })?;
    Ok(APSeries { rows })
}

pub fn run_ap_study(cfg: &ScenarioConfig) -> Result<APSeries> {
    let mut sim = Simulation::from_config(cfg)?;
    run_ap_series(&mut sim, cfg.n_steps()?)
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub rho: Vec<f64>,
    pub efield: Vec<f64>,
    pub f: DMatrix<f64>,
    pub ap_pointwise: Vec<f64>,
}

impl Snapshot {
    pub fn take(sim: &Simulation) -> Result<Self> {
        Ok(Snapshot {
            t: sim.time,
            rho: sim.density(),
            efield: sim.efield.clone(),
            f: sim.dense(),
            ap_pointwise: sim.ap_error_pointwise()?,
        })
    }
}

/// Snapshots and AP history of one solver in a regime comparison.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub solver: SolverKind,
    pub snapshots: Vec<Snapshot>,
    pub ap: APSeries,
    pub truncation_error: f64,
    pub neutrality_warnings: usize,
}

/// Runs one solver to `cfg.t_final`, keeping snapshots at `times` (which
/// must be multiples of `dt`).
pub fn run_with_snapshots(
    init: &InitialData,
    cfg: &ScenarioConfig,
    solver: SolverKind,
    times: &[f64],
) -> Result<SolverRun> {
    let mut marks = Vec::with_capacity(times.len());
    for &t in times {
        marks.push(steps_for(cfg.dt, t)?);
    }
    let n = cfg.n_steps()?;
    let step = StepConfig::new(cfg.dt, cfg.order, init.eps.clone());
    let mut sim = Simulation::new(init.clone(), solver, cfg.rank, step)?;
    let mut snapshots = Vec::new();
    if marks.contains(&0) {
        snapshots.push(Snapshot::take(&sim)?);
    }
    let mut rows = vec![(0.0, sim.ap_error()?)];
    sim.run(n, |s, rep| {
        rows.push((s.time, rep.ap_error));
        if marks.contains(&s.steps_taken) {
            snapshots.push(Snapshot::take(s)?);
        }
        Ok(())
    })?;
    Ok(SolverRun {
        solver,
        snapshots,
        ap: APSeries { rows },
        truncation_error: sim.truncation_error,
        neutrality_warnings: sim.neutrality_warnings,
    })
}

/// Low-rank and full-tensor runs on the same data.
#[derive(Debug, Clone)]
pub struct RegimeComparison {
    pub init: InitialData,
    pub lowrank: SolverRun,
    pub full: SolverRun,
}

impl RegimeComparison {
    /// Relative discrete `L1` gap between the two densities at snapshot `i`.
    pub fn density_gap(&self, i: usize) -> Result<f64> {
        let g = &self.init.grid;
        let a = &self.lowrank.snapshots[i].rho;
        let b = &self.full.snapshots[i].rho;
        let diff: Vec<f64> = a.iter().zip(b).map(|(s, t)| s - t).collect();
        Ok(g.norm1_x(&diff)? / g.norm1_x(b)?)
    }

    /// Relative discrete `L1` gap between the two distributions at snapshot `i`.
    pub fn phase_gap(&self, i: usize) -> Result<f64> {
        let g = &self.init.grid;
        let a = &self.lowrank.snapshots[i].f;
        let b = &self.full.snapshots[i].f;
        Ok(g.norm1_xv(&(a - b))? / g.norm1_xv(b)?)
    }
}

pub fn run_comparison(cfg: &ScenarioConfig, times: &[f64]) -> Result<RegimeComparison> {
    let grid = scenario_grid(cfg)?;
    let init = build_initial(cfg, &grid)?;
    Ok(RegimeComparison {
        lowrank: run_with_snapshots(&init, cfg, SolverKind::LowRank, times)?,
        full: run_with_snapshots(&init, cfg, SolverKind::Full, times)?,
        init,
    })
}

/// Mixed-regime comparison with snapshots at `t = 0`, `0.1` and `t_final`.
pub fn run_mixed(cfg: &ScenarioConfig) -> Result<RegimeComparison> {
    let mut times = vec![0.0];
    if cfg.t_final > 0.1 {
        times.push(0.1);
    }
    times.push(cfg.t_final);
    run_comparison(cfg, &times)
}

/// Bump-on-tail comparison with snapshots at `t = 0` and `t_final`.
pub fn run_bump_on_tail(cfg: &ScenarioConfig) -> Result<RegimeComparison> {
    run_comparison(cfg, &[0.0, cfg.t_final])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    /// Constants for a vanishing field.
    #[serde(flatten)]
    pub constants: APConstants,
    /// Constants for the field of the initial data.
    pub initial_field_constants: APConstants,
    pub coercivity: CoercivityReport,
    pub projection_zero_field: ProjectionReport,
    pub projection_initial_field: ProjectionReport,
    /// Residual certificates along a run with the field imposed to zero.
    pub zero_field_certificates: Vec<CertificateReport>,
    /// Residual certificates along a self-consistent run.
    pub self_consistent_certificates: Vec<CertificateReport>,
    pub passed: bool,
}

/// Number of traced steps in the certificate suite.
pub const VERIFY_STEPS: usize = 10;

/// Randomized audits and residual certificates on the scenario data.
pub fn run_verify(cfg: &ScenarioConfig) -> Result<VerifyReport> {
    let grid = scenario_grid(cfg)?;
    let init = build_initial(cfg, &grid)?;
    let eps = vec![cfg.eps; grid.nx];
    let w_zero = compute_weights(&vec![0.0; grid.nx], &eps, &grid)?;
    let w_init = compute_weights(&init.e0, &eps, &grid)?;
    let state = LowRankState::from_dense(&init.f0, cfg.rank, &grid)?;

    let coercivity = verify_coercivity(&w_zero, &grid, cfg.trials, cfg.seed)?;
    let projection_zero_field =
        verify_projection_bound(&state.x, &w_zero, &grid, cfg.trials, cfg.seed)?;
    let projection_initial_field = verify_projection_bound(
        &state.x,
        &w_init,
        &grid,
        cfg.trials,
        cfg.seed.wrapping_add(1),
    )?;

    let dt = if cfg.dt > 0.0 { cfg.dt } else { 1e-3 };
    let trace_run = |mode: FieldMode| -> Result<Vec<CertificateReport>> {
        let mut step = StepConfig::new(dt, 1, eps.clone());
        step.field_mode = mode;
        let stepper = Stepper::new(&grid, &init.eta, step)?;
        let mut cur = state.clone();
        let mut out = Vec::with_capacity(VERIFY_STEPS);
        for n in 0..VERIFY_STEPS {
            let (next, _, trace) = stepper
                .step_first_order_traced(&cur)
                .map_err(|e| e.at_step(n))?;
            out.push(residual_certificate(&trace, &grid)?);
            cur = next;
        }
        Ok(out)
    };
    let zero_field_certificates = trace_run(FieldMode::Fixed(vec![0.0; grid.nx]))?;
    let self_consistent_certificates = trace_run(FieldMode::SelfConsistent)?;

    let passed = coercivity.passed
        && projection_zero_field.passed
        && projection_initial_field.passed
        && zero_field_certificates.iter().all(|c| c.passed)
        && self_consistent_certificates.iter().all(|c| c.passed);
    Ok(VerifyReport {
        constants: ap_constants(&w_zero, &grid),
        initial_field_constants: ap_constants(&w_init, &grid),
        coercivity,
        projection_zero_field,
        projection_initial_field,
        zero_field_certificates,
        self_consistent_certificates,
        passed,
    })
}
