use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde_json::{json, Value};
use vpfp_core::advection::cfl_number;
use vpfp_core::output::{
    mark_done, write_field_rows, write_json, write_phase_rows, CsvWriter, AP_HEADER,
    CONVERGENCE_HEADER, FIELDS_HEADER, MANIFEST_FILE, PHASE_HEADER, POINTWISE_AP_HEADER,
};
use vpfp_core::scenarios::{
    build_initial, correlation, run_bump_on_tail, run_ladder, run_mixed, run_verify, scenario_grid,
    APSeries, InitialData, RegimeComparison, Simulation, Snapshot, SolverRun,
};
use vpfp_core::{LowRankState, PhaseGrid, Result, ScenarioConfig, ScenarioKind, VpfpError};

/// Output directory with its manifest; the manifest is written on creation
/// and rewritten with timings when the run completes.
struct RunDir {
    dir: PathBuf,
    manifest: Value,
    start: Instant,
}

impl RunDir {
    fn create(command: &str, cfg: &ScenarioConfig, init: &InitialData) -> Result<Self> {
        let dir = cfg
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("vpfp_out").join(command));
        std::fs::create_dir_all(&dir)?;
        let _ = std::fs::remove_file(dir.join(vpfp_core::output::DONE_FILE));
        let grid = &init.grid;
        let (_, truncation_error) = LowRankState::from_dense_with_error(&init.f0, cfg.rank, grid)?;
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg.to_pairs(),
            "grid": {
                "x_min": grid.x_min, "x_max": grid.x_max, "nx": grid.nx, "dx": grid.dx,
                "v_min": grid.v_min, "v_max": grid.v_max, "nv": grid.nv, "dv": grid.dv,
            },
            "rank": cfg.rank,
            "cfl": cfl_number(cfg.dt, grid),
            "neutrality_residual": init.neutrality_residual,
            "discrete_charge": init.discrete_charge,
            "rank_truncation_error": truncation_error,
        });
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        log::info!("{command}: writing to {}", dir.display());
        Ok(RunDir {
            dir,
            manifest,
            start: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn finish(mut self, extra: Value) -> Result<()> {
        let m = self
            .manifest
            .as_object_mut()
            .expect("manifest is an object");
        m.insert(
            "elapsed_seconds".into(),
            json!(self.start.elapsed().as_secs_f64()),
        );
        if let Value::Object(map) = extra {
            m.extend(map);
        }
        write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)?;
        mark_done(&self.dir)
    }
}

fn prepare(command: &str, cfg: &ScenarioConfig) -> Result<(InitialData, RunDir)> {
    let grid = scenario_grid(cfg)?;
    let init = build_initial(cfg, &grid)?;
    let dir = RunDir::create(command, cfg, &init)?;
    Ok((init, dir))
}

fn write_ap(path: &Path, series: &APSeries) -> Result<()> {
    let mut w = CsvWriter::create(path, AP_HEADER)?;
    for &(t, e) in &series.rows {
        w.row(&[t, e])?;
    }
    w.finish()?;
    Ok(())
}

fn write_snapshots(dir: &Path, snaps: &[Snapshot], eps: &[f64], grid: &PhaseGrid) -> Result<()> {
    let mut fields = CsvWriter::create(&dir.join("fields.csv"), FIELDS_HEADER)?;
    let mut phase = CsvWriter::create(&dir.join("phase.csv"), PHASE_HEADER)?;
    let mut pointwise = CsvWriter::create(&dir.join("pointwise_ap.csv"), POINTWISE_AP_HEADER)?;
    for s in snaps {
        write_field_rows(&mut fields, s.t, &s.rho, &s.efield, grid)?;
        write_phase_rows(&mut phase, s.t, &s.f, grid)?;
        for ((x, e), ap) in grid.x.iter().zip(eps).zip(&s.ap_pointwise) {
            pointwise.row(&[s.t, *x, *e, *ap])?;
        }
    }
    fields.finish()?;
    phase.finish()?;
    pointwise.finish()?;
    Ok(())
}

pub fn run(cfg: Result<ScenarioConfig>) -> Result<ExitCode> {
    let cfg = cfg?;
    let n = cfg.n_steps()?;
    let (init, dir) = prepare("run", &cfg)?;
    let step = vpfp_core::StepConfig::new(cfg.dt, cfg.order, init.eps.clone());
    let mut sim = Simulation::new(init, cfg.solver, cfg.rank, step)?;
    let mut snaps = vec![Snapshot::take(&sim)?];
    let mut ap = CsvWriter::create(&dir.path("ap.csv"), AP_HEADER)?;
    ap.row(&[0.0, sim.ap_error()?])?;
    sim.run(n, |s, rep| ap.row(&[s.time, rep.ap_error]))?;
    ap.finish()?;
    if n > 0 {
        snaps.push(Snapshot::take(&sim)?);
    }
    write_snapshots(&dir.dir, &snaps, &sim.init.eps, sim.grid())?;
    let mass = sim.density().iter().sum::<f64>() * sim.grid().dx;
    dir.finish(json!({ "steps": n, "final_time": sim.time, "final_mass": mass, "neutrality_warnings": sim.neutrality_warnings }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn convergence(cfg: Result<ScenarioConfig>) -> Result<ExitCode> {
    let cfg = cfg?;
    let (init, dir) = prepare("convergence", &cfg)?;
    let table = run_ladder(&init, &cfg)?;
    let mut w = CsvWriter::create(&dir.path("convergence.csv"), CONVERGENCE_HEADER)?;
    for &(dt, e) in &table.rows {
        w.row(&[dt, e])?;
    }
    w.finish()?;
    log::info!("fitted slope {:.4}", table.slope);
    dir.finish(json!({ "slope": table.slope }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn ap(cfg: Result<ScenarioConfig>) -> Result<ExitCode> {
    let cfg = require(cfg?, ScenarioKind::ApTest)?;
    let (init, dir) = prepare("ap", &cfg)?;
    let step = vpfp_core::StepConfig::new(cfg.dt, cfg.order, init.eps.clone());
    let mut sim = Simulation::new(init, cfg.solver, cfg.rank, step)?;
    let series = vpfp_core::scenarios::run_ap_series(&mut sim, cfg.n_steps()?)?;
    write_ap(&dir.path("ap.csv"), &series)?;
    log::info!("AP plateau {:.4e}", series.plateau());
    dir.finish(json!({ "plateau": series.plateau() }))?;
    Ok(ExitCode::SUCCESS)
}

fn require(cfg: ScenarioConfig, kind: ScenarioKind) -> Result<ScenarioConfig> {
    if cfg.scenario != kind {
        return Err(VpfpError::Config(format!(
            "this command runs scenario '{}', config names '{}'",
            kind.name(),
            cfg.scenario.name()
        )));
    }
    Ok(cfg)
}

fn write_solver_run(dir: &Path, run: &SolverRun, eps: &[f64], grid: &PhaseGrid) -> Result<()> {
    write_snapshots(dir, &run.snapshots, eps, grid)?;
    write_ap(&dir.join("ap.csv"), &run.ap)
}

pub fn comparison(cfg: Result<ScenarioConfig>, kind: ScenarioKind) -> Result<ExitCode> {
    let cfg = require(cfg?, kind)?;
    let name = if kind == ScenarioKind::MixedRegime {
        "mixed"
    } else {
        "bump"
    };
    // the manifest must precede every data file
    let (_, dir) = prepare(name, &cfg)?;
    let cmp: RegimeComparison = match kind {
        ScenarioKind::MixedRegime => run_mixed(&cfg)?,
        _ => run_bump_on_tail(&cfg)?,
    };
    let grid = &cmp.init.grid;
    write_solver_run(&dir.path("lowrank"), &cmp.lowrank, &cmp.init.eps, grid)?;
    write_solver_run(&dir.path("full"), &cmp.full, &cmp.init.eps, grid)?;
    let mut diff = CsvWriter::create(&dir.path("difference/phase.csv"), PHASE_HEADER)?;
    let mut summary = Vec::new();
    for (i, (a, b)) in cmp
        .lowrank
        .snapshots
        .iter()
        .zip(&cmp.full.snapshots)
        .enumerate()
    {
        write_phase_rows(&mut diff, a.t, &(&b.f - &a.f).abs(), grid)?;
        let log_ap: Vec<f64> = a.ap_pointwise.iter().map(|e| e.ln()).collect();
        let log_eps: Vec<f64> = cmp.init.eps.iter().map(|e| e.ln()).collect();
        summary.push(json!({
            "t": a.t,
            "density_gap": cmp.density_gap(i)?,
            "phase_gap": cmp.phase_gap(i)?,
            "ap_eps_correlation": correlation(&log_ap, &log_eps),
        }));
    }
    diff.finish()?;
    write_json(&dir.path("comparison.json"), &summary)?;
    dir.finish(json!({
        "rank_truncation_error": cmp.lowrank.truncation_error,
        "neutrality_warnings": cmp.lowrank.neutrality_warnings + cmp.full.neutrality_warnings,
    }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn verify(cfg: Result<ScenarioConfig>) -> Result<ExitCode> {
    let cfg = cfg?;
    let (_, dir) = prepare("verify", &cfg)?;
    let report = run_verify(&cfg)?;
    write_json(&dir.path("certificate.json"), &report)?;
    log::info!(
        "assumption_ok (E = 0): {}, audits passed: {}",
        report.constants.assumption_ok,
        report.passed
    );
    let passed = report.passed;
    dir.finish(json!({ "passed": passed }))?;
    Ok(if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
