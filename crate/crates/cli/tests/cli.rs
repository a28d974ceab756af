use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vpfp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpfp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|t| t.parse().unwrap()).collect())
        .collect()
}

#[test]
fn zero_step_run_returns_initial_data() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = vpfp(
        &["run", "--nx", "4", "--nv", "4", "--rank", "2", "--dt", "0"],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("done").exists());
    assert_eq!(header(&out.join("phase.csv")), "t,x,v,f");
    let phase = rows(&out.join("phase.csv"));
    assert_eq!(phase.len(), 16);
    for r in phase {
        let (x, v, f) = (r[1], r[2], r[3]);
        let rho = (2.0 * PI).sqrt() * (2.0 + (2.0 * PI * x).cos());
        let exact = rho / (2.0 * PI).sqrt() * (-(v - 1.5) * (v - 1.5) / 2.0).exp();
        assert!(
            (f - exact).abs() <= 1e-13 * exact.max(1.0),
            "{x} {v} {f} {exact}"
        );
    }
}

#[test]
fn run_writes_schemas_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = vpfp(
        &[
            "run",
            "--nx",
            "8",
            "--nv",
            "8",
            "--rank",
            "3",
            "--dt",
            "1e-3",
            "--t-final",
            "3e-3",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("ap.csv")), "t,e_ap_global");
    assert_eq!(header(&out.join("fields.csv")), "t,x,rho,efield");
    assert_eq!(header(&out.join("pointwise_ap.csv")), "t,x,eps,e_ap");
    assert_eq!(rows(&out.join("ap.csv")).len(), 4);
    assert_eq!(rows(&out.join("fields.csv")).len(), 16);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["nx"], "8");
    assert_eq!(m["rank"], 3);
    assert_eq!(m["steps"], 3);
    let cfl = m["cfl"].as_f64().unwrap();
    // max |v| dt / dx with cell centres at +-(6 - dv/2)
    assert!((cfl - 5.25 * 1e-3 * 8.0).abs() < 1e-12, "{cfl}");
}

#[test]
fn manifest_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let args = [
        "run",
        "--nx",
        "8",
        "--nv",
        "12",
        "--rank",
        "4",
        "--dt",
        "1e-3",
        "--t-final",
        "2e-3",
        "--order",
        "2",
        "--eps",
        "1e-4",
    ];
    assert!(vpfp(&args, &a).status.success());
    let manifest = a.join("manifest.json");
    let o = vpfp(&["run", "--config", manifest.to_str().unwrap()], &b);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["phase.csv", "fields.csv", "ap.csv", "pointwise_ap.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn verify_reports_assumption_for_zero_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("verify");
    let o = vpfp(
        &[
            "verify", "--eps", "1e-6", "--nx", "16", "--nv", "16", "--rank", "6",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["assumption_ok"], true);
    assert_eq!(cert["passed"], true);
    for key in ["lambda_n", "gamma_h", "kappa_h", "m_min", "m_max"] {
        assert!(cert[key].is_number(), "{key}");
    }
    // E = 0 gives kappa_h = 0 and theta = 1
    assert_eq!(cert["kappa_h"], 0.0);
    assert_eq!(cert["theta"], 1.0);
}

#[test]
fn convergence_and_ap_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("conv");
    let o = vpfp(
        &["convergence", "--nx", "8", "--nv", "8", "--rank", "3"],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("convergence.csv")), "dt,error_l1");
    let table = rows(&out.join("convergence.csv"));
    assert_eq!(table.len(), 5);
    assert_eq!(table[0][0], 1e-3);
    assert_eq!(table[4][0], 1e-3 / 16.0);

    let out = tmp.path().join("ap");
    let o = vpfp(
        &[
            "ap",
            "--nx",
            "8",
            "--nv",
            "8",
            "--rank",
            "3",
            "--t-final",
            "1e-2",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("ap.csv")), "t,e_ap_global");
    assert_eq!(rows(&out.join("ap.csv")).len(), 5);
}

#[test]
fn comparison_layout() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["mixed", "bump"] {
        let out = tmp.path().join(cmd);
        let o = vpfp(
            &[
                cmd,
                "--nx",
                "10",
                "--nv",
                "16",
                "--rank",
                "10",
                "--dt",
                "1e-3",
                "--t-final",
                "2e-3",
            ],
            &out,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for sub in ["lowrank", "full"] {
            for f in ["fields.csv", "phase.csv", "pointwise_ap.csv", "ap.csv"] {
                assert!(out.join(sub).join(f).exists(), "{cmd}/{sub}/{f}");
            }
        }
        assert_eq!(header(&out.join("difference/phase.csv")), "t,x,v,f");
        // full rank: the two solvers start from the same tensor
        let diff = rows(&out.join("difference/phase.csv"));
        assert!(diff.iter().filter(|r| r[0] == 0.0).all(|r| r[3] < 1e-12));
        assert!(out.join("comparison.json").exists() && out.join("done").exists());
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| vpfp(args, &tmp.path().join("x")).status.code();
    assert_eq!(code(&["run", "--nx", "1"]), Some(2));
    assert_eq!(code(&["run", "--order", "3"]), Some(2));
    assert_eq!(code(&["run", "--dt", "3e-3", "--t-final", "1e-2"]), Some(2));
    assert_eq!(code(&["run", "--solver", "spectral"]), Some(2));
    assert_eq!(code(&["mixed", "--scenario", "noneq_conv"]), Some(2));
    assert_eq!(code(&["run", "--config", "/nonexistent.cfg"]), Some(2));

    let cfg = tmp.path().join("wide.cfg");
    fs::write(&cfg, "v-max = 2000\nnx = 8\nnv = 8\nrank = 2\n").unwrap();
    let out = tmp.path().join("wide");
    let o = vpfp(&["run", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(
        msg.contains("fokker_planck::compute_weights") && msg.contains("cell 0"),
        "{msg}"
    );
    // the manifest is written first; the missing marker flags the failed run
    assert!(out.join("manifest.json").exists());
    assert!(!out.join("done").exists());
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_vpfp"))
        .args(["run", "--nx", "4", "--nv", "4", "--rank", "2", "--dt", "0"])
        .env("VPFP_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("done").exists());
}

#[test]
fn shipped_configs_match_reference_setups() {
    use vpfp_core::{ScenarioConfig, ScenarioKind};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let load = |name: &str| ScenarioConfig::load(&dir.join(name), ScenarioKind::NoneqConv).unwrap();
    let first = load("first_order.cfg");
    assert_eq!(
        (first.nx, first.nv, first.rank, first.levels),
        (64, 64, 10, 6)
    );
    assert_eq!(first.n_steps().unwrap(), 5);
    assert_eq!(load("second_order.cfg").order, 2);
    assert_eq!(load("ap.cfg").n_steps().unwrap(), 40);
    let mixed = load("mixed.cfg");
    assert_eq!(
        (mixed.scenario, mixed.rank, mixed.n_steps().unwrap()),
        (ScenarioKind::MixedRegime, 13, 3000)
    );
    assert_eq!(load("bump.cfg").scenario, ScenarioKind::BumpOnTail);
}
