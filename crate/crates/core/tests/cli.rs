use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flexquad::runner::{run_scenario, sweep};
use flexquad::scenario::Scenario;
use flexquad::trace::read_summary;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexquad")).args(args).output().unwrap()
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn malformed_config_reports_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.toml", "name = \"x\"\n\n[arm]\nrho = 8.0\n");
    let out = bin(&[&p, "-o", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("rho"), "{err}");
}

#[test]
fn abort_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "flip.toml",
        "name = \"flip\"\n[sim]\nduration = 3.0\n[[events]]\ntype = \"perturbation\"\nstart = 0.1\nduration = 1.0\nmoment = [5.0, 0.0, 0.0]\n",
    );
    let o = dir.path().join("o");
    let out = bin(&[&p, "-o", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_summary(fs::File::open(o.join("summary.csv")).unwrap()).unwrap();
    assert_eq!(rows[0].status, "abort");
    assert!(o.join("trace.csv").exists());
}

#[test]
fn non_convergence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "short.toml",
        "name = \"short\"\nmode = \"landing\"\n[sim]\ndt_physics = 0.01\ndt_control = 0.01\nduration = 0.5\n",
    );
    let out = bin(&[&p, "-o", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn configuration_override_breaks_yaw_hold() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("a");
    let out = bin(&[scenario_path("yaw_hold_rho6").to_str().unwrap(), "-o", o.to_str().unwrap(), "--config", "a"]);
    assert!(out.status.success() || out.status.code() == Some(2));
    let rows = read_summary(fs::File::open(o.join("summary.csv")).unwrap()).unwrap();
    assert_eq!(rows[0].yaw_hold_pass, Some(false));
}

#[test]
fn corrections_override_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_path("landing_gridpoint1");
    let run = |seed: &str, sub: &str| {
        let o = dir.path().join(sub);
        assert!(bin(&[path.to_str().unwrap(), "-o", o.to_str().unwrap(), "--seed", seed]).status.success());
        fs::read(o.join("trace.csv")).unwrap()
    };
    assert_eq!(run("7", "a"), run("7", "b"));
    assert_ne!(run("7", "a"), run("8", "c"));

    let o = dir.path().join("off");
    let out = bin(&[scenario_path("hover").to_str().unwrap(), "-o", o.to_str().unwrap(), "--corrections", "off"]);
    assert!(out.status.success());
}

#[test]
fn rho_sweep_gives_kappa_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&[
        scenario_path("roll_rho8").to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
        "--sweep",
        "arm.rho_tpu",
        "--values",
        "10,6,8",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let values: Vec<&str> = rows.iter().map(|x| &x[col("value")]).collect();
    assert_eq!(values, ["6", "8", "10"]);
    let kappa: Vec<f64> = rows.iter().map(|x| x[col("kappa")].parse().unwrap()).collect();
    assert!(kappa[0] > kappa[1] && kappa[1] > kappa[2], "{kappa:?}");
}

#[test]
fn single_value_sweep_equals_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = Scenario::load(&scenario_path("roll_rho8")).unwrap();
    let rows = sweep(&base, "arm.rho_tpu", &["8.0".to_string()], &dir.path().join("sweep")).unwrap();
    let direct = run_scenario(&base, &dir.path().join("direct")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].summary, direct.summary[0]);
}

#[test]
fn invalid_sweep_value_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let base = Scenario::load(&scenario_path("hover")).unwrap();
    let mut base = base;
    base.sim.duration = 0.5;
    let values: Vec<String> = ["6", "-3", "8"].map(String::from).to_vec();
    let rows = sweep(&base, "arm.rho_tpu", &values, dir.path()).unwrap();
    assert_eq!(rows.len(), 3);
    let errors: Vec<_> = rows.iter().filter(|r| r.summary.status != "ok").collect();
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0].value, "-3");
    assert!(!errors[0].summary.error.is_empty());
}

#[test]
fn roll_rho8_summary_row() {
    let dir = tempfile::tempdir().unwrap();
    let s = Scenario::load(&scenario_path("roll_rho8")).unwrap();
    let row = run_scenario(&s, dir.path()).unwrap().summary.remove(0);
    let da = row.delta_alpha_max_deg.unwrap();
    let kappa = row.kappa.unwrap();
    assert!((da - 21.3).abs() <= 0.02 * 21.3, "{da}");
    assert!((kappa - 0.569).abs() <= 0.15 * 0.569, "{kappa}");
    assert!(row.effective_ratio.unwrap() > 1.0);
}
