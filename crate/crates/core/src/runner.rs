//! Scenario execution, output files and parameter sweeps.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::energy::{default_torque_to_current, endurance_sweep, write_endurance_csv};
use crate::error::{Error, Result};
use crate::flight::{run_flight, FlightRun};
use crate::perch::run_landing;
use crate::scenario::{set_dotted, Mode, Scenario};
use crate::trace::{
    flight_summary, landing_trace_summary, read_summary, roll_summary, write_summary, write_trace, SummaryRow,
    TraceRow, SUMMARY_COLUMNS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ABORT: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

/// Process exit code for a failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::SimulationAbort { .. } => EXIT_ABORT,
        Error::NoConvergence(_) => EXIT_NO_CONVERGENCE,
        _ => EXIT_CONFIG,
    }
}

fn status_of(err: &Error) -> &'static str {
    match err {
        Error::SimulationAbort { .. } => "abort",
        Error::NoConvergence(_) => "no_convergence",
        _ => "error",
    }
}

/// Result of one scenario. Failures that still produce output files (abort,
/// non-convergence) are carried in `error`.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Vec<SummaryRow>,
    pub error: Option<Error>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(EXIT_OK, exit_code)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn flight_rows(run: &FlightRun) -> Vec<TraceRow> {
    run.samples.iter().map(TraceRow::from_flight).collect()
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Flight => "flight",
        Mode::RollExperiment => "roll_experiment",
        Mode::Landing => "landing",
        Mode::Endurance => "endurance",
    }
}

/// Runs `scenario` and writes `trace.csv` and `summary.csv` into `out_dir`
/// (plus `trace_corrected.csv` for roll experiments and `endurance.csv` for
/// endurance sweeps). Every summary cell is computed from the written traces.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<RunOutcome> {
    scenario.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut row = SummaryRow {
        name: scenario.name.clone(),
        mode: mode_name(scenario.mode).into(),
        status: "ok".into(),
        ..SummaryRow::default()
    };
    let mut error = None;
    let mut rows = vec![];
    match scenario.mode {
        Mode::Flight => {
            row.rho_tpu = Some(scenario.arm.rho_tpu);
            let run = run_flight(&scenario.flight_setup()?)?;
            let trace = flight_rows(&run);
            write_trace(&trace, create(&out_dir.join("trace.csv"))?)?;
            flight_summary(&trace, !run.completed(), &mut row);
            error = run.abort;
            rows.push(row);
        }
        Mode::RollExperiment => {
            row.rho_tpu = Some(scenario.arm.rho_tpu);
            let mut setup = scenario.flight_setup()?;
            setup.corrections = false;
            let free = run_flight(&setup)?;
            setup.corrections = true;
            let held = run_flight(&setup)?;
            let (tf, th) = (flight_rows(&free), flight_rows(&held));
            write_trace(&tf, create(&out_dir.join("trace.csv"))?)?;
            write_trace(&th, create(&out_dir.join("trace_corrected.csv"))?)?;
            roll_summary(&tf, &th, !(free.completed() && held.completed()), &mut row);
            error = free.abort.or(held.abort);
            rows.push(row);
        }
        Mode::Landing => {
            let cfg = scenario.landing_config();
            row.rho_tpu = Some(cfg.plant.rho_tpu);
            let samples = run_landing(&cfg, scenario.sim.seed)?;
            let trace: Vec<TraceRow> = samples.iter().map(|s| TraceRow::from_landing(s, cfg.plant.p_max)).collect();
            write_trace(&trace, create(&out_dir.join("trace.csv"))?)?;
            if let Err(e) =
                landing_trace_summary(&trace, cfg.arm_count, cfg.target, cfg.trigger_time, cfg.plant.p_max, &mut row)
            {
                error = Some(e);
            }
            rows.push(row);
        }
        Mode::Endurance => {
            let e = &scenario.endurance;
            let k = default_torque_to_current()?;
            let reports = endurance_sweep(&e.resolved_inputs(), &e.flight_battery, &e.inspection_battery, k)?;
            write_trace(&[], create(&out_dir.join("trace.csv"))?)?;
            write_endurance_csv(&reports, create(&out_dir.join("endurance.csv"))?)?;
            for r in reports {
                rows.push(SummaryRow {
                    rho_tpu: Some(r.rho_tpu),
                    flight_time_min: r.flight_time,
                    inspection_time_min: r.inspection_time,
                    ..row.clone()
                });
            }
        }
    }
    if let Some(e) = &error {
        for r in &mut rows {
            r.status = status_of(e).into();
            r.error = e.to_string();
        }
    }
    write_summary(&rows, create(&out_dir.join("summary.csv"))?)?;
    Ok(RunOutcome { summary: rows, error })
}

/// Loads a scenario file, applying dotted-path overrides before validation.
pub fn load_scenario(path: &Path, overrides: &[(String, String)]) -> Result<Scenario> {
    let base = Scenario::load(path)?;
    if overrides.is_empty() {
        return Ok(base);
    }
    let mut value = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in overrides {
        set_dotted(&mut value, k, v)?;
    }
    Scenario::from_value(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub summary: SummaryRow,
}

/// Output directory of one sweep point.
pub fn sweep_dir(out_dir: &Path, param: &str, value: &str) -> PathBuf {
    let clean: String =
        value.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
    out_dir.join(format!("{param}={clean}"))
}

/// Runs `base` once per value of `param` in parallel. Failed points become
/// rows with status and error set; the sweep itself always completes. Rows
/// are ordered by value (numerically when every value is a number).
pub fn sweep(base: &Scenario, param: &str, values: &[String], out_dir: &Path) -> Result<Vec<SweepRow>> {
    let base_value = toml::Value::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    let mut rows: Vec<SweepRow> = values
        .par_iter()
        .map(|v| {
            let run = || -> Result<Vec<SummaryRow>> {
                let mut value = base_value.clone();
                set_dotted(&mut value, param, v)?;
                let s = Scenario::from_value(value)?;
                Ok(run_scenario(&s, &sweep_dir(out_dir, param, v))?.summary)
            };
            let summaries = run().unwrap_or_else(|e| {
                vec![SummaryRow {
                    name: base.name.clone(),
                    status: status_of(&e).into(),
                    error: e.to_string(),
                    ..SummaryRow::default()
                }]
            });
            summaries
                .into_iter()
                .map(|summary| SweepRow { param: param.to_string(), value: v.clone(), summary })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    let numeric: Option<Vec<f64>> = rows.iter().map(|r| r.value.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        rows.sort_by(|a, b| a.value.parse::<f64>().unwrap().total_cmp(&b.value.parse::<f64>().unwrap()));
    } else {
        rows.sort_by(|a, b| a.value.cmp(&b.value));
    }
    fs::create_dir_all(out_dir)?;
    write_sweep(&rows, create(&out_dir.join("sweep.csv"))?)?;
    Ok(rows)
}

/// `param, value` followed by the summary columns.
pub fn write_sweep<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut header = vec!["param", "value"];
    header.extend(SUMMARY_COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        w.serialize((&r.param, &r.value, &r.summary))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_file(path: &Path) -> Result<Vec<SummaryRow>> {
    read_summary(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::read_trace;

    fn scenario(text: &str) -> Scenario {
        Scenario::from_toml_str(text).unwrap()
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::SimulationAbort { time: 0.0, reason: "x".into() }), 2);
        assert_eq!(exit_code(&Error::NoConvergence("x".into())), 3);
    }

    #[test]
    fn empty_events_hover() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario("name = \"h\"\n[sim]\nduration = 1.0\n");
        let out = run_scenario(&s, dir.path()).unwrap();
        assert_eq!(out.exit_code(), 0);
        let r = &out.summary[0];
        assert!(r.delta_alpha_max_deg.unwrap().abs() < 1e-6);
        assert!(r.phi_max_deg.unwrap().abs() < 1e-6);
        let trace = read_trace(File::open(dir.path().join("trace.csv")).unwrap()).unwrap();
        assert_eq!(trace.len(), 251);
    }

    #[test]
    fn summary_recomputes_from_trace_file() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario(
            "name = \"r\"\n[sim]\nduration = 1.0\n[[events]]\ntype = \"setpoint\"\ntime = 0.0\nphi_deg = -20.0\n",
        );
        let out = run_scenario(&s, dir.path()).unwrap();
        let trace = read_trace(File::open(dir.path().join("trace.csv")).unwrap()).unwrap();
        let mut again =
            SummaryRow { name: "r".into(), mode: "flight".into(), status: "ok".into(), ..Default::default() };
        again.rho_tpu = out.summary[0].rho_tpu;
        flight_summary(&trace, false, &mut again);
        assert_eq!(again, out.summary[0]);
        assert_eq!(read_summary_file(&dir.path().join("summary.csv")).unwrap(), out.summary);
        assert!(out.summary[0].phi_max_deg.unwrap() > 15.0);
    }

    #[test]
    fn landing_no_convergence_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let s =
            scenario("name = \"l\"\nmode = \"landing\"\n[sim]\ndt_physics = 0.01\ndt_control = 0.01\nduration = 1.0\n");
        let out = run_scenario(&s, dir.path()).unwrap();
        assert_eq!(out.exit_code(), EXIT_NO_CONVERGENCE);
        assert_eq!(out.summary[0].status, "no_convergence");
        assert!(dir.path().join("trace.csv").exists());
    }

    #[test]
    fn sweep_with_invalid_value() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario("name = \"e\"\nmode = \"endurance\"\n[endurance]\nrho_values = [6.0]\n");
        let values: Vec<String> = ["8", "-1", "6"].map(String::from).to_vec();
        let rows = sweep(&s, "endurance.flight_battery.capacity", &values, dir.path()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.value.as_str()).collect::<Vec<_>>(), ["-1", "6", "8"]);
        assert_eq!(rows[0].summary.status, "error");
        assert!(rows[1..].iter().all(|r| r.summary.status == "ok"));
        assert!(dir.path().join("sweep.csv").exists());
    }
}
