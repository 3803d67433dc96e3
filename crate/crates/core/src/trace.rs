//! Frozen CSV trace schema and the summary computed from it.
//!
//! Columns, in order: `time_s, x, y, z, vx, vy, vz, phi, theta, psi, p, q, r,
//! alpha1..alpha4, t1..t4, tau_phi, tau_theta, tau_psi, valid_flag, s1..s4,
//! u1..u4`. Positions in m, velocities in m/s, attitude and tilts in degrees,
//! body rates in rad/s, thrusts in N, torques in N m. `s = P / P_max` and
//! `u = F / (0.5 F_max)` are the perch normalizations; unused columns are 0.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::flight::{roll_metrics, yaw_hold_report, FlightRun, FlightSample};
use crate::mixer::TiltAngles;
use crate::perch::{closure_metrics, landing_summary, LandingSample, F_MAX_KGCM};

pub const TRACE_COLUMNS: [&str; 33] = [
    "time_s",
    "x",
    "y",
    "z",
    "vx",
    "vy",
    "vz",
    "phi",
    "theta",
    "psi",
    "p",
    "q",
    "r",
    "alpha1",
    "alpha2",
    "alpha3",
    "alpha4",
    "t1",
    "t2",
    "t3",
    "t4",
    "tau_phi",
    "tau_theta",
    "tau_psi",
    "valid_flag",
    "s1",
    "s2",
    "s3",
    "s4",
    "u1",
    "u2",
    "u3",
    "u4",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRow {
    pub time_s: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub tau_phi: f64,
    pub tau_theta: f64,
    pub tau_psi: f64,
    pub valid_flag: u8,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
}

impl TraceRow {
    pub fn from_flight(s: &FlightSample) -> Self {
        let st = &s.state;
        Self {
            time_s: s.time,
            x: st.position.x,
            y: st.position.y,
            z: st.position.z,
            vx: st.velocity.x,
            vy: st.velocity.y,
            vz: st.velocity.z,
            phi: st.attitude.x.to_degrees(),
            theta: st.attitude.y.to_degrees(),
            psi: st.attitude.z.to_degrees(),
            p: st.body_rates.x,
            q: st.body_rates.y,
            r: st.body_rates.z,
            alpha1: s.alpha[0],
            alpha2: s.alpha[1],
            alpha3: s.alpha[2],
            alpha4: s.alpha[3],
            t1: s.thrusts[0],
            t2: s.thrusts[1],
            t3: s.thrusts[2],
            t4: s.thrusts[3],
            tau_phi: s.torques[0],
            tau_theta: s.torques[1],
            tau_psi: s.torques[2],
            valid_flag: s.valid as u8,
            ..Self::default()
        }
    }

    /// Perch rows: the vehicle columns stay at 0, the landing columns carry
    /// the normalized pressure and command.
    pub fn from_landing(s: &LandingSample, p_max: f64) -> Self {
        let sn = s.normalized_pressure(p_max);
        let un = s.normalized_torque();
        Self {
            time_s: s.time,
            valid_flag: 1,
            s1: sn[0],
            s2: sn[1],
            s3: sn[2],
            s4: sn[3],
            u1: un[0],
            u2: un[1],
            u3: un[2],
            u4: un[3],
            ..Self::default()
        }
    }

    /// The flight sample this row records; `speeds_sq` is not logged and reads 0.
    pub fn to_flight_sample(&self) -> FlightSample {
        let alpha = [self.alpha1, self.alpha2, self.alpha3, self.alpha4];
        FlightSample {
            time: self.time_s,
            state: VehicleState {
                position: Vector3::new(self.x, self.y, self.z),
                velocity: Vector3::new(self.vx, self.vy, self.vz),
                attitude: Vector3::new(self.phi.to_radians(), self.theta.to_radians(), self.psi.to_radians()),
                body_rates: Vector3::new(self.p, self.q, self.r),
                tilt: TiltAngles::new(alpha),
                speeds_sq: [0.0; 4],
            },
            alpha,
            thrusts: [self.t1, self.t2, self.t3, self.t4],
            torques: [self.tau_phi, self.tau_theta, self.tau_psi],
            valid: self.valid_flag != 0,
        }
    }

    pub fn pressure(&self, p_max: f64) -> [f64; 4] {
        [self.s1, self.s2, self.s3, self.s4].map(|s| s * p_max)
    }

    pub fn servo_torque(&self) -> [f64; 4] {
        [self.u1, self.u2, self.u3, self.u4].map(|u| u * 0.5 * F_MAX_KGCM)
    }
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(Error::Config(format!("trace header does not match the schema: {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One line of `summary.csv`. Cells that do not apply to the mode are empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mode: String,
    /// `ok`, `abort`, `no_convergence` or `error`.
    pub status: String,
    pub rho_tpu: Option<f64>,
    pub delta_alpha_max_deg: Option<f64>,
    pub effective_max_deg: Option<f64>,
    pub phi_max_deg: Option<f64>,
    pub kappa: Option<f64>,
    pub effective_max_corrected_deg: Option<f64>,
    pub effective_ratio: Option<f64>,
    pub any_invalid: Option<bool>,
    pub max_abs_psi_deg: Option<f64>,
    pub mean_abs_tau_psi: Option<f64>,
    pub yaw_hold_pass: Option<bool>,
    pub closure_time_s: Option<f64>,
    pub steady_torque_kgcm: Option<f64>,
    pub steady_pressure: Option<f64>,
    pub peak_pressure: Option<f64>,
    pub peak_torque_kgcm: Option<f64>,
    pub flight_time_min: Option<f64>,
    pub inspection_time_min: Option<f64>,
    pub error: String,
}

pub const SUMMARY_COLUMNS: [&str; 22] = [
    "name",
    "mode",
    "status",
    "rho_tpu",
    "delta_alpha_max_deg",
    "effective_max_deg",
    "phi_max_deg",
    "kappa",
    "effective_max_corrected_deg",
    "effective_ratio",
    "any_invalid",
    "max_abs_psi_deg",
    "mean_abs_tau_psi",
    "yaw_hold_pass",
    "closure_time_s",
    "steady_torque_kgcm",
    "steady_pressure",
    "peak_pressure",
    "peak_torque_kgcm",
    "flight_time_min",
    "inspection_time_min",
    "error",
];

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Step direction of a trace: the sign of the largest-magnitude roll.
fn roll_direction(samples: &[FlightSample]) -> f64 {
    let peak = samples.iter().map(|s| s.state.attitude.x).fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
    if peak < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Roll and yaw-hold metrics of a flight trace. `aborted` marks a trace cut
/// short by an inversion failure.
pub fn flight_summary(rows: &[TraceRow], aborted: bool, out: &mut SummaryRow) {
    let samples: Vec<FlightSample> = rows.iter().map(TraceRow::to_flight_sample).collect();
    let m = roll_metrics(&samples, roll_direction(&samples));
    out.delta_alpha_max_deg = Some(m.delta_alpha_max_deg);
    out.effective_max_deg = Some(m.effective_max_deg);
    out.phi_max_deg = Some(m.phi_max_deg);
    out.kappa = finite(m.kappa);
    out.any_invalid = Some(m.any_invalid);
    let end = rows.last().map_or(0.0, |r| r.time_s);
    let abort = aborted.then(|| Error::SimulationAbort { time: end, reason: "trace cut short".into() });
    let y = yaw_hold_report(&FlightRun { samples, abort });
    out.max_abs_psi_deg = Some(y.max_abs_psi_deg);
    out.mean_abs_tau_psi = Some(y.mean_abs_tau_psi);
    out.yaw_hold_pass = Some(y.passed);
}

/// Flight summary of the uncorrected trace plus the corrected peak and the
/// uncorrected-to-corrected effective-angle ratio.
pub fn roll_summary(uncorrected: &[TraceRow], corrected: &[TraceRow], aborted: bool, out: &mut SummaryRow) {
    flight_summary(uncorrected, aborted, out);
    let samples: Vec<FlightSample> = corrected.iter().map(TraceRow::to_flight_sample).collect();
    let c = roll_metrics(&samples, roll_direction(&samples)).effective_max_deg;
    out.effective_max_corrected_deg = Some(c);
    out.effective_ratio = out.effective_max_deg.and_then(|u| finite(u / c));
}

/// Closure metrics of a landing trace over the first `arm_count` arms.
pub fn landing_trace_summary(
    rows: &[TraceRow],
    arm_count: usize,
    target: f64,
    trigger_time: f64,
    p_max: f64,
    out: &mut SummaryRow,
) -> Result<()> {
    let time: Vec<f64> = rows.iter().map(|r| r.time_s).collect();
    let metrics = (0..arm_count)
        .map(|i| {
            let p: Vec<f64> = rows.iter().map(|r| r.pressure(p_max)[i]).collect();
            let u: Vec<f64> = rows.iter().map(|r| r.servo_torque()[i]).collect();
            closure_metrics(&time, &p, &u, target, trigger_time)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(m) = landing_summary(&metrics) {
        out.closure_time_s = Some(m.closure_time);
        out.steady_torque_kgcm = Some(m.steady_torque);
        out.steady_pressure = Some(m.steady_pressure);
        out.peak_pressure = Some(m.peak_pressure);
        out.peak_torque_kgcm = Some(m.peak_torque);
    }
    Ok(())
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row(i: usize) -> TraceRow {
        let v = i as f64;
        TraceRow {
            time_s: 0.004 * v,
            phi: 0.1 + v / 3.0,
            alpha3: 1.0 / 7.0,
            t1: 2.0 + 1e-17,
            tau_psi: -3.3e-5,
            valid_flag: (i % 2) as u8,
            s2: 0.5,
            u4: f64::MIN_POSITIVE,
            ..TraceRow::default()
        }
    }

    #[test]
    fn header_is_frozen() {
        let mut buf = Vec::new();
        write_trace(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), TRACE_COLUMNS.join(","));
        let mut buf = Vec::new();
        write_summary(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), SUMMARY_COLUMNS.join(","));
    }

    #[test]
    fn trace_round_trips_bit_exact() {
        let rows: Vec<TraceRow> = (0..20).map(sample_row).collect();
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_trace("time,x\n0,0\n".as_bytes()).is_err());
    }

    #[test]
    fn summary_round_trips_with_empty_cells() {
        let s = SummaryRow {
            name: "a".into(),
            mode: "flight".into(),
            status: "ok".into(),
            kappa: Some(0.5),
            yaw_hold_pass: Some(true),
            ..SummaryRow::default()
        };
        let mut buf = Vec::new();
        write_summary(std::slice::from_ref(&s), &mut buf).unwrap();
        assert_eq!(read_summary(buf.as_slice()).unwrap(), vec![s]);
    }

    #[test]
    fn still_trace_has_zero_maneuver_metrics() {
        let rows = vec![TraceRow { valid_flag: 1, t1: 1.0, t2: 1.0, t3: 1.0, t4: 1.0, ..TraceRow::default() }; 10];
        let mut s = SummaryRow::default();
        flight_summary(&rows, false, &mut s);
        assert_eq!(s.delta_alpha_max_deg, Some(0.0));
        assert_eq!(s.effective_max_deg, Some(0.0));
        assert_eq!(s.max_abs_psi_deg, Some(0.0));
        assert_eq!(s.yaw_hold_pass, Some(true));
        assert_eq!(s.kappa, None);
        flight_summary(&rows, true, &mut s);
        assert_eq!(s.yaw_hold_pass, Some(false));
    }
}
