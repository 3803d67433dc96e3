//! Flight and inspection endurance from battery capacity and mean current.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perch::{PerchPlant, TARGET_PRESSURE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    /// mAh
    pub capacity: f64,
    pub cell_count: u32,
    /// V
    pub nominal_voltage: f64,
}

impl BatterySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(Error::InputDomain(format!("capacity must be > 0, got {}", self.capacity)));
        }
        Ok(())
    }
}

/// Propulsion pack, 4S 1800 mAh.
pub const FLIGHT_BATTERY: BatterySpec = BatterySpec { capacity: 1800.0, cell_count: 4, nominal_voltage: 14.8 };
/// Servo pack, 2S 1200 mAh.
pub const INSPECTION_BATTERY: BatterySpec = BatterySpec { capacity: 1200.0, cell_count: 2, nominal_voltage: 7.4 };

/// Hover currents per infill, mA: `60 * 1800 / FT` for the measured flight
/// times 10.7, 15.8, 14.7 and 14.1 min.
pub const HOVER_CURRENTS_MA: [(f64, f64); 4] = [(4.0, 10093.46), (6.0, 6835.44), (8.0, 7346.94), (10.0, 7659.57)];

/// Measured material specific strength per infill, kN m/kg (reference only).
pub const SPECIFIC_STRENGTH: [(f64, f64); 4] = [(4.0, 0.9), (6.0, 2.3), (8.0, 4.5), (10.0, 10.4)];

/// Inspection time at the reference infill used to calibrate the servo current, min.
pub const REFERENCE_INSPECTION_MIN: f64 = 7.5;
pub const REFERENCE_INSPECTION_RHO: f64 = 6.0;
/// Pipe diameter used for the endurance holding torques, m.
pub const REFERENCE_PIPE_DIAMETER: f64 = 0.16;

fn lookup(table: &[(f64, f64)], rho: f64) -> Option<f64> {
    table.iter().find(|(r, _)| *r == rho).map(|(_, v)| *v)
}

/// Minutes of flight: `60 * capacity / mean_current`.
pub fn flight_time(battery: &BatterySpec, mean_current: f64) -> Result<f64> {
    battery.validate()?;
    if mean_current == 0.0 {
        return Err(Error::DivisionByZero("mean current is zero".into()));
    }
    if !(mean_current > 0.0 && mean_current.is_finite()) {
        return Err(Error::InputDomain(format!("mean current must be > 0, got {mean_current}")));
    }
    Ok(60.0 * battery.capacity / mean_current)
}

/// Minutes attached to the pipe while the servo holds `servo_steady_torque`.
pub fn inspection_time(battery: &BatterySpec, servo_steady_torque: f64, torque_to_current: f64) -> Result<f64> {
    if servo_steady_torque == 0.0 || torque_to_current == 0.0 {
        return Err(Error::DivisionByZero("servo current is zero".into()));
    }
    if !(servo_steady_torque > 0.0) || !(torque_to_current > 0.0) {
        return Err(Error::InputDomain("torque and torque_to_current must be > 0".into()));
    }
    flight_time(battery, torque_to_current * servo_steady_torque)
}

/// mA per kg cm such that `reference_torque` lasts `minutes` on `battery`.
pub fn calibrate_torque_to_current(battery: &BatterySpec, reference_torque: f64, minutes: f64) -> Result<f64> {
    battery.validate()?;
    if !(reference_torque > 0.0 && minutes > 0.0) {
        return Err(Error::InputDomain("reference torque and time must be > 0".into()));
    }
    Ok(60.0 * battery.capacity / (minutes * reference_torque))
}

/// Servo torque holding the target pressure on the reference pipe, kg cm.
pub fn holding_torque_for(rho_tpu: f64) -> f64 {
    PerchPlant::new(REFERENCE_PIPE_DIAMETER, rho_tpu).holding_torque(TARGET_PRESSURE)
}

/// Servo current per kg cm calibrated on the shipped perch plant.
pub fn default_torque_to_current() -> Result<f64> {
    calibrate_torque_to_current(
        &INSPECTION_BATTERY,
        holding_torque_for(REFERENCE_INSPECTION_RHO),
        REFERENCE_INSPECTION_MIN,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnduranceInput {
    pub rho_tpu: f64,
    /// Hover current, mA.
    #[serde(default)]
    pub mean_current: Option<f64>,
    /// Servo holding torque, kg cm.
    #[serde(default)]
    pub steady_torque: Option<f64>,
}

impl EnduranceInput {
    /// Shipped hover current and perch-derived holding torque.
    pub fn shipped(rho_tpu: f64) -> Self {
        Self {
            rho_tpu,
            mean_current: lookup(&HOVER_CURRENTS_MA, rho_tpu),
            steady_torque: Some(holding_torque_for(rho_tpu)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnduranceReport {
    pub rho_tpu: f64,
    /// min; absent without a current input.
    pub flight_time: Option<f64>,
    /// min; absent without a torque input.
    pub inspection_time: Option<f64>,
    pub specific_strength: Option<f64>,
}

pub fn endurance_sweep(
    inputs: &[EnduranceInput],
    flight_battery: &BatterySpec,
    inspection_battery: &BatterySpec,
    torque_to_current: f64,
) -> Result<Vec<EnduranceReport>> {
    inputs
        .iter()
        .map(|inp| {
            Ok(EnduranceReport {
                rho_tpu: inp.rho_tpu,
                flight_time: inp.mean_current.map(|c| flight_time(flight_battery, c)).transpose()?,
                inspection_time: inp
                    .steady_torque
                    .map(|u| inspection_time(inspection_battery, u, torque_to_current))
                    .transpose()?,
                specific_strength: lookup(&SPECIFIC_STRENGTH, inp.rho_tpu),
            })
        })
        .collect()
}

/// Table with columns `rho_tpu, flight_time_min, inspection_time_min, specific_strength_knm_kg`.
pub fn write_endurance_csv<W: std::io::Write>(reports: &[EnduranceReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rho_tpu", "flight_time_min", "inspection_time_min", "specific_strength_knm_kg"])?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for r in reports {
        w.write_record([
            format!("{}", r.rho_tpu),
            cell(r.flight_time),
            cell(r.inspection_time),
            cell(r.specific_strength),
        ])?;
    }
    w.flush()?;
    Ok(())
}
