//! Cascaded PID flight controller (angle -> rate -> torque, altitude, optional
//! position hold) and the fatigue-degradation model of the arms.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::arm::ArmDeflectionModel;
use crate::dynamics::{VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::mixer::Wrench4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric clamp on the output.
    pub output_limit: f64,
    /// Symmetric clamp on the integrator contribution.
    pub integrator_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 1.0, ki: 0.0, kd: 0.0, output_limit: f64::INFINITY, integrator_limit: f64::INFINITY }
    }
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64, output_limit: f64, integrator_limit: f64) -> Self {
        Self { kp, ki, kd, output_limit, integrator_limit }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if [self.kp, self.ki, self.kd].iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::InputDomain(format!("{name}: gains must be finite and >= 0")));
        }
        if !(self.output_limit > 0.0) || !(self.integrator_limit > 0.0) {
            return Err(Error::InputDomain(format!("{name}: limits must be > 0")));
        }
        Ok(())
    }
}

/// PID with derivative on measurement and a clamped integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    integral: f64,
    prev_measurement: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains) -> Self {
        Self { gains, integral: 0.0, prev_measurement: None }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_measurement = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// `measurement_rate` overrides the finite-difference derivative when the
    /// rate is measured directly.
    pub fn update(&mut self, setpoint: f64, measurement: f64, measurement_rate: Option<f64>, dt: f64) -> f64 {
        let g = &self.gains;
        let error = setpoint - measurement;
        let rate = match (measurement_rate, self.prev_measurement) {
            (Some(r), _) => r,
            (None, Some(prev)) => (measurement - prev) / dt,
            (None, None) => 0.0,
        };
        self.prev_measurement = Some(measurement);
        let i_lim = g.integrator_limit;
        let candidate = (self.integral + g.ki * error * dt).clamp(-i_lim, i_lim);
        let unsat = g.kp * error + candidate - g.kd * rate;
        let out = unsat.clamp(-g.output_limit, g.output_limit);
        // conditional integration: only accept integrator growth that does not deepen saturation
        if out == unsat || (unsat > out) != (candidate > self.integral) {
            self.integral = candidate;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlightGains {
    /// Angle -> rate proportional gains (roll, pitch, yaw), 1/s.
    pub angle_kp: [f64; 3],
    /// Rate setpoint clamp (roll, pitch, yaw), rad/s.
    pub max_rate: [f64; 3],
    /// Angular acceleration used to shape large angle errors, rad/s^2.
    pub max_accel: [f64; 3],
    /// Rate loops produce angular acceleration, rad/s^2; output limits are torques, N m.
    pub roll_rate: PidGains,
    pub pitch_rate: PidGains,
    pub yaw_rate: PidGains,
    /// Altitude loop produces vertical acceleration, m/s^2.
    pub altitude: PidGains,
    /// Position loops produce horizontal acceleration, m/s^2.
    pub position: PidGains,
    /// Attitude clamp used by the position loop, degrees.
    pub max_tilt_deg: f64,
}

impl Default for FlightGains {
    fn default() -> Self {
        Self {
            angle_kp: [20.0, 20.0, 4.0],
            max_rate: [6.0, 6.0, 1.5],
            max_accel: [27.0, 27.0, 2.0],
            roll_rate: PidGains::new(30.0, 5.0, 0.0, 1.06, 0.05),
            pitch_rate: PidGains::new(30.0, 5.0, 0.0, 1.06, 0.05),
            yaw_rate: PidGains::new(8.0, 2.0, 0.0, 0.0309, 0.02),
            altitude: PidGains::new(4.0, 1.0, 3.0, 6.0, 2.0),
            position: PidGains::new(1.2, 0.1, 1.8, 4.0, 1.0),
            max_tilt_deg: 30.0,
        }
    }
}

impl FlightGains {
    pub fn validate(&self) -> Result<()> {
        self.roll_rate.validate("roll_rate")?;
        self.pitch_rate.validate("pitch_rate")?;
        self.yaw_rate.validate("yaw_rate")?;
        self.altitude.validate("altitude")?;
        self.position.validate("position")?;
        if self.angle_kp.iter().chain(&self.max_rate).chain(&self.max_accel).any(|g| !(*g > 0.0)) {
            return Err(Error::InputDomain("angle gains and rate limits must be > 0".into()));
        }
        if !(self.max_tilt_deg > 0.0 && self.max_tilt_deg < 90.0) {
            return Err(Error::InputDomain("max_tilt_deg must be in (0, 90)".into()));
        }
        Ok(())
    }
}

/// Attitude/altitude setpoint. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Setpoint {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub altitude: f64,
    /// When set, overrides `phi`/`theta` with a horizontal position hold.
    pub position: Option<(f64, f64)>,
}

impl Setpoint {
    pub fn from_state(state: &VehicleState) -> Self {
        Self {
            phi: state.attitude.x,
            theta: state.attitude.y,
            psi: state.attitude.z,
            altitude: state.position.z,
            position: None,
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        w
    }
}

#[derive(Debug, Clone)]
pub struct FlightController {
    pub gains: FlightGains,
    params: VehicleParams,
    rate: [Pid; 3],
    altitude: Pid,
    pos: [Pid; 2],
    roll_sensitivity: f64,
}

impl FlightController {
    pub fn new(gains: FlightGains, params: VehicleParams) -> Self {
        let rate_gains = [gains.roll_rate, gains.pitch_rate, gains.yaw_rate];
        Self {
            rate: std::array::from_fn(|i| Pid::new(torque_to_accel(rate_gains[i], params.inertia[i]))),
            altitude: Pid::new(gains.altitude),
            pos: [Pid::new(gains.position); 2],
            gains,
            params,
            roll_sensitivity: 0.0,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.gains, self.params);
    }

    /// Differential deflection per unit roll torque, degrees per N m, as
    /// predicted by the mixer's arm model. Zero disables the correction.
    pub fn set_roll_sensitivity(&mut self, deg_per_nm: f64) {
        self.roll_sensitivity = deg_per_nm.max(0.0);
    }

    fn position_to_attitude(&mut self, state: &VehicleState, target: (f64, f64), dt: f64) -> (f64, f64) {
        let g = self.params.gravity;
        let ax = self.pos[0].update(target.0, state.position.x, Some(state.velocity.x), dt);
        let ay = self.pos[1].update(target.1, state.position.y, Some(state.velocity.y), dt);
        let (spsi, cpsi) = state.attitude.z.sin_cos();
        let max = self.gains.max_tilt_deg.to_radians();
        let phi = ((cpsi * ax - spsi * ay) / g).clamp(-max, max);
        let theta = (-(spsi * ax + cpsi * ay) / g).clamp(-max, max);
        (phi, theta)
    }

    /// One control update: returns the demanded `(T, tau_phi, tau_theta, tau_psi)`.
    pub fn attitude_step(&mut self, state: &VehicleState, setpoint: &Setpoint, dt: f64) -> Wrench4 {
        let (phi_sp, theta_sp) = match setpoint.position {
            Some(target) => self.position_to_attitude(state, target, dt),
            None => (setpoint.phi, setpoint.theta),
        };
        let att = state.attitude;
        let angle_err = Vector3::new(phi_sp - att.x, theta_sp - att.y, wrap_angle(setpoint.psi - att.z));
        let inertia = self.params.inertia;
        let mut torques = [0.0; 3];
        for i in 0..3 {
            let limit = self.gains.max_rate[i];
            let rate_sp =
                sqrt_shaper(angle_err[i], self.gains.angle_kp[i], self.gains.max_accel[i]).clamp(-limit, limit);
            let rate = state.body_rates[i];
            // rate PID runs on the error so that P acts on the measured rate too
            let acc = self.rate[i].update(rate_sp, rate, None, dt);
            // physical torque is -tau in the rotational equations
            torques[i] = -inertia[i] * acc;
        }
        // corrected roll: cap torque that would push phi + dalpha past the commanded bank
        let k = self.roll_sensitivity;
        let u = -torques[0];
        let sigma = phi_sp.signum();
        if k > 0.0 && phi_sp != 0.0 && sigma * u > 0.0 {
            let allowed = (phi_sp.abs() - sigma * att.x).max(0.0).to_degrees() / k;
            torques[0] = -u.signum() * u.abs().min(allowed);
        }
        let p = &self.params;
        let az = self.altitude.update(setpoint.altitude, state.position.z, Some(state.velocity.z), dt);
        let tilt = (att.x.cos() * att.y.cos()).max(0.5);
        let thrust = (p.mass * (p.gravity + az) / tilt).max(0.0);
        Wrench4::new(thrust, torques[0], torques[1], torques[2])
    }
}

/// Angle-to-rate shaper: linear near zero, `sqrt(2 a |e|)` braking profile
/// beyond, so a step decelerates at `accel` and stops on the setpoint.
pub fn sqrt_shaper(error: f64, kp: f64, accel: f64) -> f64 {
    let linear = accel / (kp * kp);
    if error.abs() <= linear {
        kp * error
    } else {
        error.signum() * (2.0 * accel * (error.abs() - 0.5 * linear)).sqrt()
    }
}

/// Rate-loop limits are configured as torques; the loop itself runs in
/// angular acceleration.
fn torque_to_accel(g: PidGains, inertia: f64) -> PidGains {
    PidGains { output_limit: g.output_limit / inertia, integrator_limit: g.integrator_limit / inertia, ..g }
}

/// Roll-aligned differential deflection `((a3 + a4) - (a1 + a2)) / 2`, degrees.
pub fn roll_aligned_deflection(alpha_deg: &[f64; 4]) -> f64 {
    0.5 * ((alpha_deg[2] + alpha_deg[3]) - (alpha_deg[0] + alpha_deg[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationState {
    /// Completed bending cycles per arm.
    pub bending_cycles: [u32; 4],
    /// Cycle count after which fatigue starts to show.
    pub onset_cycles: u32,
    /// Gain added per cycle past onset.
    pub slope_per_cycle: f64,
}

impl Default for DegradationState {
    fn default() -> Self {
        Self { bending_cycles: [0; 4], onset_cycles: 50, slope_per_cycle: 0.01 }
    }
}

impl DegradationState {
    pub fn deflection_gain(&self, arm_index: usize) -> f64 {
        let past = self.bending_cycles[arm_index].saturating_sub(self.onset_cycles);
        1.0 + self.slope_per_cycle * past as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope_per_cycle >= 0.0 && self.slope_per_cycle.is_finite()) {
            return Err(Error::InputDomain("slope_per_cycle must be >= 0".into()));
        }
        Ok(())
    }
}

/// Arm model with the degraded arm's thrust response scaled by its gain.
pub fn apply_degradation(
    deg: &DegradationState,
    arm_model: &ArmDeflectionModel,
    arm_index: usize,
) -> ArmDeflectionModel {
    ArmDeflectionModel { scale: arm_model.scale * deg.deflection_gain(arm_index), ..*arm_model }
}

pub fn degraded_arms(deg: &DegradationState, arm_model: &ArmDeflectionModel) -> [ArmDeflectionModel; 4] {
    std::array::from_fn(|i| apply_degradation(deg, arm_model, i))
}
