//! Closed-loop flight simulation: controller at `dt_control`, plant at
//! `dt_physics`, plus the roll and yaw-hold experiments built on it.

use serde::{Deserialize, Serialize};

use crate::arm::ArmDeflectionModel;
use crate::controller::{
    degraded_arms, roll_aligned_deflection, DegradationState, FlightController, FlightGains, Setpoint,
};
use crate::dynamics::{self, StepContext, VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::layout::{make_configuration, Configuration, RotorLayout};
use crate::mixer::{MixerOptions, Wrench4};

pub const DEFAULT_ARM_LENGTH_M: f64 = 0.2;
pub const DEFAULT_C_T: f64 = 1.2e-5;
pub const DEFAULT_C_Q: f64 = 1.92e-7;
/// Per-rotor thrust ceiling as a multiple of hover thrust.
pub const DEFAULT_THRUST_CEILING: f64 = 2.5;

/// Infill at which the deflection scale is calibrated.
pub const CALIBRATION_RHO: f64 = 8.0;
/// Differential deflection reached at the calibration infill, degrees.
pub const CALIBRATION_DELTA_DEG: f64 = 21.3;
/// Roll manoeuvre thrust split: rotors run at `(1 +/- s) T_hover`, so `dT/T = 2 s`.
pub const ROLL_THRUST_SPLIT: f64 = 0.3;

/// Deflection model calibrated for flight: the scale is set so that the roll
/// manoeuvre thrust split gives the reference differential deflection at the
/// calibration infill, and the arms sit flat at hover thrust.
pub fn calibrated_arm(rho_tpu: f64, params: &VehicleParams, power: f64) -> Result<ArmDeflectionModel> {
    let t_h = params.hover_thrust_per_rotor();
    let (hi, lo) = ((1.0 + ROLL_THRUST_SPLIT) * t_h, (1.0 - ROLL_THRUST_SPLIT) * t_h);
    let reference = ArmDeflectionModel::with_rho(CALIBRATION_RHO);
    let scale = reference.scale_for_delta(hi, lo, power, CALIBRATION_DELTA_DEG)?;
    let arm = ArmDeflectionModel { scale, ..ArmDeflectionModel::with_rho(rho_tpu) }.nulled_at(t_h, power);
    arm.validate()?;
    Ok(arm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointEvent {
    pub time: f64,
    #[serde(default)]
    pub phi_deg: f64,
    #[serde(default)]
    pub theta_deg: f64,
    #[serde(default)]
    pub psi_deg: f64,
    #[serde(default)]
    pub altitude: f64,
    /// Horizontal position hold target `(x, y)`; overrides roll and pitch.
    #[serde(default)]
    pub position: Option<[f64; 2]>,
}

impl SetpointEvent {
    pub fn setpoint(&self) -> Setpoint {
        Setpoint {
            phi: self.phi_deg.to_radians(),
            theta: self.theta_deg.to_radians(),
            psi: self.psi_deg.to_radians(),
            altitude: self.altitude,
            position: self.position.map(|p| (p[0], p[1])),
        }
    }
}

/// External moment `M'` (roll, pitch, yaw), N m, applied over `[start, start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub start: f64,
    pub duration: f64,
    pub moment: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightSetup {
    pub params: VehicleParams,
    pub layout: RotorLayout,
    /// Nominal arm model; the autopilot's estimate.
    pub arm: ArmDeflectionModel,
    pub degradation: DegradationState,
    pub corrections: bool,
    pub mixer_options: MixerOptions,
    pub gains: FlightGains,
    pub power: f64,
    /// Per-rotor thrust ceiling as a multiple of hover thrust.
    pub thrust_ceiling: f64,
    pub dt_physics: f64,
    pub dt_control: f64,
    pub duration: f64,
    pub setpoints: Vec<SetpointEvent>,
    pub perturbations: Vec<Perturbation>,
}

impl FlightSetup {
    pub fn new(config: Configuration, arm: ArmDeflectionModel) -> Self {
        Self {
            params: VehicleParams::default(),
            layout: make_configuration(config, DEFAULT_ARM_LENGTH_M, DEFAULT_C_T, DEFAULT_C_Q),
            arm,
            degradation: DegradationState::default(),
            corrections: true,
            mixer_options: MixerOptions::default(),
            gains: FlightGains::default(),
            power: arm.p0,
            thrust_ceiling: DEFAULT_THRUST_CEILING,
            dt_physics: 0.001,
            dt_control: 0.004,
            duration: 5.0,
            setpoints: Vec::new(),
            perturbations: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.layout.validate()?;
        self.arm.validate()?;
        self.gains.validate()?;
        self.degradation.validate()?;
        control_ratio(self.dt_physics, self.dt_control)?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InputDomain("duration must be > 0".into()));
        }
        if !(self.thrust_ceiling > 1.0) {
            return Err(Error::InputDomain("thrust_ceiling must exceed 1".into()));
        }
        if !(self.power > 0.0) {
            return Err(Error::InputDomain("power must be > 0".into()));
        }
        for p in &self.perturbations {
            if !(p.duration >= 0.0) || p.moment.iter().any(|m| !m.is_finite()) {
                return Err(Error::InputDomain("invalid perturbation".into()));
            }
        }
        Ok(())
    }

    fn speed_limits(&self) -> (f64, f64) {
        (0.0, self.thrust_ceiling * self.params.hover_thrust_per_rotor() / self.layout.c_t)
    }

    fn perturbation_at(&self, t: f64) -> [f64; 3] {
        let mut m = [0.0; 3];
        for p in &self.perturbations {
            if t >= p.start && t < p.start + p.duration {
                for (acc, add) in m.iter_mut().zip(p.moment) {
                    *acc += add;
                }
            }
        }
        m
    }

    fn setpoint_at(&self, t: f64, initial: &Setpoint) -> Setpoint {
        self.setpoints
            .iter()
            .filter(|e| e.time <= t)
            .max_by(|a, b| a.time.total_cmp(&b.time))
            .map_or(*initial, SetpointEvent::setpoint)
    }
}

/// Physics steps per control step.
pub fn control_ratio(dt_physics: f64, dt_control: f64) -> Result<usize> {
    if !(dt_physics > 0.0 && dt_control > 0.0) {
        return Err(Error::InputDomain("time steps must be > 0".into()));
    }
    let r = dt_control / dt_physics;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::InputDomain(format!(
            "dt_control ({dt_control}) must be an integer multiple of dt_physics ({dt_physics})"
        )));
    }
    Ok(n as usize)
}

/// Roll-aligned differential deflection per unit roll torque around the
/// current mean thrust, degrees per N m.
pub fn roll_sensitivity(layout: &RotorLayout, arm: &ArmDeflectionModel, state: &VehicleState, power: f64) -> f64 {
    let mean = 0.25 * layout.c_t * state.speeds_sq.iter().sum::<f64>();
    let h = 1e-3;
    let slope = (arm.alpha(mean + h, power) - arm.alpha((mean - h).max(0.0), power)) / (mean + h - (mean - h).max(0.0));
    // a torque u splits thrust by +/- u / (4 d), giving dalpha = 2 slope u / (4 d)
    (slope * 2.0 / (4.0 * layout.arm_length)).abs()
}

/// One recorded control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightSample {
    pub time: f64,
    pub state: VehicleState,
    /// Plant deflections, degrees.
    pub alpha: [f64; 4],
    pub thrusts: [f64; 4],
    /// Mixer torques `(tau_phi, tau_theta, tau_psi)` actually produced.
    pub torques: [f64; 3],
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightRun {
    pub samples: Vec<FlightSample>,
    /// Set when the run stopped early.
    pub abort: Option<Error>,
}

impl FlightRun {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

/// Runs the closed loop from hover at the origin.
pub fn run_flight(setup: &FlightSetup) -> Result<FlightRun> {
    setup.validate()?;
    let ratio = control_ratio(setup.dt_physics, setup.dt_control)?;
    let plant_arms = degraded_arms(&setup.degradation, &setup.arm);
    let mut state = VehicleState::hover(&setup.params, &setup.layout);
    let initial_sp = Setpoint::from_state(&state);
    let mut controller = FlightController::new(setup.gains, setup.params);
    let speed_limits = setup.speed_limits();

    let n_control = (setup.duration / setup.dt_control).round() as usize;
    let mut samples = Vec::with_capacity(n_control + 1);
    let t_h = setup.params.hover_thrust_per_rotor();
    let initial_alpha = plant_arms.map(|a| a.alpha(t_h, setup.power));
    samples.push(FlightSample {
        time: 0.0,
        state,
        alpha: initial_alpha,
        thrusts: [t_h; 4],
        torques: [0.0; 3],
        valid: initial_alpha.iter().zip(&plant_arms).all(|(a, m)| m.is_valid_angle(*a)),
    });
    let mut abort = None;
    'outer: for k in 0..n_control {
        let t0 = k as f64 * setup.dt_control;
        if setup.corrections {
            controller.set_roll_sensitivity(roll_sensitivity(&setup.layout, &setup.arm, &state, setup.power));
        }
        let sp = setup.setpoint_at(t0, &initial_sp);
        let demand: Wrench4 = controller.attitude_step(&state, &sp, setup.dt_control);
        let mut last = None;
        let mut valid = true;
        for j in 0..ratio {
            let t = t0 + j as f64 * setup.dt_physics;
            let ctx = StepContext {
                layout: &setup.layout,
                plant_arms: &plant_arms,
                estimate_arm: &setup.arm,
                corrections: setup.corrections,
                mixer_options: setup.mixer_options,
                params: &setup.params,
                power: setup.power,
                speed_limits,
                perturbations: setup.perturbation_at(t),
            };
            match dynamics::step(&state, &demand, &ctx, t, setup.dt_physics) {
                Ok(out) => {
                    state = out.state;
                    valid &= !out.invalid.iter().any(|b| *b);
                    last = Some(out);
                }
                Err(e @ Error::SimulationAbort { .. }) => {
                    abort = Some(e);
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        let out = last.expect("ratio >= 1");
        samples.push(FlightSample {
            time: (k + 1) as f64 * setup.dt_control,
            state,
            alpha: out.state.tilt.alpha,
            thrusts: out.thrusts,
            torques: out.torques,
            valid,
        });
    }
    Ok(FlightRun { samples, abort })
}

/// Summary of a roll step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollMetrics {
    /// Peak roll-aligned differential deflection, degrees.
    pub delta_alpha_max_deg: f64,
    /// Peak of `phi + dalpha` in the step direction, degrees.
    pub effective_max_deg: f64,
    pub phi_max_deg: f64,
    /// Thrust differential `((t3 + t4) - (t1 + t2)) / 2` at the deflection peak, N.
    pub delta_thrust: f64,
    /// Mean rotor thrust at the deflection peak, N.
    pub mean_thrust: f64,
    /// Flexible-to-rigid lateral force ratio; NaN when undefined.
    pub kappa: f64,
    pub any_invalid: bool,
}

/// Roll metrics of a trace for a step of sign `direction`. A pure function of
/// the recorded samples.
pub fn roll_metrics(samples: &[FlightSample], direction: f64) -> RollMetrics {
    let sigma = if direction < 0.0 { -1.0 } else { 1.0 };
    let mut m = RollMetrics {
        delta_alpha_max_deg: 0.0,
        effective_max_deg: f64::NEG_INFINITY,
        phi_max_deg: f64::NEG_INFINITY,
        delta_thrust: 0.0,
        mean_thrust: 0.0,
        kappa: f64::NAN,
        any_invalid: false,
    };
    for s in samples {
        let phi = sigma * s.state.attitude.x.to_degrees();
        let da = sigma * roll_aligned_deflection(&s.alpha);
        m.phi_max_deg = m.phi_max_deg.max(phi);
        m.effective_max_deg = m.effective_max_deg.max(phi + da);
        if da > m.delta_alpha_max_deg {
            m.delta_alpha_max_deg = da;
            let t = &s.thrusts;
            m.delta_thrust = sigma * 0.5 * ((t[2] + t[3]) - (t[0] + t[1]));
            m.mean_thrust = 0.25 * t.iter().sum::<f64>();
        }
        m.any_invalid |= !s.valid;
    }
    if samples.is_empty() {
        m.effective_max_deg = 0.0;
        m.phi_max_deg = 0.0;
    }
    m.kappa =
        dynamics::kappa(m.delta_alpha_max_deg.to_radians(), m.delta_thrust, m.phi_max_deg.to_radians(), m.mean_thrust)
            .unwrap_or(f64::NAN);
    m
}

/// Roll step to `phi_max` from hover with the calibrated arm at `rho_tpu`.
pub fn roll_setup(rho_tpu: f64, phi_max_deg: f64, corrections: bool) -> Result<FlightSetup> {
    if !(4.0..=12.0).contains(&rho_tpu) {
        return Err(Error::InputDomain(format!("rho_tpu must be in [4, 12], got {rho_tpu}")));
    }
    let params = VehicleParams::default();
    let arm = calibrated_arm(rho_tpu, &params, crate::arm::DEFAULT_P0_W)?;
    let mut setup = FlightSetup::new(Configuration::B, arm);
    setup.corrections = corrections;
    setup.duration = 3.0;
    setup.setpoints = vec![SetpointEvent {
        time: 0.0,
        phi_deg: phi_max_deg,
        theta_deg: 0.0,
        psi_deg: 0.0,
        altitude: 0.0,
        position: None,
    }];
    Ok(setup)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollExperiment {
    pub run: FlightRun,
    pub metrics: RollMetrics,
}

pub fn roll_experiment(rho_tpu: f64, phi_max_deg: f64, corrections: bool) -> Result<RollExperiment> {
    let setup = roll_setup(rho_tpu, phi_max_deg, corrections)?;
    let run = run_flight(&setup)?;
    let metrics = roll_metrics(&run.samples, phi_max_deg);
    Ok(RollExperiment { run, metrics })
}

/// Yaw-hold verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YawHoldReport {
    pub max_abs_psi_deg: f64,
    /// Mean `|tau_psi|` over the run, N m.
    pub mean_abs_tau_psi: f64,
    pub aborted: bool,
    pub passed: bool,
}

/// Heading error allowed by the yaw-hold test, degrees.
pub const YAW_HOLD_LIMIT_DEG: f64 = 15.0;

/// Yaw-hold verdict of a trace. A pure function of the recorded samples.
pub fn yaw_hold_report(run: &FlightRun) -> YawHoldReport {
    let max_abs_psi_deg = run.samples.iter().map(|s| s.state.attitude.z.to_degrees().abs()).fold(0.0, f64::max);
    let n = run.samples.len().max(1) as f64;
    let mean_abs_tau_psi = run.samples.iter().map(|s| s.torques[2].abs()).sum::<f64>() / n;
    let aborted = !run.completed();
    YawHoldReport {
        max_abs_psi_deg,
        mean_abs_tau_psi,
        aborted,
        passed: !aborted && max_abs_psi_deg < YAW_HOLD_LIMIT_DEG,
    }
}

/// Default degradation for the flyability test: arm 1 after 100 bending cycles.
pub fn shipped_degradation() -> DegradationState {
    DegradationState { bending_cycles: [100, 0, 0, 0], ..DegradationState::default() }
}

/// Position and heading hold at hover with the calibrated arm.
pub fn yaw_hold_setup(config: Configuration, rho_tpu: f64, degradation: DegradationState) -> Result<FlightSetup> {
    let params = VehicleParams::default();
    let arm = calibrated_arm(rho_tpu, &params, crate::arm::DEFAULT_P0_W)?;
    let mut setup = FlightSetup::new(config, arm);
    setup.degradation = degradation;
    setup.duration = 10.0;
    setup.setpoints = vec![SetpointEvent {
        time: 0.0,
        phi_deg: 0.0,
        theta_deg: 0.0,
        psi_deg: 0.0,
        altitude: 0.0,
        position: Some([0.0, 0.0]),
    }];
    setup.perturbations = vec![Perturbation { start: 0.5, duration: 0.2, moment: [0.0, 0.0, 0.02] }];
    Ok(setup)
}

pub fn yaw_hold(config: Configuration, rho_tpu: f64, degradation: DegradationState) -> Result<YawHoldReport> {
    let run = run_flight(&yaw_hold_setup(config, rho_tpu, degradation)?)?;
    Ok(yaw_hold_report(&run))
}
