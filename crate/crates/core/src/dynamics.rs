//! Rigid-body dynamics of the flexible quadrotor.
//!
//! Translational: the collective thrust `T = sum(T_i)` acts along the tilted
//! body `z` axis and the lateral flexible force
//! `-a1 T1 - a2 T2 + a3 T3 + a4 T4` (small-angle, radians) acts along the
//! body roll-lateral axis; gravity acts along world `-z`.
//!
//! Rotational, per axis: `I * accel = M' - tau + M_flex`, where `tau` is the
//! mixer torque and `M_flex` the flexibility-induced moment. Linearising
//! `M_flex = C * tau` gives the stability-derivative form.
//!
//! Attitude rates are integrated directly as Euler-angle rates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::arm::ArmDeflectionModel;
use crate::error::{Error, Result};
use crate::layout::{RotorLayout, StabilityDerivatives};
use crate::mixer::{
    allocate, build_mixer_with, small_angle_forces, update_tilt_quasistatic, MixerOptions, TiltAngles, Wrench4,
};

pub const DEFAULT_MASS_KG: f64 = 1.805;
pub const DEFAULT_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    /// `(I_x, I_y, I_z)` about the roll, pitch and yaw axes, kg m^2.
    pub inertia: [f64; 3],
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        // Point-mass estimate: four ~0.2 kg arm ends at (+-0.2, +-0.2) m plus the platform.
        Self { mass: DEFAULT_MASS_KG, inertia: [0.035, 0.035, 0.065], gravity: DEFAULT_GRAVITY }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || self.inertia.iter().any(|i| !(*i > 0.0)) || !(self.gravity >= 0.0) {
            return Err(Error::InputDomain("mass and inertias must be > 0".into()));
        }
        Ok(())
    }

    pub fn hover_thrust_per_rotor(&self) -> f64 {
        self.mass * self.gravity / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// `(phi, theta, psi)`, radians.
    pub attitude: Vector3<f64>,
    /// `(p, q, r)`, rad/s.
    pub body_rates: Vector3<f64>,
    pub tilt: TiltAngles,
    /// Squared rotor speeds applied during the last step.
    pub speeds_sq: [f64; 4],
}

impl VehicleState {
    pub fn hover(params: &VehicleParams, layout: &RotorLayout) -> Self {
        let w2 = params.hover_thrust_per_rotor() / layout.c_t;
        Self { speeds_sq: [w2; 4], ..Self::default() }
    }

    fn to_array(self) -> [f64; 12] {
        let mut y = [0.0; 12];
        y[0..3].copy_from_slice(self.position.as_slice());
        y[3..6].copy_from_slice(self.velocity.as_slice());
        y[6..9].copy_from_slice(self.attitude.as_slice());
        y[9..12].copy_from_slice(self.body_rates.as_slice());
        y
    }

    fn with_array(&self, y: &[f64; 12]) -> Self {
        Self {
            position: Vector3::new(y[0], y[1], y[2]),
            velocity: Vector3::new(y[3], y[4], y[5]),
            attitude: Vector3::new(y[6], y[7], y[8]),
            body_rates: Vector3::new(y[9], y[10], y[11]),
            ..*self
        }
    }
}

/// Body thrust axis expressed in the world frame.
pub fn thrust_axis(att: &Vector3<f64>) -> Vector3<f64> {
    let (sphi, cphi) = att.x.sin_cos();
    let (sth, cth) = att.y.sin_cos();
    let (spsi, cpsi) = att.z.sin_cos();
    Vector3::new(cpsi * sphi - spsi * sth * cphi, -(cpsi * sth * cphi + spsi * sphi), cth * cphi)
}

/// Body roll-lateral axis (direction of the flexible force) in the world frame.
pub fn lateral_axis(att: &Vector3<f64>) -> Vector3<f64> {
    let (sphi, cphi) = att.x.sin_cos();
    let (sth, cth) = att.y.sin_cos();
    let (spsi, cpsi) = att.z.sin_cos();
    Vector3::new(cpsi * cphi + spsi * sth * sphi, cpsi * sth * sphi - spsi * cphi, -cth * sphi)
}

/// World-frame linear acceleration, m/s^2.
pub fn translational_accel(state: &VehicleState, thrusts: &[f64; 4], params: &VehicleParams) -> Vector3<f64> {
    let (flex, total) = small_angle_forces(&state.tilt, thrusts);
    accel_from_forces(&state.attitude, total, flex, params)
}

fn accel_from_forces(att: &Vector3<f64>, total: f64, flex: f64, params: &VehicleParams) -> Vector3<f64> {
    (thrust_axis(att) * total + lateral_axis(att) * flex) / params.mass - Vector3::new(0.0, 0.0, params.gravity)
}

/// Angular acceleration with an explicit flexibility moment.
pub fn rotational_accel_with_flex(
    torques: &[f64; 3],
    perturbations: &[f64; 3],
    flex_moment: &[f64; 3],
    params: &VehicleParams,
) -> [f64; 3] {
    std::array::from_fn(|i| (perturbations[i] - torques[i] + flex_moment[i]) / params.inertia[i])
}

/// Angular acceleration in stability-derivative form, `(roll, pitch, yaw)`.
pub fn rotational_accel(
    torques: &[f64; 3],
    perturbations: &[f64; 3],
    stab: &StabilityDerivatives,
    params: &VehicleParams,
) -> [f64; 3] {
    let c = stab.as_array();
    let flex: [f64; 3] = std::array::from_fn(|i| c[i] * torques[i]);
    rotational_accel_with_flex(torques, perturbations, &flex, params)
}

/// Inputs held constant across one integration step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInputs {
    pub thrusts: [f64; 4],
    pub torques: [f64; 3],
    pub perturbations: [f64; 3],
    pub flex_moment: [f64; 3],
}

fn derivative(y: &[f64; 12], base: &VehicleState, inputs: &StepInputs, params: &VehicleParams) -> [f64; 12] {
    let s = base.with_array(y);
    let acc = translational_accel(&s, &inputs.thrusts, params);
    let ang = rotational_accel_with_flex(&inputs.torques, &inputs.perturbations, &inputs.flex_moment, params);
    let mut d = [0.0; 12];
    d[0..3].copy_from_slice(&y[3..6]);
    d[3..6].copy_from_slice(acc.as_slice());
    d[6..9].copy_from_slice(&y[9..12]);
    d[9..12].copy_from_slice(&ang);
    d
}

/// One classical RK4 step with inputs held constant.
pub fn rk4_step(state: &VehicleState, inputs: &StepInputs, params: &VehicleParams, dt: f64) -> VehicleState {
    let y0 = state.to_array();
    let add = |y: &[f64; 12], k: &[f64; 12], h: f64| -> [f64; 12] { std::array::from_fn(|i| y[i] + h * k[i]) };
    let k1 = derivative(&y0, state, inputs, params);
    let k2 = derivative(&add(&y0, &k1, dt / 2.0), state, inputs, params);
    let k3 = derivative(&add(&y0, &k2, dt / 2.0), state, inputs, params);
    let k4 = derivative(&add(&y0, &k3, dt), state, inputs, params);
    let y: [f64; 12] = std::array::from_fn(|i| y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    state.with_array(&y)
}

/// Everything `step` needs besides the state and the demand.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub layout: &'a RotorLayout,
    /// True per-arm deflection behaviour (may include degradation).
    pub plant_arms: &'a [ArmDeflectionModel; 4],
    /// Deflection model the autopilot feeds into its mixer.
    pub estimate_arm: &'a ArmDeflectionModel,
    /// Feed estimated deflections to the mixer; `false` allocates as if rigid.
    pub corrections: bool,
    pub mixer_options: MixerOptions,
    pub params: &'a VehicleParams,
    pub power: f64,
    pub speed_limits: (f64, f64),
    pub perturbations: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: VehicleState,
    pub thrusts: [f64; 4],
    pub torques: [f64; 3],
    pub flex_moment: [f64; 3],
    /// Tilt the autopilot used in its mixer.
    pub mixer_tilt: TiltAngles,
    /// Plant arms outside the quasi-static region.
    pub invalid: [bool; 4],
    pub estimate_invalid: bool,
    pub saturated: bool,
}

/// Allocation, quasi-static tilt update and one RK4 step.
pub fn step(state: &VehicleState, demand: &Wrench4, ctx: &StepContext, time: f64, dt: f64) -> Result<StepOutcome> {
    if !(dt > 0.0) {
        return Err(Error::InputDomain(format!("dt must be > 0, got {dt}")));
    }
    let layout = ctx.layout;
    let prev = &state.speeds_sq;
    let mut plant_tilt = TiltAngles::zero();
    let mut invalid = [false; 4];
    for i in 0..4 {
        let a = ctx.plant_arms[i].alpha(layout.c_t * prev[i].max(0.0), ctx.power);
        plant_tilt.alpha[i] = a;
        invalid[i] = !ctx.plant_arms[i].is_valid_angle(a);
    }
    let (mixer_tilt, estimate_invalid) = if ctx.corrections {
        let upd = update_tilt_quasistatic(layout, ctx.estimate_arm, prev, ctx.power);
        (upd.tilt, upd.any_invalid())
    } else {
        (TiltAngles::zero(), false)
    };
    let mixer = build_mixer_with(layout, &mixer_tilt, ctx.mixer_options);
    let alloc = allocate(&mixer, demand, ctx.speed_limits)?;
    let speeds = alloc.speeds_sq;
    let thrusts = speeds.map(|w2| layout.c_t * w2);

    let achieved = build_mixer_with(layout, &plant_tilt, ctx.mixer_options).apply(&speeds);
    let torques = [achieved.tau_phi, achieved.tau_theta, achieved.tau_psi];
    let flex_moment = layout.flex_moment(&plant_tilt.alpha, &thrusts);
    let inputs = StepInputs { thrusts, torques, perturbations: ctx.perturbations, flex_moment };
    let mut held = *state;
    held.tilt = plant_tilt;
    let mut next = rk4_step(&held, &inputs, ctx.params, dt);
    next.speeds_sq = speeds;
    check_envelope(&next, time + dt)?;
    Ok(StepOutcome {
        state: next,
        thrusts,
        torques,
        flex_moment,
        mixer_tilt,
        invalid,
        estimate_invalid,
        saturated: alloc.saturated,
    })
}

pub fn check_envelope(state: &VehicleState, time: f64) -> Result<()> {
    let y = state.to_array();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::SimulationAbort { time, reason: "non-finite state".into() });
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    if state.attitude.x.abs() >= half_pi || state.attitude.y.abs() >= half_pi {
        return Err(Error::SimulationAbort {
            time,
            reason: format!("attitude inversion (phi={:.3}, theta={:.3} rad)", state.attitude.x, state.attitude.y),
        });
    }
    Ok(())
}

/// Ratio of the flexible to the rigid lateral-force term of a roll manoeuvre.
pub fn kappa(delta_alpha: f64, delta_thrust: f64, phi: f64, total_thrust: f64) -> Result<f64> {
    if phi == 0.0 || phi.sin() == 0.0 {
        return Err(Error::UndefinedRatio("kappa is undefined at phi = 0".into()));
    }
    if !(total_thrust > 0.0) {
        return Err(Error::UndefinedRatio("kappa needs positive thrust".into()));
    }
    Ok(delta_alpha * delta_thrust / (phi.sin() * total_thrust))
}

/// `(rigid, flexible)` lateral force terms of a symmetric roll: `sin(phi) T` and `dalpha dT`.
pub fn roll_lateral_decomposition(phi: f64, total_thrust: f64, delta_alpha: f64, delta_thrust: f64) -> (f64, f64) {
    (phi.sin() * total_thrust, delta_alpha * delta_thrust)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{make_configuration, Configuration};

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn hover_equilibrium() {
        let p = params();
        let s = VehicleState::default();
        let a = translational_accel(&s, &[p.hover_thrust_per_rotor(); 4], &p);
        assert!(a.norm() < 1e-12, "{a}");
    }

    #[test]
    fn free_fall_is_exactly_g() {
        let p = params();
        let a = translational_accel(&VehicleState::default(), &[0.0; 4], &p);
        assert_eq!(a, Vector3::new(0.0, 0.0, -p.gravity));
    }

    #[test]
    fn rigid_roll_lateral_force() {
        let p = params();
        let phi: f64 = 0.1;
        let s = VehicleState { attitude: Vector3::new(phi, 0.0, 0.0), ..Default::default() };
        let t = [4.0, 4.0, 4.0, 4.0];
        let a = translational_accel(&s, &t, &p);
        assert!((a.x * p.mass - phi.sin() * 16.0).abs() < 1e-12);
    }

    #[test]
    fn flexible_term_adds_lateral_force() {
        let p = params();
        let t = [4.0, 4.0, 0.5, 0.5];
        let level = VehicleState::default();
        let rigid = translational_accel(&level, &t, &p);
        // rising pair carries 0.3 rad at 0.5 N each: flexible term 0.3 N
        let d = 0.3f64.to_degrees();
        let flexed = VehicleState { tilt: TiltAngles::new([0.0, 0.0, d, d]), ..level };
        let a = translational_accel(&flexed, &t, &p);
        assert!(((a.x - rigid.x) * p.mass - 0.3).abs() < 1e-12);
        let (_, flex) = roll_lateral_decomposition(0.0, 9.0, 0.3, 1.0);
        assert!((flex - 0.3).abs() < 1e-15);
    }

    #[test]
    fn axes_are_orthonormal() {
        for att in [Vector3::new(0.3, -0.2, 1.1), Vector3::new(-0.7, 0.4, -2.5)] {
            let u = thrust_axis(&att);
            let e = lateral_axis(&att);
            assert!((u.norm() - 1.0).abs() < 1e-14);
            assert!((e.norm() - 1.0).abs() < 1e-14);
            assert!(u.dot(&e).abs() < 1e-14);
        }
    }

    #[test]
    fn decomposition_matches_full_model_at_small_angles() {
        let p = params();
        // positive roll loads rotors 3 and 4, whose arms rise
        for (phi_deg, a12, a34) in [(10.0f64, -8.0, 10.0), (5.0, -3.0, 3.0), (2.0, -10.0, 9.0)] {
            let phi = phi_deg.to_radians();
            let t = [3.5, 3.5, 5.0, 5.0];
            let tilt = TiltAngles::new([a12, a12, a34, a34]);
            let s = VehicleState { attitude: Vector3::new(phi, 0.0, 0.0), tilt, ..Default::default() };
            let full = translational_accel(&s, &t, &p).x * p.mass;
            let total: f64 = t.iter().sum();
            let (flex, _) = small_angle_forces(&tilt, &t);
            let simplified = phi.sin() * total + flex;
            assert!((full - simplified).abs() <= 0.02 * simplified.abs(), "{full} vs {simplified}");
        }
    }

    #[test]
    fn rotational_examples() {
        let p = params();
        let zero = rotational_accel(&[0.0; 3], &[0.0; 3], &StabilityDerivatives::default(), &p);
        assert_eq!(zero, [0.0; 3]);
        let p = VehicleParams { inertia: [0.03, 0.03, 0.05], ..p };
        let stab = StabilityDerivatives { c_m_tau_psi: -0.2, ..Default::default() };
        let acc = rotational_accel(&[0.0, 0.0, 1.0], &[0.0; 3], &stab, &p);
        assert!((acc[2] + 24.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa(0.0, 1.0, 0.3, 5.0).unwrap(), 0.0);
        let k = kappa(26.6f64.to_radians(), 3.0, 25f64.to_radians(), 5.0).unwrap();
        let expected = 26.6f64.to_radians() * 0.6 / 25f64.to_radians().sin();
        assert!((k - expected).abs() < 1e-12);
        assert!((k - 0.659).abs() < 1e-3);
        assert!(matches!(kappa(0.1, 1.0, 0.0, 5.0), Err(Error::UndefinedRatio(_))));
        assert!(kappa(0.1, 1.0, 0.2, 0.0).is_err());
    }

    #[test]
    fn kappa_is_scale_free_in_thrust() {
        let base = kappa(0.3, 2.0, 0.4, 7.0).unwrap();
        for c in [0.1, 2.0, 13.0] {
            assert!((kappa(0.3, 2.0 * c, 0.4, 7.0 * c).unwrap() - base).abs() < 1e-14);
        }
    }

    #[test]
    fn inversion_aborts() {
        let s = VehicleState { attitude: Vector3::new(0.0, 1.6, 0.0), ..Default::default() };
        assert!(matches!(check_envelope(&s, 1.0), Err(Error::SimulationAbort { .. })));
    }

    #[test]
    fn held_hover_does_not_drift() {
        let p = params();
        let layout = make_configuration(Configuration::B, 0.2, 1.2e-5, 1.92e-7);
        let arm = ArmDeflectionModel::rigid();
        let arms = [arm; 4];
        let ctx = StepContext {
            layout: &layout,
            plant_arms: &arms,
            estimate_arm: &arm,
            corrections: true,
            mixer_options: MixerOptions::default(),
            params: &p,
            power: arm.p0,
            speed_limits: (0.0, 1e7),
            perturbations: [0.0; 3],
        };
        let demand = Wrench4::new(p.mass * p.gravity, 0.0, 0.0, 0.0);
        let mut s = VehicleState::hover(&p, &layout);
        for k in 0..1000 {
            s = step(&s, &demand, &ctx, k as f64 * 1e-3, 1e-3).unwrap().state;
        }
        assert!(s.position.norm() < 1e-6, "{}", s.position);
    }
}
