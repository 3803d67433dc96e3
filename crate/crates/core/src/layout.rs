//! Rotor geometry, spin-direction configurations and the rotational
//! stability derivatives of the flexible frame.
//!
//! Body frame: `x` is the lateral axis that a roll manoeuvre moves the
//! vehicle along, `z` points up. Roll rotates about body `y`, pitch about
//! body `x`, yaw about `-z` (heading convention). Rotors 1 and 2 sit at
//! `+x`, rotors 3 and 4 at `-x`; rotors 1 and 3 at `-y`.
//!
//! Each arm is a beam of length `beam_length` whose tip carries the rotor.
//! The beam is splayed by `arm_splay_deg` from the `x` axis, so an upward
//! bend of `alpha` tilts the thrust inwards along the beam and lifts the
//! rotor by `beam_length * sin(alpha)`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::arm::ArmDeflectionModel;
use crate::error::{Error, Result};
use crate::mixer::{allocate, build_mixer, update_tilt_quasistatic, Wrench4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spin {
    #[serde(rename = "CW")]
    Cw,
    #[serde(rename = "CCW")]
    Ccw,
}

impl Spin {
    pub fn flipped(self) -> Self {
        match self {
            Spin::Cw => Spin::Ccw,
            Spin::Ccw => Spin::Cw,
        }
    }
}

/// The two spin-direction assignments of the H-frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Configuration {
    A,
    B,
}

impl std::str::FromStr for Configuration {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Configuration::A),
            "B" | "b" => Ok(Configuration::B),
            other => Err(Error::Config(format!("unknown configuration '{other}' (expected A or B)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotor {
    pub x: f64,
    pub y: f64,
    pub spin: Spin,
    /// Mount yaw angle, degrees (0 for the +x pair, 180 for the -x pair).
    pub mount_yaw_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorLayout {
    pub rotors: [Rotor; 4],
    /// Thrust coefficient, N/(rad/s)^2.
    pub c_t: f64,
    /// Drag-torque coefficient, N m/(rad/s)^2.
    pub c_q: f64,
    /// Moment arm `d` used by the torque rows of the mixer, m.
    pub arm_length: f64,
    pub arm_splay_deg: f64,
    pub beam_length: f64,
}

pub const DEFAULT_ARM_SPLAY_DEG: f64 = 35.0;

impl RotorLayout {
    pub fn spins(&self) -> [Spin; 4] {
        self.rotors.map(|r| r.spin)
    }

    pub fn validate(&self) -> Result<()> {
        let cw = self.rotors.iter().filter(|r| r.spin == Spin::Cw).count();
        if cw != 2 {
            return Err(Error::InputDomain(format!("layout needs exactly 2 CW and 2 CCW rotors, got {cw} CW")));
        }
        if !(self.c_t > 0.0 && self.c_q > 0.0 && self.arm_length > 0.0 && self.beam_length > 0.0) {
            return Err(Error::InputDomain("c_t, c_q, arm_length and beam_length must be > 0".into()));
        }
        let plus_x = self.rotors.iter().filter(|r| r.x > 0.0).count();
        let minus_x = self.rotors.iter().filter(|r| r.x < 0.0).count();
        if plus_x != 2 || minus_x != 2 || self.rotors.iter().any(|r| r.y == 0.0) {
            return Err(Error::InputDomain("rotor positions must form an H layout".into()));
        }
        Ok(())
    }

    /// Unit vector along the beam from root to rotor, in the horizontal plane.
    pub fn beam_direction(&self, i: usize) -> Vector3<f64> {
        let r = &self.rotors[i];
        let splay = self.arm_splay_deg.to_radians();
        Vector3::new(r.x.signum() * splay.cos(), r.y.signum() * splay.sin(), 0.0)
    }

    /// Moment of the flexibility-induced forces about (roll, pitch, yaw).
    ///
    /// This is the moment of the tilted, lifted thrust vectors minus the moment
    /// the same thrusts would produce on a rigid frame. `tilt_deg` are the arm
    /// deflections, `thrusts` the rotor thrusts in newtons.
    pub fn flex_moment(&self, tilt_deg: &[f64; 4], thrusts: &[f64; 4]) -> [f64; 3] {
        let mut m = Vector3::zeros();
        for i in 0..4 {
            let a = tilt_deg[i].to_radians();
            let t = thrusts[i];
            let r = &self.rotors[i];
            let e = self.beam_direction(i);
            let p = Vector3::new(r.x, r.y, self.beam_length * a.sin());
            let f = Vector3::new(-a.sin() * t * e.x, -a.sin() * t * e.y, a.cos() * t);
            let p0 = Vector3::new(r.x, r.y, 0.0);
            let f0 = Vector3::new(0.0, 0.0, t);
            m += p.cross(&f) - p0.cross(&f0);
        }
        [m.y, m.x, -m.z]
    }
}

/// Builds configuration A (rotors 1 and 4 CW) or B (rotors 1 and 4 CCW).
pub fn make_configuration(which: Configuration, arm_length: f64, c_t: f64, c_q: f64) -> RotorLayout {
    let d = arm_length;
    let spins = match which {
        Configuration::A => [Spin::Cw, Spin::Ccw, Spin::Ccw, Spin::Cw],
        Configuration::B => [Spin::Ccw, Spin::Cw, Spin::Cw, Spin::Ccw],
    };
    let pos = [(d, -d), (d, d), (-d, -d), (-d, d)];
    let rotors = std::array::from_fn(|i| Rotor {
        x: pos[i].0,
        y: pos[i].1,
        spin: spins[i],
        mount_yaw_deg: if i < 2 { 0.0 } else { 180.0 },
    });
    RotorLayout { rotors, c_t, c_q, arm_length, arm_splay_deg: DEFAULT_ARM_SPLAY_DEG, beam_length: arm_length }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StabilityDerivatives {
    pub c_m_tau_phi: f64,
    pub c_m_tau_theta: f64,
    pub c_m_tau_psi: f64,
}

impl StabilityDerivatives {
    pub fn as_array(&self) -> [f64; 3] {
        [self.c_m_tau_phi, self.c_m_tau_theta, self.c_m_tau_psi]
    }

    /// Stable in each axis iff the derivative is negative.
    pub fn stable(&self) -> [bool; 3] {
        self.as_array().map(|c| c < 0.0)
    }
}

/// Inputs shared by the finite-difference derivative evaluations.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeSetup<'a> {
    pub layout: &'a RotorLayout,
    pub arm_model: &'a ArmDeflectionModel,
    /// Per-rotor hover thrust, N.
    pub hover_thrust: f64,
    pub power: f64,
    pub delta_tau: f64,
}

const QUASI_STATIC_ITERS: usize = 200;

impl DerivativeSetup<'_> {
    /// Quasi-static flex moment after applying `torque` on `axis` (0 roll, 1 pitch, 2 yaw).
    fn flex_moment_under(&self, axis: usize, torque: f64) -> Result<f64> {
        let layout = self.layout;
        let omega_h2 = self.hover_thrust / layout.c_t;
        let mut speeds = [omega_h2; 4];
        let mut tau = [0.0; 3];
        tau[axis] = torque;
        let mut last = [f64::NAN; 4];
        let mut tilt = [0.0; 4];
        // iterate the deflection -> mixer -> allocation loop to its fixed point
        for _ in 0..QUASI_STATIC_ITERS {
            let upd = update_tilt_quasistatic(layout, self.arm_model, &speeds, self.power);
            if let Some(arm) = upd.invalid.iter().position(|&f| f) {
                let raw = self.arm_model.alpha(layout.c_t * speeds[arm], self.power);
                return Err(Error::InvalidDeflection { arm: arm + 1, alpha_deg: raw });
            }
            tilt = upd.tilt.alpha;
            let mixer = build_mixer(layout, &upd.tilt);
            let f_z = 4.0 * self.hover_thrust;
            let demand = Wrench4::new(f_z, tau[0], tau[1], tau[2]);
            let alloc = allocate(&mixer, &demand, (0.0, f64::INFINITY))?;
            speeds = alloc.speeds_sq;
            if tilt.iter().zip(&last).all(|(a, b)| (a - b).abs() < 1e-13) {
                break;
            }
            last = tilt;
        }
        let thrusts = speeds.map(|w2| layout.c_t * w2);
        Ok(layout.flex_moment(&tilt, &thrusts)[axis])
    }

    fn derivative(&self, axis: usize) -> Result<f64> {
        if !(self.delta_tau > 0.0) {
            return Err(Error::InputDomain("delta_tau must be > 0".into()));
        }
        let plus = self.flex_moment_under(axis, self.delta_tau)?;
        let minus = self.flex_moment_under(axis, -self.delta_tau)?;
        Ok((plus - minus) / (2.0 * self.delta_tau))
    }
}

/// Default finite-difference step: 1% of the yaw torque available from hover.
pub fn default_delta_tau(layout: &RotorLayout, hover_thrust: f64) -> f64 {
    0.01 * 4.0 * layout.c_q / layout.c_t * hover_thrust
}

pub fn yaw_stability_derivative(
    layout: &RotorLayout,
    arm_model: &ArmDeflectionModel,
    hover_thrust: f64,
    power: f64,
    delta_tau: f64,
) -> Result<f64> {
    DerivativeSetup { layout, arm_model, hover_thrust, power, delta_tau }.derivative(2)
}

/// Returns `(C_M_tau_theta, C_M_tau_phi)`.
pub fn pitch_roll_stability_derivatives(
    layout: &RotorLayout,
    arm_model: &ArmDeflectionModel,
    hover_thrust: f64,
    power: f64,
    delta_tau: f64,
) -> Result<(f64, f64)> {
    let s = DerivativeSetup { layout, arm_model, hover_thrust, power, delta_tau };
    Ok((s.derivative(1)?, s.derivative(0)?))
}

pub fn stability_derivatives(
    layout: &RotorLayout,
    arm_model: &ArmDeflectionModel,
    hover_thrust: f64,
    power: f64,
    delta_tau: f64,
) -> Result<StabilityDerivatives> {
    let s = DerivativeSetup { layout, arm_model, hover_thrust, power, delta_tau };
    Ok(StabilityDerivatives {
        c_m_tau_phi: s.derivative(0)?,
        c_m_tau_theta: s.derivative(1)?,
        c_m_tau_psi: s.derivative(2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const C_T: f64 = 1.2e-5;
    const C_Q: f64 = 1.92e-7;
    const HOVER: f64 = 4.43;

    fn derivs(which: Configuration, model: &ArmDeflectionModel) -> StabilityDerivatives {
        let layout = make_configuration(which, 0.2, C_T, C_Q);
        let dt = default_delta_tau(&layout, HOVER);
        stability_derivatives(&layout, model, HOVER, model.p0, dt).unwrap()
    }

    #[test]
    fn spin_patterns() {
        let a = make_configuration(Configuration::A, 0.2, C_T, C_Q);
        let b = make_configuration(Configuration::B, 0.2, C_T, C_Q);
        assert_eq!(a.spins(), [Spin::Cw, Spin::Ccw, Spin::Ccw, Spin::Cw]);
        assert_eq!(b.spins(), [Spin::Ccw, Spin::Cw, Spin::Cw, Spin::Ccw]);
        assert_eq!(a.spins().map(Spin::flipped), b.spins());
        for (ra, rb) in a.rotors.iter().zip(&b.rotors) {
            assert_eq!((ra.x, ra.y, ra.mount_yaw_deg), (rb.x, rb.y, rb.mount_yaw_deg));
        }
        a.validate().unwrap();
        b.validate().unwrap();
    }

    #[test]
    fn invalid_layouts() {
        let mut l = make_configuration(Configuration::A, 0.2, C_T, C_Q);
        l.rotors[0].spin = Spin::Ccw;
        assert!(l.validate().is_err());
        let mut l = make_configuration(Configuration::A, 0.2, C_T, C_Q);
        l.c_q = 0.0;
        assert!(l.validate().is_err());
    }

    #[test]
    fn yaw_sign_depends_on_configuration() {
        let m = ArmDeflectionModel::with_rho(6.0);
        let a = derivs(Configuration::A, &m);
        let b = derivs(Configuration::B, &m);
        assert!(a.c_m_tau_psi > 0.0, "{a:?}");
        assert!(b.c_m_tau_psi < 0.0, "{b:?}");
        assert!(!a.stable()[2]);
        assert!(b.stable()[2]);
    }

    #[test]
    fn pitch_roll_negative_for_both() {
        for rho in [6.0, 8.0, 10.0] {
            let m = ArmDeflectionModel::with_rho(rho);
            for which in [Configuration::A, Configuration::B] {
                let d = derivs(which, &m);
                assert!(d.c_m_tau_phi < 0.0 && d.c_m_tau_theta < 0.0, "{which:?} {rho} {d:?}");
            }
        }
    }

    #[test]
    fn rigid_limit_is_zero() {
        let m = ArmDeflectionModel::rigid();
        for which in [Configuration::A, Configuration::B] {
            let d = derivs(which, &m);
            assert_eq!(d.as_array(), [0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn derivatives_shrink_with_coefficients() {
        let base = ArmDeflectionModel::with_rho(6.0);
        let mut prev = f64::INFINITY;
        for s in [1.0, 0.1, 0.01, 0.001] {
            let m = ArmDeflectionModel { scale: s, ..base };
            let d = derivs(Configuration::B, &m);
            let mag = d.as_array().iter().map(|c| c.abs()).fold(0.0, f64::max);
            assert!(mag < prev);
            prev = mag;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn independent_of_step_over_a_decade() {
        let m = ArmDeflectionModel::with_rho(6.0);
        let layout = make_configuration(Configuration::B, 0.2, C_T, C_Q);
        let base = default_delta_tau(&layout, HOVER);
        let d1 = stability_derivatives(&layout, &m, HOVER, m.p0, base).unwrap();
        let d10 = stability_derivatives(&layout, &m, HOVER, m.p0, base * 0.1).unwrap();
        for (x, y) in d1.as_array().iter().zip(d10.as_array()) {
            assert!(((x - y) / x).abs() < 0.01, "{x} vs {y}");
        }
    }

    #[test]
    fn flex_moment_zero_when_straight() {
        let l = make_configuration(Configuration::B, 0.2, C_T, C_Q);
        assert_eq!(l.flex_moment(&[0.0; 4], &[4.0, 5.0, 3.0, 4.5]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_region_is_an_error() {
        let m = ArmDeflectionModel { scale: 20.0, ..ArmDeflectionModel::with_rho(6.0) };
        let layout = make_configuration(Configuration::B, 0.2, C_T, C_Q);
        let r = yaw_stability_derivative(&layout, &m, HOVER, m.p0, 1e-3);
        assert!(matches!(r, Err(Error::InvalidDeflection { .. })));
    }
}
