//! Quasi-static arm deflection model.
//!
//! The deflection of a printed TPU arm is a quadratic polynomial in rotor
//! thrust whose coefficients depend linearly on the infill rate, scaled by a
//! battery power-loss factor:
//!
//! ```text
//! alpha = alpha0 + s * ((A1 + rho*A2) T + (B1 + rho*B2) T^2) * (P/P0)^Cp
//! ```
//!
//! `s` is an extra calibration scale (1.0 reproduces the raw coefficients).
//! Thrust is in newtons, angles in degrees, power in watts.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Experimental polynomial coefficients for TPU 70A arms.
pub const A1: f64 = 2.4387;
pub const A2: f64 = -0.1997;
pub const B1: f64 = -0.162;
pub const B2: f64 = 0.0151;

/// Deflection beyond which the quasi-static model is no longer trusted.
pub const DEFAULT_VALIDITY_THRESHOLD_DEG: f64 = 40.0;

pub const DEFAULT_C_P: f64 = 1.7;
pub const DEFAULT_P0_W: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmDeflectionModel {
    pub alpha0: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub rho_tpu: f64,
    pub c_p: f64,
    pub p0: f64,
    /// Multiplier on the thrust polynomial. Fatigue degradation also acts here.
    pub scale: f64,
    pub threshold_deg: f64,
}

impl Default for ArmDeflectionModel {
    fn default() -> Self {
        Self {
            alpha0: 0.0,
            a1: A1,
            a2: A2,
            b1: B1,
            b2: B2,
            rho_tpu: 6.9,
            c_p: DEFAULT_C_P,
            p0: DEFAULT_P0_W,
            scale: 1.0,
            threshold_deg: DEFAULT_VALIDITY_THRESHOLD_DEG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeflectionResult {
    pub alpha: f64,
    pub valid: bool,
}

impl ArmDeflectionModel {
    pub fn with_rho(rho_tpu: f64) -> Self {
        Self { rho_tpu, ..Self::default() }
    }

    /// Zero-coefficient model: the arm never bends.
    pub fn rigid() -> Self {
        Self { a1: 0.0, a2: 0.0, b1: 0.0, b2: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha0", self.alpha0),
            ("a1", self.a1),
            ("a2", self.a2),
            ("b1", self.b1),
            ("b2", self.b2),
            ("scale", self.scale),
        ] {
            ensure_finite(name, v)?;
        }
        if !(self.rho_tpu > 0.0 && self.rho_tpu <= 100.0) {
            return Err(Error::InputDomain(format!("rho_tpu must be in (0, 100], got {}", self.rho_tpu)));
        }
        if !(1.6..=1.8).contains(&self.c_p) {
            return Err(Error::InputDomain(format!("c_p must be in [1.6, 1.8], got {}", self.c_p)));
        }
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return Err(Error::InputDomain(format!("p0 must be > 0, got {}", self.p0)));
        }
        if !(self.threshold_deg > 0.0) {
            return Err(Error::InputDomain("threshold_deg must be > 0".into()));
        }
        Ok(())
    }

    /// Linear thrust coefficient at this infill rate, deg/N.
    pub fn linear_coeff(&self) -> f64 {
        self.a1 + self.rho_tpu * self.a2
    }

    /// Quadratic thrust coefficient at this infill rate, deg/N^2.
    pub fn quadratic_coeff(&self) -> f64 {
        self.b1 + self.rho_tpu * self.b2
    }

    /// Combined multiplier applied to the thrust polynomial at `power`.
    pub fn power_factor(&self, power: f64) -> f64 {
        self.scale * (power / self.p0).powf(self.c_p)
    }

    /// The bracketed thrust polynomial, before power scaling.
    pub fn thrust_polynomial(&self, thrust: f64) -> f64 {
        self.linear_coeff() * thrust + self.quadratic_coeff() * thrust * thrust
    }

    /// Raw deflection in degrees with no domain checks or validity flag.
    pub fn alpha(&self, thrust: f64, power: f64) -> f64 {
        self.alpha0 + self.thrust_polynomial(thrust) * self.power_factor(power)
    }

    pub fn is_valid_angle(&self, alpha: f64) -> bool {
        alpha.abs() <= self.threshold_deg
    }

    pub fn evaluate(&self, thrust: f64, power: f64) -> Result<DeflectionResult> {
        ensure_finite("thrust", thrust)?;
        ensure_finite("power", power)?;
        if thrust < 0.0 {
            return Err(Error::InputDomain(format!("thrust must be >= 0, got {thrust}")));
        }
        if power <= 0.0 {
            return Err(Error::InputDomain(format!("power must be > 0, got {power}")));
        }
        let alpha = self.alpha(thrust, power);
        Ok(DeflectionResult { alpha, valid: self.is_valid_angle(alpha) })
    }

    /// Smallest non-negative thrust producing `alpha_target` at `power`.
    pub fn invert(&self, alpha_target: f64, power: f64) -> Result<f64> {
        ensure_finite("alpha_target", alpha_target)?;
        ensure_finite("power", power)?;
        if power <= 0.0 {
            return Err(Error::InputDomain(format!("power must be > 0, got {power}")));
        }
        if alpha_target == self.alpha0 {
            return Ok(0.0);
        }
        let k = self.power_factor(power);
        let a = self.quadratic_coeff() * k;
        let b = self.linear_coeff() * k;
        let c = self.alpha0 - alpha_target;
        let unreachable = || Error::UnreachableDeflection { target_deg: alpha_target, max_deg: self.max_alpha(power) };

        let mut roots: Vec<f64> = Vec::with_capacity(2);
        if a == 0.0 {
            if b == 0.0 {
                return Err(unreachable());
            }
            roots.push(-c / b);
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return Err(unreachable());
            }
            let sq = disc.sqrt();
            let q = -0.5 * (b + b.signum() * sq);
            if q != 0.0 {
                roots.push(q / a);
                roots.push(c / q);
            } else {
                roots.push(0.0);
            }
        }
        let root = roots.into_iter().filter(|r| r.is_finite() && *r >= 0.0).fold(f64::INFINITY, f64::min);
        if !root.is_finite() {
            return Err(unreachable());
        }
        // one Newton step cleans up cancellation in the small root
        let f = self.alpha(root, power) - alpha_target;
        let df = b + 2.0 * a * root;
        let polished = if df.abs() > 1e-12 { root - f / df } else { root };
        Ok(if polished >= 0.0 { polished } else { root })
    }

    /// Largest deflection reachable with non-negative thrust (infinite if unbounded).
    pub fn max_alpha(&self, power: f64) -> f64 {
        let k = self.power_factor(power);
        let a = self.quadratic_coeff() * k;
        let b = self.linear_coeff() * k;
        if a < 0.0 {
            let t_vertex = (-b / (2.0 * a)).max(0.0);
            self.alpha0 + b * t_vertex + a * t_vertex * t_vertex
        } else if a == 0.0 && b <= 0.0 {
            self.alpha0
        } else {
            f64::INFINITY
        }
    }

    pub fn delta(&self, t_high: f64, t_low: f64, power: f64) -> Result<f64> {
        Ok(self.evaluate(t_high, power)?.alpha - self.evaluate(t_low, power)?.alpha)
    }

    /// Returns a copy whose `alpha0` zeroes the deflection at `thrust`.
    ///
    /// Arms are mounted so that they sit flat around half throttle; with this
    /// offset the deflection is positive above hover thrust and negative below.
    pub fn nulled_at(mut self, thrust: f64, power: f64) -> Self {
        self.alpha0 = -self.thrust_polynomial(thrust) * self.power_factor(power);
        self
    }

    /// Scale that makes `delta(t_high, t_low)` equal `target_delta_deg`.
    pub fn scale_for_delta(&self, t_high: f64, t_low: f64, power: f64, target_delta_deg: f64) -> Result<f64> {
        let unit = Self { scale: 1.0, ..*self };
        let raw = unit.delta(t_high, t_low, power)?;
        if raw == 0.0 {
            return Err(Error::DivisionByZero("raw deflection delta is zero".into()));
        }
        Ok(target_delta_deg / raw)
    }
}

pub fn evaluate_deflection(model: &ArmDeflectionModel, thrust: f64, power: f64) -> Result<DeflectionResult> {
    model.evaluate(thrust, power)
}

pub fn invert_deflection(model: &ArmDeflectionModel, alpha_target: f64, power: f64) -> Result<f64> {
    model.invert(alpha_target, power)
}

pub fn deflection_delta(model: &ArmDeflectionModel, t_high: f64, t_low: f64, power: f64) -> Result<f64> {
    model.delta(t_high, t_low, power)
}
