//! Simulation and analysis of a quadrotor with flexible, 3D-printed arms.
//!
//! The crate is organised bottom-up:
//!
//! * [`arm`] - quasi-static arm deflection as a function of thrust, infill and power
//! * [`layout`] - rotor geometry, spin configurations and rotational stability derivatives
//! * [`mixer`] - the deflection-dependent mixer matrix and control allocation
//! * [`dynamics`] - 6-DOF translational/rotational dynamics with the flexible terms, RK4
//! * [`controller`] - cascaded PID flight controller and arm degradation
//! * [`flight`] - closed-loop simulation, roll and yaw-hold experiments
//! * [`perch`] - tendon closure plant, FSR sensor and contact-pressure PID
//! * [`energy`] - flight and inspection endurance
//! * [`scenario`], [`trace`], [`runner`] - config files, CSV output and the scenario driver

// NaN must fail validation, so `!(x > 0.0)` is used on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arm;
pub mod controller;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod flight;
pub mod layout;
pub mod mixer;
pub mod perch;
pub mod runner;
pub mod scenario;
pub mod trace;

pub use error::{Error, Result};
