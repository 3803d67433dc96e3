//! Scenario files: TOML with nested sections, every field defaulted.
//!
//! ```toml
//! name = "roll_rho8"
//! mode = "roll_experiment"   # flight | roll_experiment | landing | endurance
//!
//! [sim]
//! dt_physics = 0.001
//! dt_control = 0.004         # integer multiple of dt_physics
//! duration = 3.0
//! seed = 1
//!
//! [vehicle]
//! configuration = "B"
//!
//! [arm]
//! model = "calibrated"       # calibrated | raw | rigid
//! rho_tpu = 8.0
//!
//! [controller]
//! corrections = true
//!
//! [[events]]
//! type = "setpoint"
//! time = 0.0
//! phi_deg = 25.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arm::{ArmDeflectionModel, DEFAULT_P0_W};
use crate::controller::{DegradationState, FlightGains};
use crate::dynamics::VehicleParams;
use crate::energy::{BatterySpec, EnduranceInput, FLIGHT_BATTERY, INSPECTION_BATTERY};
use crate::error::{Error, Result};
use crate::flight::{
    calibrated_arm, control_ratio, FlightSetup, Perturbation, SetpointEvent, DEFAULT_ARM_LENGTH_M, DEFAULT_C_Q,
    DEFAULT_C_T, DEFAULT_THRUST_CEILING,
};
use crate::layout::{make_configuration, Configuration};
use crate::mixer::MixerOptions;
use crate::perch::{LandingConfig, LandingGains, PerchPlant, DEFAULT_NOISE_SIGMA, DEFAULT_THROTTLE, TARGET_PRESSURE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Flight,
    /// The flight scenario run without and then with corrections.
    RollExperiment,
    Landing,
    Endurance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub dt_physics: f64,
    pub dt_control: f64,
    pub duration: f64,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { dt_physics: 0.001, dt_control: 0.004, duration: 5.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSection {
    pub configuration: Configuration,
    pub arm_length: f64,
    pub c_t: f64,
    pub c_q: f64,
    /// Per-rotor thrust ceiling in multiples of hover thrust.
    pub thrust_ceiling: f64,
    /// Electrical power fed to the deflection model, W.
    pub power: f64,
    pub body: VehicleParams,
}

impl Default for VehicleSection {
    fn default() -> Self {
        Self {
            configuration: Configuration::B,
            arm_length: DEFAULT_ARM_LENGTH_M,
            c_t: DEFAULT_C_T,
            c_q: DEFAULT_C_Q,
            thrust_ceiling: DEFAULT_THRUST_CEILING,
            power: DEFAULT_P0_W,
            body: VehicleParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmModelKind {
    /// Flight calibration: reference scale and hover-nulled offset.
    #[default]
    Calibrated,
    /// The `deflection` table as written.
    Raw,
    Rigid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmSection {
    pub model: ArmModelKind,
    pub rho_tpu: f64,
    /// Coefficients for `model = "raw"`; its `rho_tpu` is replaced by the section's.
    pub deflection: ArmDeflectionModel,
}

impl Default for ArmSection {
    fn default() -> Self {
        Self { model: ArmModelKind::Calibrated, rho_tpu: 6.9, deflection: ArmDeflectionModel::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub corrections: bool,
    /// Use the deflection-corrected torque rows in the mixer.
    pub corrected_torque_rows: bool,
    pub gains: FlightGains,
    pub degradation: DegradationState,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            corrections: true,
            corrected_torque_rows: false,
            gains: FlightGains::default(),
            degradation: DegradationState::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Setpoint(SetpointEvent),
    Perturbation(Perturbation),
    /// Operator trigger of the tendon closure.
    Landing {
        time: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandingSection {
    pub plant: PerchPlant,
    pub gains: LandingGains,
    pub target: f64,
    pub noise_sigma: f64,
    pub arm_count: usize,
    pub throttle: f64,
}

impl Default for LandingSection {
    fn default() -> Self {
        Self {
            plant: PerchPlant::default(),
            gains: LandingGains::default(),
            target: TARGET_PRESSURE,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            arm_count: 2,
            throttle: DEFAULT_THROTTLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnduranceSection {
    pub rho_values: Vec<f64>,
    /// Explicit per-infill inputs; when empty the shipped currents and
    /// perch-derived torques are used for `rho_values`.
    pub inputs: Vec<EnduranceInput>,
    pub flight_battery: BatterySpec,
    pub inspection_battery: BatterySpec,
}

impl Default for EnduranceSection {
    fn default() -> Self {
        Self {
            rho_values: vec![4.0, 6.0, 8.0, 10.0],
            inputs: Vec::new(),
            flight_battery: FLIGHT_BATTERY,
            inspection_battery: INSPECTION_BATTERY,
        }
    }
}

impl EnduranceSection {
    pub fn resolved_inputs(&self) -> Vec<EnduranceInput> {
        if self.inputs.is_empty() {
            self.rho_values.iter().map(|r| EnduranceInput::shipped(*r)).collect()
        } else {
            self.inputs.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub vehicle: VehicleSection,
    #[serde(default)]
    pub arm: ArmSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub landing: LandingSection,
    #[serde(default)]
    pub endurance: EnduranceSection,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        let s: Scenario = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        control_ratio(self.sim.dt_physics, self.sim.dt_control).map_err(cfg)?;
        if !(self.sim.duration > 0.0 && self.sim.duration.is_finite()) {
            return Err(Error::Config(format!("sim.duration must be > 0, got {}", self.sim.duration)));
        }
        match self.mode {
            Mode::Flight | Mode::RollExperiment => {
                self.flight_setup().map_err(cfg)?.validate().map_err(cfg)?;
            }
            Mode::Landing => {
                self.landing_config().validate().map_err(cfg)?;
            }
            Mode::Endurance => {
                self.endurance.flight_battery.validate().map_err(cfg)?;
                self.endurance.inspection_battery.validate().map_err(cfg)?;
            }
        }
        Ok(())
    }

    pub fn arm_model(&self) -> Result<ArmDeflectionModel> {
        let rho = self.arm.rho_tpu;
        if !(0.0..=100.0).contains(&rho) {
            return Err(Error::InputDomain(format!("arm.rho_tpu must be in [0, 100], got {rho}")));
        }
        let m = match self.arm.model {
            ArmModelKind::Calibrated => calibrated_arm(rho, &self.vehicle.body, self.vehicle.power)?,
            ArmModelKind::Raw => ArmDeflectionModel { rho_tpu: rho, ..self.arm.deflection },
            ArmModelKind::Rigid => ArmDeflectionModel { rho_tpu: rho, ..ArmDeflectionModel::rigid() },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn flight_setup(&self) -> Result<FlightSetup> {
        let v = &self.vehicle;
        let mut setup = FlightSetup::new(v.configuration, self.arm_model()?);
        setup.params = v.body;
        setup.layout = make_configuration(v.configuration, v.arm_length, v.c_t, v.c_q);
        setup.thrust_ceiling = v.thrust_ceiling;
        setup.power = v.power;
        setup.corrections = self.controller.corrections;
        setup.mixer_options = MixerOptions { corrected_torque: self.controller.corrected_torque_rows };
        setup.gains = self.controller.gains;
        setup.degradation = self.controller.degradation;
        setup.dt_physics = self.sim.dt_physics;
        setup.dt_control = self.sim.dt_control;
        setup.duration = self.sim.duration;
        for e in &self.events {
            match e {
                Event::Setpoint(s) => setup.setpoints.push(*s),
                Event::Perturbation(p) => setup.perturbations.push(*p),
                Event::Landing { .. } => {}
            }
        }
        Ok(setup)
    }

    pub fn landing_config(&self) -> LandingConfig {
        let l = &self.landing;
        let trigger_time = self
            .events
            .iter()
            .find_map(|e| match e {
                Event::Landing { time } => Some(*time),
                _ => None,
            })
            .unwrap_or(0.0);
        LandingConfig {
            plant: l.plant,
            gains: l.gains,
            target: l.target,
            noise_sigma: l.noise_sigma,
            arm_count: l.arm_count,
            throttle: l.throttle,
            dt: self.sim.dt_control,
            duration: self.sim.duration,
            trigger_time,
        }
    }
}

/// Sets `path` (dotted, e.g. `arm.rho_tpu`) in a parsed scenario to `raw`,
/// read as a TOML value (falls back to a string).
pub fn set_dotted(root: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    let value = parse_scalar(raw);
    let mut keys = path.split('.').peekable();
    let mut node = root;
    while let Some(key) = keys.next() {
        if key.is_empty() {
            return Err(Error::Config(format!("bad parameter path '{path}'")));
        }
        let table =
            node.as_table_mut().ok_or_else(|| Error::Config(format!("'{path}': '{key}' is not inside a table")))?;
        if keys.peek().is_none() {
            table.insert(key.to_string(), value);
            return Ok(());
        }
        node = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    Err(Error::Config(format!("bad parameter path '{path}'")))
}

fn parse_scalar(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::from_toml_str("name = \"x\"").unwrap();
        assert_eq!(s.mode, Mode::Flight);
        assert_eq!(s.sim, SimSettings::default());
        assert!(s.events.is_empty());
    }

    #[test]
    fn events_parse() {
        let s = Scenario::from_toml_str(
            r#"
name = "e"
[[events]]
type = "setpoint"
time = 0.5
phi_deg = 25.0
[[events]]
type = "perturbation"
start = 1.0
duration = 0.2
moment = [0.0, 0.0, 0.02]
[[events]]
type = "landing"
time = 0.3
"#,
        )
        .unwrap();
        assert_eq!(s.events.len(), 3);
        let setup = s.flight_setup().unwrap();
        assert_eq!(setup.setpoints.len(), 1);
        assert_eq!(setup.perturbations.len(), 1);
        assert_eq!(s.landing_config().trigger_time, 0.3);
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = Scenario::from_toml_str("name = \"x\"\n[sim]\ndt_phisics = 0.1\n").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("dt_phisics") && m.contains("line")), "{e}");
        let e = Scenario::from_toml_str("name = \"x\"\n[sim]\ndt_control = 0.0025\n").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("integer multiple")), "{e}");
        assert!(Scenario::from_toml_str("name = \"x\"\n[sim]\nduration = 0.0\n").is_err());
    }

    #[test]
    fn dotted_override() {
        let mut v: toml::Value = toml::from_str("name = \"x\"\n[arm]\nrho_tpu = 6.0\n").unwrap();
        set_dotted(&mut v, "arm.rho_tpu", "8").unwrap();
        set_dotted(&mut v, "vehicle.configuration", "A").unwrap();
        set_dotted(&mut v, "controller.corrections", "false").unwrap();
        let s = Scenario::from_value(v).unwrap();
        assert_eq!(s.arm.rho_tpu, 8.0);
        assert_eq!(s.vehicle.configuration, Configuration::A);
        assert!(!s.controller.corrections);
    }

    #[test]
    fn integer_values_coerce_to_float() {
        let s = Scenario::from_toml_str("name = \"x\"\n[arm]\nrho_tpu = 8\n").unwrap();
        assert_eq!(s.arm.rho_tpu, 8.0);
    }
}
