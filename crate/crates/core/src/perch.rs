//! Tendon-closure landing on a pipe: first-order servo/arm plant, noisy FSR
//! contact-pressure sensor and the pressure PID.
//!
//! Winding `w` (degrees of tendon travel) follows
//! `tau dw/dt = (u - c P) / k_arm - w` with `k_arm = stiffness_per_infill * rho`
//! and tendon reaction `c = reaction_per_infill * rho`. Contact starts at
//! `w_c = wrap_coeff / D` and the pressure is `P = contact_stiffness * max(0, w - w_c)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::PidGains;
use crate::error::{Error, Result};

/// Servo torque ceiling, kg cm.
pub const F_MAX_KGCM: f64 = 25.0;
pub const TARGET_PRESSURE: f64 = 950.0;
pub const DEFAULT_NOISE_SIGMA: f64 = 50.0;
pub const DEFAULT_THROTTLE: f64 = 0.30;
/// Half-width of the closure band relative to the target.
pub const CLOSURE_BAND: f64 = 0.05;
/// Fraction of the trace averaged for the steady torque.
pub const STEADY_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerchPlant {
    /// m
    pub pipe_diameter: f64,
    /// %
    pub rho_tpu: f64,
    /// N/m^2 per degree of winding past first contact.
    pub contact_stiffness: f64,
    /// s
    pub time_constant: f64,
    /// Normalisation of `s(t)`, N/m^2.
    pub p_max: f64,
    /// Closing stiffness per infill percent, kg cm per degree per %.
    pub stiffness_per_infill: f64,
    /// Winding at first contact times diameter, deg m.
    pub wrap_coeff: f64,
    /// Tendon torque per unit contact pressure per infill percent, kg cm m^2/N/%.
    pub reaction_per_infill: f64,
}

impl Default for PerchPlant {
    fn default() -> Self {
        Self {
            pipe_diameter: 0.16,
            rho_tpu: 6.9,
            contact_stiffness: 95.0,
            time_constant: 0.5,
            p_max: 1900.0,
            stiffness_per_infill: 0.008,
            wrap_coeff: 6.4,
            reaction_per_infill: 0.0004,
        }
    }
}

impl PerchPlant {
    pub fn new(pipe_diameter: f64, rho_tpu: f64) -> Self {
        Self { pipe_diameter, rho_tpu, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("pipe_diameter", self.pipe_diameter),
            ("rho_tpu", self.rho_tpu),
            ("contact_stiffness", self.contact_stiffness),
            ("time_constant", self.time_constant),
            ("p_max", self.p_max),
            ("stiffness_per_infill", self.stiffness_per_infill),
            ("wrap_coeff", self.wrap_coeff),
            ("reaction_per_infill", self.reaction_per_infill),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InputDomain(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Closing stiffness, kg cm per degree.
    pub fn arm_stiffness(&self) -> f64 {
        self.stiffness_per_infill * self.rho_tpu
    }

    /// Tendon torque per unit pressure, kg cm per N/m^2.
    pub fn reaction(&self) -> f64 {
        self.reaction_per_infill * self.rho_tpu
    }

    /// Winding at first contact, degrees.
    pub fn contact_angle(&self) -> f64 {
        self.wrap_coeff / self.pipe_diameter
    }

    pub fn pressure(&self, winding: f64) -> f64 {
        self.contact_stiffness * (winding - self.contact_angle()).max(0.0)
    }

    /// Servo torque holding `pressure` at steady state, kg cm.
    pub fn holding_torque(&self, pressure: f64) -> f64 {
        self.arm_stiffness() * (self.contact_angle() + pressure / self.contact_stiffness) + self.reaction() * pressure
    }

    /// `(equilibrium winding, decay rate)` of the free and the contact regime under torque `u`.
    fn regime(&self, u: f64, contact: bool) -> (f64, f64) {
        let k = self.arm_stiffness();
        if contact {
            let g = self.reaction() * self.contact_stiffness / k;
            ((u / k + g * self.contact_angle()) / (1.0 + g), (1.0 + g) / self.time_constant)
        } else {
            (u / k, 1.0 / self.time_constant)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerchCommand {
    /// kg cm, within `[0, F_MAX_KGCM]`.
    pub servo_torque: f64,
    pub throttle_fraction: f64,
}

impl PerchCommand {
    pub fn new(servo_torque: f64, throttle_fraction: f64) -> Self {
        Self { servo_torque: servo_torque.clamp(0.0, F_MAX_KGCM), throttle_fraction: throttle_fraction.clamp(0.0, 1.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsrReading {
    pub pressure: f64,
    pub noise_sigma: f64,
}

/// Arm winding state; the plant itself is stateless.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmClosure {
    pub winding: f64,
}

/// Advances the winding over `dt` with the command held and returns the true
/// contact pressure.
pub fn plant_step(plant: &PerchPlant, arm: &mut ArmClosure, command: &PerchCommand, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InputDomain(format!("dt must be > 0, got {dt}")));
    }
    // piecewise-exact: linear lag in each regime, switching at first contact
    let u = command.servo_torque;
    let wc = plant.contact_angle();
    let mut w = arm.winding;
    let mut left = dt;
    for _ in 0..2 {
        let contact = w > wc || (w == wc && plant.regime(u, true).0 > wc);
        let (eq, rate) = plant.regime(u, contact);
        let crosses = if contact { eq < wc } else { eq > wc };
        let t_cross = if crosses && (w - eq).abs() > 0.0 { ((w - eq) / (wc - eq)).ln() / rate } else { f64::INFINITY };
        if t_cross >= left {
            w = eq + (w - eq) * (-rate * left).exp();
            break;
        }
        w = wc;
        left -= t_cross;
    }
    arm.winding = w;
    Ok(plant.pressure(arm.winding))
}

/// Seeded FSR sensor; one stream serves every arm of a run.
#[derive(Debug, Clone)]
pub struct Fsr {
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    sigma: f64,
}

impl Fsr {
    pub fn new(noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InputDomain(format!("noise_sigma must be >= 0, got {noise_sigma}")));
        }
        let noise = if noise_sigma > 0.0 {
            Some(Normal::new(0.0, noise_sigma).map_err(|e| Error::InputDomain(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(seed), noise, sigma: noise_sigma })
    }

    pub fn sample(&mut self, true_pressure: f64) -> Result<FsrReading> {
        if !(true_pressure >= 0.0) {
            return Err(Error::InputDomain(format!("true pressure must be >= 0, got {true_pressure}")));
        }
        let n = self.noise.map_or(0.0, |d| d.sample(&mut self.rng));
        Ok(FsrReading { pressure: (true_pressure + n).max(0.0), noise_sigma: self.sigma })
    }
}

/// One-shot sample with its own seed.
pub fn fsr_sample(true_pressure: f64, noise_sigma: f64, rng_seed: u64) -> Result<FsrReading> {
    Fsr::new(noise_sigma, rng_seed)?.sample(true_pressure)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandingGains {
    pub pid: PidGains,
    /// Derivative filter time constant, s.
    pub derivative_filter: f64,
}

impl Default for LandingGains {
    fn default() -> Self {
        Self { pid: PidGains::new(0.001, 0.005, 0.0001, F_MAX_KGCM, F_MAX_KGCM), derivative_filter: 0.1 }
    }
}

impl LandingGains {
    pub fn validate(&self) -> Result<()> {
        self.pid.validate("landing")?;
        if !(self.derivative_filter >= 0.0) {
            return Err(Error::InputDomain("derivative_filter must be >= 0".into()));
        }
        Ok(())
    }
}

/// Pressure PID: derivative on the filtered measurement, output clamped to
/// `[0, F_max]`, integrator frozen while saturated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandingPid {
    pub gains: LandingGains,
    integral: f64,
    filtered: Option<f64>,
    filtered_rate: f64,
}

impl LandingPid {
    pub fn new(gains: LandingGains) -> Self {
        Self { gains, integral: 0.0, filtered: None, filtered_rate: 0.0 }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn step(&mut self, target: f64, reading: &FsrReading, dt: f64, throttle: f64) -> Result<PerchCommand> {
        if !(dt > 0.0) {
            return Err(Error::InputDomain(format!("dt must be > 0, got {dt}")));
        }
        let g = self.gains.pid;
        let meas = reading.pressure;
        let prev = self.filtered.unwrap_or(meas);
        let a = dt / (self.gains.derivative_filter + dt);
        let filtered = prev + a * (meas - prev);
        self.filtered_rate = (filtered - prev) / dt;
        self.filtered = Some(filtered);

        let error = target - meas;
        let upper = g.output_limit.min(F_MAX_KGCM);
        let candidate = (self.integral + g.ki * error * dt).clamp(-g.integrator_limit, g.integrator_limit);
        let unsat = g.kp * error + candidate - g.kd * self.filtered_rate;
        let out = unsat.clamp(0.0, upper);
        if out == unsat || (unsat > out) != (candidate > self.integral) {
            self.integral = candidate;
        }
        Ok(PerchCommand::new(out, throttle))
    }
}

/// Convenience single step from an explicit controller state.
pub fn landing_pid_step(pid: &mut LandingPid, target: f64, reading: &FsrReading, dt: f64) -> Result<PerchCommand> {
    pid.step(target, reading, dt, DEFAULT_THROTTLE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandingConfig {
    pub plant: PerchPlant,
    pub gains: LandingGains,
    pub target: f64,
    pub noise_sigma: f64,
    /// Arms running the loop, 2 or 4.
    pub arm_count: usize,
    pub throttle: f64,
    pub dt: f64,
    pub duration: f64,
    /// Time at which the operator triggers the closure, s.
    pub trigger_time: f64,
}

impl Default for LandingConfig {
    fn default() -> Self {
        Self {
            plant: PerchPlant::default(),
            gains: LandingGains::default(),
            target: TARGET_PRESSURE,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            arm_count: 2,
            throttle: DEFAULT_THROTTLE,
            dt: 0.01,
            duration: 15.0,
            trigger_time: 0.0,
        }
    }
}

impl LandingConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.gains.validate()?;
        if !(self.target > 0.0) {
            return Err(Error::InputDomain("target must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InputDomain("noise_sigma must be >= 0".into()));
        }
        if self.arm_count != 2 && self.arm_count != 4 {
            return Err(Error::InputDomain(format!("arm_count must be 2 or 4, got {}", self.arm_count)));
        }
        if !(0.0..=1.0).contains(&self.throttle) {
            return Err(Error::InputDomain("throttle must be in [0, 1]".into()));
        }
        if !(self.dt > 0.0 && self.duration > self.dt) {
            return Err(Error::InputDomain("need 0 < dt < duration".into()));
        }
        if !(self.trigger_time >= 0.0 && self.trigger_time < self.duration) {
            return Err(Error::InputDomain("trigger_time must be in [0, duration)".into()));
        }
        Ok(())
    }
}

/// One landing sample; arrays are per arm, unused arms stay zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandingSample {
    pub time: f64,
    /// True contact pressure, N/m^2.
    pub pressure: [f64; 4],
    pub measured: [f64; 4],
    /// Servo torque, kg cm.
    pub torque: [f64; 4],
}

impl LandingSample {
    /// `s = P / P_max`.
    pub fn normalized_pressure(&self, p_max: f64) -> [f64; 4] {
        self.pressure.map(|p| p / p_max)
    }

    /// `u = F / (0.5 F_max)`.
    pub fn normalized_torque(&self) -> [f64; 4] {
        self.torque.map(|f| f / (0.5 * F_MAX_KGCM))
    }
}

pub fn run_landing(cfg: &LandingConfig, seed: u64) -> Result<Vec<LandingSample>> {
    cfg.validate()?;
    let mut fsr = Fsr::new(cfg.noise_sigma, seed)?;
    let mut arms = [ArmClosure::default(); 4];
    let mut pids = [LandingPid::new(cfg.gains); 4];
    let n = (cfg.duration / cfg.dt).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut sample = LandingSample { time: 0.0, pressure: [0.0; 4], measured: [0.0; 4], torque: [0.0; 4] };
    out.push(sample);
    for k in 1..=n {
        let t_prev = (k - 1) as f64 * cfg.dt;
        for i in 0..cfg.arm_count {
            let reading = fsr.sample(sample.pressure[i])?;
            let cmd = if t_prev >= cfg.trigger_time {
                pids[i].step(cfg.target, &reading, cfg.dt, cfg.throttle)?
            } else {
                PerchCommand::new(0.0, cfg.throttle)
            };
            let p = plant_step(&cfg.plant, &mut arms[i], &cmd, cfg.dt)?;
            sample.pressure[i] = p;
            sample.measured[i] = reading.pressure;
            sample.torque[i] = cmd.servo_torque;
        }
        sample.time = k as f64 * cfg.dt;
        out.push(sample);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosureMetrics {
    /// Time from trigger until the pressure enters and stays in the band, s.
    pub closure_time: f64,
    /// Mean servo torque over the final part of the trace, kg cm.
    pub steady_torque: f64,
    /// Mean true pressure over the same window, N/m^2.
    pub steady_pressure: f64,
    pub peak_pressure: f64,
    pub peak_torque: f64,
}

/// Metrics of one arm's trace. A pure function of `(time, pressure, torque)`.
pub fn closure_metrics(
    time: &[f64],
    pressure: &[f64],
    torque: &[f64],
    target: f64,
    trigger_time: f64,
) -> Result<ClosureMetrics> {
    let n = time.len();
    if n < 2 || pressure.len() != n || torque.len() != n {
        return Err(Error::InputDomain("trace columns must have equal length >= 2".into()));
    }
    let band = CLOSURE_BAND * target;
    let last_out = pressure.iter().rposition(|p| (p - target).abs() > band);
    let entry = match last_out {
        None => 0,
        Some(i) if i + 1 < n => i + 1,
        Some(_) => {
            return Err(Error::NoConvergence(format!(
                "pressure never settles within {:.0}% of {target}",
                CLOSURE_BAND * 100.0
            )))
        }
    };
    let start = ((1.0 - STEADY_FRACTION) * n as f64).floor() as usize;
    if entry > start {
        return Err(Error::NoConvergence("pressure settles only in the final window".into()));
    }
    let tail = (n - start) as f64;
    Ok(ClosureMetrics {
        closure_time: time[entry] - trigger_time,
        steady_torque: torque[start..].iter().sum::<f64>() / tail,
        steady_pressure: pressure[start..].iter().sum::<f64>() / tail,
        peak_pressure: pressure.iter().cloned().fold(0.0, f64::max),
        peak_torque: torque.iter().cloned().fold(0.0, f64::max),
    })
}

/// Metrics per active arm.
pub fn landing_metrics(cfg: &LandingConfig, trace: &[LandingSample]) -> Result<Vec<ClosureMetrics>> {
    let time: Vec<f64> = trace.iter().map(|s| s.time).collect();
    (0..cfg.arm_count)
        .map(|i| {
            let p: Vec<f64> = trace.iter().map(|s| s.pressure[i]).collect();
            let u: Vec<f64> = trace.iter().map(|s| s.torque[i]).collect();
            closure_metrics(&time, &p, &u, cfg.target, cfg.trigger_time)
        })
        .collect()
}

/// Landing summary: slowest closure and mean holding torque over the arms.
pub fn landing_summary(metrics: &[ClosureMetrics]) -> Option<ClosureMetrics> {
    let n = metrics.len() as f64;
    if metrics.is_empty() {
        return None;
    }
    Some(ClosureMetrics {
        closure_time: metrics.iter().map(|m| m.closure_time).fold(0.0, f64::max),
        steady_torque: metrics.iter().map(|m| m.steady_torque).sum::<f64>() / n,
        steady_pressure: metrics.iter().map(|m| m.steady_pressure).sum::<f64>() / n,
        peak_pressure: metrics.iter().map(|m| m.peak_pressure).fold(0.0, f64::max),
        peak_torque: metrics.iter().map(|m| m.peak_torque).fold(0.0, f64::max),
    })
}

/// Calibration grid, ordered from the easiest closure (large pipe, soft arm)
/// to the hardest.
pub const GRID_DIAMETERS: [f64; 2] = [0.16, 0.11];
pub const GRID_RHOS: [f64; 2] = [6.0, 10.0];

/// `(D, rho)` of grid points 1..=4: 1 = (0.16, 6), 2 = (0.16, 10), 3 = (0.11, 6), 4 = (0.11, 10).
pub fn grid_point(index: usize) -> Option<(f64, f64)> {
    if !(1..=4).contains(&index) {
        return None;
    }
    let i = index - 1;
    Some((GRID_DIAMETERS[i / 2], GRID_RHOS[i % 2]))
}
