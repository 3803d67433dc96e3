//! Flexibility-aware mixer: the 6x4 map from squared rotor speeds to body
//! wrench, rebuilt every control step from the current arm deflections.

use nalgebra::{Matrix4, SMatrix, Vector4};

use crate::arm::ArmDeflectionModel;
use crate::error::{Error, Result};
use crate::layout::{RotorLayout, Spin};

/// Row order of [`MixerMatrix`].
pub const ROW_FX: usize = 0;
pub const ROW_FY: usize = 1;
pub const ROW_FZ: usize = 2;
pub const ROW_TAU_PHI: usize = 3;
pub const ROW_TAU_THETA: usize = 4;
pub const ROW_TAU_PSI: usize = 5;

/// Sign of each rotor's contribution to the lateral force row.
pub const LATERAL_SIGN: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

/// Per-arm deflection angles in degrees, positive with the arm up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TiltAngles {
    pub alpha: [f64; 4],
}

impl TiltAngles {
    pub fn new(alpha: [f64; 4]) -> Self {
        Self { alpha }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn radians(&self) -> [f64; 4] {
        self.alpha.map(f64::to_radians)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MixerOptions {
    /// Multiply the roll/pitch torque rows by `cos(alpha_i)`.
    pub corrected_torque: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixerMatrix {
    pub m: SMatrix<f64, 6, 4>,
}

/// Controlled part of the wrench: collective thrust and the three torques.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench4 {
    pub f_z: f64,
    pub tau_phi: f64,
    pub tau_theta: f64,
    pub tau_psi: f64,
}

impl Wrench4 {
    pub fn new(f_z: f64, tau_phi: f64, tau_theta: f64, tau_psi: f64) -> Self {
        Self { f_z, tau_phi, tau_theta, tau_psi }
    }

    fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.f_z, self.tau_phi, self.tau_theta, self.tau_psi)
    }
}

/// Full body wrench `[f_x, f_y, f_z, tau_phi, tau_theta, tau_psi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub f_x: f64,
    pub f_y: f64,
    pub f_z: f64,
    pub tau_phi: f64,
    pub tau_theta: f64,
    pub tau_psi: f64,
}

impl MixerMatrix {
    pub fn apply(&self, speeds_sq: &[f64; 4]) -> Wrench {
        let w = self.m * Vector4::from_column_slice(speeds_sq);
        Wrench { f_x: w[0], f_y: w[1], f_z: w[2], tau_phi: w[3], tau_theta: w[4], tau_psi: w[5] }
    }

    pub fn controlled(&self) -> Matrix4<f64> {
        self.m.fixed_rows::<4>(ROW_FZ).into_owned()
    }

    pub fn row(&self, r: usize) -> [f64; 4] {
        std::array::from_fn(|c| self.m[(r, c)])
    }
}

pub fn yaw_sign(spin: Spin) -> f64 {
    match spin {
        Spin::Cw => 1.0,
        Spin::Ccw => -1.0,
    }
}

pub fn build_mixer(layout: &RotorLayout, tilt: &TiltAngles) -> MixerMatrix {
    build_mixer_with(layout, tilt, MixerOptions::default())
}

pub fn build_mixer_with(layout: &RotorLayout, tilt: &TiltAngles, opts: MixerOptions) -> MixerMatrix {
    let ct = layout.c_t;
    let d = layout.arm_length;
    let mut m = SMatrix::<f64, 6, 4>::zeros();
    for (i, a) in tilt.radians().iter().enumerate() {
        let rotor = &layout.rotors[i];
        let torque_scale = if opts.corrected_torque { a.cos() } else { 1.0 };
        m[(ROW_FX, i)] = LATERAL_SIGN[i] * a.sin() * ct;
        m[(ROW_FZ, i)] = a.cos() * ct;
        m[(ROW_TAU_PHI, i)] = rotor.x.signum() * d * ct * torque_scale;
        m[(ROW_TAU_THETA, i)] = -rotor.y.signum() * d * ct * torque_scale;
        m[(ROW_TAU_PSI, i)] = yaw_sign(rotor.spin) * layout.c_q;
    }
    MixerMatrix { m }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub speeds_sq: [f64; 4],
    /// Solution before clamping to the speed limits.
    pub unclamped: [f64; 4],
    pub saturated: bool,
}

/// Solves the collective/torque rows for squared rotor speeds, then clamps
/// each to `[limits.0, limits.1]`. Saturation is reported, not redistributed.
pub fn allocate(mixer: &MixerMatrix, demand: &Wrench4, limits: (f64, f64)) -> Result<Allocation> {
    let v = demand.to_vector();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InputDomain("allocation demand must be finite".into()));
    }
    let (lo, hi) = limits;
    if !(lo >= 0.0 && lo < hi) {
        return Err(Error::InputDomain(format!("invalid speed limits ({lo}, {hi})")));
    }
    let a = mixer.controlled();
    let sv = a.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smax > 0.0) || smin / smax < 1e-12 {
        return Err(Error::Allocation("controlled 4x4 mixer block is singular".into()));
    }
    let x =
        a.full_piv_lu().solve(&v).ok_or_else(|| Error::Allocation("controlled 4x4 mixer block is singular".into()))?;
    let unclamped: [f64; 4] = std::array::from_fn(|i| x[i]);
    let speeds_sq = unclamped.map(|w| w.clamp(lo, hi));
    let saturated = speeds_sq != unclamped;
    Ok(Allocation { speeds_sq, unclamped, saturated })
}

/// Result of one quasi-static tilt update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TiltUpdate {
    pub tilt: TiltAngles,
    /// Arms whose model output left the valid region and were reset to 0.
    pub invalid: [bool; 4],
}

impl TiltUpdate {
    pub fn any_invalid(&self) -> bool {
        self.invalid.iter().any(|&f| f)
    }
}

/// New deflections from the previous step's rotor speeds and battery power.
pub fn update_tilt_quasistatic(
    layout: &RotorLayout,
    arm_model: &ArmDeflectionModel,
    prev_speeds_sq: &[f64; 4],
    prev_power: f64,
) -> TiltUpdate {
    update_tilt_per_arm(layout, &[*arm_model; 4], prev_speeds_sq, prev_power)
}

pub fn update_tilt_per_arm(
    layout: &RotorLayout,
    arm_models: &[ArmDeflectionModel; 4],
    prev_speeds_sq: &[f64; 4],
    prev_power: f64,
) -> TiltUpdate {
    let mut out = TiltUpdate::default();
    for i in 0..4 {
        let thrust = layout.c_t * prev_speeds_sq[i].max(0.0);
        let alpha = arm_models[i].alpha(thrust, prev_power);
        if arm_models[i].is_valid_angle(alpha) {
            out.tilt.alpha[i] = alpha;
        } else {
            // non-linear region, invalid model
            out.tilt.alpha[i] = 0.0;
            out.invalid[i] = true;
        }
    }
    out
}

/// Small-angle lateral and vertical forces, `(f_x, f_z)` in newtons.
pub fn small_angle_forces(tilt: &TiltAngles, thrusts: &[f64; 4]) -> (f64, f64) {
    let a = tilt.radians();
    let f_x = (0..4).map(|i| LATERAL_SIGN[i] * a[i] * thrusts[i]).sum();
    let f_z = thrusts.iter().sum();
    (f_x, f_z)
}

/// Same forces without the small-angle approximation.
pub fn exact_forces(tilt: &TiltAngles, thrusts: &[f64; 4]) -> (f64, f64) {
    let a = tilt.radians();
    let f_x = (0..4).map(|i| LATERAL_SIGN[i] * a[i].sin() * thrusts[i]).sum();
    let f_z = (0..4).map(|i| a[i].cos() * thrusts[i]).sum();
    (f_x, f_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{make_configuration, Configuration};
    use proptest::prelude::*;

    const C_T: f64 = 1.2e-5;
    const C_Q: f64 = 1.92e-7;

    fn layout() -> RotorLayout {
        make_configuration(Configuration::B, 0.2, C_T, C_Q)
    }

    /// Textbook rigid H-quad mixer written out by hand.
    fn rigid_mixer(ct: f64, cq: f64, d: f64, yaw: [f64; 4]) -> SMatrix<f64, 6, 4> {
        SMatrix::<f64, 6, 4>::from_row_slice(&[
            0.0,
            0.0,
            0.0,
            0.0, //
            0.0,
            0.0,
            0.0,
            0.0, //
            ct,
            ct,
            ct,
            ct, //
            d * ct,
            d * ct,
            -d * ct,
            -d * ct, //
            d * ct,
            -d * ct,
            d * ct,
            -d * ct, //
            yaw[0] * cq,
            yaw[1] * cq,
            yaw[2] * cq,
            yaw[3] * cq,
        ])
    }

    #[test]
    fn rigid_reduction_is_exact() {
        let b = build_mixer(&layout(), &TiltAngles::zero());
        assert_eq!(b.m, rigid_mixer(C_T, C_Q, 0.2, [-1.0, 1.0, 1.0, -1.0]));
        let a = build_mixer(&make_configuration(Configuration::A, 0.2, C_T, C_Q), &TiltAngles::zero());
        assert_eq!(a.m, rigid_mixer(C_T, C_Q, 0.2, [1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn tilted_lateral_row() {
        let mut l = layout();
        l.c_t = 1.0;
        let m = build_mixer(&l, &TiltAngles::new([10.0, 10.0, 0.0, 0.0]));
        let row = m.row(ROW_FX);
        let s10 = 0.17364817766693033;
        assert!((row[0] + s10).abs() < 1e-15 && (row[1] + s10).abs() < 1e-15);
        assert_eq!(&row[2..], &[0.0, 0.0]);
        assert_eq!(m.row(ROW_FY), [0.0; 4]);
    }

    #[test]
    fn equal_tilts_cancel_lateral_force() {
        let m = build_mixer(&layout(), &TiltAngles::new([12.0; 4]));
        let w = m.apply(&[3.0e5; 4]);
        assert!(w.f_x.abs() < 1e-12);
    }

    #[test]
    fn hover_allocation_is_symmetric() {
        let m = build_mixer(&layout(), &TiltAngles::zero());
        let wh2 = 3.7e5;
        let alloc = allocate(&m, &Wrench4::new(4.0 * C_T * wh2, 0.0, 0.0, 0.0), (0.0, 1e9)).unwrap();
        for w in alloc.speeds_sq {
            assert!((w - wh2).abs() < 1e-6 * wh2);
        }
        assert!(!alloc.saturated);
    }

    #[test]
    fn roll_torque_sign_structure() {
        let m = build_mixer(&layout(), &TiltAngles::zero());
        let demand = Wrench4::new(4.0 * C_T * 3.7e5, 0.3, 0.0, 0.0);
        let w = allocate(&m, &demand, (0.0, 1e9)).unwrap().speeds_sq;
        assert!((w[0] - w[1]).abs() < 1e-6 && (w[2] - w[3]).abs() < 1e-6);
        assert!(w[0] > w[2]);
        let back = m.apply(&w);
        assert!((back.tau_phi - 0.3).abs() < 1e-9);
    }

    #[test]
    fn saturation_is_reported() {
        let m = build_mixer(&layout(), &TiltAngles::zero());
        let demand = Wrench4::new(4.0 * C_T * 3.7e5, 5.0, 0.0, 0.0);
        let a = allocate(&m, &demand, (0.0, 6.0e5)).unwrap();
        assert!(a.saturated);
        assert!(a.speeds_sq.iter().all(|&w| (0.0..=6.0e5).contains(&w)));
    }

    #[test]
    fn degenerate_layout_is_singular() {
        let mut l = layout();
        for r in l.rotors.iter_mut() {
            r.spin = Spin::Cw;
        }
        let m = build_mixer(&l, &TiltAngles::zero());
        assert!(matches!(allocate(&m, &Wrench4::new(1.0, 0.0, 0.0, 0.0), (0.0, 1e9)), Err(Error::Allocation(_))));
    }

    #[test]
    fn bad_limits_and_demands() {
        let m = build_mixer(&layout(), &TiltAngles::zero());
        assert!(allocate(&m, &Wrench4::new(f64::NAN, 0.0, 0.0, 0.0), (0.0, 1.0)).is_err());
        assert!(allocate(&m, &Wrench4::default(), (1.0, 1.0)).is_err());
    }

    #[test]
    fn corrected_torque_rows() {
        let tilt = TiltAngles::new([20.0, 10.0, -5.0, 0.0]);
        let plain = build_mixer(&layout(), &tilt);
        let corr = build_mixer_with(&layout(), &tilt, MixerOptions { corrected_torque: true });
        for (i, a) in tilt.radians().iter().enumerate() {
            assert!((corr.m[(ROW_TAU_PHI, i)] - plain.m[(ROW_TAU_PHI, i)] * a.cos()).abs() < 1e-18);
            assert_eq!(corr.m[(ROW_TAU_PSI, i)], plain.m[(ROW_TAU_PSI, i)]);
        }
    }

    #[test]
    fn tilt_update_examples() {
        let l = layout();
        let m8 = ArmDeflectionModel::with_rho(8.0);
        let zero = update_tilt_quasistatic(&l, &m8, &[0.0; 4], m8.p0);
        assert_eq!(zero.tilt.alpha, [m8.alpha0; 4]);
        let w2 = 3.0 / C_T;
        let u = update_tilt_quasistatic(&l, &m8, &[w2; 4], m8.p0);
        for a in u.tilt.alpha {
            assert!((a - 2.1525).abs() < 1e-9);
        }
        assert!(!u.any_invalid());
        // force a raw 42 deg deflection
        let scale = 42.0 / m8.thrust_polynomial(3.0);
        let big = ArmDeflectionModel { scale, ..m8 };
        let u = update_tilt_quasistatic(&l, &big, &[w2; 4], m8.p0);
        assert_eq!(u.tilt.alpha, [0.0; 4]);
        assert_eq!(u.invalid, [true; 4]);
        // idempotent under constant speeds
        let again = update_tilt_quasistatic(&l, &big, &[w2; 4], m8.p0);
        assert_eq!(u, again);
    }

    #[test]
    fn small_angle_examples() {
        let (fx, fz) = small_angle_forces(&TiltAngles::zero(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((fx, fz), (0.0, 10.0));
        let deg = 0.1f64.to_degrees();
        let (fx, _) = small_angle_forces(&TiltAngles::new([deg, deg, 0.0, 0.0]), &[1.0; 4]);
        assert!((fx + 0.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn allocation_round_trip(
            alpha in proptest::array::uniform4(-40.0f64..40.0),
            tau in proptest::array::uniform3(-0.3f64..0.3),
            yaw in -0.02f64..0.02,
            fz in 10.0f64..25.0,
        ) {
            let m = build_mixer(&layout(), &TiltAngles::new(alpha));
            let demand = Wrench4::new(fz, tau[0], tau[1], yaw);
            let a = allocate(&m, &demand, (0.0, f64::INFINITY)).unwrap();
            let w = m.apply(&a.unclamped);
            prop_assert!((w.f_z - fz).abs() < 1e-9);
            prop_assert!((w.tau_phi - tau[0]).abs() < 1e-9);
            prop_assert!((w.tau_theta - tau[1]).abs() < 1e-9);
            prop_assert!((w.tau_psi - yaw).abs() < 1e-9);
            prop_assert_eq!(w.f_y, 0.0);
        }

        #[test]
        fn small_angle_error_bound(
            alpha in proptest::array::uniform4(-10.0f64..10.0),
            t in proptest::array::uniform4(0.5f64..8.0),
        ) {
            let tilt = TiltAngles::new(alpha);
            let (fs, _) = small_angle_forces(&tilt, &t);
            let (fe, _) = exact_forces(&tilt, &t);
            let total: f64 = t.iter().sum();
            prop_assert!((fs - fe).abs() / total <= 0.005);
        }
    }
}
