//! Nonlinear, non-input-affine vehicle tracking plant.
//!
//! Single-track (bicycle) lateral dynamics in trajectory-relative
//! coordinates: the state carries the lateral offset `y` and heading error
//! `φ` directly, so tracking the desired path at the desired speed is the
//! equilibrium (0, 0, v_ref, 0, 0). Lateral tire forces follow the Fiala
//! saturating-cubic model clipped by the friction circle; longitudinal force
//! allocation switches between drive (rear only) and brake (even split),
//! which is what makes the system non-input-affine.

use super::DynamicsModel;
use crate::tape::{Tape, Var};
use crate::{Error, Result};

const G: f64 = 9.81;
/// Longitudinal speed below which the slip-angle geometry degenerates.
const V_X_MIN: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
pub struct VehicleParams {
    /// Front cornering stiffness [N/rad].
    pub c_f: f64,
    /// Rear cornering stiffness [N/rad].
    pub c_r: f64,
    /// CG to front axle [m].
    pub a: f64,
    /// CG to rear axle [m].
    pub b: f64,
    /// Mass [kg].
    pub mass: f64,
    /// Yaw inertia [kg·m²].
    pub i_z: f64,
    /// Tire-road friction coefficient.
    pub mu: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            c_f: 88_000.0,
            c_r: 94_000.0,
            a: 1.14,
            b: 1.40,
            mass: 1500.0,
            i_z: 2420.0,
            mu: 1.0,
        }
    }
}

/// Static loads, longitudinal force split, and effective lateral friction.
#[derive(Clone, Copy, Debug)]
pub struct TireState {
    pub f_zf: f64,
    pub f_zr: f64,
    pub f_xf: f64,
    pub f_xr: f64,
    pub mu_f: f64,
    pub mu_r: f64,
}

/// Loads and lateral-friction budget for a commanded acceleration.
pub fn tire_loads_and_friction(params: &VehicleParams, a_x: f64) -> Result<TireState> {
    if a_x.abs() > 3.0 + 1e-9 {
        return Err(Error::Domain(format!("longitudinal acceleration {a_x} outside ±3 m/s²")));
    }
    let f_zf = params.b * params.mass * G / (params.a + params.b);
    let f_zr = params.a * params.mass * G / (params.a + params.b);
    // Drive torque goes to the rear axle; braking splits evenly.
    let (f_xf, f_xr) = if a_x >= 0.0 {
        (0.0, params.mass * a_x)
    } else {
        (params.mass * a_x / 2.0, params.mass * a_x / 2.0)
    };
    let circle = |f_z: f64, f_x: f64| -> Result<f64> {
        let budget = (params.mu * f_z).powi(2) - f_x * f_x;
        if budget <= 0.0 {
            return Err(Error::Domain(format!(
                "friction circle violated: |F_x| = {} exceeds μF_z = {}",
                f_x.abs(),
                params.mu * f_z
            )));
        }
        Ok(budget.sqrt() / f_z)
    };
    Ok(TireState {
        f_zf,
        f_zr,
        f_xf,
        f_xr,
        mu_f: circle(f_zf, f_xf)?,
        mu_r: circle(f_zr, f_xr)?,
    })
}

/// Fiala lateral force: saturating cubic in tan(α), capped at μ_t·F_z,
/// opposing the slip angle. Total on its domain; odd in α.
pub fn fiala_lateral_force(alpha: f64, c: f64, mu_t: f64, f_z: f64) -> f64 {
    let z = mu_t * f_z;
    let t = alpha.tan();
    let inner = c * t * ((c * c * t * t) / (27.0 * z * z) - (c * t.abs()) / (3.0 * z) + 1.0);
    let sgn = if alpha > 0.0 {
        1.0
    } else if alpha < 0.0 {
        -1.0
    } else {
        0.0
    };
    -sgn * inner.abs().min(z.abs())
}

/// Same force as a tape expression; `z` is the (positive) lateral friction
/// budget μ†·F_z† which may itself depend on the control.
fn fiala_tape(tape: &mut Tape, alpha: Var, c: f64, z: Var) -> Result<Var> {
    let s = tape.sin(alpha);
    let co = tape.cos(alpha);
    let t = tape.div(s, co)?;
    let t2 = tape.square(t);
    let z2 = tape.square(z);
    let num1 = tape.affine(t2, c * c / 27.0, 0.0);
    let term1 = tape.div(num1, z2)?;
    let at = tape.abs(t);
    let num2 = tape.affine(at, c / 3.0, 0.0);
    let term2 = tape.div(num2, z)?;
    let diff = tape.sub(term1, term2);
    let poly = tape.affine(diff, 1.0, 1.0);
    let ct = tape.affine(t, c, 0.0);
    let inner = tape.mul(ct, poly);
    let ai = tape.abs(inner);
    let capped = tape.min2(ai, z);
    let sg = tape.sign(alpha);
    let signed = tape.mul(sg, capped);
    Ok(tape.neg(signed))
}

pub struct Vehicle {
    params: VehicleParams,
    omega: Vec<(f64, f64)>,
    x_e: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Vehicle {
    pub fn new(params: VehicleParams) -> Self {
        Vehicle::with_omega(
            params,
            vec![(-2.0, 2.0), (-1.0, 1.0), (8.0, 16.0), (-0.5, 0.5), (-3.0, 3.0)],
        )
    }

    pub fn with_omega(params: VehicleParams, omega: Vec<(f64, f64)>) -> Self {
        assert_eq!(omega.len(), 5);
        Vehicle {
            params,
            omega,
            x_e: vec![0.0, 0.0, 12.0, 0.0, 0.0],
            lo: vec![-0.35, -3.0],
            hi: vec![0.35, 3.0],
        }
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    fn guard(&self, x: &[f64], u: &[f64]) -> Result<TireState> {
        if x[2] <= V_X_MIN {
            return Err(Error::Domain(format!(
                "longitudinal speed {} at or below the {V_X_MIN} m/s floor",
                x[2]
            )));
        }
        tire_loads_and_friction(&self.params, u[1])
    }
}

impl DynamicsModel for Vehicle {
    fn n(&self) -> usize {
        5
    }

    fn m(&self) -> usize {
        2
    }

    fn name(&self) -> &'static str {
        "vehicle"
    }

    fn equilibrium(&self) -> &[f64] {
        &self.x_e
    }

    fn control_lo(&self) -> &[f64] {
        &self.lo
    }

    fn control_hi(&self) -> &[f64] {
        &self.hi
    }

    fn omega_bounds(&self) -> &[(f64, f64)] {
        &self.omega
    }

    fn state_valid(&self, x: &[f64]) -> bool {
        x[2] > V_X_MIN + 0.4
    }

    fn f_tape(&self, tape: &mut Tape, x: Var, u: Var) -> Result<Var> {
        let p = &self.params;
        // Domain checks run on the numeric values up front.
        self.guard(tape.value(x), tape.value(u))?;

        let vy = tape.index(x, 0);
        let r = tape.index(x, 1);
        let vx = tape.index(x, 2);
        let phi = tape.index(x, 3);
        let delta = tape.index(u, 0);
        let ax = tape.index(u, 1);

        // Slip angles from axle kinematics.
        let ar_front = tape.affine(r, p.a, 0.0);
        let num_f = tape.add(vy, ar_front);
        let ratio_f = tape.div(num_f, vx)?;
        let at_f = tape.arctan(ratio_f);
        let alpha_f = tape.sub(at_f, delta);
        let br_rear = tape.affine(r, -p.b, 0.0);
        let num_r = tape.add(vy, br_rear);
        let ratio_r = tape.div(num_r, vx)?;
        let alpha_r = tape.arctan(ratio_r);

        // Longitudinal split: F_xf = (m/2)·min(a_x, 0), F_xr = m·a_x - F_xf.
        let zero = tape.constant_scalar(0.0);
        let ax_neg = tape.min2(ax, zero);
        let f_xf = tape.affine(ax_neg, p.mass / 2.0, 0.0);
        let m_ax = tape.affine(ax, p.mass, 0.0);
        let f_xr = tape.sub(m_ax, f_xf);

        // Lateral friction budget z† = √((μF_z†)² − F_x†²).
        let f_zf = p.b * p.mass * G / (p.a + p.b);
        let f_zr = p.a * p.mass * G / (p.a + p.b);
        let fxf2 = tape.square(f_xf);
        let cap_f = tape.affine(fxf2, -1.0, (p.mu * f_zf).powi(2));
        let z_f = tape.sqrt(cap_f);
        let fxr2 = tape.square(f_xr);
        let cap_r = tape.affine(fxr2, -1.0, (p.mu * f_zr).powi(2));
        let z_r = tape.sqrt(cap_r);

        let f_yf = fiala_tape(tape, alpha_f, p.c_f, z_f)?;
        let f_yr = fiala_tape(tape, alpha_r, p.c_r, z_r)?;

        let cos_d = tape.cos(delta);
        let sin_d = tape.sin(delta);
        let fyf_cos = tape.mul(f_yf, cos_d);

        // v̇_y = (F_yf cos δ + F_yr)/m − v_x r
        let lat_sum = tape.add(fyf_cos, f_yr);
        let lat_acc = tape.affine(lat_sum, 1.0 / p.mass, 0.0);
        let vx_r = tape.mul(vx, r);
        let vy_dot = tape.sub(lat_acc, vx_r);

        // ṙ = (a F_yf cos δ − b F_yr)/I_z
        let front_moment = tape.affine(fyf_cos, p.a, 0.0);
        let rear_moment = tape.affine(f_yr, p.b, 0.0);
        let moment = tape.sub(front_moment, rear_moment);
        let r_dot = tape.affine(moment, 1.0 / p.i_z, 0.0);

        // v̇_x = a_x + v_y r − F_yf sin δ / m
        let vy_r = tape.mul(vy, r);
        let long_sum = tape.add(ax, vy_r);
        let fyf_sin = tape.mul(f_yf, sin_d);
        let drag = tape.affine(fyf_sin, 1.0 / p.mass, 0.0);
        let vx_dot = tape.sub(long_sum, drag);

        // ẏ = v_x sin φ + v_y cos φ
        let sin_phi = tape.sin(phi);
        let cos_phi = tape.cos(phi);
        let vx_sin = tape.mul(vx, sin_phi);
        let vy_cos = tape.mul(vy, cos_phi);
        let y_dot = tape.add(vx_sin, vy_cos);

        Ok(tape.pack(&[vy_dot, r_dot, vx_dot, r, y_dot]))
    }

    fn utility_tape(&self, tape: &mut Tape, x: Var, u: Var) -> Result<Var> {
        let vx = tape.index(x, 2);
        let y = tape.index(x, 4);
        let delta = tape.index(u, 0);
        let ax = tape.index(u, 1);
        let dvx = tape.affine(vx, 1.0, -12.0);
        let dvx2 = tape.square(dvx);
        let speed_term = tape.affine(dvx2, 0.4, 0.0);
        let y2 = tape.square(y);
        let offset_term = tape.affine(y2, 80.0, 0.0);
        let d2 = tape.square(delta);
        let steer_term = tape.affine(d2, 280.0, 0.0);
        let ax2 = tape.square(ax);
        let accel_term = tape.affine(ax2, 0.3, 0.0);
        let s1 = tape.add(speed_term, offset_term);
        let s2 = tape.add(steer_term, accel_term);
        Ok(tape.add(s1, s2))
    }

    fn f_plain(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let p = &self.params;
        let tires = self.guard(x, u)?;
        let (vy, r, vx, phi) = (x[0], x[1], x[2], x[3]);
        let (delta, _ax) = (u[0], u[1]);

        let alpha_f = ((vy + p.a * r) / vx).atan() - delta;
        let alpha_r = ((vy - p.b * r) / vx).atan();
        let f_yf = fiala_lateral_force(alpha_f, p.c_f, tires.mu_f, tires.f_zf);
        let f_yr = fiala_lateral_force(alpha_r, p.c_r, tires.mu_r, tires.f_zr);

        let cos_d = delta.cos();
        let sin_d = delta.sin();
        Ok(vec![
            (f_yf * cos_d + f_yr) / p.mass - vx * r,
            (p.a * f_yf * cos_d - p.b * f_yr) / p.i_z,
            u[1] + vy * r - f_yf * sin_d / p.mass,
            r,
            vx * phi.sin() + vy * phi.cos(),
        ])
    }

    fn utility_plain(&self, x: &[f64], u: &[f64]) -> f64 {
        0.4 * (x[2] - 12.0).powi(2) + 80.0 * x[4] * x[4] + 280.0 * u[0] * u[0] + 0.3 * u[1] * u[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn model() -> Vehicle {
        Vehicle::new(VehicleParams::default())
    }

    #[test]
    fn tracking_equilibrium_is_stationary() {
        let m = model();
        let xdot = m.f_plain(&[0.0, 0.0, 12.0, 0.0, 0.0], &[0.0, 0.0]).unwrap();
        for (i, v) in xdot.iter().enumerate() {
            assert!(v.abs() < 1e-9, "component {i} = {v}");
        }
        assert_eq!(m.utility_plain(m.equilibrium(), &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn fiala_zero_slip_zero_force() {
        assert_eq!(fiala_lateral_force(0.0, 88_000.0, 1.0, 8000.0), 0.0);
    }

    #[test]
    fn fiala_golden_value() {
        // Frozen from a direct evaluation of the cubic branch.
        let f_z = (1.40 / 2.54) * 1500.0 * G;
        let got = fiala_lateral_force(0.05, 88_000.0, 1.0, f_z);
        let expect = -3654.759484507887;
        assert!((got - expect).abs() < 1e-9 * expect.abs(), "got {got}");

        // Independent in-test re-evaluation of the same branch.
        let t = 0.05f64.tan();
        let z = f_z;
        let oracle = -(88_000.0 * t * ((88_000.0f64.powi(2) * t * t) / (27.0 * z * z)
            - 88_000.0 * t.abs() / (3.0 * z)
            + 1.0));
        assert!((got - oracle).abs() < 1e-12 * oracle.abs());
    }

    #[test]
    fn fiala_saturates_at_friction_limit() {
        let f_z = 8000.0;
        for alpha in [0.4, 0.8, 1.2] {
            let f = fiala_lateral_force(alpha, 88_000.0, 1.0, f_z);
            assert!((f + f_z).abs() < 1e-12, "alpha {alpha}: {f}");
        }
    }

    #[test]
    fn fiala_is_odd_and_bounded() {
        let mut rng = Rng::new(99);
        for _ in 0..10_000 {
            let alpha = rng.uniform(-1.4, 1.4);
            let c = rng.uniform(10_000.0, 120_000.0);
            let mu_t = rng.uniform(0.1, 1.2);
            let f_z = rng.uniform(2000.0, 10_000.0);
            let f = fiala_lateral_force(alpha, c, mu_t, f_z);
            let f_neg = fiala_lateral_force(-alpha, c, mu_t, f_z);
            assert!((f + f_neg).abs() < 1e-9, "odd symmetry");
            assert!(f.abs() <= mu_t * f_z + 1e-12, "bound");
        }
    }

    #[test]
    fn tire_loads_zero_accel() {
        let t = tire_loads_and_friction(&VehicleParams::default(), 0.0).unwrap();
        assert_eq!(t.f_xf, 0.0);
        assert_eq!(t.f_xr, 0.0);
        assert!((t.mu_f - 1.0).abs() < 1e-12);
        assert!((t.mu_r - 1.0).abs() < 1e-12);
        assert!((t.f_zf - 1.40 / 2.54 * 1500.0 * G).abs() < 1e-9);
        assert!((t.f_zr - 1.14 / 2.54 * 1500.0 * G).abs() < 1e-9);
    }

    #[test]
    fn tire_loads_drive_and_brake_split() {
        let p = VehicleParams::default();
        let drive = tire_loads_and_friction(&p, 3.0).unwrap();
        assert_eq!(drive.f_xf, 0.0);
        assert_eq!(drive.f_xr, 4500.0);
        let brake = tire_loads_and_friction(&p, -2.0).unwrap();
        assert_eq!(brake.f_xf, -1500.0);
        assert_eq!(brake.f_xr, -1500.0);
    }

    #[test]
    fn friction_circle_violation_is_domain_error() {
        let p = VehicleParams { mu: 0.1, ..VehicleParams::default() };
        assert!(matches!(tire_loads_and_friction(&p, 3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn slow_speed_is_domain_error() {
        let m = model();
        assert!(matches!(
            m.f_plain(&[0.0, 0.0, 0.05, 0.0, 0.0], &[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn utility_spot_value() {
        let m = model();
        let l = m.utility_plain(&[0.0, 0.0, 13.0, 0.0, 0.5], &[0.1, 1.0]);
        assert!((l - 23.5).abs() < 1e-12);
    }

    #[test]
    fn utility_positive_away_from_equilibrium() {
        let m = model();
        let mut rng = Rng::new(123);
        for _ in 0..10_000 {
            let x: Vec<f64> =
                m.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect();
            let u = [rng.uniform(-0.35, 0.35), rng.uniform(-3.0, 3.0)];
            let l = m.utility_plain(&x, &u);
            assert!(l > 0.0, "x {x:?} u {u:?}");
        }
    }

    #[test]
    fn taped_f_matches_plain() {
        let m = model();
        let mut rng = Rng::new(2024);
        for _ in 0..200 {
            let x: Vec<f64> =
                m.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect();
            let u = [rng.uniform(-0.35, 0.35), rng.uniform(-3.0, 3.0)];
            let plain = m.f_plain(&x, &u).unwrap();
            let mut t = Tape::new();
            let xv = t.leaf(&x);
            let uv = t.leaf(&u);
            let f = m.f_tape(&mut t, xv, uv).unwrap();
            for (a, b) in t.value(f).iter().zip(&plain) {
                assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "taped {a} plain {b}");
            }
        }
    }

    #[test]
    fn df_du_matches_finite_differences() {
        let m = model();
        let mut rng = Rng::new(31);
        for _ in 0..40 {
            let x: Vec<f64> =
                m.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect();
            // Stay away from the a_x = 0 drive/brake kink.
            let mut u = [rng.uniform(-0.3, 0.3), rng.uniform(0.3, 2.5)];
            if rng.next_f64() < 0.5 {
                u[1] = -u[1];
            }
            let mut t = Tape::new();
            let xv = t.leaf(&x);
            let uv = t.leaf(&u);
            let f = m.f_tape(&mut t, xv, uv).unwrap();
            for i in 0..5 {
                let fi = t.index(f, i);
                let g = t.grad(fi, &[uv], false).unwrap();
                let g = t.value(g[0]).to_vec();
                let h = 1e-6;
                for j in 0..2 {
                    let mut up = u;
                    up[j] += h;
                    let mut um = u;
                    um[j] -= h;
                    let fd = (m.f_plain(&x, &up).unwrap()[i] - m.f_plain(&x, &um).unwrap()[i])
                        / (2.0 * h);
                    let rel = (g[j] - fd).abs() / fd.abs().max(1.0);
                    assert!(rel < 1e-4, "f[{i}]/u[{j}]: ad={} fd={fd}", g[j]);
                }
            }
        }
    }
}
