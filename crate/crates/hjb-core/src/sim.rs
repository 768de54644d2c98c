//! Fixed-step closed-loop integration and finite-horizon cost.

use crate::dynamics::{ControlLaw, DynamicsModel};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub utilities: Vec<f64>,
    /// Finite-horizon accumulated cost (trapezoidal rule over `utilities`).
    pub cost: f64,
    /// True if integration stopped early because the state left the
    /// 10×-inflated Ω box or the model's validity region.
    pub truncated: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

/// One RK4 step with the control held constant.
pub fn rk4_step(model: &dyn DynamicsModel, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    let k1 = model.f_plain(x, u)?;
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k2 = model.f_plain(&x2, u)?;
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k3 = model.f_plain(&x3, u)?;
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
    let k4 = model.f_plain(&x4, u)?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, a)| a + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrate the closed loop from `x0` for `horizon` seconds at step `dt`,
/// zero-order-holding the clamped policy output over each step.
pub fn rollout(
    model: &dyn DynamicsModel,
    policy: &dyn ControlLaw,
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    if dt <= 0.0 || horizon < dt {
        return Err(Error::Contract(format!("rollout needs horizon ≥ dt > 0, got {horizon}, {dt}")));
    }
    let steps = (horizon / dt).round() as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        utilities: Vec::with_capacity(steps + 1),
        cost: 0.0,
        truncated: false,
    };
    let mut x = x0.to_vec();
    for k in 0..=steps {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite state at t = {}", k as f64 * dt)));
        }
        if !model.in_inflated_omega(&x) {
            traj.truncated = true;
            break;
        }
        let mut u = policy.control(&x);
        model.clamp_control(&mut u);
        let l = model.utility_plain(&x, &u);
        traj.times.push(k as f64 * dt);
        traj.states.push(x.clone());
        traj.controls.push(u.clone());
        traj.utilities.push(l);
        if k == steps {
            break;
        }
        match rk4_step(model, &x, &u, dt) {
            Ok(next) => x = next,
            // Left the model's validity region: stop, keep what we have.
            Err(Error::Domain(_)) => {
                traj.truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    for w in traj.utilities.windows(2) {
        traj.cost += 0.5 * (w[0] + w[1]) * dt;
    }
    Ok(traj)
}
