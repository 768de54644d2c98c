//! Controlled-plant abstraction and the two benchmark systems.
//!
//! Plants expose their vector field and running cost both as plain `f64`
//! functions (for integration and metrics) and as tape expressions (so the
//! Hamiltonian is differentiable end to end, including ∂f/∂u for the
//! non-input-affine vehicle).

mod aircraft;
mod vehicle;

pub use aircraft::Aircraft;
pub use vehicle::{fiala_lateral_force, tire_loads_and_friction, TireState, Vehicle, VehicleParams};

use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::Result;

pub trait DynamicsModel: Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn name(&self) -> &'static str;
    /// Equilibrium state x_e where the running cost vanishes with u = 0.
    fn equilibrium(&self) -> &[f64];
    fn control_lo(&self) -> &[f64];
    fn control_hi(&self) -> &[f64];
    /// Per-state sampling box Ω.
    fn omega_bounds(&self) -> &[(f64, f64)];
    /// ẋ = f(x, u) as a tape expression.
    fn f_tape(&self, tape: &mut Tape, x: Var, u: Var) -> Result<Var>;
    /// Running cost l(x, u) as a tape expression (scalar).
    fn utility_tape(&self, tape: &mut Tape, x: Var, u: Var) -> Result<Var>;
    fn f_plain(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    fn utility_plain(&self, x: &[f64], u: &[f64]) -> f64;

    fn in_omega(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.omega_bounds())
            .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    /// Membership in the k×-inflated Ω box (k = 1 is Ω itself).
    fn in_scaled_omega(&self, x: &[f64], k: f64) -> bool {
        x.iter().zip(self.omega_bounds()).all(|(v, (lo, hi))| {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * k * (hi - lo);
            (*v - mid).abs() <= half
        })
    }

    /// Membership in the 10×-inflated Ω box used as a divergence cut-off.
    fn in_inflated_omega(&self, x: &[f64]) -> bool {
        self.in_scaled_omega(x, 10.0)
    }

    /// Margin test for roaming samplers: states here must support both the
    /// vector field and the Hamiltonian evaluation.
    fn state_valid(&self, _x: &[f64]) -> bool {
        true
    }

    fn clamp_control(&self, u: &mut [f64]) {
        for ((v, lo), hi) in u.iter_mut().zip(self.control_lo()).zip(self.control_hi()) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// State-feedback law used by rollouts and the persistent-rollout sampler.
pub trait ControlLaw: Sync {
    fn control(&self, x: &[f64]) -> Vec<f64>;
}

/// Zero input everywhere (the "do nothing" baseline).
pub struct ZeroControl(pub usize);

impl ControlLaw for ZeroControl {
    fn control(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

fn sample_in_box(rng: &mut Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds.iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect()
}

/// How training states are drawn each iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplerKind {
    /// Fresh i.i.d. uniform batch from Ω every call.
    Uniform,
    /// Current states of `count` persistent closed-loop rollouts, advanced by
    /// the trainer between iterations and re-seeded uniformly when they leave
    /// the reset region or hit the episode time cap. The reset region is the
    /// roam_factor×-inflated Ω box (factor 1 = Ω itself); factors above 1 let
    /// slots wander a collar outside Ω, so the batch carries evidence from
    /// the region a diverging policy escapes through.
    Rollout { dt: f64, time_cap: f64, roam_factor: f64 },
    /// Rollout slots for (1 − uniform_fraction) of the batch, fresh uniform
    /// draws for the rest: on-policy coverage plus full-box coverage.
    Mixed { dt: f64, time_cap: f64, uniform_fraction: f64, roam_factor: f64 },
}

struct RolloutSlot {
    x: Vec<f64>,
    t: f64,
}

pub struct StateSampler {
    kind: SamplerKind,
    count: usize,
    rng: Rng,
    slots: Vec<RolloutSlot>,
}

impl StateSampler {
    pub fn new(model: &dyn DynamicsModel, kind: SamplerKind, count: usize, seed: u64) -> Self {
        assert!(count > 0, "sampler count must be positive");
        let mut rng = Rng::substream(seed, 0x5A3);
        let slot_count = match kind {
            SamplerKind::Uniform => 0,
            SamplerKind::Rollout { .. } => count,
            SamplerKind::Mixed { uniform_fraction, .. } => {
                assert!((0.0..=1.0).contains(&uniform_fraction), "uniform fraction in [0, 1]");
                count - (count as f64 * uniform_fraction).round() as usize
            }
        };
        let slots = (0..slot_count)
            .map(|_| RolloutSlot { x: sample_in_box(&mut rng, model.omega_bounds()), t: 0.0 })
            .collect();
        StateSampler { kind, count, rng, slots }
    }

    /// The training batch for this iteration.
    pub fn sample(&mut self, model: &dyn DynamicsModel) -> Vec<Vec<f64>> {
        match self.kind {
            SamplerKind::Uniform => (0..self.count)
                .map(|_| sample_in_box(&mut self.rng, model.omega_bounds()))
                .collect(),
            SamplerKind::Rollout { .. } => self.slots.iter().map(|s| s.x.clone()).collect(),
            SamplerKind::Mixed { .. } => {
                let mut out: Vec<Vec<f64>> = self.slots.iter().map(|s| s.x.clone()).collect();
                while out.len() < self.count {
                    out.push(sample_in_box(&mut self.rng, model.omega_bounds()));
                }
                out
            }
        }
    }

    /// Episode age of each persistent slot (empty for the uniform sampler).
    pub fn slot_ages(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.t).collect()
    }

    /// Advance each persistent rollout one integrator step under `policy`
    /// (clamped to the actuator box). No-op for the uniform sampler.
    pub fn advance(&mut self, model: &dyn DynamicsModel, policy: &dyn ControlLaw) {
        let (dt, time_cap, roam_factor) = match self.kind {
            SamplerKind::Rollout { dt, time_cap, roam_factor }
            | SamplerKind::Mixed { dt, time_cap, roam_factor, .. } => (dt, time_cap, roam_factor),
            SamplerKind::Uniform => return,
        };
        for slot in &mut self.slots {
            let mut u = policy.control(&slot.x);
            model.clamp_control(&mut u);
            let stepped = crate::sim::rk4_step(model, &slot.x, &u, dt);
            let needs_reset = match stepped {
                Ok(next) => {
                    slot.x = next;
                    slot.t += dt;
                    let out = !model.in_scaled_omega(&slot.x, roam_factor)
                        || !model.state_valid(&slot.x);
                    slot.t >= time_cap || out
                }
                // Left the model's validity region (e.g. vehicle v_x floor).
                Err(_) => true,
            };
            if needs_reset {
                slot.x = sample_in_box(&mut self.rng, model.omega_bounds());
                slot.t = 0.0;
            }
        }
    }
}
