//! wasm-bindgen surface for the browser demo.
//!
//! Three interactive operations:
//! * `riccati_report` — the analytic LQR ground truth for the aircraft plant,
//! * `DemoTrainer` — live actor-critic training, stepped in chunks from
//!   `requestAnimationFrame`,
//! * `simulate` — closed-loop rollouts of the current (or optimal) policy.
//!
//! Data crosses the JS boundary as flat `Float64Array`s; plotting stays on
//! the JavaScript side.

use hjb_core::dynamics::{Aircraft, DynamicsModel, SamplerKind};
use hjb_core::hjb::{HamiltonianEval, LinearPolicy, PolicyControl, QuadraticValue};
use hjb_core::mlp::{MlpSpec, OutputActivation};
use hjb_core::riccati::solve_care;
use hjb_core::sim;
use hjb_core::train::{Algorithm, ModelId, Phase, TrainConfig, Trainer};
use wasm_bindgen::prelude::*;

fn err_js(e: hjb_core::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Text report of the stabilizing Riccati solution for the aircraft.
#[wasm_bindgen]
pub fn riccati_report() -> Result<String, JsValue> {
    let sol = solve_care(&Aircraft::lqr_problem()).map_err(err_js)?;
    let mut out = String::new();
    for i in 0..3 {
        out.push_str(&format!(
            "P[{i}] = [{:+.4}, {:+.4}, {:+.4}]\n",
            sol.p[(i, 0)],
            sol.p[(i, 1)],
            sol.p[(i, 2)]
        ));
    }
    out.push_str(&format!(
        "u*(x) = {:+.4}·x1 {:+.4}·x2 {:+.4}·x3\n",
        -sol.k[(0, 0)],
        -sol.k[(0, 1)],
        -sol.k[(0, 2)]
    ));
    out.push_str(&format!("CARE residual = {:.2e}\n", sol.residual));
    let eigs: Vec<String> = sol
        .closed_loop_eigs
        .iter()
        .map(|(re, im)| {
            if im.abs() < 1e-12 {
                format!("{re:.3}")
            } else {
                format!("{re:.3}{}{:.3}i", if *im < 0.0 { "-" } else { "+" }, im.abs())
            }
        })
        .collect();
    out.push_str(&format!("closed-loop spectrum = {{{}}}\n", eigs.join(", ")));
    Ok(out)
}

fn demo_config(model: ModelId, algorithm: Algorithm, seed: u64) -> TrainConfig {
    // Browser-sized networks: small enough for tens of updates per frame.
    match model {
        ModelId::Aircraft => {
            let mut cfg = TrainConfig::aircraft_default(seed);
            cfg.algorithm = algorithm;
            cfg.value_spec =
                MlpSpec::new(vec![3, 24, 24, 1], OutputActivation::Softplus, false).unwrap();
            cfg.policy_spec =
                MlpSpec::new(vec![3, 24, 24, 1], OutputActivation::Linear, false).unwrap();
            cfg.batch_size = 64;
            cfg.test_set_size = 200;
            cfg.max_updates = u64::MAX;
            cfg
        }
        ModelId::Vehicle => {
            let mut cfg = TrainConfig::vehicle_default(seed);
            cfg.algorithm = algorithm;
            cfg.value_spec = MlpSpec::new(
                vec![5, 24, 24, 24, 1],
                OutputActivation::SoftplusScaled(200.0),
                false,
            )
            .unwrap();
            cfg.policy_spec = MlpSpec::new(
                vec![5, 24, 24, 24, 2],
                OutputActivation::TanhScaled(vec![0.35, 3.0]),
                false,
            )
            .unwrap();
            cfg.omega_override =
                Some(vec![(-0.4, 0.4), (-0.4, 0.4), (10.5, 13.5), (-0.25, 0.25), (-0.8, 0.8)]);
            cfg.sampler =
                SamplerKind::Mixed { dt: 0.01, time_cap: 20.0, uniform_fraction: 0.5, roam_factor: 4.0 };
            cfg.batch_size = 64;
            cfg.test_set_size = 200;
            cfg.max_updates = u64::MAX;
            cfg
        }
    }
}

/// Interactive training session.
#[wasm_bindgen]
pub struct DemoTrainer {
    trainer: Trainer,
    model: ModelId,
}

#[wasm_bindgen]
impl DemoTrainer {
    #[wasm_bindgen(constructor)]
    pub fn new(model: &str, algorithm: &str, seed: u32) -> Result<DemoTrainer, JsValue> {
        let model = match model {
            "aircraft" => ModelId::Aircraft,
            "vehicle" => ModelId::Vehicle,
            other => return Err(JsValue::from_str(&format!("unknown model `{other}`"))),
        };
        let algorithm = match algorithm {
            "dgpi" => Algorithm::Dgpi,
            "dpi" => Algorithm::Dpi,
            other => return Err(JsValue::from_str(&format!("unknown algorithm `{other}`"))),
        };
        let cfg = demo_config(model, algorithm, seed as u64);
        let trainer = Trainer::new(cfg).map_err(err_js)?;
        Ok(DemoTrainer { trainer, model })
    }

    /// Run `n` update rounds; returns
    /// `[updates, phase, L_c, L_a, mean|H|, max H, e_pi_abs, e_v_abs]`
    /// (error metrics are NaN when no analytic optimum exists).
    pub fn step_chunk(&mut self, n: u32) -> Result<Vec<f64>, JsValue> {
        for _ in 0..n {
            match (self.trainer.cfg.algorithm, self.trainer.phase()) {
                (Algorithm::Dgpi, Phase::Warmup) => self.trainer.dgpi_warmup_step(),
                (Algorithm::Dgpi, Phase::Pi) => self.trainer.dgpi_pi_step(),
                (Algorithm::Dpi, _) => self.trainer.dpi_outer_step(),
            }
            .map_err(err_js)?;
        }
        let snap = self.trainer.snapshot_stats().map_err(err_js)?;
        Ok(vec![
            self.trainer.updates() as f64,
            match self.trainer.phase() {
                Phase::Warmup => 0.0,
                Phase::Pi => 1.0,
            },
            snap.loss_c,
            snap.loss_a,
            snap.mean_abs_h,
            snap.max_h,
            snap.e_pi_abs.unwrap_or(f64::NAN),
            snap.e_v_abs.unwrap_or(f64::NAN),
        ])
    }

    /// Closed-loop rollout of the currently trained policy from `x0`.
    /// Rows of `[t, x…, u…, l]`, flattened.
    pub fn simulate(&self, x0: Vec<f64>, horizon: f64, dt: f64) -> Result<Vec<f64>, JsValue> {
        let model = self.model.build(None);
        let law = PolicyControl {
            policy: self.trainer.policy_net(),
            x_e: model.equilibrium(),
        };
        let traj = sim::rollout(model.as_ref(), &law, &x0, horizon, dt).map_err(err_js)?;
        Ok(flatten_traj(&traj, model.as_ref()))
    }

    pub fn state_dim(&self) -> usize {
        self.model.build(None).n()
    }

    /// Number of columns in a flattened trajectory row.
    pub fn traj_stride(&self) -> usize {
        let m = self.model.build(None);
        1 + m.n() + m.m() + 1
    }
}

fn flatten_traj(traj: &sim::Trajectory, model: &dyn DynamicsModel) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.times.len() * (2 + model.n() + model.m()));
    for k in 0..traj.times.len() {
        out.push(traj.times[k]);
        out.extend_from_slice(&traj.states[k]);
        out.extend_from_slice(&traj.controls[k]);
        out.push(traj.utilities[k]);
    }
    out
}

/// Rollout of the analytic LQR optimum on the aircraft (reference curves).
#[wasm_bindgen]
pub fn simulate_lqr(x0: Vec<f64>, horizon: f64, dt: f64) -> Result<Vec<f64>, JsValue> {
    let model = Aircraft::new();
    let sol = solve_care(&Aircraft::lqr_problem()).map_err(err_js)?;
    let policy = LinearPolicy::from_riccati(&sol);
    let law = PolicyControl { policy: &policy, x_e: model.equilibrium() };
    let traj = sim::rollout(&model, &law, &x0, horizon, dt).map_err(err_js)?;
    Ok(flatten_traj(&traj, &model))
}

/// Mean |H| of the analytic optimum over `n` random states — the sanity
/// number the demo page shows next to the Riccati block.
#[wasm_bindgen]
pub fn lqr_hamiltonian_residual(n: u32) -> Result<f64, JsValue> {
    let model = Aircraft::new();
    let sol = solve_care(&Aircraft::lqr_problem()).map_err(err_js)?;
    let value = QuadraticValue::from_riccati(&sol);
    let policy = LinearPolicy::from_riccati(&sol);
    let eval = HamiltonianEval::new(&model, &value, &policy, 0.0).map_err(err_js)?;
    let mut rng = hjb_core::rng::Rng::new(7);
    let states: Vec<Vec<f64>> = (0..n as usize)
        .map(|_| {
            model
                .omega_bounds()
                .iter()
                .map(|(lo, hi)| rng.uniform(*lo, *hi))
                .collect()
        })
        .collect();
    hjb_core::metrics::mean_abs_hamiltonian(&eval, &states).map_err(err_js)
}
