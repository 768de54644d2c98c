//! Training loops: classic policy iteration with inner loops run to
//! termination (`dpi`), and the warm-started, truncated variant (`dgpi`).
//!
//! `dgpi` runs two phases. Phase 1 jointly descends the squared-Hamiltonian
//! loss over both networks until the sampled Hamiltonian criterion turns
//! non-positive (which manufactures a Lyapunov function from an arbitrary
//! initialization); phase 2 alternates a single critic step on E[H²] with a
//! single actor step on E[H] per outer iteration. `dpi` instead runs the
//! critic inner loop until L_c ≤ ε and the actor inner loop until L_a stops
//! moving, with iteration caps so an infeasible policy-evaluation problem
//! (the inadmissible-initialization failure mode) cannot hang the run.
//!
//! One "update" is one optimizer step; the warm-up joint step counts as one.

use crate::dynamics::{Aircraft, DynamicsModel, SamplerKind, StateSampler, Vehicle, VehicleParams};
use crate::hjb::{batch_grads, BatchEval, GradMode, HamiltonianEval, PolicyControl};
use crate::metrics::{self, MetricsRow};
use crate::mlp::{MlpSpec, PolicyNetwork, ValueNetwork};
use crate::optim::{OptKind, Optimizer};
use crate::riccati::{solve_care, RiccatiSolution};
use crate::rng::Rng;
use crate::sim;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Dpi,
    Dgpi,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Dpi => "dpi",
            Algorithm::Dgpi => "dgpi",
        }
    }
}

/// Warm-up exit test: max H ≤ 0 over the batch, or its tractable relaxation
/// mean H ≤ 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarmupExit {
    MaxH,
    MeanH,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelId {
    Aircraft,
    Vehicle,
}

impl ModelId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::Aircraft => "aircraft",
            ModelId::Vehicle => "vehicle",
        }
    }

    pub fn build(&self, omega_override: Option<Vec<(f64, f64)>>) -> Box<dyn DynamicsModel> {
        match (self, omega_override) {
            (ModelId::Aircraft, None) => Box::new(Aircraft::new()),
            (ModelId::Aircraft, Some(b)) => Box::new(Aircraft::with_omega(b)),
            (ModelId::Vehicle, None) => Box::new(Vehicle::new(VehicleParams::default())),
            (ModelId::Vehicle, Some(b)) => {
                Box::new(Vehicle::with_omega(VehicleParams::default(), b))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub model: ModelId,
    pub omega_override: Option<Vec<(f64, f64)>>,
    pub algorithm: Algorithm,
    pub value_spec: MlpSpec,
    pub policy_spec: MlpSpec,
    pub seed: u64,
    pub batch_size: usize,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_warmup: f64,
    pub optimizer: OptKind,
    /// Outer convergence tolerance on the per-update test-set value change.
    pub epsilon: f64,
    pub dpi_inner_epsilon: f64,
    pub critic_inner_cap: usize,
    pub actor_inner_cap: usize,
    pub max_updates: u64,
    pub eval_every: u64,
    pub eta: f64,
    pub warmup_exit: WarmupExit,
    pub sampler: SamplerKind,
    pub test_set_size: usize,
    /// Stop (success) once both mean-absolute errors drop below this;
    /// only meaningful where an analytic optimum exists.
    pub stop_when_e_below: Option<f64>,
    /// Log finite-horizon rollout cost C at eval points.
    pub log_cost: bool,
    pub cost_horizon: f64,
    pub cost_dt: f64,
    /// Test-set prefix used for admissibility checks at eval points.
    pub admissibility_states: usize,
    pub admissibility_horizon: f64,
    pub admissibility_dt: f64,
    /// Emit wall-clock seconds in metrics rows (off keeps runs byte-stable).
    pub timing: bool,
    /// Factor applied to the policy's final-layer initialization. Values
    /// well below 1 start a tanh head inside its linear region, which keeps
    /// the actor's gradient alive through the early critic transient.
    pub policy_head_init_scale: f64,
    /// One-shot learning-rate decay: after this many updates both rates are
    /// multiplied by `lr_decay_factor`. Collapses Adam's constant-rate noise
    /// floor once the value surface is roughed in.
    pub lr_decay_at: Option<u64>,
    pub lr_decay_factor: f64,
}

impl TrainConfig {
    /// Desk-scale defaults for the linear aircraft benchmark.
    pub fn aircraft_default(seed: u64) -> Self {
        use crate::mlp::OutputActivation;
        TrainConfig {
            model: ModelId::Aircraft,
            omega_override: None,
            algorithm: Algorithm::Dgpi,
            value_spec: MlpSpec::new(vec![3, 64, 64, 1], OutputActivation::Softplus, false)
                .unwrap(),
            policy_spec: MlpSpec::new(vec![3, 64, 64, 1], OutputActivation::Linear, false)
                .unwrap(),
            seed,
            batch_size: 256,
            lr_critic: 0.01,
            lr_actor: 0.01,
            lr_warmup: 0.01,
            optimizer: OptKind::adam_default(),
            epsilon: 1e-4,
            dpi_inner_epsilon: 1e-3,
            critic_inner_cap: 200,
            actor_inner_cap: 50,
            max_updates: 30_000,
            eval_every: 50,
            eta: 0.1,
            warmup_exit: WarmupExit::MeanH,
            sampler: SamplerKind::Uniform,
            test_set_size: 500,
            stop_when_e_below: None,
            log_cost: false,
            cost_horizon: 20.0,
            cost_dt: 0.01,
            admissibility_states: 16,
            admissibility_horizon: 40.0,
            admissibility_dt: 0.02,
            timing: false,
            policy_head_init_scale: 1.0,
            lr_decay_at: None,
            lr_decay_factor: 0.1,
        }
    }

    /// Desk-scale defaults for the nonlinear vehicle benchmark.
    pub fn vehicle_default(seed: u64) -> Self {
        use crate::mlp::OutputActivation;
        TrainConfig {
            model: ModelId::Vehicle,
            omega_override: None,
            algorithm: Algorithm::Dgpi,
            value_spec: MlpSpec::new(
                vec![5, 32, 32, 32, 1],
                OutputActivation::Softplus,
                false,
            )
            .unwrap(),
            policy_spec: MlpSpec::new(
                vec![5, 32, 32, 32, 2],
                OutputActivation::TanhScaled(vec![0.35, 3.0]),
                false,
            )
            .unwrap(),
            seed,
            batch_size: 256,
            lr_critic: 8e-4,
            lr_actor: 2e-4,
            lr_warmup: 8e-4,
            optimizer: OptKind::adam_default(),
            epsilon: 1e-4,
            dpi_inner_epsilon: 1e-3,
            critic_inner_cap: 200,
            actor_inner_cap: 50,
            max_updates: 30_000,
            eval_every: 100,
            eta: 0.1,
            warmup_exit: WarmupExit::MeanH,
            sampler: SamplerKind::Rollout { dt: 0.01, time_cap: 20.0, roam_factor: 1.0 },
            test_set_size: 500,
            stop_when_e_below: None,
            log_cost: true,
            cost_horizon: 20.0,
            cost_dt: 0.01,
            admissibility_states: 16,
            admissibility_horizon: 20.0,
            admissibility_dt: 0.01,
            timing: false,
            policy_head_init_scale: 0.05,
            lr_decay_at: None,
            lr_decay_factor: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Contract("batch_size must be ≥ 1".into()));
        }
        for (name, lr) in
            [("lr_critic", self.lr_critic), ("lr_actor", self.lr_actor), ("lr_warmup", self.lr_warmup)]
        {
            if lr <= 0.0 {
                return Err(Error::Contract(format!("{name} must be positive")));
            }
        }
        if self.epsilon <= 0.0 || self.dpi_inner_epsilon <= 0.0 {
            return Err(Error::Contract("tolerances must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Contract("eval_every must be ≥ 1".into()));
        }
        if self.test_set_size == 0 {
            return Err(Error::Contract("test_set_size must be ≥ 1".into()));
        }
        if self.policy_head_init_scale <= 0.0 {
            return Err(Error::Contract("policy_head_init_scale must be positive".into()));
        }
        if self.lr_decay_factor <= 0.0 {
            return Err(Error::Contract("lr_decay_factor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Pi,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Pi => "pi",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    /// Test-set value function stopped changing (per-update change < ε).
    Converged,
    /// Both error metrics fell below the configured success target.
    ReachedErrorTarget,
    MaxUpdates,
    Aborted(String),
}

#[derive(Debug)]
pub struct TrainResult {
    pub value: ValueNetwork,
    pub policy: PolicyNetwork,
    pub best_value: ValueNetwork,
    pub best_policy: PolicyNetwork,
    pub best_iter: u64,
    pub metrics: Vec<MetricsRow>,
    pub observed_na: Option<u64>,
    pub stop_reason: StopReason,
    pub updates: u64,
    /// Updates at which both mean-absolute errors were first < target.
    pub updates_to_target: Option<u64>,
}

struct BatchStats {
    loss_c: f64,
    loss_a: f64,
    mean_abs_h: f64,
    max_h: f64,
}

impl BatchStats {
    fn from_h(h_values: &[f64], loss_c: f64, loss_a: f64) -> Self {
        let n = h_values.len() as f64;
        BatchStats {
            loss_c,
            loss_a,
            mean_abs_h: h_values.iter().map(|h| h.abs()).sum::<f64>() / n,
            max_h: h_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Point-in-time training statistics for dashboards.
#[derive(Clone, Copy, Debug)]
pub struct SnapshotStats {
    pub loss_c: f64,
    pub loss_a: f64,
    pub mean_abs_h: f64,
    pub max_h: f64,
    pub e_pi_abs: Option<f64>,
    pub e_v_abs: Option<f64>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    model: Box<dyn DynamicsModel>,
    value: ValueNetwork,
    policy: PolicyNetwork,
    opt_value: Optimizer,
    opt_policy: Optimizer,
    sampler: StateSampler,
    test_set: Vec<Vec<f64>>,
    cost_x0: Vec<f64>,
    oracle: Option<RiccatiSolution>,
    phase: Phase,
    updates: u64,
    last_stats: Option<BatchStats>,
    prev_test_values: Option<(u64, Vec<f64>)>,
    metrics: Vec<MetricsRow>,
    observed_na: Option<u64>,
    best: Option<(f64, u64, ValueNetwork, PolicyNetwork)>,
    updates_to_target: Option<u64>,
    pending_cap_flag: bool,
    lr_decayed: bool,
    /// Present only when timing is enabled (monotonic clocks are unavailable
    /// on some targets, e.g. bare wasm).
    started: Option<std::time::Instant>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.model.build(cfg.omega_override.clone());
        if cfg.value_spec.input_dim() != model.n() || cfg.value_spec.output_dim() != 1 {
            return Err(Error::Contract("value network shape does not fit the model".into()));
        }
        if cfg.policy_spec.input_dim() != model.n() || cfg.policy_spec.output_dim() != model.m() {
            return Err(Error::Contract("policy network shape does not fit the model".into()));
        }
        if model.control_hi().iter().any(|b| b.is_finite()) {
            match &cfg.policy_spec.output {
                crate::mlp::OutputActivation::TanhScaled(scale) => {
                    for (s, hi) in scale.iter().zip(model.control_hi()) {
                        if *s > *hi + 1e-12 {
                            return Err(Error::Contract(
                                "policy output scale exceeds the actuator bound".into(),
                            ));
                        }
                    }
                }
                _ => {
                    return Err(Error::Contract(
                        "bounded-control models need a tanh_scaled policy head".into(),
                    ))
                }
            }
        }
        let value = ValueNetwork::new(
            cfg.value_spec.clone(),
            crate::mlp::init_params(&cfg.value_spec, Rng::substream(cfg.seed, 1).next_u64()),
        )?;
        let mut policy_params =
            crate::mlp::init_params(&cfg.policy_spec, Rng::substream(cfg.seed, 2).next_u64());
        if cfg.policy_head_init_scale != 1.0 {
            policy_params.scale_layer(cfg.policy_spec.layer_count() - 1, cfg.policy_head_init_scale);
        }
        let policy = PolicyNetwork::new(cfg.policy_spec.clone(), policy_params)?;
        let opt_value = Optimizer::new(cfg.optimizer, cfg.lr_critic, value.params.len());
        let opt_policy = Optimizer::new(cfg.optimizer, cfg.lr_actor, policy.params.len());
        let sampler = StateSampler::new(
            model.as_ref(),
            cfg.sampler,
            cfg.batch_size,
            Rng::substream(cfg.seed, 3).next_u64(),
        );
        let mut test_rng = Rng::substream(cfg.seed, 4);
        let test_set: Vec<Vec<f64>> = (0..cfg.test_set_size)
            .map(|_| {
                model
                    .omega_bounds()
                    .iter()
                    .map(|(lo, hi)| test_rng.uniform(*lo, *hi))
                    .collect()
            })
            .collect();
        let mut x0_rng = Rng::substream(cfg.seed, 5);
        let cost_x0: Vec<f64> = model
            .omega_bounds()
            .iter()
            .map(|(lo, hi)| x0_rng.uniform(*lo, *hi))
            .collect();
        let oracle = match cfg.model {
            ModelId::Aircraft => Some(solve_care(&Aircraft::lqr_problem())?),
            ModelId::Vehicle => None,
        };
        let cfg_timing = cfg.timing;
        let eta = cfg.eta;
        if eta == 0.0 && !cfg.value_spec.zero_bias {
            return Err(Error::Contract(
                "η = 0 needs a zero-bias value network (V(x_e) pinned structurally)".into(),
            ));
        }
        Ok(Trainer {
            cfg,
            model,
            value,
            policy,
            opt_value,
            opt_policy,
            sampler,
            test_set,
            cost_x0,
            oracle,
            phase: Phase::Warmup,
            updates: 0,
            last_stats: None,
            prev_test_values: None,
            metrics: Vec::new(),
            observed_na: None,
            best: None,
            updates_to_target: None,
            pending_cap_flag: false,
            lr_decayed: false,
            started: cfg_timing.then(std::time::Instant::now),
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn value_net(&self) -> &ValueNetwork {
        &self.value
    }

    pub fn policy_net(&self) -> &PolicyNetwork {
        &self.policy
    }

    pub fn optimizer_steps(&self) -> (u64, u64) {
        (self.opt_value.steps_taken(), self.opt_policy.steps_taken())
    }

    /// Current losses and error metrics without recording a metrics row.
    pub fn snapshot_stats(&mut self) -> Result<SnapshotStats> {
        if self.last_stats.is_none() {
            let stats = self.fresh_stats()?;
            self.last_stats = Some(stats);
        }
        let stats = self.last_stats.as_ref().unwrap();
        let mut snap = SnapshotStats {
            loss_c: stats.loss_c,
            loss_a: stats.loss_a,
            mean_abs_h: stats.mean_abs_h,
            max_h: stats.max_h,
            e_pi_abs: None,
            e_v_abs: None,
        };
        if let Some(oracle) = &self.oracle {
            let eval = self.eval_handle()?;
            let (_, e_pi_abs) =
                metrics::policy_error(&eval, &|x| oracle.policy(x)[0], &self.test_set)?;
            let (_, e_v_abs) = metrics::value_error(&eval, &|x| oracle.value(x), &self.test_set)?;
            snap.e_pi_abs = Some(e_pi_abs);
            snap.e_v_abs = Some(e_v_abs);
        }
        Ok(snap)
    }

    fn eval_handle(&self) -> Result<HamiltonianEval<'_, ValueNetwork, PolicyNetwork>> {
        HamiltonianEval::new(self.model.as_ref(), &self.value, &self.policy, self.cfg.eta)
    }

    fn next_batch(&mut self) -> Vec<Vec<f64>> {
        let batch = self.sampler.sample(self.model.as_ref());
        let law = PolicyControl { policy: &self.policy, x_e: self.model.equilibrium() };
        self.sampler.advance(self.model.as_ref(), &law);
        batch
    }

    fn grads(&self, batch: &[Vec<f64>], mode: GradMode) -> Result<BatchEval> {
        let eval = self.eval_handle()?;
        batch_grads(&eval, batch, mode)
    }

    fn warmup_exit_met(&self, h_values: &[f64]) -> bool {
        match self.cfg.warmup_exit {
            WarmupExit::MaxH => h_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) <= 0.0,
            WarmupExit::MeanH => h_values.iter().sum::<f64>() / h_values.len() as f64 <= 0.0,
        }
    }

    /// One warm-up round: joint descent of L_c over (ω, θ) at the warm-up
    /// rate. If the sampled exit criterion already holds, the phase flips
    /// without an update.
    pub fn dgpi_warmup_step(&mut self) -> Result<()> {
        if self.phase != Phase::Warmup {
            return Err(Error::Contract("warm-up step outside the warm-up phase".into()));
        }
        let batch = self.next_batch();
        let be = self.grads(&batch, GradMode::Joint)?;
        self.last_stats = Some(BatchStats::from_h(&be.h_values, be.loss_c, be.loss_a));
        if self.warmup_exit_met(&be.h_values) {
            self.phase = Phase::Pi;
            return Ok(());
        }
        let lr = self.cfg.lr_warmup;
        self.opt_value.step_with_lr(&mut self.value.params.flat, &be.grad_value, lr)?;
        self.opt_policy.step_with_lr(&mut self.policy.params.flat, &be.grad_policy, lr)?;
        self.updates += 1; // one joint update
        Ok(())
    }

    /// One truncated policy-iteration round: exactly one critic step on L_c
    /// and then one actor step on L_a over the same fresh batch.
    pub fn dgpi_pi_step(&mut self) -> Result<()> {
        if self.phase != Phase::Pi {
            return Err(Error::Contract("PI step before the warm-up exited".into()));
        }
        let batch = self.next_batch();
        let critic = self.grads(&batch, GradMode::Critic)?;
        self.opt_value.step(&mut self.value.params.flat, &critic.grad_value)?;
        self.updates += 1;
        let actor = self.grads(&batch, GradMode::Actor)?;
        self.opt_policy.step(&mut self.policy.params.flat, &actor.grad_policy)?;
        self.updates += 1;
        self.last_stats = Some(BatchStats::from_h(&actor.h_values, critic.loss_c, actor.loss_a));
        Ok(())
    }

    /// One full policy-iteration round: critic inner loop until
    /// L_c ≤ ε_inner (or its cap), then actor inner loop until L_a stops
    /// changing (or its cap). Every inner update counts.
    pub fn dpi_outer_step(&mut self) -> Result<()> {
        // Policy evaluation.
        let mut steps = 0usize;
        loop {
            let batch = self.next_batch();
            let be = self.grads(&batch, GradMode::Critic)?;
            self.last_stats = Some(BatchStats::from_h(&be.h_values, be.loss_c, be.loss_a));
            if be.loss_c <= self.cfg.dpi_inner_epsilon {
                break;
            }
            if steps >= self.cfg.critic_inner_cap {
                self.pending_cap_flag = true;
                break;
            }
            self.opt_value.step(&mut self.value.params.flat, &be.grad_value)?;
            self.updates += 1;
            steps += 1;
        }
        // Policy improvement.
        let mut prev_la: Option<f64> = None;
        let mut steps = 0usize;
        loop {
            let batch = self.next_batch();
            let be = self.grads(&batch, GradMode::Actor)?;
            if let Some(stats) = &mut self.last_stats {
                stats.loss_a = be.loss_a;
            }
            if let Some(prev) = prev_la {
                if (be.loss_a - prev).abs() <= self.cfg.dpi_inner_epsilon {
                    break;
                }
            }
            if steps >= self.cfg.actor_inner_cap {
                self.pending_cap_flag = true;
                break;
            }
            self.opt_policy.step(&mut self.policy.params.flat, &be.grad_policy)?;
            self.updates += 1;
            steps += 1;
            prev_la = Some(be.loss_a);
        }
        Ok(())
    }

    fn test_values(&self) -> Vec<f64> {
        let eval = HamiltonianEval::new(self.model.as_ref(), &self.value, &self.policy, self.cfg.eta)
            .expect("validated at construction");
        self.test_set.iter().map(|x| eval.value_at(x)).collect()
    }

    fn fresh_stats(&mut self) -> Result<BatchStats> {
        let batch = self.sampler.sample(self.model.as_ref());
        let eval = self.eval_handle()?;
        let mut tape = crate::tape::Tape::new();
        let mut hs = Vec::with_capacity(batch.len());
        for x in &batch {
            hs.push(eval.h_value(&mut tape, x)?);
        }
        let n = batch.len() as f64;
        let loss_a = hs.iter().sum::<f64>() / n;
        let mut loss_c = hs.iter().map(|h| h * h).sum::<f64>() / n;
        if self.cfg.eta > 0.0 {
            loss_c += self.cfg.eta * eval.value_at(self.model.equilibrium());
        }
        Ok(BatchStats::from_h(&hs, loss_c, loss_a))
    }

    /// Emit a metrics row, update best/N_a bookkeeping, and report whether a
    /// stop condition fired.
    fn eval_point(&mut self) -> Result<Option<StopReason>> {
        if self.last_stats.is_none() {
            let stats = self.fresh_stats()?;
            self.last_stats = Some(stats);
        }
        let stats = self.last_stats.as_ref().unwrap();
        let mut row = MetricsRow {
            iter: self.updates,
            phase: self.phase.as_str(),
            loss_c: stats.loss_c,
            loss_a: stats.loss_a,
            mean_abs_h: stats.mean_abs_h,
            max_h: stats.max_h,
            capped: self.pending_cap_flag,
            ..Default::default()
        };
        self.pending_cap_flag = false;

        let eval = HamiltonianEval::new(self.model.as_ref(), &self.value, &self.policy, self.cfg.eta)
            .expect("validated at construction");
        if let Some(oracle) = &self.oracle {
            let (e_pi, e_pi_abs) =
                metrics::policy_error(&eval, &|x| oracle.policy(x)[0], &self.test_set)?;
            let (e_v, e_v_abs) = metrics::value_error(&eval, &|x| oracle.value(x), &self.test_set)?;
            row.e_pi = Some(e_pi);
            row.e_pi_abs = Some(e_pi_abs);
            row.e_v = Some(e_v);
            row.e_v_abs = Some(e_v_abs);
        }
        if self.cfg.log_cost {
            let law = PolicyControl { policy: &self.policy, x_e: self.model.equilibrium() };
            let traj = sim::rollout(
                self.model.as_ref(),
                &law,
                &self.cost_x0,
                self.cfg.cost_horizon,
                self.cfg.cost_dt,
            )?;
            row.cost = Some(traj.cost);
        }
        if let Some(started) = self.started {
            row.wall_s = Some(started.elapsed().as_secs_f64());
        }

        // First-admissible-iteration bookkeeping (post hoc observation).
        if self.observed_na.is_none() {
            let check_states =
                &self.test_set[..self.cfg.admissibility_states.min(self.test_set.len())];
            let report = eval.admissibility_check(
                check_states,
                self.cfg.admissibility_horizon,
                self.cfg.admissibility_dt,
            )?;
            if report.admissible {
                self.observed_na = Some(self.updates);
            }
        }

        // Track the best checkpoint: by value error where an oracle exists,
        // by mean |H| otherwise.
        let score = row.e_v_abs.unwrap_or(row.mean_abs_h);
        if self.best.as_ref().map_or(true, |(s, ..)| score < *s) {
            self.best = Some((score, self.updates, self.value.clone(), self.policy.clone()));
        }

        // Success target on the error magnitudes.
        if let (Some(target), Some(e_pi_abs), Some(e_v_abs)) =
            (self.cfg.stop_when_e_below, row.e_pi_abs, row.e_v_abs)
        {
            if e_pi_abs < target && e_v_abs < target && self.updates_to_target.is_none() {
                self.updates_to_target = Some(self.updates);
                self.metrics.push(row);
                return Ok(Some(StopReason::ReachedErrorTarget));
            }
        }

        // Outer convergence: mean per-update test-set value change < ε.
        let values = self.test_values();
        let mut converged = false;
        if self.phase == Phase::Pi {
            if let Some((at, prev)) = &self.prev_test_values {
                let gap = self.updates.saturating_sub(*at);
                if gap > 0 {
                    let mean_change = values
                        .iter()
                        .zip(prev)
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>()
                        / values.len() as f64
                        / gap as f64;
                    converged = mean_change < self.cfg.epsilon;
                }
            }
        }
        self.prev_test_values = Some((self.updates, values));
        self.metrics.push(row);
        Ok(if converged { Some(StopReason::Converged) } else { None })
    }

    fn abort_row(&mut self, msg: &str) {
        let stats = self.last_stats.take().unwrap_or(BatchStats {
            loss_c: f64::NAN,
            loss_a: f64::NAN,
            mean_abs_h: f64::NAN,
            max_h: f64::NAN,
        });
        self.metrics.push(MetricsRow {
            iter: self.updates,
            phase: "abort",
            loss_c: stats.loss_c,
            loss_a: stats.loss_a,
            mean_abs_h: stats.mean_abs_h,
            max_h: stats.max_h,
            ..Default::default()
        });
        let _ = msg;
    }

    fn into_result(mut self, stop_reason: StopReason) -> TrainResult {
        let (_, best_iter, best_value, best_policy) = self
            .best
            .take()
            .unwrap_or((f64::INFINITY, self.updates, self.value.clone(), self.policy.clone()));
        TrainResult {
            value: self.value,
            policy: self.policy,
            best_value,
            best_policy,
            best_iter,
            metrics: self.metrics,
            observed_na: self.observed_na,
            stop_reason,
            updates: self.updates,
            updates_to_target: self.updates_to_target,
        }
    }

    /// Drive the configured algorithm to a stop condition.
    pub fn run(mut self) -> Result<TrainResult> {
        let mut next_eval = 0u64;
        loop {
            if self.updates >= next_eval {
                match self.eval_point() {
                    Ok(Some(reason)) => return Ok(self.into_result(reason)),
                    Ok(None) => {}
                    Err(e) => {
                        self.abort_row(&e.to_string());
                        return Ok(self.into_result(StopReason::Aborted(e.to_string())));
                    }
                }
                next_eval += self.cfg.eval_every;
            }
            if self.updates >= self.cfg.max_updates {
                let _ = self.eval_point();
                return Ok(self.into_result(StopReason::MaxUpdates));
            }
            if let Some(at) = self.cfg.lr_decay_at {
                if !self.lr_decayed && self.updates >= at {
                    self.opt_value.lr *= self.cfg.lr_decay_factor;
                    self.opt_policy.lr *= self.cfg.lr_decay_factor;
                    self.lr_decayed = true;
                }
            }
            let step = match self.cfg.algorithm {
                Algorithm::Dgpi => match self.phase {
                    Phase::Warmup => self.dgpi_warmup_step(),
                    Phase::Pi => self.dgpi_pi_step(),
                },
                Algorithm::Dpi => {
                    self.phase = Phase::Pi; // no warm-up phase in plain PI
                    self.dpi_outer_step()
                }
            };
            if let Err(e) = step {
                self.abort_row(&e.to_string());
                return Ok(self.into_result(StopReason::Aborted(e.to_string())));
            }
        }
    }
}

/// Train per the configuration; deterministic for a fixed seed.
pub fn train(cfg: TrainConfig) -> Result<TrainResult> {
    Trainer::new(cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_aircraft(seed: u64, algorithm: Algorithm) -> TrainConfig {
        use crate::mlp::OutputActivation;
        let mut cfg = TrainConfig::aircraft_default(seed);
        cfg.algorithm = algorithm;
        cfg.value_spec =
            MlpSpec::new(vec![3, 8, 1], OutputActivation::Softplus, false).unwrap();
        cfg.policy_spec = MlpSpec::new(vec![3, 8, 1], OutputActivation::Linear, false).unwrap();
        cfg.batch_size = 32;
        cfg.test_set_size = 50;
        cfg.max_updates = 60;
        cfg.eval_every = 20;
        cfg.admissibility_states = 4;
        cfg.admissibility_horizon = 10.0;
        cfg.admissibility_dt = 0.05;
        cfg
    }

    #[test]
    fn same_seed_same_metrics() {
        let csv = |seed| {
            let res = train(tiny_aircraft(seed, Algorithm::Dgpi)).unwrap();
            crate::metrics::to_csv(&res.metrics)
        };
        assert_eq!(csv(7), csv(7), "byte-identical metrics for equal seeds");
        assert_ne!(csv(7), csv(8));
    }

    #[test]
    fn dgpi_pi_step_is_exactly_two_optimizer_steps() {
        let mut tr = Trainer::new(tiny_aircraft(1, Algorithm::Dgpi)).unwrap();
        // Drive warm-up until it exits.
        for _ in 0..10_000 {
            if tr.phase() == Phase::Pi {
                break;
            }
            tr.dgpi_warmup_step().unwrap();
        }
        assert_eq!(tr.phase(), Phase::Pi, "warm-up exited in finitely many steps");
        let before = tr.optimizer_steps();
        let updates_before = tr.updates();
        tr.dgpi_pi_step().unwrap();
        let after = tr.optimizer_steps();
        assert_eq!(after.0 - before.0, 1, "one critic step");
        assert_eq!(after.1 - before.1, 1, "one actor step");
        assert_eq!(tr.updates() - updates_before, 2);
    }

    #[test]
    fn warmup_step_rejected_after_exit() {
        let mut tr = Trainer::new(tiny_aircraft(2, Algorithm::Dgpi)).unwrap();
        for _ in 0..10_000 {
            if tr.phase() == Phase::Pi {
                break;
            }
            tr.dgpi_warmup_step().unwrap();
        }
        assert_eq!(tr.phase(), Phase::Pi);
        assert!(tr.dgpi_warmup_step().is_err(), "phase is monotone");
    }

    /// With a huge inner tolerance the critic loop's pre-check fires before
    /// any update and the actor loop stops after its first probe step.
    #[test]
    fn dpi_inner_loops_terminate_immediately_when_slack() {
        let mut cfg = tiny_aircraft(3, Algorithm::Dpi);
        cfg.dpi_inner_epsilon = 1e12;
        let mut tr = Trainer::new(cfg).unwrap();
        let before = tr.optimizer_steps();
        tr.dpi_outer_step().unwrap();
        let after = tr.optimizer_steps();
        assert_eq!(after.0 - before.0, 0, "critic loop pre-check fired");
        assert_eq!(after.1 - before.1, 1, "actor loop probes once");
    }

    #[test]
    fn dpi_inner_caps_bound_the_loops() {
        let mut cfg = tiny_aircraft(4, Algorithm::Dpi);
        cfg.dpi_inner_epsilon = 1e-12; // unreachable
        cfg.critic_inner_cap = 5;
        cfg.actor_inner_cap = 3;
        let mut tr = Trainer::new(cfg).unwrap();
        tr.dpi_outer_step().unwrap();
        assert_eq!(tr.updates(), 8, "5 critic + 3 actor capped updates");
        assert!(tr.pending_cap_flag);
    }

    /// A sampling box that overflows the utility to ∞ sends non-finite
    /// gradients into the optimizer; the run must abort, not hang or panic.
    #[test]
    fn nonfinite_loss_aborts_with_abort_row() {
        use crate::mlp::OutputActivation;
        let mut cfg = TrainConfig::vehicle_default(5);
        cfg.value_spec = MlpSpec::new(vec![5, 8, 1], OutputActivation::Softplus, false).unwrap();
        cfg.policy_spec =
            MlpSpec::new(vec![5, 8, 2], OutputActivation::TanhScaled(vec![0.35, 3.0]), false)
                .unwrap();
        cfg.omega_override = Some(vec![
            (-2.0, 2.0),
            (-1.0, 1.0),
            (8.0, 16.0),
            (-0.5, 0.5),
            (1e160, 2e160), // 80·y² overflows
        ]);
        cfg.batch_size = 8;
        cfg.test_set_size = 8;
        cfg.max_updates = 200;
        cfg.eval_every = 50;
        cfg.log_cost = false;
        cfg.admissibility_states = 2;
        cfg.admissibility_horizon = 0.1;
        let res = train(cfg).unwrap();
        match res.stop_reason {
            StopReason::Aborted(msg) => assert!(!msg.is_empty()),
            other => panic!("expected abort, got {other:?}"),
        }
        assert_eq!(res.metrics.last().unwrap().phase, "abort");
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = tiny_aircraft(6, Algorithm::Dgpi);
        cfg.batch_size = 0;
        assert!(Trainer::new(cfg).is_err());
        let mut cfg = tiny_aircraft(6, Algorithm::Dgpi);
        cfg.lr_critic = -1.0;
        assert!(Trainer::new(cfg).is_err());
    }

    #[test]
    fn vehicle_requires_saturated_policy_head() {
        use crate::mlp::OutputActivation;
        let mut cfg = TrainConfig::vehicle_default(0);
        cfg.policy_spec = MlpSpec::new(vec![5, 8, 2], OutputActivation::Linear, false).unwrap();
        assert!(Trainer::new(cfg).is_err());
    }
}
