//! The four subcommands: train, eval, riccati, simulate.

use crate::config::RunConfig;
use hjb_core::checkpoint::{self, Checkpoint};
use hjb_core::dynamics::DynamicsModel;
use hjb_core::hjb::{HamiltonianEval, PolicyControl};
use hjb_core::metrics::{self};
use hjb_core::riccati::solve_care;
use hjb_core::rng::Rng;
use hjb_core::sim;
use hjb_core::train::{self, ModelId, StopReason, TrainConfig, TrainResult};
use hjb_core::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn sanitize_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn manifest_text(cfg: &TrainConfig, res: &TrainResult) -> String {
    let mut out = String::from("hjb-run-manifest v1\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} {v}");
    };
    kv("model", cfg.model.as_str().into());
    kv("algorithm", cfg.algorithm.as_str().into());
    kv("seed", cfg.seed.to_string());
    match &cfg.omega_override {
        Some(b) => kv(
            "omega",
            b.iter().map(|(lo, hi)| format!("{lo} {hi}")).collect::<Vec<_>>().join(", "),
        ),
        None => kv("omega", "default".into()),
    }
    kv("value_widths", format!("{:?}", cfg.value_spec.widths));
    kv("value_output", format!("{:?}", cfg.value_spec.output));
    kv("value_zero_bias", cfg.value_spec.zero_bias.to_string());
    kv("policy_widths", format!("{:?}", cfg.policy_spec.widths));
    kv("policy_output", format!("{:?}", cfg.policy_spec.output));
    kv("batch_size", cfg.batch_size.to_string());
    kv("lr_critic", cfg.lr_critic.to_string());
    kv("lr_actor", cfg.lr_actor.to_string());
    kv("lr_warmup", cfg.lr_warmup.to_string());
    kv("optimizer", format!("{:?}", cfg.optimizer));
    kv("epsilon", cfg.epsilon.to_string());
    kv("dpi_inner_epsilon", cfg.dpi_inner_epsilon.to_string());
    kv("critic_inner_cap", cfg.critic_inner_cap.to_string());
    kv("actor_inner_cap", cfg.actor_inner_cap.to_string());
    kv("max_updates", cfg.max_updates.to_string());
    kv("eval_every", cfg.eval_every.to_string());
    kv("eta", cfg.eta.to_string());
    kv("warmup_exit", format!("{:?}", cfg.warmup_exit));
    kv("sampler", format!("{:?}", cfg.sampler));
    kv("test_set_size", cfg.test_set_size.to_string());
    kv(
        "stop_when_e_below",
        cfg.stop_when_e_below.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
    );
    kv("policy_head_init_scale", cfg.policy_head_init_scale.to_string());
    kv("log_cost", cfg.log_cost.to_string());
    kv("cost_horizon", cfg.cost_horizon.to_string());
    kv("cost_dt", cfg.cost_dt.to_string());
    kv("admissibility_states", cfg.admissibility_states.to_string());
    kv("admissibility_horizon", cfg.admissibility_horizon.to_string());
    kv("admissibility_dt", cfg.admissibility_dt.to_string());
    kv("timing", cfg.timing.to_string());
    kv(
        "observed_na",
        res.observed_na.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
    );
    kv("stop_reason", format!("{:?}", res.stop_reason));
    kv("updates", res.updates.to_string());
    kv(
        "updates_to_target",
        res.updates_to_target.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
    );
    kv("best_iter", res.best_iter.to_string());
    if let Some(row) = res.metrics.last() {
        kv("final_loss_c", row.loss_c.to_string());
        kv("final_loss_a", row.loss_a.to_string());
        kv("final_mean_abs_h", row.mean_abs_h.to_string());
        kv("final_max_h", row.max_h.to_string());
        if let Some(e) = row.e_pi_abs {
            kv("final_e_pi_abs", e.to_string());
        }
        if let Some(e) = row.e_v_abs {
            kv("final_e_v_abs", e.to_string());
        }
        if let Some(c) = row.cost {
            kv("final_cost", c.to_string());
        }
    }
    out
}

/// Train every configured seed; write per-seed metrics CSV, checkpoints, and
/// manifest. Returns the process exit code.
pub fn cmd_train(rc: &RunConfig) -> Result<i32> {
    sanitize_dir(&rc.output_dir)?;
    let mut aborted = false;
    for &seed in &rc.seeds {
        let mut cfg = rc.train.clone();
        cfg.seed = seed;
        let res = train::train(cfg.clone())?;
        let csv = metrics::to_csv(&res.metrics);
        std::fs::write(rc.output_dir.join(format!("metrics_s{seed}.csv")), csv)?;
        let model_id = cfg.model.as_str().to_string();
        checkpoint::save(
            &rc.output_dir.join(format!("checkpoint_s{seed}.txt")),
            &Checkpoint {
                model_id: model_id.clone(),
                value: res.value.clone(),
                policy: res.policy.clone(),
            },
        )?;
        checkpoint::save(
            &rc.output_dir.join(format!("checkpoint_best_s{seed}.txt")),
            &Checkpoint {
                model_id: model_id.clone(),
                value: res.best_value.clone(),
                policy: res.best_policy.clone(),
            },
        )?;
        std::fs::write(
            rc.output_dir.join(format!("manifest_s{seed}.txt")),
            manifest_text(&cfg, &res),
        )?;
        println!(
            "seed {seed}: {:?} after {} updates (N_a {:?})",
            res.stop_reason, res.updates, res.observed_na
        );
        if matches!(res.stop_reason, StopReason::Aborted(_)) {
            aborted = true;
        }
    }
    Ok(if aborted { 3 } else { 0 })
}

fn build_model(id: &str) -> Result<(ModelId, Box<dyn DynamicsModel>)> {
    let model_id = match id {
        "aircraft" => ModelId::Aircraft,
        "vehicle" => ModelId::Vehicle,
        other => return Err(Error::Contract(format!("unknown model id `{other}`"))),
    };
    Ok((model_id, model_id.build(None)))
}

/// Evaluate a checkpoint: error metrics (when an analytic optimum exists),
/// mean |H|, admissibility evidence, and a sample rollout.
pub fn cmd_eval(ck_path: &Path, model_id: &str, states: usize, seed: u64) -> Result<i32> {
    if states == 0 {
        return Err(Error::Contract("--states must be at least 1".into()));
    }
    let ck = checkpoint::load(ck_path)?;
    if ck.model_id != model_id {
        return Err(Error::Contract(format!(
            "checkpoint was trained on `{}`, not `{model_id}`",
            ck.model_id
        )));
    }
    let (mid, model) = build_model(model_id)?;
    if ck.value.spec.input_dim() != model.n() || ck.policy.spec.output_dim() != model.m() {
        return Err(Error::Contract("checkpoint dimensions do not fit the model".into()));
    }
    let eval = HamiltonianEval::new(model.as_ref(), &ck.value, &ck.policy, 0.1)?;
    let mut rng = Rng::substream(seed, 0xE7A1);
    let test_set: Vec<Vec<f64>> = (0..states)
        .map(|_| model.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect())
        .collect();

    println!("hjb-eval v1");
    println!("model {model_id}");
    println!("checkpoint {}", ck_path.display());
    println!("states {states}");
    let mh = metrics::mean_abs_hamiltonian(&eval, &test_set)?;
    println!("mean_abs_h {mh}");
    if mid == ModelId::Aircraft {
        let sol = solve_care(&hjb_core::dynamics::Aircraft::lqr_problem())?;
        let (e_pi, e_pi_abs) = metrics::policy_error(&eval, &|x| sol.policy(x)[0], &test_set)?;
        let (e_v, e_v_abs) = metrics::value_error(&eval, &|x| sol.value(x), &test_set)?;
        println!("e_pi {e_pi}");
        println!("e_pi_abs {e_pi_abs}");
        println!("e_v {e_v}");
        println!("e_v_abs {e_v_abs}");
    }
    let (horizon, dt) =
        if mid == ModelId::Aircraft { (40.0, 0.02) } else { (20.0, 0.01) };
    let check = eval.admissibility_check(&test_set[..states.min(16)], horizon, dt)?;
    println!("admissible {}", check.admissible);
    println!("max_h_sampled {}", check.max_h);
    println!("rollout_converged_fraction {}", check.converged_fraction);

    // One closed-loop rollout from a sampled start.
    let x0: Vec<f64> =
        model.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect();
    let law = PolicyControl { policy: &ck.policy, x_e: model.equilibrium() };
    let traj = sim::rollout(model.as_ref(), &law, &x0, horizon, dt)?;
    println!("rollout_x0 {}", x0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    println!("rollout_cost {}", traj.cost);
    println!("rollout_truncated {}", traj.truncated);
    let x_e = model.equilibrium();
    let dev = |x: &[f64]| -> f64 {
        x.iter().zip(x_e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let d0 = dev(&x0);
    let settle = traj
        .states
        .iter()
        .position(|x| dev(x) < 0.01 * d0)
        .map(|k| k as f64 * dt);
    match settle {
        Some(t) => println!("rollout_settle_s {t}"),
        None => println!("rollout_settle_s none"),
    }
    Ok(0)
}

/// Print the algebraic-Riccati ground truth for the linear benchmark.
pub fn cmd_riccati(model_id: &str) -> Result<i32> {
    if model_id != "aircraft" {
        return Err(Error::Contract(format!("`{model_id}` is not a linear model")));
    }
    let sol = solve_care(&hjb_core::dynamics::Aircraft::lqr_problem())?;
    println!("hjb-riccati v1");
    println!("model aircraft");
    for i in 0..3 {
        println!(
            "P[{i}] {} {} {}",
            sol.p[(i, 0)],
            sol.p[(i, 1)],
            sol.p[(i, 2)]
        );
    }
    println!("K {} {} {}", sol.k[(0, 0)], sol.k[(0, 1)], sol.k[(0, 2)]);
    println!(
        "policy_coefficients {} {} {}",
        -sol.k[(0, 0)],
        -sol.k[(0, 1)],
        -sol.k[(0, 2)]
    );
    println!("residual {}", sol.residual);
    let eigs: Vec<String> = sol
        .closed_loop_eigs
        .iter()
        .map(|(re, im)| format!("{re}{}{}i", if *im < 0.0 { "-" } else { "+" }, im.abs()))
        .collect();
    println!("closed_loop_spectrum {}", eigs.join(" "));
    println!("closed_loop_max_real {}", sol.closed_loop_max_real());
    Ok(0)
}

/// Roll out a checkpointed policy and emit a trajectory CSV.
pub fn cmd_simulate(
    ck_path: &Path,
    model_id: &str,
    x0: Option<Vec<f64>>,
    horizon: f64,
    dt: f64,
    out: Option<PathBuf>,
) -> Result<i32> {
    let ck = checkpoint::load(ck_path)?;
    if ck.model_id != model_id {
        return Err(Error::Contract(format!(
            "checkpoint was trained on `{}`, not `{model_id}`",
            ck.model_id
        )));
    }
    let (_, model) = build_model(model_id)?;
    let x0 = match x0 {
        Some(v) => {
            if v.len() != model.n() {
                return Err(Error::Contract(format!(
                    "--x0 needs {} components",
                    model.n()
                )));
            }
            if !model.in_omega(&v) {
                return Err(Error::Contract("--x0 lies outside the sampling box Ω".into()));
            }
            v
        }
        None => {
            let mut rng = Rng::substream(0, 0x51);
            model.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect()
        }
    };
    let law = PolicyControl { policy: &ck.policy, x_e: model.equilibrium() };
    let traj = sim::rollout(model.as_ref(), &law, &x0, horizon, dt)?;
    let mut csv = String::from("t");
    for i in 0..model.n() {
        let _ = write!(csv, ",x{i}");
    }
    for i in 0..model.m() {
        let _ = write!(csv, ",u{i}");
    }
    csv.push_str(",l\n");
    for k in 0..traj.times.len() {
        let _ = write!(csv, "{}", traj.times[k]);
        for v in &traj.states[k] {
            let _ = write!(csv, ",{v}");
        }
        for v in &traj.controls[k] {
            let _ = write!(csv, ",{v}");
        }
        let _ = writeln!(csv, ",{}", traj.utilities[k]);
    }
    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    eprintln!(
        "cost {} truncated {} steps {}",
        traj.cost,
        traj.truncated,
        traj.times.len()
    );
    Ok(0)
}
