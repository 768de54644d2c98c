//! `hjb` — train and inspect continuous-time optimal-control policies.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 training abort.

mod commands;
mod config;

use hjb_core::train::Algorithm;
use std::path::PathBuf;

const HELP: &str = "\
hjb — continuous-time optimal control via Hamiltonian-driven actor-critic training

USAGE:
    hjb train <config.cfg> [--seed N] [--algorithm dpi|dgpi]
    hjb eval <checkpoint> <model-id> [--states N] [--seed N]
    hjb riccati [model-id]
    hjb simulate <checkpoint> <model-id> [--x0 v,v,…] [--horizon S] [--dt S] [--out FILE]

COMMANDS:
    train      Run the configured training (per seed) and write metrics CSV,
               final + best checkpoints, and a run manifest into [output] dir.
    eval       Print metrics for a checkpoint: mean |H|, normalized policy and
               value errors vs the Riccati optimum (aircraft), an
               admissibility report, and a sample closed-loop rollout.
    riccati    Print the stabilizing Riccati solution P, the gain K (u = -Kx),
               the CARE residual, and the closed-loop spectrum (aircraft).
    simulate   Roll out a checkpointed policy and write `t,x…,u…,l` CSV
               (stdout unless --out is given).

CONFIG FILE (sectioned key = value; `#` comments; unknown keys rejected):
    [model]    id = aircraft|vehicle
               omega = lo hi, lo hi, …        (per-state sampling box override)
    [networks] value_hidden  = 64 64          (hidden widths; ELU activations)
               value_output  = softplus | softplus_scaled:G | log1p_square
               value_zero_bias = false        (true pins V(x_e) = 0 exactly)
               policy_hidden = 64 64
               policy_output = linear | tanh_scaled:a,b
    [train]    algorithm = dgpi|dpi     seeds = 1 2 …       batch_size = 256
               lr_critic / lr_actor / lr_warmup              optimizer = adam|sgd
               epsilon = 1e-4           dpi_inner_epsilon = 1e-3
               critic_inner_cap = 200   actor_inner_cap = 50
               max_updates = 30000      eta = 0.1
               warmup_exit = mean_h|max_h
               sampler = uniform | rollout:dt,cap | mixed:dt,cap,frac
               test_set_size = 500      stop_when_e_below = 0.05
               policy_head_init_scale = 1.0
               log_cost = false         cost_horizon = 20    cost_dt = 0.01
               admissibility_states = 16
               admissibility_horizon / admissibility_dt
               timing = false           (true adds wall_s to metrics rows)
    [output]   dir = runs/…             eval_every = 50

DEFAULTS: aircraft → 2×64 nets, softplus/linear heads, Adam 0.01/0.01,
  uniform sampler over [-2,2]^3, eval_every 50.
vehicle → 3×32 nets, softplus/tanh_scaled:0.35,3 heads, Adam 8e-4/2e-4,
  rollout:0.01,20 sampler, eval_every 100, log_cost on,
  policy_head_init_scale 0.05.
";

fn fail_usage(msg: &str) -> ! {
    eprintln!("error: {msg}");
    eprintln!("run `hjb --help` for usage");
    std::process::exit(2);
}

struct Flags {
    positional: Vec<String>,
    options: Vec<(String, String)>,
}

fn parse_flags(args: &[String]) -> Flags {
    let mut positional = Vec::new();
    let mut options = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        if let Some(name) = a.strip_prefix("--") {
            let value = match args.get(i + 1) {
                Some(v) => v.clone(),
                None => fail_usage(&format!("--{name} needs a value")),
            };
            options.push((name.to_string(), value));
            i += 2;
        } else {
            positional.push(a.clone());
            i += 1;
        }
    }
    Flags { positional, options }
}

impl Flags {
    fn get(&self, name: &str) -> Option<&str> {
        self.options
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn reject_unknown(&self, allowed: &[&str]) {
        for (k, _) in &self.options {
            if !allowed.contains(&k.as_str()) {
                fail_usage(&format!("unknown option --{k}"));
            }
        }
    }
}

fn run() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        print!("{HELP}");
        return if args.is_empty() { 2 } else { 0 };
    }
    let cmd = args[0].as_str();
    let flags = parse_flags(&args[1..]);
    let result = match cmd {
        "train" => {
            flags.reject_unknown(&["seed", "algorithm"]);
            let path = match flags.positional.first() {
                Some(p) => PathBuf::from(p),
                None => fail_usage("train needs a config path"),
            };
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => fail_usage(&format!("cannot read {}: {e}", path.display())),
            };
            let mut rc = match config::parse_run_config(&text) {
                Ok(rc) => rc,
                Err(e) => fail_usage(&e.to_string()),
            };
            if let Some(seed) = flags.get("seed") {
                match seed.parse() {
                    Ok(s) => rc.seeds = vec![s],
                    Err(_) => fail_usage("--seed must be an integer"),
                }
            }
            if let Some(alg) = flags.get("algorithm") {
                rc.train.algorithm = match alg {
                    "dpi" => Algorithm::Dpi,
                    "dgpi" => Algorithm::Dgpi,
                    other => fail_usage(&format!("unknown algorithm `{other}`")),
                };
            }
            commands::cmd_train(&rc)
        }
        "eval" => {
            flags.reject_unknown(&["states", "seed"]);
            let (ck, model) = match (flags.positional.first(), flags.positional.get(1)) {
                (Some(c), Some(m)) => (PathBuf::from(c), m.clone()),
                _ => fail_usage("eval needs <checkpoint> <model-id>"),
            };
            let states = match flags.get("states").map(str::parse).transpose() {
                Ok(v) => v.unwrap_or(500),
                Err(_) => fail_usage("--states must be an integer"),
            };
            let seed = match flags.get("seed").map(str::parse).transpose() {
                Ok(v) => v.unwrap_or(0),
                Err(_) => fail_usage("--seed must be an integer"),
            };
            commands::cmd_eval(&ck, &model, states, seed)
        }
        "riccati" => {
            flags.reject_unknown(&[]);
            let model = flags.positional.first().map(String::as_str).unwrap_or("aircraft");
            commands::cmd_riccati(model)
        }
        "simulate" => {
            flags.reject_unknown(&["x0", "horizon", "dt", "out"]);
            let (ck, model) = match (flags.positional.first(), flags.positional.get(1)) {
                (Some(c), Some(m)) => (PathBuf::from(c), m.clone()),
                _ => fail_usage("simulate needs <checkpoint> <model-id>"),
            };
            let x0 = flags.get("x0").map(|v| {
                let parsed: Result<Vec<f64>, _> =
                    v.split(',').map(|s| s.trim().parse()).collect();
                match parsed {
                    Ok(x) => x,
                    Err(_) => fail_usage("--x0 must be comma-separated numbers"),
                }
            });
            let horizon = match flags.get("horizon").map(str::parse).transpose() {
                Ok(v) => v.unwrap_or(20.0),
                Err(_) => fail_usage("--horizon must be a number"),
            };
            let dt = match flags.get("dt").map(str::parse).transpose() {
                Ok(v) => v.unwrap_or(0.01),
                Err(_) => fail_usage("--dt must be a number"),
            };
            let out = flags.get("out").map(PathBuf::from);
            commands::cmd_simulate(&ck, &model, x0, horizon, dt, out)
        }
        other => fail_usage(&format!("unknown command `{other}`")),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                hjb_core::Error::Contract(_) | hjb_core::Error::Parse { .. } => 2,
                _ => 3,
            }
        }
    }
}

fn main() {
    std::process::exit(run());
}
