//! Sectioned key-value run configuration.
//!
//! Four sections: `[model]`, `[networks]`, `[train]`, `[output]`. Unknown
//! keys and unknown sections are rejected so typos cannot silently fall back
//! to defaults. Defaults are the model family's desk-scale settings (see
//! `hjb --help`).

use hjb_core::dynamics::SamplerKind;
use hjb_core::mlp::{MlpSpec, OutputActivation};
use hjb_core::optim::OptKind;
use hjb_core::train::{Algorithm, ModelId, TrainConfig, WarmupExit};
use hjb_core::{Error, Result};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub output_dir: std::path::PathBuf,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

struct RawConfig {
    /// (section, key, value, line)
    entries: Vec<(String, String, String, usize)>,
}

fn parse_sections(text: &str) -> Result<RawConfig> {
    let mut entries = Vec::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, "unterminated section header"))?;
            section = name.trim().to_string();
            if !matches!(section.as_str(), "model" | "networks" | "train" | "output") {
                return Err(parse_err(line_no, format!("unknown section [{section}]")));
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("expected `key = value`, got `{line}`")))?;
        if section.is_empty() {
            return Err(parse_err(line_no, "key outside any [section]"));
        }
        entries.push((section.clone(), key.trim().to_string(), value.trim().to_string(), line_no));
    }
    Ok(RawConfig { entries })
}

impl RawConfig {
    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let pos = self.entries.iter().position(|(s, k, ..)| s == section && k == key)?;
        let (_, _, v, line) = self.entries.remove(pos);
        Some((v, line))
    }
}

fn parse_f64(v: &str, line: usize, key: &str) -> Result<f64> {
    v.parse().map_err(|_| parse_err(line, format!("{key}: expected a number, got `{v}`")))
}

fn parse_u64(v: &str, line: usize, key: &str) -> Result<u64> {
    v.parse().map_err(|_| parse_err(line, format!("{key}: expected an integer, got `{v}`")))
}

fn parse_usize(v: &str, line: usize, key: &str) -> Result<usize> {
    v.parse().map_err(|_| parse_err(line, format!("{key}: expected an integer, got `{v}`")))
}

fn parse_bool(v: &str, line: usize, key: &str) -> Result<bool> {
    v.parse().map_err(|_| parse_err(line, format!("{key}: expected true/false, got `{v}`")))
}

fn parse_widths(v: &str, line: usize, key: &str) -> Result<Vec<usize>> {
    let widths: std::result::Result<Vec<usize>, _> =
        v.split_whitespace().map(str::parse).collect();
    widths.map_err(|_| parse_err(line, format!("{key}: expected widths like `64 64`")))
}

/// `softplus | softplus_scaled:G | log1p_square | linear | tanh_scaled:a,b`
fn parse_output_activation(v: &str, line: usize) -> Result<OutputActivation> {
    let (kind, arg) = match v.split_once(':') {
        Some((k, a)) => (k.trim(), Some(a.trim())),
        None => (v, None),
    };
    match (kind, arg) {
        ("softplus", None) => Ok(OutputActivation::Softplus),
        ("softplus_scaled", Some(a)) => {
            Ok(OutputActivation::SoftplusScaled(parse_f64(a, line, "softplus_scaled gain")?))
        }
        ("log1p_square", None) => Ok(OutputActivation::Log1pSquare),
        ("linear", None) => Ok(OutputActivation::Linear),
        ("tanh_scaled", Some(a)) => {
            let scale: std::result::Result<Vec<f64>, _> =
                a.split(',').map(|s| s.trim().parse()).collect();
            Ok(OutputActivation::TanhScaled(scale.map_err(|_| {
                parse_err(line, "tanh_scaled: expected scales like `0.35,3`")
            })?))
        }
        _ => Err(parse_err(line, format!("unknown output activation `{v}`"))),
    }
}

/// `uniform | rollout:dt,cap | mixed:dt,cap,uniform_fraction`
fn parse_sampler(v: &str, line: usize) -> Result<SamplerKind> {
    let (kind, arg) = match v.split_once(':') {
        Some((k, a)) => (k.trim(), Some(a.trim())),
        None => (v, None),
    };
    let nums_range = |a: &str, min: usize, max: usize| -> Result<Vec<f64>> {
        let vals: std::result::Result<Vec<f64>, _> =
            a.split(',').map(|s| s.trim().parse()).collect();
        let vals = vals.map_err(|_| parse_err(line, "sampler: bad numeric arguments"))?;
        if vals.len() < min || vals.len() > max {
            return Err(parse_err(line, format!("sampler: expected {min}–{max} arguments")));
        }
        Ok(vals)
    };
    match (kind, arg) {
        ("uniform", None) => Ok(SamplerKind::Uniform),
        ("rollout", Some(a)) => {
            let v = nums_range(a, 2, 3)?;
            Ok(SamplerKind::Rollout {
                dt: v[0],
                time_cap: v[1],
                roam_factor: v.get(2).copied().unwrap_or(1.0),
            })
        }
        ("mixed", Some(a)) => {
            let v = nums_range(a, 3, 4)?;
            Ok(SamplerKind::Mixed {
                dt: v[0],
                time_cap: v[1],
                uniform_fraction: v[2],
                roam_factor: v.get(3).copied().unwrap_or(1.0),
            })
        }
        _ => Err(parse_err(line, format!("unknown sampler `{v}`"))),
    }
}

fn parse_omega(v: &str, line: usize, n: usize) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for pair in v.split(',') {
        let parts: Vec<&str> = pair.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(parse_err(line, "omega: expected `lo hi, lo hi, …`"));
        }
        let lo = parse_f64(parts[0], line, "omega")?;
        let hi = parse_f64(parts[1], line, "omega")?;
        if lo >= hi {
            return Err(parse_err(line, format!("omega: lo {lo} must be below hi {hi}")));
        }
        out.push((lo, hi));
    }
    if out.len() != n {
        return Err(parse_err(line, format!("omega: expected {n} ranges, got {}", out.len())));
    }
    Ok(out)
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut raw = parse_sections(text)?;

    let (model_id, _) = raw
        .take("model", "id")
        .ok_or_else(|| parse_err(0, "missing required key `id` in [model]"))?;
    let model = match model_id.as_str() {
        "aircraft" => ModelId::Aircraft,
        "vehicle" => ModelId::Vehicle,
        other => return Err(parse_err(0, format!("unknown model id `{other}`"))),
    };

    let mut cfg = match model {
        ModelId::Aircraft => TrainConfig::aircraft_default(0),
        ModelId::Vehicle => TrainConfig::vehicle_default(0),
    };

    if let Some((v, line)) = raw.take("model", "omega") {
        cfg.omega_override = Some(parse_omega(&v, line, cfg.value_spec.input_dim())?);
    }

    // Networks: hidden widths + output heads, input/output dims implied.
    let n = cfg.value_spec.input_dim();
    let m = cfg.policy_spec.output_dim();
    if let Some((v, line)) = raw.take("networks", "value_hidden") {
        let mut widths = vec![n];
        widths.extend(parse_widths(&v, line, "value_hidden")?);
        widths.push(1);
        cfg.value_spec = MlpSpec::new(widths, cfg.value_spec.output.clone(), cfg.value_spec.zero_bias)
            .map_err(|e| parse_err(line, e.to_string()))?;
    }
    if let Some((v, line)) = raw.take("networks", "value_output") {
        cfg.value_spec.output = parse_output_activation(&v, line)?;
    }
    if let Some((v, line)) = raw.take("networks", "value_zero_bias") {
        let zb = parse_bool(&v, line, "value_zero_bias")?;
        cfg.value_spec =
            MlpSpec::new(cfg.value_spec.widths.clone(), cfg.value_spec.output.clone(), zb)
                .map_err(|e| parse_err(line, e.to_string()))?;
    }
    if let Some((v, line)) = raw.take("networks", "policy_hidden") {
        let mut widths = vec![n];
        widths.extend(parse_widths(&v, line, "policy_hidden")?);
        widths.push(m);
        cfg.policy_spec =
            MlpSpec::new(widths, cfg.policy_spec.output.clone(), cfg.policy_spec.zero_bias)
                .map_err(|e| parse_err(line, e.to_string()))?;
    }
    if let Some((v, line)) = raw.take("networks", "policy_output") {
        cfg.policy_spec.output = parse_output_activation(&v, line)?;
    }

    // Train section.
    let mut seeds: Vec<u64> = vec![1];
    if let Some((v, line)) = raw.take("train", "seeds") {
        let parsed: std::result::Result<Vec<u64>, _> =
            v.split_whitespace().map(str::parse).collect();
        seeds = parsed.map_err(|_| parse_err(line, "seeds: expected integers"))?;
        if seeds.is_empty() {
            return Err(parse_err(line, "seeds: need at least one"));
        }
    }
    if let Some((v, line)) = raw.take("train", "algorithm") {
        cfg.algorithm = match v.as_str() {
            "dpi" => Algorithm::Dpi,
            "dgpi" => Algorithm::Dgpi,
            other => return Err(parse_err(line, format!("unknown algorithm `{other}`"))),
        };
    }
    if let Some((v, line)) = raw.take("train", "batch_size") {
        cfg.batch_size = parse_usize(&v, line, "batch_size")?;
    }
    if let Some((v, line)) = raw.take("train", "lr_critic") {
        cfg.lr_critic = parse_f64(&v, line, "lr_critic")?;
    }
    if let Some((v, line)) = raw.take("train", "lr_actor") {
        cfg.lr_actor = parse_f64(&v, line, "lr_actor")?;
    }
    if let Some((v, line)) = raw.take("train", "lr_warmup") {
        cfg.lr_warmup = parse_f64(&v, line, "lr_warmup")?;
    }
    if let Some((v, line)) = raw.take("train", "optimizer") {
        cfg.optimizer = match v.as_str() {
            "adam" => OptKind::adam_default(),
            "sgd" => OptKind::Sgd,
            other => return Err(parse_err(line, format!("unknown optimizer `{other}`"))),
        };
    }
    if let Some((v, line)) = raw.take("train", "epsilon") {
        cfg.epsilon = parse_f64(&v, line, "epsilon")?;
    }
    if let Some((v, line)) = raw.take("train", "dpi_inner_epsilon") {
        cfg.dpi_inner_epsilon = parse_f64(&v, line, "dpi_inner_epsilon")?;
    }
    if let Some((v, line)) = raw.take("train", "critic_inner_cap") {
        cfg.critic_inner_cap = parse_usize(&v, line, "critic_inner_cap")?;
    }
    if let Some((v, line)) = raw.take("train", "actor_inner_cap") {
        cfg.actor_inner_cap = parse_usize(&v, line, "actor_inner_cap")?;
    }
    if let Some((v, line)) = raw.take("train", "max_updates") {
        cfg.max_updates = parse_u64(&v, line, "max_updates")?;
    }
    if let Some((v, line)) = raw.take("train", "eta") {
        cfg.eta = parse_f64(&v, line, "eta")?;
    }
    if let Some((v, line)) = raw.take("train", "warmup_exit") {
        cfg.warmup_exit = match v.as_str() {
            "mean_h" => WarmupExit::MeanH,
            "max_h" => WarmupExit::MaxH,
            other => return Err(parse_err(line, format!("unknown warmup_exit `{other}`"))),
        };
    }
    if let Some((v, line)) = raw.take("train", "sampler") {
        cfg.sampler = parse_sampler(&v, line)?;
    }
    if let Some((v, line)) = raw.take("train", "test_set_size") {
        cfg.test_set_size = parse_usize(&v, line, "test_set_size")?;
    }
    if let Some((v, line)) = raw.take("train", "stop_when_e_below") {
        cfg.stop_when_e_below = Some(parse_f64(&v, line, "stop_when_e_below")?);
    }
    if let Some((v, line)) = raw.take("train", "policy_head_init_scale") {
        cfg.policy_head_init_scale = parse_f64(&v, line, "policy_head_init_scale")?;
    }
    if let Some((v, line)) = raw.take("train", "log_cost") {
        cfg.log_cost = parse_bool(&v, line, "log_cost")?;
    }
    if let Some((v, line)) = raw.take("train", "cost_horizon") {
        cfg.cost_horizon = parse_f64(&v, line, "cost_horizon")?;
    }
    if let Some((v, line)) = raw.take("train", "cost_dt") {
        cfg.cost_dt = parse_f64(&v, line, "cost_dt")?;
    }
    if let Some((v, line)) = raw.take("train", "admissibility_states") {
        cfg.admissibility_states = parse_usize(&v, line, "admissibility_states")?;
    }
    if let Some((v, line)) = raw.take("train", "admissibility_horizon") {
        cfg.admissibility_horizon = parse_f64(&v, line, "admissibility_horizon")?;
    }
    if let Some((v, line)) = raw.take("train", "admissibility_dt") {
        cfg.admissibility_dt = parse_f64(&v, line, "admissibility_dt")?;
    }
    if let Some((v, line)) = raw.take("train", "timing") {
        cfg.timing = parse_bool(&v, line, "timing")?;
    }

    // Output section.
    let mut output_dir = std::path::PathBuf::from("runs");
    if let Some((v, _)) = raw.take("output", "dir") {
        output_dir = std::path::PathBuf::from(v);
    }
    if let Some((v, line)) = raw.take("output", "eval_every") {
        cfg.eval_every = parse_u64(&v, line, "eval_every")?;
    }

    if let Some((section, key, _, line)) = raw.entries.first() {
        return Err(parse_err(*line, format!("unknown key `{key}` in [{section}]")));
    }

    cfg.seed = seeds[0];
    Ok(RunConfig { train: cfg, seeds, output_dir })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\nid = aircraft\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let rc = parse_run_config(MINIMAL).unwrap();
        assert_eq!(rc.train.model, ModelId::Aircraft);
        assert_eq!(rc.train.batch_size, 256);
        assert_eq!(rc.train.lr_critic, 0.01);
        assert_eq!(rc.seeds, vec![1]);
    }

    #[test]
    fn unknown_key_rejected() {
        let text = "[model]\nid = aircraft\n[train]\nlearningrate = 3\n";
        let err = parse_run_config(text).unwrap_err();
        assert!(err.to_string().contains("learningrate"), "{err}");
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(parse_run_config("[model]\nid = aircraft\n[extra]\nx = 1\n").is_err());
    }

    #[test]
    fn missing_model_id_rejected() {
        assert!(parse_run_config("[train]\nbatch_size = 8\n").is_err());
    }

    #[test]
    fn vehicle_sampler_and_networks_parse() {
        let text = "\
[model]
id = vehicle
omega = -0.5 0.5, -0.5 0.5, 10 14, -0.3 0.3, -1 1

[networks]
value_hidden = 32 32 32
value_output = softplus_scaled:300
policy_hidden = 32 32
policy_output = tanh_scaled:0.35,3

[train]
sampler = rollout:0.01,20
seeds = 3 4

[output]
dir = out/veh
eval_every = 100
";
        let rc = parse_run_config(text).unwrap();
        assert_eq!(rc.train.value_spec.widths, vec![5, 32, 32, 32, 1]);
        assert!(matches!(
            rc.train.value_spec.output,
            OutputActivation::SoftplusScaled(g) if g == 300.0
        ));
        assert!(matches!(rc.train.sampler, SamplerKind::Rollout { .. }));
        assert_eq!(rc.seeds, vec![3, 4]);
        assert_eq!(rc.train.eval_every, 100);
        assert_eq!(rc.train.omega_override.as_ref().unwrap()[2], (10.0, 14.0));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# top comment\n[model]\nid = aircraft # trailing\n\n[train]\nbatch_size = 16\n";
        let rc = parse_run_config(text).unwrap();
        assert_eq!(rc.train.batch_size, 16);
    }
}
