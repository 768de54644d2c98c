use hjb_core::train::{train, Algorithm, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let alg = if args.get(1).map(|s| s.as_str()) == Some("dpi") { Algorithm::Dpi } else { Algorithm::Dgpi };
    let max: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10000);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = TrainConfig::vehicle_default(seed);
    cfg.algorithm = alg;
    if let Some(mult) = args.get(4).and_then(|s| s.parse::<f64>().ok()) {
        cfg.lr_critic *= mult;
        cfg.lr_warmup *= mult;
    }
    if let Some(amult) = args.get(5).and_then(|s| s.parse::<f64>().ok()) {
        cfg.lr_actor *= amult;
    }
    let pure = args.get(6).map(|s| s.starts_with("pkg_roll")).unwrap_or(false);
    let small = args.get(6).map(|s| s.ends_with("small")).unwrap_or(false);
    if pure || args.get(6).map(|s| s == "pkg").unwrap_or(false) {
        use hjb_core::mlp::{MlpSpec, OutputActivation};
        use hjb_core::dynamics::SamplerKind;
        let gain = if small { 300.0 } else { 1500.0 };
        cfg.value_spec = MlpSpec::new(vec![5, 32, 32, 32, 32, 32, 1], OutputActivation::SoftplusScaled(gain), false).unwrap();
        if small {
            cfg.omega_override = Some(vec![(-0.5, 0.5), (-0.5, 0.5), (10.0, 14.0), (-0.3, 0.3), (-1.0, 1.0)]);
        }
        cfg.policy_spec = MlpSpec::new(vec![5, 32, 32, 32, 32, 32, 2], OutputActivation::TanhScaled(vec![0.35, 3.0]), false).unwrap();
        cfg.sampler = if pure { SamplerKind::Rollout { dt: 0.01, time_cap: 20.0, roam_factor: 1.0 } }
            else { SamplerKind::Mixed { dt: 0.01, time_cap: 20.0, uniform_fraction: 0.5, roam_factor: 1.0 } };
    }
    cfg.max_updates = max;
    cfg.eval_every = 250;
    let t0 = std::time::Instant::now();
    let res = train(cfg).unwrap();
    println!("stop: {:?} after {} updates in {:.0}s; N_a {:?}", res.stop_reason, res.updates, t0.elapsed().as_secs_f64(), res.observed_na);
    let rows = &res.metrics;
    for row in rows.iter().step_by((rows.len()/20).max(1)).chain(rows.last()) {
        println!("it {:6} [{:6}] L_c {:11.4} L_a {:9.4} |H| {:9.4} maxH {:9.3} C {:10.3}",
            row.iter, row.phase, row.loss_c, row.loss_a, row.mean_abs_h, row.max_h,
            row.cost.unwrap_or(f64::NAN));
    }
    // settle check from 5 perturbed states
    use hjb_core::dynamics::{DynamicsModel, Vehicle, VehicleParams};
    use hjb_core::hjb::PolicyControl;
    use hjb_core::rng::Rng;
    let model = if small {
        Vehicle::with_omega(VehicleParams::default(), vec![(-0.5, 0.5), (-0.5, 0.5), (10.0, 14.0), (-0.3, 0.3), (-1.0, 1.0)])
    } else { Vehicle::new(VehicleParams::default()) };
    let law = PolicyControl { policy: &res.policy, x_e: model.equilibrium() };
    let mut rng = Rng::new(42);
    let mut ok = 0;
    for i in 0..5 {
        let x0: Vec<f64> = model.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect();
        let traj = hjb_core::sim::rollout(&model, &law, &x0, 20.0, 0.01).unwrap();
        let xe = model.equilibrium();
        let dev = |x: &[f64]| x.iter().zip(xe).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let d0 = dev(&x0);
        let settled = traj.states.iter().position(|x| dev(x) < 0.01 * d0);
        println!("rollout {i}: d0 {:.3} settled at {:?} (truncated {})", d0, settled.map(|k| k as f64 * 0.01), traj.truncated);
        if settled.is_some() { ok += 1; }
    }
    println!("settled {ok}/5");
}
