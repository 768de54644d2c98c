use hjb_core::dynamics::{ControlLaw, DynamicsModel, SamplerKind, Vehicle, VehicleParams};
use hjb_core::hjb::PolicyControl;
use hjb_core::mlp::{MlpSpec, OutputActivation};
use hjb_core::train::{train, Algorithm, TrainConfig};

fn main() {
    let max: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30000);
    let omega = vec![(-0.5, 0.5), (-0.5, 0.5), (10.0, 14.0), (-0.3, 0.3), (-1.0, 1.0)];
    let gain: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(500.0);
    let roam: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let seed: u64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = TrainConfig::vehicle_default(seed);
    cfg.algorithm = Algorithm::Dgpi;
    cfg.max_updates = max;
    cfg.eval_every = max;
    cfg.lr_critic = 2e-3; cfg.lr_warmup = 2e-3;
    cfg.lr_actor = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(5e-5);
    cfg.value_spec = MlpSpec::new(vec![5, 32, 32, 32, 32, 32, 1], OutputActivation::SoftplusScaled(gain), false).unwrap();
    cfg.policy_spec = MlpSpec::new(vec![5, 32, 32, 32, 32, 32, 2], OutputActivation::TanhScaled(vec![0.35, 3.0]), false).unwrap();
    cfg.omega_override = Some(omega.clone());
    cfg.sampler = SamplerKind::Mixed { dt: 0.01, time_cap: 20.0, uniform_fraction: 0.5, roam_factor: roam };
    if let Some(at) = std::env::args().nth(2).and_then(|s| s.parse::<u64>().ok()) {
        cfg.lr_decay_at = Some(at);
    }
    let res = train(cfg).unwrap();
    let model = Vehicle::with_omega(VehicleParams::default(), omega);
    let xe = model.equilibrium().to_vec();
    let law = PolicyControl { policy: &res.policy, x_e: &xe };
    println!("pi(x_e)    = {:?}", law.control(&xe));
    println!("pi(y=0.5)  = {:?}", law.control(&[0.0, 0.0, 12.0, 0.0, 0.5]));
    println!("pi(y=-0.5) = {:?}", law.control(&[0.0, 0.0, 12.0, 0.0, -0.5]));
    println!("pi(vx=13)  = {:?}", law.control(&[0.0, 0.0, 13.0, 0.0, 0.0]));
    println!("pi(vx=11)  = {:?}", law.control(&[0.0, 0.0, 11.0, 0.0, 0.0]));
    let eval = hjb_core::hjb::HamiltonianEval::new(&model, &res.value, &res.policy, 0.1).unwrap();
    println!("V(xe)={:.2} V(y=.5)={:.2} V(y=-.5)={:.2} V(vx13)={:.2} V(vx11)={:.2}",
        eval.value_at(&xe), eval.value_at(&[0.,0.,12.,0.,0.5]), eval.value_at(&[0.,0.,12.,0.,-0.5]),
        eval.value_at(&[0.,0.,13.,0.,0.]), eval.value_at(&[0.,0.,11.,0.,0.]));
    {
        use hjb_core::rng::Rng;
        let mut rng = Rng::new(42);
        let mut ok = 0;
        for i in 0..5 {
            let x0: Vec<f64> = model.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect();
            let traj = hjb_core::sim::rollout(&model, &law, &x0, 20.0, 0.01).unwrap();
            let dev = |x: &[f64]| x.iter().zip(&xe).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            let d0 = dev(&x0);
            let settled = traj.states.iter().position(|x| dev(x) < 0.01 * d0);
            println!("settle {i}: d0 {d0:.3} C {:.2} at {:?} trunc {}", traj.cost, settled.map(|k| k as f64 * 0.01), traj.truncated);
            if settled.is_some() { ok += 1; }
        }
        println!("settled {ok}/5");
    }
    let x0 = [0.0, 0.0, 12.0, 0.0, 0.5];
    let traj = hjb_core::sim::rollout(&model, &law, &x0, 20.0, 0.01).unwrap();
    println!("C = {:.2}, truncated = {}, len = {}", traj.cost, traj.truncated, traj.times.len());
    for (k, (x, u)) in traj.states.iter().zip(&traj.controls).enumerate() {
        if k % 50 == 0 || k + 1 == traj.states.len() {
            println!("t={:5.2} vy={:7.3} r={:7.3} vx={:7.3} phi={:7.3} y={:8.3} | d={:6.3} ax={:6.3}",
                k as f64 * 0.01, x[0], x[1], x[2], x[3], x[4], u[0], u[1]);
        }
    }
}
