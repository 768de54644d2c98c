use hjb_core::dynamics::{DynamicsModel, Vehicle, VehicleParams};
use hjb_core::hjb::PolicyControl;
use hjb_core::train::{Trainer, TrainConfig, Algorithm};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let max: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(6000);
    let mult: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let mut cfg = TrainConfig::vehicle_default(1);
    cfg.algorithm = Algorithm::Dgpi;
    cfg.max_updates = max;
    cfg.eval_every = max; // minimal eval overhead
    cfg.lr_critic *= mult; cfg.lr_actor *= mult; cfg.lr_warmup *= mult;
    let res = hjb_core::train::train(cfg).unwrap();
    let model = Vehicle::new(VehicleParams::default());
    let xe = model.equilibrium().to_vec();
    let law = PolicyControl { policy: &res.policy, x_e: &xe };
    use hjb_core::dynamics::ControlLaw;
    println!("pi(x_e)      = {:?}", law.control(&xe));
    println!("pi(y=+0.5)   = {:?}", law.control(&[0.0, 0.0, 12.0, 0.0, 0.5]));
    println!("pi(y=-0.5)   = {:?}", law.control(&[0.0, 0.0, 12.0, 0.0, -0.5]));
    println!("pi(vx=13)    = {:?}", law.control(&[0.0, 0.0, 13.0, 0.0, 0.0]));
    println!("pi(vx=11)    = {:?}", law.control(&[0.0, 0.0, 11.0, 0.0, 0.0]));
    println!("pi(phi=0.2)  = {:?}", law.control(&[0.0, 0.0, 12.0, 0.2, 0.0]));
    // V along axes
    let eval = hjb_core::hjb::HamiltonianEval::new(&model, &res.value, &res.policy, 0.1).unwrap();
    println!("V(x_e) = {:.3}", eval.value_at(&xe));
    println!("V(y=1) = {:.3}  V(y=-1) = {:.3}", eval.value_at(&[0.,0.,12.,0.,1.]), eval.value_at(&[0.,0.,12.,0.,-1.]));
    println!("V(vx=14) = {:.3}  V(vx=10) = {:.3}", eval.value_at(&[0.,0.,14.,0.,0.]), eval.value_at(&[0.,0.,10.,0.,0.]));
    // trajectory trace from mild perturbation
    let x0 = [0.0, 0.0, 12.0, 0.0, 1.0];
    let traj = hjb_core::sim::rollout(&model, &law, &x0, 20.0, 0.01).unwrap();
    println!("C = {:.2}, truncated = {}", traj.cost, traj.truncated);
    for (k, (x, u)) in traj.states.iter().zip(&traj.controls).enumerate() {
        if k % 100 == 0 || k == traj.states.len() - 1 {
            println!("t={:5.2} vy={:7.3} r={:7.3} vx={:7.3} phi={:7.3} y={:8.3} | d={:6.4} ax={:6.3}",
                k as f64 * 0.01, x[0], x[1], x[2], x[3], x[4], u[0], u[1]);
        }
    }
}
