// Critic-only fit vs clamped LQR, then: does argmin_u H(x,u) stabilize?
use hjb_core::dynamics::{ControlLaw, DynamicsModel, SamplerKind, StateSampler, Vehicle, VehicleParams};
use hjb_core::hjb::{batch_grads, GradMode, HamiltonianEval, PolicyFn};
use hjb_core::linalg::Mat;
use hjb_core::mlp::{init_params, MlpSpec, OutputActivation, ValueNetwork};
use hjb_core::optim::{OptKind, Optimizer};
use hjb_core::tape::{Tape, Var};
use hjb_core::Result;

struct ClampedLqr { k: Mat, scale: Vec<f64> }
impl PolicyFn for ClampedLqr {
    type Staged = Var;
    fn stage(&self, tape: &mut Tape) -> Var { tape.leaf(&self.k.data) }
    fn policy_of(&self, tape: &mut Tape, staged: &Var, xs: Var) -> Result<Var> {
        let kx = tape.matvec(*staged, xs, self.k.rows, self.k.cols);
        let neg = tape.neg(kx);
        let t = tape.tanh(neg);
        let s = tape.constant(&self.scale);
        Ok(tape.mul(t, s))
    }
    fn staged_vars(staged: &Var) -> Vec<Var> { vec![*staged] }
    fn policy_plain(&self, xs: &[f64]) -> Vec<f64> {
        self.k.matvec(xs).iter().zip(&self.scale).map(|(v, s)| (-v).tanh() * s).collect()
    }
}

// Greedy control: grid-search u over the actuator box minimizing H(x, u)
// with H = l + gV·f, gV from the fitted value net (plain finite diff).
struct Greedy<'a> { model: &'a Vehicle, value: &'a ValueNetwork }
impl Greedy<'_> {
    fn grad_v(&self, x: &[f64]) -> Vec<f64> {
        let xe = self.model.equilibrium();
        let xs: Vec<f64> = x.iter().zip(xe).map(|(a, b)| a - b).collect();
        let h = 1e-5;
        (0..5).map(|i| {
            let mut p = xs.clone(); p[i] += h;
            let mut m = xs.clone(); m[i] -= h;
            (self.value.eval(&p) - self.value.eval(&m)) / (2.0 * h)
        }).collect()
    }
}
impl ControlLaw for Greedy<'_> {
    fn control(&self, x: &[f64]) -> Vec<f64> {
        let gv = self.grad_v(x);
        let mut best = (f64::INFINITY, vec![0.0, 0.0]);
        for i in 0..=20 {
            for j in 0..=20 {
                let u = vec![-0.35 + 0.035 * i as f64, -3.0 + 0.3 * j as f64];
                if let Ok(f) = self.model.f_plain(x, &u) {
                    let l = self.model.utility_plain(x, &u);
                    let h: f64 = l + gv.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
                    if h < best.0 { best = (h, u); }
                }
            }
        }
        best.1
    }
}

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40000);
    let shrink = std::env::args().nth(2).map(|s| s == "small").unwrap_or(false);
    let omega = if shrink {
        vec![(-0.5, 0.5), (-0.5, 0.5), (10.0, 14.0), (-0.3, 0.3), (-1.0, 1.0)]
    } else {
        vec![(-2.0, 2.0), (-1.0, 1.0), (8.0, 16.0), (-0.5, 0.5), (-3.0, 3.0)]
    };
    let model = Vehicle::with_omega(VehicleParams::default(), omega);
    let gain = if shrink { 300.0 } else { 1500.0 };
    let k = Mat::from_rows(&[
        &[0.05281112353987675, 0.09260382468468459, 0.0, 1.9326633488211513, 0.5345224838248488],
        &[0.0, 0.0, 1.1547005383792517, 0.0, 0.0],
    ]);
    let policy = ClampedLqr { k, scale: vec![0.35, 3.0] };
    let vspec = MlpSpec::new(vec![5, 32, 32, 32, 32, 32, 1], OutputActivation::SoftplusScaled(gain), false).unwrap();
    let mut value = ValueNetwork::new(vspec.clone(), init_params(&vspec, 1)).unwrap();
    let mut opt = Optimizer::new(OptKind::adam_default(), 2e-3, value.params.len());
    let mut sampler = StateSampler::new(&model, SamplerKind::Uniform, 256, 9);
    for step in 0..steps {
        let batch = sampler.sample(&model);
        let be = {
            let eval = HamiltonianEval::new(&model, &value, &policy, 0.1).unwrap();
            batch_grads(&eval, &batch, GradMode::Critic).unwrap()
        };
        opt.step(&mut value.params.flat, &be.grad_value).unwrap();
        if step % 5000 == 0 || step == steps - 1 {
            let mh = be.h_values.iter().map(|h| h.abs()).sum::<f64>() / be.h_values.len() as f64;
            println!("step {:6} L_c {:10.3} |H| {:8.4}", step, be.loss_c, mh);
        }
    }
    let greedy = Greedy { model: &model, value: &value };
    let xe = model.equilibrium().to_vec();
    use hjb_core::rng::Rng;
    let mut rng = Rng::new(42);
    for i in 0..5 {
        let x0: Vec<f64> = model.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect();
        let traj = hjb_core::sim::rollout(&model, &greedy, &x0, 20.0, 0.02).unwrap();
        let dev = |x: &[f64]| x.iter().zip(&xe).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let d0 = dev(&x0);
        let settled = traj.states.iter().position(|x| dev(x) < 0.01 * d0);
        println!("greedy rollout {i}: d0 {d0:.3} C {:.1} settled {:?} trunc {}", traj.cost, settled.map(|p| p as f64 * 0.02), traj.truncated);
        println!("  greedy u(x0) = {:?}  lqr u(x0) = {:?}", greedy.control(&x0), policy.policy_plain(&x0.iter().zip(&xe).map(|(a,b)| a-b).collect::<Vec<_>>()));
    }
}
