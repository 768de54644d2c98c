// Critic-only fit against a fixed stabilizing policy on the vehicle.
use hjb_core::dynamics::{DynamicsModel, SamplerKind, StateSampler, Vehicle, VehicleParams};
use hjb_core::hjb::{batch_grads, GradMode, HamiltonianEval, LinearPolicy};
use hjb_core::linalg::Mat;
use hjb_core::mlp::{init_params, MlpSpec, OutputActivation, ValueNetwork};
use hjb_core::optim::{OptKind, Optimizer};
use hjb_core::tape::{Tape, Var};
use hjb_core::Result;

/// LQR gain squashed through tanh-scaling so controls respect the box.
struct ClampedLqr {
    k: Mat,
    scale: Vec<f64>,
}
impl hjb_core::hjb::PolicyFn for ClampedLqr {
    type Staged = Var;
    fn stage(&self, tape: &mut Tape) -> Var {
        tape.leaf(&self.k.data)
    }
    fn policy_of(&self, tape: &mut Tape, staged: &Var, xs: Var) -> Result<Var> {
        let kx = tape.matvec(*staged, xs, self.k.rows, self.k.cols);
        let neg = tape.neg(kx);
        let t = tape.tanh(neg);
        let s = tape.constant(&self.scale);
        Ok(tape.mul(t, s))
    }
    fn staged_vars(staged: &Var) -> Vec<Var> {
        vec![*staged]
    }
    fn policy_plain(&self, xs: &[f64]) -> Vec<f64> {
        self.k
            .matvec(xs)
            .iter()
            .zip(&self.scale)
            .map(|(v, s)| (-v).tanh() * s)
            .collect()
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8000);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8e-4);
    let widths: Vec<usize> = args.get(3).map(|s| s.split('x').map(|w| w.parse().unwrap()).collect())
        .unwrap_or(vec![32, 32, 32]);
    // Shrunken box so the unclamped LQR policy stays within actuator bounds.
    let omega = vec![(-2.0, 2.0), (-1.0, 1.0), (8.0, 16.0), (-0.5, 0.5), (-3.0, 3.0)];
    let model = Vehicle::with_omega(VehicleParams::default(), omega);
    // Linearized-LQR gain (from probe4, rounded): steering + speed rows.
    let k = Mat::from_rows(&[
        &[0.05281112353987675, 0.09260382468468459, 0.0, 1.9326633488211513, 0.5345224838248488],
        &[0.0, 0.0, 1.1547005383792517, 0.0, 0.0],
    ]);
    let policy = ClampedLqr { k, scale: vec![0.35, 3.0] };
    let _ = LinearPolicy { k: Mat::zeros(1, 1) };
    let mut w = vec![5usize];
    w.extend(widths);
    w.push(1);
    let gain: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let head = if gain == 1.0 { OutputActivation::Softplus } else { OutputActivation::SoftplusScaled(gain) };
    let vspec = MlpSpec::new(w, head, false).unwrap();
    let mut value = ValueNetwork::new(vspec.clone(), init_params(&vspec, 1)).unwrap();
    let mut opt = Optimizer::new(OptKind::adam_default(), lr, value.params.len());
    let mut sampler = StateSampler::new(&model, SamplerKind::Uniform, 256, 9);
    for step in 0..steps {
        let batch = sampler.sample(&model);
        let be = {
            let eval = HamiltonianEval::new(&model, &value, &policy, 0.1).unwrap();
            batch_grads(&eval, &batch, GradMode::Critic).unwrap()
        };
        opt.step(&mut value.params.flat, &be.grad_value).unwrap();
        if step % 1000 == 0 || step == steps - 1 {
            let mh = be.h_values.iter().map(|h| h.abs()).sum::<f64>() / be.h_values.len() as f64;
            let eval = HamiltonianEval::new(&model, &value, &policy, 0.1).unwrap();
            println!("step {:6} L_c {:12.4} |H| {:9.4} V(xe) {:9.3}", step, be.loss_c, mh,
                eval.value_at(model.equilibrium()));
        }
    }
}
