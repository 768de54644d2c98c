//! Finite-difference validation of ∂L_c/∂ω and ∂L_a/∂θ on tiny networks.
//!
//! The critic gradient path runs through ∂²V/∂x∂ω — the recorded value
//! gradient differentiated again — so this is the end-to-end check that the
//! nested sweep composes correctly with the plant expressions.

use hjb_core::dynamics::{Aircraft, DynamicsModel, Vehicle, VehicleParams};
use hjb_core::hjb::{batch_grads, GradMode, HamiltonianEval};
use hjb_core::mlp::{MlpSpec, OutputActivation, PolicyNetwork, ValueNetwork};
use hjb_core::rng::Rng;

fn fd_check(model: &dyn DynamicsModel, policy_output: OutputActivation, seed: u64) {
    let n = model.n();
    let m = model.m();
    let vspec = MlpSpec::new(vec![n, 6, 1], OutputActivation::Softplus, false).unwrap();
    let pspec = MlpSpec::new(vec![n, 6, m], policy_output, false).unwrap();
    let mut rng = Rng::new(seed);
    let batch: Vec<Vec<f64>> = (0..8)
        .map(|_| model.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect())
        .collect();

    for point in 0..20 {
        let value = ValueNetwork::init(vspec.clone(), seed * 100 + point).unwrap();
        let policy = PolicyNetwork::init(pspec.clone(), seed * 100 + point + 50).unwrap();
        let eta = 0.1;

        let eval = HamiltonianEval::new(model, &value, &policy, eta).unwrap();
        let critic = batch_grads(&eval, &batch, GradMode::Critic).unwrap();
        let actor = batch_grads(&eval, &batch, GradMode::Actor).unwrap();

        let h = 1e-5;
        // ∂L_c/∂ω.
        for k in 0..value.params.len() {
            let perturbed = |delta: f64| -> f64 {
                let mut v2 = value.clone();
                v2.params.flat[k] += delta;
                let e = HamiltonianEval::new(model, &v2, &policy, eta).unwrap();
                batch_grads(&e, &batch, GradMode::Critic).unwrap().loss_c
            };
            let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let ad = critic.grad_value[k];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-4, "point {point} dL_c/dω[{k}]: ad={ad} fd={fd} rel={rel}");
        }
        // ∂L_a/∂θ.
        for k in 0..policy.params.len() {
            let perturbed = |delta: f64| -> f64 {
                let mut p2 = policy.clone();
                p2.params.flat[k] += delta;
                let e = HamiltonianEval::new(model, &value, &p2, eta).unwrap();
                batch_grads(&e, &batch, GradMode::Actor).unwrap().loss_a
            };
            let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            let ad = actor.grad_policy[k];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-4, "point {point} dL_a/dθ[{k}]: ad={ad} fd={fd} rel={rel}");
        }
    }
}

#[test]
fn aircraft_loss_gradients_match_fd() {
    let model = Aircraft::new();
    fd_check(&model, OutputActivation::Linear, 1);
}

#[test]
fn vehicle_loss_gradients_match_fd() {
    let model = Vehicle::new(VehicleParams::default());
    fd_check(&model, OutputActivation::TanhScaled(vec![0.35, 3.0]), 2);
}

/// Joint mode must agree with the two single-sided modes.
#[test]
fn joint_mode_matches_split_modes() {
    let model = Aircraft::new();
    let vspec = MlpSpec::new(vec![3, 8, 1], OutputActivation::Softplus, false).unwrap();
    let pspec = MlpSpec::new(vec![3, 8, 1], OutputActivation::Linear, false).unwrap();
    let value = ValueNetwork::init(vspec, 10).unwrap();
    let policy = PolicyNetwork::init(pspec, 11).unwrap();
    let eval = HamiltonianEval::new(&model, &value, &policy, 0.1).unwrap();
    let mut rng = Rng::new(1);
    let batch: Vec<Vec<f64>> =
        (0..16).map(|_| (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect();
    let joint = batch_grads(&eval, &batch, GradMode::Joint).unwrap();
    let critic = batch_grads(&eval, &batch, GradMode::Critic).unwrap();
    assert_eq!(joint.grad_value, critic.grad_value);
    assert_eq!(joint.loss_c, critic.loss_c);
    // Joint's θ-gradient is dL_c/dθ = E[2H dH/dθ], not the actor's dL_a/dθ;
    // both must be finite and generally nonzero.
    assert!(joint.grad_policy.iter().all(|g| g.is_finite()));
    assert!(joint.grad_policy.iter().any(|g| *g != 0.0));
}
