use hjb_core::mlp::{MlpSpec, OutputActivation};
use hjb_core::train::{train, Algorithm, TrainConfig, WarmupExit};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let max: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(6000);
    let zero_bias = args.get(2).map(|s| s == "zb").unwrap_or(false);
    let mut cfg = TrainConfig::aircraft_default(1);
    cfg.algorithm = Algorithm::Dgpi;
    cfg.warmup_exit = WarmupExit::MaxH;
    cfg.max_updates = max;
    cfg.eval_every = 200;
    if zero_bias {
        cfg.value_spec = MlpSpec::new(vec![3, 64, 64, 1], OutputActivation::Log1pSquare, true).unwrap();
        cfg.eta = 0.0;
    }
    let res = train(cfg).unwrap();
    println!("stop: {:?} after {} updates; N_a {:?}", res.stop_reason, res.updates, res.observed_na);
    for row in res.metrics.iter() {
        println!("it {:6} [{:6}] L_c {:9.4} L_a {:8.4} maxH {:8.4} e_pi {:6.4} e_V {:6.4}",
            row.iter, row.phase, row.loss_c, row.loss_a, row.max_h,
            row.e_pi_abs.unwrap_or(f64::NAN), row.e_v_abs.unwrap_or(f64::NAN));
    }
}
