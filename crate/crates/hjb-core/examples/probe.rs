use hjb_core::train::{train, Algorithm, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let alg = if args.get(1).map(|s| s.as_str()) == Some("dpi") { Algorithm::Dpi } else { Algorithm::Dgpi };
    let max: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cap: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut cfg = TrainConfig::aircraft_default(seed);
    cfg.algorithm = alg;
    cfg.max_updates = max;
    cfg.eval_every = 50;
    cfg.stop_when_e_below = Some(0.05);
    cfg.critic_inner_cap = cap;
    let t0 = std::time::Instant::now();
    let res = train(cfg).unwrap();
    println!("stop: {:?} after {} updates (target at {:?}) in {:.1}s; N_a {:?}",
        res.stop_reason, res.updates, res.updates_to_target, t0.elapsed().as_secs_f64(), res.observed_na);
    let rows = &res.metrics;
    for row in rows.iter().step_by((rows.len()/12).max(1)).chain(rows.last()) {
        println!(
            "it {:6} [{:6}] L_c {:10.4} L_a {:9.4} |H| {:8.4} maxH {:8.3} e_pi {:7.4} e_V {:7.4}",
            row.iter, row.phase, row.loss_c, row.loss_a, row.mean_abs_h, row.max_h,
            row.e_pi_abs.unwrap_or(f64::NAN), row.e_v_abs.unwrap_or(f64::NAN)
        );
    }
}
