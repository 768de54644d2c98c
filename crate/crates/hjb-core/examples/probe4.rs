use hjb_core::dynamics::{ControlLaw, DynamicsModel, Vehicle, VehicleParams};
use hjb_core::linalg::Mat;
use hjb_core::riccati::{solve_care, LqrProblem};
use hjb_core::rng::Rng;

struct Lqr { k: Mat, xe: Vec<f64> }
impl ControlLaw for Lqr {
    fn control(&self, x: &[f64]) -> Vec<f64> {
        let xs: Vec<f64> = x.iter().zip(&self.xe).map(|(a, b)| a - b).collect();
        self.k.matvec(&xs).iter().map(|v| -v).collect()
    }
}

fn main() {
    let m = Vehicle::new(VehicleParams::default());
    let xe = m.equilibrium().to_vec();
    let ue = vec![0.0, 0.0];
    let h = 1e-6;
    // Linearize f around (x_e, u_e) by central differences.
    let mut a = Mat::zeros(5, 5);
    for j in 0..5 {
        let mut xp = xe.clone(); xp[j] += h;
        let mut xm = xe.clone(); xm[j] -= h;
        let fp = m.f_plain(&xp, &ue).unwrap();
        let fm = m.f_plain(&xm, &ue).unwrap();
        for i in 0..5 { a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h); }
    }
    let mut b = Mat::zeros(5, 2);
    for j in 0..2 {
        let mut up = ue.clone(); up[j] += h;
        let mut um = ue.clone(); um[j] -= h;
        let fp = m.f_plain(&xe, &up).unwrap();
        let fm = m.f_plain(&xe, &um).unwrap();
        for i in 0..5 { b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h); }
    }
    println!("A = {:?}", a.data.chunks(5).collect::<Vec<_>>());
    println!("B = {:?}", b.data.chunks(2).collect::<Vec<_>>());
    let mut q = Mat::zeros(5, 5);
    q[(2, 2)] = 0.4; q[(4, 4)] = 80.0;
    let mut r = Mat::zeros(2, 2);
    r[(0, 0)] = 280.0; r[(1, 1)] = 0.3;
    match solve_care(&LqrProblem { a, b, q, r }) {
        Ok(sol) => {
            println!("K = {:?}", sol.k.data.chunks(5).collect::<Vec<_>>());
            println!("P rows:");
            for i in 0..5 { println!("  {:?}", &sol.p.data[i*5..(i+1)*5]); }
            // dV*/dvy and dV*/dr at (0,0,12,0,0.5): gradient = 2 P xs, xs = (0,0,0,0,0.5)
            let xs = [0.0, 0.0, 0.0, 0.0, 0.5];
            let mut g = [0.0; 5];
            for i in 0..5 { for j in 0..5 { g[i] += 2.0 * sol.p[(i, j)] * xs[j]; } }
            println!("grad V* at y=0.5: {:?}", g);
            println!("dH/ddelta coefficients: 58.7*gvy + 41.5*gr = {}", 58.7*g[0] + 41.5*g[1]);
            println!("closed-loop eigs: {:?}", sol.closed_loop_eigs);
            let law = Lqr { k: sol.k.clone(), xe: xe.clone() };
            let mut rng = Rng::new(42);
            for i in 0..5 {
                let x0: Vec<f64> = m.omega_bounds().iter().map(|(lo, hi)| rng.uniform(*lo, *hi)).collect();
                let traj = hjb_core::sim::rollout(&m, &law, &x0, 20.0, 0.01).unwrap();
                let dev = |x: &[f64]| x.iter().zip(&xe).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                let d0 = dev(&x0);
                let settled = traj.states.iter().position(|x| dev(x) < 0.01 * d0);
                println!("rollout {i}: d0 {d0:.3} C {:.2} settled {:?} truncated {}", traj.cost, settled.map(|k| k as f64 * 0.01), traj.truncated);
            }
        }
        Err(e) => println!("CARE failed: {e}"),
    }
}
