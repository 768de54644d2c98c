//! 3-state linear aircraft plant with identity quadratic costs.

use super::DynamicsModel;
use crate::linalg::Mat;
use crate::riccati::LqrProblem;
use crate::tape::{Tape, Var};
use crate::Result;

const A: [[f64; 3]; 3] = [
    [-1.01887, 0.90506, -0.00215],
    [0.82225, -1.07741, -0.17555],
    [0.0, 0.0, -1.0],
];
const B: [f64; 3] = [0.0, 0.0, 1.0];

pub struct Aircraft {
    omega: Vec<(f64, f64)>,
    x_e: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Aircraft {
    pub fn new() -> Self {
        Aircraft::with_omega(vec![(-2.0, 2.0); 3])
    }

    pub fn with_omega(omega: Vec<(f64, f64)>) -> Self {
        assert_eq!(omega.len(), 3);
        Aircraft {
            omega,
            x_e: vec![0.0; 3],
            lo: vec![f64::NEG_INFINITY],
            hi: vec![f64::INFINITY],
        }
    }

    pub fn a_matrix() -> Mat {
        Mat::from_rows(&[&A[0], &A[1], &A[2]])
    }

    pub fn b_matrix() -> Mat {
        Mat::from_rows(&[&[B[0]], &[B[1]], &[B[2]]])
    }

    /// The plant as an LQR problem (Q = R = I) for the Riccati ground truth.
    pub fn lqr_problem() -> LqrProblem {
        LqrProblem {
            a: Self::a_matrix(),
            b: Self::b_matrix(),
            q: Mat::identity(3),
            r: Mat::identity(1),
        }
    }
}

impl Default for Aircraft {
    fn default() -> Self {
        Aircraft::new()
    }
}

impl DynamicsModel for Aircraft {
    fn n(&self) -> usize {
        3
    }

    fn m(&self) -> usize {
        1
    }

    fn name(&self) -> &'static str {
        "aircraft"
    }

    fn equilibrium(&self) -> &[f64] {
        &self.x_e
    }

    fn control_lo(&self) -> &[f64] {
        &self.lo
    }

    fn control_hi(&self) -> &[f64] {
        &self.hi
    }

    fn omega_bounds(&self) -> &[(f64, f64)] {
        &self.omega
    }

    fn f_tape(&self, tape: &mut Tape, x: Var, u: Var) -> Result<Var> {
        let a = tape.constant(&A.concat());
        let b = tape.constant(&B);
        let ax = tape.matvec(a, x, 3, 3);
        let bu = tape.matvec(b, u, 3, 1);
        Ok(tape.add(ax, bu))
    }

    fn utility_tape(&self, tape: &mut Tape, x: Var, u: Var) -> Result<Var> {
        let xx = tape.dot(x, x);
        let uu = tape.dot(u, u);
        Ok(tape.add(xx, uu))
    }

    fn f_plain(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok((0..3)
            .map(|i| A[i][0] * x[0] + A[i][1] * x[1] + A[i][2] * x[2] + B[i] * u[0])
            .collect())
    }

    fn utility_plain(&self, x: &[f64], u: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>() + u.iter().map(|v| v * v).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn origin_is_equilibrium() {
        let m = Aircraft::new();
        let xdot = m.f_plain(&[0.0; 3], &[0.0]).unwrap();
        assert_eq!(xdot, vec![0.0; 3]);
        assert_eq!(m.utility_plain(&[0.0; 3], &[0.0]), 0.0);
    }

    #[test]
    fn first_state_column() {
        let m = Aircraft::new();
        let xdot = m.f_plain(&[1.0, 0.0, 0.0], &[0.0]).unwrap();
        assert!((xdot[0] + 1.01887).abs() < 1e-12);
        assert!((xdot[1] - 0.82225).abs() < 1e-12);
        assert_eq!(xdot[2], 0.0);
    }

    #[test]
    fn utility_identity_quadratics() {
        let m = Aircraft::new();
        assert_eq!(m.utility_plain(&[1.0, 1.0, 1.0], &[2.0]), 7.0);
    }

    #[test]
    fn f_is_linear() {
        let m = Aircraft::new();
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let x1: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let x2: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let u1 = [rng.uniform(-1.0, 1.0)];
            let u2 = [rng.uniform(-1.0, 1.0)];
            let xs: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
            let us = [u1[0] + u2[0]];
            let lhs = m.f_plain(&xs, &us).unwrap();
            let f1 = m.f_plain(&x1, &u1).unwrap();
            let f2 = m.f_plain(&x2, &u2).unwrap();
            for i in 0..3 {
                assert!((lhs[i] - f1[i] - f2[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn taped_f_matches_plain() {
        let m = Aircraft::new();
        let x = [0.7, -1.1, 0.4];
        let u = [0.3];
        let plain = m.f_plain(&x, &u).unwrap();
        let mut t = Tape::new();
        let xv = t.leaf(&x);
        let uv = t.leaf(&u);
        let f = m.f_tape(&mut t, xv, uv).unwrap();
        assert_eq!(t.value(f), &plain[..]);
    }

    #[test]
    fn df_du_matches_b_column() {
        let m = Aircraft::new();
        let mut t = Tape::new();
        let xv = t.leaf(&[0.5, -0.2, 0.9]);
        let uv = t.leaf(&[0.1]);
        let f = m.f_tape(&mut t, xv, uv).unwrap();
        for i in 0..3 {
            let fi = t.index(f, i);
            let g = t.grad(fi, &[uv], false).unwrap();
            assert!((t.scalar(g[0]) - B[i]).abs() < 1e-14);
        }
    }
}
