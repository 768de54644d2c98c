//! Continuous algebraic Riccati equation via Kleinman–Newton iteration.
//!
//! Each Newton step solves the policy-evaluation Lyapunov equation
//! `Acᵀ P + P Ac = -(Q + Kᵀ R K)` for the current stabilizing gain by
//! vectorizing it into an n²×n² linear system — dependency-free and entirely
//! adequate at the plant sizes this crate targets. The initial stabilizing
//! gain comes from Bass' construction when the plant itself is unstable.

use crate::linalg::{eigenvalues, eigenvalues_max_real, inverse, solve_linear, Mat};
use crate::{Error, Result};

/// LQR problem data: minimize ∫ xᵀQx + uᵀRu subject to ẋ = Ax + Bu.
#[derive(Clone, Debug)]
pub struct LqrProblem {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
}

/// Stabilizing CARE solution with the state-feedback gain (u = -K x).
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub p: Mat,
    pub k: Mat,
    /// max-abs entry of AᵀP + PA - PBR⁻¹BᵀP + Q.
    pub residual: f64,
    /// Closed-loop spectrum of A - BK.
    pub closed_loop_eigs: Vec<(f64, f64)>,
}

impl RiccatiSolution {
    pub fn closed_loop_max_real(&self) -> f64 {
        self.closed_loop_eigs.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Optimal value V*(x) = xᵀ P x.
    pub fn value(&self, x: &[f64]) -> f64 {
        let px = self.p.matvec(x);
        x.iter().zip(&px).map(|(a, b)| a * b).sum()
    }

    /// Optimal policy u = -K x.
    pub fn policy(&self, x: &[f64]) -> Vec<f64> {
        self.k.matvec(x).iter().map(|v| -v).collect()
    }
}

/// Solve A X + X Aᵀ = C by vectorization (column-major Kronecker identity).
fn solve_lyapunov(a: &Mat, c: &Mat) -> Result<Mat> {
    let n = a.rows;
    let mut big = Mat::zeros(n * n, n * n);
    // vec(A X) = (I ⊗ A) vec(X); vec(X Aᵀ) = (A ⊗ I) vec(X), column-major vec.
    for col in 0..n {
        for i in 0..n {
            for j in 0..n {
                big[(col * n + i, col * n + j)] += a[(i, j)];
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for row in 0..n {
                big[(i * n + row, j * n + row)] += aij;
            }
        }
    }
    let mut rhs = vec![0.0; n * n];
    for col in 0..n {
        for row in 0..n {
            rhs[col * n + row] = c[(row, col)];
        }
    }
    let x = solve_linear(&big, &rhs)?;
    let mut out = Mat::zeros(n, n);
    for col in 0..n {
        for row in 0..n {
            out[(row, col)] = x[col * n + row];
        }
    }
    Ok(out)
}

/// Stabilizing gain via Bass' method: for β > ρ(A), solve
/// (A + βI) Z + Z (A + βI)ᵀ = 2BBᵀ and take K = BᵀZ⁻¹; then
/// (A-BK) Z + Z (A-BK)ᵀ = -2βZ ≺ 0, so A - BK is Hurwitz.
fn stabilizing_gain(a: &Mat, b: &Mat) -> Result<Mat> {
    let n = a.rows;
    let beta = 1.0 + a.norm_inf();
    let mut f = a.clone();
    for i in 0..n {
        f[(i, i)] += beta;
    }
    let bbt = b.matmul(&b.transpose()).scale(2.0);
    let z = solve_lyapunov(&f, &bbt)?;
    let z = z.add(&z.transpose()).scale(0.5);
    let z_inv = inverse(&z).map_err(|_| {
        Error::Solver("Bass stabilization failed: controllability Gramian is singular".into())
    })?;
    Ok(b.transpose().matmul(&z_inv))
}

fn care_residual(p: &Mat, prob: &LqrProblem, r_inv: &Mat) -> f64 {
    let at_p = prob.a.transpose().matmul(p);
    let p_a = p.matmul(&prob.a);
    let pb = p.matmul(&prob.b);
    let quad = pb.matmul(r_inv).matmul(&pb.transpose());
    at_p.add(&p_a).sub(&quad).add(&prob.q).max_abs()
}

/// Stabilizing solution of AᵀP + PA - PBR⁻¹BᵀP + Q = 0.
pub fn solve_care(prob: &LqrProblem) -> Result<RiccatiSolution> {
    let n = prob.a.rows;
    if prob.a.cols != n || prob.b.rows != n || prob.q.rows != n || prob.q.cols != n {
        return Err(Error::Shape { ctx: "solve_care dims", expected: n, got: prob.b.rows });
    }
    let m = prob.b.cols;
    if prob.r.rows != m || prob.r.cols != m {
        return Err(Error::Shape { ctx: "solve_care R", expected: m, got: prob.r.rows });
    }
    let r_inv = inverse(&prob.r)
        .map_err(|_| Error::Solver("R is singular; problem is not positive definite".into()))?;

    let mut k = if eigenvalues_max_real(&prob.a)? < 0.0 {
        Mat::zeros(m, n)
    } else {
        stabilizing_gain(&prob.a, &prob.b)?
    };

    let mut p = Mat::zeros(n, n);
    let mut converged = false;
    for _ in 0..100 {
        let bk = prob.b.matmul(&k);
        let ac = prob.a.sub(&bk);
        if eigenvalues_max_real(&ac)? >= 0.0 {
            return Err(Error::Solver(
                "Kleinman iterate lost stability; (A,B) may not be stabilizable".into(),
            ));
        }
        // Acᵀ P + P Ac = -(Q + Kᵀ R K), solved as Lyapunov in Acᵀ.
        let s = prob.q.add(&k.transpose().matmul(&prob.r).matmul(&k)).scale(-1.0);
        let p_next = solve_lyapunov(&ac.transpose(), &s)?;
        let p_next = p_next.add(&p_next.transpose()).scale(0.5);
        let k_next = r_inv.matmul(&prob.b.transpose()).matmul(&p_next);
        let step = k_next.sub(&k).max_abs();
        p = p_next;
        k = k_next;
        if step < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Solver("Kleinman iteration did not converge".into()));
    }
    let residual = care_residual(&p, prob, &r_inv);
    if residual >= 1e-9 {
        return Err(Error::Solver(format!("CARE residual {residual:e} above 1e-9")));
    }
    let closed_loop = prob.a.sub(&prob.b.matmul(&k));
    let closed_loop_eigs = eigenvalues(&closed_loop)?;
    Ok(RiccatiSolution { p, k, residual, closed_loop_eigs })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar ẋ = -x + u with q = r = 1: CARE root p = √2 - 1.
    #[test]
    fn scalar_closed_form() {
        let prob = LqrProblem {
            a: Mat::from_rows(&[&[-1.0]]),
            b: Mat::from_rows(&[&[1.0]]),
            q: Mat::identity(1),
            r: Mat::identity(1),
        };
        let sol = solve_care(&prob).unwrap();
        assert!((sol.p[(0, 0)] - (2.0f64.sqrt() - 1.0)).abs() < 1e-10);
        assert!(sol.residual < 1e-9);
    }

    /// Unstable double integrator exercises the Bass initialization.
    #[test]
    fn unstable_plant_stabilized() {
        let prob = LqrProblem {
            a: Mat::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]),
            b: Mat::from_rows(&[&[0.0], &[1.0]]),
            q: Mat::identity(2),
            r: Mat::identity(1),
        };
        let sol = solve_care(&prob).unwrap();
        assert!(sol.closed_loop_max_real() < 0.0);
        assert!(sol.residual < 1e-9);
        // Known closed form: P = [[√3, 1], [1, √3]], K = [1, √3].
        assert!((sol.p[(0, 0)] - 3.0f64.sqrt()).abs() < 1e-8);
        assert!((sol.p[(0, 1)] - 1.0).abs() < 1e-8);
        assert!((sol.k[(0, 0)] - 1.0).abs() < 1e-8);
        assert!((sol.k[(0, 1)] - 3.0f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn p_is_symmetric() {
        let prob = LqrProblem {
            a: Mat::from_rows(&[&[0.2, 1.0, 0.0], &[-0.3, -0.5, 0.7], &[0.1, 0.0, -0.9]]),
            b: Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0], &[0.5, 0.2]]),
            q: Mat::identity(3),
            r: Mat::identity(2),
        };
        let sol = solve_care(&prob).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((sol.p[(i, j)] - sol.p[(j, i)]).abs() < 1e-12);
            }
        }
    }
}
