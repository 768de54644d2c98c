//! Finite-difference validation of the tape.
//!
//! Every gradient the tape produces is checked against a central-difference
//! oracle that only ever evaluates forward passes on fresh tapes, so the two
//! computation paths share nothing but the operator definitions.

use hjb_core::rng::Rng;
use hjb_core::tape::{OpKind, Tape, Var};

/// Relative error with a floor so near-zero entries compare absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite difference of `f` (forward passes only) at `x0`.
fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x0.len());
    let mut xp = x0.to_vec();
    for i in 0..x0.len() {
        xp[i] = x0[i] + h;
        let fp = f(&xp);
        xp[i] = x0[i] - h;
        let fm = f(&xp);
        xp[i] = x0[i];
        g.push((fp - fm) / (2.0 * h));
    }
    g
}

/// Builds a scalar expression from an input vector and checks the tape
/// gradient against finite differences.
fn check(build: &dyn Fn(&mut Tape, Var) -> Var, x0: &[f64], tol: f64, label: &str) {
    let forward = |x: &[f64]| -> f64 {
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let y = build(&mut t, xv);
        t.scalar(y)
    };
    let mut t = Tape::new();
    let xv = t.leaf(x0);
    let y = build(&mut t, xv);
    let g = t.grad(y, &[xv], false).unwrap();
    let g_ad = t.value(g[0]).to_vec();
    let g_fd = fd_grad(&forward, x0, 1e-6);
    for i in 0..x0.len() {
        let e = rel_err(g_ad[i], g_fd[i]);
        assert!(
            e < tol,
            "{label}: component {i}: ad={} fd={} rel_err={e}",
            g_ad[i],
            g_fd[i]
        );
    }
}

fn sample_away_from_kinks(rng: &mut Rng, n: usize) -> Vec<f64> {
    // Magnitudes in [0.2, 1.7] with random sign: clear of 0 (abs/sign/elu
    // second-derivative kinks) and of min2/max2 ties w.p. 1.
    (0..n)
        .map(|_| {
            let m = rng.uniform(0.2, 1.7);
            if rng.next_f64() < 0.5 {
                -m
            } else {
                m
            }
        })
        .collect()
}

#[test]
fn every_opkind_matches_finite_differences() {
    let mut rng = Rng::new(0xD1FF);
    let kinds = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::MatVec { rows: 2, cols: 3 },
        OpKind::Dot,
        OpKind::Neg,
        OpKind::Elu,
        OpKind::Softplus,
        OpKind::Tanh,
        OpKind::Sin,
        OpKind::Cos,
        OpKind::Arctan,
        OpKind::Sqrt,
        OpKind::Abs,
        OpKind::Min2,
        OpKind::Max2,
        OpKind::Sign,
        OpKind::Square,
        OpKind::Scale,
        OpKind::Sum,
    ];
    for kind in kinds {
        for _ in 0..100 {
            // Layout per kind: unary ops read a 3-vector; binary elementwise
            // split the input in halves; matvec uses 6 weights + 3 inputs;
            // scale uses 1 + 3. Everything is reduced to a scalar via a
            // fixed-weight dot so the FD oracle sees one output.
            match kind {
                OpKind::MatVec { .. } => {
                    let x0 = sample_away_from_kinks(&mut rng, 9);
                    check(
                        &|t, xv| {
                            let parts: Vec<Var> = (0..9).map(|i| t.index(xv, i)).collect();
                            let w = t.pack(&parts[0..6]);
                            let x = t.pack(&parts[6..9]);
                            let y = t.apply(kind, &[w, x]).unwrap();
                            let probe = t.constant(&[0.7, -1.3]);
                            t.dot(y, probe)
                        },
                        &x0,
                        1e-5,
                        "matvec",
                    );
                }
                OpKind::Scale => {
                    let x0 = sample_away_from_kinks(&mut rng, 4);
                    check(
                        &|t, xv| {
                            let s = t.index(xv, 0);
                            let parts: Vec<Var> = (1..4).map(|i| t.index(xv, i)).collect();
                            let v = t.pack(&parts);
                            let y = t.apply(kind, &[s, v]).unwrap();
                            let probe = t.constant(&[0.9, 0.4, -0.8]);
                            t.dot(y, probe)
                        },
                        &x0,
                        1e-5,
                        "scale",
                    );
                }
                OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Min2
                | OpKind::Max2 | OpKind::Dot => {
                    let x0 = sample_away_from_kinks(&mut rng, 6);
                    check(
                        &|t, xv| {
                            let parts: Vec<Var> = (0..6).map(|i| t.index(xv, i)).collect();
                            let a = t.pack(&parts[0..3]);
                            let b = t.pack(&parts[3..6]);
                            let y = t.apply(kind, &[a, b]).unwrap();
                            if y.is_scalar() {
                                y
                            } else {
                                let probe = t.constant(&[0.7, -1.3, 0.2]);
                                t.dot(y, probe)
                            }
                        },
                        &x0,
                        1e-5,
                        "binary",
                    );
                }
                _ => {
                    let mut x0 = sample_away_from_kinks(&mut rng, 3);
                    if matches!(kind, OpKind::Sqrt) {
                        for v in &mut x0 {
                            *v = v.abs();
                        }
                    }
                    check(
                        &|t, xv| {
                            let y = t.apply(kind, &[xv]).unwrap();
                            if y.is_scalar() {
                                y
                            } else {
                                let probe = t.constant(&[0.7, -1.3, 0.2]);
                                t.dot(y, probe)
                            }
                        },
                        &x0,
                        1e-5,
                        "unary",
                    );
                }
            }
        }
    }
}

/// grad(grad(·)) on a composite expression vs finite differences of the
/// first gradient.
#[test]
fn nested_grad_matches_fd_of_first_gradient() {
    let mut rng = Rng::new(0x5EC0);
    // f(x) = softplus(x0·tanh(x1) + sin(x2)·x0²); check ∂/∂x_k (∂f/∂x_0).
    let first_grad = |x: &[f64]| -> f64 {
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let x0 = t.index(xv, 0);
        let x1 = t.index(xv, 1);
        let x2 = t.index(xv, 2);
        let th = t.tanh(x1);
        let a = t.mul(x0, th);
        let s = t.sin(x2);
        let x0sq = t.square(x0);
        let b = t.mul(s, x0sq);
        let z = t.add(a, b);
        let f = t.softplus(z);
        let g = t.grad(f, &[x0], false).unwrap();
        t.scalar(g[0])
    };
    for _ in 0..50 {
        let x: Vec<f64> = (0..3).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let mut t = Tape::new();
        let xv = t.leaf(&x);
        let x0 = t.index(xv, 0);
        let x1 = t.index(xv, 1);
        let x2 = t.index(xv, 2);
        let th = t.tanh(x1);
        let a = t.mul(x0, th);
        let s = t.sin(x2);
        let x0sq = t.square(x0);
        let b = t.mul(s, x0sq);
        let z = t.add(a, b);
        let f = t.softplus(z);
        let g = t.grad(f, &[x0], true).unwrap();
        let gg = t.grad(g[0], &[xv], false).unwrap();
        let hess_row = t.value(gg[0]).to_vec();
        let fd = fd_grad(&first_grad, &x, 1e-6);
        for k in 0..3 {
            let e = rel_err(hess_row[k], fd[k]);
            assert!(e < 1e-4, "hessian row component {k}: ad={} fd={} rel={e}", hess_row[k], fd[k]);
        }
    }
}

/// Take elements [start, end) of a vector var as a new packed vector.
fn subvec(t: &mut Tape, v: Var, start: usize, end: usize) -> Var {
    let parts: Vec<Var> = (start..end).map(|i| t.index(v, i)).collect();
    t.pack(&parts)
}

/// 2-layer MLP value head built from a flat parameter vector var; returns V.
fn mlp_forward(t: &mut Tape, wv: Var, xv: Var, nin: usize, nh: usize) -> Var {
    let w1 = subvec(t, wv, 0, nh * nin);
    let b1 = subvec(t, wv, nh * nin, nh * nin + nh);
    let w2 = subvec(t, wv, nh * nin + nh, nh * nin + 2 * nh);
    let b2 = t.index(wv, nh * nin + 2 * nh);
    let z1 = t.matvec(w1, xv, nh, nin);
    let z1b = t.add(z1, b1);
    let h = t.elu(z1b);
    let z2 = t.dot(w2, h);
    let z2b = t.add(z2, b2);
    t.softplus(z2b)
}

/// The keystone: ∂/∂ω_k [∂V/∂x_j] for a 2-layer MLP matches central finite
/// differences of ∂V/∂x_j over ω_k (step 1e-6).
#[test]
fn mlp_mixed_second_derivatives_match_fd() {
    let mut rng = Rng::new(0xAB1E);
    let (nin, nh) = (3usize, 8usize);
    let nw = nh * nin + nh + nh + 1; // W1, b1, w2, b2

    // ∂V/∂x_j as a plain function of the flat parameter vector.
    let dv_dx = |w: &[f64], x: &[f64], j: usize| -> f64 {
        let mut t = Tape::new();
        let wv = t.leaf(w);
        let xv = t.leaf(x);
        let v = mlp_forward(&mut t, wv, xv, nin, nh);
        let g = t.grad(v, &[xv], false).unwrap();
        t.value(g[0])[j]
    };

    for trial in 0..5 {
        let w: Vec<f64> = (0..nw).map(|_| rng.uniform(-0.8, 0.8)).collect();
        let x: Vec<f64> = (0..nin).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let j = trial % nin;

        // Tape path: record ∂V/∂x with create_graph, then grad over ω.
        let mut t = Tape::new();
        let wv = t.leaf(&w);
        let xv = t.leaf(&x);
        let v = mlp_forward(&mut t, wv, xv, nin, nh);
        let gx = t.grad(v, &[xv], true).unwrap()[0];
        let gxj = t.index(gx, j);
        let mixed = t.grad(gxj, &[wv], false).unwrap()[0];
        let mixed = t.value(mixed).to_vec();

        // FD oracle over each parameter.
        let f = |wq: &[f64]| dv_dx(wq, &x, j);
        let fd = fd_grad(&f, &w, 1e-6);
        for k in 0..nw {
            let e = rel_err(mixed[k], fd[k]);
            assert!(
                e < 1e-5,
                "trial {trial} param {k}: ad={} fd={} rel={e}",
                mixed[k],
                fd[k]
            );
        }
    }
}
