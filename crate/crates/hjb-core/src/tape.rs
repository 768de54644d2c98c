//! Reverse-mode differentiation on an append-only operation tape.
//!
//! Every value is a node holding an `f64` scalar or vector payload in one
//! flat arena. `grad` walks the tape backwards accumulating adjoints; with
//! `create_graph = true` the adjoint computations are themselves recorded as
//! tape nodes, so a second `grad` call over the result yields mixed second
//! derivatives (the ∂²V/∂x∂ω terms the critic loss needs).
//!
//! Non-smooth primitives (`abs`, `min2`, `max2`, `sign`, and the comparison
//! masks backing them) use the subgradient-zero-at-kinks convention and have
//! zero derivative where no classical derivative exists.

use crate::{Error, Result};

/// Handle to a tape node. Only valid against the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: u32,
    len: u32,
}

impl Var {
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len == 1
    }
}

/// Operation kinds accepted by [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    MatVec { rows: usize, cols: usize },
    Dot,
    Neg,
    Elu,
    Softplus,
    Tanh,
    Sin,
    Cos,
    Arctan,
    Sqrt,
    Abs,
    Min2,
    Max2,
    Sign,
    Square,
    Scale,
    Sum,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Abs(u32),
    Sign(u32),
    Square(u32),
    Sqrt(u32),
    Exp(u32),
    Ln(u32),
    Sin(u32),
    Cos(u32),
    Arctan(u32),
    Tanh(u32),
    Elu(u32),
    Softplus(u32),
    Sigmoid(u32),
    Min2(u32, u32),
    Max2(u32, u32),
    /// 1.0 where a < b, else 0.0. Zero derivative everywhere.
    LtMask(u32, u32),
    /// a * x + b elementwise with constant coefficients.
    Affine { x: u32, a: f64, b: f64 },
    /// Scalar s times vector v.
    Scale { s: u32, v: u32 },
    Dot(u32, u32),
    Sum(u32),
    Broadcast { s: u32, len: u32 },
    /// w interpreted as a rows×cols row-major matrix: out = W x.
    MatVec { w: u32, x: u32, rows: u32, cols: u32 },
    /// out = Wᵀ y (length cols).
    MatVecT { w: u32, y: u32, rows: u32, cols: u32 },
    /// Flattened outer product u vᵀ (row-major, |u|·|v| entries).
    OuterFlat { u: u32, v: u32 },
    Index { v: u32, i: u32 },
    /// Vector of `len` zeros with scalar s placed at index i.
    Scatter { s: u32, i: u32, len: u32 },
    /// Concatenate scalar args (ids in the side pool) into a vector.
    Pack { args_start: u32, args_len: u32 },
}

/// Append-only computation graph. Nodes are evaluated eagerly on insertion;
/// evaluation order (and therefore every float) is fixed by insertion order.
#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    spans: Vec<(u32, u32)>,
    vals: Vec<f64>,
    pack_args: Vec<u32>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Drop all nodes but keep allocations for reuse.
    pub fn clear(&mut self) {
        self.ops.clear();
        self.spans.clear();
        self.vals.clear();
        self.pack_args.clear();
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let (off, len) = self.spans[v.id as usize];
        &self.vals[off as usize..(off + len) as usize]
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(v.len, 1);
        self.vals[self.spans[v.id as usize].0 as usize]
    }

    fn push(&mut self, op: Op, len: usize) -> Var {
        let off = self.vals.len() as u32;
        self.vals.resize(self.vals.len() + len, 0.0);
        self.spans.push((off, len as u32));
        self.ops.push(op);
        Var { id: (self.ops.len() - 1) as u32, len: len as u32 }
    }

    fn span(&self, id: u32) -> (usize, usize) {
        let (off, len) = self.spans[id as usize];
        (off as usize, len as usize)
    }

    /// Differentiable input node.
    pub fn leaf(&mut self, values: &[f64]) -> Var {
        let v = self.push(Op::Leaf, values.len());
        let (off, len) = self.span(v.id);
        self.vals[off..off + len].copy_from_slice(values);
        v
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.leaf(&[value])
    }

    /// Non-differentiable constant.
    pub fn constant(&mut self, values: &[f64]) -> Var {
        let v = self.push(Op::Const, values.len());
        let (off, len) = self.span(v.id);
        self.vals[off..off + len].copy_from_slice(values);
        v
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(&[value])
    }

    // ---- elementwise kernels ------------------------------------------

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let out = self.push(op, a.len());
        let (ao, al) = self.span(a.id);
        let (oo, _) = self.span(out.id);
        let (head, tail) = self.vals.split_at_mut(oo);
        for (dst, &src) in tail[..al].iter_mut().zip(&head[ao..ao + al]) {
            *dst = f(src);
        }
        out
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        debug_assert_eq!(a.len, b.len, "elementwise operands must match");
        let out = self.push(op, a.len());
        let (ao, al) = self.span(a.id);
        let (bo, _) = self.span(b.id);
        let (oo, _) = self.span(out.id);
        let (head, tail) = self.vals.split_at_mut(oo);
        for k in 0..al {
            tail[k] = f(head[ao + k], head[bo + k]);
        }
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Add(a.id, b.id), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Sub(a.id, b.id), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Mul(a.id, b.id), a, b, |x, y| x * y)
    }

    /// Elementwise division; zero denominators are a numeric error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bo, bl) = self.span(b.id);
        if self.vals[bo..bo + bl].iter().any(|&v| v == 0.0) {
            return Err(Error::Numeric("division by zero".into()));
        }
        Ok(self.div_unchecked(a, b))
    }

    fn div_unchecked(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Div(a.id, b.id), a, b, |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Op::Neg(a.id), a, |x| -x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Op::Abs(a.id), a, f64::abs)
    }

    pub fn sign(&mut self, a: Var) -> Var {
        self.unary(Op::Sign(a.id), a, |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Op::Square(a.id), a, |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Op::Sqrt(a.id), a, f64::sqrt)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a.id), a, f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(Op::Ln(a.id), a, f64::ln)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(Op::Sin(a.id), a, f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(Op::Cos(a.id), a, f64::cos)
    }

    pub fn arctan(&mut self, a: Var) -> Var {
        self.unary(Op::Arctan(a.id), a, f64::atan)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a.id), a, f64::tanh)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(Op::Elu(a.id), a, |x| if x > 0.0 { x } else { x.exp() - 1.0 })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Op::Softplus(a.id), a, stable_softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid(a.id), a, stable_sigmoid)
    }

    pub fn min2(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Min2(a.id, b.id), a, b, f64::min)
    }

    pub fn max2(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Max2(a.id, b.id), a, b, f64::max)
    }

    fn lt_mask(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::LtMask(a.id, b.id), a, b, |x, y| if x < y { 1.0 } else { 0.0 })
    }

    /// a*x + b with compile-time-constant coefficients.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        self.unary(Op::Affine { x: x.id, a, b }, x, |v| a * v + b)
    }

    /// Scalar `s` times vector `v`.
    pub fn scale(&mut self, s: Var, v: Var) -> Var {
        debug_assert_eq!(s.len, 1, "scale factor must be scalar");
        let sv = self.scalar(s);
        let out = self.push(Op::Scale { s: s.id, v: v.id }, v.len());
        let (vo, vl) = self.span(v.id);
        let (oo, _) = self.span(out.id);
        let (head, tail) = self.vals.split_at_mut(oo);
        for k in 0..vl {
            tail[k] = sv * head[vo + k];
        }
        out
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(a.len, b.len, "dot operands must match");
        let (ao, al) = self.span(a.id);
        let (bo, _) = self.span(b.id);
        let mut acc = 0.0;
        for k in 0..al {
            acc += self.vals[ao + k] * self.vals[bo + k];
        }
        let out = self.push(Op::Dot(a.id, b.id), 1);
        let (oo, _) = self.span(out.id);
        self.vals[oo] = acc;
        out
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let (ao, al) = self.span(a.id);
        let total: f64 = self.vals[ao..ao + al].iter().sum();
        let out = self.push(Op::Sum(a.id), 1);
        let (oo, _) = self.span(out.id);
        self.vals[oo] = total;
        out
    }

    pub fn broadcast(&mut self, s: Var, len: usize) -> Var {
        debug_assert_eq!(s.len, 1);
        let sv = self.scalar(s);
        let out = self.push(Op::Broadcast { s: s.id, len: len as u32 }, len);
        let (oo, _) = self.span(out.id);
        for k in 0..len {
            self.vals[oo + k] = sv;
        }
        out
    }

    /// `w` (rows·cols row-major) times `x` (cols) → rows.
    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        debug_assert_eq!(w.len as usize, rows * cols);
        debug_assert_eq!(x.len as usize, cols);
        let out = self.push(Op::MatVec { w: w.id, x: x.id, rows: rows as u32, cols: cols as u32 }, rows);
        let (wo, _) = self.span(w.id);
        let (xo, _) = self.span(x.id);
        let (oo, _) = self.span(out.id);
        let (head, tail) = self.vals.split_at_mut(oo);
        let xs = &head[xo..xo + cols];
        for i in 0..rows {
            let row = &head[wo + i * cols..wo + (i + 1) * cols];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(xs) {
                acc += wv * xv;
            }
            tail[i] = acc;
        }
        out
    }

    /// `wᵀ y`: w is rows·cols row-major, y has length rows; result length cols.
    pub fn matvec_t(&mut self, w: Var, y: Var, rows: usize, cols: usize) -> Var {
        debug_assert_eq!(w.len as usize, rows * cols);
        debug_assert_eq!(y.len as usize, rows);
        let out = self.push(Op::MatVecT { w: w.id, y: y.id, rows: rows as u32, cols: cols as u32 }, cols);
        let (wo, _) = self.span(w.id);
        let (yo, _) = self.span(y.id);
        let (oo, _) = self.span(out.id);
        let (head, tail) = self.vals.split_at_mut(oo);
        let out_slice = &mut tail[..cols];
        for i in 0..rows {
            let yi = head[yo + i];
            let row = &head[wo + i * cols..wo + (i + 1) * cols];
            for (dst, wv) in out_slice.iter_mut().zip(row) {
                *dst += wv * yi;
            }
        }
        out
    }

    /// Flattened outer product u vᵀ, row-major.
    pub fn outer_flat(&mut self, u: Var, v: Var) -> Var {
        let (r, c) = (u.len as usize, v.len as usize);
        let out = self.push(Op::OuterFlat { u: u.id, v: v.id }, r * c);
        let (uo, _) = self.span(u.id);
        let (vo, _) = self.span(v.id);
        let (oo, _) = self.span(out.id);
        let (head, tail) = self.vals.split_at_mut(oo);
        for i in 0..r {
            let ui = head[uo + i];
            for j in 0..c {
                tail[i * c + j] = ui * head[vo + j];
            }
        }
        out
    }

    /// Scalar extraction v[i].
    pub fn index(&mut self, v: Var, i: usize) -> Var {
        debug_assert!(i < v.len as usize);
        let (vo, _) = self.span(v.id);
        let val = self.vals[vo + i];
        let out = self.push(Op::Index { v: v.id, i: i as u32 }, 1);
        let (oo, _) = self.span(out.id);
        self.vals[oo] = val;
        out
    }

    /// Vector of zeros with scalar s at index i.
    pub fn scatter(&mut self, s: Var, i: usize, len: usize) -> Var {
        debug_assert_eq!(s.len, 1);
        debug_assert!(i < len);
        let sv = self.scalar(s);
        let out = self.push(Op::Scatter { s: s.id, i: i as u32, len: len as u32 }, len);
        let (oo, _) = self.span(out.id);
        self.vals[oo + i] = sv;
        out
    }

    /// Concatenate scalar vars into one vector.
    pub fn pack(&mut self, parts: &[Var]) -> Var {
        let args_start = self.pack_args.len() as u32;
        let mut values = Vec::with_capacity(parts.len());
        for p in parts {
            debug_assert_eq!(p.len, 1, "pack expects scalars");
            values.push(self.scalar(*p));
            self.pack_args.push(p.id);
        }
        let out = self.push(Op::Pack { args_start, args_len: parts.len() as u32 }, parts.len());
        let (oo, _) = self.span(out.id);
        self.vals[oo..oo + parts.len()].copy_from_slice(&values);
        out
    }

    // ---- public generic surface ----------------------------------------

    /// Apply an operation by kind, validating shapes.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let need = match kind {
            OpKind::Neg
            | OpKind::Elu
            | OpKind::Softplus
            | OpKind::Tanh
            | OpKind::Sin
            | OpKind::Cos
            | OpKind::Arctan
            | OpKind::Sqrt
            | OpKind::Abs
            | OpKind::Sign
            | OpKind::Square
            | OpKind::Sum => 1,
            _ => 2,
        };
        if inputs.len() != need {
            return Err(Error::Shape { ctx: "apply arity", expected: need, got: inputs.len() });
        }
        for v in inputs {
            if v.id as usize >= self.ops.len() {
                return Err(Error::Contract("Var does not belong to this tape".into()));
            }
        }
        let same_len = |a: Var, b: Var, ctx: &'static str| -> Result<()> {
            if a.len != b.len {
                return Err(Error::Shape { ctx, expected: a.len as usize, got: b.len as usize });
            }
            Ok(())
        };
        match kind {
            OpKind::Add => {
                same_len(inputs[0], inputs[1], "add")?;
                Ok(self.add(inputs[0], inputs[1]))
            }
            OpKind::Sub => {
                same_len(inputs[0], inputs[1], "sub")?;
                Ok(self.sub(inputs[0], inputs[1]))
            }
            OpKind::Mul => {
                same_len(inputs[0], inputs[1], "mul")?;
                Ok(self.mul(inputs[0], inputs[1]))
            }
            OpKind::Div => {
                same_len(inputs[0], inputs[1], "div")?;
                self.div(inputs[0], inputs[1])
            }
            OpKind::MatVec { rows, cols } => {
                let (w, x) = (inputs[0], inputs[1]);
                if w.len as usize != rows * cols {
                    return Err(Error::Shape { ctx: "matvec weights", expected: rows * cols, got: w.len as usize });
                }
                if x.len as usize != cols {
                    return Err(Error::Shape { ctx: "matvec input", expected: cols, got: x.len as usize });
                }
                Ok(self.matvec(w, x, rows, cols))
            }
            OpKind::Dot => {
                same_len(inputs[0], inputs[1], "dot")?;
                Ok(self.dot(inputs[0], inputs[1]))
            }
            OpKind::Scale => {
                if inputs[0].len != 1 {
                    return Err(Error::Shape { ctx: "scale factor", expected: 1, got: inputs[0].len as usize });
                }
                Ok(self.scale(inputs[0], inputs[1]))
            }
            OpKind::Min2 => {
                same_len(inputs[0], inputs[1], "min2")?;
                Ok(self.min2(inputs[0], inputs[1]))
            }
            OpKind::Max2 => {
                same_len(inputs[0], inputs[1], "max2")?;
                Ok(self.max2(inputs[0], inputs[1]))
            }
            OpKind::Neg => Ok(self.neg(inputs[0])),
            OpKind::Elu => Ok(self.elu(inputs[0])),
            OpKind::Softplus => Ok(self.softplus(inputs[0])),
            OpKind::Tanh => Ok(self.tanh(inputs[0])),
            OpKind::Sin => Ok(self.sin(inputs[0])),
            OpKind::Cos => Ok(self.cos(inputs[0])),
            OpKind::Arctan => Ok(self.arctan(inputs[0])),
            OpKind::Sqrt => Ok(self.sqrt(inputs[0])),
            OpKind::Abs => Ok(self.abs(inputs[0])),
            OpKind::Sign => Ok(self.sign(inputs[0])),
            OpKind::Square => Ok(self.square(inputs[0])),
            OpKind::Sum => Ok(self.sum(inputs[0])),
        }
    }

    // ---- reverse sweeps -------------------------------------------------

    /// Gradients of a scalar `output` with respect to each var in `wrt`.
    ///
    /// With `create_graph = false` the returned vars are detached constants;
    /// with `true` the adjoint computation is recorded on the tape and the
    /// results can be differentiated again.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        if output.len != 1 {
            return Err(Error::Contract(format!(
                "grad output must be scalar, got length {}",
                output.len
            )));
        }
        if output.id as usize >= self.ops.len() {
            return Err(Error::Contract("output Var does not belong to this tape".into()));
        }
        for v in wrt {
            if v.id as usize >= self.ops.len() {
                return Err(Error::Contract("wrt Var does not belong to this tape".into()));
            }
        }
        if create_graph {
            Ok(self.grad_recorded(output, wrt))
        } else {
            Ok(self.grad_values(output, wrt))
        }
    }

    /// Value-only reverse sweep; adjoints never become nodes.
    fn grad_values(&mut self, output: Var, wrt: &[Var]) -> Vec<Var> {
        let n = output.id as usize + 1;
        let (out_off, out_len) = self.span(output.id);
        let adj_len = out_off + out_len;
        let mut adj = vec![0.0f64; adj_len];
        let mut touched = vec![false; n];
        adj[out_off] = 1.0;
        touched[output.id as usize] = true;

        for id in (0..n).rev() {
            if !touched[id] {
                continue;
            }
            let op = self.ops[id];
            let (off, len) = self.span(id as u32);
            // Adjoint slice of this node lives at [off, off+len); contributions
            // flow to strictly earlier spans.
            let (head, gpart) = adj.split_at_mut(off);
            let g: &[f64] = &gpart[..len];
            let vals = &self.vals;
            let touch = |id: u32, touched: &mut Vec<bool>| touched[id as usize] = true;
            match op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    let (ao, _) = self.spans[a as usize];
                    let (bo, _) = self.spans[b as usize];
                    for k in 0..len {
                        head[ao as usize + k] += g[k];
                    }
                    for k in 0..len {
                        head[bo as usize + k] += g[k];
                    }
                    touch(a, &mut touched);
                    touch(b, &mut touched);
                }
                Op::Sub(a, b) => {
                    let (ao, _) = self.spans[a as usize];
                    let (bo, _) = self.spans[b as usize];
                    for k in 0..len {
                        head[ao as usize + k] += g[k];
                    }
                    for k in 0..len {
                        head[bo as usize + k] -= g[k];
                    }
                    touch(a, &mut touched);
                    touch(b, &mut touched);
                }
                Op::Mul(a, b) => {
                    let (ao, _) = self.spans[a as usize];
                    let (bo, _) = self.spans[b as usize];
                    for k in 0..len {
                        head[ao as usize + k] += g[k] * vals[bo as usize + k];
                    }
                    for k in 0..len {
                        head[bo as usize + k] += g[k] * vals[ao as usize + k];
                    }
                    touch(a, &mut touched);
                    touch(b, &mut touched);
                }
                Op::Div(a, b) => {
                    let (ao, _) = self.spans[a as usize];
                    let (bo, _) = self.spans[b as usize];
                    for k in 0..len {
                        let bv = vals[bo as usize + k];
                        head[ao as usize + k] += g[k] / bv;
                    }
                    for k in 0..len {
                        let bv = vals[bo as usize + k];
                        let y = vals[off + k];
                        head[bo as usize + k] -= g[k] * y / bv;
                    }
                    touch(a, &mut touched);
                    touch(b, &mut touched);
                }
                Op::Neg(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        head[ao as usize + k] -= g[k];
                    }
                    touch(a, &mut touched);
                }
                Op::Abs(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        let av = vals[ao as usize + k];
                        let s = if av > 0.0 {
                            1.0
                        } else if av < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        head[ao as usize + k] += g[k] * s;
                    }
                    touch(a, &mut touched);
                }
                Op::Sign(_) | Op::LtMask(_, _) => {}
                Op::Square(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        head[ao as usize + k] += g[k] * 2.0 * vals[ao as usize + k];
                    }
                    touch(a, &mut touched);
                }
                Op::Sqrt(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        head[ao as usize + k] += g[k] * 0.5 / vals[off + k];
                    }
                    touch(a, &mut touched);
                }
                Op::Exp(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        head[ao as usize + k] += g[k] * vals[off + k];
                    }
                    touch(a, &mut touched);
                }
                Op::Ln(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        head[ao as usize + k] += g[k] / vals[ao as usize + k];
                    }
                    touch(a, &mut touched);
                }
                Op::Sin(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        head[ao as usize + k] += g[k] * vals[ao as usize + k].cos();
                    }
                    touch(a, &mut touched);
                }
                Op::Cos(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        head[ao as usize + k] -= g[k] * vals[ao as usize + k].sin();
                    }
                    touch(a, &mut touched);
                }
                Op::Arctan(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        let av = vals[ao as usize + k];
                        head[ao as usize + k] += g[k] / (1.0 + av * av);
                    }
                    touch(a, &mut touched);
                }
                Op::Tanh(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        let y = vals[off + k];
                        head[ao as usize + k] += g[k] * (1.0 - y * y);
                    }
                    touch(a, &mut touched);
                }
                Op::Elu(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        let av = vals[ao as usize + k];
                        let d = if av > 0.0 { 1.0 } else { av.exp() };
                        head[ao as usize + k] += g[k] * d;
                    }
                    touch(a, &mut touched);
                }
                Op::Softplus(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        head[ao as usize + k] += g[k] * stable_sigmoid(vals[ao as usize + k]);
                    }
                    touch(a, &mut touched);
                }
                Op::Sigmoid(a) => {
                    let (ao, _) = self.spans[a as usize];
                    for k in 0..len {
                        let y = vals[off + k];
                        head[ao as usize + k] += g[k] * y * (1.0 - y);
                    }
                    touch(a, &mut touched);
                }
                Op::Min2(a, b) => {
                    let (ao, _) = self.spans[a as usize];
                    let (bo, _) = self.spans[b as usize];
                    for k in 0..len {
                        let av = vals[ao as usize + k];
                        let bv = vals[bo as usize + k];
                        if av < bv {
                            head[ao as usize + k] += g[k];
                        } else if bv < av {
                            head[bo as usize + k] += g[k];
                        }
                    }
                    touch(a, &mut touched);
                    touch(b, &mut touched);
                }
                Op::Max2(a, b) => {
                    let (ao, _) = self.spans[a as usize];
                    let (bo, _) = self.spans[b as usize];
                    for k in 0..len {
                        let av = vals[ao as usize + k];
                        let bv = vals[bo as usize + k];
                        if av > bv {
                            head[ao as usize + k] += g[k];
                        } else if bv > av {
                            head[bo as usize + k] += g[k];
                        }
                    }
                    touch(a, &mut touched);
                    touch(b, &mut touched);
                }
                Op::Affine { x, a, .. } => {
                    let (xo, _) = self.spans[x as usize];
                    for k in 0..len {
                        head[xo as usize + k] += g[k] * a;
                    }
                    touch(x, &mut touched);
                }
                Op::Scale { s, v } => {
                    let (so, _) = self.spans[s as usize];
                    let (vo, _) = self.spans[v as usize];
                    let sv = vals[so as usize];
                    let mut acc = 0.0;
                    for k in 0..len {
                        acc += g[k] * vals[vo as usize + k];
                        head[vo as usize + k] += g[k] * sv;
                    }
                    head[so as usize] += acc;
                    touch(s, &mut touched);
                    touch(v, &mut touched);
                }
                Op::Dot(a, b) => {
                    let (ao, al) = self.spans[a as usize];
                    let (bo, _) = self.spans[b as usize];
                    let g0 = g[0];
                    for k in 0..al as usize {
                        head[ao as usize + k] += g0 * vals[bo as usize + k];
                    }
                    for k in 0..al as usize {
                        head[bo as usize + k] += g0 * vals[ao as usize + k];
                    }
                    touch(a, &mut touched);
                    touch(b, &mut touched);
                }
                Op::Sum(a) => {
                    let (ao, al) = self.spans[a as usize];
                    let g0 = g[0];
                    for k in 0..al as usize {
                        head[ao as usize + k] += g0;
                    }
                    touch(a, &mut touched);
                }
                Op::Broadcast { s, .. } => {
                    let (so, _) = self.spans[s as usize];
                    head[so as usize] += g.iter().sum::<f64>();
                    touch(s, &mut touched);
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (wo, _) = self.spans[w as usize];
                    let (xo, _) = self.spans[x as usize];
                    let (rows, cols) = (rows as usize, cols as usize);
                    for i in 0..rows {
                        let gi = g[i];
                        let base = wo as usize + i * cols;
                        for j in 0..cols {
                            head[base + j] += gi * vals[xo as usize + j];
                        }
                    }
                    for i in 0..rows {
                        let gi = g[i];
                        let base = wo as usize + i * cols;
                        for j in 0..cols {
                            head[xo as usize + j] += vals[base + j] * gi;
                        }
                    }
                    touch(w, &mut touched);
                    touch(x, &mut touched);
                }
                Op::MatVecT { w, y, rows, cols } => {
                    let (wo, _) = self.spans[w as usize];
                    let (yo, _) = self.spans[y as usize];
                    let (rows, cols) = (rows as usize, cols as usize);
                    for i in 0..rows {
                        let yi = vals[yo as usize + i];
                        let base = wo as usize + i * cols;
                        for j in 0..cols {
                            head[base + j] += yi * g[j];
                        }
                    }
                    for i in 0..rows {
                        let base = wo as usize + i * cols;
                        let mut acc = 0.0;
                        for j in 0..cols {
                            acc += vals[base + j] * g[j];
                        }
                        head[yo as usize + i] += acc;
                    }
                    touch(w, &mut touched);
                    touch(y, &mut touched);
                }
                Op::OuterFlat { u, v } => {
                    let (uo, ul) = self.spans[u as usize];
                    let (vo, vl) = self.spans[v as usize];
                    let (r, c) = (ul as usize, vl as usize);
                    for i in 0..r {
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += g[i * c + j] * vals[vo as usize + j];
                        }
                        head[uo as usize + i] += acc;
                    }
                    for j in 0..c {
                        let mut acc = 0.0;
                        for i in 0..r {
                            acc += g[i * c + j] * vals[uo as usize + i];
                        }
                        head[vo as usize + j] += acc;
                    }
                    touch(u, &mut touched);
                    touch(v, &mut touched);
                }
                Op::Index { v, i } => {
                    let (vo, _) = self.spans[v as usize];
                    head[vo as usize + i as usize] += g[0];
                    touch(v, &mut touched);
                }
                Op::Scatter { s, i, .. } => {
                    let (so, _) = self.spans[s as usize];
                    head[so as usize] += g[i as usize];
                    touch(s, &mut touched);
                }
                Op::Pack { args_start, args_len } => {
                    for k in 0..args_len as usize {
                        let part = self.pack_args[args_start as usize + k];
                        let (po, _) = self.spans[part as usize];
                        head[po as usize] += g[k];
                        touch(part, &mut touched);
                    }
                }
            }
        }

        wrt.iter()
            .map(|v| {
                if v.id == output.id {
                    // d output / d output = 1 (scalar case only reaches here)
                    return self.constant(&[1.0]);
                }
                let (off, len) = self.span(v.id);
                if v.id > output.id || !touched[v.id as usize] {
                    return self.constant(&vec![0.0; len]);
                }
                let buf: Vec<f64> = adj[off..off + len].to_vec();
                self.constant(&buf)
            })
            .collect()
    }

    /// Reverse sweep that records every adjoint as a tape node.
    fn grad_recorded(&mut self, output: Var, wrt: &[Var]) -> Vec<Var> {
        let n = output.id as usize + 1;
        let mut adj: Vec<Option<Var>> = vec![None; n];
        let seed = self.constant(&[1.0]);
        adj[output.id as usize] = Some(seed);

        for id in (0..n).rev() {
            let g = match adj[id] {
                Some(g) => g,
                None => continue,
            };
            let op = self.ops[id];
            match op {
                Op::Leaf | Op::Const | Op::Sign(_) | Op::LtMask(_, _) => {}
                Op::Add(a, b) => {
                    self.acc(&mut adj, a, g);
                    self.acc(&mut adj, b, g);
                }
                Op::Sub(a, b) => {
                    let ng = self.neg(g);
                    self.acc(&mut adj, a, g);
                    self.acc(&mut adj, b, ng);
                }
                Op::Mul(a, b) => {
                    let av = self.var_of(a);
                    let bv = self.var_of(b);
                    let ca = self.mul(g, bv);
                    let cb = self.mul(g, av);
                    self.acc(&mut adj, a, ca);
                    self.acc(&mut adj, b, cb);
                }
                Op::Div(a, b) => {
                    let bv = self.var_of(b);
                    let yv = Var { id: id as u32, len: g.len };
                    let ca = self.div_unchecked(g, bv);
                    let gy = self.mul(g, yv);
                    let q = self.div_unchecked(gy, bv);
                    let cb = self.neg(q);
                    self.acc(&mut adj, a, ca);
                    self.acc(&mut adj, b, cb);
                }
                Op::Neg(a) => {
                    let c = self.neg(g);
                    self.acc(&mut adj, a, c);
                }
                Op::Abs(a) => {
                    let av = self.var_of(a);
                    let s = self.sign(av);
                    let c = self.mul(g, s);
                    self.acc(&mut adj, a, c);
                }
                Op::Square(a) => {
                    let av = self.var_of(a);
                    let two_a = self.affine(av, 2.0, 0.0);
                    let c = self.mul(g, two_a);
                    self.acc(&mut adj, a, c);
                }
                Op::Sqrt(a) => {
                    let yv = Var { id: id as u32, len: g.len };
                    let half_g = self.affine(g, 0.5, 0.0);
                    let c = self.div_unchecked(half_g, yv);
                    self.acc(&mut adj, a, c);
                }
                Op::Exp(a) => {
                    let yv = Var { id: id as u32, len: g.len };
                    let c = self.mul(g, yv);
                    self.acc(&mut adj, a, c);
                }
                Op::Ln(a) => {
                    let av = self.var_of(a);
                    let c = self.div_unchecked(g, av);
                    self.acc(&mut adj, a, c);
                }
                Op::Sin(a) => {
                    let av = self.var_of(a);
                    let d = self.cos(av);
                    let c = self.mul(g, d);
                    self.acc(&mut adj, a, c);
                }
                Op::Cos(a) => {
                    let av = self.var_of(a);
                    let s = self.sin(av);
                    let gs = self.mul(g, s);
                    let c = self.neg(gs);
                    self.acc(&mut adj, a, c);
                }
                Op::Arctan(a) => {
                    let av = self.var_of(a);
                    let sq = self.square(av);
                    let denom = self.affine(sq, 1.0, 1.0);
                    let c = self.div_unchecked(g, denom);
                    self.acc(&mut adj, a, c);
                }
                Op::Tanh(a) => {
                    let yv = Var { id: id as u32, len: g.len };
                    let y2 = self.square(yv);
                    let d = self.affine(y2, -1.0, 1.0);
                    let c = self.mul(g, d);
                    self.acc(&mut adj, a, c);
                }
                Op::Elu(a) => {
                    // elu'(x) = exp(min(x, 0)); continuous at 0.
                    let av = self.var_of(a);
                    let zero = self.constant(&vec![0.0; g.len as usize]);
                    let m = self.min2(av, zero);
                    let d = self.exp(m);
                    let c = self.mul(g, d);
                    self.acc(&mut adj, a, c);
                }
                Op::Softplus(a) => {
                    let av = self.var_of(a);
                    let d = self.sigmoid(av);
                    let c = self.mul(g, d);
                    self.acc(&mut adj, a, c);
                }
                Op::Sigmoid(a) => {
                    let yv = Var { id: id as u32, len: g.len };
                    let one_minus = self.affine(yv, -1.0, 1.0);
                    let d = self.mul(yv, one_minus);
                    let c = self.mul(g, d);
                    self.acc(&mut adj, a, c);
                }
                Op::Min2(a, b) => {
                    let av = self.var_of(a);
                    let bv = self.var_of(b);
                    let ma = self.lt_mask(av, bv);
                    let mb = self.lt_mask(bv, av);
                    let ca = self.mul(g, ma);
                    let cb = self.mul(g, mb);
                    self.acc(&mut adj, a, ca);
                    self.acc(&mut adj, b, cb);
                }
                Op::Max2(a, b) => {
                    let av = self.var_of(a);
                    let bv = self.var_of(b);
                    let ma = self.lt_mask(bv, av);
                    let mb = self.lt_mask(av, bv);
                    let ca = self.mul(g, ma);
                    let cb = self.mul(g, mb);
                    self.acc(&mut adj, a, ca);
                    self.acc(&mut adj, b, cb);
                }
                Op::Affine { x, a, .. } => {
                    let c = self.affine(g, a, 0.0);
                    self.acc(&mut adj, x, c);
                }
                Op::Scale { s, v } => {
                    let sv = self.var_of(s);
                    let vv = self.var_of(v);
                    let cs = self.dot(g, vv);
                    let cv = self.scale(sv, g);
                    self.acc(&mut adj, s, cs);
                    self.acc(&mut adj, v, cv);
                }
                Op::Dot(a, b) => {
                    let av = self.var_of(a);
                    let bv = self.var_of(b);
                    let ca = self.scale(g, bv);
                    let cb = self.scale(g, av);
                    self.acc(&mut adj, a, ca);
                    self.acc(&mut adj, b, cb);
                }
                Op::Sum(a) => {
                    let al = self.spans[a as usize].1 as usize;
                    let c = self.broadcast(g, al);
                    self.acc(&mut adj, a, c);
                }
                Op::Broadcast { s, .. } => {
                    let c = self.sum(g);
                    self.acc(&mut adj, s, c);
                }
                Op::MatVec { w, x, rows, cols } => {
                    let xv = self.var_of(x);
                    let wv = self.var_of(w);
                    let cw = self.outer_flat(g, xv);
                    let cx = self.matvec_t(wv, g, rows as usize, cols as usize);
                    self.acc(&mut adj, w, cw);
                    self.acc(&mut adj, x, cx);
                }
                Op::MatVecT { w, y, rows, cols } => {
                    let yv = self.var_of(y);
                    let wv = self.var_of(w);
                    let cw = self.outer_flat(yv, g);
                    let cy = self.matvec(wv, g, rows as usize, cols as usize);
                    self.acc(&mut adj, w, cw);
                    self.acc(&mut adj, y, cy);
                }
                Op::OuterFlat { u, v } => {
                    let uv = self.var_of(u);
                    let vv = self.var_of(v);
                    let (r, c) = (uv.len as usize, vv.len as usize);
                    let cu = self.matvec(g, vv, r, c);
                    let cv = self.matvec_t(g, uv, r, c);
                    self.acc(&mut adj, u, cu);
                    self.acc(&mut adj, v, cv);
                }
                Op::Index { v, i } => {
                    let vl = self.spans[v as usize].1 as usize;
                    let c = self.scatter(g, i as usize, vl);
                    self.acc(&mut adj, v, c);
                }
                Op::Scatter { s, i, .. } => {
                    let c = self.index(g, i as usize);
                    self.acc(&mut adj, s, c);
                }
                Op::Pack { args_start, args_len } => {
                    for k in 0..args_len as usize {
                        let part = self.pack_args[args_start as usize + k];
                        let c = self.index(g, k);
                        self.acc(&mut adj, part, c);
                    }
                }
            }
        }

        wrt.iter()
            .map(|v| match adj.get(v.id as usize).copied().flatten() {
                Some(g) => g,
                None => self.constant(&vec![0.0; v.len as usize]),
            })
            .collect()
    }

    fn var_of(&self, id: u32) -> Var {
        Var { id, len: self.spans[id as usize].1 }
    }

    fn acc(&mut self, adj: &mut [Option<Var>], id: u32, contribution: Var) {
        let slot = &mut adj[id as usize];
        *slot = Some(match *slot {
            Some(prev) => self.add(prev, contribution),
            None => contribution,
        });
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut t = Tape::new();
        let x = t.leaf_scalar(0.0);
        let y = t.softplus(x);
        assert!((t.scalar(y) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn elu_values() {
        let mut t = Tape::new();
        let x = t.leaf(&[0.0, -1.0, 2.0]);
        let y = t.elu(x);
        let v = t.value(y);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(v[2], 2.0);
    }

    #[test]
    fn tanh_zero() {
        let mut t = Tape::new();
        let x = t.leaf_scalar(0.0);
        let y = t.tanh(x);
        assert_eq!(t.scalar(y), 0.0);
        let g = t.grad(y, &[x], false).unwrap();
        assert_eq!(t.scalar(g[0]), 1.0);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf_scalar(3.0);
        let y = t.square(x);
        let g = t.grad(y, &[x], false).unwrap();
        assert_eq!(t.scalar(g[0]), 6.0);
    }

    #[test]
    fn grad_rejects_vector_output() {
        let mut t = Tape::new();
        let x = t.leaf(&[1.0, 2.0]);
        let y = t.neg(x);
        assert!(matches!(t.grad(y, &[x], false), Err(Error::Contract(_))));
    }

    #[test]
    fn div_by_zero_is_numeric_error() {
        let mut t = Tape::new();
        let a = t.leaf_scalar(1.0);
        let b = t.leaf_scalar(0.0);
        assert!(matches!(t.div(a, b), Err(Error::Numeric(_))));
    }

    #[test]
    fn apply_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.leaf(&[1.0, 2.0]);
        let b = t.leaf(&[1.0, 2.0, 3.0]);
        assert!(matches!(t.apply(OpKind::Add, &[a, b]), Err(Error::Shape { .. })));
    }

    #[test]
    fn unrelated_wrt_gets_zero_grad() {
        let mut t = Tape::new();
        let x = t.leaf_scalar(2.0);
        let z = t.leaf(&[5.0, 6.0]);
        let y = t.square(x);
        let g = t.grad(y, &[z], false).unwrap();
        assert_eq!(t.value(g[0]), &[0.0, 0.0]);
        let g2 = t.grad(y, &[z], true).unwrap();
        assert_eq!(t.value(g2[0]), &[0.0, 0.0]);
    }

    #[test]
    fn second_order_square() {
        // d²(x²)/dx² = 2, via grad of recorded grad.
        let mut t = Tape::new();
        let x = t.leaf_scalar(3.0);
        let y = t.square(x);
        let g = t.grad(y, &[x], true).unwrap();
        let g2 = t.grad(g[0], &[x], false).unwrap();
        assert!((t.scalar(g2[0]) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn second_order_mixed_product() {
        // f = a²·b ⇒ ∂f/∂a = 2ab, ∂²f/∂a∂b = 2a.
        let mut t = Tape::new();
        let a = t.leaf_scalar(3.0);
        let b = t.leaf_scalar(5.0);
        let a2 = t.square(a);
        let f = t.mul(a2, b);
        let ga = t.grad(f, &[a], true).unwrap()[0];
        assert!((t.scalar(ga) - 30.0).abs() < 1e-12);
        let gab = t.grad(ga, &[b], false).unwrap()[0];
        assert!((t.scalar(gab) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn determinism_same_graph_twice() {
        let build = || {
            let mut t = Tape::new();
            let x = t.leaf(&[0.3, -0.7, 1.9]);
            let w = t.leaf(&[0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
            let h = t.matvec(w, x, 2, 3);
            let e = t.elu(h);
            let s = t.softplus(e);
            let y = t.sum(s);
            let g = t.grad(y, &[x, w], false).unwrap();
            let mut out = vec![t.scalar(y)];
            out.extend_from_slice(t.value(g[0]));
            out.extend_from_slice(t.value(g[1]));
            out
        };
        let a = build();
        let b = build();
        assert_eq!(a, b, "same insertion order must be bit-identical");
    }
}
