//! Fully-connected value and policy approximators.
//!
//! Hidden layers use ELU activations. The value head is softplus (V ≥ 0
//! everywhere) or, in zero-bias mode, ln(1 + z²) — which keeps V ≥ 0 and
//! additionally pins V(0; ω) = 0 exactly for every ω, since with no biases
//! anywhere every pre-activation at x = 0 is exactly 0. The policy head is
//! linear or tanh scaled into the actuator box.

use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum OutputActivation {
    Linear,
    Softplus,
    /// softplus times a fixed positive gain, for value surfaces whose
    /// magnitude is far from O(1); keeps the learned weights near their
    /// initialization scale.
    SoftplusScaled(f64),
    /// tanh componentwise, multiplied by a positive scale vector; output is
    /// strictly inside ±scale.
    TanhScaled(Vec<f64>),
    /// ln(1 + z²): non-negative, smooth, zero at zero.
    Log1pSquare,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    /// Layer widths, input first, output last (≥ 2 entries).
    pub widths: Vec<usize>,
    pub output: OutputActivation,
    /// Omit biases from every layer (they are structurally zero).
    pub zero_bias: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, output: OutputActivation, zero_bias: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Contract("MlpSpec needs at least input and output widths".into()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Contract("layer widths must be positive".into()));
        }
        if let OutputActivation::SoftplusScaled(gain) = &output {
            if *gain <= 0.0 {
                return Err(Error::Contract("softplus output gain must be positive".into()));
            }
        }
        if let OutputActivation::TanhScaled(scale) = &output {
            let out = *widths.last().unwrap();
            if scale.len() != out {
                return Err(Error::Shape { ctx: "tanh output scale", expected: out, got: scale.len() });
            }
            if scale.iter().any(|&s| s <= 0.0) {
                return Err(Error::Contract("tanh output scale entries must be positive".into()));
            }
        }
        Ok(MlpSpec { widths, output, zero_bias })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    /// (rows, cols, has_bias) per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, bool)> {
        self.widths
            .windows(2)
            .map(|w| (w[1], w[0], !self.zero_bias))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(r, c, b)| r * c + if b { r } else { 0 })
            .sum()
    }
}

/// Flat parameter store for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub flat: Vec<f64>,
    shapes: Vec<(usize, usize, bool)>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        MlpParams { flat: vec![0.0; spec.param_count()], shapes: spec.layer_shapes() }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn shapes(&self) -> &[(usize, usize, bool)] {
        &self.shapes
    }

    /// Offset of layer `i`'s weight block and optional bias block.
    fn layer_offsets(&self) -> Vec<(usize, usize, usize, bool)> {
        let mut out = Vec::with_capacity(self.shapes.len());
        let mut off = 0;
        for &(r, c, b) in &self.shapes {
            out.push((off, r, c, b));
            off += r * c + if b { r } else { 0 };
        }
        out
    }

    /// Multiply one layer's weights and bias by a factor (e.g. to start a
    /// saturating policy head well inside its linear region).
    pub fn scale_layer(&mut self, layer: usize, factor: f64) {
        let (off, r, c, bias) = self.layer_offsets()[layer];
        let end = off + r * c + if bias { r } else { 0 };
        for v in &mut self.flat[off..end] {
            *v *= factor;
        }
    }
}

/// Glorot-uniform initialization: each weight uniform in
/// ±√(6 / (fan_in + fan_out)); biases start at zero.
pub fn init_params(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = Rng::substream(seed, 0x1217);
    let shapes = spec.layer_shapes();
    let mut flat = Vec::with_capacity(spec.param_count());
    for &(rows, cols, bias) in &shapes {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        for _ in 0..rows * cols {
            flat.push(rng.uniform(-bound, bound));
        }
        if bias {
            flat.extend(std::iter::repeat(0.0).take(rows));
        }
    }
    MlpParams { flat, shapes }
}

/// Tape vars of one staged parameter set (one leaf per weight/bias block).
pub struct StagedParams {
    layers: Vec<(Var, Option<Var>)>,
}

impl StagedParams {
    /// All parameter vars in flat-layout order (W1, b1, W2, b2, …).
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (w, b) in &self.layers {
            out.push(*w);
            if let Some(b) = b {
                out.push(*b);
            }
        }
        out
    }

    /// Flatten per-var gradient values (from `Tape::grad` over `vars()`)
    /// back into the flat parameter layout.
    pub fn flatten_grads(&self, tape: &Tape, grads: &[Var]) -> Vec<f64> {
        let mut out = Vec::new();
        for g in grads {
            out.extend_from_slice(tape.value(*g));
        }
        out
    }
}

/// Copy parameters onto the tape as differentiable leaves.
pub fn stage_params(tape: &mut Tape, params: &MlpParams) -> StagedParams {
    let mut layers = Vec::with_capacity(params.shapes.len());
    for (off, r, c, bias) in params.layer_offsets() {
        let w = tape.leaf(&params.flat[off..off + r * c]);
        let b = if bias {
            Some(tape.leaf(&params.flat[off + r * c..off + r * c + r]))
        } else {
            None
        };
        layers.push((w, b));
    }
    StagedParams { layers }
}

/// Forward pass over staged parameters; differentiable w.r.t. both `x` and
/// the staged leaves.
pub fn forward_staged(
    tape: &mut Tape,
    spec: &MlpSpec,
    staged: &StagedParams,
    x: Var,
) -> Result<Var> {
    if x.len() != spec.input_dim() {
        return Err(Error::Shape { ctx: "mlp input", expected: spec.input_dim(), got: x.len() });
    }
    let shapes = spec.layer_shapes();
    let mut h = x;
    let last = shapes.len() - 1;
    for (i, &(rows, cols, _)) in shapes.iter().enumerate() {
        let (w, b) = staged.layers[i];
        let mut z = tape.matvec(w, h, rows, cols);
        if let Some(b) = b {
            z = tape.add(z, b);
        }
        h = if i < last {
            tape.elu(z)
        } else {
            match &spec.output {
                OutputActivation::Linear => z,
                OutputActivation::Softplus => tape.softplus(z),
                OutputActivation::SoftplusScaled(gain) => {
                    let sp = tape.softplus(z);
                    tape.affine(sp, *gain, 0.0)
                }
                OutputActivation::TanhScaled(scale) => {
                    let t = tape.tanh(z);
                    let s = tape.constant(scale);
                    tape.mul(t, s)
                }
                OutputActivation::Log1pSquare => {
                    let sq = tape.square(z);
                    let shifted = tape.affine(sq, 1.0, 1.0);
                    tape.ln(shifted)
                }
            }
        };
    }
    Ok(h)
}

/// Convenience: stage + forward in one call.
pub fn forward(tape: &mut Tape, spec: &MlpSpec, params: &MlpParams, x: Var) -> Result<Var> {
    let staged = stage_params(tape, params);
    forward_staged(tape, spec, &staged, x)
}

/// Forward pass without a tape. Loop order matches the taped kernels, so
/// both paths produce bit-identical floats.
pub fn forward_plain(spec: &MlpSpec, params: &MlpParams, x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), spec.input_dim(), "mlp input dim");
    let shapes = spec.layer_shapes();
    let offsets = params.layer_offsets();
    let last = shapes.len() - 1;
    let mut h = x.to_vec();
    for (i, &(rows, cols, bias)) in shapes.iter().enumerate() {
        let (off, ..) = offsets[i];
        let w = &params.flat[off..off + rows * cols];
        let mut z = vec![0.0; rows];
        for r in 0..rows {
            let row = &w[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(&h) {
                acc += wv * xv;
            }
            z[r] = acc;
        }
        if bias {
            let b = &params.flat[off + rows * cols..off + rows * cols + rows];
            for (zv, bv) in z.iter_mut().zip(b) {
                *zv += bv;
            }
        }
        h = if i < last {
            z.iter().map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 }).collect()
        } else {
            match &spec.output {
                OutputActivation::Linear => z,
                OutputActivation::Softplus => {
                    z.iter().map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p()).collect()
                }
                OutputActivation::SoftplusScaled(gain) => z
                    .iter()
                    .map(|&v| gain * (v.max(0.0) + (-v.abs()).exp().ln_1p()))
                    .collect(),
                OutputActivation::TanhScaled(scale) => {
                    z.iter().zip(scale).map(|(&v, &s)| v.tanh() * s).collect()
                }
                OutputActivation::Log1pSquare => z.iter().map(|&v| (v * v).ln_1p()).collect(),
            }
        };
    }
    h
}

/// Value approximator: scalar, non-negative output head.
#[derive(Clone, Debug)]
pub struct ValueNetwork {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl ValueNetwork {
    pub fn new(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        if spec.output_dim() != 1 {
            return Err(Error::Contract("value network output must be scalar".into()));
        }
        match (&spec.output, spec.zero_bias) {
            (OutputActivation::Softplus | OutputActivation::SoftplusScaled(_), false)
            | (OutputActivation::Log1pSquare, _) => {}
            (OutputActivation::Softplus | OutputActivation::SoftplusScaled(_), true) => {
                return Err(Error::Contract(
                    "zero-bias value networks must use the log1p_square head: softplus(0) ≠ 0"
                        .into(),
                ))
            }
            _ => return Err(Error::Contract("value head must be softplus or log1p_square".into())),
        }
        if params.len() != spec.param_count() {
            return Err(Error::Shape {
                ctx: "value params",
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        Ok(ValueNetwork { spec, params })
    }

    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed);
        ValueNetwork::new(spec, params)
    }

    /// V(xs) where xs is the equilibrium-shifted input.
    pub fn eval(&self, xs: &[f64]) -> f64 {
        forward_plain(&self.spec, &self.params, xs)[0]
    }
}

/// Policy approximator: linear or saturated (tanh-scaled) head.
#[derive(Clone, Debug)]
pub struct PolicyNetwork {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl PolicyNetwork {
    pub fn new(spec: MlpSpec, params: MlpParams) -> Result<Self> {
        match &spec.output {
            OutputActivation::Linear | OutputActivation::TanhScaled(_) => {}
            _ => return Err(Error::Contract("policy head must be linear or tanh_scaled".into())),
        }
        if params.len() != spec.param_count() {
            return Err(Error::Shape {
                ctx: "policy params",
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        Ok(PolicyNetwork { spec, params })
    }

    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed);
        PolicyNetwork::new(spec, params)
    }

    pub fn eval(&self, xs: &[f64]) -> Vec<f64> {
        forward_plain(&self.spec, &self.params, xs)
    }
}
