//! Structured-text checkpoints holding the trained value/policy pair.
//!
//! Floats are written with Rust's shortest-round-trip formatting, so a
//! save/load cycle reproduces every parameter bit-exactly.

use crate::mlp::{MlpParams, MlpSpec, OutputActivation, PolicyNetwork, ValueNetwork};
use crate::{Error, Result};

pub const FORMAT_TAG: &str = "hjb-checkpoint v1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_id: String,
    pub value: ValueNetwork,
    pub policy: PolicyNetwork,
}

fn write_output(out: &mut String, activation: &OutputActivation) {
    match activation {
        OutputActivation::Linear => out.push_str("output linear\n"),
        OutputActivation::Softplus => out.push_str("output softplus\n"),
        OutputActivation::SoftplusScaled(gain) => {
            out.push_str(&format!("output softplus_scaled {gain}\n"))
        }
        OutputActivation::Log1pSquare => out.push_str("output log1p_square\n"),
        OutputActivation::TanhScaled(scale) => {
            out.push_str("output tanh_scaled");
            for s in scale {
                out.push_str(&format!(" {s}"));
            }
            out.push('\n');
        }
    }
}

fn write_section(out: &mut String, name: &str, spec: &MlpSpec, params: &MlpParams) {
    out.push_str(&format!("[{name}]\n"));
    out.push_str("widths");
    for w in &spec.widths {
        out.push_str(&format!(" {w}"));
    }
    out.push('\n');
    write_output(out, &spec.output);
    out.push_str(&format!("zero_bias {}\n", spec.zero_bias));
    out.push_str(&format!("params {}\n", params.flat.len()));
    for p in &params.flat {
        out.push_str(&format!("{p}\n"));
    }
}

pub fn to_string(ck: &Checkpoint) -> String {
    let mut out = String::new();
    out.push_str(FORMAT_TAG);
    out.push('\n');
    out.push_str(&format!("model {}\n", ck.model_id));
    write_section(&mut out, "value", &ck.value.spec, &ck.value.params);
    write_section(&mut out, "policy", &ck.policy.spec, &ck.policy.params);
    out
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Parser<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (idx, raw) in self.lines.by_ref() {
            let line = raw.trim();
            if !line.is_empty() {
                return Ok((idx + 1, line));
            }
        }
        Err(Error::Parse { line: 0, msg: "unexpected end of checkpoint".into() })
    }

    fn expect_kv(&mut self, key: &str) -> Result<(usize, String)> {
        let (n, line) = self.next_line()?;
        match line.strip_prefix(key).map(str::trim) {
            Some(rest) if line.starts_with(key) => Ok((n, rest.to_string())),
            _ => Err(Error::Parse { line: n, msg: format!("expected `{key} …`, got `{line}`") }),
        }
    }
}

fn parse_output(line_no: usize, text: &str) -> Result<OutputActivation> {
    let mut parts = text.split_whitespace();
    let kind = parts.next().unwrap_or("");
    match kind {
        "linear" => Ok(OutputActivation::Linear),
        "softplus" => Ok(OutputActivation::Softplus),
        "softplus_scaled" => {
            let gain: f64 = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse { line: line_no, msg: "bad softplus gain".into() })?;
            Ok(OutputActivation::SoftplusScaled(gain))
        }
        "log1p_square" => Ok(OutputActivation::Log1pSquare),
        "tanh_scaled" => {
            let scale: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let scale = scale
                .map_err(|_| Error::Parse { line: line_no, msg: "bad tanh scale".into() })?;
            Ok(OutputActivation::TanhScaled(scale))
        }
        other => {
            Err(Error::Parse { line: line_no, msg: format!("unknown output activation `{other}`") })
        }
    }
}

fn parse_section(p: &mut Parser<'_>, name: &str) -> Result<(MlpSpec, MlpParams)> {
    let (n, line) = p.next_line()?;
    if line != format!("[{name}]") {
        return Err(Error::Parse { line: n, msg: format!("expected [{name}], got `{line}`") });
    }
    let (n, widths_text) = p.expect_kv("widths")?;
    let widths: std::result::Result<Vec<usize>, _> =
        widths_text.split_whitespace().map(str::parse).collect();
    let widths = widths.map_err(|_| Error::Parse { line: n, msg: "bad widths".into() })?;
    let (n, output_text) = p.expect_kv("output")?;
    let output = parse_output(n, &output_text)?;
    let (n, zb_text) = p.expect_kv("zero_bias")?;
    let zero_bias = zb_text
        .parse::<bool>()
        .map_err(|_| Error::Parse { line: n, msg: "bad zero_bias".into() })?;
    let spec = MlpSpec::new(widths, output, zero_bias)
        .map_err(|e| Error::Parse { line: n, msg: e.to_string() })?;
    let (n, count_text) = p.expect_kv("params")?;
    let count: usize =
        count_text.parse().map_err(|_| Error::Parse { line: n, msg: "bad param count".into() })?;
    if count != spec.param_count() {
        return Err(Error::Parse {
            line: n,
            msg: format!("param count {count} does not match spec ({})", spec.param_count()),
        });
    }
    let mut params = MlpParams::zeros(&spec);
    for i in 0..count {
        let (n, v) = p.next_line()?;
        params.flat[i] = v
            .parse()
            .map_err(|_| Error::Parse { line: n, msg: format!("bad float `{v}`") })?;
    }
    Ok((spec, params))
}

pub fn from_str(text: &str) -> Result<Checkpoint> {
    let mut p = Parser { lines: text.lines().enumerate() };
    let (n, tag) = p.next_line()?;
    if tag != FORMAT_TAG {
        return Err(Error::Parse { line: n, msg: format!("unknown format tag `{tag}`") });
    }
    let (_, model_id) = p.expect_kv("model")?;
    let (vspec, vparams) = parse_section(&mut p, "value")?;
    let (pspec, pparams) = parse_section(&mut p, "policy")?;
    Ok(Checkpoint {
        model_id,
        value: ValueNetwork::new(vspec, vparams)?,
        policy: PolicyNetwork::new(pspec, pparams)?,
    })
}

pub fn save(path: &std::path::Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, to_string(ck))?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::init_params;

    fn sample() -> Checkpoint {
        let vspec =
            MlpSpec::new(vec![3, 8, 1], OutputActivation::SoftplusScaled(250.0), false).unwrap();
        let pspec =
            MlpSpec::new(vec![3, 8, 2], OutputActivation::TanhScaled(vec![0.35, 3.0]), false)
                .unwrap();
        Checkpoint {
            model_id: "aircraft".into(),
            value: ValueNetwork::new(vspec.clone(), init_params(&vspec, 11)).unwrap(),
            policy: PolicyNetwork::new(pspec.clone(), init_params(&pspec, 12)).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let text = to_string(&ck);
        let back = from_str(&text).unwrap();
        assert_eq!(back.model_id, ck.model_id);
        assert_eq!(back.value.spec, ck.value.spec);
        assert_eq!(back.value.params.flat, ck.value.params.flat);
        assert_eq!(back.policy.params.flat, ck.policy.params.flat);
        // And the re-serialization is byte-identical.
        assert_eq!(to_string(&back), text);
    }

    #[test]
    fn truncated_document_is_parse_error() {
        let ck = sample();
        let text = to_string(&ck);
        let cut = &text[..text.len() / 2];
        assert!(matches!(from_str(cut), Err(Error::Parse { .. })));
    }

    #[test]
    fn wrong_tag_rejected() {
        assert!(matches!(from_str("not-a-checkpoint\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn param_count_mismatch_rejected() {
        let ck = sample();
        let n = ck.value.params.len();
        let text = to_string(&ck).replace(
            &format!("params {n}"),
            &format!("params {}", n - 1),
        );
        assert!(from_str(&text).is_err());
    }
}
