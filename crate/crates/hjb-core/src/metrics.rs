//! Training metrics: normalized policy/value errors against an analytic
//! optimum, the mean absolute Hamiltonian, and the per-iteration CSV table.

use crate::hjb::{HamiltonianEval, PolicyFn, ValueFn};
use crate::tape::Tape;
use crate::{Error, Result};

/// One evaluation-point record. Fields without a defined source for the
/// current model stay `None` and serialize as empty CSV cells.
#[derive(Clone, Debug, Default)]
pub struct MetricsRow {
    pub iter: u64,
    pub phase: &'static str,
    pub loss_c: f64,
    pub loss_a: f64,
    pub mean_abs_h: f64,
    pub max_h: f64,
    pub e_pi: Option<f64>,
    pub e_pi_abs: Option<f64>,
    pub e_v: Option<f64>,
    pub e_v_abs: Option<f64>,
    pub cost: Option<f64>,
    pub wall_s: Option<f64>,
    /// Set when a DPI inner loop exited on its iteration cap this round.
    pub capped: bool,
}

pub const CSV_HEADER: &str = "iter,phase,L_c,L_a,mean_abs_H,max_H,e_pi,e_pi_abs,e_V,e_V_abs,C,wall_s";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.phase,
            self.loss_c,
            self.loss_a,
            self.mean_abs_h,
            self.max_h,
            cell(self.e_pi),
            cell(self.e_pi_abs),
            cell(self.e_v),
            cell(self.e_v_abs),
            cell(self.cost),
            cell(self.wall_s),
        )
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

/// Signed and mean-absolute normalized errors of `got` against `want`,
/// normalizer = max(want) − min(want) over the test set.
fn normalized_errors(got: &[f64], want: &[f64], what: &str) -> Result<(f64, f64)> {
    let max = want.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = want.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if range <= 0.0 || !range.is_finite() {
        return Err(Error::Numeric(format!(
            "degenerate normalizer for {what}: max − min = {range}"
        )));
    }
    let n = got.len() as f64;
    let signed = got.iter().zip(want).map(|(g, w)| (g - w) / range).sum::<f64>() / n;
    let magnitude = got.iter().zip(want).map(|(g, w)| ((g - w) / range).abs()).sum::<f64>() / n;
    Ok((signed, magnitude))
}

/// Normalized policy error over a test set: mean of (π − π*)/(max π* − min π*).
/// Returns (signed, mean-absolute). Scalar-control models only (the
/// benchmarks with an analytic optimum have m = 1).
pub fn policy_error<V: ValueFn, P: PolicyFn>(
    eval: &HamiltonianEval<'_, V, P>,
    oracle_policy: &dyn Fn(&[f64]) -> f64,
    test_set: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if test_set.is_empty() {
        return Err(Error::Contract("policy_error needs a non-empty test set".into()));
    }
    let got: Vec<f64> = test_set.iter().map(|x| eval.policy_at(x)[0]).collect();
    let want: Vec<f64> = test_set.iter().map(|x| oracle_policy(x)).collect();
    normalized_errors(&got, &want, "policy error")
}

/// Normalized value error over a test set, analogous to `policy_error`.
pub fn value_error<V: ValueFn, P: PolicyFn>(
    eval: &HamiltonianEval<'_, V, P>,
    oracle_value: &dyn Fn(&[f64]) -> f64,
    test_set: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if test_set.is_empty() {
        return Err(Error::Contract("value_error needs a non-empty test set".into()));
    }
    let got: Vec<f64> = test_set.iter().map(|x| eval.value_at(x)).collect();
    let want: Vec<f64> = test_set.iter().map(|x| oracle_value(x)).collect();
    normalized_errors(&got, &want, "value error")
}

/// Mean |H| over a batch.
pub fn mean_abs_hamiltonian<V: ValueFn, P: PolicyFn>(
    eval: &HamiltonianEval<'_, V, P>,
    batch: &[Vec<f64>],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("mean_abs_hamiltonian needs a non-empty batch".into()));
    }
    let mut tape = Tape::new();
    let mut acc = 0.0;
    for x in batch {
        acc += eval.h_value(&mut tape, x)?.abs();
    }
    Ok(acc / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Aircraft, DynamicsModel};
    use crate::hjb::{LinearPolicy, QuadraticValue};
    use crate::riccati::solve_care;
    use crate::rng::Rng;

    fn setup() -> (Aircraft, QuadraticValue, LinearPolicy, crate::riccati::RiccatiSolution) {
        let sol = solve_care(&Aircraft::lqr_problem()).unwrap();
        (
            Aircraft::new(),
            QuadraticValue::from_riccati(&sol),
            LinearPolicy::from_riccati(&sol),
            sol,
        )
    }

    fn test_states(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect()
    }

    #[test]
    fn zero_error_when_net_equals_oracle() {
        let (model, value, policy, sol) = setup();
        let eval = HamiltonianEval::new(&model, &value, &policy, 0.0).unwrap();
        let states = test_states(500, 1);
        let (e_pi, e_pi_abs) =
            policy_error(&eval, &|x| sol.policy(x)[0], &states).unwrap();
        assert!(e_pi.abs() < 1e-14 && e_pi_abs < 1e-14);
        let (e_v, e_v_abs) = value_error(&eval, &|x| sol.value(x), &states).unwrap();
        assert!(e_v.abs() < 1e-14 && e_v_abs < 1e-14);
    }

    #[test]
    fn constant_offset_shifts_signed_error_exactly() {
        let (model, value, policy, sol) = setup();
        let eval = HamiltonianEval::new(&model, &value, &policy, 0.0).unwrap();
        let states = test_states(500, 2);
        let delta = 0.37;
        let shifted = |x: &[f64]| sol.policy(x)[0] - delta; // oracle lowered by δ
        let want: Vec<f64> = states.iter().map(|x| shifted(x)).collect();
        let range = want.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - want.iter().cloned().fold(f64::INFINITY, f64::min);
        let (e_pi, _) = policy_error(&eval, &shifted, &states).unwrap();
        assert!((e_pi - delta / range).abs() < 1e-12, "e_pi {e_pi} vs {}", delta / range);
    }

    #[test]
    fn value_spot_check_from_quadratic_form() {
        let (_, value, _, _) = setup();
        let v = value.value_plain(&[1.0, 0.0, 0.0]);
        assert!((v - 1.4245).abs() < 1e-3, "V*((1,0,0)) = {v}");
    }

    #[test]
    fn random_net_error_matches_bruteforce() {
        let (model, _, policy, sol) = setup();
        let vspec = crate::mlp::MlpSpec::new(
            vec![3, 8, 1],
            crate::mlp::OutputActivation::Softplus,
            false,
        )
        .unwrap();
        let value = crate::mlp::ValueNetwork::init(vspec, 5).unwrap();
        let eval = HamiltonianEval::new(&model, &value, &policy, 0.1).unwrap();
        let states = test_states(500, 3);
        let (e_v, e_v_abs) = value_error(&eval, &|x| sol.value(x), &states).unwrap();

        // Brute-force re-computation of the displayed formula.
        let vs: Vec<f64> = states.iter().map(|x| value.eval(x)).collect();
        let ws: Vec<f64> = states.iter().map(|x| sol.value(x)).collect();
        let range = ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - ws.iter().cloned().fold(f64::INFINITY, f64::min);
        let n = states.len() as f64;
        let brute: f64 = vs.iter().zip(&ws).map(|(a, b)| (a - b) / range).sum::<f64>() / n;
        let brute_abs: f64 =
            vs.iter().zip(&ws).map(|(a, b)| ((a - b) / range).abs()).sum::<f64>() / n;
        assert!((e_v - brute).abs() < 1e-14);
        assert!((e_v_abs - brute_abs).abs() < 1e-14);
    }

    #[test]
    fn errors_invariant_to_test_set_order() {
        let (model, value, policy, sol) = setup();
        let eval = HamiltonianEval::new(&model, &value, &policy, 0.0).unwrap();
        let mut states = test_states(100, 4);
        let before = policy_error(&eval, &|x| sol.policy(x)[0], &states).unwrap();
        states.reverse();
        let after = policy_error(&eval, &|x| sol.policy(x)[0], &states).unwrap();
        assert!((before.0 - after.0).abs() < 1e-15);
        assert!((before.1 - after.1).abs() < 1e-15);
    }

    #[test]
    fn degenerate_normalizer_is_error() {
        let (model, value, policy, _) = setup();
        let eval = HamiltonianEval::new(&model, &value, &policy, 0.0).unwrap();
        let states = test_states(10, 5);
        assert!(policy_error(&eval, &|_| 1.0, &states).is_err());
    }

    #[test]
    fn mean_abs_h_zero_at_solution_positive_for_zero_value() {
        let (model, value, policy, sol) = setup();
        let eval = HamiltonianEval::new(&model, &value, &policy, 0.0).unwrap();
        let states = test_states(64, 6);
        assert!(mean_abs_hamiltonian(&eval, &states).unwrap() < 1e-6);

        let zero_v = QuadraticValue { p: crate::linalg::Mat::zeros(3, 3) };
        let policy = LinearPolicy::from_riccati(&sol);
        let eval = HamiltonianEval::new(&model, &zero_v, &policy, 0.0).unwrap();
        let mh = mean_abs_hamiltonian(&eval, &states).unwrap();
        let mean_l: f64 = states
            .iter()
            .map(|x| model.utility_plain(x, &eval.policy_at(x)))
            .sum::<f64>()
            / states.len() as f64;
        assert!((mh - mean_l).abs() < 1e-9);
        assert!(mh > 0.0);
    }

    #[test]
    fn csv_row_formats_absent_fields_empty() {
        let row = MetricsRow {
            iter: 10,
            phase: "pi",
            loss_c: 0.5,
            loss_a: -0.1,
            mean_abs_h: 0.3,
            max_h: 0.9,
            ..Default::default()
        };
        let line = row.to_csv_line();
        assert_eq!(line, "10,pi,0.5,-0.1,0.3,0.9,,,,,,");
        assert_eq!(CSV_HEADER.split(',').count(), line.split(',').count());
    }
}
