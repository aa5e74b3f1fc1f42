//! Central finite differences, the independent oracle for every backward rule.

use crate::Tensor;

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn numeric_gradient(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Outcome of comparing an analytic gradient with a numeric one.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Largest relative error among elements not excused by `abs_tol`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// Element `i` passes when `|a - n| <= abs_tol` or `|a - n| / max(|a|, |n|) < rel_tol`.
pub fn compare(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_tol: f64) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len());
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        passed: true,
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        let abs = (a - n).abs();
        out.max_abs_error = out.max_abs_error.max(abs);
        if abs <= abs_tol {
            continue;
        }
        let rel = abs / a.abs().max(n.abs());
        out.max_rel_error = out.max_rel_error.max(rel);
        if !(rel < rel_tol) {
            out.passed = false;
        }
    }
    out
}

/// Checks every input gradient of the graph built by `build` against central
/// differences. The scalar probed is `sum(out * R)` for a fixed random `R`,
/// so each output element contributes with a distinct weight.
pub fn check_graph(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut crate::Tape<f64>, &[crate::Var]) -> crate::Var,
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Vec<GradCheck> {
    use rand::{Rng, SeedableRng};

    let probe = |xs: &[Tensor<f64>]| -> (crate::Tape<f64>, Vec<crate::Var>, crate::Var) {
        let mut tape = crate::Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.variable(x.clone())).collect();
        let out = build(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, _, out) = probe(inputs);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let weights = Tensor::from_fn(tape.shape(out), |_| rng.gen_range(-1.0..1.0));
    drop(tape);

    let objective = |xs: &[Tensor<f64>]| -> (crate::Tape<f64>, Vec<crate::Var>, crate::Var) {
        let (mut tape, vars, out) = probe(xs);
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w);
        let loss = tape.sum(prod);
        (tape, vars, loss)
    };

    let (tape, vars, loss) = objective(inputs);
    let grads = tape.backward(loss);
    vars.iter()
        .enumerate()
        .map(|(i, &v)| {
            let analytic = grads
                .wrt(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
            let numeric = numeric_gradient(
                |x| {
                    let mut xs = inputs.to_vec();
                    xs[i] = x.clone();
                    let (tape, _, loss) = objective(&xs);
                    tape.value(loss).item()
                },
                &inputs[i],
                step,
            );
            compare(&analytic, &numeric, rel_tol, abs_tol)
        })
        .collect()
}
