//! Finite-difference gradient checking.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Outcome for one input.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `‖a − n‖ / max(‖a‖, ‖n‖)`; zero when both vanish.
    pub rel_error: f64,
}

impl CheckResult {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_error < tol
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares the tape gradient of a scalar function with central differences.
///
/// `f` builds the function on a fresh tape from leaves holding `inputs`
/// and returns the scalar output.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Vec<CheckResult>>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(tape.item(out))
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut results = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = vec![0.0; inputs[i].numel()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *n = (plus - minus) / (2.0 * step);
        }
        let rel_error = relative_error(&analytic, &numeric);
        results.push(CheckResult {
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(results)
}
