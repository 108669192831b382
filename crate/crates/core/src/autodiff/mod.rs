//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every primitive in execution order; [`Tape::backward`]
//! walks it once in reverse. Parameters are leaves created with
//! [`Tape::param`]; constants never receive gradient storage.

mod tape;
mod tensor;

pub use tape::{Gradients, Primitive, Tape, Var};
pub use tensor::{Real, Tensor};

use crate::error::{Result, SageError};

/// Worst coordinate found by [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Denominator floor: below it the comparison is absolute (1e-8 at a 1e-4
/// tolerance), which is where f64 central differences stop resolving.
const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape and the parameter handles (in `params` order)
/// and must return a scalar node.
pub fn grad_check<Func>(f: Func, params: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    Func: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&step) {
        return Err(SageError::InvalidConfig(format!(
            "finite-difference step {step} outside [1e-7, 1e-4]"
        )));
    }
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(SageError::NonFinite {
                op: "grad_check",
                node: out.index(),
            });
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take_or_zeros(v, p.rows(), p.cols()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for idx in 0..p.len() {
            let orig = p.data()[idx];
            work[pi].data_mut()[idx] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[idx] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi].data()[idx];
            let rel = relative_error(a, numeric);
            if rel > report.max_rel_error || (pi == 0 && idx == 0) {
                report = GradCheckReport {
                    max_rel_error: rel.max(report.max_rel_error),
                    param: pi,
                    index: idx,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
