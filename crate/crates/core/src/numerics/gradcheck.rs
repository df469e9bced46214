//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Gradients smaller than this are compared in absolute terms scaled by it,
/// since central differences carry an O(h^2) absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error for each parameter tensor.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares tape gradients of `f` against central differences with step `h`.
///
/// `f` builds a scalar from the parameters placed on a fresh tape; it is
/// called once for the analytic pass and twice per scalar parameter entry.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut per_param = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let mut worst = 0.0_f64;
        for i in 0..params[pi].numel() {
            let orig = params[pi].data()[i];
            work[pi].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        tolerance,
    })
}
