//! Central finite-difference verification of taped gradients.
//!
//! Every coordinate is first compared against a two-point difference. Where
//! that disagrees by more than [`REFINE_ABOVE`] the coordinate is measured
//! again with the fourth-order five-point stencil at the wider step
//! [`REFINE_STEP`], and that estimate replaces the first. Near-zero
//! gradients of a deep f64 forward are otherwise dominated by the roundoff
//! of the two-point quotient.

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
pub const REL_ERROR_FLOOR: f64 = 1e-8;
pub const REFINE_ABOVE: f64 = 1e-6;
pub const REFINE_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates: usize,
    /// Coordinates measured again with the five-point stencil.
    pub refined: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the gradients `backward` writes for every parameter of `store`
/// against central differences of `f` with step [`FD_STEP`].
pub fn grad_check<F>(store: &ParamStore<f64>, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    let mut analytic_store = store.clone();
    {
        let tape = Tape::new();
        let loss = f(&tape, &analytic_store)?;
        tape.backward(loss, &mut analytic_store)?;
    }

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::with_finite_checks(false);
        f(&tape, s)?.item()
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates: 0,
        refined: 0,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let name = store.get(id).name.clone();
        for i in 0..store.value(id).numel() {
            let analytic = analytic_store.grad(id).data()[i];
            if !analytic.is_finite() {
                return Err(Error::NonFiniteGradient {
                    kind: "analytic",
                    param: name,
                    index: i,
                });
            }
            let orig = probe.value(id).data()[i];
            let mut at = |delta: f64| -> Result<f64> {
                probe.get_mut(id).value.data_mut()[i] = orig + delta;
                let v = eval(&probe);
                probe.get_mut(id).value.data_mut()[i] = orig;
                v
            };
            let mut numeric = (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP);
            if numeric.is_finite() && relative_error(analytic, numeric) > REFINE_ABOVE {
                let h = REFINE_STEP;
                numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
                report.refined += 1;
            }
            if !numeric.is_finite() {
                return Err(Error::NonFiniteGradient {
                    kind: "numeric",
                    param: name,
                    index: i,
                });
            }
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
                report.analytic_at_worst = analytic;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
