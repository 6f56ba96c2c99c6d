//! Central finite-difference verification of [`value_and_grad`].

use ndarray::Array2;

use super::graph::{value_and_grad, Graph, Var};
use crate::error::Result;

/// Relative error is measured against `max(|analytic|, |numeric|, FLOOR)`, so
/// vanishing gradients are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
}

/// Compare the tape gradient with central differences of step `h` for every
/// parameter entry. `build` must be deterministic (fix any noise outside it).
pub fn check_gradients<F>(params: &[Array2<f64>], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let (_, analytic) = value_and_grad(params, &build)?;
    let analytic: Vec<Array2<f64>> = analytic
        .into_iter()
        .map(|a| a.as_standard_layout().into_owned())
        .collect();
    let eval = |p: &[Array2<f64>]| -> Result<f64> { Ok(value_and_grad(p, &build)?.0) };

    let mut work: Vec<Array2<f64>> = params
        .iter()
        .map(|p| p.as_standard_layout().into_owned())
        .collect();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        checked: 0,
    };
    for b in 0..work.len() {
        for idx in 0..work[b].len() {
            let orig = work[b].as_slice().expect("standard layout")[idx];
            work[b].as_slice_mut().unwrap()[idx] = orig + h;
            let up = eval(&work)?;
            work[b].as_slice_mut().unwrap()[idx] = orig - h;
            let down = eval(&work)?;
            work[b].as_slice_mut().unwrap()[idx] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[b].as_slice().expect("standard layout")[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.max_absolute_error = report.max_absolute_error.max(abs);
            report.max_relative_error = report.max_relative_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
