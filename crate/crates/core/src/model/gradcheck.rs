use alloc::string::String;
use alloc::vec::Vec;

use super::params::{Gradients, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradTolerance {
    /// Largest accepted `|analytic − numeric| / max(|analytic|, |numeric|)`.
    pub relative: f64,
    /// Coordinates whose absolute error is below this pass regardless.
    pub absolute: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        Self {
            relative: 1e-4,
            absolute: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradFailure {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Over coordinates whose gradient magnitude exceeds the absolute tolerance.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares `analytic` against central differences `(L(θ+h) − L(θ−h)) / 2h`
/// of `loss` for every parameter coordinate.
pub fn gradient_check<F>(
    params: &ModelParams,
    analytic: &Gradients,
    mut loss: F,
    h: f64,
    tolerance: GradTolerance,
) -> Result<GradCheckReport>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(
            "h",
            "finite-difference step must be positive",
        ));
    }
    params.check_congruent(&analytic.values)?;

    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let expected: Vec<Vec<f64>> = analytic
        .values
        .tensors()
        .iter()
        .map(|t| t.data.clone())
        .collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        failures: Vec::new(),
    };
    for (ti, name) in names.iter().enumerate() {
        for (k, &a) in expected[ti].iter().enumerate() {
            let original = probe.tensors()[ti].data[k];
            probe.tensors_mut()[ti].data[k] = original + h;
            let plus = loss(&probe)?;
            probe.tensors_mut()[ti].data[k] = original - h;
            let minus = loss(&probe)?;
            probe.tensors_mut()[ti].data[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let abs = (a - numeric).abs();
            report.checked += 1;
            report.max_absolute_error = report.max_absolute_error.max(abs);
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > tolerance.absolute {
                abs / scale
            } else {
                0.0
            };
            report.max_relative_error = report.max_relative_error.max(rel);
            if abs >= tolerance.absolute && !(rel < tolerance.relative) {
                report.failures.push(GradFailure {
                    tensor: name.clone(),
                    index: k,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
