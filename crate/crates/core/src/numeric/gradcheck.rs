//! Central finite differences, used to verify the hand-written backward passes.

use crate::error::Result;

use super::{Gradients, ParameterSet};

pub const DEFAULT_EPS: f64 = 1e-5;

/// `(f(p + eps) - f(p - eps)) / 2 eps` for every coordinate of every
/// parameter selected by `select`.
pub fn finite_difference_gradient<F>(
    mut loss_fn: F,
    params: &ParameterSet,
    eps: f64,
    select: impl Fn(&str) -> bool,
) -> Result<Gradients>
where
    F: FnMut(&ParameterSet) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut grads = Gradients::new();
    let names: Vec<String> = params.names().filter(|n| select(n)).map(String::from).collect();
    for name in names {
        let dims = params.require(&name)?.dims().to_vec();
        let n = params.require(&name)?.len();
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = params.require(&name)?.values()[i];
            probe.get_mut(&name).expect("cloned").values_mut()[i] = orig + eps;
            let plus = loss_fn(&probe)?;
            probe.get_mut(&name).expect("cloned").values_mut()[i] = orig - eps;
            let minus = loss_fn(&probe)?;
            probe.get_mut(&name).expect("cloned").values_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * eps);
        }
        grads.insert(name, super::Tensor::from_vec(&dims, g)?)?;
    }
    Ok(grads)
}

/// Largest elementwise `|a - n| / max(|a|, |n|, 1e-8)` between two gradient sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    /// Analytic and numeric values at the worst coordinate.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Resolution of a central difference of a loss near `loss`: two units in
/// the last place over `2 eps`. Numeric gradients of this size are noise.
pub fn roundoff_floor(loss: f64, eps: f64) -> f64 {
    loss.abs() * f64::EPSILON / eps
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares `analytic` against `numeric` over every entry of `numeric`.
/// A parameter missing from `analytic` counts as an all-zero gradient.
pub fn compare(analytic: &Gradients, numeric: &Gradients) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    for (name, num) in numeric.iter() {
        let ana = analytic.get(name);
        for (i, &n) in num.values().iter().enumerate() {
            let a = ana.map_or(0.0, |t| t.values()[i]);
            let e = relative_error(a, n);
            report.checked += 1;
            if e > report.max_relative_error || report.checked == 1 {
                report.max_relative_error = e;
                report.worst_parameter = name.to_string();
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = n;
            }
        }
    }
    report
}
