//! Central finite-difference verification of analytic gradients.

use std::fmt;

use super::{AutodiffError, Graph};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum ParamStatus {
    Pass,
    Fail,
    /// Every element within tolerance, but at least one sits on a kink where
    /// the left and right difference quotients disagree.
    Unreliable,
    /// The loss became NaN or infinite while probing this parameter.
    NonFinite,
}

impl fmt::Display for ParamStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamStatus::Pass => "PASS",
            ParamStatus::Fail => "FAIL",
            ParamStatus::Unreliable => "UNRELIABLE",
            ParamStatus::NonFinite => "NONFINITE",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    /// Flat index of the element with the largest relative error.
    pub worst_index: usize,
    /// Flat indices flagged as non-differentiable points.
    pub unreliable: Vec<usize>,
    pub status: ParamStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    /// True when no parameter failed or produced a non-finite loss.
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| matches!(p.status, ParamStatus::Pass | ParamStatus::Unreliable))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn get(&self, name: &str) -> Option<&ParamCheck> {
        self.params.iter().find(|p| p.name == name)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(f, "{} max_rel_error={:.3e} {}", p.name, p.max_rel_error, p.status)?;
        }
        Ok(())
    }
}

/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the graph's analytic gradients with central differences
/// `(L(θ+h) − L(θ−h)) / 2h`, element by element, for every registered
/// parameter. The graph is left with its original parameter values.
///
/// An element is flagged unreliable when the one-sided quotients disagree
/// by an amount that does not shrink with the step (a kink such as `|w|`
/// at 0), which a smooth loss cannot produce.
pub fn grad_check(graph: &mut Graph, step: f64, tol: f64) -> Result<GradCheckReport, AutodiffError> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let base = graph.forward()?;
    let analytic = graph.backward()?;
    let names: Vec<String> = graph.param_names().map(str::to_string).collect();
    let mut params = Vec::with_capacity(names.len());
    for name in names {
        let original = graph.param_value(&name).cloned().expect("registered parameter");
        let grad = &analytic[&name];
        let mut check = ParamCheck {
            name: name.clone(),
            elements: original.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            unreliable: Vec::new(),
            status: ParamStatus::Pass,
        };
        let probe = |graph: &mut Graph, idx: usize, delta: f64| -> Result<f64, AutodiffError> {
            let mut t = original.clone();
            t.values_mut()[idx] += delta;
            graph.set_param(&name, t)?;
            graph.forward()
        };
        let mut failed = false;
        for idx in 0..original.len() {
            let plus = probe(graph, idx, step)?;
            let minus = probe(graph, idx, -step)?;
            if !(plus.is_finite() && minus.is_finite() && base.is_finite()) {
                check.status = ParamStatus::NonFinite;
                check.worst_index = idx;
                check.max_rel_error = f64::INFINITY;
                break;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.values()[idx];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = idx;
            }
            let gap = ((plus - base) - (base - minus)) / step;
            if gap.abs() > 1e-6 * a.abs().max(1.0) {
                let small = step / 10.0;
                let plus_s = probe(graph, idx, small)?;
                let minus_s = probe(graph, idx, -small)?;
                let gap_s = ((plus_s - base) - (base - minus_s)) / small;
                if gap_s.abs() > 0.5 * gap.abs() {
                    check.unreliable.push(idx);
                    continue;
                }
            }
            if err > tol {
                failed = true;
            }
        }
        graph.set_param(&name, original)?;
        if check.status != ParamStatus::NonFinite {
            check.status = if failed {
                ParamStatus::Fail
            } else if !check.unreliable.is_empty() {
                ParamStatus::Unreliable
            } else {
                ParamStatus::Pass
            };
        }
        params.push(check);
    }
    graph.forward()?;
    Ok(GradCheckReport { step, tolerance: tol, params })
}
