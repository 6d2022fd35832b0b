//! Central finite-difference verification of analytic gradients.

mod suites;

use serde::Serialize;

pub use suites::{run_component, Component};

use crate::autograd::{Fault, Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error, so entries
    /// whose true gradient is zero compare against an absolute scale.
    pub floor: f64,
    /// Corrupts one backward rule; used as a negative control.
    pub fault: Option<Fault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose perturbation flipped a discrete branch (ReLU sign,
    /// max-pool winner, sampled index) and so sit on a kink.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub component: String,
    pub tolerance: f64,
    pub params: Vec<ParamReport>,
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
            && !self.params.is_empty()
            && self
                .params
                .iter()
                .all(|p| p.checked > 0 && p.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    fn failed(component: &str, tolerance: f64, message: String) -> Self {
        GradCheckReport {
            component: component.to_string(),
            tolerance,
            params: Vec::new(),
            failure: Some(message),
        }
    }
}

/// Compares the gradient of the scalar built by `f` with respect to each
/// parameter in `ids` against central differences.
pub fn grad_check<F>(component: &str, store: &ParamStore, ids: &[ParamId], cfg: &GradCheckConfig, f: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var> + Sync,
{
    let eval = |s: &ParamStore| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let loss = f(&mut g, s)?;
        Ok((g.value(loss).item(), g.signature()))
    };
    let mut g = Graph::with_fault(cfg.fault);
    let loss = match f(&mut g, store) {
        Ok(l) => l,
        Err(e) => return GradCheckReport::failed(component, cfg.tolerance, e.to_string()),
    };
    let sig = g.signature();
    let grads = match g.backward(loss) {
        Ok(gr) => gr,
        Err(e) => return GradCheckReport::failed(component, cfg.tolerance, e.to_string()),
    };
    let mut params = Vec::with_capacity(ids.len());
    for &id in ids {
        let p = store.get(id);
        let Some(analytic) = grads.param(id) else {
            return GradCheckReport::failed(
                component,
                cfg.tolerance,
                format!("parameter '{}' received no gradient", p.name),
            );
        };
        let results = par::map_range(p.value.len(), |i| -> Result<Option<f64>> {
            let mut s = store.clone();
            let base = p.value.data()[i];
            s.get_mut(id).value.data_mut()[i] = base + cfg.step;
            let (lp, sp) = eval(&s)?;
            s.get_mut(id).value.data_mut()[i] = base - cfg.step;
            let (lm, sm) = eval(&s)?;
            if sp != sig || sm != sig {
                return Ok(None);
            }
            let numeric = (lp - lm) / (2.0 * cfg.step);
            let a = analytic.data()[i];
            Ok(Some((a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor)))
        });
        let mut report = ParamReport {
            name: p.name.clone(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        };
        for r in results {
            match r {
                Ok(Some(e)) => {
                    report.checked += 1;
                    report.max_rel_error = report.max_rel_error.max(e);
                }
                Ok(None) => report.skipped += 1,
                Err(e) => {
                    return GradCheckReport::failed(
                        component,
                        cfg.tolerance,
                        format!("while perturbing '{}': {e}", p.name),
                    )
                }
            }
        }
        params.push(report);
    }
    GradCheckReport {
        component: component.to_string(),
        tolerance: cfg.tolerance,
        params,
        failure: None,
    }
}
