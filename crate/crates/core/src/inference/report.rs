use serde::Serialize;

use super::mode::{posterior_mode, ModeOptions, SummaryMethod};
use super::model::{BetaShape, ReducedModel};
use super::utility::{expected_utility, ExpectedUtility, UtilitySpec};
use super::InferenceError;
use crate::diagram::NodeId;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterReport {
    pub node: NodeId,
    pub name: String,
    pub mode: f64,
    pub se_logit: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: SummaryMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_posterior: Option<BetaShape>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport {
    pub version: u32,
    pub m: usize,
    pub n: usize,
    pub converged: bool,
    pub iterations: u32,
    pub best_start: usize,
    pub log_posterior_at_mode: f64,
    pub gradient_max_norm: f64,
    pub hessian_condition: Option<f64>,
    pub singular_hessian: bool,
    pub parameters: Vec<ParameterReport>,
    /// Absent when the mode search did not converge.
    pub expected_utility: Option<ExpectedUtility>,
}

impl InferenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterReport> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Mode, summaries and expected utility in one report.
pub fn analyze(
    model: &ReducedModel,
    options: &ModeOptions,
    utility: &UtilitySpec,
) -> Result<InferenceReport, InferenceError> {
    utility.validate()?;
    let r = posterior_mode(model, options)?;
    let expected_utility = if r.converged { Some(expected_utility(model, &r, utility)?) } else { None };
    let parameters = r
        .summaries
        .iter()
        .map(|s| ParameterReport {
            node: s.node,
            name: s.name.clone(),
            mode: s.mode,
            se_logit: s.se_z,
            lower: s.lower,
            upper: s.upper,
            method: s.method,
            exact_posterior: s.exact_posterior,
            exact_interval: s.exact_interval,
        })
        .collect();
    Ok(InferenceReport {
        version: REPORT_VERSION,
        m: r.m,
        n: r.n,
        converged: r.converged,
        iterations: r.iterations,
        best_start: r.best_start,
        log_posterior_at_mode: r.log_posterior_at_mode,
        gradient_max_norm: r.gradient_max_norm,
        hessian_condition: r.hessian_condition,
        singular_hessian: r.singular_hessian,
        parameters,
        expected_utility,
    })
}
