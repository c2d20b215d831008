//! Constructed names for cohorts and parameters.
//!
//! Names are built by concatenating a fixed phrase per template with the
//! session's outcome and parameter-type words and the name of the cohort
//! the template is applied to.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    ArmCohort,
    WithdrawYesCohort,
    WithdrawNoCohort,
    LostCohort,
    FollowedCohort,
    PopulationOutcome,
    StudyOutcome,
    EffectiveOutcome,
    PatientOutcome,
    WithdrawalRate,
    LossRate,
    Sensitivity,
    Specificity,
    Evidence,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 14] = [
        TemplateKind::ArmCohort,
        TemplateKind::WithdrawYesCohort,
        TemplateKind::WithdrawNoCohort,
        TemplateKind::LostCohort,
        TemplateKind::FollowedCohort,
        TemplateKind::PopulationOutcome,
        TemplateKind::StudyOutcome,
        TemplateKind::EffectiveOutcome,
        TemplateKind::PatientOutcome,
        TemplateKind::WithdrawalRate,
        TemplateKind::LossRate,
        TemplateKind::Sensitivity,
        TemplateKind::Specificity,
        TemplateKind::Evidence,
    ];

    fn key(self) -> &'static str {
        match self {
            TemplateKind::ArmCohort => "arm-cohort",
            TemplateKind::WithdrawYesCohort => "withdraw-yes-cohort",
            TemplateKind::WithdrawNoCohort => "withdraw-no-cohort",
            TemplateKind::LostCohort => "lost-cohort",
            TemplateKind::FollowedCohort => "followed-cohort",
            TemplateKind::PopulationOutcome => "population-outcome",
            TemplateKind::StudyOutcome => "study-outcome",
            TemplateKind::EffectiveOutcome => "effective-outcome",
            TemplateKind::PatientOutcome => "patient-outcome",
            TemplateKind::WithdrawalRate => "withdrawal-rate",
            TemplateKind::LossRate => "loss-rate",
            TemplateKind::Sensitivity => "sensitivity",
            TemplateKind::Specificity => "specificity",
            TemplateKind::Evidence => "evidence",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NamingError {
    #[error("unknown name template {0:?}")]
    UnknownTemplate(String),
    #[error("name context field {0} is empty")]
    EmptyContext(&'static str),
}

impl FromStr for TemplateKind {
    type Err = NamingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateKind::ALL
            .into_iter()
            .find(|t| t.key() == s)
            .ok_or_else(|| NamingError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameContext<'a> {
    pub outcome: &'a str,
    pub parameter_type: &'a str,
    /// Cohort (or treatment word, for arm-level templates) the name refers to.
    pub parent: &'a str,
}

pub fn name_for(template: TemplateKind, ctx: &NameContext<'_>) -> Result<String, NamingError> {
    if ctx.outcome.trim().is_empty() {
        return Err(NamingError::EmptyContext("outcome"));
    }
    if ctx.parameter_type.trim().is_empty() {
        return Err(NamingError::EmptyContext("parameter_type"));
    }
    if ctx.parent.trim().is_empty() {
        return Err(NamingError::EmptyContext("parent"));
    }
    let (o, t, p) = (ctx.outcome, ctx.parameter_type, ctx.parent);
    Ok(match template {
        TemplateKind::ArmCohort => format!("assigned {p}"),
        TemplateKind::WithdrawYesCohort => format!("patients who withdrew from therapy in {p}"),
        TemplateKind::WithdrawNoCohort => format!("patients who did not withdraw from therapy in {p}"),
        TemplateKind::LostCohort => format!("patients lost to followup in {p}"),
        TemplateKind::FollowedCohort => format!("patients followed in {p}"),
        TemplateKind::PopulationOutcome => format!("population {o} {t} under {p}"),
        TemplateKind::StudyOutcome => format!("study {o} {t} for {p}"),
        TemplateKind::EffectiveOutcome => format!("effective {o} {t} for {p}"),
        TemplateKind::PatientOutcome => format!("patient {o} {t} under {p}"),
        TemplateKind::WithdrawalRate => format!("withdrawal rate in {p}"),
        TemplateKind::LossRate => format!("loss-to-followup rate in {p}"),
        TemplateKind::Sensitivity => format!("sensitivity of {o} measurement in {p}"),
        TemplateKind::Specificity => format!("specificity of {o} measurement in {p}"),
        TemplateKind::Evidence => format!("observed {o} in {p}"),
    })
}

/// Outcome and parameter-type words for one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Naming {
    pub outcome: String,
    pub parameter_type: String,
}

impl Default for Naming {
    fn default() -> Self {
        Self { outcome: "mortality".into(), parameter_type: "rate".into() }
    }
}

impl Naming {
    pub fn name(&self, template: TemplateKind, parent: &str) -> Result<String, NamingError> {
        name_for(
            template,
            &NameContext { outcome: &self.outcome, parameter_type: &self.parameter_type, parent },
        )
    }
}
