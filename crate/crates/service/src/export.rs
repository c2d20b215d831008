use std::str::FromStr;

use serde::Serialize;
use trialflow_core::diagram::to_dot;
use trialflow_core::flow::CohortId;
use trialflow_core::session::Session;
use trialflow_core::states::{permitted, transition_table, CohortState, DirectiveKind, Transition, TransitionRow};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    ModelJson,
    PfdJson,
    Dot,
    PfdDot,
    ReportJson,
    Transitions,
}

impl ExportKind {
    pub const ALL: [ExportKind; 6] = [
        ExportKind::ModelJson,
        ExportKind::PfdJson,
        ExportKind::Dot,
        ExportKind::PfdDot,
        ExportKind::ReportJson,
        ExportKind::Transitions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExportKind::ModelJson => "model-json",
            ExportKind::PfdJson => "pfd-json",
            ExportKind::Dot => "dot",
            ExportKind::PfdDot => "pfd-dot",
            ExportKind::ReportJson => "report-json",
            ExportKind::Transitions => "transitions",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            ExportKind::Dot | ExportKind::PfdDot => "text/vnd.graphviz",
            _ => "application/json",
        }
    }
}

impl FromStr for ExportKind {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExportKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ApiError::invalid(format!("unknown export kind {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionView {
    pub directive: DirectiveKind,
    pub permitted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CohortActions {
    pub id: CohortId,
    pub name: String,
    pub state: CohortState,
    pub actions: Vec<ActionView>,
}

/// The transition table plus, per cohort, which directives the UI should
/// offer.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionsView {
    pub table: Vec<TransitionRow>,
    pub cohorts: Vec<CohortActions>,
}

pub fn transitions_view(session: &Session) -> TransitionsView {
    let cohorts = session
        .flow()
        .cohorts()
        .iter()
        .map(|c| CohortActions {
            id: c.id,
            name: c.name.clone(),
            state: c.state,
            actions: DirectiveKind::ALL
                .into_iter()
                .filter(|k| *k != DirectiveKind::Finish)
                .map(|k| match permitted(c.state, k) {
                    Transition::Permitted(_) => ActionView { directive: k, permitted: true, reason: None },
                    Transition::Denied(d) => ActionView { directive: k, permitted: false, reason: Some(d.reason) },
                })
                .collect(),
        })
        .collect();
    TransitionsView { table: transition_table(), cohorts }
}

/// Every export except the inference report, which needs the store.
pub fn export_session(session: &Session, kind: ExportKind) -> Option<String> {
    Some(match kind {
        ExportKind::ModelJson => session.diagram().to_json(),
        ExportKind::PfdJson => session.flow().to_json(),
        ExportKind::Dot => to_dot(session.diagram()),
        ExportKind::PfdDot => session.flow().to_dot(),
        ExportKind::Transitions => {
            serde_json::to_string_pretty(&transitions_view(session)).expect("view serializes")
        }
        ExportKind::ReportJson => return None,
    })
}
