//! Request bodies shared by the HTTP API and scripts. Cohorts and
//! parameters may be addressed by id or by constructed name.

use serde::{Deserialize, Serialize};
use trialflow_core::diagram::NodeId;
use trialflow_core::flow::CohortId;
use trialflow_core::session::{Directive, PriorAssignment, PriorShape, Session};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ref {
    Id(u32),
    Name(String),
}

impl Ref {
    pub fn cohort(&self, session: &Session) -> Result<CohortId, ApiError> {
        let flow = session.flow();
        match self {
            Ref::Id(i) => {
                let id = CohortId(*i);
                flow.cohort(id).map(|_| id).map_err(|_| ApiError::not_found(format!("unknown cohort {id}")))
            }
            Ref::Name(n) => flow.find(n).ok_or_else(|| ApiError::not_found(format!("unknown cohort {n:?}"))),
        }
    }

    pub fn parameter(&self, session: &Session) -> Result<NodeId, ApiError> {
        let d = session.diagram();
        match self {
            Ref::Id(i) => {
                let id = NodeId(*i);
                d.node(id).map(|_| id).map_err(|_| ApiError::not_found(format!("unknown parameter {id}")))
            }
            Ref::Name(n) => d.find(n).ok_or_else(|| ApiError::not_found(format!("unknown parameter {n:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DirectiveRequest {
    Withdraw {
        #[serde(alias = "target_name")]
        target: Ref,
        #[serde(default)]
        yes_count: Option<u64>,
    },
    LoseToFollowup {
        #[serde(alias = "target_name")]
        target: Ref,
        #[serde(default)]
        yes_count: Option<u64>,
    },
    AttachEvidence {
        #[serde(alias = "target_name")]
        target: Ref,
        successes: u64,
        trials: u64,
    },
    ApplyMeasurementError {
        #[serde(alias = "target_name")]
        target: Ref,
    },
    Finish,
}

impl DirectiveRequest {
    pub fn resolve(&self, session: &Session) -> Result<Directive, ApiError> {
        Ok(match self {
            DirectiveRequest::Withdraw { target, yes_count } => {
                Directive::Withdraw { target: target.cohort(session)?, yes_count: *yes_count }
            }
            DirectiveRequest::LoseToFollowup { target, yes_count } => {
                Directive::LoseToFollowup { target: target.cohort(session)?, yes_count: *yes_count }
            }
            DirectiveRequest::AttachEvidence { target, successes, trials } => Directive::AttachEvidence {
                target: target.cohort(session)?,
                successes: *successes,
                trials: *trials,
            },
            DirectiveRequest::ApplyMeasurementError { target } => {
                Directive::ApplyMeasurementError { target: target.cohort(session)? }
            }
            DirectiveRequest::Finish => Directive::Finish,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBody {
    #[serde(alias = "param_name")]
    pub param: Ref,
    #[serde(flatten)]
    pub shape: PriorShape,
    #[serde(default)]
    pub allow_sub_unit: bool,
}

impl PriorBody {
    pub fn resolve(&self, session: &Session) -> Result<PriorAssignment, ApiError> {
        Ok(PriorAssignment { param: self.param.parameter(session)?, shape: self.shape, allow_sub_unit: self.allow_sub_unit })
    }
}
