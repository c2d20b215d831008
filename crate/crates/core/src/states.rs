//! Cohort-state machine.
//!
//! Each cohort carries a knowledge state. A directive against a cohort is
//! looked up in a fixed transition table before anything is mutated; the
//! lookup either names the construction step to run and the resulting
//! states, or returns a denial with a reason for the user.
//!
//! The table is a completion: only the lost-to-followup evidence denial, the
//! withdrawal split and "withdrawn patients have known outcomes" are fixed by
//! the domain; the remaining entries follow from evidence being leaf-only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{CohortId, PatientFlowDiagram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CohortState {
    Active,
    Withdrawn,
    Subdivided,
    LostToFollowup,
    Evidenced,
}

impl CohortState {
    pub const ALL: [CohortState; 5] = [
        CohortState::Active,
        CohortState::Withdrawn,
        CohortState::Subdivided,
        CohortState::LostToFollowup,
        CohortState::Evidenced,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DirectiveKind {
    Withdraw,
    LoseToFollowup,
    AttachEvidence,
    ApplyMeasurementError,
    Finish,
}

impl DirectiveKind {
    pub const ALL: [DirectiveKind; 5] = [
        DirectiveKind::Withdraw,
        DirectiveKind::LoseToFollowup,
        DirectiveKind::AttachEvidence,
        DirectiveKind::ApplyMeasurementError,
        DirectiveKind::Finish,
    ];
}

/// Construction step paired with a permitted transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Withdraw,
    LoseToFollowup,
    AttachEvidence,
    MeasurementError,
    /// Session-level; no cohort mutation.
    Finish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionOutcome {
    /// State the lookup was made from.
    pub from: CohortState,
    pub target: CohortState,
    /// States for the (yes, no) children a split creates.
    pub children: Option<(CohortState, CohortState)>,
    pub step: StepKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denial {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision")]
pub enum Transition {
    Permitted(TransitionOutcome),
    Denied(Denial),
}

impl Transition {
    pub fn is_permitted(&self) -> bool {
        matches!(self, Transition::Permitted(_))
    }
}

pub const LOST_EVIDENCE_REASON: &str = "no outcome data can exist for patients lost to followup";
pub const LEAF_ONLY_REASON: &str = "directives apply to leaf cohorts";
pub const ALREADY_WITHDRAWN_REASON: &str = "patients in this cohort have already withdrawn";
pub const EVIDENCED_SPLIT_REASON: &str = "evidence already attached; splits would orphan it";
pub const LOST_SPLIT_REASON: &str = "patients lost to followup cannot be subdivided further";
pub const LOST_MEASUREMENT_REASON: &str =
    "outcome measurement does not apply to patients lost to followup";

fn deny(reason: &str) -> Transition {
    Transition::Denied(Denial { reason: reason.to_string() })
}

fn ok(
    from: CohortState,
    target: CohortState,
    children: Option<(CohortState, CohortState)>,
    step: StepKind,
) -> Transition {
    Transition::Permitted(TransitionOutcome { from, target, children, step })
}

/// Pure lookup in the transition table. Total over states and directives.
pub fn permitted(state: CohortState, kind: DirectiveKind) -> Transition {
    use CohortState::*;
    use DirectiveKind as D;
    match (state, kind) {
        (Subdivided, _) => deny(LEAF_ONLY_REASON),

        (LostToFollowup, D::AttachEvidence) => deny(LOST_EVIDENCE_REASON),
        (LostToFollowup, D::Withdraw | D::LoseToFollowup) => deny(LOST_SPLIT_REASON),
        (LostToFollowup, D::ApplyMeasurementError) => deny(LOST_MEASUREMENT_REASON),
        (LostToFollowup, D::Finish) => deny(LOST_SPLIT_REASON),

        (Active, D::Withdraw) => ok(Active, Subdivided, Some((Withdrawn, Active)), StepKind::Withdraw),
        (Active, D::LoseToFollowup) => {
            ok(Active, Subdivided, Some((LostToFollowup, Active)), StepKind::LoseToFollowup)
        }
        (Active, D::AttachEvidence) => ok(Active, Evidenced, None, StepKind::AttachEvidence),
        (Active, D::ApplyMeasurementError) => ok(Active, Active, None, StepKind::MeasurementError),

        (Withdrawn, D::Withdraw) => deny(ALREADY_WITHDRAWN_REASON),
        (Withdrawn, D::LoseToFollowup) => {
            ok(Withdrawn, Subdivided, Some((LostToFollowup, Withdrawn)), StepKind::LoseToFollowup)
        }
        (Withdrawn, D::AttachEvidence) => ok(Withdrawn, Evidenced, None, StepKind::AttachEvidence),
        (Withdrawn, D::ApplyMeasurementError) => {
            ok(Withdrawn, Withdrawn, None, StepKind::MeasurementError)
        }

        (Evidenced, D::Withdraw | D::LoseToFollowup) => deny(EVIDENCED_SPLIT_REASON),
        (Evidenced, D::AttachEvidence) => ok(Evidenced, Evidenced, None, StepKind::AttachEvidence),
        (Evidenced, D::ApplyMeasurementError) => {
            ok(Evidenced, Evidenced, None, StepKind::MeasurementError)
        }

        (s @ (Active | Withdrawn | Evidenced), D::Finish) => ok(s, s, None, StepKind::Finish),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("cohort {cohort} is in state {actual:?}, but the transition was looked up from {expected:?}")]
    StaleState { cohort: CohortId, expected: CohortState, actual: CohortState },
    #[error("unknown cohort {0}")]
    UnknownCohort(CohortId),
    #[error("cohort {0} has no children for the split outcome")]
    MissingChildren(CohortId),
}

/// Checks that `outcome` still applies to the cohort, then writes the new
/// target and child states.
pub fn apply_transition(
    pfd: &mut PatientFlowDiagram,
    cohort: CohortId,
    outcome: &TransitionOutcome,
) -> Result<(), StateError> {
    check_fresh(pfd, cohort, outcome)?;
    let children = pfd.cohort(cohort).map_err(|_| StateError::UnknownCohort(cohort))?.children.clone();
    if let Some((yes, no)) = outcome.children {
        let [y, n] = children[..] else {
            return Err(StateError::MissingChildren(cohort));
        };
        pfd.cohort_mut(y).expect("child exists").state = yes;
        pfd.cohort_mut(n).expect("child exists").state = no;
    }
    pfd.cohort_mut(cohort).expect("cohort exists").state = outcome.target;
    Ok(())
}

pub fn check_fresh(
    pfd: &PatientFlowDiagram,
    cohort: CohortId,
    outcome: &TransitionOutcome,
) -> Result<(), StateError> {
    let actual = pfd.cohort(cohort).map_err(|_| StateError::UnknownCohort(cohort))?.state;
    if actual != outcome.from {
        return Err(StateError::StaleState { cohort, expected: outcome.from, actual });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionRow {
    pub state: CohortState,
    pub directive: DirectiveKind,
    #[serde(flatten)]
    pub transition: Transition,
}

/// The full table as rows, for documentation and UI action menus.
pub fn transition_table() -> Vec<TransitionRow> {
    CohortState::ALL
        .into_iter()
        .flat_map(|state| {
            DirectiveKind::ALL.into_iter().map(move |directive| TransitionRow {
                state,
                directive,
                transition: permitted(state, directive),
            })
        })
        .collect()
}

pub fn transition_table_json() -> String {
    serde_json::to_string_pretty(&transition_table()).expect("table serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lost_cohort_evidence_is_denied() {
        match permitted(CohortState::LostToFollowup, DirectiveKind::AttachEvidence) {
            Transition::Denied(d) => assert_eq!(d.reason, LOST_EVIDENCE_REASON),
            other => panic!("expected denial, got {other:?}"),
        }
    }

    #[test]
    fn active_withdraw_splits() {
        let t = permitted(CohortState::Active, DirectiveKind::Withdraw);
        assert_eq!(
            t,
            Transition::Permitted(TransitionOutcome {
                from: CohortState::Active,
                target: CohortState::Subdivided,
                children: Some((CohortState::Withdrawn, CohortState::Active)),
                step: StepKind::Withdraw,
            })
        );
    }

    #[test]
    fn withdrawn_patients_accept_evidence() {
        assert!(permitted(CohortState::Withdrawn, DirectiveKind::AttachEvidence).is_permitted());
    }

    #[test]
    fn subdivided_and_lost_accept_nothing_and_denials_have_reasons() {
        for kind in DirectiveKind::ALL {
            assert!(!permitted(CohortState::Subdivided, kind).is_permitted());
            assert!(!permitted(CohortState::LostToFollowup, kind).is_permitted());
        }
        for row in transition_table() {
            if let Transition::Denied(d) = row.transition {
                assert!(!d.reason.is_empty());
            }
        }
    }

    #[test]
    fn table_is_total() {
        assert_eq!(transition_table().len(), CohortState::ALL.len() * DirectiveKind::ALL.len());
    }

    #[test]
    fn permitted_outcomes_start_from_lookup_state() {
        for row in transition_table() {
            if let Transition::Permitted(o) = row.transition {
                assert_eq!(o.from, row.state);
                assert_eq!(o.children.is_some(), o.target == CohortState::Subdivided);
            }
        }
    }
}
