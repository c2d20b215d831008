//! Construction steps and the session controller.
//!
//! A directive names a cohort and an intent. The controller looks the
//! directive up in the cohort-state table; if permitted, the paired
//! construction step rewrites both the patient-flow diagram and the
//! influence diagram on a scratch copy, the state transition is applied, and
//! only then is the result committed. Denials and errors leave the session
//! untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagram::{
    ArmTag, DetFn, DiagramError, InfluenceDiagram, Level, NodeId, NodeKind, Role,
};
use crate::flow::{init_flow, CohortId, FlowError, PatientFlowDiagram, Treatment};
use crate::inference::{InferenceError, ReducedModel, UtilitySpec};
use crate::naming::{Naming, NamingError, TemplateKind};
use crate::states::{apply_transition, permitted, DirectiveKind, StateError, StepKind, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub trial_name: String,
    #[serde(default)]
    pub naming: Naming,
    #[serde(default)]
    pub exp_count: Option<u64>,
    #[serde(default)]
    pub ctl_count: Option<u64>,
    #[serde(default)]
    pub utility: UtilitySpec,
}

impl SessionConfig {
    pub fn new(trial_name: impl Into<String>) -> Self {
        Self {
            trial_name: trial_name.into(),
            naming: Naming::default(),
            exp_count: None,
            ctl_count: None,
            utility: UtilitySpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Directive {
    Withdraw { target: CohortId, yes_count: Option<u64> },
    LoseToFollowup { target: CohortId, yes_count: Option<u64> },
    AttachEvidence { target: CohortId, successes: u64, trials: u64 },
    ApplyMeasurementError { target: CohortId },
    Finish,
}

impl Directive {
    pub fn kind(&self) -> DirectiveKind {
        match self {
            Directive::Withdraw { .. } => DirectiveKind::Withdraw,
            Directive::LoseToFollowup { .. } => DirectiveKind::LoseToFollowup,
            Directive::AttachEvidence { .. } => DirectiveKind::AttachEvidence,
            Directive::ApplyMeasurementError { .. } => DirectiveKind::ApplyMeasurementError,
            Directive::Finish => DirectiveKind::Finish,
        }
    }

    pub fn target(&self) -> Option<CohortId> {
        match *self {
            Directive::Withdraw { target, .. }
            | Directive::LoseToFollowup { target, .. }
            | Directive::AttachEvidence { target, .. }
            | Directive::ApplyMeasurementError { target } => Some(target),
            Directive::Finish => None,
        }
    }
}

/// A parentless parameter awaiting prior elicitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRequest {
    pub param: NodeId,
    pub constructed_name: String,
    pub default: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorShape {
    Beta { a: f64, b: f64 },
    /// Mean and equivalent sample size: `a = mean * ess`, `b = (1 - mean) * ess`.
    MeanEss { mean: f64, ess: f64 },
}

impl PriorShape {
    pub fn shapes(&self) -> (f64, f64) {
        match *self {
            PriorShape::Beta { a, b } => (a, b),
            PriorShape::MeanEss { mean, ess } => (mean * ess, (1.0 - mean) * ess),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorAssignment {
    pub param: NodeId,
    pub shape: PriorShape,
    #[serde(default)]
    pub allow_sub_unit: bool,
}

impl PriorAssignment {
    pub fn beta(param: NodeId, a: f64, b: f64) -> Self {
        Self { param, shape: PriorShape::Beta { a, b }, allow_sub_unit: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    Modeling,
    AwaitingPriors,
    Finished,
}

/// One accepted entry of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Command {
    Directive(Directive),
    SetPriors(Vec<PriorAssignment>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome")]
pub enum DirectiveOutcome {
    Applied { prior_requests: Vec<PriorRequest> },
    Denied { reason: String },
}

/// Ids created by a construction step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CreatedIds {
    pub cohorts: Vec<CohortId>,
    pub parameters: Vec<NodeId>,
    /// Subset of `parameters` that are parentless and need priors.
    pub free: Vec<NodeId>,
    pub reshaped: Vec<NodeId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("session is {actual:?}; this operation needs {expected:?}")]
    WrongStatus { actual: SessionStatus, expected: SessionStatus },
    #[error("unknown cohort {0}")]
    UnknownCohort(CohortId),
    #[error("measurement error has already been applied to cohort {0}")]
    AlreadyApplied(CohortId),
    #[error("parameter {0} is not awaiting a prior")]
    NotPending(NodeId),
    #[error("invalid beta shapes ({a}, {b}) for {param}: {reason}")]
    InvalidShapes { param: NodeId, a: f64, b: f64, reason: &'static str },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Naming(#[from] NamingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    config: SessionConfig,
    diagram: InfluenceDiagram,
    pfd: PatientFlowDiagram,
    pending: Vec<PriorRequest>,
    log: Vec<Command>,
    status: SessionStatus,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        let (diagram, pfd) =
            init_flow(&config.trial_name, config.exp_count, config.ctl_count, &config.naming)?;
        Ok(Self { config, diagram, pfd, pending: Vec::new(), log: Vec::new(), status: SessionStatus::Modeling })
    }

    /// Rebuilds a session by re-executing an accepted log.
    pub fn replay(config: SessionConfig, log: &[Command]) -> Result<Self, SessionError> {
        let mut s = Self::new(config)?;
        for cmd in log {
            match cmd {
                Command::Directive(d) => {
                    s.apply_directive(*d)?;
                }
                Command::SetPriors(a) => {
                    s.set_priors(a)?;
                }
            }
        }
        Ok(s)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn diagram(&self) -> &InfluenceDiagram {
        &self.diagram
    }

    pub fn flow(&self) -> &PatientFlowDiagram {
        &self.pfd
    }

    pub fn pending_priors(&self) -> &[PriorRequest] {
        &self.pending
    }

    pub fn log(&self) -> &[Command] {
        &self.log
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn reduced_model(&self) -> Result<ReducedModel, InferenceError> {
        ReducedModel::build(&self.diagram, true)
    }

    /// Runs one directive through the state machine and, if permitted, its
    /// construction step.
    pub fn apply_directive(&mut self, directive: Directive) -> Result<DirectiveOutcome, SessionError> {
        if self.status != SessionStatus::Modeling {
            return Err(SessionError::WrongStatus { actual: self.status, expected: SessionStatus::Modeling });
        }
        let Some(target) = directive.target() else {
            self.status = SessionStatus::Finished;
            self.log.push(Command::Directive(directive));
            return Ok(DirectiveOutcome::Applied { prior_requests: Vec::new() });
        };
        let state = self.pfd.cohort(target).map_err(|_| SessionError::UnknownCohort(target))?.state;
        let outcome = match permitted(state, directive.kind()) {
            Transition::Denied(d) => return Ok(DirectiveOutcome::Denied { reason: d.reason }),
            Transition::Permitted(o) => o,
        };

        let mut diagram = self.diagram.clone();
        let mut pfd = self.pfd.clone();
        let naming = &self.config.naming;
        let created = match (outcome.step, directive) {
            (StepKind::Withdraw, Directive::Withdraw { yes_count, .. }) => {
                withdraw_step(&mut diagram, &mut pfd, naming, target, yes_count)?
            }
            (StepKind::LoseToFollowup, Directive::LoseToFollowup { yes_count, .. }) => {
                lose_to_followup_step(&mut diagram, &mut pfd, naming, target, yes_count)?
            }
            (StepKind::AttachEvidence, Directive::AttachEvidence { successes, trials, .. }) => {
                let node = pfd.record_evidence(&mut diagram, target, successes, trials, naming)?;
                CreatedIds { parameters: vec![node], ..CreatedIds::default() }
            }
            (StepKind::MeasurementError, Directive::ApplyMeasurementError { .. }) => {
                measurement_error_step(&mut diagram, &mut pfd, naming, target)?
            }
            (StepKind::Finish, _) => CreatedIds::default(),
            (step, d) => unreachable!("table paired {:?} with step {step:?}", d.kind()),
        };
        apply_transition(&mut pfd, target, &outcome)?;

        let requests: Vec<PriorRequest> = created
            .free
            .iter()
            .map(|&id| PriorRequest {
                param: id,
                constructed_name: diagram.nodes()[id.index()].name.clone(),
                default: (1.0, 1.0),
            })
            .collect();
        self.diagram = diagram;
        self.pfd = pfd;
        self.pending.extend(requests.iter().cloned());
        if !self.pending.is_empty() {
            self.status = SessionStatus::AwaitingPriors;
        }
        self.log.push(Command::Directive(directive));
        Ok(DirectiveOutcome::Applied { prior_requests: requests })
    }

    /// Sets beta shapes. Pending parameters are always accepted; while
    /// modeling, already elicited chance parameters may also be revised.
    pub fn set_priors(&mut self, assignments: &[PriorAssignment]) -> Result<SessionStatus, SessionError> {
        if self.status == SessionStatus::Finished {
            return Err(SessionError::WrongStatus { actual: self.status, expected: SessionStatus::Modeling });
        }
        let mut resolved = Vec::with_capacity(assignments.len());
        for asg in assignments {
            let is_pending = self.pending.iter().any(|r| r.param == asg.param);
            let revisable = self.status == SessionStatus::Modeling
                && matches!(
                    self.diagram.node(asg.param).map(|n| &n.kind),
                    Ok(NodeKind::ChanceBeta { pending: false, .. })
                );
            if !is_pending && !revisable {
                return Err(SessionError::NotPending(asg.param));
            }
            if let PriorShape::MeanEss { mean, ess } = asg.shape {
                if !(mean > 0.0 && mean < 1.0 && ess > 0.0 && ess.is_finite()) {
                    return Err(SessionError::InvalidShapes {
                        param: asg.param,
                        a: mean,
                        b: ess,
                        reason: "mean must lie in (0, 1) and ess must be positive",
                    });
                }
            }
            let (a, b) = asg.shape.shapes();
            check_shapes(asg.param, a, b, asg.allow_sub_unit)?;
            resolved.push((asg.param, a, b, asg.allow_sub_unit));
        }
        for &(param, a, b, allow) in &resolved {
            self.diagram.set_beta(param, a, b, allow)?;
            self.pending.retain(|r| r.param != param);
        }
        if self.pending.is_empty() && self.status == SessionStatus::AwaitingPriors {
            self.status = SessionStatus::Modeling;
        }
        self.log.push(Command::SetPriors(assignments.to_vec()));
        Ok(self.status)
    }
}

fn check_shapes(param: NodeId, a: f64, b: f64, allow_sub_unit: bool) -> Result<(), SessionError> {
    if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
        return Err(SessionError::InvalidShapes { param, a, b, reason: "shapes must be positive and finite" });
    }
    if (a < 1.0 || b < 1.0) && !allow_sub_unit {
        return Err(SessionError::InvalidShapes {
            param,
            a,
            b,
            reason: "shapes below 1 put the mode on the boundary; pass the override to accept them",
        });
    }
    Ok(())
}

fn arm_tag(t: Option<Treatment>) -> ArmTag {
    t.map(Treatment::arm_tag).unwrap_or(ArmTag::None)
}

/// Study and Effective parameters for a freshly split child. The effective
/// parameter inherits the parent's measurement model if it has one.
fn link_child(
    diagram: &mut InfluenceDiagram,
    pfd: &mut PatientFlowDiagram,
    naming: &Naming,
    child: CohortId,
    study_fn: Option<DetFn>,
    measurement: Option<(NodeId, NodeId)>,
    created: &mut CreatedIds,
) -> Result<(), SessionError> {
    let c = pfd.cohort(child)?;
    let tag = arm_tag(c.effective_treatment);
    let study_name = naming.name(TemplateKind::StudyOutcome, &c.name)?;
    let effective_name = naming.name(TemplateKind::EffectiveOutcome, &c.name)?;
    let study = match study_fn {
        Some(f) => diagram.add_deterministic(study_name, Level::Study, Role::Outcome, tag, f)?,
        None => {
            let id = diagram.add_pending_chance(study_name, Level::Study, Role::Outcome, tag)?;
            created.free.push(id);
            id
        }
    };
    let eff_fn = match measurement {
        Some((sens, spec)) => DetFn::MeasurementError { sens, spec, source: study },
        None => DetFn::Identity { parent: study },
    };
    let effective = diagram.add_deterministic(effective_name, Level::Effective, Role::Outcome, tag, eff_fn)?;
    pfd.link(child, study, effective)?;
    pfd.cohort_mut(child)?.measurement_error = measurement;
    created.parameters.extend([study, effective]);
    Ok(())
}

/// Splits a cohort into withdrawn and non-withdrawn children. The source's
/// study parameter becomes a mixture of the two children's study parameters
/// weighted by a new withdrawal rate; withdrawn patients effectively receive
/// baseline care.
pub fn withdraw_step(
    diagram: &mut InfluenceDiagram,
    pfd: &mut PatientFlowDiagram,
    naming: &Naming,
    cohort: CohortId,
    yes_count: Option<u64>,
) -> Result<CreatedIds, SessionError> {
    let src = pfd.cohort(cohort)?.clone();
    let source_param = src.study_param.ok_or(FlowError::Unlinked(cohort))?;
    let yes_name = naming.name(TemplateKind::WithdrawYesCohort, &src.name)?;
    let no_name = naming.name(TemplateKind::WithdrawNoCohort, &src.name)?;
    let (yes, no) = pfd.split_cohort(cohort, &yes_name, &no_name, yes_count)?;
    pfd.cohort_mut(yes)?.effective_treatment = Some(Treatment::Baseline);

    let mut created = CreatedIds { cohorts: vec![yes, no], ..CreatedIds::default() };
    let alpha = diagram.add_pending_chance(
        naming.name(TemplateKind::WithdrawalRate, &src.name)?,
        Level::Population,
        Role::Methodological,
        ArmTag::None,
    )?;
    created.parameters.push(alpha);
    created.free.push(alpha);

    let arms = *pfd.arms();
    let treatment = src.effective_treatment.ok_or(FlowError::Unlinked(cohort))?;
    let baseline = DetFn::Identity { parent: arms.population(Treatment::Baseline) };
    let own = DetFn::Identity { parent: arms.population(treatment) };
    link_child(diagram, pfd, naming, yes, Some(baseline), src.measurement_error, &mut created)?;
    link_child(diagram, pfd, naming, no, Some(own), src.measurement_error, &mut created)?;

    let yes_study = pfd.cohort(yes)?.study_param.expect("linked");
    let no_study = pfd.cohort(no)?.study_param.expect("linked");
    diagram.set_function(source_param, DetFn::Mixture { mix: alpha, in_part: yes_study, out_part: no_study })?;
    created.reshaped.push(source_param);
    Ok(created)
}

/// Splits off a cohort lost to followup. Its study outcome parameter is a new
/// prior-only chance node; the loss rate mixes it with the followed cohort.
pub fn lose_to_followup_step(
    diagram: &mut InfluenceDiagram,
    pfd: &mut PatientFlowDiagram,
    naming: &Naming,
    cohort: CohortId,
    yes_count: Option<u64>,
) -> Result<CreatedIds, SessionError> {
    let src = pfd.cohort(cohort)?.clone();
    let source_param = src.study_param.ok_or(FlowError::Unlinked(cohort))?;
    let lost_name = naming.name(TemplateKind::LostCohort, &src.name)?;
    let followed_name = naming.name(TemplateKind::FollowedCohort, &src.name)?;
    let (lost, followed) = pfd.split_cohort(cohort, &lost_name, &followed_name, yes_count)?;

    let mut created = CreatedIds { cohorts: vec![lost, followed], ..CreatedIds::default() };
    let rate = diagram.add_pending_chance(
        naming.name(TemplateKind::LossRate, &src.name)?,
        Level::Population,
        Role::Methodological,
        ArmTag::None,
    )?;
    created.parameters.push(rate);
    created.free.push(rate);

    let treatment = src.effective_treatment.ok_or(FlowError::Unlinked(cohort))?;
    let own = DetFn::Identity { parent: pfd.arms().population(treatment) };
    link_child(diagram, pfd, naming, lost, None, src.measurement_error, &mut created)?;
    link_child(diagram, pfd, naming, followed, Some(own), src.measurement_error, &mut created)?;

    let lost_study = pfd.cohort(lost)?.study_param.expect("linked");
    let followed_study = pfd.cohort(followed)?.study_param.expect("linked");
    diagram.set_function(
        source_param,
        DetFn::Mixture { mix: rate, in_part: lost_study, out_part: followed_study },
    )?;
    created.reshaped.push(source_param);
    Ok(created)
}

/// Replaces the cohort's effective parameter with an imperfect measurement
/// of its study parameter, governed by new sensitivity and specificity
/// parameters.
pub fn measurement_error_step(
    diagram: &mut InfluenceDiagram,
    pfd: &mut PatientFlowDiagram,
    naming: &Naming,
    cohort: CohortId,
) -> Result<CreatedIds, SessionError> {
    let c = pfd.cohort(cohort)?.clone();
    if c.measurement_error.is_some() {
        return Err(SessionError::AlreadyApplied(cohort));
    }
    let study = c.study_param.ok_or(FlowError::Unlinked(cohort))?;
    let effective = c.effective_param.ok_or(FlowError::Unlinked(cohort))?;
    let sens = diagram.add_pending_chance(
        naming.name(TemplateKind::Sensitivity, &c.name)?,
        Level::Population,
        Role::Methodological,
        ArmTag::None,
    )?;
    let spec = diagram.add_pending_chance(
        naming.name(TemplateKind::Specificity, &c.name)?,
        Level::Population,
        Role::Methodological,
        ArmTag::None,
    )?;
    diagram.set_function(effective, DetFn::MeasurementError { sens, spec, source: study })?;
    pfd.cohort_mut(cohort)?.measurement_error = Some((sens, spec));
    Ok(CreatedIds {
        cohorts: Vec::new(),
        parameters: vec![sens, spec],
        free: vec![sens, spec],
        reshaped: vec![effective],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::{eliminate_identical, evaluate, validate_restricted_class};
    use crate::states::CohortState;
    use std::collections::BTreeMap;

    fn session() -> Session {
        Session::new(SessionConfig { exp_count: Some(50), ctl_count: Some(50), ..SessionConfig::new("trial") })
            .unwrap()
    }

    fn exp_arm(s: &Session) -> CohortId {
        s.flow().arm_cohort(Treatment::Experimental)
    }

    #[test]
    fn withdraw_issues_one_prior_request() {
        let mut s = session();
        let arm = exp_arm(&s);
        let out = s.apply_directive(Directive::Withdraw { target: arm, yes_count: Some(10) }).unwrap();
        let DirectiveOutcome::Applied { prior_requests } = out else { panic!("denied") };
        assert_eq!(prior_requests.len(), 1);
        assert_eq!(prior_requests[0].constructed_name, "withdrawal rate in assigned experimental");
        assert_eq!(s.status(), SessionStatus::AwaitingPriors);

        let yes = s.flow().cohort(arm).unwrap().children[0];
        let yes_cohort = s.flow().cohort(yes).unwrap();
        assert_eq!(yes_cohort.effective_treatment, Some(Treatment::Baseline));
        assert_eq!(yes_cohort.state, CohortState::Withdrawn);
        assert_eq!(yes_cohort.count, Some(10));
        let yes_study = s.diagram().node(yes_cohort.study_param.unwrap()).unwrap();
        assert_eq!(
            yes_study.name,
            "study mortality rate for patients who withdrew from therapy in assigned experimental"
        );
        assert_eq!(
            yes_study.kind,
            NodeKind::Deterministic {
                function: DetFn::Identity { parent: s.flow().arms().population_baseline }
            }
        );
        assert!(validate_restricted_class(s.diagram()).is_valid());
        assert!(s.flow().check_structure(s.diagram()).is_empty());

        let map = eliminate_identical(s.diagram());
        assert_eq!(map.free_count, 4);
    }

    #[test]
    fn reshaped_study_parameter_evaluates_as_mixture() {
        let mut s = session();
        let arm = exp_arm(&s);
        s.apply_directive(Directive::Withdraw { target: arm, yes_count: None }).unwrap();
        let arms = *s.flow().arms();
        let alpha = s.pending_priors()[0].param;
        let assignment = BTreeMap::from([
            (alpha, 0.3),
            (arms.population_baseline, 0.5),
            (arms.population_experimental, 0.1),
            (arms.population_control, 0.9),
        ]);
        let values = evaluate(s.diagram(), &assignment).unwrap();
        let study = s.flow().cohort(arm).unwrap().study_param.unwrap();
        assert!((values[&study] - 0.22).abs() < 1e-15);
    }

    #[test]
    fn directives_blocked_while_awaiting_priors() {
        let mut s = session();
        let arm = exp_arm(&s);
        s.apply_directive(Directive::Withdraw { target: arm, yes_count: None }).unwrap();
        let ctl = s.flow().arm_cohort(Treatment::Control);
        let before = s.clone();
        assert!(matches!(
            s.apply_directive(Directive::AttachEvidence { target: ctl, successes: 1, trials: 2 }),
            Err(SessionError::WrongStatus { .. })
        ));
        assert_eq!(s, before);
        let alpha = s.pending_priors()[0].param;
        assert_eq!(s.set_priors(&[PriorAssignment::beta(alpha, 2.0, 8.0)]).unwrap(), SessionStatus::Modeling);
    }

    #[test]
    fn evidence_on_lost_cohort_is_denied() {
        let mut s = session();
        let arm = exp_arm(&s);
        let DirectiveOutcome::Applied { prior_requests } =
            s.apply_directive(Directive::LoseToFollowup { target: arm, yes_count: Some(5) }).unwrap()
        else {
            panic!("denied")
        };
        assert_eq!(prior_requests.len(), 2);
        let names: Vec<_> = prior_requests.iter().map(|r| r.constructed_name.as_str()).collect();
        assert!(names.contains(&"loss-to-followup rate in assigned experimental"));
        assert!(names.contains(
            &"study mortality rate for patients lost to followup in assigned experimental"
        ));
        let assignments: Vec<_> = prior_requests.iter().map(|r| PriorAssignment::beta(r.param, 1.0, 1.0)).collect();
        s.set_priors(&assignments).unwrap();
        assert_eq!(eliminate_identical(s.diagram()).free_count, 5);

        let lost = s.flow().cohort(arm).unwrap().children[0];
        assert_eq!(s.flow().cohort(lost).unwrap().state, CohortState::LostToFollowup);
        let before = s.clone();
        let out = s.apply_directive(Directive::AttachEvidence { target: lost, successes: 1, trials: 2 }).unwrap();
        assert_eq!(
            out,
            DirectiveOutcome::Denied { reason: crate::states::LOST_EVIDENCE_REASON.to_string() }
        );
        assert_eq!(s, before);
    }

    #[test]
    fn measurement_error_twice_is_rejected() {
        let mut s = session();
        let arm = exp_arm(&s);
        let out = s.apply_directive(Directive::ApplyMeasurementError { target: arm }).unwrap();
        let DirectiveOutcome::Applied { prior_requests } = out else { panic!() };
        assert_eq!(prior_requests.len(), 2);
        let a: Vec<_> = prior_requests.iter().map(|r| PriorAssignment::beta(r.param, 9.0, 1.0)).collect();
        s.set_priors(&a).unwrap();
        let before = s.clone();
        assert_eq!(
            s.apply_directive(Directive::ApplyMeasurementError { target: arm }),
            Err(SessionError::AlreadyApplied(arm))
        );
        assert_eq!(s, before);
    }

    #[test]
    fn perfect_measurement_makes_effective_equal_study() {
        let mut s = session();
        let arm = exp_arm(&s);
        s.apply_directive(Directive::ApplyMeasurementError { target: arm }).unwrap();
        let (sens, spec) = s.flow().cohort(arm).unwrap().measurement_error.unwrap();
        let arms = *s.flow().arms();
        let mut values = BTreeMap::from([
            (arms.population_experimental, 0.37),
            (arms.population_control, 0.5),
            (arms.population_baseline, 0.5),
            (sens, 0.5),
            (spec, 0.5),
        ]);
        // Evaluate the measurement function directly at sens = spec = 1.
        let c = s.flow().cohort(arm).unwrap();
        let f = *s.diagram().node(c.effective_param.unwrap()).unwrap().kind.function().unwrap();
        values.insert(sens, 1.0);
        values.insert(spec, 1.0);
        values.insert(c.study_param.unwrap(), 0.37);
        assert_eq!(f.apply(|id| values[&id]), 0.37);
    }

    #[test]
    fn prior_elicitation_formats() {
        let mut s = session();
        let arm = exp_arm(&s);
        s.apply_directive(Directive::Withdraw { target: arm, yes_count: None }).unwrap();
        let alpha = s.pending_priors()[0].param;
        let half = PriorAssignment { param: alpha, shape: PriorShape::Beta { a: 0.5, b: 0.5 }, allow_sub_unit: false };
        assert!(matches!(s.set_priors(&[half]), Err(SessionError::InvalidShapes { .. })));
        let ess = PriorAssignment { param: alpha, shape: PriorShape::MeanEss { mean: 0.2, ess: 10.0 }, allow_sub_unit: false };
        s.set_priors(&[ess]).unwrap();
        match s.diagram().node(alpha).unwrap().kind {
            NodeKind::ChanceBeta { a, b, pending, .. } => {
                assert!((a - 2.0).abs() < 1e-12 && (b - 8.0).abs() < 1e-12);
                assert!(!pending);
            }
            _ => panic!(),
        }
        // Not a chance parameter.
        let study = s.flow().cohort(arm).unwrap().study_param.unwrap();
        assert_eq!(s.set_priors(&[PriorAssignment::beta(study, 1.0, 1.0)]), Err(SessionError::NotPending(study)));
    }

    #[test]
    fn finish_freezes_session() {
        let mut s = session();
        s.apply_directive(Directive::Finish).unwrap();
        assert_eq!(s.status(), SessionStatus::Finished);
        let arm = exp_arm(&s);
        assert!(matches!(
            s.apply_directive(Directive::Withdraw { target: arm, yes_count: None }),
            Err(SessionError::WrongStatus { .. })
        ));
    }

    #[test]
    fn unknown_cohort() {
        let mut s = session();
        assert_eq!(
            s.apply_directive(Directive::ApplyMeasurementError { target: CohortId(99) }),
            Err(SessionError::UnknownCohort(CohortId(99)))
        );
    }

    #[test]
    fn replay_reproduces_session() {
        let mut s = session();
        let arm = exp_arm(&s);
        s.apply_directive(Directive::Withdraw { target: arm, yes_count: Some(10) }).unwrap();
        let alpha = s.pending_priors()[0].param;
        s.set_priors(&[PriorAssignment::beta(alpha, 2.0, 8.0)]).unwrap();
        let no = s.flow().cohort(arm).unwrap().children[1];
        s.apply_directive(Directive::AttachEvidence { target: no, successes: 4, trials: 40 }).unwrap();
        let replayed = Session::replay(s.config().clone(), s.log()).unwrap();
        assert_eq!(replayed, s);
        assert_eq!(replayed.diagram().to_json(), s.diagram().to_json());
    }

    #[test]
    fn measurement_model_is_inherited_by_children() {
        let mut s = session();
        let arm = exp_arm(&s);
        s.apply_directive(Directive::ApplyMeasurementError { target: arm }).unwrap();
        let a: Vec<_> = s.pending_priors().iter().map(|r| PriorAssignment::beta(r.param, 9.0, 1.0)).collect();
        s.set_priors(&a).unwrap();
        s.apply_directive(Directive::Withdraw { target: arm, yes_count: None }).unwrap();
        let (sens, spec) = s.flow().cohort(arm).unwrap().measurement_error.unwrap();
        for &k in &s.flow().cohort(arm).unwrap().children {
            let c = s.flow().cohort(k).unwrap();
            let f = s.diagram().node(c.effective_param.unwrap()).unwrap().kind.function().copied();
            assert_eq!(f, Some(DetFn::MeasurementError { sens, spec, source: c.study_param.unwrap() }));
        }
        assert!(validate_restricted_class(s.diagram()).is_valid());
    }
}
