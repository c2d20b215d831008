//! Patient-flow diagram: the cohort tree the user manipulates.
//!
//! The root is the randomized population; its two children are the assigned
//! arms. Every leaf cohort points at a Study- and an Effective-level outcome
//! parameter in the influence diagram.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagram::{ArmTag, DetFn, DiagramError, InfluenceDiagram, Level, NodeId, NodeKind, Role};
use crate::naming::{Naming, NamingError, TemplateKind};
use crate::states::CohortState;

pub const FLOW_DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CohortId(pub u32);

impl CohortId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CohortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    Experimental,
    Control,
    Baseline,
}

impl Treatment {
    pub fn word(self) -> &'static str {
        match self {
            Treatment::Experimental => "experimental",
            Treatment::Control => "control",
            Treatment::Baseline => "baseline",
        }
    }

    pub fn arm_tag(self) -> ArmTag {
        match self {
            Treatment::Experimental => ArmTag::Exp,
            Treatment::Control => ArmTag::Ctl,
            Treatment::Baseline => ArmTag::Baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub node: NodeId,
    pub successes: u64,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cohort {
    pub id: CohortId,
    pub name: String,
    pub parent: Option<CohortId>,
    pub children: Vec<CohortId>,
    /// `None` only for the randomized root.
    pub assigned_treatment: Option<Treatment>,
    pub effective_treatment: Option<Treatment>,
    pub count: Option<u64>,
    pub state: CohortState,
    pub study_param: Option<NodeId>,
    pub effective_param: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<EvidenceRecord>,
    /// Sensitivity and specificity parameters, once measurement error has
    /// been modeled for this cohort.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_error: Option<(NodeId, NodeId)>,
}

impl Cohort {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Population- and patient-level parameters created at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmLinks {
    pub population_experimental: NodeId,
    pub population_control: NodeId,
    pub population_baseline: NodeId,
    pub patient_experimental: NodeId,
    pub patient_control: NodeId,
}

impl ArmLinks {
    pub fn population(&self, t: Treatment) -> NodeId {
        match t {
            Treatment::Experimental => self.population_experimental,
            Treatment::Control => self.population_control,
            Treatment::Baseline => self.population_baseline,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("unknown cohort {0}")]
    UnknownCohort(CohortId),
    #[error("cohort {0} is not a leaf")]
    NotALeaf(CohortId),
    #[error("count {requested} exceeds the {available} patients in cohort {cohort}")]
    CountExceedsParent { cohort: CohortId, requested: u64, available: u64 },
    #[error("invalid evidence counts: {successes} successes in {trials} trials")]
    InvalidCounts { successes: u64, trials: u64 },
    #[error("{trials} trials exceed the {count} patients in cohort {cohort}")]
    TrialsExceedCohort { cohort: CohortId, trials: u64, count: u64 },
    #[error("a cohort named {0:?} already exists")]
    DuplicateName(String),
    #[error("cohort {0} is not linked to model parameters")]
    Unlinked(CohortId),
    #[error(transparent)]
    Naming(#[from] NamingError),
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error("invalid flow document: {0}")]
    InvalidDocument(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConservationViolation {
    pub cohort: CohortId,
    pub name: String,
    pub count: u64,
    pub children_sum: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowDocument {
    pub version: u32,
    pub trial_name: String,
    pub root: CohortId,
    pub arms: ArmLinks,
    pub cohorts: Vec<Cohort>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientFlowDiagram {
    trial_name: String,
    root: CohortId,
    arms: ArmLinks,
    cohorts: Vec<Cohort>,
}

/// Builds the initial two-arm model: three population chance nodes, and
/// Study, Effective and Patient identity parameters for each arm.
pub fn init_flow(
    trial_name: &str,
    exp_count: Option<u64>,
    ctl_count: Option<u64>,
    naming: &Naming,
) -> Result<(InfluenceDiagram, PatientFlowDiagram), FlowError> {
    let mut d = InfluenceDiagram::new();
    let pop = |d: &mut InfluenceDiagram, t: Treatment, phrase: &str| -> Result<NodeId, FlowError> {
        let name = naming.name(TemplateKind::PopulationOutcome, phrase)?;
        Ok(d.add_chance(name, Level::Population, Role::Outcome, t.arm_tag(), 1.0, 1.0)?)
    };
    let pop_exp = pop(&mut d, Treatment::Experimental, "experimental treatment")?;
    let pop_ctl = pop(&mut d, Treatment::Control, "control treatment")?;
    let pop_base = pop(&mut d, Treatment::Baseline, "baseline care")?;

    let arm_exp = naming.name(TemplateKind::ArmCohort, Treatment::Experimental.word())?;
    let arm_ctl = naming.name(TemplateKind::ArmCohort, Treatment::Control.word())?;
    if trial_name.trim().is_empty() {
        return Err(NamingError::EmptyContext("trial_name").into());
    }
    if trial_name == arm_exp || trial_name == arm_ctl {
        return Err(FlowError::DuplicateName(trial_name.to_string()));
    }

    let mut study = Vec::new();
    for (arm, p) in [(&arm_exp, pop_exp), (&arm_ctl, pop_ctl)] {
        let tag = d.node(p)?.arm;
        let s = d.add_deterministic(
            naming.name(TemplateKind::StudyOutcome, arm)?,
            Level::Study,
            Role::Outcome,
            tag,
            DetFn::Identity { parent: p },
        )?;
        study.push(s);
    }
    let mut effective = Vec::new();
    for (arm, &s) in [&arm_exp, &arm_ctl].into_iter().zip(&study) {
        let tag = d.node(s)?.arm;
        effective.push(d.add_deterministic(
            naming.name(TemplateKind::EffectiveOutcome, arm)?,
            Level::Effective,
            Role::Outcome,
            tag,
            DetFn::Identity { parent: s },
        )?);
    }
    let mut patient = Vec::new();
    for (t, p) in [(Treatment::Experimental, pop_exp), (Treatment::Control, pop_ctl)] {
        patient.push(d.add_deterministic(
            naming.name(TemplateKind::PatientOutcome, &format!("{} treatment", t.word()))?,
            Level::Patient,
            Role::Outcome,
            t.arm_tag(),
            DetFn::Identity { parent: p },
        )?);
    }

    let root_count = match (exp_count, ctl_count) {
        (Some(e), Some(c)) => Some(e + c),
        _ => None,
    };
    let root = Cohort {
        id: CohortId(0),
        name: trial_name.to_string(),
        parent: None,
        children: vec![CohortId(1), CohortId(2)],
        assigned_treatment: None,
        effective_treatment: None,
        count: root_count,
        state: CohortState::Subdivided,
        study_param: None,
        effective_param: None,
        evidence: Vec::new(),
        measurement_error: None,
    };
    let arm = |id: u32, name: String, t: Treatment, count: Option<u64>, s: NodeId, e: NodeId| Cohort {
        id: CohortId(id),
        name,
        parent: Some(CohortId(0)),
        children: Vec::new(),
        assigned_treatment: Some(t),
        effective_treatment: Some(t),
        count,
        state: CohortState::Active,
        study_param: Some(s),
        effective_param: Some(e),
        evidence: Vec::new(),
        measurement_error: None,
    };
    let cohorts = vec![
        root,
        arm(1, arm_exp, Treatment::Experimental, exp_count, study[0], effective[0]),
        arm(2, arm_ctl, Treatment::Control, ctl_count, study[1], effective[1]),
    ];
    let arms = ArmLinks {
        population_experimental: pop_exp,
        population_control: pop_ctl,
        population_baseline: pop_base,
        patient_experimental: patient[0],
        patient_control: patient[1],
    };
    let pfd = PatientFlowDiagram { trial_name: trial_name.to_string(), root: CohortId(0), arms, cohorts };
    Ok((d, pfd))
}

impl PatientFlowDiagram {
    pub fn trial_name(&self) -> &str {
        &self.trial_name
    }

    pub fn root(&self) -> CohortId {
        self.root
    }

    pub fn arms(&self) -> &ArmLinks {
        &self.arms
    }

    pub fn cohorts(&self) -> &[Cohort] {
        &self.cohorts
    }

    pub fn cohort(&self, id: CohortId) -> Result<&Cohort, FlowError> {
        self.cohorts.get(id.index()).ok_or(FlowError::UnknownCohort(id))
    }

    pub(crate) fn cohort_mut(&mut self, id: CohortId) -> Result<&mut Cohort, FlowError> {
        self.cohorts.get_mut(id.index()).ok_or(FlowError::UnknownCohort(id))
    }

    pub fn find(&self, name: &str) -> Option<CohortId> {
        self.cohorts.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn arm_cohort(&self, t: Treatment) -> CohortId {
        let root = &self.cohorts[self.root.index()];
        root.children
            .iter()
            .copied()
            .find(|&c| self.cohorts[c.index()].assigned_treatment == Some(t))
            .expect("both arms exist under the root")
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Cohort> {
        self.cohorts.iter().filter(|c| c.is_leaf())
    }

    /// Creates two children under a leaf cohort. When both the cohort count
    /// and `yes_count` are known the no-child receives the remainder.
    pub fn split_cohort(
        &mut self,
        cohort: CohortId,
        yes_label: &str,
        no_label: &str,
        yes_count: Option<u64>,
    ) -> Result<(CohortId, CohortId), FlowError> {
        let parent = self.cohort(cohort)?;
        if !parent.is_leaf() {
            return Err(FlowError::NotALeaf(cohort));
        }
        if let (Some(total), Some(yes)) = (parent.count, yes_count) {
            if yes > total {
                return Err(FlowError::CountExceedsParent { cohort, requested: yes, available: total });
            }
        }
        for label in [yes_label, no_label] {
            if self.find(label).is_some() {
                return Err(FlowError::DuplicateName(label.to_string()));
            }
        }
        let no_count = match (parent.count, yes_count) {
            (Some(total), Some(yes)) => Some(total - yes),
            _ => None,
        };
        let template = Cohort {
            id: cohort,
            name: String::new(),
            parent: Some(cohort),
            children: Vec::new(),
            assigned_treatment: parent.assigned_treatment,
            effective_treatment: parent.effective_treatment,
            count: None,
            state: CohortState::Active,
            study_param: None,
            effective_param: None,
            evidence: Vec::new(),
            measurement_error: None,
        };
        let yes_id = CohortId(self.cohorts.len() as u32);
        let no_id = CohortId(yes_id.0 + 1);
        self.cohorts.push(Cohort { id: yes_id, name: yes_label.to_string(), count: yes_count, ..template.clone() });
        self.cohorts.push(Cohort { id: no_id, name: no_label.to_string(), count: no_count, ..template });
        self.cohorts[cohort.index()].children = vec![yes_id, no_id];
        Ok((yes_id, no_id))
    }

    pub(crate) fn link(&mut self, cohort: CohortId, study: NodeId, effective: NodeId) -> Result<(), FlowError> {
        let c = self.cohort_mut(cohort)?;
        c.study_param = Some(study);
        c.effective_param = Some(effective);
        Ok(())
    }

    /// Adds an evidence node under the cohort's effective parameter and
    /// records it on the cohort.
    pub fn record_evidence(
        &mut self,
        diagram: &mut InfluenceDiagram,
        cohort: CohortId,
        successes: u64,
        trials: u64,
        naming: &Naming,
    ) -> Result<NodeId, FlowError> {
        let c = self.cohort(cohort)?;
        if !c.is_leaf() {
            return Err(FlowError::NotALeaf(cohort));
        }
        if trials == 0 || successes > trials {
            return Err(FlowError::InvalidCounts { successes, trials });
        }
        if let Some(count) = c.count {
            if trials > count {
                return Err(FlowError::TrialsExceedCohort { cohort, trials, count });
            }
        }
        let parent = c.effective_param.ok_or(FlowError::Unlinked(cohort))?;
        let name = format!(
            "{} (record {})",
            naming.name(TemplateKind::Evidence, &c.name)?,
            c.evidence.len() + 1
        );
        let node = diagram.add_evidence(name, parent, successes, trials)?;
        self.cohorts[cohort.index()].evidence.push(EvidenceRecord { node, successes, trials });
        Ok(node)
    }

    /// Interior cohorts whose fully specified children counts do not add up.
    pub fn conservation_check(&self) -> Vec<ConservationViolation> {
        let mut out = Vec::new();
        for c in &self.cohorts {
            let Some(count) = c.count else { continue };
            if c.is_leaf() {
                continue;
            }
            let counts: Option<Vec<u64>> =
                c.children.iter().map(|&k| self.cohorts[k.index()].count).collect();
            if let Some(counts) = counts {
                let sum: u64 = counts.iter().sum();
                if sum != count {
                    out.push(ConservationViolation { cohort: c.id, name: c.name.clone(), count, children_sum: sum });
                }
            }
        }
        out
    }

    /// Structural invariants: parent/child references agree, the state
    /// matches the subdivision, and leaves link to parameters at the right
    /// levels. Returns human-readable problems.
    pub fn check_structure(&self, diagram: &InfluenceDiagram) -> Vec<String> {
        let mut problems = Vec::new();
        for c in &self.cohorts {
            match c.parent {
                None if c.id != self.root => problems.push(format!("{} has no parent", c.id)),
                Some(p) => match self.cohorts.get(p.index()) {
                    Some(parent) if parent.children.contains(&c.id) => {}
                    _ => problems.push(format!("{} is not listed under its parent {p}", c.id)),
                },
                None => {}
            }
            for &k in &c.children {
                if self.cohorts.get(k.index()).and_then(|x| x.parent) != Some(c.id) {
                    problems.push(format!("child {k} of {} points elsewhere", c.id));
                }
            }
            if (c.state == CohortState::Subdivided) != !c.is_leaf() {
                problems.push(format!("{} state {:?} disagrees with its children", c.id, c.state));
            }
            if c.is_leaf() {
                let levels = [(c.study_param, Level::Study), (c.effective_param, Level::Effective)];
                for (param, level) in levels {
                    match param.map(|p| diagram.node(p)) {
                        Some(Ok(n)) if n.level == level && n.is_parameter() => {}
                        _ => problems.push(format!("{} lacks a {:?}-level parameter", c.id, level)),
                    }
                }
                for rec in &c.evidence {
                    match diagram.node(rec.node).map(|n| &n.kind) {
                        Ok(NodeKind::Evidence { parent, .. }) if Some(*parent) == c.effective_param => {}
                        _ => problems.push(format!("{} evidence {} is not under its effective parameter", c.id, rec.node)),
                    }
                }
            }
        }
        problems
    }

    pub fn to_document(&self) -> FlowDocument {
        FlowDocument {
            version: FLOW_DOCUMENT_VERSION,
            trial_name: self.trial_name.clone(),
            root: self.root,
            arms: self.arms,
            cohorts: self.cohorts.clone(),
        }
    }

    pub fn from_document(doc: FlowDocument) -> Result<Self, FlowError> {
        if doc.version != FLOW_DOCUMENT_VERSION {
            return Err(FlowError::InvalidDocument(format!("unsupported version {}", doc.version)));
        }
        for (i, c) in doc.cohorts.iter().enumerate() {
            if c.id.index() != i {
                return Err(FlowError::InvalidDocument(format!("cohort ids must be dense; found {} at {i}", c.id)));
            }
        }
        if doc.cohorts.get(doc.root.index()).is_none() {
            return Err(FlowError::UnknownCohort(doc.root));
        }
        Ok(Self { trial_name: doc.trial_name, root: doc.root, arms: doc.arms, cohorts: doc.cohorts })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("flow document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FlowError> {
        let doc = serde_json::from_str(text).map_err(|e: serde_json::Error| FlowError::InvalidDocument(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph flow {\n  rankdir=TB;\n  node [shape=box, fontsize=10];\n");
        for c in &self.cohorts {
            let count = c.count.map(|n| format!("\\nn = {n}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "  {} [label=\"{}{}\\n[{:?}]\"];",
                c.id,
                c.name.replace('"', "\\\""),
                count,
                c.state
            );
        }
        for c in &self.cohorts {
            for k in &c.children {
                let _ = writeln!(out, "  {} -> {k};", c.id);
            }
        }
        out.push_str("}\n");
        out
    }
}
