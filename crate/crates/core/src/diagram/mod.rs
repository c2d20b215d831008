//! Restricted-class influence diagram for trial statistical models.
//!
//! A diagram is a flat arena of [`ParameterNode`]s. Arcs are implied by the
//! parent references inside each node's [`NodeKind`]; a diagram imported from
//! JSON may additionally carry arcs outside the restricted class in
//! `extra_parents`, which [`validate_restricted_class`] reports.
//!
//! Node ids are dense: the node with id `k` is stored at index `k`.

mod dot;
mod eval;
mod reduce;
mod validate;

pub use dot::to_dot;
pub use eval::{evaluate, partials, topological_order, Partials};
pub use reduce::{eliminate_identical, ReductionMap};
pub use validate::{validate_restricted_class, ValidationReport, Violation, ViolationKind};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag written into exported model documents.
pub const MODEL_DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Population,
    Study,
    Effective,
    Patient,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Population, Level::Study, Level::Effective, Level::Patient];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Population => "Population",
            Level::Study => "Study",
            Level::Effective => "Effective",
            Level::Patient => "Patient",
        }
    }

    /// Whether a node at `self` may depend on a node at `parent`.
    ///
    /// Population feeds everything below it; Study feeds Study and Effective;
    /// Patient nodes hang directly off Population.
    pub fn may_depend_on(self, parent: Level) -> bool {
        use Level::*;
        match (parent, self) {
            (_, Patient) => parent == Population,
            (Patient, _) => false,
            (Population, _) => true,
            (Study, Study) | (Study, Effective) => true,
            (Effective, Effective) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Outcome,
    Methodological,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmTag {
    Exp,
    Ctl,
    Baseline,
    None,
}

/// The closed set of deterministic functions a node may compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn")]
pub enum DetFn {
    Identity { parent: NodeId },
    /// `mix * in_part + (1 - mix) * out_part`
    Mixture { mix: NodeId, in_part: NodeId, out_part: NodeId },
    /// `sens * source + (1 - spec) * (1 - source)`
    MeasurementError { sens: NodeId, spec: NodeId, source: NodeId },
}

impl DetFn {
    pub fn parents(&self) -> Vec<NodeId> {
        match *self {
            DetFn::Identity { parent } => vec![parent],
            DetFn::Mixture { mix, in_part, out_part } => vec![mix, in_part, out_part],
            DetFn::MeasurementError { sens, spec, source } => vec![sens, spec, source],
        }
    }

    /// Evaluates the function given a lookup for parent values.
    pub fn apply(&self, value: impl Fn(NodeId) -> f64) -> f64 {
        match *self {
            DetFn::Identity { parent } => value(parent),
            DetFn::Mixture { mix, in_part, out_part } => {
                let m = value(mix);
                m * value(in_part) + (1.0 - m) * value(out_part)
            }
            DetFn::MeasurementError { sens, spec, source } => {
                let s = value(source);
                value(sens) * s + (1.0 - value(spec)) * (1.0 - s)
            }
        }
    }

    /// Local partial derivatives with respect to each parent, in the order
    /// returned by [`DetFn::parents`].
    pub fn local_partials(&self, value: impl Fn(NodeId) -> f64) -> Vec<(NodeId, f64)> {
        match *self {
            DetFn::Identity { parent } => vec![(parent, 1.0)],
            DetFn::Mixture { mix, in_part, out_part } => {
                let m = value(mix);
                vec![
                    (mix, value(in_part) - value(out_part)),
                    (in_part, m),
                    (out_part, 1.0 - m),
                ]
            }
            DetFn::MeasurementError { sens, spec, source } => {
                let s = value(source);
                vec![
                    (sens, s),
                    (spec, -(1.0 - s)),
                    (source, value(sens) + value(spec) - 1.0),
                ]
            }
        }
    }

    pub fn map_parents(&self, f: impl Fn(NodeId) -> NodeId) -> DetFn {
        match *self {
            DetFn::Identity { parent } => DetFn::Identity { parent: f(parent) },
            DetFn::Mixture { mix, in_part, out_part } => DetFn::Mixture {
                mix: f(mix),
                in_part: f(in_part),
                out_part: f(out_part),
            },
            DetFn::MeasurementError { sens, spec, source } => DetFn::MeasurementError {
                sens: f(sens),
                spec: f(spec),
                source: f(source),
            },
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum NodeKind {
    /// Parentless beta prior over a rate in (0, 1).
    ChanceBeta {
        a: f64,
        b: f64,
        /// Shapes have not been elicited from the user yet.
        #[serde(default, skip_serializing_if = "is_false")]
        pending: bool,
        /// Permits shapes below 1 (boundary modes).
        #[serde(default, skip_serializing_if = "is_false")]
        allow_sub_unit: bool,
    },
    Deterministic {
        function: DetFn,
    },
    Evidence {
        successes: u64,
        trials: u64,
        parent: NodeId,
    },
}

impl NodeKind {
    pub fn beta(a: f64, b: f64) -> Self {
        NodeKind::ChanceBeta { a, b, pending: false, allow_sub_unit: false }
    }

    pub fn is_chance(&self) -> bool {
        matches!(self, NodeKind::ChanceBeta { .. })
    }

    pub fn is_evidence(&self) -> bool {
        matches!(self, NodeKind::Evidence { .. })
    }

    pub fn function(&self) -> Option<&DetFn> {
        match self {
            NodeKind::Deterministic { function } => Some(function),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterNode {
    pub id: NodeId,
    pub name: String,
    pub level: Level,
    pub role: Role,
    pub arm: ArmTag,
    #[serde(flatten)]
    pub kind: NodeKind,
    /// Arcs not implied by `kind`. Always empty for diagrams built through
    /// the mutation API.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_parents: Vec<NodeId>,
}

impl ParameterNode {
    /// All parents: those implied by the node kind plus any extra arcs.
    pub fn parents(&self) -> Vec<NodeId> {
        let mut out = match &self.kind {
            NodeKind::ChanceBeta { .. } => Vec::new(),
            NodeKind::Deterministic { function } => function.parents(),
            NodeKind::Evidence { parent, .. } => vec![*parent],
        };
        out.extend_from_slice(&self.extra_parents);
        out
    }

    /// Statistical parameters are everything except evidence.
    pub fn is_parameter(&self) -> bool {
        !self.kind.is_evidence()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagramError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("a node named {0:?} already exists")]
    DuplicateName(String),
    #[error("node names must be nonempty")]
    EmptyName,
    #[error("cycle detected through: {}", .0.join(", "))]
    CycleDetected(Vec<String>),
    #[error("no value assigned to free node {0}")]
    MissingAssignment(NodeId),
    #[error("value {value} for node {node} is outside the open interval (0, 1)")]
    ValueOutOfRange { node: NodeId, value: f64 },
    #[error("node {0} is not a chance node")]
    NotChance(NodeId),
    #[error("node {0} is not a deterministic node")]
    NotDeterministic(NodeId),
    #[error("level {child:?} may not depend on level {parent:?}")]
    LevelDirection { parent: Level, child: Level },
    #[error("evidence parent {0} must be a Study- or Effective-level parameter")]
    EvidenceParent(NodeId),
    #[error("invalid evidence counts: {successes} successes in {trials} trials")]
    InvalidCounts { successes: u64, trials: u64 },
    #[error("invalid model document: {0}")]
    InvalidDocument(String),
}

/// Serialized form of a diagram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub revision: u64,
    pub nodes: Vec<ParameterNode>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InfluenceDiagram {
    nodes: Vec<ParameterNode>,
    names: HashMap<String, NodeId>,
    revision: u64,
}

impl InfluenceDiagram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Monotone mutation counter.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn nodes(&self) -> &[ParameterNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&ParameterNode, DiagramError> {
        self.nodes.get(id.index()).ok_or(DiagramError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    /// Number of statistical parameters (non-evidence nodes).
    pub fn parameter_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_parameter()).count()
    }

    /// Parentless chance nodes in id order.
    pub fn chance_nodes(&self) -> impl Iterator<Item = &ParameterNode> {
        self.nodes.iter().filter(|n| n.kind.is_chance())
    }

    pub fn evidence_nodes(&self) -> impl Iterator<Item = &ParameterNode> {
        self.nodes.iter().filter(|n| n.kind.is_evidence())
    }

    fn push(
        &mut self,
        name: String,
        level: Level,
        role: Role,
        arm: ArmTag,
        kind: NodeKind,
    ) -> Result<NodeId, DiagramError> {
        if name.trim().is_empty() {
            return Err(DiagramError::EmptyName);
        }
        if self.names.contains_key(&name) {
            return Err(DiagramError::DuplicateName(name));
        }
        let id = NodeId(self.nodes.len() as u32);
        self.names.insert(name.clone(), id);
        self.nodes.push(ParameterNode { id, name, level, role, arm, kind, extra_parents: Vec::new() });
        self.revision += 1;
        Ok(id)
    }

    fn check_parents(&self, level: Level, function: &DetFn) -> Result<(), DiagramError> {
        for p in function.parents() {
            let parent = self.node(p)?;
            if parent.kind.is_evidence() {
                return Err(DiagramError::UnknownNode(p));
            }
            if !level.may_depend_on(parent.level) {
                return Err(DiagramError::LevelDirection { parent: parent.level, child: level });
            }
        }
        Ok(())
    }

    pub fn add_chance(
        &mut self,
        name: impl Into<String>,
        level: Level,
        role: Role,
        arm: ArmTag,
        a: f64,
        b: f64,
    ) -> Result<NodeId, DiagramError> {
        self.push(name.into(), level, role, arm, NodeKind::beta(a, b))
    }

    /// Adds a chance node whose shapes still have to be elicited.
    pub fn add_pending_chance(
        &mut self,
        name: impl Into<String>,
        level: Level,
        role: Role,
        arm: ArmTag,
    ) -> Result<NodeId, DiagramError> {
        let kind = NodeKind::ChanceBeta { a: 1.0, b: 1.0, pending: true, allow_sub_unit: false };
        self.push(name.into(), level, role, arm, kind)
    }

    pub fn add_deterministic(
        &mut self,
        name: impl Into<String>,
        level: Level,
        role: Role,
        arm: ArmTag,
        function: DetFn,
    ) -> Result<NodeId, DiagramError> {
        self.check_parents(level, &function)?;
        self.push(name.into(), level, role, arm, NodeKind::Deterministic { function })
    }

    pub fn add_evidence(
        &mut self,
        name: impl Into<String>,
        parent: NodeId,
        successes: u64,
        trials: u64,
    ) -> Result<NodeId, DiagramError> {
        let p = self.node(parent)?;
        if !matches!(p.level, Level::Study | Level::Effective) || p.kind.is_evidence() {
            return Err(DiagramError::EvidenceParent(parent));
        }
        if trials == 0 || successes > trials {
            return Err(DiagramError::InvalidCounts { successes, trials });
        }
        let kind = NodeKind::Evidence { successes, trials, parent };
        self.push(name.into(), Level::Effective, Role::Outcome, ArmTag::None, kind)
    }

    /// Replaces the function of an existing deterministic node. Rejects
    /// changes that would close a cycle.
    pub fn set_function(&mut self, id: NodeId, function: DetFn) -> Result<(), DiagramError> {
        let node = self.node(id)?;
        if node.kind.function().is_none() {
            return Err(DiagramError::NotDeterministic(id));
        }
        self.check_parents(node.level, &function)?;
        let previous = std::mem::replace(
            &mut self.nodes[id.index()].kind,
            NodeKind::Deterministic { function },
        );
        if let Err(e) = topological_order(self) {
            self.nodes[id.index()].kind = previous;
            return Err(e);
        }
        self.revision += 1;
        Ok(())
    }

    /// Sets beta shapes on a chance node and clears its pending flag.
    pub fn set_beta(
        &mut self,
        id: NodeId,
        a: f64,
        b: f64,
        allow_sub_unit: bool,
    ) -> Result<(), DiagramError> {
        let node = self.nodes.get_mut(id.index()).ok_or(DiagramError::UnknownNode(id))?;
        match &mut node.kind {
            NodeKind::ChanceBeta { .. } => {
                node.kind = NodeKind::ChanceBeta { a, b, pending: false, allow_sub_unit };
                self.revision += 1;
                Ok(())
            }
            _ => Err(DiagramError::NotChance(id)),
        }
    }

    /// Chance nodes still awaiting elicitation.
    pub fn pending_chance(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::ChanceBeta { pending: true, .. }))
            .map(|n| n.id)
            .collect()
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            version: MODEL_DOCUMENT_VERSION,
            revision: self.revision,
            nodes: self.nodes.clone(),
        }
    }

    /// Builds a diagram from a document. Only id density and name
    /// uniqueness are enforced here; structural checks are the job of
    /// [`validate_restricted_class`].
    pub fn from_document(doc: ModelDocument) -> Result<Self, DiagramError> {
        if doc.version != MODEL_DOCUMENT_VERSION {
            return Err(DiagramError::InvalidDocument(format!(
                "unsupported version {}",
                doc.version
            )));
        }
        let mut names = HashMap::with_capacity(doc.nodes.len());
        for (i, node) in doc.nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(DiagramError::InvalidDocument(format!(
                    "node ids must be dense and ordered; found {} at position {i}",
                    node.id
                )));
            }
            if names.insert(node.name.clone(), node.id).is_some() {
                return Err(DiagramError::DuplicateName(node.name.clone()));
            }
        }
        Ok(Self { nodes: doc.nodes, names, revision: doc.revision })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DiagramError> {
        let doc: ModelDocument = serde_json::from_str(text)
            .map_err(|e| DiagramError::InvalidDocument(e.to_string()))?;
        Self::from_document(doc)
    }

    /// Raw mutable access for building deliberately malformed diagrams in
    /// tests and importers.
    pub fn node_mut_unchecked(&mut self, id: NodeId) -> Option<&mut ParameterNode> {
        self.revision += 1;
        self.nodes.get_mut(id.index())
    }
}
