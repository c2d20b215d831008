use std::collections::HashSet;

use serde::Serialize;

use super::{topological_order, DiagramError, InfluenceDiagram, Level, NodeId, NodeKind, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    EmptyName,
    DuplicateName,
    UnknownParent,
    ChanceWithParent,
    EvidenceParentCount,
    EvidenceParentLevel,
    EvidenceCounts,
    DeterministicExtraArc,
    EvidenceAsParent,
    LevelDirection,
    MethodologicalPlacement,
    BetaShape,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node: NodeId,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, node: NodeId, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation { node, kind, message: message.into() });
    }
}

/// Checks every restricted-class invariant and lists each violation with the
/// offending node.
pub fn validate_restricted_class(diagram: &InfluenceDiagram) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut names = HashSet::new();

    for node in diagram.nodes() {
        let id = node.id;
        if node.name.trim().is_empty() {
            report.push(id, ViolationKind::EmptyName, "node name is empty");
        } else if !names.insert(node.name.as_str()) {
            report.push(id, ViolationKind::DuplicateName, format!("duplicate name {:?}", node.name));
        }

        for p in node.parents() {
            match diagram.node(p) {
                Err(_) => report.push(id, ViolationKind::UnknownParent, format!("parent {p} does not exist")),
                Ok(parent) => {
                    if parent.kind.is_evidence() {
                        report.push(id, ViolationKind::EvidenceAsParent, format!("evidence node {p} used as a parent"));
                    } else if !node.kind.is_evidence() && !node.level.may_depend_on(parent.level) {
                        report.push(
                            id,
                            ViolationKind::LevelDirection,
                            format!("{:?} node depends on {:?} node {p}", node.level, parent.level),
                        );
                    }
                }
            }
        }

        match &node.kind {
            NodeKind::ChanceBeta { a, b, allow_sub_unit, .. } => {
                if !node.extra_parents.is_empty() {
                    report.push(id, ViolationKind::ChanceWithParent, "chance node with parent");
                }
                let positive = a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0;
                if !positive {
                    report.push(id, ViolationKind::BetaShape, format!("beta shapes ({a}, {b}) must be positive"));
                } else if (*a < 1.0 || *b < 1.0) && !allow_sub_unit {
                    report.push(id, ViolationKind::BetaShape, format!("beta shapes ({a}, {b}) below 1 without override"));
                }
            }
            NodeKind::Deterministic { .. } => {
                if !node.extra_parents.is_empty() {
                    report.push(id, ViolationKind::DeterministicExtraArc, "deterministic node with arcs outside its function");
                }
            }
            NodeKind::Evidence { successes, trials, parent } => {
                if !node.extra_parents.is_empty() {
                    report.push(id, ViolationKind::EvidenceParentCount, "evidence node with more than one parent");
                }
                if *trials == 0 || successes > trials {
                    report.push(id, ViolationKind::EvidenceCounts, format!("{successes} successes in {trials} trials"));
                }
                if let Ok(p) = diagram.node(*parent) {
                    if !matches!(p.level, Level::Study | Level::Effective) {
                        report.push(
                            id,
                            ViolationKind::EvidenceParentLevel,
                            format!("evidence parent {parent} is at {:?} level", p.level),
                        );
                    }
                }
            }
        }

        if node.role == Role::Methodological
            && !(node.level == Level::Population && node.kind.is_chance())
        {
            report.push(
                id,
                ViolationKind::MethodologicalPlacement,
                "methodological parameters must be Population-level chance nodes",
            );
        }
    }

    if !report.has(ViolationKind::UnknownParent) {
        if let Err(DiagramError::CycleDetected(names)) = topological_order(diagram) {
            let node = names
                .first()
                .and_then(|n| diagram.find(n))
                .unwrap_or(NodeId(0));
            report.push(node, ViolationKind::Cycle, format!("cycle through {}", names.join(", ")));
        }
    }
    report
}
