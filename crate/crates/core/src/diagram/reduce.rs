//! Elimination of functionally identical parameters.
//!
//! Every maximal chain of `Identity` nodes collapses onto the node at its
//! head, which is either a chance node or a non-identity deterministic node.
//! One memoized pass over the arena, so the cost is linear in node count.

use super::{DetFn, InfluenceDiagram, NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionMap {
    representative: Vec<NodeId>,
    /// Free (parentless) parameters, m.
    pub free_count: usize,
    /// All statistical parameters, n.
    pub total_count: usize,
}

impl ReductionMap {
    /// The map that eliminates nothing.
    pub fn trivial(diagram: &InfluenceDiagram) -> Self {
        ReductionMap {
            representative: (0..diagram.len() as u32).map(NodeId).collect(),
            free_count: diagram.chance_nodes().count(),
            total_count: diagram.parameter_count(),
        }
    }

    pub fn rep(&self, id: NodeId) -> NodeId {
        self.representative[id.index()]
    }

    pub fn len(&self) -> usize {
        self.representative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representative.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.representative.iter().enumerate().all(|(i, r)| r.index() == i)
    }

    /// Rewrites every parent reference through the map. Identity nodes stay
    /// in the arena (ids remain dense) but point straight at their
    /// representative.
    pub fn apply(&self, diagram: &InfluenceDiagram) -> InfluenceDiagram {
        let mut out = diagram.clone();
        for i in 0..diagram.len() {
            let node = out.node_mut_unchecked(NodeId(i as u32)).expect("same arena");
            node.kind = match &node.kind {
                NodeKind::Deterministic { function } => {
                    NodeKind::Deterministic { function: function.map_parents(|p| self.rep(p)) }
                }
                NodeKind::Evidence { successes, trials, parent } => NodeKind::Evidence {
                    successes: *successes,
                    trials: *trials,
                    parent: self.rep(*parent),
                },
                other => other.clone(),
            };
        }
        out
    }
}

const UNRESOLVED: u32 = u32::MAX;
const IN_PROGRESS: u32 = u32::MAX - 1;

pub fn eliminate_identical(diagram: &InfluenceDiagram) -> ReductionMap {
    let nodes = diagram.nodes();
    let mut rep = vec![UNRESOLVED; nodes.len()];
    let mut stack = Vec::new();
    for start in 0..nodes.len() {
        if rep[start] != UNRESOLVED {
            continue;
        }
        let mut cur = start;
        let head = loop {
            if rep[cur] != UNRESOLVED {
                // An in-progress marker here means an identity cycle; such a
                // diagram violates the precondition, so map the chain onto
                // the node where it closed.
                break if rep[cur] == IN_PROGRESS { cur as u32 } else { rep[cur] };
            }
            match &nodes[cur].kind {
                NodeKind::Deterministic { function: DetFn::Identity { parent } }
                    if diagram.contains(*parent) =>
                {
                    rep[cur] = IN_PROGRESS;
                    stack.push(cur);
                    cur = parent.index();
                }
                _ => {
                    rep[cur] = cur as u32;
                    break cur as u32;
                }
            }
        };
        for i in stack.drain(..) {
            rep[i] = head;
        }
    }
    ReductionMap {
        representative: rep.into_iter().map(NodeId).collect(),
        free_count: diagram.chance_nodes().count(),
        total_count: diagram.parameter_count(),
    }
}
