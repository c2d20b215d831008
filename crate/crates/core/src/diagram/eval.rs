use std::collections::{BTreeMap, VecDeque};

use super::{DiagramError, InfluenceDiagram, NodeId, NodeKind};

/// Kahn ordering, ties broken by id so the result is deterministic.
pub fn topological_order(diagram: &InfluenceDiagram) -> Result<Vec<NodeId>, DiagramError> {
    let n = diagram.len();
    let mut indegree = vec![0usize; n];
    let mut children: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for node in diagram.nodes() {
        for p in node.parents() {
            if !diagram.contains(p) {
                return Err(DiagramError::UnknownNode(p));
            }
            indegree[node.id.index()] += 1;
            children[p.index()].push(node.id);
        }
    }

    let mut queue: VecDeque<NodeId> =
        (0..n).filter(|&i| indegree[i] == 0).map(|i| NodeId(i as u32)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(id) = queue.pop_front() {
        order.push(id);
        for &c in &children[id.index()] {
            indegree[c.index()] -= 1;
            if indegree[c.index()] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }

    // Every unordered node still has an unordered parent, so walking parents
    // from any of them must revisit a node.
    let start = (0..n).find(|&i| indegree[i] > 0).expect("unordered node exists");
    let mut seen = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut cur = start;
    while seen[cur] == usize::MAX {
        seen[cur] = path.len();
        path.push(cur);
        cur = diagram.nodes()[cur]
            .parents()
            .into_iter()
            .map(NodeId::index)
            .find(|&p| indegree[p] > 0)
            .expect("unordered node has an unordered parent");
    }
    let mut names: Vec<String> =
        path[seen[cur]..].iter().map(|&i| diagram.nodes()[i].name.clone()).collect();
    names.reverse();
    Err(DiagramError::CycleDetected(names))
}

fn check_assignment(
    diagram: &InfluenceDiagram,
    assignment: &BTreeMap<NodeId, f64>,
) -> Result<(), DiagramError> {
    for node in diagram.chance_nodes() {
        let v = *assignment.get(&node.id).ok_or(DiagramError::MissingAssignment(node.id))?;
        if !(v > 0.0 && v < 1.0) {
            return Err(DiagramError::ValueOutOfRange { node: node.id, value: v });
        }
    }
    Ok(())
}

/// Values of every parameter node given values for the free chance nodes.
/// Evidence nodes are not part of the output.
pub fn evaluate(
    diagram: &InfluenceDiagram,
    assignment: &BTreeMap<NodeId, f64>,
) -> Result<BTreeMap<NodeId, f64>, DiagramError> {
    check_assignment(diagram, assignment)?;
    let order = topological_order(diagram)?;
    let mut values = vec![f64::NAN; diagram.len()];
    for id in order {
        let node = &diagram.nodes()[id.index()];
        values[id.index()] = match &node.kind {
            NodeKind::ChanceBeta { .. } => assignment[&id],
            NodeKind::Deterministic { function } => function.apply(|p| values[p.index()]),
            NodeKind::Evidence { .. } => continue,
        };
    }
    Ok(diagram
        .nodes()
        .iter()
        .filter(|n| n.is_parameter())
        .map(|n| (n.id, values[n.id.index()]))
        .collect())
}

/// Forward-mode derivatives of every parameter with respect to every free
/// chance node.
#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    /// Free chance nodes, in id order; column order of every row.
    pub free: Vec<NodeId>,
    pub values: BTreeMap<NodeId, f64>,
    pub rows: BTreeMap<NodeId, Vec<f64>>,
}

impl Partials {
    pub fn get(&self, node: NodeId, free: NodeId) -> Option<f64> {
        let col = self.free.iter().position(|&f| f == free)?;
        self.rows.get(&node).map(|r| r[col])
    }
}

pub fn partials(
    diagram: &InfluenceDiagram,
    assignment: &BTreeMap<NodeId, f64>,
) -> Result<Partials, DiagramError> {
    check_assignment(diagram, assignment)?;
    let order = topological_order(diagram)?;
    let free: Vec<NodeId> = diagram.chance_nodes().map(|n| n.id).collect();
    let m = free.len();
    let mut values = vec![f64::NAN; diagram.len()];
    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); diagram.len()];
    for id in order {
        let node = &diagram.nodes()[id.index()];
        match &node.kind {
            NodeKind::ChanceBeta { .. } => {
                values[id.index()] = assignment[&id];
                let mut g = vec![0.0; m];
                g[free.binary_search(&id).expect("chance node is free")] = 1.0;
                grads[id.index()] = g;
            }
            NodeKind::Deterministic { function } => {
                values[id.index()] = function.apply(|p| values[p.index()]);
                let mut g = vec![0.0; m];
                for (p, d) in function.local_partials(|p| values[p.index()]) {
                    for (gi, pi) in g.iter_mut().zip(&grads[p.index()]) {
                        *gi += d * pi;
                    }
                }
                grads[id.index()] = g;
            }
            NodeKind::Evidence { .. } => {}
        }
    }
    let mut out_values = BTreeMap::new();
    let mut rows = BTreeMap::new();
    for node in diagram.nodes().iter().filter(|n| n.is_parameter()) {
        out_values.insert(node.id, values[node.id.index()]);
        rows.insert(node.id, std::mem::take(&mut grads[node.id.index()]));
    }
    Ok(Partials { free, values: out_values, rows })
}
