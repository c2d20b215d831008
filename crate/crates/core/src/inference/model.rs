//! The reduced model: free beta parameters, a straight-line program for the
//! deterministic nodes, and one log-density term per prior and per evidence
//! node.

use serde::Serialize;

use crate::diagram::{
    eliminate_identical, topological_order, validate_restricted_class, ArmTag, DetFn,
    InfluenceDiagram, Level, NodeId, NodeKind, ReductionMap,
};

use super::InferenceError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeParameter {
    pub node: NodeId,
    pub name: String,
    pub a: f64,
    pub b: f64,
}

impl FreeParameter {
    pub fn prior_mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

/// One deterministic node. Operands are slot indices; slots `0..m` hold the
/// free parameters and slot `m + k` holds the output of op `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "op")]
pub enum Op {
    Copy { from: usize },
    Mixture { mix: usize, in_part: usize, out_part: usize },
    MeasurementError { sens: usize, spec: usize, source: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "term")]
pub enum LogDensityTerm {
    Prior { param: usize, a: f64, b: f64 },
    Binomial { evidence: NodeId, successes: u64, trials: u64, rate: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaShape {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone)]
pub struct ReducedModel {
    free: Vec<FreeParameter>,
    ops: Vec<Op>,
    terms: Vec<LogDensityTerm>,
    reduction: ReductionMap,
    slot_of: Vec<Option<usize>>,
    eliminated: bool,
    conjugate: Vec<Option<BetaShape>>,
    patient_experimental: Option<usize>,
    patient_control: Option<usize>,
}

/// Values and forward-mode gradients of every slot.
pub(crate) struct Forward {
    pub values: Vec<f64>,
    /// Row-major, `slots x m`.
    pub grads: Vec<f64>,
}

fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

impl ReducedModel {
    /// Compiles a diagram. With `eliminate`, identity chains collapse onto
    /// their head; without, each identity node becomes a copy op.
    pub fn build(diagram: &InfluenceDiagram, eliminate: bool) -> Result<Self, InferenceError> {
        let pending = diagram.pending_chance();
        if !pending.is_empty() {
            let names = pending
                .iter()
                .map(|id| diagram.node(*id).map(|n| n.name.clone()).unwrap_or_default())
                .collect();
            return Err(InferenceError::PendingPriors(names));
        }
        let report = validate_restricted_class(diagram);
        if let Some(v) = report.violations.first() {
            return Err(InferenceError::InvalidModel(format!(
                "{} violation(s), first at {}: {}",
                report.violations.len(),
                v.node,
                v.message
            )));
        }
        let order = topological_order(diagram)?;
        let reduction = eliminate_identical(diagram);

        let mut free = Vec::new();
        let mut slot_of = vec![None; diagram.len()];
        for node in diagram.chance_nodes() {
            if let NodeKind::ChanceBeta { a, b, .. } = node.kind {
                slot_of[node.id.index()] = Some(free.len());
                free.push(FreeParameter { node: node.id, name: node.name.clone(), a, b });
            }
        }
        if free.is_empty() {
            return Err(InferenceError::EmptyModel);
        }
        let m = free.len();

        let mut ops = Vec::new();
        let mut evidence = Vec::new();
        for id in order {
            let node = &diagram.nodes()[id.index()];
            let slot = |p: NodeId| slot_of[p.index()].expect("parents precede children");
            match &node.kind {
                NodeKind::ChanceBeta { .. } => {}
                NodeKind::Deterministic { function } => {
                    let op = match *function {
                        DetFn::Identity { parent } if eliminate => {
                            slot_of[id.index()] = Some(slot(parent));
                            continue;
                        }
                        DetFn::Identity { parent } => Op::Copy { from: slot(parent) },
                        DetFn::Mixture { mix, in_part, out_part } => Op::Mixture {
                            mix: slot(mix),
                            in_part: slot(in_part),
                            out_part: slot(out_part),
                        },
                        DetFn::MeasurementError { sens, spec, source } => Op::MeasurementError {
                            sens: slot(sens),
                            spec: slot(spec),
                            source: slot(source),
                        },
                    };
                    slot_of[id.index()] = Some(m + ops.len());
                    ops.push(op);
                }
                NodeKind::Evidence { successes, trials, parent } => {
                    evidence.push(LogDensityTerm::Binomial {
                        evidence: id,
                        successes: *successes,
                        trials: *trials,
                        rate: slot(*parent),
                    });
                }
            }
        }
        // Terms in a fixed order: priors by free index, then evidence by id.
        evidence.sort_by_key(|t| match t {
            LogDensityTerm::Binomial { evidence, .. } => *evidence,
            LogDensityTerm::Prior { .. } => unreachable!(),
        });
        let mut terms: Vec<LogDensityTerm> = free
            .iter()
            .enumerate()
            .map(|(i, p)| LogDensityTerm::Prior { param: i, a: p.a, b: p.b })
            .collect();
        terms.extend(evidence);

        let conjugate = conjugate_shapes(diagram, &reduction, &free);
        let patient = |arm: ArmTag| {
            diagram
                .nodes()
                .iter()
                .find(|n| n.level == Level::Patient && n.arm == arm && n.is_parameter())
                .and_then(|n| slot_of[n.id.index()])
        };
        let patient_experimental = patient(ArmTag::Exp);
        let patient_control = patient(ArmTag::Ctl);

        Ok(ReducedModel {
            free,
            ops,
            terms,
            reduction,
            slot_of,
            eliminated: eliminate,
            conjugate,
            patient_experimental,
            patient_control,
        })
    }

    /// Free-parameter count, m.
    pub fn m(&self) -> usize {
        self.free.len()
    }

    /// Statistical-parameter count of the source diagram, n.
    pub fn n(&self) -> usize {
        self.reduction.total_count
    }

    pub fn free(&self) -> &[FreeParameter] {
        &self.free
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn terms(&self) -> &[LogDensityTerm] {
        &self.terms
    }

    pub fn reduction(&self) -> &ReductionMap {
        &self.reduction
    }

    pub fn is_eliminated(&self) -> bool {
        self.eliminated
    }

    /// Slot holding the value of a diagram node, if it is a parameter.
    pub fn slot(&self, node: NodeId) -> Option<usize> {
        self.slot_of.get(node.index()).copied().flatten()
    }

    /// Exact posterior shapes for parameters that only reach evidence
    /// through identity chains.
    pub fn conjugate(&self, param: usize) -> Option<BetaShape> {
        self.conjugate[param]
    }

    /// Free parameter a slot resolves to through copy ops.
    pub fn resolve_free(&self, mut slot: usize) -> Option<usize> {
        let m = self.m();
        loop {
            if slot < m {
                return Some(slot);
            }
            match self.ops[slot - m] {
                Op::Copy { from } => slot = from,
                _ => return None,
            }
        }
    }

    pub(crate) fn patient_slot(&self, experimental: bool) -> Option<usize> {
        if experimental {
            self.patient_experimental
        } else {
            self.patient_control
        }
    }

    pub fn prior_means(&self) -> Vec<f64> {
        self.free.iter().map(FreeParameter::prior_mean).collect()
    }

    fn check_point(&self, phi: &[f64]) -> Result<(), InferenceError> {
        if phi.len() != self.m() {
            return Err(InferenceError::DimensionMismatch { expected: self.m(), actual: phi.len() });
        }
        for (index, &value) in phi.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(InferenceError::BoundaryPoint { index, value });
            }
        }
        Ok(())
    }

    pub(crate) fn values(&self, phi: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.m() + self.ops.len());
        v.extend_from_slice(phi);
        for op in &self.ops {
            let x = match *op {
                Op::Copy { from } => v[from],
                Op::Mixture { mix, in_part, out_part } => {
                    v[mix] * v[in_part] + (1.0 - v[mix]) * v[out_part]
                }
                Op::MeasurementError { sens, spec, source } => {
                    v[sens] * v[source] + (1.0 - v[spec]) * (1.0 - v[source])
                }
            };
            v.push(x);
        }
        v
    }

    pub(crate) fn forward(&self, phi: &[f64]) -> Forward {
        let m = self.m();
        let values = self.values(phi);
        let mut grads = vec![0.0; values.len() * m];
        for i in 0..m {
            grads[i * m + i] = 1.0;
        }
        for (k, op) in self.ops.iter().enumerate() {
            let out = (m + k) * m;
            let locals: [(usize, f64); 3] = match *op {
                Op::Copy { from } => [(from, 1.0), (from, 0.0), (from, 0.0)],
                Op::Mixture { mix, in_part, out_part } => [
                    (mix, values[in_part] - values[out_part]),
                    (in_part, values[mix]),
                    (out_part, 1.0 - values[mix]),
                ],
                Op::MeasurementError { sens, spec, source } => [
                    (sens, values[source]),
                    (spec, -(1.0 - values[source])),
                    (source, values[sens] + values[spec] - 1.0),
                ],
            };
            for (slot, w) in locals {
                if w == 0.0 {
                    continue;
                }
                let src = slot * m;
                for j in 0..m {
                    grads[out + j] += w * grads[src + j];
                }
            }
        }
        Forward { values, grads }
    }

    fn term_value(&self, term: &LogDensityTerm, values: &[f64]) -> Result<f64, InferenceError> {
        Ok(match *term {
            LogDensityTerm::Prior { param, a, b } => {
                let x = values[param];
                xlny(a - 1.0, x) + xlny(b - 1.0, 1.0 - x)
            }
            LogDensityTerm::Binomial { successes, trials, rate, .. } => {
                let p = values[rate];
                if !(p > 0.0 && p < 1.0) {
                    return Err(InferenceError::BoundaryPoint { index: rate, value: p });
                }
                let s = successes as f64;
                xlny(s, p) + xlny(trials as f64 - s, 1.0 - p)
            }
        })
    }

    /// Beta log-priors plus binomial log-likelihoods, constants dropped.
    pub fn log_posterior(&self, phi: &[f64]) -> Result<f64, InferenceError> {
        self.check_point(phi)?;
        let values = self.values(phi);
        let mut total = 0.0;
        for term in &self.terms {
            total += self.term_value(term, &values)?;
        }
        Ok(total)
    }

    /// Per-term log-densities, in term order.
    pub fn term_log_densities(&self, phi: &[f64]) -> Result<Vec<f64>, InferenceError> {
        self.check_point(phi)?;
        let values = self.values(phi);
        self.terms.iter().map(|t| self.term_value(t, &values)).collect()
    }

    /// Analytic gradient in the rate space, with the score of each term.
    pub fn gradient(&self, phi: &[f64]) -> Result<GradientParts, InferenceError> {
        self.check_point(phi)?;
        let m = self.m();
        let fw = self.forward(phi);
        let mut per_term = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let mut g = vec![0.0; m];
            match *term {
                LogDensityTerm::Prior { param, a, b } => {
                    let x = fw.values[param];
                    g[param] = (a - 1.0) / x - (b - 1.0) / (1.0 - x);
                }
                LogDensityTerm::Binomial { successes, trials, rate, .. } => {
                    let p = fw.values[rate];
                    if !(p > 0.0 && p < 1.0) {
                        return Err(InferenceError::BoundaryPoint { index: rate, value: p });
                    }
                    let s = successes as f64;
                    let w = s / p - (trials as f64 - s) / (1.0 - p);
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj = w * fw.grads[rate * m + j];
                    }
                }
            }
            per_term.push(g);
        }
        let mut total = vec![0.0; m];
        for g in &per_term {
            for (t, x) in total.iter_mut().zip(g) {
                *t += x;
            }
        }
        Ok(GradientParts { total, per_term })
    }

    /// Log-posterior, logit-space gradient and outer-product Hessian at
    /// `phi`. Each Bernoulli trial is one observation; prior shapes count as
    /// `a - 1` pseudo-successes and `b - 1` pseudo-failures.
    pub(crate) fn bhhh(&self, phi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), InferenceError> {
        self.check_point(phi)?;
        let m = self.m();
        let fw = self.forward(phi);
        let jac: Vec<f64> = phi.iter().map(|x| x * (1.0 - x)).collect();
        let mut f = 0.0;
        let mut g = vec![0.0; m];
        let mut h = vec![0.0; m * m];
        let mut d = vec![0.0; m];
        let mut support = Vec::with_capacity(m);
        for term in &self.terms {
            f += self.term_value(term, &fw.values)?;
            match *term {
                LogDensityTerm::Prior { param, a, b } => {
                    let x = phi[param];
                    g[param] += (a - 1.0) * (1.0 - x) - (b - 1.0) * x;
                    h[param * m + param] +=
                        (a - 1.0).abs() * (1.0 - x) * (1.0 - x) + (b - 1.0).abs() * x * x;
                }
                LogDensityTerm::Binomial { successes, trials, rate, .. } => {
                    let p = fw.values[rate];
                    let s = successes as f64;
                    let fails = trials as f64 - s;
                    support.clear();
                    for j in 0..m {
                        d[j] = fw.grads[rate * m + j] * jac[j];
                        if d[j] != 0.0 {
                            support.push(j);
                        }
                    }
                    let w = s / p - fails / (1.0 - p);
                    let c = s / (p * p) + fails / ((1.0 - p) * (1.0 - p));
                    for &i in &support {
                        g[i] += w * d[i];
                        for &j in &support {
                            h[i * m + j] += c * d[i] * d[j];
                        }
                    }
                }
            }
        }
        Ok((f, g, h))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientParts {
    pub total: Vec<f64>,
    pub per_term: Vec<Vec<f64>>,
}

fn conjugate_shapes(
    diagram: &InfluenceDiagram,
    reduction: &ReductionMap,
    free: &[FreeParameter],
) -> Vec<Option<BetaShape>> {
    let mut mixed = vec![false; diagram.len()];
    let mut counts = vec![(0u64, 0u64); diagram.len()];
    for node in diagram.nodes() {
        match &node.kind {
            NodeKind::Deterministic { function } if !matches!(function, DetFn::Identity { .. }) => {
                for p in function.parents() {
                    mixed[reduction.rep(p).index()] = true;
                }
            }
            NodeKind::Evidence { successes, trials, parent } => {
                let c = &mut counts[reduction.rep(*parent).index()];
                c.0 += successes;
                c.1 += trials - successes;
            }
            _ => {}
        }
    }
    free.iter()
        .map(|p| {
            let i = p.node.index();
            (!mixed[i]).then(|| BetaShape { a: p.a + counts[i].0 as f64, b: p.b + counts[i].1 as f64 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::Role;

    fn chain(a: f64, b: f64, s: u64, n: u64) -> InfluenceDiagram {
        let mut d = InfluenceDiagram::new();
        let p = d.add_chance("p", Level::Population, Role::Outcome, ArmTag::Exp, a, b).unwrap();
        let st = d.add_deterministic("s", Level::Study, Role::Outcome, ArmTag::Exp, DetFn::Identity { parent: p }).unwrap();
        d.add_evidence("e", st, s, n).unwrap();
        d
    }

    #[test]
    fn log_posterior_of_uniform_prior_chain() {
        let m = ReducedModel::build(&chain(1.0, 1.0, 7, 10), true).unwrap();
        let lp = m.log_posterior(&[0.7]).unwrap();
        assert!((lp - (7.0 * 0.7f64.ln() + 3.0 * 0.3f64.ln())).abs() < 1e-12);
        assert!((lp + 6.10864).abs() < 1e-5);
    }

    #[test]
    fn no_evidence_uniform_prior_is_zero() {
        let mut d = InfluenceDiagram::new();
        d.add_chance("p", Level::Population, Role::Outcome, ArmTag::Exp, 1.0, 1.0).unwrap();
        let m = ReducedModel::build(&d, true).unwrap();
        assert_eq!(m.log_posterior(&[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn boundary_points_are_rejected() {
        let m = ReducedModel::build(&chain(1.0, 1.0, 7, 10), true).unwrap();
        assert!(matches!(m.log_posterior(&[1.0]), Err(InferenceError::BoundaryPoint { .. })));
        assert!(matches!(m.gradient(&[0.0]), Err(InferenceError::BoundaryPoint { .. })));
        assert!(matches!(
            m.log_posterior(&[0.2, 0.3]),
            Err(InferenceError::DimensionMismatch { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn pending_and_empty_models_are_refused() {
        let mut d = InfluenceDiagram::new();
        assert_eq!(ReducedModel::build(&d, true).unwrap_err(), InferenceError::EmptyModel);
        d.add_pending_chance("alpha", Level::Population, Role::Methodological, ArmTag::None).unwrap();
        assert_eq!(
            ReducedModel::build(&d, true).unwrap_err(),
            InferenceError::PendingPriors(vec!["alpha".into()])
        );
    }

    #[test]
    fn conjugate_shapes_accumulate_evidence() {
        let mut d = chain(2.0, 2.0, 7, 10);
        let st = d.find("s").unwrap();
        d.add_evidence("e2", st, 1, 4).unwrap();
        let m = ReducedModel::build(&d, false).unwrap();
        assert_eq!(m.conjugate(0), Some(BetaShape { a: 10.0, b: 8.0 }));
        assert_eq!(m.terms().len(), 3);
    }

    #[test]
    fn total_gradient_is_sum_of_term_scores() {
        let m = ReducedModel::build(&chain(2.0, 3.0, 4, 9), false).unwrap();
        let g = m.gradient(&[0.4]).unwrap();
        let sum: f64 = g.per_term.iter().map(|t| t[0]).sum();
        assert_eq!(g.total[0], sum);
    }
}
