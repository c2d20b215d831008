//! Inference checked against independent test-side computations.

use std::collections::BTreeMap;

use proptest::prelude::*;
use trialflow_core::diagram::{
    eliminate_identical, evaluate, partials, ArmTag, DetFn, InfluenceDiagram, Level, NodeId, NodeKind, Role,
};
use trialflow_core::inference::{posterior_mode, BetaShape, ModeOptions, ReducedModel};
use trialflow_core::synth;

/// Log-posterior straight from the diagram: evaluate every node, then sum
/// beta and binomial kernels.
fn oracle_log_posterior(d: &InfluenceDiagram, free: &[NodeId], phi: &[f64]) -> f64 {
    let assignment: BTreeMap<NodeId, f64> = free.iter().copied().zip(phi.iter().copied()).collect();
    let values = evaluate(d, &assignment).unwrap();
    let mut total = 0.0;
    for node in d.nodes() {
        match node.kind {
            NodeKind::ChanceBeta { a, b, .. } => {
                let x = values[&node.id];
                total += (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln();
            }
            NodeKind::Evidence { successes, trials, parent } => {
                let p = values[&parent];
                let s = successes as f64;
                let f = (trials - successes) as f64;
                if s > 0.0 {
                    total += s * p.ln();
                }
                if f > 0.0 {
                    total += f * (1.0 - p).ln();
                }
            }
            NodeKind::Deterministic { .. } => {}
        }
    }
    total
}

fn random_point(seed: u64, m: usize) -> Vec<f64> {
    // splitmix-style hash, independent of the crate's RNG use
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    (0..m)
        .map(|_| {
            x ^= x >> 30;
            x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
            x ^= x >> 27;
            x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
            x ^= x >> 31;
            0.1 + 0.8 * (x >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

#[test]
fn log_posterior_matches_diagram_evaluation() {
    for seed in 0..20 {
        let d = synth::mixed(seed);
        let reduced = ReducedModel::build(&d, true).unwrap();
        let full = ReducedModel::build(&d, false).unwrap();
        let free: Vec<NodeId> = reduced.free().iter().map(|p| p.node).collect();
        for k in 0..5 {
            let phi = random_point(seed * 100 + k, free.len());
            let want = oracle_log_posterior(&d, &free, &phi);
            let a = reduced.log_posterior(&phi).unwrap();
            let b = full.log_posterior(&phi).unwrap();
            assert!((a - want).abs() < 1e-10, "seed {seed}: reduced {a} vs {want}");
            assert!((b - want).abs() < 1e-10, "seed {seed}: unreduced {b} vs {want}");
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-6;
    for seed in 0..20 {
        let d = synth::mixed(seed);
        let model = ReducedModel::build(&d, true).unwrap();
        let free: Vec<NodeId> = model.free().iter().map(|p| p.node).collect();
        let phi = random_point(seed + 7_000, free.len());
        let g = model.gradient(&phi).unwrap();
        for j in 0..free.len() {
            let mut up = phi.clone();
            let mut dn = phi.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (oracle_log_posterior(&d, &free, &up) - oracle_log_posterior(&d, &free, &dn)) / (2.0 * h);
            let rel = (g.total[j] - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-5, "seed {seed} coord {j}: analytic {} fd {fd}", g.total[j]);
        }
        let summed: Vec<f64> = (0..free.len()).map(|j| g.per_term.iter().map(|t| t[j]).sum()).collect();
        assert_eq!(summed, g.total);
    }
}

#[test]
fn diagram_partials_match_central_differences() {
    let h = 1e-6;
    for seed in 0..20 {
        let d = synth::mixed(seed);
        let free: Vec<NodeId> = d.chance_nodes().map(|n| n.id).collect();
        let phi = random_point(seed + 90_000, free.len());
        let at = |x: &[f64]| evaluate(&d, &free.iter().copied().zip(x.iter().copied()).collect()).unwrap();
        let p = partials(&d, &free.iter().copied().zip(phi.iter().copied()).collect()).unwrap();
        for (j, &fj) in free.iter().enumerate() {
            let mut up = phi.clone();
            let mut dn = phi.clone();
            up[j] += h;
            dn[j] -= h;
            let (vu, vd) = (at(&up), at(&dn));
            for node in d.nodes().iter().filter(|n| n.is_parameter()) {
                let fd = (vu[&node.id] - vd[&node.id]) / (2.0 * h);
                let an = p.get(node.id, fj).unwrap();
                assert!((an - fd).abs() < 1e-7, "seed {seed}: d{}/d{} = {an} vs {fd}", node.name, fj);
            }
        }
    }
}

fn chain(a: f64, b: f64, links: usize, s: u64, n: u64) -> InfluenceDiagram {
    let mut d = InfluenceDiagram::new();
    let mut tail = d.add_chance("rate", Level::Population, Role::Outcome, ArmTag::Exp, a, b).unwrap();
    for k in 0..links.max(1) {
        let level = if k == 0 { Level::Study } else { Level::Effective };
        tail = d
            .add_deterministic(format!("link {k}"), level, Role::Outcome, ArmTag::Exp, DetFn::Identity { parent: tail })
            .unwrap();
    }
    d.add_evidence("observed", tail, s, n).unwrap();
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conjugate_chain_mode_is_closed_form(
        a in 1.0f64..50.0,
        b in 1.0f64..50.0,
        n in 1u64..=1000,
        frac in 0.0f64..=1.0,
        links in 1usize..5,
    ) {
        let s = ((n as f64) * frac).round() as u64;
        let d = chain(a, b, links, s, n);
        let want = (a + s as f64 - 1.0) / (a + b + n as f64 - 2.0);
        prop_assume!(want > 1e-12 && want < 1.0 - 1e-12);
        for eliminate in [true, false] {
            let model = ReducedModel::build(&d, eliminate).unwrap();
            let r = posterior_mode(&model, &ModeOptions::default()).unwrap();
            prop_assert!((r.mode[0] - want).abs() < 1e-6, "mode {} want {}", r.mode[0], want);
            prop_assert_eq!(
                r.summaries[0].exact_posterior,
                Some(BetaShape { a: a + s as f64, b: b + (n - s) as f64 })
            );
        }
    }

    #[test]
    fn reduction_is_idempotent_and_preserves_the_posterior(seed in 0u64..10_000) {
        let d = synth::mixed(seed);
        let map = eliminate_identical(&d);
        let once = map.apply(&d);
        prop_assert_eq!(&eliminate_identical(&once), &map);
        let twice = map.apply(&once);
        prop_assert_eq!(twice.nodes(), once.nodes());

        let with = ReducedModel::build(&d, true).unwrap();
        let without = ReducedModel::build(&d, false).unwrap();
        let phi = random_point(seed, with.m());
        let (x, y) = (with.log_posterior(&phi).unwrap(), without.log_posterior(&phi).unwrap());
        prop_assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn gradient_vanishes_at_conjugate_mode() {
    let model = ReducedModel::build(&chain(2.0, 2.0, 2, 7, 10), true).unwrap();
    let g = model.gradient(&[8.0 / 12.0]).unwrap();
    assert!(g.total[0].abs() < 1e-8);
}

#[test]
fn modes_agree_with_and_without_elimination() {
    for seed in 0..20 {
        let d = synth::mixed(seed);
        let a = posterior_mode(&ReducedModel::build(&d, true).unwrap(), &ModeOptions::default()).unwrap();
        let b = posterior_mode(&ReducedModel::build(&d, false).unwrap(), &ModeOptions::default()).unwrap();
        assert_eq!(a.converged, b.converged, "seed {seed}");
        for (x, y) in a.mode.iter().zip(&b.mode) {
            assert!((x - y).abs() < 1e-6, "seed {seed}: {x} vs {y}");
        }
    }
}
