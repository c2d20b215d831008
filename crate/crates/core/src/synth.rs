//! Seeded synthetic diagrams for benchmarks and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagram::{ArmTag, DetFn, InfluenceDiagram, Level, NodeId, Role};

fn binomial_draw(rng: &mut ChaCha8Rng, p: f64, n: u64) -> u64 {
    (0..n).filter(|_| rng.random::<f64>() < p).count() as u64
}

/// `m` Study-level chance rates, each observed directly, plus one observed
/// mixture per consecutive triple. No identity nodes.
pub fn identity_free(m: usize, seed: u64) -> InfluenceDiagram {
    assert!(m >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = InfluenceDiagram::new();
    let mut truth = Vec::with_capacity(m);
    let mut ids = Vec::with_capacity(m);
    for i in 0..m {
        let a = rng.random_range(1.5..6.0);
        let b = rng.random_range(1.5..6.0);
        ids.push(d.add_chance(format!("rate {i}"), Level::Study, Role::Outcome, ArmTag::None, a, b).unwrap());
        truth.push(rng.random_range(0.2..0.8));
    }
    for i in 0..m {
        let n = rng.random_range(20..120);
        let s = binomial_draw(&mut rng, truth[i], n);
        d.add_evidence(format!("observed rate {i}"), ids[i], s, n).unwrap();
    }
    for i in 0..m - 2 {
        let f = DetFn::Mixture { mix: ids[i], in_part: ids[i + 1], out_part: ids[i + 2] };
        let mix = d.add_deterministic(format!("mixture {i}"), Level::Study, Role::Outcome, ArmTag::None, f).unwrap();
        let p = truth[i] * truth[i + 1] + (1.0 - truth[i]) * truth[i + 2];
        let n = rng.random_range(20..120);
        let s = binomial_draw(&mut rng, p, n);
        d.add_evidence(format!("observed mixture {i}"), mix, s, n).unwrap();
    }
    d
}

/// Nested mixtures, as repeated splits of one arm produce: `m / 2` rates and
/// `m / 2` mixing parameters, with every rate and every mixture observed.
/// The deepest mixture depends on every free parameter. No identity nodes.
pub fn nested_mixtures(m: usize, seed: u64) -> InfluenceDiagram {
    assert!(m >= 2 && m.is_multiple_of(2));
    let k = m / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = InfluenceDiagram::new();
    let mut rates = Vec::with_capacity(k);
    let mut alphas = Vec::with_capacity(k);
    let mut truth = Vec::with_capacity(k);
    let mut mix_truth = Vec::with_capacity(k);
    for i in 0..k {
        let (a, b) = (rng.random_range(2.0..6.0), rng.random_range(2.0..6.0));
        rates.push(d.add_chance(format!("rate {i}"), Level::Study, Role::Outcome, ArmTag::None, a, b).unwrap());
        truth.push(rng.random_range(0.2..0.8));
        let (a, b) = (rng.random_range(2.0..6.0), rng.random_range(2.0..6.0));
        alphas.push(
            d.add_chance(format!("mixing {i}"), Level::Population, Role::Methodological, ArmTag::None, a, b).unwrap(),
        );
        mix_truth.push(rng.random_range(0.2..0.8));
    }
    let mut prev = (rates[k - 1], truth[k - 1]);
    for i in 0..k {
        let f = DetFn::Mixture { mix: alphas[i], in_part: rates[i], out_part: prev.0 };
        let x = d.add_deterministic(format!("mixture {i}"), Level::Study, Role::Outcome, ArmTag::None, f).unwrap();
        prev = (x, mix_truth[i] * truth[i] + (1.0 - mix_truth[i]) * prev.1);
        for (name, node, p) in [(format!("observed rate {i}"), rates[i], truth[i]), (format!("observed mixture {i}"), x, prev.1)] {
            let n = rng.random_range(40..160);
            let s = binomial_draw(&mut rng, p, n);
            d.add_evidence(name, node, s, n).unwrap();
        }
    }
    d
}

/// `heads` chance nodes, each followed by an identity chain; `n` parameter
/// nodes in total.
pub fn identity_chains(n: usize, heads: usize) -> InfluenceDiagram {
    assert!(heads >= 1 && n >= heads);
    let mut d = InfluenceDiagram::new();
    let mut tails: Vec<NodeId> = (0..heads)
        .map(|h| d.add_chance(format!("head {h}"), Level::Population, Role::Outcome, ArmTag::None, 2.0, 2.0).unwrap())
        .collect();
    for k in 0..n - heads {
        let h = k % heads;
        let level = if k < heads { Level::Study } else { Level::Effective };
        let id = d
            .add_deterministic(format!("link {k}"), level, Role::Outcome, ArmTag::None, DetFn::Identity { parent: tails[h] })
            .unwrap();
        tails[h] = id;
    }
    d
}

/// Random diagram that uses every deterministic function kind: population
/// rates and methodological parameters, study-level identities and
/// mixtures, effective-level measurement models, evidence on study and
/// effective nodes.
pub fn mixed(seed: u64) -> InfluenceDiagram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = InfluenceDiagram::new();
    let beta = |rng: &mut ChaCha8Rng| (rng.random_range(1.0..8.0), rng.random_range(1.0..8.0));
    let rates = rng.random_range(2..5);
    let mut pop = Vec::new();
    for i in 0..rates {
        let (a, b) = beta(&mut rng);
        pop.push(d.add_chance(format!("population {i}"), Level::Population, Role::Outcome, ArmTag::None, a, b).unwrap());
    }
    let mut method = Vec::new();
    for i in 0..rng.random_range(3..6) {
        let (a, b) = beta(&mut rng);
        method.push(
            d.add_chance(format!("method {i}"), Level::Population, Role::Methodological, ArmTag::None, a, b).unwrap(),
        );
    }
    let pick = |rng: &mut ChaCha8Rng, v: &[NodeId]| v[rng.random_range(0..v.len())];

    let mut study = Vec::new();
    for (i, &parent) in pop.iter().enumerate() {
        study.push(
            d.add_deterministic(format!("study {i}"), Level::Study, Role::Outcome, ArmTag::None, DetFn::Identity { parent })
                .unwrap(),
        );
    }
    for i in 0..rng.random_range(1..4) {
        let f = DetFn::Mixture { mix: pick(&mut rng, &method), in_part: pick(&mut rng, &study), out_part: pick(&mut rng, &pop) };
        study.push(d.add_deterministic(format!("study mixture {i}"), Level::Study, Role::Outcome, ArmTag::None, f).unwrap());
    }
    let mut effective = Vec::new();
    for i in 0..rng.random_range(1..4) {
        let f = DetFn::MeasurementError {
            sens: pick(&mut rng, &method),
            spec: pick(&mut rng, &method),
            source: pick(&mut rng, &study),
        };
        effective.push(d.add_deterministic(format!("effective {i}"), Level::Effective, Role::Outcome, ArmTag::None, f).unwrap());
    }
    let observed: Vec<NodeId> = study.iter().chain(&effective).copied().collect();
    for i in 0..rng.random_range(2..7) {
        let n = rng.random_range(5..200);
        let s = rng.random_range(0..=n);
        d.add_evidence(format!("evidence {i}"), pick(&mut rng, &observed), s, n).unwrap();
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::{eliminate_identical, validate_restricted_class, NodeKind};

    #[test]
    fn generators_stay_in_the_restricted_class() {
        for seed in 0..20 {
            assert!(validate_restricted_class(&mixed(seed)).is_valid());
        }
        let d = identity_free(8, 1);
        assert!(validate_restricted_class(&d).is_valid());
        assert_eq!(d.chance_nodes().count(), 8);
        assert!(d.nodes().iter().all(|n| !matches!(n.kind, NodeKind::Deterministic { function: DetFn::Identity { .. } })));
        let n = nested_mixtures(8, 2);
        assert!(validate_restricted_class(&n).is_valid());
        assert_eq!(n.chance_nodes().count(), 8);
        let c = identity_chains(100, 4);
        assert_eq!(c.parameter_count(), 100);
        assert_eq!(eliminate_identical(&c).free_count, 4);
    }
}
