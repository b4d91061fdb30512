//! Checkpoint-based influence scores.
//!
//! For a probe `(x, y)` and the stored history, a client's influence is
//!
//! ```text
//! s_i = - sum over checkpointed rounds t with i in C_t of
//!         alpha_t * grad(x, y; w_t) . (g_t_i / ||g_t_i||)
//! ```
//!
//! A positive score means the client's updates kept pushing the loss of
//! `(x, y)` down. Detection pairs the score on the misclassified target
//! input with the score `s'` on a non-target input of the same label: a
//! backdoored client drives `(x, y)` hard while doing nothing special for
//! `(x', y)`, so its `s'/s` ratio is small. Updates are normalized to unit
//! length so a client cannot dilute its trace by rescaling.

use std::collections::BTreeMap;

use rand::Rng;

use crate::checkpoint::{Checkpoint, CheckpointStore};
use crate::error::{Error, Result};
use crate::model::{ce_grad, Example, ModelSpec};
use crate::params::ParamVector;
use crate::seeds::{self, tag};

/// Norms below this are treated as zero; the update then contributes 0.
const NORM_FLOOR: f64 = 1e-12;

/// Where a probe input came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Provenance {
    /// A test input the final model misclassifies (the suspected target).
    MisclassifiedTest,
    /// Uniform random features, labeled with the target label.
    RandomNonTarget,
    /// A real test input that genuinely carries the target label.
    TrueNonTarget,
}

/// A forensic probe: input, label, and how it was obtained.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProbeInput {
    pub x: Vec<f64>,
    pub y: usize,
    pub provenance: Provenance,
}

/// Both scores for one client.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InfluencePair {
    pub client: u32,
    /// Score on the misclassified target input.
    pub s: f64,
    /// Score on the non-target input.
    pub s_prime: f64,
    /// How many checkpoints included this client.
    pub rounds_counted: u32,
}

/// A non-target probe with uniform features in `[0, 1]^d` and label `y`.
pub fn gen_random_nontarget(d: usize, y: usize, seed: u64) -> ProbeInput {
    let mut rng = seeds::stream(seed, &[tag::PROBE]);
    ProbeInput {
        x: (0..d).map(|_| rng.gen_range(0.0..1.0)).collect(),
        y,
        provenance: Provenance::RandomNonTarget,
    }
}

/// `g / ||g||`, or a zero vector when the norm is below `1e-12`.
pub fn normalize_update(g: &ParamVector) -> ParamVector {
    let norm = g.l2_norm();
    if norm > NORM_FLOOR {
        g.scale(1.0 / norm)
    } else {
        ParamVector::zeros(g.len())
    }
}

/// One checkpoint's contribution to a client's score.
fn influence_term(alpha: f64, grad: &ParamVector, update: &ParamVector) -> Result<f64> {
    Ok(-alpha * grad.dot(&normalize_update(update))?)
}

fn accumulate(
    cps: &[Checkpoint],
    probe: &ProbeInput,
    spec: &ModelSpec,
) -> Result<BTreeMap<u32, (f64, u32)>> {
    let example = Example::new(probe.x.clone(), probe.y);
    let mut acc: BTreeMap<u32, (f64, u32)> = BTreeMap::new();
    for cp in cps {
        let w_t = cp.global_params();
        let grad = ce_grad(&w_t, &example, spec)?;
        for (id, g) in &cp.updates {
            let term = influence_term(cp.alpha, &grad, &ParamVector::from_f32(g))?;
            let entry = acc.entry(*id).or_insert((0.0, 0));
            entry.0 += term;
            entry.1 += 1;
        }
    }
    Ok(acc)
}

/// Influence scores over an already-loaded checkpoint slice.
pub fn influence_scores_over(
    cps: &[Checkpoint],
    probe: &ProbeInput,
    spec: &ModelSpec,
) -> Result<BTreeMap<u32, f64>> {
    Ok(accumulate(cps, probe, spec)?.into_iter().map(|(id, (s, _))| (id, s)).collect())
}

/// Influence scores for every client appearing in the store.
///
/// Clients absent from every checkpoint have no entry; the caller decides
/// whether to treat them as zero-score participants.
pub fn influence_scores(
    store: &CheckpointStore,
    probe: &ProbeInput,
    spec: &ModelSpec,
) -> Result<BTreeMap<u32, f64>> {
    let cps: Vec<Checkpoint> = store.iter_checkpoints().collect::<Result<_>>()?;
    influence_scores_over(&cps, probe, spec)
}

/// `(s, s')` pairs for a target and non-target probe of the same label.
pub fn influence_pairs_over(
    cps: &[Checkpoint],
    target: &ProbeInput,
    nontarget: &ProbeInput,
    spec: &ModelSpec,
) -> Result<Vec<InfluencePair>> {
    if target.y != nontarget.y {
        return Err(Error::ProbeLabelMismatch { target: target.y, nontarget: nontarget.y });
    }
    let on_target = accumulate(cps, target, spec)?;
    let on_nontarget = accumulate(cps, nontarget, spec)?;
    Ok(on_target
        .into_iter()
        .map(|(client, (s, rounds))| {
            let s_prime = on_nontarget.get(&client).map(|(v, _)| *v).unwrap_or(0.0);
            InfluencePair { client, s, s_prime, rounds_counted: rounds }
        })
        .collect())
}

/// Store-level variant of [`influence_pairs_over`].
pub fn influence_pairs(
    store: &CheckpointStore,
    target: &ProbeInput,
    nontarget: &ProbeInput,
    spec: &ModelSpec,
) -> Result<Vec<InfluencePair>> {
    let cps: Vec<Checkpoint> = store.iter_checkpoints().collect::<Result<_>>()?;
    influence_pairs_over(&cps, target, nontarget, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case_half_alpha() {
        // alpha = 0.5, gradient (1, -2), unit update (0.6, 0.8):
        // s = -0.5 * (0.6 - 1.6) = 0.5.
        let grad = ParamVector(vec![1.0, -2.0]);
        let g = ParamVector(vec![0.6, 0.8]);
        let s = influence_term(0.5, &grad, &g).unwrap();
        assert!((s - 0.5).abs() < 1e-15, "got {s}");
    }

    #[test]
    fn zero_update_contributes_nothing() {
        let grad = ParamVector(vec![1.0, -2.0]);
        let g = ParamVector(vec![0.0, 1e-15]);
        assert_eq!(influence_term(0.7, &grad, &g).unwrap(), 0.0);
    }

    #[test]
    fn normalization_makes_scores_scale_invariant() {
        let grad = ParamVector(vec![0.3, -1.1, 0.4]);
        let g = ParamVector(vec![0.2, 0.5, -0.7]);
        let base = influence_term(1.0, &grad, &g).unwrap();
        // Power-of-two scaling is exactly invariant.
        let doubled = influence_term(1.0, &grad, &g.scale(4.0)).unwrap();
        assert_eq!(base.to_bits(), doubled.to_bits());
        // Arbitrary positive scaling is invariant to rounding error.
        let odd = influence_term(1.0, &grad, &g.scale(3.7)).unwrap();
        assert!((base - odd).abs() < 1e-12);
    }

    fn toy_checkpoints() -> (Vec<Checkpoint>, ModelSpec, ProbeInput) {
        let spec = ModelSpec::linear(4, 3, 5);
        let p = spec.param_count();
        let mut rng = seeds::stream(21, &[0]);
        let mut cps = Vec::new();
        for t in [10u64, 20, 30, 40] {
            let global: Vec<f32> = (0..p).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
            let updates = (0..5u32)
                .filter(|id| (t / 10 + *id as u64) % 2 == 0 || *id == 0)
                .map(|id| (id, (0..p).map(|_| rng.gen_range(-0.5f32..0.5)).collect()))
                .collect();
            cps.push(Checkpoint { round: t, alpha: 0.9, global, updates });
        }
        let probe = ProbeInput {
            x: vec![0.2, 0.8, 0.1, 0.5],
            y: 1,
            provenance: Provenance::MisclassifiedTest,
        };
        (cps, spec, probe)
    }

    #[test]
    fn scores_sum_over_disjoint_checkpoint_sets() {
        let (cps, spec, probe) = toy_checkpoints();
        let full = influence_scores_over(&cps, &probe, &spec).unwrap();
        let first = influence_scores_over(&cps[..2], &probe, &spec).unwrap();
        let second = influence_scores_over(&cps[2..], &probe, &spec).unwrap();
        for (id, s) in &full {
            let split =
                first.get(id).copied().unwrap_or(0.0) + second.get(id).copied().unwrap_or(0.0);
            assert!(
                (s - split).abs() <= 1e-12 * s.abs().max(1.0),
                "client {id}: {s} vs {split}"
            );
        }
    }

    #[test]
    fn rounds_counted_tracks_participation() {
        let (cps, spec, probe) = toy_checkpoints();
        let nontarget = gen_random_nontarget(4, 1, 3);
        let pairs = influence_pairs_over(&cps, &probe, &nontarget, &spec).unwrap();
        // Client 0 participates everywhere by construction.
        let c0 = pairs.iter().find(|p| p.client == 0).unwrap();
        assert_eq!(c0.rounds_counted, 4);
        // Pairs come out sorted by client id.
        let ids: Vec<u32> = pairs.iter().map(|p| p.client).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn pair_labels_must_match() {
        let (cps, spec, probe) = toy_checkpoints();
        let bad = gen_random_nontarget(4, 2, 3);
        assert!(matches!(
            influence_pairs_over(&cps, &probe, &bad, &spec).unwrap_err(),
            Error::ProbeLabelMismatch { target: 1, nontarget: 2 }
        ));
    }

    #[test]
    fn random_nontarget_is_seeded_and_in_range() {
        let a = gen_random_nontarget(16, 3, 7);
        let b = gen_random_nontarget(16, 3, 7);
        assert_eq!(a, b);
        assert_eq!(a.y, 3);
        assert_eq!(a.provenance, Provenance::RandomNonTarget);
        assert!(a.x.iter().all(|v| (0.0..1.0).contains(v)));
        let c = gen_random_nontarget(16, 3, 8);
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn scoring_is_deterministic() {
        let (cps, spec, probe) = toy_checkpoints();
        let a = influence_scores_over(&cps, &probe, &spec).unwrap();
        let b = influence_scores_over(&cps, &probe, &spec).unwrap();
        for (x, y) in a.values().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
