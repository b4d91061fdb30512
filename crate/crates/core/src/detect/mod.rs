//! Malicious-client detection from influence score pairs.
//!
//! The two scores per client, span-scaled into comparable ranges, are
//! clustered with HDBSCAN*. Clusters whose mean target score `s` is
//! positive are "potential malicious": they pushed the misclassified input
//! toward its wrong label. Among those, the global ratio
//! `threshold = sum(s') / sum(s)` separates attackers from honestly
//! target-label-rich clients: a cluster (or noise point) is flagged iff its
//! own `s'/s` ratio is at or below the threshold, meaning its influence is
//! specific to the target input rather than to the label in general.
//!
//! A single-score variant clusters `s` alone and flags every positive-mean
//! cluster. It needs no non-target probe but also cannot tell attackers
//! from clients that simply hold many target-label examples, which is the
//! false-positive trade the ratio test exists to avoid.

mod hdbscan;

pub use hdbscan::ClusterAssignment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::InfluencePair;

/// One client's scores after span scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledPoint {
    pub client: u32,
    /// `s / (max s - min s)`, or 0 if the span is degenerate.
    pub u: f64,
    /// Same for `s'`.
    pub v: f64,
    /// Raw scores carried along for the ratio arithmetic.
    pub s: f64,
    pub s_prime: f64,
}

/// Output of `scale_scores`: the points plus span diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaled {
    pub points: Vec<ScaledPoint>,
    pub span_s: f64,
    pub span_s_prime: f64,
    /// True when all `s` (resp. `s'`) were equal, collapsing that axis.
    pub degenerate_s: bool,
    pub degenerate_s_prime: bool,
}

/// Scales both scores by their population span `max - min`.
///
/// Needs at least two clients. A zero span (all values equal) maps that
/// coordinate to 0 for every client and sets the degenerate flag.
pub fn scale_scores(pairs: &[InfluencePair]) -> Result<Scaled> {
    if pairs.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "scaling needs at least 2 clients, got {}",
            pairs.len()
        )));
    }
    let span = |get: &dyn Fn(&InfluencePair) -> f64| -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in pairs {
            lo = lo.min(get(p));
            hi = hi.max(get(p));
        }
        hi - lo
    };
    let span_s = span(&|p: &InfluencePair| p.s);
    let span_sp = span(&|p: &InfluencePair| p.s_prime);
    let degenerate_s = span_s == 0.0;
    let degenerate_sp = span_sp == 0.0;
    let points = pairs
        .iter()
        .map(|p| ScaledPoint {
            client: p.client,
            u: if degenerate_s { 0.0 } else { p.s / span_s },
            v: if degenerate_sp { 0.0 } else { p.s_prime / span_sp },
            s: p.s,
            s_prime: p.s_prime,
        })
        .collect();
    Ok(Scaled {
        points,
        span_s,
        span_s_prime: span_sp,
        degenerate_s,
        degenerate_s_prime: degenerate_sp,
    })
}

/// Clusters scaled points on both coordinates `(u, v)`.
pub fn hdbscan(points: &[ScaledPoint], min_cluster_size: usize) -> Result<ClusterAssignment> {
    let coords: Vec<Vec<f64>> = points.iter().map(|p| vec![p.u, p.v]).collect();
    hdbscan::cluster_coords(&coords, min_cluster_size)
}

/// Whether the detector used both scores or only `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionMode {
    TwoScore,
    SingleScore,
}

/// Per-cluster detail in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub id: usize,
    /// Member client ids, deduplicated and ascending.
    pub clients: Vec<u32>,
    /// Number of clustered points (counts duplicated points twice).
    pub size: usize,
    pub mean_s: f64,
    pub sum_s: f64,
    pub sum_s_prime: f64,
    /// `sum_s' / sum_s`, present when `sum_s > 0`.
    pub ratio: Option<f64>,
    /// Mean `s` strictly positive.
    pub potential: bool,
    pub flagged: bool,
}

/// Per-outlier detail in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub client: u32,
    pub s: f64,
    pub s_prime: f64,
    /// `s'/s`, present when `s > 0`.
    pub ratio: Option<f64>,
    pub flagged: bool,
}

/// Full detection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub mode: DetectionMode,
    /// Global ratio threshold; absent when no cluster is potential
    /// malicious (then nothing is flagged).
    pub threshold: Option<f64>,
    pub clusters: Vec<ClusterReport>,
    pub outliers: Vec<OutlierReport>,
    /// Flagged client ids, deduplicated and ascending.
    pub malicious: Vec<u32>,
    /// True when the population was small enough to need point doubling.
    pub duplicated: bool,
    pub degenerate_span_s: bool,
    pub degenerate_span_s_prime: bool,
    /// Division guards that fired, for the record.
    pub guard_events: Vec<String>,
}

fn dedup_ids(mut ids: Vec<u32>) -> Vec<u32> {
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Applies the ratio rule to an existing clustering.
///
/// Factored out so the threshold arithmetic can be exercised on a fixed
/// assignment; `detect_malicious` composes it with `scale_scores` and
/// `hdbscan`.
pub fn detect_from_assignment(
    points: &[ScaledPoint],
    assignment: &ClusterAssignment,
    mode: DetectionMode,
) -> DetectionReport {
    let mut guard_events = Vec::new();
    let mut clusters: Vec<ClusterReport> = (0..assignment.n_clusters)
        .map(|c| {
            let members = assignment.members(c);
            let sum_s: f64 = members.iter().map(|&i| points[i].s).sum();
            let sum_sp: f64 = members.iter().map(|&i| points[i].s_prime).sum();
            let mean_s = sum_s / members.len() as f64;
            ClusterReport {
                id: c,
                clients: dedup_ids(members.iter().map(|&i| points[i].client).collect()),
                size: members.len(),
                mean_s,
                sum_s,
                sum_s_prime: sum_sp,
                ratio: if sum_s > 0.0 { Some(sum_sp / sum_s) } else { None },
                potential: mean_s > 0.0,
                flagged: false,
            }
        })
        .collect();

    // Global threshold over all potential malicious clusters.
    let pot_s: f64 = clusters.iter().filter(|c| c.potential).map(|c| c.sum_s).sum();
    let pot_sp: f64 = clusters.iter().filter(|c| c.potential).map(|c| c.sum_s_prime).sum();
    let any_potential = clusters.iter().any(|c| c.potential);
    let threshold = match mode {
        DetectionMode::SingleScore => None,
        DetectionMode::TwoScore => {
            if !any_potential {
                None
            } else if pot_s <= 0.0 {
                // Cannot happen while "potential" means strictly positive
                // mean, but guard the division anyway.
                guard_events
                    .push(format!("threshold denominator {pot_s} not positive; nothing flagged"));
                None
            } else {
                Some(pot_sp / pot_s)
            }
        }
    };

    for c in clusters.iter_mut() {
        c.flagged = match mode {
            DetectionMode::SingleScore => c.potential,
            DetectionMode::TwoScore => match (c.potential, c.ratio, threshold) {
                (true, Some(r), Some(t)) => r <= t,
                _ => false,
            },
        };
    }

    let outliers: Vec<OutlierReport> = assignment
        .outliers()
        .into_iter()
        .map(|i| {
            let p = &points[i];
            let ratio = if p.s > 0.0 { Some(p.s_prime / p.s) } else { None };
            let flagged = match (mode, ratio, threshold) {
                (DetectionMode::TwoScore, Some(r), Some(t)) => r <= t,
                // Non-positive s is benign before any ratio test, and the
                // single-score variant never flags noise.
                _ => false,
            };
            OutlierReport { client: p.client, s: p.s, s_prime: p.s_prime, ratio, flagged }
        })
        .collect();

    let mut malicious: Vec<u32> = Vec::new();
    for c in &clusters {
        if c.flagged {
            malicious.extend(&c.clients);
        }
    }
    malicious.extend(outliers.iter().filter(|o| o.flagged).map(|o| o.client));

    DetectionReport {
        mode,
        threshold,
        clusters,
        outliers,
        malicious: dedup_ids(malicious),
        duplicated: false,
        degenerate_span_s: false,
        degenerate_span_s_prime: false,
        guard_events,
    }
}

fn detect_with_mode(
    pairs: &[InfluencePair],
    min_cluster_size: usize,
    mode: DetectionMode,
) -> Result<DetectionReport> {
    // Small populations cluster badly; double every pair so HDBSCAN has
    // enough density to work with, and deduplicate flagged ids afterward.
    let duplicated = pairs.len() < 2 * min_cluster_size;
    let working: Vec<InfluencePair> = if duplicated {
        pairs.iter().chain(pairs.iter()).copied().collect()
    } else {
        pairs.to_vec()
    };
    let scaled = scale_scores(&working)?;
    let assignment = match mode {
        DetectionMode::TwoScore => hdbscan(&scaled.points, min_cluster_size)?,
        DetectionMode::SingleScore => {
            let coords: Vec<Vec<f64>> = scaled.points.iter().map(|p| vec![p.u]).collect();
            hdbscan::cluster_coords(&coords, min_cluster_size)?
        }
    };
    let mut report = detect_from_assignment(&scaled.points, &assignment, mode);
    report.duplicated = duplicated;
    report.degenerate_span_s = scaled.degenerate_s;
    report.degenerate_span_s_prime = scaled.degenerate_s_prime;
    Ok(report)
}

/// Full two-score detection: scale, cluster, threshold, flag.
pub fn detect_malicious(pairs: &[InfluencePair], min_cluster_size: usize) -> Result<DetectionReport> {
    detect_with_mode(pairs, min_cluster_size, DetectionMode::TwoScore)
}

/// Single-score variant: clusters `s` alone and flags every cluster with
/// strictly positive mean `s`. No threshold, no outlier flags.
pub fn detect_single_score(
    pairs: &[InfluencePair],
    min_cluster_size: usize,
) -> Result<DetectionReport> {
    detect_with_mode(pairs, min_cluster_size, DetectionMode::SingleScore)
}

/// Verdict on whether a misclassified input was attacked at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeClass {
    TargetInput,
    NonTargetInput,
}

/// Classifies a misclassified input as attacked or organic.
///
/// An attack leaves at least one potential cluster with an extreme ratio;
/// an organic misclassification produces only clusters whose ratios sit in
/// `[alpha, 1/alpha]` (boundaries inclusive), because no cohort treats the
/// probe much differently from its label at large. No potential cluster at
/// all also reads as non-target.
pub fn classify_probe(
    pairs: &[InfluencePair],
    min_cluster_size: usize,
    alpha: f64,
) -> Result<ProbeClass> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 1)")));
    }
    let report = detect_with_mode(pairs, min_cluster_size, DetectionMode::TwoScore)?;
    let mut any_potential = false;
    for c in report.clusters.iter().filter(|c| c.potential) {
        any_potential = true;
        match c.ratio {
            Some(r) if r >= alpha && r <= 1.0 / alpha => {}
            // Ratio outside the band (or unavailable): attack signature.
            _ => return Ok(ProbeClass::TargetInput),
        }
    }
    let _ = any_potential;
    Ok(ProbeClass::NonTargetInput)
}
