//! Targeted poisoning attacks.
//!
//! All three attacks chase the same goal: make the global model map any
//! trigger-carrying (or edge-case) input to an attacker-chosen label while
//! leaving clean accuracy alone. They differ in how the malicious update is
//! shaped:
//!
//! * `Scaling`: train on local data plus triggered, relabeled duplicates,
//!   then scale the resulting update by `gamma`.
//! * `Alie`: craft the same backdoored updates with `gamma = 1`, then clamp
//!   every coordinate into `[mean - z*std, mean + z*std]` computed across
//!   the malicious cohort, hiding the updates inside the benign spread.
//! * `Edge`: no trigger; instead mix in examples from a distribution the
//!   benign population never sees, relabeled to the target.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{local_train, Example, ModelSpec, TrainParams};
use crate::params::ParamVector;
use crate::seeds;

/// Corner (or per-example random placement) of the square trigger patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerLocation {
    UpperRight,
    LowerRight,
    UpperLeft,
    LowerLeft,
    Random,
}

/// What gets written into the patch cells.
#[derive(Debug, Clone, PartialEq)]
pub enum TriggerValue {
    /// Every cell set to the same value.
    Uniform(f64),
    /// Row-major per-cell values, `size * size` of them.
    Pattern(Vec<f64>),
}

/// A square patch stamped onto a `grid_h x grid_w` input.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub location: TriggerLocation,
    /// Side length of the square patch, in cells.
    pub size: usize,
    pub value: TriggerValue,
}

impl TriggerSpec {
    pub fn validate(&self, grid: (usize, usize)) -> Result<()> {
        let (h, w) = grid;
        if self.size == 0 || self.size > h || self.size > w {
            return Err(Error::TriggerOutOfBounds { size: self.size, h, w });
        }
        let in_range = |v: f64| (0.0..=1.0).contains(&v);
        match &self.value {
            TriggerValue::Uniform(v) => {
                if !in_range(*v) {
                    return Err(Error::InvalidConfig(format!("trigger value {v} outside [0, 1]")));
                }
            }
            TriggerValue::Pattern(vals) => {
                if vals.len() != self.size * self.size {
                    return Err(Error::InvalidConfig(format!(
                        "trigger pattern has {} cells, patch needs {}",
                        vals.len(),
                        self.size * self.size
                    )));
                }
                if !vals.iter().all(|v| in_range(*v)) {
                    return Err(Error::InvalidConfig("trigger pattern value outside [0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}

/// Which poisoning strategy the malicious cohort runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Scaling,
    Alie,
    Edge,
}

/// When the attack fires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackSchedule {
    /// Active in rounds where `t % e == 0` (rounds are 1-based).
    Every(u64),
    /// Active with probability `p`, drawn from the caller's stream.
    Prob(f64),
}

/// Full attack description shared by the malicious cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Fraction of clients that are malicious; ids `0..m-1` with
    /// `m = floor(fraction * n)`.
    pub malicious_fraction: f64,
    /// Label every poisoned example is steered toward.
    pub target_label: usize,
    pub trigger: TriggerSpec,
    /// Update scale for `Scaling`.
    pub gamma: f64,
    /// Clamp width for `Alie`.
    pub z: f64,
    pub schedule: AttackSchedule,
    /// Base seed for trigger placement streams.
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self, grid: (usize, usize), classes: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.malicious_fraction) {
            return Err(Error::InvalidConfig(format!(
                "malicious fraction {} outside [0, 1)",
                self.malicious_fraction
            )));
        }
        if self.target_label >= classes {
            return Err(Error::InvalidConfig(format!(
                "target label {} out of range for {} classes",
                self.target_label, classes
            )));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        if self.z <= 0.0 {
            return Err(Error::InvalidConfig("alie z must be positive".into()));
        }
        match self.schedule {
            AttackSchedule::Every(e) if e == 0 => {
                return Err(Error::InvalidConfig("schedule every-e needs e >= 1".into()))
            }
            AttackSchedule::Prob(p) if !(0.0..=1.0).contains(&p) => {
                return Err(Error::InvalidConfig(format!("schedule probability {p} outside [0, 1]")))
            }
            _ => {}
        }
        self.trigger.validate(grid)
    }

    /// Stream for trigger placement in a given round and client.
    pub fn trigger_rng(&self, round: u64, client: u32) -> ChaCha8Rng {
        seeds::stream(self.seed, &[seeds::tag::TRIGGER, round, client as u64])
    }
}

/// Returns a copy of `input` with the trigger patch written in.
///
/// The input is read as a row-major `grid.0 x grid.1` image. For the
/// `Random` location the patch corner is drawn fresh from `rng` for each
/// call, so every poisoned example can carry the patch somewhere else.
pub fn embed_trigger(
    input: &[f64],
    spec: &TriggerSpec,
    grid: (usize, usize),
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let (h, w) = grid;
    spec.validate(grid)?;
    if input.len() != h * w {
        return Err(Error::DimensionMismatch { expected: h * w, got: input.len() });
    }
    let s = spec.size;
    let (r0, c0) = match spec.location {
        TriggerLocation::UpperLeft => (0, 0),
        TriggerLocation::UpperRight => (0, w - s),
        TriggerLocation::LowerLeft => (h - s, 0),
        TriggerLocation::LowerRight => (h - s, w - s),
        TriggerLocation::Random => (rng.gen_range(0..=h - s), rng.gen_range(0..=w - s)),
    };
    let mut out = input.to_vec();
    for dr in 0..s {
        for dc in 0..s {
            let v = match &spec.value {
                TriggerValue::Uniform(v) => *v,
                TriggerValue::Pattern(vals) => vals[dr * s + dc],
            };
            out[(r0 + dr) * w + (c0 + dc)] = v;
        }
    }
    Ok(out)
}

/// Local data plus a triggered, relabeled duplicate of every example.
///
/// Originals come first and are untouched; the duplicates carry the trigger
/// and the target label `y`.
pub fn poison_local_data(
    data: &[Example],
    spec: &TriggerSpec,
    grid: (usize, usize),
    y: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(data.len() * 2);
    out.extend_from_slice(data);
    for ex in data {
        out.push(Example::new(embed_trigger(&ex.x, spec, grid, rng)?, y));
    }
    Ok(out)
}

/// Local data plus the edge set relabeled to the target label `y`.
pub fn poison_edge_data(data: &[Example], edge: &[Example], y: usize) -> Vec<Example> {
    let mut out = Vec::with_capacity(data.len() + edge.len());
    out.extend_from_slice(data);
    out.extend(edge.iter().map(|ex| Example::new(ex.x.clone(), y)));
    out
}

/// One malicious client's inputs to update crafting.
#[derive(Debug, Clone, Copy)]
pub struct MaliciousLocal<'a> {
    pub data: &'a [Example],
    /// Seed handed to `local_train`, same derivation a benign client gets.
    pub train_seed: u64,
    /// Stream for trigger placement.
    pub trigger_seed: u64,
}

/// Backdoored update without the `gamma` scale: poison, train, diff.
fn raw_backdoor_update(
    w_t: &ParamVector,
    local: &MaliciousLocal,
    cfg: &AttackConfig,
    grid: (usize, usize),
    model: &ModelSpec,
    train: &TrainParams,
) -> Result<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(local.trigger_seed);
    let poisoned = poison_local_data(local.data, &cfg.trigger, grid, cfg.target_label, &mut rng)?;
    let w_local = local_train(&poisoned, w_t, model, train, local.train_seed)?;
    w_local.sub(w_t)
}

/// The Scaling attack update: backdoored update times `gamma`.
pub fn craft_scaling_update(
    w_t: &ParamVector,
    local: &MaliciousLocal,
    cfg: &AttackConfig,
    grid: (usize, usize),
    model: &ModelSpec,
    train: &TrainParams,
) -> Result<ParamVector> {
    let g = raw_backdoor_update(w_t, local, cfg, grid, model, train)?;
    Ok(if cfg.gamma == 1.0 { g } else { g.scale(cfg.gamma) })
}

/// Clamps each update coordinate-wise into `[mean - z*std, mean + z*std]`.
///
/// Mean and std (population form, divide by the cohort size) are taken
/// across the given updates per coordinate.
pub fn alie_clamp(updates: &[ParamVector], z: f64) -> Result<Vec<ParamVector>> {
    if updates.is_empty() {
        return Err(Error::Empty("alie updates"));
    }
    let p = updates[0].len();
    for u in updates {
        if u.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: u.len() });
        }
    }
    let m = updates.len() as f64;
    let mut out = vec![ParamVector::zeros(p); updates.len()];
    for j in 0..p {
        let mean = updates.iter().map(|u| u.0[j]).sum::<f64>() / m;
        let var = updates.iter().map(|u| (u.0[j] - mean) * (u.0[j] - mean)).sum::<f64>() / m;
        let std = var.sqrt();
        let (lo, hi) = (mean - z * std, mean + z * std);
        for (src, dst) in updates.iter().zip(out.iter_mut()) {
            dst.0[j] = src.0[j].clamp(lo, hi);
        }
    }
    Ok(out)
}

/// ALIE updates for the whole active malicious cohort.
///
/// Each client crafts a backdoored update as Scaling with `gamma = 1`
/// would; the cohort's coordinate-wise mean and std then clamp every
/// update. Output order matches input order.
pub fn craft_alie_updates(
    w_t: &ParamVector,
    locals: &[MaliciousLocal],
    cfg: &AttackConfig,
    grid: (usize, usize),
    model: &ModelSpec,
    train: &TrainParams,
) -> Result<Vec<ParamVector>> {
    if locals.is_empty() {
        return Err(Error::Empty("alie cohort"));
    }
    let raw: Vec<ParamVector> = locals
        .iter()
        .map(|l| raw_backdoor_update(w_t, l, cfg, grid, model, train))
        .collect::<Result<_>>()?;
    alie_clamp(&raw, cfg.z)
}

/// Whether the attack fires in round `t` (1-based).
///
/// `Every(e)` is a fixed cadence; `Prob(p)` draws one Bernoulli decision
/// from `rng`, so the caller picks the stream granularity (one stream per
/// malicious client per round in the engine).
pub fn attack_active(t: u64, schedule: &AttackSchedule, rng: &mut impl Rng) -> bool {
    match *schedule {
        AttackSchedule::Every(e) => t % e == 0,
        AttackSchedule::Prob(p) => rng.gen_bool(p),
    }
}
