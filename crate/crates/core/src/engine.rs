//! Federated training engine.
//!
//! Owns the non-iid partition, the aggregation rules and the round loop.
//! One round sends the global model to the selected clients, collects their
//! updates `g = w_local - w_t` (malicious clients swap in crafted updates
//! when their attack is active), aggregates, and applies
//! `w_{t+1} = w_t + alpha_t * agg`. Rounds are 1-based; at every cadence
//! round the pre-update model and all raw updates go to the checkpoint
//! store before the update is applied, which is exactly the view forensics
//! needs later.
//!
//! Every random choice (partition, selection, local shuffles, trigger
//! placement, attack coin flips) draws from a stream derived from an
//! explicit seed plus round and client, so two runs of the same setup are
//! bit-identical, including the checkpoint files.

use rand::Rng;

use crate::attacks::{self, AttackConfig, AttackKind, AttackSchedule, MaliciousLocal};
use crate::checkpoint::{Checkpoint, CheckpointStore};
use crate::error::{Error, Result};
use crate::model::{local_train, Example, ModelSpec, TrainParams};
use crate::params::ParamVector;
use crate::seeds::{self, tag};

/// Non-iid partition settings. Group count equals the number of classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub n_clients: usize,
    /// Probability that an example lands in the group matching its label.
    /// `rho = 1/C` recovers an iid split.
    pub rho: f64,
    pub seed: u64,
}

/// Splits the dataset across clients with label-skewed group routing.
///
/// Clients are first split into `n_groups` near-equal groups (one group per
/// label class). Each example with label `y` then goes to group `y` with
/// probability `rho` and to each other group with probability
/// `(1 - rho) / (C - 1)`, landing on a uniformly chosen client inside the
/// group. Finally, any client left empty steals one example from the
/// currently largest client, so every client holds at least one example.
pub fn partition_noniid(
    dataset: &[Example],
    cfg: &PartitionConfig,
    n_groups: usize,
) -> Result<Vec<Vec<Example>>> {
    if n_groups == 0 {
        return Err(Error::InvalidConfig("partition needs at least one group".into()));
    }
    if cfg.n_clients < n_groups {
        return Err(Error::InvalidConfig(format!(
            "{} clients cannot fill {} groups",
            cfg.n_clients, n_groups
        )));
    }
    if dataset.len() < cfg.n_clients {
        return Err(Error::InvalidConfig(format!(
            "{} examples cannot cover {} clients",
            dataset.len(),
            cfg.n_clients
        )));
    }
    if !(0.0..=1.0).contains(&cfg.rho) {
        return Err(Error::InvalidConfig(format!("rho {} outside [0, 1]", cfg.rho)));
    }

    // Deal shuffled client ids into near-equal groups.
    let mut ids: Vec<u32> = (0..cfg.n_clients as u32).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = seeds::stream(cfg.seed, &[tag::PARTITION_GROUPS]);
        ids.shuffle(&mut rng);
    }
    let mut groups: Vec<Vec<u32>> = vec![Vec::new(); n_groups];
    for (pos, id) in ids.into_iter().enumerate() {
        groups[pos % n_groups].push(id);
    }

    let mut rng = seeds::stream(cfg.seed, &[tag::PARTITION_ASSIGN]);
    let mut locals: Vec<Vec<Example>> = vec![Vec::new(); cfg.n_clients];
    for ex in dataset {
        if ex.y >= n_groups {
            return Err(Error::InvalidConfig(format!(
                "label {} has no group among {}",
                ex.y, n_groups
            )));
        }
        let g = if rng.gen::<f64>() < cfg.rho {
            ex.y
        } else {
            // Uniform over the other groups.
            let mut pick = rng.gen_range(0..n_groups - 1);
            if pick >= ex.y {
                pick += 1;
            }
            pick
        };
        let member = rng.gen_range(0..groups[g].len());
        locals[groups[g][member] as usize].push(ex.clone());
    }

    // Guarantee at least one example per client.
    for id in 0..cfg.n_clients {
        while locals[id].is_empty() {
            let donor = (0..cfg.n_clients)
                .max_by_key(|&c| (locals[c].len(), std::cmp::Reverse(c)))
                .unwrap();
            if locals[donor].len() <= 1 {
                return Err(Error::InvalidConfig(
                    "not enough examples to give every client one".into(),
                ));
            }
            let ex = locals[donor].pop().unwrap();
            locals[id].push(ex);
        }
    }
    Ok(locals)
}

/// How client updates combine into one aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggRule {
    /// Plain coordinate-wise mean.
    FedAvg,
    /// Drop the `k` largest and `k` smallest values per coordinate, then
    /// average the rest. Needs `2k < n`.
    TrimmedMean(usize),
    /// Coordinate-wise median; the mean of the two middle values when the
    /// count is even.
    CoordinateMedian,
}

/// Combines updates under the given rule.
///
/// Every rule works per coordinate on a sorted copy of the column, so the
/// result is bit-identical under any permutation of the update list.
pub fn aggregate(rule: AggRule, updates: &[ParamVector]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::Empty("aggregate updates"));
    }
    let p = updates[0].len();
    for u in updates {
        if u.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: u.len() });
        }
    }
    let n = updates.len();
    if let AggRule::TrimmedMean(k) = rule {
        if 2 * k >= n {
            return Err(Error::InvalidConfig(format!(
                "trimmed mean with k={k} needs more than {} updates, got {n}",
                2 * k
            )));
        }
    }
    let mut out = Vec::with_capacity(p);
    let mut column = vec![0.0f64; n];
    for j in 0..p {
        for (slot, u) in column.iter_mut().zip(updates) {
            *slot = u.0[j];
        }
        column.sort_by(f64::total_cmp);
        let v = match rule {
            AggRule::FedAvg => column.iter().sum::<f64>() / n as f64,
            AggRule::TrimmedMean(k) => {
                let kept = &column[k..n - k];
                kept.iter().sum::<f64>() / kept.len() as f64
            }
            AggRule::CoordinateMedian => {
                if n % 2 == 1 {
                    column[n / 2]
                } else {
                    (column[n / 2 - 1] + column[n / 2]) / 2.0
                }
            }
        };
        out.push(v);
    }
    Ok(ParamVector(out))
}

/// Everything `run_round` needs about the attack, if one is configured.
#[derive(Debug, Clone)]
pub struct ActiveAttack<'a> {
    pub cfg: &'a AttackConfig,
    pub grid: (usize, usize),
    /// Malicious client ids are `0..n_malicious`.
    pub n_malicious: usize,
    /// Per malicious client, the edge set it poisons with (`Edge` only).
    pub edge_sets: &'a [Vec<Example>],
}

impl ActiveAttack<'_> {
    pub fn is_malicious(&self, id: u32) -> bool {
        (id as usize) < self.n_malicious
    }
}

/// A full training setup: data, model, schedule and seeds.
#[derive(Debug, Clone)]
pub struct TrainingSetup<'a> {
    /// Local datasets indexed by client id.
    pub clients: &'a [Vec<Example>],
    pub model: &'a ModelSpec,
    pub train: &'a TrainParams,
    pub rounds: u64,
    /// Constant server rate `alpha_t`.
    pub server_lr: f64,
    /// Fraction of clients selected each round, in `(0, 1]`.
    pub selection_fraction: f64,
    /// Checkpoint every this many rounds.
    pub checkpoint_cadence: u64,
    pub agg: AggRule,
    /// Seed for selection and local-training streams.
    pub seed: u64,
    pub attack: Option<&'a ActiveAttack<'a>>,
    /// Clients removed from the run entirely (recovery retraining).
    pub excluded: &'a [u32],
}

impl TrainingSetup<'_> {
    fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::Empty("training clients"));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "selection fraction {} outside (0, 1]",
                self.selection_fraction
            )));
        }
        if self.checkpoint_cadence == 0 {
            return Err(Error::InvalidConfig("checkpoint cadence must be >= 1".into()));
        }
        if let Some(atk) = self.attack {
            if atk.n_malicious > self.clients.len() {
                return Err(Error::InvalidConfig("more malicious clients than clients".into()));
            }
            if atk.cfg.kind == AttackKind::Edge && atk.edge_sets.len() < atk.n_malicious {
                return Err(Error::InvalidConfig("edge attack needs one edge set per malicious client".into()));
            }
        }
        Ok(())
    }
}

/// One round's plan: who participates, at what rate, and which malicious
/// clients have their attack switched on.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: u64,
    pub alpha: f64,
    /// Selected client ids, ascending, exclusions already applied.
    pub selected: Vec<u32>,
    /// Subset of `selected` that will submit crafted updates this round.
    pub active_malicious: Vec<u32>,
}

impl RoundPlan {
    pub fn attack_active(&self) -> bool {
        !self.active_malicious.is_empty()
    }
}

/// Builds the plan for round `t` (1-based).
pub fn plan_round(setup: &TrainingSetup, t: u64) -> RoundPlan {
    let n = setup.clients.len();
    let want = ((setup.selection_fraction * n as f64).round() as usize).clamp(1, n);
    let mut selected: Vec<u32> = if want == n {
        (0..n as u32).collect()
    } else {
        let mut rng = seeds::stream(setup.seed, &[tag::SELECTION, t]);
        let mut picks = rand::seq::index::sample(&mut rng, n, want).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| i as u32).collect()
    };
    selected.retain(|id| !setup.excluded.contains(id));

    let mut active_malicious = Vec::new();
    if let Some(atk) = setup.attack {
        for &id in &selected {
            if !atk.is_malicious(id) {
                continue;
            }
            let on = match atk.cfg.schedule {
                AttackSchedule::Every(_) => {
                    let mut rng = seeds::stream(atk.cfg.seed, &[tag::ATTACK_SCHEDULE, t]);
                    attacks::attack_active(t, &atk.cfg.schedule, &mut rng)
                }
                AttackSchedule::Prob(_) => {
                    let mut rng =
                        seeds::stream(atk.cfg.seed, &[tag::ATTACK_SCHEDULE, t, id as u64]);
                    attacks::attack_active(t, &atk.cfg.schedule, &mut rng)
                }
            };
            if on {
                active_malicious.push(id);
            }
        }
    }
    RoundPlan { round: t, alpha: setup.server_lr, selected, active_malicious }
}

/// Updates collected in one round plus the resulting global model.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// `(client id, raw update)` in ascending id order.
    pub updates: Vec<(u32, ParamVector)>,
    pub new_global: ParamVector,
}

/// Executes one round against the current global model `w_t`.
pub fn run_round(w_t: &ParamVector, plan: &RoundPlan, setup: &TrainingSetup) -> Result<RoundOutcome> {
    if plan.selected.is_empty() {
        return Err(Error::Empty("selected clients"));
    }
    let mut updates: Vec<(u32, ParamVector)> = Vec::with_capacity(plan.selected.len());

    // ALIE needs the whole active cohort at once; craft those first.
    let mut alie: Vec<(u32, ParamVector)> = Vec::new();
    if let Some(atk) = setup.attack {
        if atk.cfg.kind == AttackKind::Alie && plan.attack_active() {
            let locals: Vec<MaliciousLocal> = plan
                .active_malicious
                .iter()
                .map(|&id| MaliciousLocal {
                    data: &setup.clients[id as usize],
                    train_seed: seeds::derive(setup.seed, &[tag::LOCAL_TRAIN, plan.round, id as u64]),
                    trigger_seed: seeds::derive(
                        atk.cfg.seed,
                        &[tag::TRIGGER, plan.round, id as u64],
                    ),
                })
                .collect();
            let crafted = attacks::craft_alie_updates(
                w_t,
                &locals,
                atk.cfg,
                atk.grid,
                setup.model,
                setup.train,
            )?;
            alie = plan.active_malicious.iter().copied().zip(crafted).collect();
        }
    }

    for &id in &plan.selected {
        let train_seed = seeds::derive(setup.seed, &[tag::LOCAL_TRAIN, plan.round, id as u64]);
        let attacking = plan.active_malicious.contains(&id);
        let g = match (setup.attack, attacking) {
            (Some(atk), true) => match atk.cfg.kind {
                AttackKind::Scaling => {
                    let local = MaliciousLocal {
                        data: &setup.clients[id as usize],
                        train_seed,
                        trigger_seed: seeds::derive(
                            atk.cfg.seed,
                            &[tag::TRIGGER, plan.round, id as u64],
                        ),
                    };
                    attacks::craft_scaling_update(
                        w_t,
                        &local,
                        atk.cfg,
                        atk.grid,
                        setup.model,
                        setup.train,
                    )?
                }
                AttackKind::Alie => {
                    alie.iter().find(|(aid, _)| *aid == id).map(|(_, g)| g.clone()).unwrap()
                }
                AttackKind::Edge => {
                    let poisoned = attacks::poison_edge_data(
                        &setup.clients[id as usize],
                        &atk.edge_sets[id as usize],
                        atk.cfg.target_label,
                    );
                    let w_local = local_train(&poisoned, w_t, setup.model, setup.train, train_seed)?;
                    w_local.sub(w_t)?
                }
            },
            _ => {
                let w_local = local_train(
                    &setup.clients[id as usize],
                    w_t,
                    setup.model,
                    setup.train,
                    train_seed,
                )?;
                w_local.sub(w_t)?
            }
        };
        updates.push((id, g));
    }

    let bare: Vec<ParamVector> = updates.iter().map(|(_, g)| g.clone()).collect();
    let agg = aggregate(setup.agg, &bare)?;
    let mut new_global = w_t.clone();
    new_global.add_scaled(&agg, plan.alpha)?;
    Ok(RoundOutcome { updates, new_global })
}

/// Runs the full training loop, checkpointing at the cadence.
///
/// Checkpoints capture the pre-update model `w_t` together with the raw
/// updates of round `t`, narrowed to `f32`. Returns the final global model.
pub fn run_training(
    setup: &TrainingSetup,
    w0: &ParamVector,
    mut store: Option<&mut CheckpointStore>,
) -> Result<ParamVector> {
    setup.validate()?;
    let mut w = w0.clone();
    for t in 1..=setup.rounds {
        let plan = plan_round(setup, t);
        let outcome = run_round(&w, &plan, setup)?;
        if t % setup.checkpoint_cadence == 0 {
            if let Some(store) = store.as_deref_mut() {
                let cp = Checkpoint {
                    round: t,
                    alpha: plan.alpha,
                    global: w.to_f32(),
                    updates: outcome
                        .updates
                        .iter()
                        .map(|(id, g)| (*id, g.to_f32()))
                        .collect(),
                };
                store.save_checkpoint(&cp)?;
            }
        }
        w = outcome.new_global;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn pv(vals: &[f64]) -> ParamVector {
        ParamVector(vals.to_vec())
    }

    #[test]
    fn fedavg_means_coordinates() {
        let out = aggregate(AggRule::FedAvg, &[pv(&[1.0, 2.0]), pv(&[3.0, 4.0])]).unwrap();
        assert_eq!(out.0, vec![2.0, 3.0]);
    }

    #[test]
    fn trimmed_mean_drops_extremes() {
        let updates: Vec<ParamVector> =
            [0.0, 1.0, 2.0, 100.0].iter().map(|&v| pv(&[v])).collect();
        let out = aggregate(AggRule::TrimmedMean(1), &updates).unwrap();
        assert_eq!(out.0, vec![1.5]);
    }

    #[test]
    fn trimmed_mean_needs_enough_updates() {
        let updates: Vec<ParamVector> = [0.0, 1.0].iter().map(|&v| pv(&[v])).collect();
        assert!(aggregate(AggRule::TrimmedMean(1), &updates).is_err());
    }

    #[test]
    fn median_odd_and_even() {
        let out = aggregate(
            AggRule::CoordinateMedian,
            &[pv(&[0.0, 0.0]), pv(&[0.0, 0.0]), pv(&[9.0, 9.0])],
        )
        .unwrap();
        assert_eq!(out.0, vec![0.0, 0.0]);
        let out = aggregate(
            AggRule::CoordinateMedian,
            &[pv(&[1.0]), pv(&[2.0]), pv(&[3.0]), pv(&[4.0])],
        )
        .unwrap();
        assert_eq!(out.0, vec![2.5]);
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(
            columns in proptest::collection::vec(
                proptest::collection::vec(-1e6f64..1e6, 3..8), 1..5),
            seed in 0u64..1000,
        ) {
            // Transpose: every update needs the same length.
            let n = columns[0].len();
            prop_assume!(columns.iter().all(|c| c.len() == n));
            let updates: Vec<ParamVector> = (0..n)
                .map(|i| ParamVector(columns.iter().map(|c| c[i]).collect()))
                .collect();
            let mut shuffled = updates.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut seeds::stream(seed, &[1]));
            for rule in [AggRule::FedAvg, AggRule::TrimmedMean(1), AggRule::CoordinateMedian] {
                let a = aggregate(rule, &updates).unwrap();
                let b = aggregate(rule, &shuffled).unwrap();
                for (x, y) in a.0.iter().zip(&b.0) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn halving_updates_and_doubling_rate_is_exact() {
        let updates = vec![pv(&[0.125, -3.5]), pv(&[1.75, 0.0625]), pv(&[-0.25, 7.0])];
        let halved: Vec<ParamVector> = updates.iter().map(|u| u.scale(0.5)).collect();
        let w = pv(&[1.0, 1.0]);
        let alpha = 0.3;
        let mut a = w.clone();
        a.add_scaled(&aggregate(AggRule::FedAvg, &updates).unwrap(), alpha).unwrap();
        let mut b = w.clone();
        b.add_scaled(&aggregate(AggRule::FedAvg, &halved).unwrap(), 2.0 * alpha).unwrap();
        assert_eq!(a.0[0].to_bits(), b.0[0].to_bits());
        assert_eq!(a.0[1].to_bits(), b.0[1].to_bits());
    }

    fn toy_dataset(n: usize, classes: usize, d: usize, seed: u64) -> Vec<Example> {
        let mut rng = seeds::stream(seed, &[50]);
        (0..n)
            .map(|_| {
                Example::new(
                    (0..d).map(|_| rng.gen_range(0.0..1.0)).collect(),
                    rng.gen_range(0..classes),
                )
            })
            .collect()
    }

    #[test]
    fn partition_covers_every_client() {
        let data = toy_dataset(1000, 10, 4, 1);
        let cfg = PartitionConfig { n_clients: 100, rho: 0.5, seed: 9 };
        let locals = partition_noniid(&data, &cfg, 10).unwrap();
        assert_eq!(locals.len(), 100);
        assert!(locals.iter().all(|l| !l.is_empty()));
        let total: usize = locals.iter().map(|l| l.len()).sum();
        assert_eq!(total, 1000);
    }

    #[test]
    fn partition_is_deterministic() {
        let data = toy_dataset(500, 10, 4, 2);
        let cfg = PartitionConfig { n_clients: 50, rho: 0.5, seed: 5 };
        let a = partition_noniid(&data, &cfg, 10).unwrap();
        let b = partition_noniid(&data, &cfg, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_routes_labels_at_rho() {
        // With rho = 0.5 about half of each label's examples land in the
        // label's own group. Fixed seed, so the bound is a frozen check.
        let classes = 10;
        let mut data = Vec::new();
        for i in 0..10_000 {
            data.push(Example::new(vec![0.5; 4], i % classes));
        }
        let cfg = PartitionConfig { n_clients: 100, rho: 0.5, seed: 3 };
        let locals = partition_noniid(&data, &cfg, classes).unwrap();

        // Rebuild the group membership the same way partition does.
        let mut ids: Vec<u32> = (0..100).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = seeds::stream(3, &[tag::PARTITION_GROUPS]);
            ids.shuffle(&mut rng);
        }
        let mut group_of = vec![0usize; 100];
        for (pos, id) in ids.into_iter().enumerate() {
            group_of[id as usize] = pos % classes;
        }
        let mut pooled_own = 0usize;
        for label in 0..classes {
            let own: usize = locals
                .iter()
                .enumerate()
                .filter(|(c, _)| group_of[*c] == label)
                .map(|(_, l)| l.iter().filter(|e| e.y == label).count())
                .sum();
            let total: usize =
                locals.iter().map(|l| l.iter().filter(|e| e.y == label).count()).sum();
            assert_eq!(total, 1000);
            pooled_own += own;
            let frac = own as f64 / total as f64;
            assert!((frac - 0.5).abs() < 0.05, "label {label}: own-group fraction {frac}");
        }
        // Pooled over all 10k examples the noise is far smaller.
        let pooled = pooled_own as f64 / 10_000.0;
        assert!((pooled - 0.5).abs() < 0.015, "pooled own-group fraction {pooled}");
    }

    #[test]
    fn too_few_clients_for_groups_is_an_error() {
        let data = toy_dataset(100, 10, 4, 1);
        let cfg = PartitionConfig { n_clients: 5, rho: 0.5, seed: 1 };
        assert!(partition_noniid(&data, &cfg, 10).is_err());
    }

    fn tiny_setup<'a>(
        clients: &'a [Vec<Example>],
        model: &'a ModelSpec,
        train: &'a TrainParams,
    ) -> TrainingSetup<'a> {
        TrainingSetup {
            clients,
            model,
            train,
            rounds: 6,
            server_lr: 1.0,
            selection_fraction: 1.0,
            checkpoint_cadence: 3,
            agg: AggRule::FedAvg,
            seed: 77,
            attack: None,
            excluded: &[],
        }
    }

    #[test]
    fn selection_is_exact_and_eventually_covers_everyone() {
        let data = toy_dataset(400, 4, 3, 4);
        let cfg = PartitionConfig { n_clients: 100, rho: 0.25, seed: 2 };
        let clients = partition_noniid(&data, &cfg, 4).unwrap();
        let model = ModelSpec::linear(3, 4, 0);
        let train = TrainParams { epochs: 1, batch_size: 8, lr: 0.1 };
        let mut setup = tiny_setup(&clients, &model, &train);
        setup.selection_fraction = 0.1;
        let mut seen = std::collections::BTreeSet::new();
        for t in 1..=200 {
            let plan = plan_round(&setup, t);
            assert_eq!(plan.selected.len(), 10);
            let mut sorted = plan.selected.clone();
            sorted.dedup();
            assert_eq!(sorted, plan.selected, "ids must be unique ascending");
            seen.extend(plan.selected);
        }
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn training_is_deterministic_including_checkpoints() {
        let data = toy_dataset(60, 3, 4, 6);
        let cfg = PartitionConfig { n_clients: 6, rho: 0.5, seed: 8 };
        let clients = partition_noniid(&data, &cfg, 3).unwrap();
        let model = ModelSpec::linear(4, 3, 1);
        let train = TrainParams { epochs: 1, batch_size: 4, lr: 0.1 };
        let setup = tiny_setup(&clients, &model, &train);
        let w0 = init_model(&model).unwrap();

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut store_a = CheckpointStore::create(dir_a.path()).unwrap();
        let mut store_b = CheckpointStore::create(dir_b.path()).unwrap();
        let wa = run_training(&setup, &w0, Some(&mut store_a)).unwrap();
        let wb = run_training(&setup, &w0, Some(&mut store_b)).unwrap();
        assert_eq!(wa.0, wb.0);
        assert_eq!(store_a.rounds(), vec![3, 6]);
        let bytes_a = std::fs::read(CheckpointStore::data_path(dir_a.path())).unwrap();
        let bytes_b = std::fs::read(CheckpointStore::data_path(dir_b.path())).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn empty_exclusion_reproduces_the_run() {
        let data = toy_dataset(60, 3, 4, 7);
        let cfg = PartitionConfig { n_clients: 6, rho: 0.5, seed: 8 };
        let clients = partition_noniid(&data, &cfg, 3).unwrap();
        let model = ModelSpec::linear(4, 3, 2);
        let train = TrainParams { epochs: 1, batch_size: 4, lr: 0.1 };
        let setup = tiny_setup(&clients, &model, &train);
        let w0 = init_model(&model).unwrap();
        let base = run_training(&setup, &w0, None).unwrap();
        let mut with_empty = setup.clone();
        with_empty.excluded = &[];
        let again = run_training(&with_empty, &w0, None).unwrap();
        assert_eq!(base.0, again.0);

        // Excluding one client changes the result.
        let mut without_zero = setup.clone();
        without_zero.excluded = &[0];
        let differ = run_training(&without_zero, &w0, None).unwrap();
        assert_ne!(base.0, differ.0);
    }

    #[test]
    fn checkpoints_store_the_pre_update_model() {
        let data = toy_dataset(40, 2, 3, 9);
        let cfg = PartitionConfig { n_clients: 4, rho: 0.5, seed: 1 };
        let clients = partition_noniid(&data, &cfg, 2).unwrap();
        let model = ModelSpec::linear(3, 2, 3);
        let train = TrainParams { epochs: 1, batch_size: 4, lr: 0.1 };
        let mut setup = tiny_setup(&clients, &model, &train);
        setup.rounds = 1;
        setup.checkpoint_cadence = 1;
        let w0 = init_model(&model).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path()).unwrap();
        let w1 = run_training(&setup, &w0, Some(&mut store)).unwrap();
        let cp = store.load_checkpoint(1).unwrap();
        assert_eq!(cp.global, w0.to_f32());
        assert_ne!(cp.global, w1.to_f32());
        assert_eq!(cp.selected_clients(), vec![0, 1, 2, 3]);
    }
}
