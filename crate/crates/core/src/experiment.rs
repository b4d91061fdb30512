//! End-to-end experiment orchestration.
//!
//! One experiment is: build (or load) the dataset, partition it, train
//! under the configured attack while checkpointing, measure accuracy and
//! attack success, pick a misclassified target input, score every client's
//! influence on it, run detection, and compare against ground truth. A
//! recovery run retrains from scratch with a client set excluded and
//! reports the before/after numbers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{embed_trigger, AttackKind};
use crate::checkpoint::CheckpointStore;
use crate::config::{ExperimentConfig, ProbeKindCfg};
use crate::data::{gen_bundle, read_dataset, DataBundle};
use crate::detect::{classify_probe, detect_malicious, DetectionReport, ProbeClass};
use crate::engine::{partition_noniid, run_training, ActiveAttack, TrainingSetup};
use crate::error::{Error, Result};
use crate::influence::{
    gen_random_nontarget, influence_pairs, InfluencePair, ProbeInput, Provenance,
};
use crate::metrics::{compute_asr, compute_detection_metrics, test_accuracy, Metrics};
use crate::model::{ce_loss, init_model, predict, Example};
use crate::params::ParamVector;
use crate::seeds::{self, tag};

/// Dataset splits plus the per-client partition of the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub bundle: DataBundle,
    pub locals: Vec<Vec<Example>>,
}

/// Builds or loads every split, then partitions the train split.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let ds = &cfg.dataset;
    let bundle = if let (Some(train), Some(test)) = (&ds.path, &ds.test_path) {
        let load = |p: &str| -> Result<Vec<Example>> {
            let (d, classes, data) = read_dataset(Path::new(p))?;
            if d != ds.d || classes != ds.classes {
                return Err(Error::InvalidConfig(format!(
                    "{p}: file is d={d} C={classes}, config wants d={} C={}",
                    ds.d, ds.classes
                )));
            }
            Ok(data)
        };
        DataBundle {
            train: load(train)?,
            test: load(test)?,
            edge_train: match &ds.edge_train_path {
                Some(p) => load(p)?,
                None => Vec::new(),
            },
            edge_test: match &ds.edge_test_path {
                Some(p) => load(p)?,
                None => Vec::new(),
            },
        }
    } else {
        gen_bundle(
            ds.d,
            ds.classes,
            ds.sigma,
            ds.label_noise,
            ds.train_count,
            ds.test_count,
            ds.edge_train_count,
            ds.edge_test_count,
            ds.seed,
        )?
    };
    let locals = partition_noniid(&bundle.train, &cfg.partition_config(), ds.classes)?;
    Ok(PreparedData { bundle, locals })
}

/// Attack probes: the inputs the attacker wants predicted as the target
/// label, carrying their true labels.
///
/// For trigger attacks these are every test example of a different label
/// with the trigger stamped in; for the edge attack, the held-out edge
/// examples of a different label, unmodified.
pub fn build_probe_pool(cfg: &ExperimentConfig, bundle: &DataBundle) -> Result<Vec<Example>> {
    let target = cfg.attack.target_label;
    let atk = cfg.attack_config();
    match atk.kind {
        AttackKind::Scaling | AttackKind::Alie => {
            let mut rng = seeds::stream(atk.seed, &[tag::PROBE, 1]);
            bundle
                .test
                .iter()
                .filter(|e| e.y != target)
                .map(|e| {
                    Ok(Example::new(
                        embed_trigger(&e.x, &atk.trigger, cfg.grid(), &mut rng)?,
                        e.y,
                    ))
                })
                .collect()
        }
        AttackKind::Edge => {
            Ok(bundle.edge_test.iter().filter(|e| e.y != target).cloned().collect())
        }
    }
}

/// A finished training run and its quality numbers.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub data: PreparedData,
    pub w0: ParamVector,
    pub final_model: ParamVector,
    pub tacc: f64,
    pub asr: f64,
    pub probe_pool: Vec<Example>,
}

/// Trains under the configured attack, optionally checkpointing.
///
/// `excluded` clients never participate; pass the detected set here for
/// recovery retraining.
pub fn train_run(
    cfg: &ExperimentConfig,
    store: Option<&mut CheckpointStore>,
    excluded: &[u32],
) -> Result<TrainedRun> {
    cfg.validate()?;
    let n = cfg.partition.n_clients;
    for &id in excluded {
        if id as usize >= n {
            return Err(Error::InvalidConfig(format!("excluded client {id} outside 0..{n}")));
        }
    }
    if excluded.len() >= n {
        return Err(Error::InvalidConfig("cannot exclude every client".into()));
    }

    let data = prepare_data(cfg)?;
    let spec = cfg.model_spec();
    let train_params = cfg.train_params();
    let w0 = init_model(&spec)?;

    let atk_cfg = cfg.attack_config();
    let m = cfg.n_malicious();
    let edge_sets: Vec<Vec<Example>> = if m > 0 && atk_cfg.kind == AttackKind::Edge {
        let mut sets = vec![Vec::new(); m];
        for (j, e) in data.bundle.edge_train.iter().enumerate() {
            sets[j % m].push(e.clone());
        }
        sets
    } else {
        Vec::new()
    };
    let attack = ActiveAttack {
        cfg: &atk_cfg,
        grid: cfg.grid(),
        n_malicious: m,
        edge_sets: &edge_sets,
    };

    let setup = TrainingSetup {
        clients: &data.locals,
        model: &spec,
        train: &train_params,
        rounds: cfg.training.rounds,
        server_lr: cfg.training.server_lr,
        selection_fraction: cfg.training.selection_fraction,
        checkpoint_cadence: cfg.training.checkpoint_cadence,
        agg: cfg.agg_rule(),
        seed: cfg.training.seed,
        attack: (m > 0).then_some(&attack),
        excluded,
    };
    let final_model = run_training(&setup, &w0, store)?;

    let tacc = test_accuracy(&final_model, &data.bundle.test, &spec)?;
    let probe_pool = build_probe_pool(cfg, &data.bundle)?;
    let inputs: Vec<Vec<f64>> = probe_pool.iter().map(|e| e.x.clone()).collect();
    let asr = compute_asr(&final_model, &inputs, cfg.attack.target_label, &spec)?;

    Ok(TrainedRun { data, w0, final_model, tacc, asr, probe_pool })
}

/// The misclassified target input chosen for forensics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    /// Index into the attack probe pool.
    pub pool_index: usize,
    /// The example's true label (not the predicted target label).
    pub true_label: usize,
    pub probe: ProbeInput,
}

/// First probe-pool input the model predicts as the target label.
pub fn pick_target_probe(
    cfg: &ExperimentConfig,
    model: &ParamVector,
    pool: &[Example],
) -> Result<Option<ProbeRecord>> {
    let spec = cfg.model_spec();
    let target = cfg.attack.target_label;
    for (i, e) in pool.iter().enumerate() {
        if predict(model, &e.x, &spec)? == target {
            return Ok(Some(ProbeRecord {
                pool_index: i,
                true_label: e.y,
                probe: ProbeInput {
                    x: e.x.clone(),
                    y: target,
                    provenance: Provenance::MisclassifiedTest,
                },
            }));
        }
    }
    Ok(None)
}

/// The non-target probe configured in the forensics section.
///
/// The true-label choice takes the correctly classified target-label test
/// input the model finds hardest (highest loss): an easy one has a
/// near-zero loss gradient at late checkpoints and teaches the scores
/// nothing, while a misclassified one is not a valid clean reference.
pub fn pick_nontarget_probe(
    cfg: &ExperimentConfig,
    bundle: &DataBundle,
    model: &ParamVector,
) -> Result<ProbeInput> {
    let target = cfg.attack.target_label;
    match cfg.forensics.probe {
        ProbeKindCfg::RandomNontarget => {
            Ok(gen_random_nontarget(cfg.dataset.d, target, cfg.forensics.seed))
        }
        ProbeKindCfg::TrueNontarget => {
            let spec = cfg.model_spec();
            let mut best: Option<(f64, &Example)> = None;
            let mut best_any: Option<(f64, &Example)> = None;
            for e in bundle.test.iter().filter(|e| e.y == target) {
                let loss = ce_loss(model, e, &spec)?;
                if best_any.as_ref().is_none_or(|(l, _)| loss > *l) {
                    best_any = Some((loss, e));
                }
                if predict(model, &e.x, &spec)? == target
                    && best.as_ref().is_none_or(|(l, _)| loss > *l)
                {
                    best = Some((loss, e));
                }
            }
            best.or(best_any)
                .map(|(_, e)| ProbeInput {
                    x: e.x.clone(),
                    y: target,
                    provenance: Provenance::TrueNonTarget,
                })
                .ok_or(Error::Empty("test example with the target label"))
        }
    }
}

/// How the pipeline ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// Forensics ran on a misclassified target input.
    Detected,
    /// The attack never stuck: no probe-pool input is predicted as the
    /// target label, so there is nothing to trace.
    NoMisclassifiedTarget,
}

/// Everything a run produced, self-contained for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub outcome: Outcome,
    pub tacc: f64,
    pub asr: f64,
    pub n_clients: usize,
    pub true_malicious: Vec<u32>,
    pub target_probe: Option<ProbeRecord>,
    pub nontarget_probe: Option<ProbeInput>,
    pub pairs: Vec<InfluencePair>,
    pub detection: Option<DetectionReport>,
    pub metrics: Option<Metrics>,
    pub probe_class: Option<ProbeClass>,
}

/// Runs the full pipeline, writing checkpoints into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut store = CheckpointStore::create(out_dir)?;
    let run = train_run(cfg, Some(&mut store), &[])?;
    finish_experiment(cfg, &run, &store)
}

/// Forensics, detection, and metrics for an already-trained run.
pub fn finish_experiment(
    cfg: &ExperimentConfig,
    run: &TrainedRun,
    store: &CheckpointStore,
) -> Result<ExperimentReport> {
    let truth: Vec<u32> = (0..cfg.n_malicious() as u32).collect();
    let n = cfg.partition.n_clients;
    let mut report = ExperimentReport {
        config: cfg.clone(),
        outcome: Outcome::NoMisclassifiedTarget,
        tacc: run.tacc,
        asr: run.asr,
        n_clients: n,
        true_malicious: truth.clone(),
        target_probe: None,
        nontarget_probe: None,
        pairs: Vec::new(),
        detection: None,
        metrics: None,
        probe_class: None,
    };
    let Some(target) = pick_target_probe(cfg, &run.final_model, &run.probe_pool)? else {
        return Ok(report);
    };
    let nontarget = pick_nontarget_probe(cfg, &run.data.bundle, &run.final_model)?;
    let spec = cfg.model_spec();
    let pairs = influence_pairs(store, &target.probe, &nontarget, &spec)?;
    let mcs = cfg.forensics.min_cluster_size;
    let detection = detect_malicious(&pairs, mcs)?;
    let metrics = compute_detection_metrics(&detection.malicious, &truth, n)?;
    let probe_class = classify_probe(&pairs, mcs, cfg.forensics.alpha)?;

    report.outcome = Outcome::Detected;
    report.target_probe = Some(target);
    report.nontarget_probe = Some(nontarget);
    report.pairs = pairs;
    report.detection = Some(detection);
    report.metrics = Some(metrics);
    report.probe_class = Some(probe_class);
    Ok(report)
}

/// Before/after numbers for recovery retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub excluded: Vec<u32>,
    pub pre_tacc: f64,
    pub pre_asr: f64,
    pub post_tacc: f64,
    pub post_asr: f64,
}

/// Retrains from scratch without the excluded clients.
///
/// Returns the recovered model and the paired before/after metrics; the
/// "before" numbers come from a fresh baseline run with nobody excluded.
pub fn recover_retrain(
    cfg: &ExperimentConfig,
    excluded: &[u32],
) -> Result<(ParamVector, RecoveryReport)> {
    let mut excluded: Vec<u32> = excluded.to_vec();
    excluded.sort_unstable();
    excluded.dedup();
    let baseline = train_run(cfg, None, &[])?;
    let recovered = train_run(cfg, None, &excluded)?;
    let report = RecoveryReport {
        excluded,
        pre_tacc: baseline.tacc,
        pre_asr: baseline.asr,
        post_tacc: recovered.tacc,
        post_asr: recovered.asr,
    };
    Ok((recovered.final_model, report))
}
