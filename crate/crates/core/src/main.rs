//! Command-line surface: each subcommand runs one pipeline stage against
//! an output directory, so stages compose through files. `run-all` does
//! the whole chain in one process.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fltrace::checkpoint::CheckpointStore;
use fltrace::config::ExperimentConfig;
use fltrace::data::write_dataset;
use fltrace::detect::{classify_probe, detect_malicious, ProbeClass};
use fltrace::error::{Error, Result};
use fltrace::experiment::{
    finish_experiment, pick_nontarget_probe, pick_target_probe, prepare_data, recover_retrain,
    train_run, ExperimentReport, Outcome, ProbeRecord, RecoveryReport,
};
use fltrace::influence::{influence_pairs, ProbeInput};
use fltrace::metrics::compute_detection_metrics;
use fltrace::params::ParamVector;
use fltrace::report::{
    detection_text, multi_run_text, read_json, read_scores_jsonl, recovery_text, sig6,
    summarize_runs, write_json, write_scores_jsonl, write_summary,
};
use fltrace::seeds;

#[derive(Parser)]
#[command(name = "fltrace", version, about = "Federated training with poison forensics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file; built-in desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides every per-section seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for run artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and split it across clients.
    Partition(Common),
    /// Train under the configured attack, writing checkpoints.
    Train(Common),
    /// Score every client's influence on the misclassified target input.
    Forensics(Common),
    /// Cluster influence scores and flag malicious clients.
    Detect(Common),
    /// Decide whether the probe input was attacked or organically wrong.
    ClassifyProbe(Common),
    /// Retrain from scratch without the flagged clients.
    Recover {
        #[command(flatten)]
        common: Common,
        /// Clients to exclude, comma separated; defaults to the detected
        /// set in the output directory.
        #[arg(long, value_delimiter = ',')]
        exclude: Option<Vec<u32>>,
    },
    /// Collect the stage artifacts into summary files.
    Report(Common),
    /// Run every stage end to end.
    RunAll {
        #[command(flatten)]
        common: Common,
        /// Number of independent repeats; masters are derived from --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

/// Per-client slice of the partition, for inspection.
#[derive(Serialize, Deserialize)]
struct PartitionRecord {
    client: u32,
    count: usize,
    label_counts: Vec<usize>,
}

/// Quality numbers of the training stage.
#[derive(Serialize, Deserialize)]
struct TrainSummary {
    tacc: f64,
    asr: f64,
}

/// Probe choices and whether forensics could run at all.
#[derive(Serialize, Deserialize)]
struct ProbesArtifact {
    outcome: Outcome,
    target: Option<ProbeRecord>,
    nontarget: Option<ProbeInput>,
}

#[derive(Serialize, Deserialize)]
struct ClassificationArtifact {
    verdict: ProbeClass,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::desk_default(),
    };
    if let Some(master) = common.seed {
        cfg.apply_master_seed(master);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_partition(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = &common.out;
    ensure_dir(out)?;
    let data = prepare_data(&cfg)?;
    let ds = &cfg.dataset;
    write_dataset(&out.join("train.txt"), ds.d, ds.classes, &data.bundle.train)?;
    write_dataset(&out.join("test.txt"), ds.d, ds.classes, &data.bundle.test)?;
    if !data.bundle.edge_train.is_empty() {
        write_dataset(&out.join("edge_train.txt"), ds.d, ds.classes, &data.bundle.edge_train)?;
    }
    if !data.bundle.edge_test.is_empty() {
        write_dataset(&out.join("edge_test.txt"), ds.d, ds.classes, &data.bundle.edge_test)?;
    }
    let records: Vec<PartitionRecord> = data
        .locals
        .iter()
        .enumerate()
        .map(|(i, local)| {
            let mut label_counts = vec![0usize; ds.classes];
            for e in local {
                label_counts[e.y] += 1;
            }
            PartitionRecord { client: i as u32, count: local.len(), label_counts }
        })
        .collect();
    write_json(&out.join("partition.json"), &records)?;
    println!(
        "partitioned {} examples across {} clients into {}",
        data.bundle.train.len(),
        data.locals.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = &common.out;
    ensure_dir(out)?;
    let mut store = CheckpointStore::create(out)?;
    let run = train_run(&cfg, Some(&mut store), &[])?;
    write_json(&out.join("final_model.json"), &run.final_model.0)?;
    write_json(&out.join("train.json"), &TrainSummary { tacc: run.tacc, asr: run.asr })?;
    println!("trained {} rounds: TACC {}  ASR {}", cfg.training.rounds, sig6(run.tacc), sig6(run.asr));
    println!("checkpoints: {} rounds stored", store.len());
    Ok(())
}

fn cmd_forensics(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = &common.out;
    let weights: Vec<f64> = read_json(&out.join("final_model.json"))?;
    let model = ParamVector(weights);
    let store = CheckpointStore::open(out)?;
    let data = prepare_data(&cfg)?;
    let pool = fltrace::experiment::build_probe_pool(&cfg, &data.bundle)?;
    let Some(target) = pick_target_probe(&cfg, &model, &pool)? else {
        write_json(
            &out.join("probes.json"),
            &ProbesArtifact {
                outcome: Outcome::NoMisclassifiedTarget,
                target: None,
                nontarget: None,
            },
        )?;
        println!("no misclassified target input; nothing to trace");
        return Ok(());
    };
    let nontarget = pick_nontarget_probe(&cfg, &data.bundle, &model)?;
    let pairs = influence_pairs(&store, &target.probe, &nontarget, &cfg.model_spec())?;
    write_scores_jsonl(&out.join("scores.jsonl"), &pairs)?;
    write_json(
        &out.join("probes.json"),
        &ProbesArtifact {
            outcome: Outcome::Detected,
            target: Some(target),
            nontarget: Some(nontarget),
        },
    )?;
    println!("scored {} clients over {} checkpoints", pairs.len(), store.len());
    Ok(())
}

fn cmd_detect(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = &common.out;
    let pairs = read_scores_jsonl(&out.join("scores.jsonl"))?;
    let detection = detect_malicious(&pairs, cfg.forensics.min_cluster_size)?;
    write_json(&out.join("detection.json"), &detection)?;
    std::fs::write(out.join("detection.txt"), detection_text(&detection))?;
    print!("{}", detection_text(&detection));
    Ok(())
}

fn cmd_classify(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = &common.out;
    let pairs = read_scores_jsonl(&out.join("scores.jsonl"))?;
    let verdict = classify_probe(&pairs, cfg.forensics.min_cluster_size, cfg.forensics.alpha)?;
    write_json(&out.join("classification.json"), &ClassificationArtifact { verdict })?;
    println!("probe classification: {verdict:?}");
    Ok(())
}

fn cmd_recover(common: &Common, exclude: &Option<Vec<u32>>) -> Result<()> {
    let cfg = load_config(common)?;
    let out = &common.out;
    ensure_dir(out)?;
    let excluded = match exclude {
        Some(ids) => ids.clone(),
        None => {
            let detection: fltrace::detect::DetectionReport =
                read_json(&out.join("detection.json"))?;
            detection.malicious
        }
    };
    let (model, report) = recover_retrain(&cfg, &excluded)?;
    write_json(&out.join("recovered_model.json"), &model.0)?;
    write_json(&out.join("recovery.json"), &report)?;
    print!("{}", recovery_text(&report));
    Ok(())
}

fn cmd_report(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = &common.out;
    let train: TrainSummary = read_json(&out.join("train.json"))?;
    let probes: ProbesArtifact = read_json(&out.join("probes.json"))?;
    let truth: Vec<u32> = (0..cfg.n_malicious() as u32).collect();
    let mut report = ExperimentReport {
        config: cfg.clone(),
        outcome: probes.outcome,
        tacc: train.tacc,
        asr: train.asr,
        n_clients: cfg.partition.n_clients,
        true_malicious: truth.clone(),
        target_probe: probes.target,
        nontarget_probe: probes.nontarget,
        pairs: Vec::new(),
        detection: None,
        metrics: None,
        probe_class: None,
    };
    if probes.outcome == Outcome::Detected {
        report.pairs = read_scores_jsonl(&out.join("scores.jsonl"))?;
        let detection: fltrace::detect::DetectionReport = read_json(&out.join("detection.json"))?;
        report.metrics = Some(compute_detection_metrics(
            &detection.malicious,
            &truth,
            cfg.partition.n_clients,
        )?);
        report.detection = Some(detection);
        if let Ok(c) = read_json::<ClassificationArtifact>(&out.join("classification.json")) {
            report.probe_class = Some(c.verdict);
        }
    }
    write_summary(out, &report)?;
    let mut text = fltrace::report::summary_text(&report);
    if let Ok(recovery) = read_json::<RecoveryReport>(&out.join("recovery.json")) {
        text.push_str(&recovery_text(&recovery));
        std::fs::write(out.join("summary.txt"), &text)?;
    }
    print!("{text}");
    println!("wrote {}", out.join("summary.json").display());
    Ok(())
}

/// One full pipeline pass into `dir`, returning the rolled-up report.
fn run_all_once(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentReport> {
    ensure_dir(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let mut store = CheckpointStore::create(dir)?;
    let run = train_run(cfg, Some(&mut store), &[])?;
    write_json(&dir.join("final_model.json"), &run.final_model.0)?;
    write_json(&dir.join("train.json"), &TrainSummary { tacc: run.tacc, asr: run.asr })?;
    let report = finish_experiment(cfg, &run, &store)?;
    write_json(
        &dir.join("probes.json"),
        &ProbesArtifact {
            outcome: report.outcome,
            target: report.target_probe.clone(),
            nontarget: report.nontarget_probe.clone(),
        },
    )?;
    if report.outcome == Outcome::Detected {
        write_scores_jsonl(&dir.join("scores.jsonl"), &report.pairs)?;
        let detection = report.detection.as_ref().expect("detected runs carry a report");
        write_json(&dir.join("detection.json"), detection)?;
        std::fs::write(dir.join("detection.txt"), detection_text(detection))?;
        if let Some(verdict) = report.probe_class {
            write_json(&dir.join("classification.json"), &ClassificationArtifact { verdict })?;
        }
    }
    write_summary(dir, &report)?;
    Ok(report)
}

fn cmd_run_all(common: &Common, repeats: u64) -> Result<()> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("--seeds must be >= 1".into()));
    }
    if repeats == 1 {
        let cfg = load_config(common)?;
        let report = run_all_once(&cfg, &common.out)?;
        print!("{}", fltrace::report::summary_text(&report));
        return Ok(());
    }
    // Multi-seed extension: repeat the experiment under derived master
    // seeds and aggregate. The base comes from --seed (default 0).
    let base = common.seed.unwrap_or(0);
    let mut masters = Vec::new();
    let mut reports = Vec::new();
    for i in 0..repeats {
        let master = seeds::derive(base, &[i]);
        masters.push(master);
        let mut cfg = match &common.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::desk_default(),
        };
        cfg.apply_master_seed(master);
        cfg.validate()?;
        let dir = common.out.join(format!("seed-{i:03}"));
        let report = run_all_once(&cfg, &dir)?;
        println!(
            "seed {i}: TACC {}  ASR {}  outcome {:?}",
            sig6(report.tacc),
            sig6(report.asr),
            report.outcome
        );
        reports.push(report);
    }
    let summary = summarize_runs(&masters, &reports);
    write_json(&common.out.join("aggregate.json"), &summary)?;
    std::fs::write(common.out.join("aggregate.txt"), multi_run_text(&summary))?;
    print!("{}", multi_run_text(&summary));
    Ok(())
}

fn run() -> Result<()> {
    match &Cli::parse().command {
        Command::Partition(c) => cmd_partition(c),
        Command::Train(c) => cmd_train(c),
        Command::Forensics(c) => cmd_forensics(c),
        Command::Detect(c) => cmd_detect(c),
        Command::ClassifyProbe(c) => cmd_classify(c),
        Command::Recover { common, exclude } => cmd_recover(common, exclude),
        Command::Report(c) => cmd_report(c),
        Command::RunAll { common, seeds } => cmd_run_all(common, *seeds),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
