//! Report emission: JSON artifacts, per-client score records, and the
//! human-readable summary. All numeric text goes through one 6-significant-
//! digit formatter so identical runs produce identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::detect::DetectionReport;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentReport, Outcome, RecoveryReport};
use crate::influence::InfluencePair;

/// Formats with 6 significant digits; plain decimal in a comfortable
/// range, scientific outside it.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Error::Malformed { kind: "json", detail: e.to_string() })?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Malformed { kind: "json", detail: format!("{}: {e}", path.display()) })
}

/// One score record per line, ascending client id.
pub fn write_scores_jsonl(path: &Path, pairs: &[InfluencePair]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in pairs {
        let line = serde_json::to_string(p)
            .map_err(|e| Error::Malformed { kind: "json", detail: e.to_string() })?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scores_jsonl(path: &Path) -> Result<Vec<InfluencePair>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            kind: "scores",
            detail: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(pairs)
}

fn id_list(ids: &[u32]) -> String {
    if ids.is_empty() {
        return "(none)".into();
    }
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

/// The detection section of the summary table.
pub fn detection_text(d: &DetectionReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("mode: {:?}\n", d.mode));
    match d.threshold {
        Some(t) => s.push_str(&format!("threshold: {}\n", sig6(t))),
        None => s.push_str("threshold: undefined (no potential malicious cluster)\n"),
    }
    if d.duplicated {
        s.push_str("small population: scores duplicated before clustering\n");
    }
    if d.degenerate_span_s {
        s.push_str("degenerate span on s: axis collapsed to 0\n");
    }
    if d.degenerate_span_s_prime {
        s.push_str("degenerate span on s': axis collapsed to 0\n");
    }
    for g in &d.guard_events {
        s.push_str(&format!("guard: {g}\n"));
    }
    s.push_str("clusters:\n");
    s.push_str("  id  size  mean_s      ratio       potential  flagged\n");
    for c in &d.clusters {
        let ratio = c.ratio.map(|r| sig6(r)).unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "  {:<3} {:<5} {:<11} {:<11} {:<9} {}\n",
            c.id,
            c.size,
            sig6(c.mean_s),
            ratio,
            c.potential,
            c.flagged
        ));
    }
    if !d.outliers.is_empty() {
        s.push_str("outliers:\n");
        s.push_str("  client  s           s'          ratio       flagged\n");
        for o in &d.outliers {
            let ratio = o.ratio.map(|r| sig6(r)).unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "  {:<7} {:<11} {:<11} {:<11} {}\n",
                o.client,
                sig6(o.s),
                sig6(o.s_prime),
                ratio,
                o.flagged
            ));
        }
    }
    s.push_str(&format!("predicted malicious: {}\n", id_list(&d.malicious)));
    s
}

/// The full human-readable summary for one run.
pub fn summary_text(r: &ExperimentReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "run: {} clients, {} rounds, {:?} attack, {:?} aggregation\n",
        r.n_clients, r.config.training.rounds, r.config.attack.kind, r.config.training.aggregation
    ));
    s.push_str(&format!("test accuracy: {}\n", sig6(r.tacc)));
    s.push_str(&format!("attack success rate: {}\n", sig6(r.asr)));
    s.push_str(&format!("true malicious clients: {}\n", id_list(&r.true_malicious)));
    match r.outcome {
        Outcome::NoMisclassifiedTarget => {
            s.push_str("outcome: no misclassified target input; forensics skipped\n");
            return s;
        }
        Outcome::Detected => s.push_str("outcome: forensics completed\n"),
    }
    if let Some(p) = &r.target_probe {
        s.push_str(&format!(
            "target probe: pool index {}, true label {}, predicted {}\n",
            p.pool_index, p.true_label, p.probe.y
        ));
    }
    if let Some(p) = &r.nontarget_probe {
        s.push_str(&format!("non-target probe: {:?}\n", p.provenance));
    }
    if let Some(d) = &r.detection {
        s.push_str(&detection_text(d));
    }
    if let Some(m) = &r.metrics {
        s.push_str(&format!(
            "detection metrics: DACC {}  FPR {}  FNR {}\n",
            sig6(m.dacc),
            sig6(m.fpr),
            sig6(m.fnr)
        ));
        s.push_str(&format!(
            "confusion: tp {} fp {} tn {} fn {}\n",
            m.true_pos, m.false_pos, m.true_neg, m.false_neg
        ));
    }
    if let Some(c) = &r.probe_class {
        s.push_str(&format!("probe classification: {c:?}\n"));
    }
    s
}

pub fn recovery_text(r: &RecoveryReport) -> String {
    format!(
        "recovery: excluded {}\n  before: TACC {}  ASR {}\n  after:  TACC {}  ASR {}\n",
        id_list(&r.excluded),
        sig6(r.pre_tacc),
        sig6(r.pre_asr),
        sig6(r.post_tacc),
        sig6(r.post_asr)
    )
}

/// Writes `summary.json` and `summary.txt` for one run.
pub fn write_summary(out_dir: &Path, report: &ExperimentReport) -> Result<()> {
    write_json(&out_dir.join("summary.json"), report)?;
    std::fs::write(out_dir.join("summary.txt"), summary_text(report))?;
    Ok(())
}

/// Aggregate over several seeded runs of the same config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRunSummary {
    pub master_seeds: Vec<u64>,
    pub runs: usize,
    /// Runs whose attack produced a misclassified target input.
    pub detected_runs: usize,
    pub mean_tacc: f64,
    pub mean_asr: f64,
    /// Detection metric means over detected runs only; absent when no run
    /// got that far.
    pub mean_dacc: Option<f64>,
    pub mean_fpr: Option<f64>,
    pub mean_fnr: Option<f64>,
}

pub fn summarize_runs(master_seeds: &[u64], reports: &[ExperimentReport]) -> MultiRunSummary {
    let n = reports.len().max(1) as f64;
    let detected: Vec<&ExperimentReport> =
        reports.iter().filter(|r| r.outcome == Outcome::Detected).collect();
    let metric_mean = |get: &dyn Fn(&ExperimentReport) -> f64| -> Option<f64> {
        if detected.is_empty() {
            None
        } else {
            Some(detected.iter().map(|r| get(r)).sum::<f64>() / detected.len() as f64)
        }
    };
    MultiRunSummary {
        master_seeds: master_seeds.to_vec(),
        runs: reports.len(),
        detected_runs: detected.len(),
        mean_tacc: reports.iter().map(|r| r.tacc).sum::<f64>() / n,
        mean_asr: reports.iter().map(|r| r.asr).sum::<f64>() / n,
        mean_dacc: metric_mean(&|r| r.metrics.as_ref().unwrap().dacc),
        mean_fpr: metric_mean(&|r| r.metrics.as_ref().unwrap().fpr),
        mean_fnr: metric_mean(&|r| r.metrics.as_ref().unwrap().fnr),
    }
}

pub fn multi_run_text(s: &MultiRunSummary) -> String {
    let opt = |v: Option<f64>| v.map(sig6).unwrap_or_else(|| "-".into());
    let mut out = String::new();
    out.push_str(&format!(
        "seeds: {}\n",
        s.master_seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
    ));
    out.push_str(&format!("runs: {} ({} reached forensics)\n", s.runs, s.detected_runs));
    out.push_str(&format!("mean TACC {}  mean ASR {}\n", sig6(s.mean_tacc), sig6(s.mean_asr)));
    out.push_str(&format!(
        "mean DACC {}  mean FPR {}  mean FNR {}\n",
        opt(s.mean_dacc),
        opt(s.mean_fpr),
        opt(s.mean_fnr)
    ));
    out
}
