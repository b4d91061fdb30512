//! Detection and model-quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict, Example, ModelSpec};
use crate::params::ParamVector;

/// Confusion counts over clients plus the derived rates.
///
/// "Positive" means predicted malicious. Rates with an empty denominator
/// (no malicious clients, or no benign ones) are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
    pub dacc: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Confusion-matrix arithmetic over client ids `0..n`.
pub fn compute_detection_metrics(predicted: &[u32], truth: &[u32], n: usize) -> Result<Metrics> {
    if n == 0 {
        return Err(Error::Empty("client population"));
    }
    for &id in predicted.iter().chain(truth) {
        if id as usize >= n {
            return Err(Error::InvalidConfig(format!("client id {id} outside 0..{n}")));
        }
    }
    let mut is_pred = vec![false; n];
    let mut is_mal = vec![false; n];
    for &id in predicted {
        is_pred[id as usize] = true;
    }
    for &id in truth {
        is_mal[id as usize] = true;
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fne = 0;
    for i in 0..n {
        match (is_pred[i], is_mal[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fne += 1,
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(Metrics {
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fne,
        dacc: (tp + tn) as f64 / n as f64,
        fpr: rate(fp, fp + tn),
        fnr: rate(fne, fne + tp),
    })
}

/// Fraction of probe inputs the model predicts as the target label.
pub fn compute_asr(w: &ParamVector, probes: &[Vec<f64>], y: usize, spec: &ModelSpec) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Empty("attack probe set"));
    }
    let mut hits = 0usize;
    for x in probes {
        if predict(w, x, spec)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes.len() as f64)
}

/// Fraction of examples predicted with their true label.
pub fn test_accuracy(w: &ParamVector, data: &[Example], spec: &ModelSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut hits = 0usize;
    for e in data {
        if predict(w, &e.x, spec)? == e.y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn perfect_detection() {
        let truth: Vec<u32> = (0..20).collect();
        let m = compute_detection_metrics(&truth, &truth, 100).unwrap();
        assert_eq!((m.dacc, m.fpr, m.fnr), (1.0, 0.0, 0.0));
        assert_eq!((m.true_pos, m.true_neg), (20, 80));
    }

    #[test]
    fn near_miss_profile() {
        // 18 of 20 malicious caught plus one benign flagged.
        let truth: Vec<u32> = (0..20).collect();
        let mut predicted: Vec<u32> = (0..18).collect();
        predicted.push(50);
        let m = compute_detection_metrics(&predicted, &truth, 100).unwrap();
        assert_eq!(m.dacc, 0.97);
        assert_eq!(m.fpr, 0.0125);
        assert_eq!(m.fnr, 0.10);
    }

    #[test]
    fn empty_prediction() {
        let truth: Vec<u32> = (0..20).collect();
        let m = compute_detection_metrics(&[], &truth, 100).unwrap();
        assert_eq!((m.dacc, m.fpr, m.fnr), (0.80, 0.0, 1.0));
    }

    #[test]
    fn no_malicious_clients_gives_zero_fnr() {
        let m = compute_detection_metrics(&[3], &[], 10).unwrap();
        assert_eq!(m.fnr, 0.0);
        assert_eq!(m.fpr, 0.1);
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        assert!(compute_detection_metrics(&[5], &[], 5).is_err());
        assert!(compute_detection_metrics(&[], &[], 0).is_err());
    }

    #[test]
    fn asr_counts_target_predictions() {
        // A model with a huge bias on class 2 predicts 2 for everything.
        let spec = ModelSpec::linear(3, 4, 1);
        let mut w = init_model(&spec).unwrap();
        let bias_start = 3 * 4;
        w.0[bias_start + 2] = 100.0;
        let probes = vec![vec![0.1, 0.2, 0.3], vec![0.9, 0.8, 0.7]];
        assert_eq!(compute_asr(&w, &probes, 2, &spec).unwrap(), 1.0);
        assert_eq!(compute_asr(&w, &probes, 0, &spec).unwrap(), 0.0);
        assert!(compute_asr(&w, &[], 0, &spec).is_err());
    }

    #[test]
    fn accuracy_on_forced_predictions() {
        let spec = ModelSpec::linear(2, 3, 1);
        let mut w = ParamVector::zeros(spec.param_count());
        w.0[2 * 3] = 50.0;
        let data = vec![
            Example::new(vec![0.0, 0.0], 0),
            Example::new(vec![1.0, 1.0], 0),
            Example::new(vec![0.5, 0.5], 1),
            Example::new(vec![0.2, 0.8], 2),
        ];
        let acc = test_accuracy(&w, &data, &spec).unwrap();
        assert_eq!(acc, 0.5);
    }
}
