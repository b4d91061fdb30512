//! Experiment configuration: one TOML document drives one reproducible run.
//!
//! Every section carries its own explicit seed so a config file alone pins
//! the whole run. A master seed (the CLI `--seed` flag) can overwrite all
//! of them through [`ExperimentConfig::apply_master_seed`], which derives
//! one sub-seed per section. Unknown keys anywhere in the document are
//! errors, not warnings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind, AttackSchedule, TriggerLocation, TriggerSpec, TriggerValue};
use crate::engine::{AggRule, PartitionConfig};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TrainParams};
use crate::seeds::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Input dimension; must equal `grid_h * grid_w`.
    pub d: usize,
    pub classes: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Per-coordinate Gaussian spread around the class mean.
    pub sigma: f64,
    /// Probability a label is resampled uniformly; gives an error floor.
    #[serde(default)]
    pub label_noise: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub edge_train_count: usize,
    pub edge_test_count: usize,
    /// Load splits from dataset files instead of generating them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_train_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_test_path: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub n_clients: usize,
    pub rho: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindCfg {
    LinearSoftmax,
    Mlp1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKindCfg,
    /// Hidden width; required for `mlp1`, rejected for `linear_softmax`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggRuleCfg {
    FedAvg,
    TrimmedMean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub rounds: u64,
    /// Server rate `alpha_t`, constant across rounds.
    pub server_lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub local_lr: f64,
    /// Fraction of clients selected each round, in `(0, 1]`.
    pub selection_fraction: f64,
    pub checkpoint_cadence: u64,
    pub aggregation: AggRuleCfg,
    /// Per-coordinate trim count; required for `trimmed_mean`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim_k: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKindCfg {
    Scaling,
    Alie,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleCfg {
    /// `{ every = e }`: active in rounds divisible by `e`.
    Every(u64),
    /// `{ prob = p }`: active independently with probability `p`.
    Prob(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerLocationCfg {
    UpperRight,
    LowerRight,
    UpperLeft,
    LowerLeft,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TriggerValueCfg {
    /// A single fill value for every patch cell.
    Uniform(f64),
    /// Row-major per-cell values, `size * size` of them.
    Pattern(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    pub location: TriggerLocationCfg,
    pub size: usize,
    pub value: TriggerValueCfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKindCfg,
    /// In `[0, 1)`; zero disables the attack entirely.
    pub malicious_fraction: f64,
    pub target_label: usize,
    pub gamma: f64,
    pub z: f64,
    pub schedule: ScheduleCfg,
    pub trigger: TriggerSection,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKindCfg {
    /// Uniform random features labeled with the target label.
    RandomNontarget,
    /// The first test example genuinely carrying the target label.
    TrueNontarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForensicsSection {
    pub probe: ProbeKindCfg,
    pub min_cluster_size: usize,
    /// Ratio band half-width for target-input classification, in `(0, 1)`.
    pub alpha: f64,
    pub seed: u64,
}

/// Everything one run needs, mirrored one-to-one by the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub attack: AttackSection,
    pub forensics: ForensicsSection,
}

impl ExperimentConfig {
    /// Parses and validates a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::Malformed { kind: "config", detail: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The standard desk-scale scenario; every other experiment is a
    /// variation of this config.
    pub fn desk_default() -> Self {
        ExperimentConfig {
            dataset: DatasetSection {
                d: 64,
                classes: 10,
                grid_h: 8,
                grid_w: 8,
                sigma: 0.12,
                label_noise: 0.0,
                train_count: 10_000,
                test_count: 2_000,
                edge_train_count: 0,
                edge_test_count: 0,
                path: None,
                test_path: None,
                edge_train_path: None,
                edge_test_path: None,
                seed: 101,
            },
            partition: PartitionSection { n_clients: 100, rho: 0.5, seed: 102 },
            model: ModelSection { kind: ModelKindCfg::LinearSoftmax, hidden: None, seed: 103 },
            training: TrainingSection {
                rounds: 200,
                server_lr: 1.0,
                local_epochs: 1,
                batch_size: 64,
                local_lr: 0.1,
                selection_fraction: 1.0,
                checkpoint_cadence: 10,
                aggregation: AggRuleCfg::FedAvg,
                trim_k: None,
                seed: 104,
            },
            attack: AttackSection {
                kind: AttackKindCfg::Scaling,
                malicious_fraction: 0.2,
                target_label: 0,
                gamma: 1.0,
                z: 1.0,
                schedule: ScheduleCfg::Every(1),
                trigger: TriggerSection {
                    location: TriggerLocationCfg::UpperRight,
                    size: 2,
                    value: TriggerValueCfg::Uniform(1.0),
                },
                seed: 105,
            },
            forensics: ForensicsSection {
                probe: ProbeKindCfg::TrueNontarget,
                min_cluster_size: 7,
                alpha: 0.2,
                seed: 106,
            },
        }
    }

    /// Replaces every section seed with one derived from `master`.
    ///
    /// Seeds are masked to 63 bits so the config file stays serializable
    /// as plain integers.
    pub fn apply_master_seed(&mut self, master: u64) {
        let derive = |t: u64| seeds::derive(master, &[t]) & (i64::MAX as u64);
        self.dataset.seed = derive(tag::DATASET);
        self.partition.seed = derive(tag::PARTITION_GROUPS);
        self.model.seed = derive(tag::MODEL_INIT);
        self.training.seed = derive(tag::LOCAL_TRAIN);
        self.attack.seed = derive(tag::TRIGGER);
        self.forensics.seed = derive(tag::PROBE);
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.dataset.grid_h, self.dataset.grid_w)
    }

    pub fn model_spec(&self) -> ModelSpec {
        let d = self.dataset.d;
        let c = self.dataset.classes;
        match self.model.kind {
            ModelKindCfg::LinearSoftmax => ModelSpec::linear(d, c, self.model.seed),
            ModelKindCfg::Mlp1 => {
                ModelSpec::mlp1(d, c, self.model.hidden.unwrap_or(0), self.model.seed)
            }
        }
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            epochs: self.training.local_epochs,
            batch_size: self.training.batch_size,
            lr: self.training.local_lr,
        }
    }

    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            n_clients: self.partition.n_clients,
            rho: self.partition.rho,
            seed: self.partition.seed,
        }
    }

    pub fn agg_rule(&self) -> AggRule {
        match self.training.aggregation {
            AggRuleCfg::FedAvg => AggRule::FedAvg,
            AggRuleCfg::TrimmedMean => AggRule::TrimmedMean(self.training.trim_k.unwrap_or(0)),
            AggRuleCfg::Median => AggRule::CoordinateMedian,
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        let a = &self.attack;
        AttackConfig {
            kind: match a.kind {
                AttackKindCfg::Scaling => AttackKind::Scaling,
                AttackKindCfg::Alie => AttackKind::Alie,
                AttackKindCfg::Edge => AttackKind::Edge,
            },
            malicious_fraction: a.malicious_fraction,
            target_label: a.target_label,
            trigger: TriggerSpec {
                location: match a.trigger.location {
                    TriggerLocationCfg::UpperRight => TriggerLocation::UpperRight,
                    TriggerLocationCfg::LowerRight => TriggerLocation::LowerRight,
                    TriggerLocationCfg::UpperLeft => TriggerLocation::UpperLeft,
                    TriggerLocationCfg::LowerLeft => TriggerLocation::LowerLeft,
                    TriggerLocationCfg::Random => TriggerLocation::Random,
                },
                size: a.trigger.size,
                value: match &a.trigger.value {
                    TriggerValueCfg::Uniform(v) => TriggerValue::Uniform(*v),
                    TriggerValueCfg::Pattern(p) => TriggerValue::Pattern(p.clone()),
                },
            },
            gamma: a.gamma,
            z: a.z,
            schedule: match a.schedule {
                ScheduleCfg::Every(e) => AttackSchedule::Every(e),
                ScheduleCfg::Prob(p) => AttackSchedule::Prob(p),
            },
            seed: a.seed,
        }
    }

    /// Number of malicious clients: `floor(fraction * n_clients)`.
    pub fn n_malicious(&self) -> usize {
        (self.attack.malicious_fraction * self.partition.n_clients as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let ds = &self.dataset;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if ds.d != ds.grid_h * ds.grid_w {
            return bad(format!("d = {} but grid is {}x{}", ds.d, ds.grid_h, ds.grid_w));
        }
        if ds.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", ds.classes));
        }
        if !(ds.sigma > 0.0) {
            return bad(format!("sigma {} must be positive", ds.sigma));
        }
        if !(0.0..1.0).contains(&ds.label_noise) {
            return bad(format!("label_noise {} outside [0, 1)", ds.label_noise));
        }
        if ds.path.is_some() != ds.test_path.is_some() {
            return bad("dataset path and test_path must be set together".into());
        }
        if ds.edge_train_path.is_some() != ds.edge_test_path.is_some() {
            return bad("edge_train_path and edge_test_path must be set together".into());
        }
        if ds.path.is_none() && (ds.train_count == 0 || ds.test_count == 0) {
            return bad("generated datasets need train_count and test_count > 0".into());
        }

        let p = &self.partition;
        if p.n_clients < ds.classes {
            return bad(format!("{} clients cannot fill {} label groups", p.n_clients, ds.classes));
        }
        let rho_min = 1.0 / ds.classes as f64;
        if !(p.rho >= rho_min && p.rho <= 1.0) {
            return bad(format!("rho {} outside [{rho_min}, 1]", p.rho));
        }

        match (self.model.kind, self.model.hidden) {
            (ModelKindCfg::Mlp1, None | Some(0)) => {
                return bad("mlp1 needs a positive hidden width".into())
            }
            (ModelKindCfg::LinearSoftmax, Some(_)) => {
                return bad("linear_softmax does not take a hidden width".into())
            }
            _ => {}
        }
        self.model_spec().validate()?;

        let t = &self.training;
        if t.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if !(t.server_lr > 0.0) || !(t.local_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if t.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(t.selection_fraction > 0.0 && t.selection_fraction <= 1.0) {
            return bad(format!("selection_fraction {} outside (0, 1]", t.selection_fraction));
        }
        if t.checkpoint_cadence == 0 {
            return bad("checkpoint_cadence must be >= 1".into());
        }
        match (t.aggregation, t.trim_k) {
            (AggRuleCfg::TrimmedMean, None | Some(0)) => {
                return bad("trimmed_mean needs trim_k >= 1".into())
            }
            (AggRuleCfg::FedAvg | AggRuleCfg::Median, Some(_)) => {
                return bad("trim_k only applies to trimmed_mean".into())
            }
            _ => {}
        }

        self.attack_config().validate(self.grid(), ds.classes)?;
        if self.attack.kind == AttackKindCfg::Edge {
            if self.n_malicious() > 0 && ds.edge_train_count == 0 && ds.edge_train_path.is_none() {
                return bad("edge attack needs edge_train_count or edge_train_path".into());
            }
            if ds.edge_test_count == 0 && ds.edge_test_path.is_none() {
                return bad("edge attack needs edge_test_count or edge_test_path for probes".into());
            }
        }

        let f = &self.forensics;
        if f.min_cluster_size < 2 {
            return bad(format!("min_cluster_size {} must be >= 2", f.min_cluster_size));
        }
        if !(f.alpha > 0.0 && f.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", f.alpha));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::desk_default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::desk_default().to_toml();
        text.push_str("\n[dataset2]\nx = 1\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, Error::Malformed { kind: "config", .. }), "{err:?}");

        let text = ExperimentConfig::desk_default().to_toml().replace("sigma", "sigmaa");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn schedule_and_trigger_value_forms_parse() {
        let mut cfg = ExperimentConfig::desk_default();
        cfg.attack.schedule = ScheduleCfg::Prob(0.5);
        cfg.attack.trigger.value = TriggerValueCfg::Pattern(vec![0.0, 0.5, 0.5, 1.0]);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back.attack.schedule, ScheduleCfg::Prob(0.5));
        assert_eq!(back.attack.trigger.value, TriggerValueCfg::Pattern(vec![0.0, 0.5, 0.5, 1.0]));
    }

    #[test]
    fn master_seed_rewrites_every_section_seed() {
        let mut cfg = ExperimentConfig::desk_default();
        let before = cfg.clone();
        cfg.apply_master_seed(42);
        let seeds = [
            cfg.dataset.seed,
            cfg.partition.seed,
            cfg.model.seed,
            cfg.training.seed,
            cfg.attack.seed,
            cfg.forensics.seed,
        ];
        for (i, s) in seeds.iter().enumerate() {
            for (j, t) in seeds.iter().enumerate() {
                if i != j {
                    assert_ne!(s, t, "seeds {i} and {j} collide");
                }
            }
        }
        assert_ne!(cfg, before);
        let mut again = before.clone();
        again.apply_master_seed(42);
        assert_eq!(cfg, again);
    }

    #[test]
    fn validation_catches_cross_field_mistakes() {
        let mut cfg = ExperimentConfig::desk_default();
        cfg.dataset.d = 65;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::desk_default();
        cfg.model.kind = ModelKindCfg::Mlp1;
        assert!(cfg.validate().is_err(), "mlp1 without hidden width");
        cfg.model.hidden = Some(16);
        cfg.validate().unwrap();

        let mut cfg = ExperimentConfig::desk_default();
        cfg.training.aggregation = AggRuleCfg::TrimmedMean;
        assert!(cfg.validate().is_err(), "trimmed_mean without trim_k");
        cfg.training.trim_k = Some(2);
        cfg.validate().unwrap();

        let mut cfg = ExperimentConfig::desk_default();
        cfg.attack.kind = AttackKindCfg::Edge;
        assert!(cfg.validate().is_err(), "edge attack without edge data");
        cfg.dataset.edge_train_count = 100;
        cfg.dataset.edge_test_count = 50;
        cfg.validate().unwrap();

        let mut cfg = ExperimentConfig::desk_default();
        cfg.partition.rho = 0.05;
        assert!(cfg.validate().is_err(), "rho below 1/C");
    }

    #[test]
    fn malicious_count_floors() {
        let mut cfg = ExperimentConfig::desk_default();
        assert_eq!(cfg.n_malicious(), 20);
        cfg.attack.malicious_fraction = 0.0;
        assert_eq!(cfg.n_malicious(), 0);
        cfg.attack.malicious_fraction = 0.249;
        assert_eq!(cfg.n_malicious(), 24);
    }
}
