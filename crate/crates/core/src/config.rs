//! Experiment configuration: one TOML document, every key defaulted,
//! unknown keys rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{IdealRanges, N_FEATURES, N_TARGETS};
use crate::fedsim::FedConfig;
use crate::mlp::{Activation, AdamConfig, Architecture, LossKind, TrainConfig};
use crate::recommender::RecommenderConfig;
use crate::sensorsim::SensorConfig;
use crate::synthgen::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub ideal_sleep_hrs: [f64; 2],
    pub ideal_distance_km: [f64; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        let ranges = IdealRanges::default();
        Self {
            hidden: arch.hidden,
            activation: arch.activation,
            ideal_sleep_hrs: ranges.sleep_hrs,
            ideal_distance_km: ranges.distance_km,
        }
    }
}

impl ModelConfig {
    pub fn ideal_ranges(&self) -> IdealRanges {
        IdealRanges {
            sleep_hrs: self.ideal_sleep_hrs,
            distance_km: self.ideal_distance_km,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub pretrain_epochs: usize,
    /// Total local epochs per client across all rounds.
    pub finetune_epochs: usize,
    pub early_stopping: bool,
    pub patience: usize,
    pub min_delta: f64,
    pub validation_fraction: f64,
    pub loss: LossKind,
    pub pretrain_users: usize,
    pub pretrain_days: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            pretrain_epochs: 200,
            finetune_epochs: 10,
            early_stopping: true,
            patience: 20,
            min_delta: 1e-4,
            validation_fraction: 0.2,
            loss: LossKind::Mae,
            pretrain_users: 1000,
            pretrain_days: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// One accuracy over both outputs and all samples.
    #[default]
    Pooled,
    /// Pooled accuracy plus one accuracy per output.
    PerOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub zero_band: f64,
    pub accuracy: AccuracyMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            zero_band: 0.0,
            accuracy: AccuracyMode::Pooled,
        }
    }
}

impl MetricsConfig {
    pub fn per_output(&self) -> bool {
        self.accuracy == AccuracyMode::PerOutput
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub sensors: SensorConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub federated: FedConfig,
    pub recommender: RecommenderConfig,
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input: N_FEATURES,
            hidden: self.model.hidden.clone(),
            output: N_TARGETS,
            activation: self.model.activation,
            split_index: self.federated.split_index,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.training.learning_rate,
            beta1: self.training.beta1,
            beta2: self.training.beta2,
            eps: self.training.epsilon,
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.pretrain_epochs,
            batch_size: t.batch_size,
            adam: self.adam(),
            loss: t.loss,
            patience: t.early_stopping.then_some(t.patience),
            min_delta: t.min_delta,
            zero_band: self.metrics.zero_band,
            seed: self.seed,
        }
    }

    /// Base settings for one client's local round; the federated loop fills
    /// in the epoch count and a per-(client, round) seed.
    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.federated.local_epochs,
            patience: None,
            ..self.pretrain_config()
        }
    }

    /// Hex SHA-256 of the canonical JSON form. Identifies the exact settings
    /// a report was produced with.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.sensors.validate()?;
        self.model.ideal_ranges().validate("model")?;
        self.architecture().validate()?;
        self.federated.validate()?;
        self.recommender.validate()?;

        let t = &self.training;
        let key = |k: &str| format!("training.{k}");
        if t.batch_size == 0 {
            return Err(Error::config(key("batch_size"), "must be >= 1"));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(Error::config(key("learning_rate"), "must be > 0"));
        }
        for (k, b) in [("beta1", t.beta1), ("beta2", t.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key(k), "must lie in [0, 1)"));
            }
        }
        if !(t.epsilon.is_finite() && t.epsilon > 0.0) {
            return Err(Error::config(key("epsilon"), "must be > 0"));
        }
        if t.pretrain_epochs == 0 {
            return Err(Error::config(key("pretrain_epochs"), "must be >= 1"));
        }
        if !(t.min_delta.is_finite() && t.min_delta >= 0.0) {
            return Err(Error::config(key("min_delta"), "must be >= 0"));
        }
        if !(t.validation_fraction > 0.0 && t.validation_fraction < 1.0) {
            return Err(Error::config(key("validation_fraction"), "must lie in (0, 1)"));
        }
        if t.pretrain_users == 0 {
            return Err(Error::config(key("pretrain_users"), "must be >= 1"));
        }
        if t.pretrain_days == 0 {
            return Err(Error::config(key("pretrain_days"), "must be >= 1"));
        }
        // rounds = 0 is the "no fine-tuning" baseline and skips the check.
        let f = &self.federated;
        if f.rounds > 0 && f.rounds * f.local_epochs != t.finetune_epochs {
            return Err(Error::config(
                "federated.rounds",
                format!(
                    "rounds ({}) x local_epochs ({}) must equal training.finetune_epochs ({})",
                    f.rounds, f.local_epochs, t.finetune_epochs
                ),
            ));
        }
        if !(self.metrics.zero_band.is_finite() && self.metrics.zero_band >= 0.0) {
            return Err(Error::config("metrics.zero_band", "must be >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_hyperparameters() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.training.batch_size, 32);
        assert_eq!(c.training.learning_rate, 1e-3);
        assert_eq!(c.training.pretrain_epochs, 200);
        assert_eq!(c.model.hidden, vec![64, 32, 16, 8, 4]);
        assert_eq!(c.model.ideal_sleep_hrs, [7.0, 9.0]);
        assert_eq!(c.model.ideal_distance_km, [5.0, 8.0]);
        let r = &c.recommender;
        assert_eq!((r.w_sleep, r.w_distance, r.w_bmi, r.w_meal), (1.0, 0.8, 1.0, 1.0));
        assert_eq!((r.r_high, r.theta, r.top_n), (3.0, 0.5, 2));
        assert_eq!(c.training.finetune_epochs, 10);
        assert_eq!(c.federated.rounds * c.federated.local_epochs, 10);
        assert_eq!(c.federated.n_clients, 10);
        assert_eq!(c.sensors.step_threshold, 1.8);
        assert_eq!(c.sensors.stride_m, 0.5);
        assert_eq!(
            (c.sensors.sleep_window_start_hour, c.sensors.sleep_window_end_hour),
            (22, 10)
        );
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(
            ExperimentConfig::from_toml_str("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig {
            seed: 42,
            ..Default::default()
        };
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml_str("[training]\nbatchsize = 16\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse(_)), "{err}");
        assert!(ExperimentConfig::from_toml_str("[optimizer]\n").is_err());
    }

    #[test]
    fn validation_names_the_key() {
        let cases = [
            ("[training]\nbatch_size = 0\n", "training.batch_size"),
            ("[federated]\nrounds = 3\n", "federated.rounds"),
            ("[federated]\nsplit_index = 6\n", "federated.split_index"),
            ("[model]\nideal_sleep_hrs = [9.0, 7.0]\n", "model.ideal_sleep_hrs"),
            ("[metrics]\nzero_band = -1.0\n", "metrics.zero_band"),
            ("[sensors]\nstride_m = 0.0\n", "sensors.stride_m"),
        ];
        for (text, key) in cases {
            match ExperimentConfig::from_toml_str(text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn zero_rounds_is_allowed() {
        let c = ExperimentConfig::from_toml_str("[federated]\nrounds = 0\n").unwrap();
        assert_eq!(c.federated.rounds, 0);
    }

    #[test]
    fn digest_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
