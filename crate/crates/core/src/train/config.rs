use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adaptation::Strategy;
use crate::error::{Error, Result};
use crate::nets::NetworkSpec;
use crate::objectives::{Objective, ViFit};
use crate::tasks::toy::ToyModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    #[default]
    Toy,
    Cluster,
    Glyph,
    Views,
}

impl Dataset {
    pub fn parse(name: &str) -> Result<Dataset> {
        serde_json::from_value(Value::String(name.to_string()))
            .map_err(|_| Error::Config(format!("unknown dataset `{name}` (toy, cluster, glyph, views)")))
    }
}

/// Cluster-task generator settings; way, shot and target counts come from
/// the top-level config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterParams {
    pub input_dim: usize,
    pub cluster_std: f64,
    pub mean_scale: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            input_dim: 4,
            cluster_std: 0.3,
            mean_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlyphParams {
    pub jitter: i64,
    pub noise: f64,
}

impl Default for GlyphParams {
    fn default() -> Self {
        Self { jitter: 1, noise: 0.02 }
    }
}

/// Everything a training run needs. JSON files are merged field by field
/// over the preset of their `dataset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub objective: Objective,
    pub dataset: Dataset,
    pub way: usize,
    pub shot: usize,
    pub l_train: usize,
    pub l_test: usize,
    pub tasks_per_batch: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Decay the learning rate linearly to zero over the run.
    pub lr_decay: bool,
    pub targets_per_class: usize,
    pub val_episodes: usize,
    pub log_every: usize,
    /// Record elapsed milliseconds in the metrics; off keeps files
    /// byte-identical across runs.
    pub wall_clock: bool,
    /// Prior variance for the variational objectives.
    pub prior_variance: f64,
    /// Inner step size for one-step-gradient adaptation.
    pub eta: f64,
    /// Number of fixed training tasks for the toy dataset.
    pub toy_tasks: usize,
    pub toy: ToyModelSpec,
    pub cluster: ClusterParams,
    pub glyph: GlyphParams,
    /// Per-task fit used by the non-amortized objective and its evaluation.
    pub vi_fit: ViFit,
    /// Overrides the dataset's default network.
    pub network: Option<NetworkSpec>,
    /// Continue from this checkpoint's parameters and optimizer state.
    pub resume: Option<PathBuf>,
}

impl TrainConfig {
    pub fn preset(dataset: Dataset) -> TrainConfig {
        let base = TrainConfig {
            strategy: Strategy::Versa,
            objective: Objective::Mlpip,
            dataset,
            way: 5,
            shot: 5,
            l_train: 10,
            l_test: 10,
            tasks_per_batch: 8,
            iterations: 10_000,
            learning_rate: 1e-3,
            seed: 0,
            output_dir: PathBuf::from("runs").join(format!("{dataset:?}").to_lowercase()),
            lr_decay: false,
            targets_per_class: 15,
            val_episodes: 100,
            log_every: 50,
            wall_clock: false,
            prior_variance: 1.0,
            eta: 0.5,
            toy_tasks: 250,
            toy: ToyModelSpec::default(),
            cluster: ClusterParams::default(),
            glyph: GlyphParams::default(),
            vi_fit: ViFit::default(),
            network: None,
            resume: None,
        };
        match dataset {
            Dataset::Toy => TrainConfig {
                way: 0,
                l_train: 100,
                tasks_per_batch: 16,
                iterations: 5_000,
                learning_rate: 1e-2,
                lr_decay: true,
                ..base
            },
            Dataset::Cluster | Dataset::Glyph => base,
            Dataset::Views => TrainConfig {
                way: 0,
                shot: 1,
                l_train: 1,
                tasks_per_batch: 1,
                ..base
            },
        }
    }

    /// Parses JSON text and merges it over the preset named by its
    /// `dataset` key (toy when absent).
    pub fn from_json(text: &str) -> Result<TrainConfig> {
        let overrides: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let Value::Object(_) = overrides else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let dataset = match overrides.get("dataset") {
            Some(Value::String(s)) => Dataset::parse(s)?,
            Some(_) => return Err(Error::Config("`dataset` must be a string".into())),
            None => Dataset::Toy,
        };
        let mut merged = serde_json::to_value(TrainConfig::preset(dataset))?;
        merge(&mut merged, overrides);
        let cfg: TrainConfig = serde_json::from_value(merged).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let classification = matches!(self.dataset, Dataset::Cluster | Dataset::Glyph);
        if classification && self.way == 0 {
            return Err(Error::Config("way must be positive".into()));
        }
        if self.shot == 0 || self.l_train == 0 || self.l_test == 0 || self.tasks_per_batch == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "shot, sample counts, batch size and log interval must be positive".into(),
            ));
        }
        if classification && self.targets_per_class == 0 {
            return Err(Error::Config("targets_per_class must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be a non-negative number".into()));
        }
        if !(self.prior_variance > 0.0) {
            return Err(Error::Config("prior_variance must be positive".into()));
        }
        if self.dataset == Dataset::Toy && self.toy_tasks == 0 {
            return Err(Error::Config("toy_tasks must be positive".into()));
        }
        if self.dataset == Dataset::Views && self.shot >= crate::tasks::views::VIEW_COUNT {
            return Err(Error::Config("view shot must leave at least one target view".into()));
        }
        if !classification && self.strategy != Strategy::Versa && self.strategy != Strategy::AmortizedMap {
            return Err(Error::Config(format!(
                "strategy {:?} needs a classification dataset",
                self.strategy
            )));
        }
        if let Some(n) = &self.network {
            n.validate()?;
        }
        self.toy.validate()
    }
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_merge_over_preset() {
        let c = TrainConfig::from_json(r#"{"dataset": "glyph", "iterations": 7, "glyph": {"noise": 0.0}}"#).unwrap();
        assert_eq!(c.iterations, 7);
        assert_eq!(c.glyph.noise, 0.0);
        assert_eq!(c.glyph.jitter, 1);
        assert_eq!(c.way, 5);
        let t = TrainConfig::from_json("{}").unwrap();
        assert_eq!(t.dataset, Dataset::Toy);
        assert_eq!(t.tasks_per_batch, 16);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            r#"{"itterations": 5}"#,
            r#"{"dataset": "imagenet"}"#,
            r#"{"strategy": "maml"}"#,
            r#"{"dataset": "cluster", "way": 0}"#,
            r#"{"dataset": "views", "strategy": "prototypical"}"#,
            "[1]",
        ] {
            assert!(matches!(TrainConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn preset_roundtrips() {
        let c = TrainConfig::preset(Dataset::Cluster);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(TrainConfig::from_json(&s).unwrap(), c);
    }
}
