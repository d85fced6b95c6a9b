//! Declarative run configuration. Unknown keys are rejected; the defaults
//! reproduce the reference PPO hyperparameters exactly.

use anyhow::{bail, Context, Result};
use nestrl::agent::PpoHyperparams;
use nestrl::env::{ActionCatalogue, ActionKind, EnvConfig};
use nestrl::featurize::FeatureLayout;
use nestrl::neural::{ModelConfig, ReadoutKind};
use nestrl::runtime::{
    Backend, CostModelParams, MeasuredBackend, MeasurementConfig, SyntheticBackend,
};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendChoice,
    pub paths: Paths,
    pub ppo: PpoSection,
    pub env: EnvSection,
    pub model: ModelSection,
    pub catalogue: CatalogueSection,
    pub measure: MeasureSection,
    pub train: TrainSection,
    pub pretrain: PretrainSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Synthetic,
    Measured,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub programs_dir: PathBuf,
    pub memo_file: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub metrics_file: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            programs_dir: "programs".into(),
            memo_file: "memo.jsonl".into(),
            checkpoint_dir: "checkpoints".into(),
            metrics_file: "metrics.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSection {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_start: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub total_env_steps: usize,
}

impl Default for PpoSection {
    fn default() -> Self {
        let d = PpoHyperparams::default();
        PpoSection {
            clip: d.clip,
            gamma: d.gamma,
            lambda: d.lambda,
            value_coef: d.value_coef,
            entropy_start: d.entropy_start,
            batch_size: d.batch_size,
            epochs: d.epochs,
            minibatch: d.minibatch,
            lr: d.lr,
            total_env_steps: d.total_env_steps,
        }
    }
}

impl PpoSection {
    pub fn to_hyperparams(&self) -> PpoHyperparams {
        PpoHyperparams {
            clip: self.clip,
            gamma: self.gamma,
            lambda: self.lambda,
            value_coef: self.value_coef,
            entropy_start: self.entropy_start,
            batch_size: self.batch_size,
            epochs: self.epochs,
            minibatch: self.minibatch,
            lr: self.lr,
            total_env_steps: self.total_env_steps,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub step_cap: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection { step_cap: 64 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub heads: usize,
    pub readout: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: 128,
            heads: 4,
            readout: "mean_max".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogueSection {
    pub tile_sizes: Vec<i64>,
    pub unroll_factors: Vec<i64>,
}

impl Default for CatalogueSection {
    fn default() -> Self {
        CatalogueSection {
            tile_sizes: vec![32, 64, 128],
            unroll_factors: vec![2, 4, 8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSection {
    /// Repeats for final evaluation (minimum is reported).
    pub repeats: u32,
    /// Repeats while training (cheaper, noisier).
    pub training_repeats: u32,
    pub warmup: u32,
    /// 0 = hardware parallelism.
    pub workers: usize,
}

impl Default for MeasureSection {
    fn default() -> Self {
        MeasureSection {
            repeats: 30,
            training_repeats: 3,
            warmup: 1,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            iterations: 100,
            checkpoint_every: 25,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub minibatch: usize,
    pub normalize_log: bool,
    pub samples: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: 1500,
            lr: 1e-4,
            minibatch: 32,
            normalize_log: true,
            samples: 2000,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let cfg: RunConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ppo.clip) {
            bail!("ppo.clip must be in (0,1)");
        }
        if !(0.0..1.0).contains(&self.ppo.gamma) || !(0.0..1.0).contains(&self.ppo.lambda) {
            bail!("ppo.gamma and ppo.lambda must be in (0,1)");
        }
        if self.ppo.batch_size == 0 || self.ppo.minibatch == 0 {
            bail!("ppo batch sizes must be positive");
        }
        if self.measure.repeats == 0 || self.measure.training_repeats == 0 {
            bail!("measure repeats must be at least 1");
        }
        if self.catalogue.tile_sizes.is_empty() || self.catalogue.unroll_factors.is_empty() {
            bail!("catalogue overrides must be non-empty");
        }
        Ok(())
    }

    /// The action catalogue (the default settings yield exactly 56 actions).
    pub fn catalogue(&self) -> ActionCatalogue {
        if self.catalogue.tile_sizes == CatalogueSection::default().tile_sizes
            && self.catalogue.unroll_factors == CatalogueSection::default().unroll_factors
        {
            return ActionCatalogue::default_56();
        }
        let mut actions = Vec::new();
        for i in 0..4 {
            actions.push(ActionKind::Interchange { i });
        }
        for i in 0..5 {
            actions.push(ActionKind::Reversal { i });
        }
        for i in 0..3 {
            actions.push(ActionKind::Skewing { i });
        }
        for i in 0..2 {
            actions.push(ActionKind::Parallelization { i });
        }
        for i in 0..4 {
            for &tx in &self.catalogue.tile_sizes {
                for &ty in &self.catalogue.tile_sizes {
                    actions.push(ActionKind::Tiling { i, tx, ty });
                }
            }
        }
        for &factor in &self.catalogue.unroll_factors {
            actions.push(ActionKind::Unrolling { factor });
        }
        actions.push(ActionKind::Next);
        ActionCatalogue { actions }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            catalogue: self.catalogue(),
            layout: FeatureLayout::default(),
            step_cap: self.env.step_cap,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let readout = match self.model.readout.as_str() {
            "mean_max" => ReadoutKind::MeanMax,
            "sum_max" => ReadoutKind::SumMax,
            other => bail!("model.readout must be mean_max or sum_max, got `{other}`"),
        };
        Ok(ModelConfig {
            in_dim: FeatureLayout::default().width,
            hidden: self.model.hidden,
            heads: self.model.heads,
            actions: self.catalogue().len(),
            readout,
        })
    }

    fn measurement(&self, repeats: u32) -> MeasurementConfig {
        MeasurementConfig {
            repeats,
            warmup: self.measure.warmup,
            workers: if self.measure.workers == 0 {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            } else {
                self.measure.workers
            },
        }
    }

    /// Backend used during training and interactive optimization.
    pub fn training_backend(&self) -> Arc<dyn Backend> {
        match self.backend {
            BackendChoice::Synthetic => Arc::new(SyntheticBackend {
                params: CostModelParams::default(),
            }),
            BackendChoice::Measured => Arc::new(MeasuredBackend {
                cfg: self.measurement(self.measure.training_repeats),
            }),
        }
    }

    /// Backend used for final evaluation (full repeat count).
    pub fn evaluation_backend(&self) -> Arc<dyn Backend> {
        match self.backend {
            BackendChoice::Synthetic => Arc::new(SyntheticBackend {
                params: CostModelParams::default(),
            }),
            BackendChoice::Measured => Arc::new(MeasuredBackend {
                cfg: self.measurement(self.measure.repeats),
            }),
        }
    }
}
