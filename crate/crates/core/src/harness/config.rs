use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active::{MAX_QUERIES, MIN_MC_SAMPLES};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelKind};
use crate::policy::{PolicySettings, ScalingVariant};
use crate::worlds::{LabelingMode, NoiseScope, WorldKind, WorldParams};

use super::train::TrainSettings;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSettings {
    pub n_records: usize,
    /// Context length `N`.
    pub n: usize,
    /// Pool of candidate context pairs per target, `K`.
    pub k: usize,
    /// Augmented copies per target, `M`.
    pub m: usize,
    pub labeling_mode: Option<LabelingMode>,
    pub noise_rate: f64,
    pub noise_scope: NoiseScope,
    pub heldout_fraction: f64,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            n_records: 4000,
            n: 8,
            k: 30,
            m: 4,
            labeling_mode: None,
            noise_rate: 0.0,
            noise_scope: NoiseScope::ContextOnly,
            heldout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub episodes: usize,
    /// Length of each fresh test context; `None` uses the training `N`.
    pub ctx_len: Option<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            episodes: 100,
            ctx_len: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveSettings {
    /// Query batch size `Q`.
    pub q: usize,
    /// Sampled candidate batches `S`.
    pub s: usize,
    pub pool_size: usize,
    pub mc_samples: usize,
}

impl Default for ActiveSettings {
    fn default() -> Self {
        ActiveSettings {
            q: 2,
            s: 200,
            pool_size: 100,
            mc_samples: 512,
        }
    }
}

/// Everything one pipeline run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldParams,
    pub model: ModelKind,
    pub hidden: usize,
    pub latent_dim: usize,
    pub data: DataSettings,
    pub train: TrainSettings,
    pub policy: PolicySettings,
    pub eval: EvalSettings,
    pub active: ActiveSettings,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldParams::preset("maze2").expect("known preset"),
            model: ModelKind::Vpl,
            hidden: 64,
            latent_dim: 8,
            data: DataSettings::default(),
            train: TrainSettings::default(),
            policy: PolicySettings::default(),
            eval: EvalSettings::default(),
            active: ActiveSettings::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for a named world preset: 20,000 steps and batch 256 for
    /// control worlds; 5,000 steps, batch 32 and KL weight 1e-4 for the
    /// pets-like world; KL weight 0.01 for the ranking worlds.
    pub fn for_world(name: &str) -> Result<Self> {
        let world = WorldParams::preset(name)?;
        let mut cfg = ExperimentConfig {
            world,
            ..Self::default()
        };
        match cfg.world.kind() {
            WorldKind::Maze => cfg.data.n_records = 5000,
            WorldKind::PetsLike => {
                cfg.train.steps = 5000;
                cfg.train.batch_size = 32;
                cfg.train.beta_max = 1e-4;
                cfg.data.n = 4;
            }
            // at weight 1 the posterior collapses onto the prior
            WorldKind::Rearrange => cfg.train.beta_max = 0.01,
            _ => {}
        }
        Ok(cfg)
    }

    pub fn with_model(mut self, model: ModelKind) -> Self {
        self.model = model;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n == 0 || d.n > d.k {
            return Err(Error::config(format!("need 1 <= N <= K, got N={} K={}", d.n, d.k)));
        }
        if d.m == 0 {
            return Err(Error::config("M must be at least 1"));
        }
        if d.n_records == 0 {
            return Err(Error::config("n_records must be positive"));
        }
        if !(0.0..=1.0).contains(&d.noise_rate) {
            return Err(Error::config(format!("noise_rate {} outside [0, 1]", d.noise_rate)));
        }
        if !(0.0..1.0).contains(&d.heldout_fraction) {
            return Err(Error::config(format!("heldout_fraction {} outside [0, 1)", d.heldout_fraction)));
        }
        if self.hidden == 0 || self.latent_dim == 0 {
            return Err(Error::config("hidden and latent_dim must be positive"));
        }
        if self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) || self.train.beta_max < 0.0 {
            return Err(Error::config("invalid training settings"));
        }
        let p = &self.policy;
        if p.zbank == 0 || p.comparison_size == 0 || !(p.gamma > 0.0 && p.gamma < 1.0) || !(p.tol > 0.0) {
            return Err(Error::config("invalid policy settings"));
        }
        if self.eval.episodes == 0 {
            return Err(Error::config("need at least one evaluation episode"));
        }
        let a = &self.active;
        if a.q == 0 || a.q > MAX_QUERIES {
            return Err(Error::config(format!("Q must lie in [1, {MAX_QUERIES}], got {}", a.q)));
        }
        if a.s == 0 || a.pool_size < a.q || a.mc_samples < MIN_MC_SAMPLES {
            return Err(Error::config("invalid active query settings"));
        }
        if let WorldParams::DidacticGaussians { means, stddevs } = &self.world {
            if means.is_empty() || means.len() != stddevs.len() || stddevs.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::config("didactic world needs matching means and positive stddevs"));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, feature_dim: usize) -> ModelConfig {
        ModelConfig::new(self.model, feature_dim)
            .with_hidden(self.hidden)
            .with_latent_dim(self.latent_dim)
    }

    pub fn scaling(&self) -> ScalingVariant {
        self.policy.scaling
    }

    pub fn test_ctx_len(&self) -> usize {
        self.eval.ctx_len.unwrap_or(self.data.n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}
