use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::corpus::SplitRatios;
use crate::descriptor::{ImageMode, MllmClientConfig, DEFAULT_BEHAVIOR_CAP};
use crate::graph::GraphConfig;
use crate::model::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MllmProvider {
    Http,
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderChoice {
    Stub,
    Precomputed,
}

/// Reference for every recognised config key, shown by the CLI's `--help`.
pub const CONFIG_KEYS: &str = "\
Config keys (TOML, all optional except where noted):
  dataset = \"Baby\"                 dataset name substituted into the item prompt
  interactions = \"raw/ratings.tsv\"  user<TAB>item[<TAB>timestamp] lines (required)
  item_metadata = \"raw/items.jsonl\" {item_key, text_meta, image_ref} records (required)
  workdir = \"work\"                  stage artifacts and manifest.json
  seed = 2024                       split, stub providers and training
  kcore = 5
  train_ratio = 0.8, valid_ratio = 0.1, test_ratio = 0.1
  mllm_provider = \"http\" | \"stub\"
  mllm_endpoint, mllm_model, mllm_timeout_secs, mllm_max_retries,
  mllm_temperature = 0.0, mllm_image_mode = \"inline\" | \"reference\",
  mllm_retry_backoff_ms, mllm_concurrency = 4
  behavior_cap = 50                 most recent train items per preference prompt
  encoder = \"stub\" | \"precomputed\", encoder_dim = 32
  encoder_store, encoder_keys       vector store and text-hash key file for precomputed
  k_semantic = 10, alpha = 0.5, k_cooccur = 10, layers = 1, symmetrize = false
  alpha_grid = [0.4, 0.5, 0.6, 0.7], k_cooccur_grid = [5, 10, 15, 20]
  batch_size = 2048, learning_rate = 0.001, embed_dim = 64, hidden_dim = 256,
  max_epochs = 1000, patience = 20, leaky_slope = 0.01, weight_decay = 0.0
  eval_ks = [10, 20]
Relative paths are resolved against the config file's directory.
Environment: DESCREC_MLLM_ENDPOINT and DESCREC_MLLM_API_KEY override the endpoint and credential.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: String,
    pub interactions: PathBuf,
    pub item_metadata: PathBuf,
    pub workdir: PathBuf,
    pub seed: u64,
    pub kcore: usize,
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,

    pub mllm_provider: MllmProvider,
    pub mllm_endpoint: String,
    pub mllm_model: String,
    pub mllm_timeout_secs: f64,
    pub mllm_max_retries: usize,
    pub mllm_temperature: f64,
    pub mllm_image_mode: ImageMode,
    pub mllm_retry_backoff_ms: u64,
    pub mllm_concurrency: usize,
    pub behavior_cap: usize,

    pub encoder: EncoderChoice,
    pub encoder_dim: usize,
    pub encoder_store: Option<PathBuf>,
    pub encoder_keys: Option<PathBuf>,

    pub k_semantic: usize,
    pub alpha: f64,
    pub k_cooccur: usize,
    pub layers: usize,
    pub symmetrize: bool,
    pub alpha_grid: Vec<f64>,
    pub k_cooccur_grid: Vec<usize>,

    pub batch_size: usize,
    pub learning_rate: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub leaky_slope: f64,
    pub weight_decay: f64,

    pub eval_ks: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mllm = MllmClientConfig::default();
        let graph = GraphConfig::default();
        let train = TrainConfig::default();
        let ratios = SplitRatios::default();
        PipelineConfig {
            dataset: "Baby".into(),
            interactions: PathBuf::new(),
            item_metadata: PathBuf::new(),
            workdir: PathBuf::from("work"),
            seed: train.seed,
            kcore: 5,
            train_ratio: ratios.train,
            valid_ratio: ratios.valid,
            test_ratio: ratios.test,
            mllm_provider: MllmProvider::Http,
            mllm_endpoint: mllm.endpoint,
            mllm_model: mllm.model_name,
            mllm_timeout_secs: mllm.timeout_secs,
            mllm_max_retries: mllm.max_retries,
            mllm_temperature: mllm.temperature,
            mllm_image_mode: mllm.image_mode,
            mllm_retry_backoff_ms: mllm.retry_backoff_ms,
            mllm_concurrency: 4,
            behavior_cap: DEFAULT_BEHAVIOR_CAP,
            encoder: EncoderChoice::Stub,
            encoder_dim: crate::embedder::StubEncoder::DEFAULT_DIM,
            encoder_store: None,
            encoder_keys: None,
            k_semantic: graph.k_semantic,
            alpha: graph.alpha,
            k_cooccur: graph.k_cooccur,
            layers: graph.layers,
            symmetrize: graph.symmetrize,
            alpha_grid: vec![0.4, 0.5, 0.6, 0.7],
            k_cooccur_grid: vec![5, 10, 15, 20],
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            embed_dim: train.d,
            hidden_dim: train.d1,
            max_epochs: train.max_epochs,
            patience: train.patience,
            leaky_slope: train.leaky_slope,
            weight_decay: train.weight_decay,
            eval_ks: vec![10, 20],
        }
    }
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| bad(e.to_string()))
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.interactions);
        fix(&mut self.item_metadata);
        fix(&mut self.workdir);
        if let Some(p) = self.encoder_store.as_mut() {
            fix(p);
        }
        if let Some(p) = self.encoder_keys.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.trim().is_empty() {
            return Err(bad("dataset must not be empty"));
        }
        if self.interactions.as_os_str().is_empty() || self.item_metadata.as_os_str().is_empty() {
            return Err(bad("interactions and item_metadata are required"));
        }
        if self.kcore == 0 || self.behavior_cap == 0 || self.mllm_concurrency == 0 || self.encoder_dim == 0 {
            return Err(bad("kcore, behavior_cap, mllm_concurrency and encoder_dim must be >= 1"));
        }
        self.split_ratios().validate().map_err(|e| bad(e.to_string()))?;
        self.mllm_config().validate().map_err(|e| bad(e.to_string()))?;
        self.graph_config().validate().map_err(|e| bad(e.to_string()))?;
        self.train_config().validate().map_err(|e| bad(e.to_string()))?;
        if self.encoder == EncoderChoice::Precomputed && (self.encoder_store.is_none() || self.encoder_keys.is_none()) {
            return Err(bad("encoder = \"precomputed\" needs encoder_store and encoder_keys"));
        }
        if self.alpha_grid.is_empty() || self.k_cooccur_grid.is_empty() {
            return Err(bad("grids must not be empty"));
        }
        for &alpha in &self.alpha_grid {
            for &k_cooccur in &self.k_cooccur_grid {
                self.graph_config_at(alpha, k_cooccur)
                    .validate()
                    .map_err(|e| bad(format!("grid point ({alpha}, {k_cooccur}): {e}")))?;
            }
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(bad("eval_ks must be a non-empty list of positive cut-offs"));
        }
        Ok(())
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            valid: self.valid_ratio,
            test: self.test_ratio,
        }
    }

    /// Client settings; the endpoint and key still take environment overrides.
    pub fn mllm_config(&self) -> MllmClientConfig {
        MllmClientConfig {
            endpoint: self.mllm_endpoint.clone(),
            model_name: self.mllm_model.clone(),
            timeout_secs: self.mllm_timeout_secs,
            max_retries: self.mllm_max_retries,
            temperature: self.mllm_temperature,
            image_mode: self.mllm_image_mode,
            retry_backoff_ms: self.mllm_retry_backoff_ms,
            api_key: None,
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        self.graph_config_at(self.alpha, self.k_cooccur)
    }

    pub fn graph_config_at(&self, alpha: f64, k_cooccur: usize) -> GraphConfig {
        GraphConfig {
            k_semantic: self.k_semantic,
            alpha,
            k_cooccur,
            layers: self.layers,
            symmetrize: self.symmetrize,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            d: self.embed_dim,
            d1: self.hidden_dim,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            leaky_slope: self.leaky_slope,
            weight_decay: self.weight_decay,
        }
    }
}
