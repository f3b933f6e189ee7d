//! The run configuration: one TOML file (plus flag overrides) that pins every
//! knob of every stage. Reports embed the SHA-256 hash of the effective
//! config, so identical hashes imply byte-identical outputs.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hallucitrace_core::causal::TraceSettings;
use hallucitrace_core::dataset::{CorpusConfig, EvalSettings, WorldConfig};
use hallucitrace_core::manifestation::RobustnessRule;
use hallucitrace_core::mitigate::MhmConfig;
use hallucitrace_core::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    #[serde(flatten)]
    pub settings: EvalSettings,
    /// a fact is "high-frequency" when its corpus count reaches this
    pub hf_min_count: usize,
    /// optional remote alias endpoint (URL template with {subject} and
    /// {relation} placeholders)
    #[serde(default)]
    pub alias_endpoint: Option<String>,
    /// remote lookup timeout in milliseconds
    #[serde(default = "default_alias_timeout_ms")]
    pub alias_timeout_ms: u64,
}

fn default_alias_timeout_ms() -> u64 {
    3000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracingSection {
    #[serde(flatten)]
    pub settings: TraceSettings,
    /// cap on traced queries per run
    pub max_queries: usize,
    /// component kinds entering the early/late contrast
    #[serde(default = "default_relative_kinds")]
    pub relative_kinds: Vec<String>,
}

fn default_relative_kinds() -> Vec<String> {
    vec!["attn_out".to_string(), "mlp_out".to_string()]
}

impl TracingSection {
    pub fn resolved_kinds(&self) -> Result<Vec<hallucitrace_core::intervene::SiteKind>> {
        self.relative_kinds
            .iter()
            .map(|s| {
                hallucitrace_core::intervene::SiteKind::parse(s)
                    .with_context(|| format!("unknown component kind {s:?}"))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensSection {
    /// competitor set size for the attention contrast
    pub top_attributes: usize,
    /// rank threshold as a fraction of the vocabulary
    pub rank_threshold_frac: f64,
    /// cap on factual queries pulled into group profiles and trajectories
    pub max_factual_queries: usize,
    /// cap on queries for the rank report
    pub max_rank_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSection {
    /// unfiltered noise pool size per query
    pub pool_size: usize,
    pub robustness_rule: RobustnessRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigateSection {
    #[serde(flatten)]
    pub mhm: MhmConfig,
    /// cap on repair training examples
    pub max_train_examples: usize,
    pub icl_shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub world: WorldConfig,
    pub corpus: CorpusConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub tracing: TracingSection,
    pub lens: LensSection,
    pub manifest: ManifestSection,
    pub mitigate: MitigateSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.normalize();
        Ok(cfg)
    }

    /// All sub-seeds follow the global seed.
    pub fn normalize(&mut self) {
        self.world.seed = self.seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialized form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    pub fn model_config(
        &self,
        vocab_size: usize,
    ) -> Result<hallucitrace_core::ModelConfig, hallucitrace_core::model::ConfigError> {
        let mut cfg = hallucitrace_core::ModelConfig {
            n_layers: self.model.n_layers,
            d_model: self.model.d_model,
            n_heads: self.model.n_heads,
            vocab_size,
            max_seq_len: self.model.max_seq_len,
            mlp_hidden: 0,
            layer_norm_eps: self.model.layer_norm_eps,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
