//! TOML run configuration. Every field has a default; command-line flags
//! override config values; the API key comes only from the environment.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub prices: PricesSection,
    #[serde(default)]
    pub self_demos: SelfDemosSection,
    #[serde(default)]
    pub self_icl: SelfIclSection,
    #[serde(default)]
    pub analogical: AnalogicalSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Not fixed by the method description; cap on completion length.
    pub max_tokens: Option<u32>,
    pub chars_per_token: u32,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo-0613".into(),
            timeout_secs: demoforge_core::backend::DEFAULT_TIMEOUT_SECS,
            max_retries: demoforge_core::backend::DEFAULT_MAX_RETRIES,
            max_tokens: Some(demoforge_core::backend::DEFAULT_MAX_TOKENS),
            chars_per_token: demoforge_core::backend::DEFAULT_CHARS_PER_TOKEN,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricesSection {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl Default for PricesSection {
    fn default() -> Self {
        let prices = demoforge_core::costing::PriceTable::default();
        PricesSection {
            input_per_1k: prices.input_per_1k,
            output_per_1k: prices.output_per_1k,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfDemosSection {
    pub n_generate: u32,
    pub k_select: u32,
    pub temperature_sample: f64,
    pub kv_reuse: bool,
}

impl Default for SelfDemosSection {
    fn default() -> Self {
        let cfg = demoforge_core::pipelines::SelfDemosConfig::default();
        SelfDemosSection {
            n_generate: cfg.n_generate,
            k_select: cfg.k_select,
            temperature_sample: cfg.temperature_sample,
            kv_reuse: cfg.kv_reuse,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfIclSection {
    /// Pseudo-demos per run; the vanilla variant defaults to 3.
    pub n_demos: Option<u32>,
    pub variant: Variant,
}

impl Default for SelfIclSection {
    fn default() -> Self {
        SelfIclSection { n_demos: None, variant: Variant::FewShot }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalogicalSection {
    pub variant: Variant,
}

impl Default for AnalogicalSection {
    fn default() -> Self {
        AnalogicalSection { variant: Variant::FewShot }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    FewShot,
    Vanilla,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub workers: usize,
    pub paths: u32,
    pub retrieval_k: usize,
    /// Tool corpus for instance files that reference tools by name.
    pub tools: Option<String>,
    /// Labeled training corpus for the retrieval baseline.
    pub corpus: Option<String>,
    /// Directory of prompt template overrides (hash-checked).
    pub templates_dir: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            workers: 1,
            paths: 5,
            retrieval_k: 5,
            tools: None,
            corpus: None,
            templates_dir: None,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Config::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("bad config {}", path.display()))
            }
        }
    }
}
