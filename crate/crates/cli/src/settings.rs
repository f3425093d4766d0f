//! Layered run settings: named preset, then config file, then `--set`
//! overrides, then explicit subcommand flags. Later layers win.

use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use reljudge::config::{preset_by_name, preset_names, toy_default};
use reljudge::grpo::{GrpoConfig, ReferencePolicy};
use reljudge::policy::{HttpConfig, RetryConfig};
use reljudge::reward::RewardConfig;
use reljudge::tagparse::Variant;

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub lambda: f64,
    pub require_extract_consistency: bool,
    pub epsilon: f64,
    pub beta: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub buckets: u32,
    pub variant: Variant,
    pub no_retrieval: bool,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
    pub retry_max_attempts: u32,
    pub request_timeout_secs: u64,
}

impl Default for Settings {
    fn default() -> Self {
        let preset = toy_default();
        Settings {
            lambda: preset.lambda,
            require_extract_consistency: false,
            epsilon: preset.epsilon,
            beta: preset.beta,
            group_size: preset.rollouts,
            learning_rate: preset.learning_rate,
            batch_size: preset.batch_size,
            steps: preset.steps,
            seed: 0,
            buckets: 64,
            variant: Variant::Full,
            no_retrieval: false,
            endpoint: "http://127.0.0.1:8000".into(),
            model: "default".into(),
            api_key_env: None,
            max_in_flight: 8,
            retry_max_attempts: 5,
            request_timeout_secs: 120,
        }
    }
}

/// One layer of overrides; every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsLayer {
    pub lambda: Option<f64>,
    pub require_extract_consistency: Option<bool>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub group_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub buckets: Option<u32>,
    pub variant: Option<Variant>,
    pub no_retrieval: Option<bool>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub max_in_flight: Option<usize>,
    pub retry_max_attempts: Option<u32>,
    pub request_timeout_secs: Option<u64>,
}

impl Settings {
    fn apply(&mut self, layer: SettingsLayer) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = layer.$field { self.$field = v; })*
            };
        }
        take!(
            lambda,
            require_extract_consistency,
            epsilon,
            beta,
            group_size,
            learning_rate,
            batch_size,
            steps,
            seed,
            buckets,
            variant,
            no_retrieval,
            endpoint,
            model,
            max_in_flight,
            retry_max_attempts,
            request_timeout_secs
        );
        if layer.api_key_env.is_some() {
            self.api_key_env = layer.api_key_env;
        }
    }

    /// Resolve precedence: defaults (the toy preset), named preset, config
    /// file, `--set` pairs.
    pub fn resolve(
        preset: Option<&str>,
        config_file: Option<&Path>,
        sets: &[String],
    ) -> Result<Settings> {
        let mut settings = Settings::default();
        if let Some(name) = preset {
            let p = preset_by_name(name).ok_or_else(|| {
                anyhow!(
                    "unknown preset {name:?}; available: {}",
                    preset_names().join(", ")
                )
            })?;
            settings.lambda = p.lambda;
            settings.epsilon = p.epsilon;
            settings.beta = p.beta;
            settings.group_size = p.rollouts;
            settings.learning_rate = p.learning_rate;
            settings.batch_size = p.batch_size;
            settings.steps = p.steps;
        }
        if let Some(path) = config_file {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            let layer: SettingsLayer = toml::from_str(&raw)
                .with_context(|| format!("parsing config file {}", path.display()))?;
            settings.apply(layer);
        }
        if !sets.is_empty() {
            let mut doc = String::new();
            for pair in sets {
                let (key, value) = pair
                    .split_once('=')
                    .ok_or_else(|| anyhow!("--set expects key=value, got {pair:?}"))?;
                // Strings need quoting in TOML; numbers and booleans do
                // not. Try the raw value first, then a quoted fallback.
                doc.push_str(&format!("{key} = {value}\n"));
            }
            let layer: SettingsLayer = toml::from_str(&doc).or_else(|_| {
                let mut quoted = String::new();
                for pair in sets {
                    let (key, value) = pair.split_once('=').expect("validated above");
                    if value.parse::<f64>().is_ok() || value == "true" || value == "false" {
                        quoted.push_str(&format!("{key} = {value}\n"));
                    } else {
                        quoted.push_str(&format!("{key} = {value:?}\n"));
                    }
                }
                toml::from_str(&quoted).map_err(|e| anyhow!("bad --set override: {e}"))
            })?;
            settings.apply(layer);
        }
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> Result<()> {
        self.grpo_config()
            .validate()
            .map_err(|e| anyhow!("grpo settings: {e}"))?;
        self.reward_config()
            .validate()
            .map_err(|e| anyhow!("reward settings: {e}"))?;
        if self.max_in_flight == 0 {
            bail!("max_in_flight: must be >= 1");
        }
        if self.buckets == 0 {
            bail!("buckets: must be >= 1");
        }
        Ok(())
    }

    pub fn grpo_config(&self) -> GrpoConfig {
        GrpoConfig {
            epsilon: self.epsilon,
            beta: self.beta,
            group_size: self.group_size,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            steps: self.steps,
            reference: ReferencePolicy::Initial,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            lambda: self.lambda,
            require_extract_consistency: self.require_extract_consistency,
        }
    }

    pub fn http_config(&self) -> HttpConfig {
        HttpConfig {
            base_url: self.endpoint.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            max_in_flight: self.max_in_flight,
            request_timeout: Duration::from_secs(self.request_timeout_secs),
            retry: RetryConfig {
                max_attempts: self.retry_max_attempts,
                ..RetryConfig::default()
            },
            request_logprobs: true,
        }
    }
}
