//! Named hyperparameter presets.

use serde::{Deserialize, Serialize};

use crate::grpo::{GrpoConfig, ReferencePolicy};
use crate::reward::RewardConfig;

/// A bundle of optimizer and reward settings loadable by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPreset {
    pub name: String,
    /// Rollouts per input (group size).
    pub rollouts: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub beta: f64,
}

impl TrainingPreset {
    pub fn grpo_config(&self) -> GrpoConfig {
        GrpoConfig {
            epsilon: self.epsilon,
            beta: self.beta,
            group_size: self.rollouts,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            steps: self.steps,
            reference: ReferencePolicy::Initial,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            lambda: self.lambda,
            require_extract_consistency: false,
        }
    }
}

/// The published full-scale training recipe: 16 rollouts per task,
/// learning rate 5e-7, batch size 32, 360 steps, lambda 0. Documented
/// as-is; it targets multi-billion-parameter fine-tuning, not the toy
/// policy.
pub fn paper_appendix_b() -> TrainingPreset {
    TrainingPreset {
        name: "paper-appendix-b".into(),
        rollouts: 16,
        learning_rate: 5e-7,
        batch_size: 32,
        steps: 360,
        lambda: 0.0,
        epsilon: 0.2,
        beta: 0.01,
    }
}

/// Desk-scale defaults for the toy policy.
pub fn toy_default() -> TrainingPreset {
    TrainingPreset {
        name: "toy-default".into(),
        rollouts: 16,
        learning_rate: 1.0,
        batch_size: 8,
        steps: 400,
        lambda: 0.0,
        epsilon: 0.2,
        beta: 0.01,
    }
}

/// Look up a preset by its published name.
pub fn preset_by_name(name: &str) -> Option<TrainingPreset> {
    match name {
        "paper-appendix-b" => Some(paper_appendix_b()),
        "toy-default" => Some(toy_default()),
        _ => None,
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &["paper-appendix-b", "toy-default"]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appendix_b_preset_values() {
        let preset = preset_by_name("paper-appendix-b").unwrap();
        assert_eq!(preset.rollouts, 16);
        assert_eq!(preset.learning_rate, 5e-7);
        assert_eq!(preset.batch_size, 32);
        assert_eq!(preset.steps, 360);
        assert_eq!(preset.lambda, 0.0);
    }

    #[test]
    fn presets_produce_valid_configs() {
        for name in preset_names() {
            let preset = preset_by_name(name).unwrap();
            preset.grpo_config().validate().unwrap();
            preset.reward_config().validate().unwrap();
        }
        assert!(preset_by_name("nope").is_none());
    }
}
